//! Small feed-forward predictor with externally supplied weights.
//!
//! Inputs are the flattened history with every coordinate taken relative to
//! the current ego position; outputs are per-vehicle displacements added to
//! each vehicle's current position before clamping. See `docs/mlp_weights.md`
//! for both file formats.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{LocalPrediction, ObservationBuffer, PredictedPositions, Predictor, SoftClamp};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"NNMPCMLP";
pub const FORMAT_VERSION: u32 = 1;
const TEXT_HEADER: &str = "nnmpc-mlp v1";
const MAX_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// tanh approximation of GELU
    Gelu,
    Softplus,
}

impl Activation {
    pub fn id(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Gelu => 1,
            Activation::Softplus => 2,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Gelu),
            2 => Ok(Activation::Softplus),
            _ => Err(Error::WeightsFormat(format!("unknown activation id {id}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
            Activation::Softplus => "softplus",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "gelu" => Ok(Activation::Gelu),
            "softplus" => Ok(Activation::Softplus),
            _ => Err(Error::WeightsFormat(format!("unknown activation {s:?}"))),
        }
    }

    /// Value and derivative.
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                const K: f64 = 0.044_715;
                let inner = C * (x + K * x * x * x);
                let t = inner.tanh();
                let v = 0.5 * x * (1.0 + t);
                let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
                (v, d)
            }
            Activation::Softplus => {
                let v = if x > 30.0 { x } else { x.exp().ln_1p() };
                (v, super::sigmoid(x))
            }
        }
    }
}

/// Dense network: `layers[k]` maps `sizes[k]` to `sizes[k+1]`; the activation
/// is applied after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub activation: Activation,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Mlp {
    pub fn new(activation: Activation, weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::WeightsFormat("layer count mismatch".into()));
        }
        if weights.len() > 3 {
            return Err(Error::WeightsFormat("at most two hidden layers are supported".into()));
        }
        for k in 0..weights.len() {
            if biases[k].len() != weights[k].nrows() {
                return Err(Error::WeightsFormat(format!("bias {k} has wrong length")));
            }
            if k + 1 < weights.len() {
                if weights[k + 1].ncols() != weights[k].nrows() {
                    return Err(Error::WeightsFormat(format!("layer {} input width mismatch", k + 1)));
                }
                if weights[k].nrows() > MAX_HIDDEN {
                    return Err(Error::WeightsFormat(format!("hidden width above {MAX_HIDDEN}")));
                }
            }
        }
        let finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::WeightsFormat("non-finite weight".into()));
        }
        Ok(Self { activation, weights, biases })
    }

    /// Deterministic small random network, mostly for tests and examples.
    pub fn random(sizes: &[usize], activation: Activation, scale: f64, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let s = scale / (w[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-s..s)));
            biases.push(DVector::from_fn(w[1], |_, _| rng.random_range(-0.1..0.1)));
        }
        Self::new(activation, weights, biases)
    }

    pub fn input_len(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_len(&self) -> usize {
        self.weights.last().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_len()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    /// Output and, optionally, the Jacobian with respect to the input.
    pub fn forward(&self, input: &DVector<f64>, with_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let mut h = input.clone();
        let mut jac = with_jacobian.then(|| DMatrix::identity(input.len(), input.len()));
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let pre = w * &h + b;
            if k == last {
                jac = jac.map(|j| w * j);
                h = pre;
            } else {
                let (vals, ders): (Vec<f64>, Vec<f64>) = pre.iter().map(|&x| self.activation.eval(x)).unzip();
                jac = jac.map(|j| {
                    let mut wj = w * j;
                    for (r, d) in ders.iter().enumerate() {
                        wj.row_mut(r).scale_mut(*d);
                    }
                    wj
                });
                h = DVector::from_vec(vals);
            }
        }
        (h, jac)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| {
            let rows = (0..w.nrows()).flat_map(move |r| (0..w.ncols()).map(move |c| w[(r, c)]));
            rows.chain(b.iter().copied())
        })
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let sizes = self.sizes();
        let mut out = Vec::new();
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.activation.id().to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for v in self.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(TEXT_HEADER);
        out.push('\n');
        out.push_str(&format!("activation {}\n", self.activation.name()));
        let sizes: Vec<String> = self.sizes().iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("layers {}\n", sizes.join(" ")));
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                let row: Vec<String> = (0..w.ncols()).map(|c| format!("{:e}", w[(r, c)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
            let bias: Vec<String> = b.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&bias.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes).map_err(|_| Error::WeightsFormat("neither binary nor UTF-8 text".into()))?;
            Self::from_text(text)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_binary())?;
        Ok(())
    }

    fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut pos = BINARY_MAGIC.len();
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let chunk = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| Error::WeightsFormat("truncated header".into()))?;
            *pos += 4;
            Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
        };
        let version = read_u32(&mut pos)?;
        if version != FORMAT_VERSION {
            return Err(Error::WeightsFormat(format!("unsupported version {version}")));
        }
        let activation = Activation::from_id(read_u32(&mut pos)?)?;
        let n_sizes = read_u32(&mut pos)? as usize;
        if !(2..=4).contains(&n_sizes) {
            return Err(Error::WeightsFormat(format!("{n_sizes} layer sizes")));
        }
        let sizes = (0..n_sizes)
            .map(|_| read_u32(&mut pos).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let expected: usize = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        let body = &bytes[pos..];
        if body.len() != expected * 8 {
            return Err(Error::WeightsFormat(format!(
                "expected {} weight bytes, found {}",
                expected * 8,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_values(activation, &sizes, &values)
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(TEXT_HEADER) {
            return Err(Error::WeightsFormat(format!("missing {TEXT_HEADER:?} header")));
        }
        let act_line = lines.next().unwrap_or_default();
        let activation = match act_line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["activation", name] => Activation::from_name(name)?,
            _ => return Err(Error::WeightsFormat("expected `activation <name>`".into())),
        };
        let layer_line = lines.next().unwrap_or_default();
        let mut parts = layer_line.split_whitespace();
        if parts.next() != Some("layers") {
            return Err(Error::WeightsFormat("expected `layers <sizes...>`".into()));
        }
        let sizes = parts
            .map(|s| s.parse::<usize>().map_err(|_| Error::WeightsFormat(format!("bad layer size {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if !(2..=4).contains(&sizes.len()) {
            return Err(Error::WeightsFormat(format!("{} layer sizes", sizes.len())));
        }
        let values = lines
            .flat_map(str::split_whitespace)
            .map(|s| s.parse::<f64>().map_err(|_| Error::WeightsFormat(format!("bad number {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let expected: usize = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        if values.len() != expected {
            return Err(Error::WeightsFormat(format!("expected {expected} values, found {}", values.len())));
        }
        Self::from_values(activation, &sizes, &values)
    }

    fn from_values(activation: Activation, sizes: &[usize], values: &[f64]) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            weights.push(DMatrix::from_row_slice(n_out, n_in, &values[off..off + n_in * n_out]));
            off += n_in * n_out;
            biases.push(DVector::from_column_slice(&values[off..off + n_out]));
            off += n_out;
        }
        Self::new(activation, weights, biases)
    }
}

#[derive(Debug, Clone)]
pub struct MlpPredictor {
    net: Mlp,
    depth: usize,
    n_vehicles: usize,
    clamp_x: SoftClamp,
    clamp_y: SoftClamp,
}

impl MlpPredictor {
    /// History depth and vehicle count are inferred from the network shape:
    /// output `2N`, input `depth·(N+1)·2`.
    pub fn new(net: Mlp, s_x: f64, s_y: f64) -> Result<Self> {
        let out = net.output_len();
        if out == 0 || out % 2 != 0 {
            return Err(Error::WeightsFormat(format!("output width {out} is not 2N")));
        }
        let n = out / 2;
        let per_row = 2 * (n + 1);
        if net.input_len() % per_row != 0 {
            return Err(Error::WeightsFormat(format!(
                "input width {} is not a multiple of {per_row}",
                net.input_len()
            )));
        }
        if !(s_x > 0.0 && s_y > 0.0) {
            return Err(Error::InvalidParameter("MLP output bounds must be positive".into()));
        }
        Ok(Self {
            depth: net.input_len() / per_row,
            n_vehicles: n,
            net,
            clamp_x: SoftClamp::new(s_x, s_x / 6.0),
            clamp_y: SoftClamp::new(s_y, s_y / 3.0),
        })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }
}

impl Predictor for MlpPredictor {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn history_depth(&self) -> usize {
        self.depth
    }

    fn output_bounds(&self) -> (f64, f64) {
        (self.clamp_x.bound, self.clamp_y.bound)
    }

    fn predict(&self, buf: &ObservationBuffer, with_jacobian: bool) -> Result<LocalPrediction> {
        buf.require(self.depth)?;
        if buf.n_vehicles() != self.n_vehicles {
            return Err(Error::DimensionMismatch {
                what: "MLP vehicle count",
                expected: self.n_vehicles,
                got: buf.n_vehicles(),
            });
        }
        let cols = buf.columns();
        let ego = buf.get(0, 0);
        let input = DVector::from_fn(self.net.input_len(), |k, _| {
            let (cell, coord) = (k / 2, k % 2);
            buf.get(cell / cols, cell % cols)[coord] - ego[coord]
        });
        let (out, net_jac) = self.net.forward(&input, with_jacobian);

        let mut positions = Vec::with_capacity(self.n_vehicles);
        let mut derivs = Vec::with_capacity(2 * self.n_vehicles);
        for i in 0..self.n_vehicles {
            let cur = buf.get(0, i + 1);
            let (px, dx) = self.clamp_x.eval(cur[0] + out[2 * i]);
            let (py, dy) = self.clamp_y.eval(cur[1] + out[2 * i + 1]);
            positions.push([px, py]);
            derivs.extend([dx, dy]);
        }

        let jacobian = net_jac.map(|nj| {
            let mut j = DMatrix::zeros(2 * self.n_vehicles, buf.flat_len());
            for r in 0..nj.nrows() {
                let coord = r % 2;
                let mut ego_sum = [0.0; 2];
                for k in 0..nj.ncols() {
                    j[(r, k)] += nj[(r, k)];
                    ego_sum[k % 2] += nj[(r, k)];
                }
                for c in 0..2 {
                    j[(r, buf.flat_index(0, 0, c))] -= ego_sum[c];
                }
                j[(r, buf.flat_index(0, r / 2 + 1, coord))] += 1.0;
                j.row_mut(r).scale_mut(derivs[r]);
            }
            j
        });

        Ok(LocalPrediction {
            positions: PredictedPositions { positions },
            jacobian,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer() -> ObservationBuffer {
        ObservationBuffer::from_rows(vec![
            vec![[3.0, 0.4], [10.0, 3.7], [18.0, 3.6]],
            vec![[1.0, 0.3], [8.0, 3.7], [16.0, 3.7]],
        ])
        .unwrap()
    }

    #[test]
    fn binary_and_text_round_trip() {
        let net = Mlp::random(&[12, 16, 8, 4], Activation::Gelu, 1.0, 7).unwrap();
        assert_eq!(Mlp::from_bytes(&net.to_binary()).unwrap(), net);
        let back = Mlp::from_bytes(net.to_text().as_bytes()).unwrap();
        for (a, b) in back.weights.iter().zip(&net.weights) {
            assert!((a - b).amax() < 1e-15);
        }
    }

    #[test]
    fn binary_layout_header() {
        let net = Mlp::random(&[12, 4], Activation::Tanh, 1.0, 1).unwrap();
        let bytes = net.to_binary();
        assert_eq!(&bytes[..8], BINARY_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 8 + 4 * 3 + 4 * 2 + 8 * (12 * 4 + 4));
    }

    #[test]
    fn rejects_malformed_files() {
        let net = Mlp::random(&[12, 4], Activation::Tanh, 1.0, 1).unwrap();
        let mut bytes = net.to_binary();
        bytes.pop();
        assert!(Mlp::from_bytes(&bytes).is_err());
        assert!(Mlp::from_bytes(b"nnmpc-mlp v1\nactivation relu\nlayers 2 2\n").is_err());
        assert!(Mlp::random(&[12, 65, 4], Activation::Tanh, 1.0, 1).is_err());
    }

    #[test]
    fn activation_derivatives() {
        for act in [Activation::Tanh, Activation::Gelu, Activation::Softplus] {
            for x in [-3.0, -0.4, 0.0, 0.7, 2.5] {
                let h = 1e-6;
                let num = (act.eval(x + h).0 - act.eval(x - h).0) / (2.0 * h);
                assert!((num - act.eval(x).1).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn predictor_jacobian_matches_central_differences() {
        let net = Mlp::random(&[12, 16, 16, 4], Activation::Gelu, 1.5, 3).unwrap();
        let pred = MlpPredictor::new(net, 300.0, 15.0).unwrap();
        let buf = buffer();
        let jac = pred.predict(&buf, true).unwrap().jacobian.unwrap();
        let flat = buf.flatten();
        let rebuild = |v: &[f64]| {
            let rows = (0..2)
                .map(|r| (0..3).map(|c| [v[buf.flat_index(r, c, 0)], v[buf.flat_index(r, c, 1)]]).collect())
                .collect();
            ObservationBuffer::from_rows(rows).unwrap()
        };
        let h = 1e-6;
        for k in 0..flat.len() {
            let (mut up, mut dn) = (flat.clone(), flat.clone());
            up[k] += h;
            dn[k] -= h;
            let fu = pred.predict_one(&rebuild(&up)).unwrap().positions;
            let fd = pred.predict_one(&rebuild(&dn)).unwrap().positions;
            for r in 0..4 {
                let num = (fu[r / 2][r % 2] - fd[r / 2][r % 2]) / (2.0 * h);
                assert!((num - jac[(r, k)]).abs() < 1e-6 * (1.0 + num.abs()), "({r},{k}): {} vs {num}", jac[(r, k)]);
            }
        }
    }

    #[test]
    fn shape_must_match_buffer() {
        let net = Mlp::random(&[12, 8, 4], Activation::Tanh, 1.0, 3).unwrap();
        let pred = MlpPredictor::new(net, 300.0, 15.0).unwrap();
        assert_eq!(pred.history_depth(), 2);
        let one_vehicle = ObservationBuffer::from_rows(vec![vec![[0.0, 0.0], [1.0, 1.0]], vec![[0.0, 0.0], [1.0, 1.0]]]).unwrap();
        assert!(pred.predict_one(&one_vehicle).is_err());
    }
}
