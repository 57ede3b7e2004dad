use nalgebra::DMatrix;

use super::{LocalPrediction, ObservationBuffer, PredictedPositions, Predictor, SoftClamp};
use crate::error::{Error, Result};

/// Non-interactive baseline: linear extrapolation of the last two positions.
#[derive(Debug, Clone)]
pub struct ConstantVelocity {
    dt: f64,
    clamp_x: SoftClamp,
    clamp_y: SoftClamp,
}

impl ConstantVelocity {
    pub fn new(dt: f64, s_x: f64, s_y: f64) -> Result<Self> {
        if !(dt > 0.0 && s_x > 0.0 && s_y > 0.0) {
            return Err(Error::InvalidParameter("constant-velocity predictor needs dt, s_x, s_y > 0".into()));
        }
        Ok(Self {
            dt,
            clamp_x: SoftClamp::new(s_x, s_x / 6.0),
            clamp_y: SoftClamp::new(s_y, s_y / 3.0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

impl Predictor for ConstantVelocity {
    fn name(&self) -> &'static str {
        "constant_velocity"
    }

    fn history_depth(&self) -> usize {
        2
    }

    fn output_bounds(&self) -> (f64, f64) {
        (self.clamp_x.bound, self.clamp_y.bound)
    }

    fn is_interactive(&self) -> bool {
        false
    }

    fn predict(&self, buf: &ObservationBuffer, with_jacobian: bool) -> Result<LocalPrediction> {
        buf.require(2)?;
        let n = buf.n_vehicles();
        let mut positions = Vec::with_capacity(n);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(2 * n, buf.flat_len()));
        for i in 0..n {
            let col = i + 1;
            let cur = buf.get(0, col);
            let prev = buf.get(1, col);
            let mut out = [0.0; 2];
            for c in 0..2 {
                let clamp = if c == 0 { &self.clamp_x } else { &self.clamp_y };
                let (v, dv) = clamp.eval(2.0 * cur[c] - prev[c]);
                out[c] = v;
                if let Some(j) = jac.as_mut() {
                    j[(2 * i + c, buf.flat_index(0, col, c))] = 2.0 * dv;
                    j[(2 * i + c, buf.flat_index(1, col, c))] = -dv;
                }
            }
            positions.push(out);
        }
        Ok(LocalPrediction {
            positions: PredictedPositions { positions },
            jacobian: jac,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolates_linearly() {
        let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
        let buf = ObservationBuffer::from_rows(vec![
            vec![[0.0, 0.0], [10.0, 3.7]],
            vec![[-2.0, 0.0], [9.0, 3.7]],
        ])
        .unwrap();
        let p = cv.predict_one(&buf).unwrap();
        assert_eq!(p.positions, vec![[11.0, 3.7]]);
    }

    #[test]
    fn underfilled_buffer_is_rejected() {
        let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
        let mut buf = ObservationBuffer::new(2, 1).unwrap();
        buf.push(vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(cv.predict_one(&buf), Err(Error::UnderfilledBuffer { .. })));
    }

    #[test]
    fn no_dependence_on_ego_column() {
        let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
        let buf = ObservationBuffer::from_rows(vec![
            vec![[0.0, 0.0], [10.0, 3.7], [20.0, 3.7]],
            vec![[-2.0, 0.0], [8.0, 3.7], [18.0, 3.6]],
        ])
        .unwrap();
        let j = cv.predict(&buf, true).unwrap().jacobian.unwrap();
        for r in 0..j.nrows() {
            for c in 0..2 {
                assert_eq!(j[(r, buf.flat_index(0, 0, c))], 0.0);
                assert_eq!(j[(r, buf.flat_index(1, 0, c))], 0.0);
            }
        }
    }
}
