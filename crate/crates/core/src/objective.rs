//! Tracking and effort costs, the single-circle safety distance, the relaxed
//! objective `J` and the augmented Lagrangian, with exact gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::AdmmIterate;
use crate::dynamics::{BlockDynamics, ControlInput, STATE_DIM};
use crate::error::{Error, Result};
use crate::predictor::{rollout, ObservationBuffer, PredictionRollout, Predictor, RolloutTape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub lambda_div: f64,
    pub lambda_v: f64,
    pub lambda_delta: f64,
    pub lambda_a: f64,
    pub lambda_ddelta: f64,
    pub lambda_da: f64,
    /// Safety multipliers, one per horizon step.
    pub lambda_s: Vec<f64>,
}

impl CostWeights {
    pub const DEFAULT_LAMBDA_S: f64 = 2.0;

    /// Table I coefficients with uniform safety multipliers.
    pub fn table_one(horizon: usize) -> Self {
        Self {
            lambda_div: 1.0,
            lambda_v: 1.0,
            lambda_delta: 0.6,
            lambda_a: 0.4,
            lambda_ddelta: 0.4,
            lambda_da: 0.2,
            lambda_s: vec![Self::DEFAULT_LAMBDA_S; horizon],
        }
    }

    pub fn with_uniform_lambda_s(mut self, value: f64) -> Self {
        self.lambda_s.iter_mut().for_each(|l| *l = value);
        self
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let scalars = [
            self.lambda_div,
            self.lambda_v,
            self.lambda_delta,
            self.lambda_a,
            self.lambda_ddelta,
            self.lambda_da,
        ];
        if scalars.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("cost weights must be finite and nonnegative".into()));
        }
        if self.lambda_s.len() != horizon {
            return Err(Error::DimensionMismatch {
                what: "lambda_s",
                expected: horizon,
                got: self.lambda_s.len(),
            });
        }
        if self.lambda_s.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidParameter("lambda_s entries must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub y_ref: f64,
    pub v_ref: f64,
    pub x_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyGeometry {
    pub r: f64,
    pub r_i: Vec<f64>,
    pub eps: f64,
}

impl SafetyGeometry {
    pub fn uniform(n_vehicles: usize, r: f64, eps: f64) -> Self {
        Self {
            r,
            r_i: vec![r; n_vehicles],
            eps,
        }
    }

    /// `r + r_i + ε` for vehicle `i` (0-based).
    pub fn clearance(&self, i: usize) -> f64 {
        self.r + self.r_i[i] + self.eps
    }

    pub fn validate(&self, n_vehicles: usize) -> Result<()> {
        if self.r_i.len() != n_vehicles {
            return Err(Error::DimensionMismatch {
                what: "vehicle radii",
                expected: n_vehicles,
                got: self.r_i.len(),
            });
        }
        if !(self.r > 0.0 && self.eps > 0.0 && self.r_i.iter().all(|r| *r > 0.0)) {
            return Err(Error::InvalidParameter("radii and eps must be positive".into()));
        }
        Ok(())
    }
}

fn rate_cost(u: &DVector<f64>, prev: f64, weight: f64, rate: f64) -> f64 {
    let mut last = prev;
    let mut s = 0.0;
    for &v in u.iter() {
        s += weight * v * v + rate * (v - last) * (v - last);
        last = v;
    }
    s
}

fn rate_cost_gradient(u: &DVector<f64>, prev: f64, weight: f64, rate: f64) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(n, |t, _| {
        let before = if t == 0 { prev } else { u[t - 1] };
        let mut g = 2.0 * weight * u[t] + 2.0 * rate * (u[t] - before);
        if t + 1 < n {
            g -= 2.0 * rate * (u[t + 1] - u[t]);
        }
        g
    })
}

/// `Φ(u) = ½ uᵀHu + gᵀu + c` for a weighted effort plus rate cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }
}

pub(crate) fn rate_cost_quadratic(n: usize, prev: f64, weight: f64, rate: f64) -> Quadratic {
    let mut h = DMatrix::zeros(n, n);
    for t in 0..n {
        h[(t, t)] += 2.0 * weight + 2.0 * rate;
        if t + 1 < n {
            h[(t, t)] += 2.0 * rate;
            h[(t, t + 1)] -= 2.0 * rate;
            h[(t + 1, t)] -= 2.0 * rate;
        }
    }
    let mut linear = DVector::zeros(n);
    if n > 0 {
        linear[0] = -2.0 * rate * prev;
    }
    Quadratic {
        hessian: h,
        linear,
        constant: rate * prev * prev,
    }
}

/// Steering effort and steering-rate cost; `prev_delta` is `δ(−1)`.
pub fn phi1(delta: &DVector<f64>, prev_delta: f64, w: &CostWeights) -> f64 {
    rate_cost(delta, prev_delta, w.lambda_delta, w.lambda_ddelta)
}

pub fn phi1_gradient(delta: &DVector<f64>, prev_delta: f64, w: &CostWeights) -> DVector<f64> {
    rate_cost_gradient(delta, prev_delta, w.lambda_delta, w.lambda_ddelta)
}

pub fn phi2(alpha: &DVector<f64>, prev_a: f64, w: &CostWeights) -> f64 {
    rate_cost(alpha, prev_a, w.lambda_a, w.lambda_da)
}

pub fn phi2_gradient(alpha: &DVector<f64>, prev_a: f64, w: &CostWeights) -> DVector<f64> {
    rate_cost_gradient(alpha, prev_a, w.lambda_a, w.lambda_da)
}

/// Lateral deviation and speed tracking cost over the state trajectory.
pub fn phi3(z: &DVector<f64>, refs: &References, w: &CostWeights) -> f64 {
    z.as_slice()
        .chunks_exact(STATE_DIM)
        .map(|s| w.lambda_div * (s[1] - refs.y_ref).powi(2) + w.lambda_v * (s[3] - refs.v_ref).powi(2))
        .sum()
}

pub fn phi3_gradient(z: &DVector<f64>, refs: &References, w: &CostWeights) -> DVector<f64> {
    let mut g = DVector::zeros(z.len());
    for t in 0..z.len() / STATE_DIM {
        let k = t * STATE_DIM;
        g[k + 1] = 2.0 * w.lambda_div * (z[k + 1] - refs.y_ref);
        g[k + 3] = 2.0 * w.lambda_v * (z[k + 3] - refs.v_ref);
    }
    g
}

pub(crate) fn phi3_quadratic(n: usize, refs: &References, w: &CostWeights) -> Quadratic {
    let mut h = DMatrix::zeros(n, n);
    let mut linear = DVector::zeros(n);
    let steps = n / STATE_DIM;
    for t in 0..steps {
        let k = t * STATE_DIM;
        h[(k + 1, k + 1)] = 2.0 * w.lambda_div;
        h[(k + 3, k + 3)] = 2.0 * w.lambda_v;
        linear[k + 1] = -2.0 * w.lambda_div * refs.y_ref;
        linear[k + 3] = -2.0 * w.lambda_v * refs.v_ref;
    }
    let constant = steps as f64 * (w.lambda_div * refs.y_ref.powi(2) + w.lambda_v * refs.v_ref.powi(2));
    Quadratic {
        hessian: h,
        linear,
        constant,
    }
}

/// Squared-distance safety function for vehicle `i`; positive means safe.
pub fn distance(ego: [f64; 2], other: [f64; 2], g: &SafetyGeometry, i: usize) -> f64 {
    let dx = ego[0] - other[0];
    let dy = ego[1] - other[1];
    dx * dx + dy * dy - g.clearance(i).powi(2)
}

/// `b_i(Z)` with its Jacobian with respect to `Z`.
#[derive(Debug, Clone)]
pub struct SafetyVector {
    pub values: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

fn check_rollout(z: &DVector<f64>, r: &PredictionRollout) -> Result<()> {
    if z.len() != STATE_DIM * r.horizon() || r.jacobian.ncols() != z.len() {
        return Err(Error::DimensionMismatch {
            what: "rollout horizon",
            expected: z.len() / STATE_DIM,
            got: r.horizon(),
        });
    }
    Ok(())
}

/// Entry `τ` pairs ego state `z(τ+1)` with the prediction made at `τ`.
pub fn safety_vector(
    z: &DVector<f64>,
    r: &PredictionRollout,
    g: &SafetyGeometry,
    i: usize,
) -> Result<SafetyVector> {
    check_rollout(z, r)?;
    if i >= r.n_vehicles() || i >= g.r_i.len() {
        return Err(Error::InvalidParameter(format!("vehicle index {i} out of range")));
    }
    let tp = r.horizon();
    let mut values = DVector::zeros(tp);
    let mut jacobian = DMatrix::zeros(tp, z.len());
    for tau in 0..tp {
        let k = tau * STATE_DIM;
        let other = r.positions[tau][i];
        values[tau] = distance([z[k], z[k + 1]], other, g, i);
        let ex = 2.0 * (z[k] - other[0]);
        let ey = 2.0 * (z[k + 1] - other[1]);
        let row = r.gradient(tau, i, 0) * (-ex) + r.gradient(tau, i, 1) * (-ey);
        jacobian.set_row(tau, &row);
        jacobian[(tau, k)] += ex;
        jacobian[(tau, k + 1)] += ey;
    }
    Ok(SafetyVector { values, jacobian })
}

/// `Σ_{τ,i} f(τ, i, d_i(τ))` and its gradient with respect to `Z`, where `f`
/// returns the contribution and its derivative in `d`.
pub(crate) fn safety_functional(
    z: &DVector<f64>,
    tape: &RolloutTape,
    g: &SafetyGeometry,
    f: impl Fn(usize, usize, f64) -> (f64, f64),
) -> (f64, DVector<f64>) {
    let tp = tape.horizon();
    let n = tape.positions.first().map(Vec::len).unwrap_or(0);
    let mut value = 0.0;
    let mut grad = DVector::zeros(z.len());
    let mut seed = vec![0.0; tp * n * 2];
    for tau in 0..tp {
        let k = tau * STATE_DIM;
        for i in 0..n {
            let other = tape.positions[tau][i];
            let d = distance([z[k], z[k + 1]], other, g, i);
            let (v, dv) = f(tau, i, d);
            value += v;
            if dv == 0.0 {
                continue;
            }
            let ex = 2.0 * dv * (z[k] - other[0]);
            let ey = 2.0 * dv * (z[k + 1] - other[1]);
            grad[k] += ex;
            grad[k + 1] += ey;
            seed[(tau * n + i) * 2] = -ex;
            seed[(tau * n + i) * 2 + 1] = -ey;
        }
    }
    grad += tape.vjp(&seed);
    (value, grad)
}

/// Smallest `d_i(τ)` over the horizon and all vehicles.
pub fn min_safety(z: &DVector<f64>, positions: &[Vec<[f64; 2]>], g: &SafetyGeometry) -> f64 {
    let mut m = f64::INFINITY;
    for (tau, row) in positions.iter().enumerate() {
        let k = tau * STATE_DIM;
        for (i, p) in row.iter().enumerate() {
            m = m.min(distance([z[k], z[k + 1]], *p, g, i));
        }
    }
    m
}

/// Everything the cost needs besides the decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub weights: CostWeights,
    pub refs: References,
    pub geometry: SafetyGeometry,
    /// Last applied control, the `δ(−1)`, `a(−1)` terms.
    pub prev_control: ControlInput,
}

/// Gradients of a scalar with respect to the three primal blocks.
#[derive(Debug, Clone)]
pub struct BlockGradients {
    pub delta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub z: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LagrangianValue {
    pub value: f64,
    pub gradients: BlockGradients,
}

impl Objective {
    /// `Φ₁ + Φ₂ + Φ₃` without the safety term.
    pub fn tracking_cost(&self, delta: &DVector<f64>, alpha: &DVector<f64>, z: &DVector<f64>) -> f64 {
        phi1(delta, self.prev_control.delta, &self.weights)
            + phi2(alpha, self.prev_control.a, &self.weights)
            + phi3(z, &self.refs, &self.weights)
    }

    /// `Σ_i λ_sᵀ b_i(Z)` and its gradient.
    pub fn weighted_safety(&self, z: &DVector<f64>, r: &PredictionRollout) -> Result<(f64, DVector<f64>)> {
        check_rollout(z, r)?;
        if self.weights.lambda_s.len() != r.horizon() {
            return Err(Error::DimensionMismatch {
                what: "lambda_s",
                expected: r.horizon(),
                got: self.weights.lambda_s.len(),
            });
        }
        let mut value = 0.0;
        let mut grad = DVector::zeros(z.len());
        for i in 0..r.n_vehicles() {
            let sv = safety_vector(z, r, &self.geometry, i)?;
            let l = DVector::from_column_slice(&self.weights.lambda_s);
            value += l.dot(&sv.values);
            grad += sv.jacobian.tr_mul(&l);
        }
        Ok((value, grad))
    }

    /// Relaxed objective `J = Φ₁ + Φ₂ + Φ₃ − Σ_i λ_sᵀ b_i(Z)`.
    pub fn relaxed(
        &self,
        delta: &DVector<f64>,
        alpha: &DVector<f64>,
        z: &DVector<f64>,
        r: &PredictionRollout,
    ) -> Result<f64> {
        Ok(self.tracking_cost(delta, alpha, z) - self.weighted_safety(z, r)?.0)
    }

    pub fn relaxed_gradient(
        &self,
        delta: &DVector<f64>,
        alpha: &DVector<f64>,
        z: &DVector<f64>,
        r: &PredictionRollout,
    ) -> Result<BlockGradients> {
        let (_, gs) = self.weighted_safety(z, r)?;
        Ok(BlockGradients {
            delta: phi1_gradient(delta, self.prev_control.delta, &self.weights),
            alpha: phi2_gradient(alpha, self.prev_control.a, &self.weights),
            z: phi3_gradient(z, &self.refs, &self.weights) - gs,
        })
    }

    /// `J` with the rollout recomputed along `z`.
    pub fn relaxed_along(
        &self,
        delta: &DVector<f64>,
        alpha: &DVector<f64>,
        z: &DVector<f64>,
        predictor: &dyn Predictor,
        buffer: &ObservationBuffer,
    ) -> Result<f64> {
        let r = rollout(predictor, buffer, z, z.len() / STATE_DIM)?;
        self.relaxed(delta, alpha, z, &r)
    }

    /// `𝓛_ρ = J + μᵀF + (ρ/2)‖F‖²` and its block gradients; `r` must be the
    /// rollout along `iter.z`.
    pub fn augmented_lagrangian(
        &self,
        iter: &AdmmIterate,
        bd: &BlockDynamics,
        r: &PredictionRollout,
        rho: f64,
    ) -> Result<LagrangianValue> {
        let f = bd.evaluate_f(&iter.delta, &iter.alpha, &iter.z)?;
        if iter.mu.len() != f.len() {
            return Err(Error::DimensionMismatch {
                what: "dual vector",
                expected: f.len(),
                got: iter.mu.len(),
            });
        }
        let j = self.relaxed(&iter.delta, &iter.alpha, &iter.z, r)?;
        let mut g = self.relaxed_gradient(&iter.delta, &iter.alpha, &iter.z, r)?;
        let w = &iter.mu + &f * rho;
        g.delta += bd.a.tr_mul(&w);
        g.alpha += bd.b.tr_mul(&w);
        g.z += bd.c.tr_mul(&w);
        Ok(LagrangianValue {
            value: j + iter.mu.dot(&f) + 0.5 * rho * f.norm_squared(),
            gradients: g,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn refs() -> References {
        References {
            y_ref: 3.7,
            v_ref: 10.0,
            x_ref: 25.0,
        }
    }

    #[test]
    fn phi1_hand_value() {
        let w = CostWeights::table_one(2);
        assert_eq!(phi1(&DVector::zeros(2), 0.0, &w), 0.0);
        let d = DVector::from_vec(vec![0.1, 0.1]);
        assert_relative_eq!(phi1(&d, 0.0, &w), 0.016, epsilon = 1e-15);
    }

    #[test]
    fn phi2_hand_value() {
        let w = CostWeights::table_one(2);
        let a = DVector::from_vec(vec![1.0, 2.0]);
        // 0.4·(1 + 4) + 0.2·(1 + 1)
        assert_relative_eq!(phi2(&a, 0.0, &w), 2.4, epsilon = 1e-14);
    }

    #[test]
    fn quadratic_form_matches_direct_sum() {
        let u = DVector::from_vec(vec![0.3, -0.2, 0.05]);
        let q = rate_cost_quadratic(3, 0.12, 0.6, 0.4);
        assert_relative_eq!(q.value(&u), rate_cost(&u, 0.12, 0.6, 0.4), epsilon = 1e-14);
        let g = &q.hessian * &u + &q.linear;
        assert_relative_eq!(g, rate_cost_gradient(&u, 0.12, 0.6, 0.4), epsilon = 1e-14);
    }

    #[test]
    fn phi3_values_and_sparsity() {
        let w = CostWeights::table_one(1);
        let at_ref = DVector::from_vec(vec![5.0, 3.7, 0.1, 10.0]);
        assert_eq!(phi3(&at_ref, &refs(), &w), 0.0);
        let off = DVector::from_vec(vec![5.0, 4.7, 0.1, 10.0]);
        assert_relative_eq!(phi3(&off, &refs(), &w), 1.0, epsilon = 1e-14);
        let g = phi3_gradient(&DVector::from_vec(vec![1.0, 2.0, 0.3, 7.0]), &refs(), &w);
        assert_eq!((g[0], g[2]), (0.0, 0.0));
        let q = phi3_quadratic(4, &refs(), &w);
        assert_relative_eq!(q.value(&off), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_examples() {
        let g = SafetyGeometry::uniform(1, 1.4, 0.2);
        assert_relative_eq!(distance([0.0, 0.0], [10.0, 0.0], &g, 0), 91.0, epsilon = 1e-12);
        assert_relative_eq!(distance([1.0, 1.0], [1.0, 1.0], &g, 0), -9.0, epsilon = 1e-12);
        assert_relative_eq!(distance([0.0, 0.0], [0.0, 3.0], &g, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_validation() {
        let mut w = CostWeights::table_one(3);
        assert!(w.validate(3).is_ok());
        assert!(w.validate(4).is_err());
        w.lambda_a = -1.0;
        assert!(w.validate(3).is_err());
    }
}
