//! Kinematic bicycle model, its linearization about the last observed
//! operating point, and the stacked equality system
//! `F(Δ, α, Z) = AΔ + Bα + CZ + D` over the planning horizon.
//!
//! State trajectories are stored flat: `Z = [z(1); z(2); …; z(Tp)]` with each
//! `z = (x, y, ψ, v)`, so `Z[4τ + k]` is component `k` of `z(τ + 1)`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl EgoState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        Self { x, y, psi, v }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.psi, self.v)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.psi, self.v]
    }

    /// Same state with the heading wrapped into (−π, π]. Only applied when
    /// ingesting observations; states inside one solve stay unwrapped.
    pub fn observed(&self) -> Self {
        Self { psi: wrap_angle(self.psi), ..*self }
    }
}

impl From<Vector4<f64>> for EgoState {
    fn from(v: Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta: f64,
    pub a: f64,
}

impl ControlInput {
    pub fn new(delta: f64, a: f64) -> Self {
        Self { delta, a }
    }
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dt: f64,
    pub lf: f64,
    pub lr: f64,
    pub steer: Bounds,
    pub accel: Bounds,
    /// Per-component state bounds, ordered `(x, y, ψ, v)`.
    pub state: [Bounds; 4],
    pub horizon: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            dt: 0.25,
            lf: 1.25,
            lr: 1.25,
            steer: Bounds::new(-0.5, 0.5),
            accel: Bounds::new(-4.0, 3.0),
            state: [
                Bounds::new(-10.0, 200.0),
                Bounds::new(-2.0, 10.0),
                Bounds::new(-0.6, 0.6),
                Bounds::new(0.5, 20.0),
            ],
            horizon: 8,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.lf > 0.0 && self.lr > 0.0) {
            return bad("axle distances must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        let all = [self.steer, self.accel]
            .into_iter()
            .chain(self.state.iter().copied());
        for b in all {
            if !(b.min < b.max) {
                return bad("every bound needs min < max");
            }
        }
        Ok(())
    }

    pub fn slip_ratio(&self) -> f64 {
        self.lr / (self.lf + self.lr)
    }

    /// Lower/upper bound vectors for the stacked state trajectory `Z`.
    pub fn state_box(&self) -> (DVector<f64>, DVector<f64>) {
        let n = STATE_DIM * self.horizon;
        let lo = DVector::from_fn(n, |i, _| self.state[i % STATE_DIM].min);
        let hi = DVector::from_fn(n, |i, _| self.state[i % STATE_DIM].max);
        (lo, hi)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// One forward-Euler step of the kinematic bicycle model.
pub fn step(z: &EgoState, u: &ControlInput, p: &ModelParams) -> Result<EgoState> {
    ensure_finite("bicycle step input", &[z.x, z.y, z.psi, z.v, u.delta, u.a])?;
    Ok(step_unchecked(z, u, p))
}

pub(crate) fn step_unchecked(z: &EgoState, u: &ControlInput, p: &ModelParams) -> EgoState {
    let beta = (p.slip_ratio() * u.delta.tan()).atan();
    let heading = z.psi + beta;
    EgoState {
        x: z.x + p.dt * z.v * heading.cos(),
        y: z.y + p.dt * z.v * heading.sin(),
        psi: z.psi + p.dt * (z.v / p.lr) * beta.sin(),
        v: z.v + p.dt * u.a,
    }
}

/// `f(δ, a, z) ≈ Ã δ + B̃ a + C̃ z + D̃` about an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    pub a_tilde: Vector4<f64>,
    pub b_tilde: Vector4<f64>,
    pub c_tilde: Matrix4<f64>,
    pub d_tilde: Vector4<f64>,
    pub op_control: ControlInput,
    pub op_state: EgoState,
}

impl LinearizedDynamics {
    pub fn apply(&self, u: &ControlInput, z: &Vector4<f64>) -> Vector4<f64> {
        self.a_tilde * u.delta + self.b_tilde * u.a + self.c_tilde * z + self.d_tilde
    }
}

/// Analytic Jacobians of [`step`] at `(δ̃, ã, z̃)`.
pub fn linearize(
    op_control: &ControlInput,
    op_state: &EgoState,
    p: &ModelParams,
) -> Result<LinearizedDynamics> {
    let z = op_state;
    let u = op_control;
    ensure_finite("operating point", &[z.x, z.y, z.psi, z.v, u.delta, u.a])?;
    if z.v.abs() < 1e-9 {
        return Err(Error::DegenerateOperatingPoint(
            "speed is zero at the operating point".into(),
        ));
    }
    let k = p.slip_ratio();
    let tan_d = u.delta.tan();
    let beta = (k * tan_d).atan();
    // dβ/dδ
    let dbeta = k * (1.0 + tan_d * tan_d) / (1.0 + k * k * tan_d * tan_d);
    let (sh, ch) = (z.psi + beta).sin_cos();
    let (sb, cb) = beta.sin_cos();
    let dt = p.dt;

    let a_tilde = Vector4::new(
        -dt * z.v * sh * dbeta,
        dt * z.v * ch * dbeta,
        dt * (z.v / p.lr) * cb * dbeta,
        0.0,
    );
    let b_tilde = Vector4::new(0.0, 0.0, 0.0, dt);
    #[rustfmt::skip]
    let c_tilde = Matrix4::new(
        1.0, 0.0, -dt * z.v * sh, dt * ch,
        0.0, 1.0,  dt * z.v * ch, dt * sh,
        0.0, 0.0,  1.0,           dt * sb / p.lr,
        0.0, 0.0,  0.0,           1.0,
    );
    let f = step_unchecked(z, u, p).to_vector();
    let d_tilde = f - a_tilde * u.delta - b_tilde * u.a - c_tilde * z.to_vector();
    Ok(LinearizedDynamics {
        a_tilde,
        b_tilde,
        c_tilde,
        d_tilde,
        op_control: *u,
        op_state: *z,
    })
}

/// Stacked matrices of the horizon-wide equality constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub horizon: usize,
}

/// Builds `A, B, C, D` for the horizon in `p`. The first block of `D` carries
/// `+C̃ z(0)`, which is the sign that makes `F = 0` on linearized rollouts.
pub fn assemble_blocks(
    lin: &LinearizedDynamics,
    z0: &EgoState,
    p: &ModelParams,
) -> Result<BlockDynamics> {
    p.validate()?;
    ensure_finite("initial state", &z0.as_array())?;
    let tp = p.horizon;
    let n = STATE_DIM * tp;
    let mut a = DMatrix::zeros(n, tp);
    let mut b = DMatrix::zeros(n, tp);
    let mut c = -DMatrix::<f64>::identity(n, n);
    let mut d = DVector::zeros(n);
    for t in 0..tp {
        let r = STATE_DIM * t;
        a.fixed_view_mut::<4, 1>(r, t).copy_from(&lin.a_tilde);
        b.fixed_view_mut::<4, 1>(r, t).copy_from(&lin.b_tilde);
        d.fixed_rows_mut::<4>(r).copy_from(&lin.d_tilde);
        if t > 0 {
            c.fixed_view_mut::<4, 4>(r, r - STATE_DIM)
                .copy_from(&lin.c_tilde);
        }
    }
    let head = lin.d_tilde + lin.c_tilde * z0.to_vector();
    d.fixed_rows_mut::<4>(0).copy_from(&head);
    Ok(BlockDynamics {
        a,
        b,
        c,
        d,
        horizon: tp,
    })
}

impl BlockDynamics {
    pub fn state_len(&self) -> usize {
        STATE_DIM * self.horizon
    }

    fn check_dims(&self, delta: &DVector<f64>, alpha: &DVector<f64>, z: &DVector<f64>) -> Result<()> {
        let tp = self.horizon;
        if delta.len() != tp {
            return Err(Error::DimensionMismatch { what: "steering trajectory", expected: tp, got: delta.len() });
        }
        if alpha.len() != tp {
            return Err(Error::DimensionMismatch { what: "acceleration trajectory", expected: tp, got: alpha.len() });
        }
        if z.len() != self.state_len() {
            return Err(Error::DimensionMismatch { what: "state trajectory", expected: self.state_len(), got: z.len() });
        }
        Ok(())
    }

    pub fn evaluate_f(
        &self,
        delta: &DVector<f64>,
        alpha: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_dims(delta, alpha, z)?;
        Ok(self.f_unchecked(delta, alpha, z))
    }

    pub(crate) fn f_unchecked(
        &self,
        delta: &DVector<f64>,
        alpha: &DVector<f64>,
        z: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a * delta + &self.b * alpha + &self.c * z + &self.d
    }

    /// State trajectory that satisfies `F = 0` for the given controls, i.e.
    /// the linearized rollout from `z(0)`.
    pub fn rollout(&self, delta: &DVector<f64>, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        let tp = self.horizon;
        if delta.len() != tp || alpha.len() != tp {
            return Err(Error::DimensionMismatch { what: "control trajectory", expected: tp, got: delta.len().min(alpha.len()) });
        }
        // C is unit lower-triangular up to sign: forward substitution.
        let rhs = -(&self.a * delta + &self.b * alpha + &self.d);
        let mut z = DVector::zeros(self.state_len());
        for i in 0..self.state_len() {
            let mut s = rhs[i];
            for j in 0..i {
                s -= self.c[(i, j)] * z[j];
            }
            z[i] = s / self.c[(i, i)];
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub rank_c: usize,
    pub sigma_min_c: f64,
    /// max |C X − [A, B]| for the least-squares solution X.
    pub image_containment_residual: f64,
}

/// Checks that `C` has full rank and that `Im([A, B]) ⊆ Im(C)`.
pub fn check_feasibility_lemma(bd: &BlockDynamics) -> FeasibilityReport {
    let n = bd.state_len();
    let svd = bd.c.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let tol = smax * n as f64 * f64::EPSILON;
    let rank_c = sv.iter().filter(|&&s| s > tol).count();
    let sigma_min_c = sv
        .iter()
        .copied()
        .filter(|&s| s > tol)
        .fold(f64::INFINITY, f64::min);

    let mut q = DMatrix::zeros(n, 2 * bd.horizon);
    q.columns_mut(0, bd.horizon).copy_from(&bd.a);
    q.columns_mut(bd.horizon, bd.horizon).copy_from(&bd.b);
    let residual = match svd.solve(&q, tol) {
        Ok(x) => (&bd.c * x - &q).amax(),
        Err(_) => f64::INFINITY,
    };
    FeasibilityReport {
        rank_c,
        sigma_min_c,
        image_containment_residual: residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn straight_line_without_inputs() {
        let z = EgoState::new(0.0, 0.0, 0.0, 10.0);
        let out = step(&z, &ControlInput::new(0.0, 0.0), &params()).unwrap();
        assert_eq!(out, EgoState::new(2.5, 0.0, 0.0, 10.0));
    }

    #[test]
    fn pure_acceleration_changes_speed_only() {
        let z = EgoState::new(0.0, 0.0, 0.0, 10.0);
        let out = step(&z, &ControlInput::new(0.0, 2.0), &params()).unwrap();
        assert_eq!(out, EgoState::new(2.5, 0.0, 0.0, 10.5));
    }

    #[test]
    fn steering_step_matches_hand_evaluation() {
        // β = atan(0.5 tan 0.1), evaluated independently of step_unchecked.
        let beta = (0.5f64 * 0.1f64.tan()).atan();
        let expect = [
            0.25 * 10.0 * beta.cos(),
            0.25 * 10.0 * beta.sin(),
            0.25 * (10.0 / 1.25) * beta.sin(),
            10.0,
        ];
        let z = EgoState::new(0.0, 0.0, 0.0, 10.0);
        let out = step(&z, &ControlInput::new(0.1, 0.0), &params()).unwrap();
        for (a, b) in out.as_array().iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        // frozen from a separate evaluation of the four update formulas
        assert_relative_eq!(out.x, 2.4968599737745407, epsilon = 1e-12);
        assert_relative_eq!(out.y, 0.12526081335597758, epsilon = 1e-12);
        assert_relative_eq!(out.psi, 0.10020865068478206, epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_nan() {
        let z = EgoState::new(f64::NAN, 0.0, 0.0, 10.0);
        assert!(matches!(
            step(&z, &ControlInput::default(), &params()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn linearize_rejects_zero_speed() {
        let z = EgoState::new(0.0, 0.0, 0.0, 0.0);
        assert!(linearize(&ControlInput::default(), &z, &params()).is_err());
    }

    #[test]
    fn straight_operating_point_jacobians() {
        let z = EgoState::new(0.0, 0.0, 0.0, 10.0);
        let lin = linearize(&ControlInput::default(), &z, &params()).unwrap();
        assert_eq!(lin.b_tilde, Vector4::new(0.0, 0.0, 0.0, 0.25));
        let row: Vec<f64> = lin.c_tilde.row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn linearization_is_exact_at_operating_point() {
        let z = EgoState::new(3.0, 1.2, 0.2, 7.0);
        let u = ControlInput::new(0.13, -1.0);
        let p = params();
        let lin = linearize(&u, &z, &p).unwrap();
        let f = step(&z, &u, &p).unwrap().to_vector();
        assert!((lin.apply(&u, &z.to_vector()) - f).amax() < 1e-13);
    }

    #[test]
    fn horizon_one_blocks() {
        let p = ModelParams { horizon: 1, ..params() };
        let z0 = EgoState::new(1.0, 0.5, 0.1, 9.0);
        let lin = linearize(&ControlInput::new(0.05, 0.5), &z0, &p).unwrap();
        let bd = assemble_blocks(&lin, &z0, &p).unwrap();
        assert_eq!(bd.c, -DMatrix::<f64>::identity(4, 4));
        let expect = lin.d_tilde + lin.c_tilde * z0.to_vector();
        assert!((bd.d.clone() - DVector::from_column_slice(expect.as_slice())).amax() < 1e-15);
        // one linearized step from z(0) is feasible
        let u = ControlInput::new(0.2, 1.0);
        let z1 = lin.apply(&u, &z0.to_vector());
        let f = bd
            .evaluate_f(
                &DVector::from_element(1, u.delta),
                &DVector::from_element(1, u.a),
                &DVector::from_column_slice(z1.as_slice()),
            )
            .unwrap();
        assert!(f.amax() < 1e-14);
    }

    #[test]
    fn horizon_two_structure() {
        let p = ModelParams { horizon: 2, ..params() };
        let z0 = EgoState::new(0.0, 0.0, 0.1, 8.0);
        let lin = linearize(&ControlInput::default(), &z0, &p).unwrap();
        let bd = assemble_blocks(&lin, &z0, &p).unwrap();
        assert_eq!(bd.c.shape(), (8, 8));
        assert_eq!(bd.c.view((4, 0), (4, 4)), lin.c_tilde);
        assert_eq!(bd.c.view((0, 0), (4, 4)), -Matrix4::<f64>::identity());
        assert_eq!(bd.c.view((4, 4), (4, 4)), -Matrix4::<f64>::identity());
        assert!(bd.c.view((0, 4), (4, 4)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f_is_affine_in_z() {
        let p = ModelParams { horizon: 3, ..params() };
        let z0 = EgoState::new(0.0, 0.0, 0.0, 8.0);
        let lin = linearize(&ControlInput::default(), &z0, &p).unwrap();
        let bd = assemble_blocks(&lin, &z0, &p).unwrap();
        let d = DVector::from_vec(vec![0.1, -0.2, 0.05]);
        let a = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let z = bd.rollout(&d, &a).unwrap();
        assert!(bd.evaluate_f(&d, &a, &z).unwrap().amax() < 1e-12);
        for j in 0..z.len() {
            let mut zj = z.clone();
            zj[j] += 1.0;
            let df = bd.evaluate_f(&d, &a, &zj).unwrap();
            assert!((df - bd.c.column(j)).amax() < 1e-12);
        }
    }

    #[test]
    fn f_rejects_wrong_dimensions() {
        let p = ModelParams { horizon: 2, ..params() };
        let z0 = EgoState::new(0.0, 0.0, 0.0, 8.0);
        let lin = linearize(&ControlInput::default(), &z0, &p).unwrap();
        let bd = assemble_blocks(&lin, &z0, &p).unwrap();
        let r = bd.evaluate_f(&DVector::zeros(3), &DVector::zeros(2), &DVector::zeros(8));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn feasibility_at_horizon_one() {
        let p = ModelParams { horizon: 1, ..params() };
        let z0 = EgoState::new(0.0, 0.0, 0.0, 8.0);
        let lin = linearize(&ControlInput::default(), &z0, &p).unwrap();
        let rep = check_feasibility_lemma(&assemble_blocks(&lin, &z0, &p).unwrap());
        assert_eq!(rep.rank_c, 4);
        assert_relative_eq!(rep.sigma_min_c, 1.0, epsilon = 1e-12);
        assert!(rep.image_containment_residual < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.3), 0.3);
        assert_relative_eq!(wrap_angle(-0.3 - 2.0 * PI), -0.3, epsilon = 1e-12);
    }

    #[test]
    fn default_params_validate() {
        params().validate().unwrap();
        let bad = ModelParams { dt: 0.0, ..params() };
        assert!(bad.validate().is_err());
    }
}
