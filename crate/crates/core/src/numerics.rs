//! Reference computations used to check the planner: finite-difference
//! Jacobians, singular values, exhaustive box-QP enumeration and a direct
//! joint solve of tiny instances. Nothing here calls into the ADMM solver,
//! the block assembly or the objective module.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{EgoState, LinearizedDynamics, ModelParams};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::predictor::{ObservationBuffer, Predictor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec {
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            h: 1e-5,
            rtol: 1e-5,
            atol: 1e-8,
        }
    }
}

impl FdSpec {
    /// Mixed tolerance `|a − b| ≤ atol + rtol·|b|`.
    pub fn close(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.atol + self.rtol * b.abs()
    }

    /// Largest `|a − b| / (atol + rtol·|b|)` over entries; `≤ 1` means close.
    pub fn worst_ratio(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / (self.atol + self.rtol * y.abs()))
            .fold(0.0, f64::max)
    }
}

/// Central differences: column `j` is `(f(x + h e_j) − f(x − h e_j)) / 2h`.
pub fn fd_jacobian<F>(mut f: F, x0: &DVector<f64>, spec: &FdSpec) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(spec.h > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let f0 = f(x0)?;
    let mut jac = DMatrix::zeros(f0.len(), x0.len());
    for j in 0..x0.len() {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += spec.h;
        xm[j] -= spec.h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("finite-difference evaluation in column {j}")));
        }
        jac.set_column(j, &((fp - fm) / (2.0 * spec.h)));
    }
    Ok(jac)
}

/// Gradient of a scalar function by central differences.
pub fn fd_gradient<F>(mut f: F, x0: &DVector<f64>, spec: &FdSpec) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let j = fd_jacobian(|x| Ok(DVector::from_element(1, f(x)?)), x0, spec)?;
    Ok(j.row(0).transpose())
}

/// Singular values above `σ_max · max(m, n) · ε`.
fn positive_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    sv.iter().cloned().filter(|s| *s > tol).collect()
}

/// Smallest positive singular value (0 for the zero matrix).
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    positive_singular_values(m).into_iter().reduce(f64::min).unwrap_or(0.0)
}

pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    positive_singular_values(m).len()
}

/// Dense solve of a square system by LU with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone().lu().solve(b).ok_or(Error::Singular("dense reference solve"))
}

/// Minimizer of `½xᵀHx + gᵀx` on `[lo, hi]` by enumerating every
/// assignment of each coordinate to lower bound, upper bound or free.
/// Exponential in the dimension; limited to 8.
pub fn box_qp_reference(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = g.len();
    if n > 8 {
        return Err(Error::InvalidParameter("enumeration oracle is limited to 8 variables".into()));
    }
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + g.dot(x);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut assign = vec![0u8; n];
        let mut c = code;
        for a in assign.iter_mut() {
            *a = (c % 3) as u8;
            c /= 3;
        }
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| assign[i] == 0).collect();
        for i in 0..n {
            match assign[i] {
                1 => x[i] = lo[i],
                2 => x[i] = hi[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                let i = free[r];
                -g[i] - (0..n).filter(|j| assign[*j] != 0).map(|j| h[(i, j)] * x[j]).sum::<f64>()
            });
            let Ok(sol) = dense_solve(&hff, &rhs) else { continue };
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        let feasible = (0..n).all(|i| x[i] >= lo[i] - 1e-12 && x[i] <= hi[i] + 1e-12);
        if !feasible {
            continue;
        }
        let v = objective(&x);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, x));
        }
    }
    best.map(|(_, x)| x).ok_or(Error::Singular("box QP enumeration found no feasible point"))
}

/// A complete planning instance small enough for a direct solve.
#[derive(Debug, Clone, Copy)]
pub struct TinyProblem<'a> {
    pub lin: &'a LinearizedDynamics,
    pub z0: EgoState,
    pub model: &'a ModelParams,
    pub objective: &'a Objective,
    pub predictor: &'a dyn Predictor,
    pub buffer: &'a ObservationBuffer,
}

#[derive(Debug, Clone)]
pub struct JointSolution {
    pub delta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub z: DVector<f64>,
    pub cost: f64,
    /// Final cost from every start, in start order.
    pub start_costs: Vec<f64>,
}

impl TinyProblem<'_> {
    fn horizon(&self) -> usize {
        self.model.horizon
    }

    /// Per-step linearized recursion from `z0`.
    pub fn states(&self, delta: &[f64], alpha: &[f64]) -> Vec<[f64; 4]> {
        let mut out = Vec::with_capacity(delta.len());
        let mut z = self.z0.to_vector();
        for t in 0..delta.len() {
            z = self.lin.a_tilde * delta[t] + self.lin.b_tilde * alpha[t] + self.lin.c_tilde * z + self.lin.d_tilde;
            out.push([z[0], z[1], z[2], z[3]]);
        }
        out
    }

    /// Surrounding-vehicle predictions along `states`, by direct recursion.
    fn predictions(&self, states: &[[f64; 4]]) -> Result<Vec<Vec<[f64; 2]>>> {
        let depth = self.predictor.history_depth();
        let mut history: Vec<Vec<[f64; 2]>> = (0..depth).rev().map(|r| self.buffer.row(r).to_vec()).collect();
        let mut out = Vec::with_capacity(states.len());
        for s in states {
            let rows: Vec<Vec<[f64; 2]>> = history.iter().rev().take(depth).cloned().collect();
            let pred = self.predictor.predict_one(&ObservationBuffer::from_rows(rows)?)?.positions;
            let mut next = vec![[s[0], s[1]]];
            next.extend_from_slice(&pred);
            history.push(next);
            out.push(pred);
        }
        Ok(out)
    }

    /// Relaxed cost written out term by term.
    pub fn cost(&self, delta: &[f64], alpha: &[f64]) -> Result<f64> {
        let w = &self.objective.weights;
        let refs = &self.objective.refs;
        let geo = &self.objective.geometry;
        let prev = self.objective.prev_control;
        let states = self.states(delta, alpha);
        let preds = self.predictions(&states)?;
        let mut j = 0.0;
        for t in 0..delta.len() {
            let (dp, ap) = if t == 0 { (prev.delta, prev.a) } else { (delta[t - 1], alpha[t - 1]) };
            j += w.lambda_delta * delta[t].powi(2) + w.lambda_ddelta * (delta[t] - dp).powi(2);
            j += w.lambda_a * alpha[t].powi(2) + w.lambda_da * (alpha[t] - ap).powi(2);
            let s = states[t];
            j += w.lambda_div * (s[1] - refs.y_ref).powi(2) + w.lambda_v * (s[3] - refs.v_ref).powi(2);
            for (i, p) in preds[t].iter().enumerate() {
                let c = geo.r + geo.r_i[i] + geo.eps;
                let d = (s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2) - c * c;
                j -= w.lambda_s[t] * d;
            }
        }
        Ok(j)
    }

    fn box_violation(&self, delta: &[f64], alpha: &[f64]) -> f64 {
        let over = |v: f64, lo: f64, hi: f64| (lo - v).max(0.0).powi(2) + (v - hi).max(0.0).powi(2);
        let m = self.model;
        let mut s: f64 = delta.iter().map(|d| over(*d, m.steer.min, m.steer.max)).sum();
        s += alpha.iter().map(|a| over(*a, m.accel.min, m.accel.max)).sum::<f64>();
        for st in self.states(delta, alpha) {
            for k in 0..4 {
                s += over(st[k], m.state[k].min, m.state[k].max);
            }
        }
        s
    }
}

const BOX_PENALTY: f64 = 1e6;

/// Dense BFGS with central-difference gradients on the joint controls
/// (states eliminated by the recursion), box constraints as a quadratic
/// penalty, from `starts` seeded starting points; the first start is zero.
pub fn joint_solve_tiny(problem: &TinyProblem, starts: usize, seed: u64) -> Result<JointSolution> {
    let tp = problem.horizon();
    if tp > 2 || problem.buffer.n_vehicles() > 1 {
        return Err(Error::InvalidParameter("joint oracle supports Tp ≤ 2 and N ≤ 1".into()));
    }
    let n = 2 * tp;
    let total = |x: &DVector<f64>| -> Result<f64> {
        let (d, a) = x.as_slice().split_at(tp);
        Ok(problem.cost(d, a)? + BOX_PENALTY * problem.box_violation(d, a))
    };
    let spec = FdSpec { h: 1e-6, ..FdSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = problem.model;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut start_costs = Vec::with_capacity(starts);

    for s in 0..starts.max(1) {
        let mut x = if s == 0 {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |i, _| {
                let b = if i < tp { m.steer } else { m.accel };
                rng.random_range(b.min * 0.5..b.max * 0.5)
            })
        };
        let mut fx = total(&x)?;
        let mut g = fd_gradient(total, &x, &spec)?;
        let mut hinv = DMatrix::<f64>::identity(n, n);
        for _ in 0..500 {
            if g.norm() < 1e-9 {
                break;
            }
            let mut dir = -(&hinv * &g);
            if dir.dot(&g) >= 0.0 {
                hinv = DMatrix::identity(n, n);
                dir = -g.clone();
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let xn = &x + &dir * t;
                let fn_ = total(&xn)?;
                if fn_ <= fx + 1e-4 * t * g.dot(&dir) {
                    let gn = fd_gradient(total, &xn, &spec)?;
                    let sv = &xn - &x;
                    let yv = &gn - &g;
                    let sy = sv.dot(&yv);
                    if sy > 1e-14 {
                        let rho = 1.0 / sy;
                        let i = DMatrix::<f64>::identity(n, n);
                        let left = &i - &sv * yv.transpose() * rho;
                        let right = &i - &yv * sv.transpose() * rho;
                        hinv = &left * &hinv * &right + &sv * sv.transpose() * rho;
                    }
                    x = xn;
                    fx = fn_;
                    g = gn;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        start_costs.push(fx);
        if best.as_ref().is_none_or(|(bv, _)| fx < *bv) {
            best = Some((fx, x));
        }
    }

    let (_, x) = best.expect("at least one start");
    let (d, a) = x.as_slice().split_at(tp);
    let states = problem.states(d, a);
    Ok(JointSolution {
        cost: problem.cost(d, a)?,
        delta: DVector::from_column_slice(d),
        alpha: DVector::from_column_slice(a),
        z: DVector::from_iterator(4 * tp, states.iter().flatten().copied()),
        start_costs,
    })
}
