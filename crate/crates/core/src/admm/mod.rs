//! Three-block ADMM over steering `Δ`, acceleration `α` and states `Z`.
//!
//! The `Δ` and `α` blocks are box-constrained strictly convex QPs solved
//! exactly by an active-set method. The `Z` block carries the predictor and
//! is minimized with a projected L-BFGS preconditioned by its quadratic part.
//! In hard-constraint mode the safety constraints are enforced with an
//! exterior quadratic penalty whose weight only grows within one solve.

mod certificate;
mod lbfgs;
mod qp;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{BlockDynamics, ModelParams, STATE_DIM};
use crate::error::{Error, Result};
use crate::objective::{
    min_safety, phi1_gradient, phi2_gradient, phi3_gradient, phi3_quadratic, rate_cost_quadratic,
    safety_functional, Objective,
};
use crate::predictor::{record_rollout, ObservationBuffer, Predictor};

pub use certificate::{rho_certificate, RhoCertificate};
pub use qp::{projected_gradient_norm, solve_box_qp};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Safety terms relocated into the objective with fixed multipliers.
    SoftLagrangian,
    /// Safety constraints enforced through a growing exterior penalty.
    HardConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps_primal: f64,
    pub eps_change: f64,
    /// Optional bound on the projected block-gradient norms of `𝓛_ρ`.
    pub eps_stationarity: Option<f64>,
    pub max_iter: usize,
    pub mode: ConstraintMode,
    pub z_max_iter: usize,
    pub z_grad_tol: f64,
    pub lbfgs_memory: usize,
    pub penalty_start: f64,
    pub penalty_doublings: u32,
    /// Extra clearance (m) the penalty aims for beyond `r + r_i + ε`.
    pub safety_margin: f64,
    /// Weight of `(β/2)‖Z − Zᵏ‖²` added to the `Z` subproblem. It vanishes
    /// at fixed points and damps switching between safety-constraint basins.
    pub z_prox: f64,
    /// The `Z` subproblem is solved to `z_inexact` times the previous
    /// iterate's stationarity, never tighter than `z_grad_tol`.
    pub z_inexact: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 100.0,
            eps_primal: 1e-4,
            eps_change: 1e-5,
            eps_stationarity: Some(1e-4),
            max_iter: 2000,
            mode: ConstraintMode::HardConstraint,
            z_max_iter: 300,
            z_grad_tol: 1e-9,
            lbfgs_memory: 10,
            penalty_start: 10.0,
            penalty_doublings: 8,
            safety_margin: 0.05,
            z_prox: 1.0,
            z_inexact: 0.1,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = self.eps_primal > 0.0
            && self.eps_change > 0.0
            && self.eps_stationarity.is_none_or(|e| e > 0.0)
            && self.z_grad_tol > 0.0;
        if !(self.rho > 0.0 && self.rho.is_finite()) || !tol_ok {
            return Err(Error::InvalidParameter("rho and tolerances must be positive".into()));
        }
        if self.max_iter == 0 || self.z_max_iter == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidParameter("iteration caps and memory must be positive".into()));
        }
        if !(self.penalty_start > 0.0 && self.safety_margin >= 0.0) {
            return Err(Error::InvalidParameter("penalty start must be positive".into()));
        }
        if !(self.z_prox >= 0.0 && self.z_prox.is_finite() && self.z_inexact >= 0.0) {
            return Err(Error::InvalidParameter("z_prox and z_inexact must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmIterate {
    pub delta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub z: DVector<f64>,
    pub mu: DVector<f64>,
    pub primal_residual: f64,
    pub iterate_change: f64,
    pub iteration: usize,
}

impl AdmmIterate {
    /// Zero controls, the linearized rollout under them (clamped to the
    /// state box) and zero duals.
    pub fn cold(bd: &BlockDynamics, model: &ModelParams) -> Result<Self> {
        let tp = bd.horizon;
        let delta = DVector::zeros(tp);
        let alpha = DVector::zeros(tp);
        let (lo, hi) = model.state_box();
        let z = bd.rollout(&delta, &alpha)?;
        let z = DVector::from_fn(z.len(), |i, _| z[i].clamp(lo[i], hi[i]));
        Self::from_blocks(bd, delta, alpha, z, DVector::zeros(STATE_DIM * tp))
    }

    pub fn from_blocks(
        bd: &BlockDynamics,
        delta: DVector<f64>,
        alpha: DVector<f64>,
        z: DVector<f64>,
        mu: DVector<f64>,
    ) -> Result<Self> {
        let f = bd.evaluate_f(&delta, &alpha, &z)?;
        Ok(Self {
            primal_residual: f.norm(),
            delta,
            alpha,
            z,
            mu,
            iterate_change: 0.0,
            iteration: 0,
        })
    }

    /// Receding-horizon warm start: drop the first step, repeat the last.
    pub fn shifted(&self, bd: &BlockDynamics, model: &ModelParams) -> Result<Self> {
        let shift = |v: &DVector<f64>, width: usize| {
            let n = v.len();
            DVector::from_fn(n, |i, _| {
                let j = i + width;
                if j < n {
                    v[j]
                } else {
                    v[n - width + (i % width)]
                }
            })
        };
        let clamp_box = |v: DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>| {
            DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]))
        };
        let tp = bd.horizon;
        let (zlo, zhi) = model.state_box();
        let delta = shift(&self.delta, 1).map(|d| model.steer.clamp(d));
        let alpha = shift(&self.alpha, 1).map(|a| model.accel.clamp(a));
        let z = clamp_box(shift(&self.z, STATE_DIM), &zlo, &zhi);
        if delta.len() != tp || z.len() != STATE_DIM * tp {
            return Self::cold(bd, model);
        }
        Self::from_blocks(bd, delta, alpha, z, shift(&self.mu, STATE_DIM))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub l_rho: f64,
    pub primal_residual: f64,
    pub delta_change: f64,
    pub alpha_change: f64,
    pub z_change: f64,
    pub penalty_weight: f64,
    pub z_inner_iterations: usize,
    /// Largest projected block gradient of `𝓛_ρ`.
    pub stationarity: f64,
}

const TRACE_COLUMNS: &str =
    "iteration,L_rho,primal_residual,delta_change,alpha_change,Z_change,penalty_weight,Z_inner_iterations,stationarity";

fn write_trace_row<W: Write>(out: &mut W, prefix: &str, r: &TraceRecord) -> Result<()> {
    writeln!(
        out,
        "{prefix}{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{:.12e}",
        r.iteration,
        r.l_rho,
        r.primal_residual,
        r.delta_change,
        r.alpha_change,
        r.z_change,
        r.penalty_weight,
        r.z_inner_iterations,
        r.stationarity
    )?;
    Ok(())
}

/// One solve's trace.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut out: W) -> Result<()> {
    writeln!(out, "schema_version,{TRACE_COLUMNS}")?;
    for r in trace {
        write_trace_row(&mut out, &format!("{TRACE_SCHEMA_VERSION},"), r)?;
    }
    Ok(())
}

/// Traces of consecutive receding-horizon steps, with a `step` column.
pub fn write_step_traces_csv<W: Write>(traces: &[Vec<TraceRecord>], mut out: W) -> Result<()> {
    writeln!(out, "schema_version,step,{TRACE_COLUMNS}")?;
    for (step, trace) in traces.iter().enumerate() {
        for r in trace {
            write_trace_row(&mut out, &format!("{TRACE_SCHEMA_VERSION},{step},"), r)?;
        }
    }
    Ok(())
}

/// Everything one MPC step's solve reads.
#[derive(Debug, Clone, Copy)]
pub struct AdmmProblem<'a> {
    pub bd: &'a BlockDynamics,
    pub model: &'a ModelParams,
    pub objective: &'a Objective,
    pub predictor: &'a dyn Predictor,
    pub buffer: &'a ObservationBuffer,
}

impl AdmmProblem<'_> {
    fn horizon(&self) -> usize {
        self.bd.horizon
    }

    fn control_box(&self, steer: bool) -> (DVector<f64>, DVector<f64>) {
        let b = if steer { self.model.steer } else { self.model.accel };
        (DVector::from_element(self.horizon(), b.min), DVector::from_element(self.horizon(), b.max))
    }

    /// Penalty target in `d` units for each vehicle.
    fn margin_d(&self, config: &AdmmConfig, i: usize) -> f64 {
        let c = self.objective.geometry.clearance(i);
        (c + config.safety_margin).powi(2) - c * c
    }
}

fn block_qp(
    u_k: &DVector<f64>,
    m: &DMatrix<f64>,
    quad: crate::objective::Quadratic,
    mu: &DVector<f64>,
    c: &DVector<f64>,
    rho: f64,
    bounds: (DVector<f64>, DVector<f64>),
) -> Result<DVector<f64>> {
    let h = quad.hessian + m.tr_mul(m) * rho;
    let g = quad.linear + m.tr_mul(mu) - m.tr_mul(c) * rho;
    let cap = 10 * u_k.len().max(1);
    solve_box_qp(&h, &g, &bounds.0, &bounds.1, u_k, cap)
}

/// Steering block: `Φ₁(Δ) + μᵀAΔ + (ρ/2)‖AΔ − c_Δ‖²` over the steering box
/// with `c_Δ = AΔᵏ − F(Δᵏ, αᵏ, Zᵏ)`.
pub fn update_delta(iter: &AdmmIterate, p: &AdmmProblem, config: &AdmmConfig) -> Result<DVector<f64>> {
    let bd = p.bd;
    let c = -(&bd.b * &iter.alpha + &bd.c * &iter.z + &bd.d);
    let w = &p.objective.weights;
    let quad = rate_cost_quadratic(p.horizon(), p.objective.prev_control.delta, w.lambda_delta, w.lambda_ddelta);
    block_qp(&iter.delta, &bd.a, quad, &iter.mu, &c, config.rho, p.control_box(true))
}

/// Acceleration block, with `c_α = Bαᵏ − F(Δᵏ⁺¹, αᵏ, Zᵏ)`; `iter.delta`
/// must already hold `Δᵏ⁺¹`.
pub fn update_alpha(iter: &AdmmIterate, p: &AdmmProblem, config: &AdmmConfig) -> Result<DVector<f64>> {
    let bd = p.bd;
    let c = -(&bd.a * &iter.delta + &bd.c * &iter.z + &bd.d);
    let w = &p.objective.weights;
    let quad = rate_cost_quadratic(p.horizon(), p.objective.prev_control.a, w.lambda_a, w.lambda_da);
    block_qp(&iter.alpha, &bd.b, quad, &iter.mu, &c, config.rho, p.control_box(false))
}

#[derive(Debug, Clone)]
pub struct ZUpdate {
    pub z: DVector<f64>,
    /// Subproblem objective at `z` (at the final penalty weight).
    pub value: f64,
    /// Projected-gradient norm of the subproblem objective at `z`.
    pub pg_norm: f64,
    pub penalty_weight: f64,
    pub min_safety: f64,
    pub inner_iterations: usize,
}

/// The `Z` subproblem as a value/gradient oracle.
struct ZObjective<'a> {
    p: &'a AdmmProblem<'a>,
    config: &'a AdmmConfig,
    quad_h: DMatrix<f64>,
    quad_g: DVector<f64>,
}

impl<'a> ZObjective<'a> {
    /// `c_Z = CZᵏ − F(Δᵏ⁺¹, αᵏ⁺¹, Zᵏ)`; `iter` must hold the fresh `Δ`, `α`.
    fn new(iter: &AdmmIterate, p: &'a AdmmProblem<'a>, config: &'a AdmmConfig) -> Self {
        let bd = p.bd;
        let rho = config.rho;
        let c_z = -(&bd.a * &iter.delta + &bd.b * &iter.alpha + &bd.d);
        let q3 = phi3_quadratic(bd.state_len(), &p.objective.refs, &p.objective.weights);
        let beta = config.z_prox;
        let n = bd.state_len();
        Self {
            quad_h: q3.hessian + bd.c.tr_mul(&bd.c) * rho + DMatrix::identity(n, n) * beta,
            quad_g: q3.linear + bd.c.tr_mul(&iter.mu) - bd.c.tr_mul(&c_z) * rho - &iter.z * beta,
            p,
            config,
        }
    }

    fn eval(&self, z: &DVector<f64>, penalty: Option<f64>) -> Result<(f64, DVector<f64>)> {
        let hz = &self.quad_h * z;
        let mut value = 0.5 * z.dot(&hz) + self.quad_g.dot(z);
        let mut grad = hz + &self.quad_g;
        let p = self.p;
        let geometry = &p.objective.geometry;
        match penalty {
            None => {
                if p.objective.weights.lambda_s.iter().any(|l| *l != 0.0) {
                    let tape = record_rollout(p.predictor, p.buffer, z, p.horizon(), true)?;
                    let ls = &p.objective.weights.lambda_s;
                    let (v, g) = safety_functional(z, &tape, geometry, |tau, _, d| (-ls[tau] * d, -ls[tau]));
                    value += v;
                    grad += g;
                }
            }
            Some(w) => {
                let tape = record_rollout(p.predictor, p.buffer, z, p.horizon(), true)?;
                let n = tape.positions.first().map(Vec::len).unwrap_or(0);
                let margins: Vec<f64> = (0..n).map(|i| p.margin_d(self.config, i)).collect();
                let (v, g) = safety_functional(z, &tape, geometry, |_, i, d| {
                    let gap = margins[i] - d;
                    if gap > 0.0 {
                        (w * gap * gap, -2.0 * w * gap)
                    } else {
                        (0.0, 0.0)
                    }
                });
                value += v;
                grad += g;
            }
        }
        Ok((value, grad))
    }
}

fn lbfgs_options(config: &AdmmConfig, grad_tol: f64) -> lbfgs::LbfgsOptions {
    lbfgs::LbfgsOptions {
        memory: config.lbfgs_memory,
        max_iter: config.z_max_iter,
        grad_tol: grad_tol.max(config.z_grad_tol),
        ..lbfgs::LbfgsOptions::default()
    }
}

fn rollout_min_safety(p: &AdmmProblem, z: &DVector<f64>) -> Result<f64> {
    let tape = record_rollout(p.predictor, p.buffer, z, p.horizon(), false)?;
    Ok(min_safety(z, &tape.positions, &p.objective.geometry))
}

/// State block, solved to `config.z_grad_tol`. `penalty_weight` is the
/// hard-mode weight carried across iterations of one solve; it is ignored in
/// soft mode.
pub fn update_z(
    iter: &AdmmIterate,
    p: &AdmmProblem,
    config: &AdmmConfig,
    penalty_weight: &mut f64,
) -> Result<ZUpdate> {
    update_z_to(iter, p, config, penalty_weight, config.z_grad_tol)
}

fn update_z_to(
    iter: &AdmmIterate,
    p: &AdmmProblem,
    config: &AdmmConfig,
    penalty_weight: &mut f64,
    grad_tol: f64,
) -> Result<ZUpdate> {
    let zobj = ZObjective::new(iter, p, config);
    let (lo, hi) = p.model.state_box();
    let opts = lbfgs_options(config, grad_tol);
    match config.mode {
        ConstraintMode::SoftLagrangian => {
            let r = lbfgs::minimize_box(|z| zobj.eval(z, None), &iter.z, &lo, &hi, Some(&zobj.quad_h), &opts)?;
            Ok(ZUpdate {
                min_safety: rollout_min_safety(p, &r.x)?,
                z: r.x,
                value: r.value,
                pg_norm: r.pg_norm,
                penalty_weight: 0.0,
                inner_iterations: r.iterations,
            })
        }
        ConstraintMode::HardConstraint => {
            if *penalty_weight <= 0.0 {
                *penalty_weight = config.penalty_start;
            }
            let mut current = iter.z.clone();
            let mut inner = 0;
            for doubling in 0..=config.penalty_doublings {
                let w = *penalty_weight;
                let (v_cur, _) = zobj.eval(&current, Some(w))?;
                let (v_in, _) = zobj.eval(&iter.z, Some(w))?;
                let start = if v_in < v_cur { iter.z.clone() } else { current };
                let r = lbfgs::minimize_box(|z| zobj.eval(z, Some(w)), &start, &lo, &hi, Some(&zobj.quad_h), &opts)?;
                inner += r.iterations;
                let m = rollout_min_safety(p, &r.x)?;
                if m > 0.0 {
                    return Ok(ZUpdate {
                        z: r.x,
                        value: r.value,
                        pg_norm: r.pg_norm,
                        penalty_weight: w,
                        min_safety: m,
                        inner_iterations: inner,
                    });
                }
                current = r.x;
                if doubling < config.penalty_doublings {
                    *penalty_weight *= 2.0;
                }
            }
            Err(Error::SafetyInfeasible {
                min_distance: rollout_min_safety(p, &current)?,
            })
        }
    }
}

/// `μ + ρF`.
pub fn dual_update(mu: &DVector<f64>, f: &DVector<f64>, rho: f64) -> DVector<f64> {
    mu + f * rho
}

/// Projected block-gradient norms of `𝓛_ρ` at an iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub delta: f64,
    pub alpha: f64,
    pub z: f64,
}

impl Stationarity {
    pub fn max(&self) -> f64 {
        self.delta.max(self.alpha).max(self.z)
    }
}

/// The objective in `𝓛_ρ` is the relaxed `J` in soft mode and the tracking
/// cost plus the exterior penalty at `penalty_weight` in hard mode.
pub fn stationarity(
    iter: &AdmmIterate,
    p: &AdmmProblem,
    config: &AdmmConfig,
    penalty_weight: f64,
) -> Result<Stationarity> {
    Ok(lagrangian_and_stationarity(iter, p, config, penalty_weight)?.1)
}

fn lagrangian_and_stationarity(
    iter: &AdmmIterate,
    p: &AdmmProblem,
    config: &AdmmConfig,
    penalty_weight: f64,
) -> Result<(f64, Stationarity)> {
    let bd = p.bd;
    let obj = p.objective;
    let rho = config.rho;
    let f = bd.evaluate_f(&iter.delta, &iter.alpha, &iter.z)?;
    let w = &iter.mu + &f * rho;
    let g_delta = phi1_gradient(&iter.delta, obj.prev_control.delta, &obj.weights) + bd.a.tr_mul(&w);
    let g_alpha = phi2_gradient(&iter.alpha, obj.prev_control.a, &obj.weights) + bd.b.tr_mul(&w);

    let zobj = ZObjective::new(iter, p, config);
    let penalty = match config.mode {
        ConstraintMode::SoftLagrangian => None,
        ConstraintMode::HardConstraint => Some(penalty_weight),
    };
    // the Z subproblem differs from 𝓛_ρ in Z only by a constant
    let (vz, _) = zobj.eval(&iter.z, penalty)?;
    let quad_only = {
        let hz = &zobj.quad_h * &iter.z;
        0.5 * iter.z.dot(&hz) + zobj.quad_g.dot(&iter.z)
    };
    let safety_part = vz - quad_only;
    let g_z = {
        let (_, g) = zobj.eval(&iter.z, penalty)?;
        let hz = &zobj.quad_h * &iter.z + &zobj.quad_g;
        g - hz + phi3_gradient(&iter.z, &obj.refs, &obj.weights) + bd.c.tr_mul(&w)
    };

    let (dlo, dhi) = p.control_box(true);
    let (alo, ahi) = p.control_box(false);
    let (zlo, zhi) = p.model.state_box();
    let value = obj.tracking_cost(&iter.delta, &iter.alpha, &iter.z)
        + safety_part
        + iter.mu.dot(&f)
        + 0.5 * rho * f.norm_squared();
    Ok((
        value,
        Stationarity {
            delta: projected_gradient_norm(&iter.delta, &g_delta, &dlo, &dhi),
            alpha: projected_gradient_norm(&iter.alpha, &g_alpha, &alo, &ahi),
            z: projected_gradient_norm(&iter.z, &g_z, &zlo, &zhi),
        },
    ))
}

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub iterate: AdmmIterate,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    /// First iteration at which `‖F‖ ≤ eps_primal`.
    pub first_feasible_iteration: Option<usize>,
    pub stationarity: Stationarity,
    pub penalty_weight: f64,
    pub min_safety: f64,
}

/// Runs the inner loop from `initial` until `‖F‖ ≤ eps_primal`, the max-norm
/// iterate change is `≤ eps_change` and, when configured, every projected
/// block gradient of `𝓛_ρ` is `≤ eps_stationarity`.
pub fn solve(initial: &AdmmIterate, p: &AdmmProblem, config: &AdmmConfig) -> Result<AdmmSolution> {
    config.validate()?;
    let bd = p.bd;
    let mut it = initial.clone();
    it.iteration = 0;
    let mut trace = Vec::new();
    let mut penalty_weight = 0.0;
    let mut first_feasible = None;
    let mut last_z: Option<ZUpdate> = None;
    let mut z_tol = if config.z_inexact > 0.0 { 1e-2 } else { 0.0 };

    let fail = |iteration: usize, e: Error, trace: &Vec<TraceRecord>| Error::Admm {
        iteration,
        source: Box::new(e),
        trace: trace.clone(),
    };

    for k in 1..=config.max_iter {
        let prev = it.clone();
        it.delta = update_delta(&it, p, config).map_err(|e| fail(k, e, &trace))?;
        it.alpha = update_alpha(&it, p, config).map_err(|e| fail(k, e, &trace))?;
        let zu = update_z_to(&it, p, config, &mut penalty_weight, z_tol).map_err(|e| fail(k, e, &trace))?;
        it.z = zu.z.clone();
        let z_inner = zu.inner_iterations;
        last_z = Some(zu);
        let f = bd.f_unchecked(&it.delta, &it.alpha, &it.z);
        it.mu = dual_update(&it.mu, &f, config.rho);
        it.primal_residual = f.norm();
        let dd = (&it.delta - &prev.delta).amax();
        let da = (&it.alpha - &prev.alpha).amax();
        let dz = (&it.z - &prev.z).amax();
        it.iterate_change = dd.max(da).max(dz);
        it.iteration = k;

        let (l_rho, st) =
            lagrangian_and_stationarity(&it, p, config, penalty_weight).map_err(|e| fail(k, e, &trace))?;
        trace.push(TraceRecord {
            iteration: k,
            l_rho,
            primal_residual: it.primal_residual,
            delta_change: dd,
            alpha_change: da,
            z_change: dz,
            penalty_weight,
            z_inner_iterations: z_inner,
            stationarity: st.max(),
        });
        if first_feasible.is_none() && it.primal_residual <= config.eps_primal {
            first_feasible = Some(k);
        }
        z_tol = (config.z_inexact * st.max()).min(1e-2);
        let stationary = config.eps_stationarity.is_none_or(|e| st.max() <= e);
        if it.primal_residual <= config.eps_primal && it.iterate_change <= config.eps_change && stationary {
            log::debug!("ADMM converged after {k} iterations (|F| = {:.2e})", it.primal_residual);
            return Ok(AdmmSolution {
                min_safety: last_z.as_ref().map(|z| z.min_safety).unwrap_or(f64::INFINITY),
                iterate: it,
                trace,
                converged: true,
                first_feasible_iteration: first_feasible,
                stationarity: st,
                penalty_weight,
            });
        }
    }

    let st = lagrangian_and_stationarity(&it, p, config, penalty_weight)?.1;
    log::info!(
        "ADMM hit max_iter = {} (|F| = {:.2e}, stationarity = {:.2e})",
        config.max_iter,
        it.primal_residual,
        st.max()
    );
    Ok(AdmmSolution {
        min_safety: last_z.as_ref().map(|z| z.min_safety).unwrap_or(f64::INFINITY),
        iterate: it,
        trace,
        converged: false,
        first_feasible_iteration: first_feasible,
        stationarity: st,
        penalty_weight,
    })
}
