//! Candidate-curve comparison planner.
//!
//! Each candidate is a quintic lateral profile from the current `y` and
//! lateral rate to `y_ref` over a fixed number of steps, paired with a smooth speed change to
//! a terminal speed. Controls are recovered step by step by inverting the
//! bicycle kinematics against the nonlinearly simulated state, then clamped,
//! so every candidate's `Z` is an exact rollout of its own controls. A
//! keep-lane candidate is always present. Candidates are scored with the same
//! tracking cost the ADMM planner minimizes, and safety is judged on the
//! predictor rollout conditioned on each candidate.

use std::thread;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_unchecked, ControlInput, EgoState, ModelParams, STATE_DIM};
use crate::error::{Error, Result};
use crate::objective::{min_safety, Objective, References};
use crate::predictor::{rollout, ObservationBuffer, Predictor};

/// Lane-change durations (steps) crossed with terminal speed offsets from
/// `v_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateGrid {
    pub durations: Vec<usize>,
    pub speed_offsets: Vec<f64>,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        Self {
            durations: vec![4, 6, 8],
            speed_offsets: vec![-2.0, 0.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateKind {
    LaneChange { duration: usize, terminal_speed: f64 },
    KeepLane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub kind: CandidateKind,
    pub delta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub z: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub costs: Vec<f64>,
    pub safety_flags: Vec<bool>,
    /// Smallest `d_i(τ)` along each candidate's rollout.
    pub min_safety: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    /// No candidate was safe and the keep-lane candidate was returned.
    pub unsafe_fallback: bool,
}

/// `10u³ − 15u⁴ + 6u⁵`: zero first and second derivatives at both ends.
fn quintic(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Quintic from `y0` with rate `rate0` and zero curvature to `y1` with zero
/// rate and curvature, reached after `n` steps of length `dt`.
fn lateral_profile(y0: f64, rate0: f64, y1: f64, n: usize, dt: f64) -> impl Fn(usize) -> f64 {
    let a1 = rate0 * n as f64 * dt;
    let d = y1 - y0;
    let (c3, c4, c5) = (10.0 * d - 6.0 * a1, -15.0 * d + 8.0 * a1, 6.0 * d - 3.0 * a1);
    move |t| {
        let u = (t as f64 / n as f64).min(1.0);
        y0 + a1 * u + u * u * u * (c3 + u * (c4 + u * c5))
    }
}

/// Follows `(y_des(τ), v_des(τ))` for `τ = 1..=Tp` by inverse
/// kinematics and returns the clamped controls and the nonlinear rollout.
fn track(
    z0: &EgoState,
    p: &ModelParams,
    kind: CandidateKind,
    y_des: impl Fn(usize) -> f64,
    v_des: impl Fn(usize) -> f64,
) -> Candidate {
    let tp = p.horizon;
    let k = p.slip_ratio();
    let beta_max = (k * p.steer.max.min(-p.steer.min).tan()).atan();
    let [_, y_box, psi_box, v_box] = p.state;
    let mut delta = DVector::zeros(tp);
    let mut alpha = DVector::zeros(tp);
    let mut z = DVector::zeros(STATE_DIM * tp);
    let mut s = *z0;
    for t in 0..tp {
        let v_next = v_box.clamp(v_des(t + 1));
        let a = p.accel.clamp((v_next - s.v) / p.dt);

        // slip angle whose step leaves a heading that points from the next
        // state at the target one step further on (two-step lookahead)
        let gain = p.dt * s.v / p.lr;
        let sin_lo = ((psi_box.min - s.psi) / gain).clamp(-1.0, 1.0).max(-beta_max.sin());
        let sin_hi = ((psi_box.max - s.psi) / gain).clamp(-1.0, 1.0).min(beta_max.sin());
        let reach = (p.dt * s.v).max(1e-9);
        let reach_next = (p.dt * v_next).max(1e-9);
        let target = y_box.clamp(y_des(t + 2));
        let mismatch = |sb: f64| {
            let beta = sb.asin();
            let y_next = s.y + reach * (s.psi + beta).sin();
            let psi_next = s.psi + gain * sb;
            psi_next - ((target - y_next) / reach_next).clamp(-0.95, 0.95).asin()
        };
        let (mut lo, mut hi) = (sin_lo, sin_hi);
        if mismatch(lo) >= 0.0 {
            hi = lo;
        } else if mismatch(hi) <= 0.0 {
            lo = hi;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mismatch(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let beta = (0.5 * (lo + hi)).asin();
        let d = p.steer.clamp((beta.tan() / k).atan());

        let u = ControlInput::new(d, a);
        s = step_unchecked(&s, &u, p);
        delta[t] = d;
        alpha[t] = a;
        z.fixed_rows_mut::<4>(STATE_DIM * t).copy_from(&s.to_vector());
    }
    Candidate { kind, delta, alpha, z }
}

/// Lane-change grid plus the keep-lane candidate (last).
pub fn generate_candidates(
    z0: &EgoState,
    refs: &References,
    p: &ModelParams,
    grid: &CandidateGrid,
) -> Result<Vec<Candidate>> {
    p.validate()?;
    if grid.durations.is_empty() || grid.speed_offsets.is_empty() || grid.durations.contains(&0) {
        return Err(Error::InvalidParameter("candidate grid must be nonempty with positive durations".into()));
    }
    let mut out = Vec::with_capacity(grid.durations.len() * grid.speed_offsets.len() + 1);
    for &n in &grid.durations {
        for &off in &grid.speed_offsets {
            let vt = p.state[3].clamp(refs.v_ref + off);
            let kind = CandidateKind::LaneChange {
                duration: n,
                terminal_speed: vt,
            };
            let lateral = lateral_profile(z0.y, z0.v * z0.psi.sin(), refs.y_ref, n, p.dt);
            out.push(track(z0, p, kind, lateral, |t| z0.v + (vt - z0.v) * quintic(t as f64 / n as f64)));
        }
    }
    let v_keep = p.state[3].clamp(refs.v_ref);
    let n = p.horizon;
    out.push(track(
        z0,
        p,
        CandidateKind::KeepLane,
        |_| z0.y,
        |t| z0.v + (v_keep - z0.v) * quintic(t as f64 / n as f64),
    ));
    Ok(out)
}

fn score_one(c: &Candidate, objective: &Objective, predictor: &dyn Predictor, buffer: &ObservationBuffer) -> Result<(f64, f64)> {
    let cost = objective.tracking_cost(&c.delta, &c.alpha, &c.z);
    let r = rollout(predictor, buffer, &c.z, c.delta.len())?;
    Ok((cost, min_safety(&c.z, &r.positions, &objective.geometry)))
}

/// Scores every candidate, in parallel, merging results by index.
pub fn score_candidates(
    candidates: Vec<Candidate>,
    objective: &Objective,
    predictor: &dyn Predictor,
    buffer: &ObservationBuffer,
) -> Result<CandidateSet> {
    let scores: Vec<Result<(f64, f64)>> = thread::scope(|s| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|c| s.spawn(move || score_one(c, objective, predictor, buffer)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("candidate scoring panicked"))
            .collect()
    });
    let mut costs = Vec::with_capacity(scores.len());
    let mut mins = Vec::with_capacity(scores.len());
    for s in scores {
        let (c, m) = s?;
        costs.push(c);
        mins.push(m);
    }
    Ok(CandidateSet {
        safety_flags: mins.iter().map(|m| *m > 0.0).collect(),
        min_safety: mins,
        costs,
        candidates,
    })
}

/// Cheapest safe candidate, ties broken by smaller `‖Δ‖` and then by index.
pub fn select(set: &CandidateSet) -> Result<Selection> {
    if set.candidates.is_empty() {
        return Err(Error::InvalidParameter("empty candidate set".into()));
    }
    let best = (0..set.candidates.len())
        .filter(|&i| set.safety_flags[i])
        .min_by(|&i, &j| {
            set.costs[i]
                .total_cmp(&set.costs[j])
                .then(set.candidates[i].delta.norm().total_cmp(&set.candidates[j].delta.norm()))
                .then(i.cmp(&j))
        });
    match best {
        Some(index) => Ok(Selection {
            index,
            unsafe_fallback: false,
        }),
        None => {
            let index = set
                .candidates
                .iter()
                .position(|c| c.kind == CandidateKind::KeepLane)
                .unwrap_or(set.candidates.len() - 1);
            Ok(Selection {
                index,
                unsafe_fallback: true,
            })
        }
    }
}

/// Generate, score and select in one call.
pub fn plan(
    z0: &EgoState,
    objective: &Objective,
    model: &ModelParams,
    grid: &CandidateGrid,
    predictor: &dyn Predictor,
    buffer: &ObservationBuffer,
) -> Result<(CandidateSet, Selection)> {
    let cands = generate_candidates(z0, &objective.refs, model, grid)?;
    let set = score_candidates(cands, objective, predictor, buffer)?;
    let sel = select(&set)?;
    Ok((set, sel))
}
