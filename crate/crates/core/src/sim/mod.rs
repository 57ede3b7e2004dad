//! Receding-horizon merge simulation.
//!
//! Each step linearizes the bicycle model about the last applied control and
//! the current state, plans over the horizon, applies the first control
//! through the nonlinear model and advances the surrounding vehicles by one
//! step of the world predictor on the true observation history.

mod config;
mod log;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmIterate, AdmmProblem, TraceRecord};
use crate::baseline;
use crate::dynamics::{assemble_blocks, linearize, step, ControlInput, EgoState, STATE_DIM};
use crate::error::{Error, Result};
use crate::objective::{distance, Objective, SafetyGeometry};
use crate::predictor::{ObservationBuffer, Predictor};

pub use config::{ScenarioConfig, VehicleInit, BUILTIN_NAMES};
pub use log::{
    Metrics, Outcome, SimLog, SolverStats, StepRecord, Summary, Terminal, SIMLOG_SCHEMA_VERSION,
    SUMMARY_SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Admm,
    Baseline,
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerKind::Admm => "admm",
            PlannerKind::Baseline => "baseline",
        })
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admm" => Ok(PlannerKind::Admm),
            "baseline" => Ok(PlannerKind::Baseline),
            other => Err(Error::InvalidParameter(format!("unknown planner {other:?} (admm|baseline)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep each step's ADMM trace.
    pub keep_traces: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: SimLog,
    pub outcome: Outcome,
    /// Per-step ADMM traces (empty unless requested or for the baseline).
    pub traces: Vec<Vec<TraceRecord>>,
    /// Planning wall time per step, in seconds. Not part of the log.
    pub plan_seconds: Vec<f64>,
}

impl RunOutput {
    pub fn summary(&self, scenario: &str, planner: PlannerKind) -> Result<Summary> {
        Ok(Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            scenario: scenario.to_string(),
            planner: planner.to_string(),
            outcome: self.outcome,
            steps: self.log.records.len(),
            metrics: self.log.metrics()?,
            fallback_steps: self.log.records.iter().filter(|r| r.fallback).count(),
            max_admm_iterations: self.log.records.iter().filter_map(|r| r.solver.map(|s| s.iterations)).max(),
        })
    }
}

/// `min_i ‖p − p_i‖ − (r + r_i)`.
pub fn clearance_margin(ego: [f64; 2], vehicles: &[[f64; 2]], g: &SafetyGeometry) -> f64 {
    vehicles
        .iter()
        .enumerate()
        .map(|(i, p)| ((ego[0] - p[0]).powi(2) + (ego[1] - p[1]).powi(2)).sqrt() - (g.r + g.r_i[i]))
        .fold(f64::INFINITY, f64::min)
}

fn collided(ego: [f64; 2], vehicles: &[[f64; 2]], g: &SafetyGeometry) -> bool {
    vehicles.iter().enumerate().any(|(i, p)| distance(ego, *p, g, i) <= 0.0)
}

/// Constant-velocity history ending at the initial positions.
fn initial_buffer(cfg: &ScenarioConfig, depth: usize) -> Result<ObservationBuffer> {
    let dt = cfg.model.dt;
    let e = &cfg.ego;
    let rows = (0..depth)
        .map(|r| {
            let back = r as f64 * dt;
            let mut row = vec![[e.x - back * e.v * e.psi.cos(), e.y - back * e.v * e.psi.sin()]];
            row.extend(cfg.vehicles.iter().map(|v| [v.x - back * v.v, v.y]));
            row
        })
        .collect();
    ObservationBuffer::from_rows(rows)
}

/// A plan's controls and states, consumed one step per executed step when
/// the planner fails.
#[derive(Debug, Clone)]
struct Plan {
    delta: DVector<f64>,
    alpha: DVector<f64>,
    z: DVector<f64>,
    next: usize,
}

impl Plan {
    fn control(&self) -> ControlInput {
        let k = self.next.min(self.delta.len() - 1);
        ControlInput::new(self.delta[k], self.alpha[k])
    }
}

struct Planned {
    control: ControlInput,
    cost: f64,
    solver: Option<SolverStats>,
    fallback: bool,
    plan: Option<Plan>,
    trace: Vec<TraceRecord>,
}

pub fn run(cfg: &ScenarioConfig, planner: PlannerKind) -> Result<RunOutput> {
    run_with(cfg, planner, RunOptions::default())
}

pub fn run_with(cfg: &ScenarioConfig, planner: PlannerKind, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let model = &cfg.model;
    let plan_pred = cfg.predictor.build().map_err(|e| Error::Config(e.to_string()))?;
    let world_pred = cfg.world_predictor().build().map_err(|e| Error::Config(e.to_string()))?;
    if plan_pred.history_depth() != world_pred.history_depth() {
        return Err(Error::Config("planner and world predictors must read the same history depth".into()));
    }
    let mut buffer = initial_buffer(cfg, plan_pred.history_depth())?;
    let n = cfg.vehicles.len();
    let g = &cfg.geometry;

    let mut state = cfg.ego;
    let mut prev_control = ControlInput::default();
    let mut vehicles: Vec<[f64; 2]> = cfg.vehicles.iter().map(|v| [v.x, v.y]).collect();
    let mut last_plan: Option<Plan> = None;
    let mut warm: Option<AdmmIterate> = None;
    let mut log = SimLog::new(n);
    let mut traces = Vec::new();
    let mut plan_seconds = Vec::new();

    let merged = |s: &EgoState| (s.y - cfg.refs.y_ref).abs() <= cfg.merge_tol_y && s.psi.abs() <= cfg.merge_tol_psi;

    let outcome = loop {
        let t = log.records.len();
        // a merge only counts strictly before x_ref
        if state.x >= cfg.refs.x_ref {
            break Outcome::Failed { step: t };
        }
        if merged(&state) {
            break Outcome::Merged { t_merge: t };
        }
        if t >= cfg.max_sim_steps {
            break Outcome::StepLimit { step: t };
        }

        let objective = Objective {
            weights: cfg.weights.clone(),
            refs: cfg.refs,
            geometry: g.clone(),
            prev_control,
        };
        let started = Instant::now();
        let planned = match planner {
            PlannerKind::Admm => plan_admm(cfg, &state, &objective, plan_pred.as_ref(), &buffer, &mut warm)?,
            PlannerKind::Baseline => plan_baseline(cfg, &state, &objective, plan_pred.as_ref(), &buffer)?,
        };
        plan_seconds.push(started.elapsed().as_secs_f64());
        let fallback = planned.fallback;
        let (control, cost) = match (&planned.plan, &mut last_plan) {
            (Some(_), _) => (planned.control, planned.cost),
            (None, Some(prev)) => {
                prev.next += 1;
                let u = prev.control();
                (u, objective.tracking_cost(&prev.delta, &prev.alpha, &prev.z))
            }
            (None, None) => (planned.control, planned.cost),
        };
        if fallback {
            ::log::warn!("step {t}: applying fallback control {control:?}");
        }
        if let Some(p) = planned.plan {
            last_plan = Some(p);
        }
        if opts.keep_traces {
            traces.push(planned.trace);
        }

        log.records.push(StepRecord {
            t,
            state,
            vehicles: vehicles.clone(),
            control,
            plan_cost: cost,
            min_distance: clearance_margin([state.x, state.y], &vehicles, g),
            solver: planned.solver,
            fallback,
        });

        state = step(&state, &control, model)?;
        prev_control = control;
        vehicles = world_pred.predict_one(&buffer)?.positions;
        let mut row = vec![[state.x, state.y]];
        row.extend(vehicles.iter().copied());
        buffer.push(row)?;
        ::log::debug!("step {t}: x = {:.3}, y = {:.3}, psi = {:.4}, v = {:.3}", state.x, state.y, state.psi, state.v);

        if collided([state.x, state.y], &vehicles, g) {
            break Outcome::Collision { step: t + 1 };
        }
    };

    log.terminal = Some(Terminal {
        t: log.records.len(),
        state,
        min_distance: clearance_margin([state.x, state.y], &vehicles, g),
        vehicles,
        outcome,
    });
    ::log::info!("{planner} run finished: {outcome:?}");
    Ok(RunOutput {
        log,
        outcome,
        traces,
        plan_seconds,
    })
}

fn plan_admm(
    cfg: &ScenarioConfig,
    state: &EgoState,
    objective: &Objective,
    predictor: &dyn Predictor,
    buffer: &ObservationBuffer,
    warm: &mut Option<AdmmIterate>,
) -> Result<Planned> {
    let model = &cfg.model;
    let lin = linearize(&objective.prev_control, state, model)?;
    let bd = assemble_blocks(&lin, state, model)?;
    let initial = match warm.as_ref() {
        Some(w) => w.shifted(&bd, model)?,
        None => AdmmIterate::cold(&bd, model)?,
    };
    let problem = AdmmProblem {
        bd: &bd,
        model,
        objective,
        predictor,
        buffer,
    };
    match admm::solve(&initial, &problem, &cfg.admm) {
        Ok(sol) => {
            let it = &sol.iterate;
            let cost = objective.tracking_cost(&it.delta, &it.alpha, &it.z);
            let planned = Planned {
                control: ControlInput::new(it.delta[0], it.alpha[0]),
                cost,
                solver: Some(SolverStats {
                    iterations: it.iteration,
                    converged: sol.converged,
                    primal_residual: it.primal_residual,
                    first_feasible: sol.first_feasible_iteration,
                    stationarity: sol.stationarity.max(),
                }),
                fallback: false,
                plan: Some(Plan {
                    delta: it.delta.clone(),
                    alpha: it.alpha.clone(),
                    z: it.z.clone(),
                    next: 0,
                }),
                trace: sol.trace,
            };
            *warm = Some(sol.iterate);
            Ok(planned)
        }
        Err(Error::Admm { iteration, source, trace }) => {
            ::log::warn!("ADMM failed at iteration {iteration}: {source}");
            *warm = None;
            // coasting plan, used only when there is no earlier plan to reuse
            let z = DVector::from_fn(STATE_DIM * model.horizon, |i, _| state.as_array()[i % STATE_DIM]);
            let zeros = DVector::zeros(model.horizon);
            Ok(Planned {
                control: ControlInput::default(),
                cost: objective.tracking_cost(&zeros, &zeros, &z),
                fallback: true,
                solver: Some(SolverStats {
                    iterations: iteration,
                    converged: false,
                    primal_residual: f64::NAN,
                    first_feasible: None,
                    stationarity: f64::NAN,
                }),
                plan: None,
                trace,
            })
        }
        Err(e) => Err(e),
    }
}

fn plan_baseline(
    cfg: &ScenarioConfig,
    state: &EgoState,
    objective: &Objective,
    predictor: &dyn Predictor,
    buffer: &ObservationBuffer,
) -> Result<Planned> {
    let (set, sel) = baseline::plan(state, objective, &cfg.model, &cfg.baseline, predictor, buffer)?;
    let c = &set.candidates[sel.index];
    if sel.unsafe_fallback {
        ::log::warn!("no safe candidate; keeping lane");
    }
    Ok(Planned {
        control: ControlInput::new(c.delta[0], c.alpha[0]),
        cost: set.costs[sel.index],
        solver: None,
        fallback: sel.unsafe_fallback,
        plan: Some(Plan {
            delta: c.delta.clone(),
            alpha: c.alpha.clone(),
            z: c.z.clone(),
            next: 0,
        }),
        trace: Vec::new(),
    })
}

/// Penalty certificate for the scenario's first planning step.
pub fn certify(cfg: &ScenarioConfig, samples: usize, seed: u64) -> Result<admm::RhoCertificate> {
    cfg.validate()?;
    let predictor = cfg.predictor.build().map_err(|e| Error::Config(e.to_string()))?;
    let buffer = initial_buffer(cfg, predictor.history_depth())?;
    let objective = Objective {
        weights: cfg.weights.clone(),
        refs: cfg.refs,
        geometry: cfg.geometry.clone(),
        prev_control: ControlInput::default(),
    };
    let lin = linearize(&objective.prev_control, &cfg.ego, &cfg.model)?;
    let bd = assemble_blocks(&lin, &cfg.ego, &cfg.model)?;
    let problem = AdmmProblem {
        bd: &bd,
        model: &cfg.model,
        objective: &objective,
        predictor: predictor.as_ref(),
        buffer: &buffer,
    };
    admm::rho_certificate(&problem, cfg.admm.rho, samples, seed)
}
