//! C ABI for the lane-merge planner.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `_free` function. Every fallible call returns an [`AnStatus`]
//! and, on failure, records a message readable through [`an_last_error`] on
//! the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use admm_nnmpc::dynamics::{self, ControlInput, EgoState, ModelParams};
use admm_nnmpc::sim::{self, Outcome, PlannerKind, RunOutput, ScenarioConfig};
use admm_nnmpc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    InvalidArgument = 3,
    Solver = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnPlanner {
    Admm = 0,
    Baseline = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnOutcome {
    Merged = 0,
    Failed = 1,
    Collision = 2,
    StepLimit = 3,
}

/// Ego state `(x, y, ψ, v)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnControl {
    pub delta: f64,
    pub a: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnMetrics {
    pub outcome: AnOutcome,
    /// Step at which the outcome was decided.
    pub outcome_step: usize,
    /// Merge step, or −1 when the run did not merge.
    pub t_merge: i64,
    pub c_max: f64,
    pub d_min: f64,
    pub steps: usize,
    pub fallback_steps: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnCertificate {
    pub sigma_min_c: f64,
    pub l_j: f64,
    pub m: f64,
    pub bound: f64,
    pub rho_used: f64,
    pub satisfied: bool,
}

/// Opaque scenario handle.
pub struct AnScenario(ScenarioConfig);

/// Opaque result of one simulated run.
pub struct AnRunResult(RunOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AnStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::WeightsFormat(_) => AnStatus::Config,
        Error::Io(_) => AnStatus::Io,
        Error::InvalidParameter(_) | Error::NonFinite(_) | Error::DimensionMismatch { .. } => AnStatus::InvalidArgument,
        _ => AnStatus::Solver,
    }
}

/// Runs `f`, converting errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), (AnStatus, String)>) -> AnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (AnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(what: &str) -> (AnStatus, String) {
    (AnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AnStatus, String)> {
    if p.is_null() {
        return Err(null_err(what));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (AnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn an_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn an_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn an_scenario_from_json(json: *const c_char, out: *mut *mut AnScenario) -> AnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let text = unsafe { read_str(json, "json") }?;
        let cfg = ScenarioConfig::from_json(text).map_err(lib_err)?;
        unsafe { *out = Box::into_raw(Box::new(AnScenario(cfg))) };
        Ok(())
    })
}

/// Loads a builtin scenario (`two_lane` or `three_lane`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn an_scenario_builtin(name: *const c_char, out: *mut *mut AnScenario) -> AnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let name = unsafe { read_str(name, "name") }?;
        let cfg = ScenarioConfig::builtin(name).map_err(lib_err)?;
        unsafe { *out = Box::into_raw(Box::new(AnScenario(cfg))) };
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from an `an_scenario_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn an_scenario_free(scenario: *mut AnScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Closed-loop simulation of one planner on a scenario.
///
/// # Safety
/// `scenario` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn an_run(scenario: *const AnScenario, planner: AnPlanner, out: *mut *mut AnRunResult) -> AnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let cfg = unsafe { scenario.as_ref() }.ok_or_else(|| null_err("scenario"))?;
        let kind = match planner {
            AnPlanner::Admm => PlannerKind::Admm,
            AnPlanner::Baseline => PlannerKind::Baseline,
        };
        let result = sim::run(&cfg.0, kind).map_err(lib_err)?;
        unsafe { *out = Box::into_raw(Box::new(AnRunResult(result))) };
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`an_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn an_run_result_free(result: *mut AnRunResult) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// # Safety
/// `result` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn an_run_metrics(result: *const AnRunResult, out: *mut AnMetrics) -> AnStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null_err("result"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let m = r.0.log.metrics().map_err(lib_err)?;
        let outcome = match r.0.outcome {
            Outcome::Merged { .. } => AnOutcome::Merged,
            Outcome::Failed { .. } => AnOutcome::Failed,
            Outcome::Collision { .. } => AnOutcome::Collision,
            Outcome::StepLimit { .. } => AnOutcome::StepLimit,
        };
        let metrics = AnMetrics {
            outcome,
            outcome_step: r.0.outcome.step(),
            t_merge: m.t_merge.map_or(-1, |t| t as i64),
            c_max: m.c_max,
            d_min: m.d_min,
            steps: r.0.log.records.len(),
            fallback_steps: r.0.log.records.iter().filter(|s| s.fallback).count(),
        };
        unsafe { *out = metrics };
        Ok(())
    })
}

/// The run's sim log as CSV. Free the string with [`an_string_free`].
///
/// # Safety
/// `result` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn an_run_simlog_csv(result: *const AnRunResult, out: *mut *mut c_char) -> AnStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null_err("result"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let csv = CString::new(r.0.log.to_csv_string()).map_err(|e| (AnStatus::Solver, e.to_string()))?;
        unsafe { *out = csv.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn an_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// One step of the bicycle model with the default parameters.
///
/// # Safety
/// All pointers must be valid; `out` may alias `state`.
#[no_mangle]
pub unsafe extern "C" fn an_bicycle_step(state: *const AnState, control: *const AnControl, out: *mut AnState) -> AnStatus {
    guard(|| {
        let s = unsafe { state.as_ref() }.ok_or_else(|| null_err("state"))?;
        let u = unsafe { control.as_ref() }.ok_or_else(|| null_err("control"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let next = dynamics::step(
            &EgoState::new(s.x, s.y, s.psi, s.v),
            &ControlInput::new(u.delta, u.a),
            &ModelParams::default(),
        )
        .map_err(lib_err)?;
        unsafe {
            *out = AnState {
                x: next.x,
                y: next.y,
                psi: next.psi,
                v: next.v,
            }
        };
        Ok(())
    })
}

/// Penalty certificate for the scenario's first planning step.
///
/// # Safety
/// `scenario` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn an_certify(scenario: *const AnScenario, samples: usize, seed: u64, out: *mut AnCertificate) -> AnStatus {
    guard(|| {
        let cfg = unsafe { scenario.as_ref() }.ok_or_else(|| null_err("scenario"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        let c = sim::certify(&cfg.0, samples, seed).map_err(lib_err)?;
        unsafe {
            *out = AnCertificate {
                sigma_min_c: c.sigma_min_c,
                l_j: c.l_j,
                m: c.m,
                bound: c.bound,
                rho_used: c.rho_used,
                satisfied: c.satisfied,
            }
        };
        Ok(())
    })
}
