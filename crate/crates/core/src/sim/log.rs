use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, EgoState};
use crate::error::{Error, Result};

pub const SIMLOG_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

const FIXED_COLUMNS: [&str; 18] = [
    "schema_version",
    "row",
    "t",
    "x",
    "y",
    "psi",
    "v",
    "delta",
    "a",
    "plan_cost",
    "min_distance",
    "admm_iterations",
    "converged",
    "primal_residual",
    "first_feasible",
    "stationarity",
    "fallback",
    "outcome",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Merged { t_merge: usize },
    /// Reached `x_ref` without merging.
    Failed { step: usize },
    Collision { step: usize },
    StepLimit { step: usize },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Merged { .. } => "merged",
            Outcome::Failed { .. } => "failed",
            Outcome::Collision { .. } => "collision",
            Outcome::StepLimit { .. } => "step_limit",
        }
    }

    pub fn step(&self) -> usize {
        match *self {
            Outcome::Merged { t_merge } => t_merge,
            Outcome::Failed { step } | Outcome::Collision { step } | Outcome::StepLimit { step } => step,
        }
    }

    fn parse(label: &str, step: usize) -> Result<Self> {
        Ok(match label {
            "merged" => Outcome::Merged { t_merge: step },
            "failed" => Outcome::Failed { step },
            "collision" => Outcome::Collision { step },
            "step_limit" => Outcome::StepLimit { step },
            other => return Err(Error::Config(format!("unknown outcome {other:?}"))),
        })
    }
}

/// ADMM diagnostics of one receding-horizon step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub first_feasible: Option<usize>,
    pub stationarity: f64,
}

/// State at the start of step `t` and what was applied during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: EgoState,
    pub vehicles: Vec<[f64; 2]>,
    pub control: ControlInput,
    pub plan_cost: f64,
    /// `min_i ‖p − p_i‖ − (r + r_i)` in meters.
    pub min_distance: f64,
    pub solver: Option<SolverStats>,
    /// The planner produced no usable plan and a fallback control was used.
    pub fallback: bool,
}

/// State after the last executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub t: usize,
    pub state: EgoState,
    pub vehicles: Vec<[f64; 2]>,
    pub min_distance: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub n_vehicles: usize,
    pub records: Vec<StepRecord>,
    pub terminal: Option<Terminal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub t_merge: Option<usize>,
    pub c_max: f64,
    pub d_min: f64,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SimLog {
    pub fn new(n_vehicles: usize) -> Self {
        Self {
            n_vehicles,
            records: Vec::new(),
            terminal: None,
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.terminal.as_ref().map(|t| t.outcome)
    }

    pub fn metrics(&self) -> Result<Metrics> {
        if self.records.is_empty() {
            return Err(Error::EmptyLog);
        }
        let c_max = self.records.iter().map(|r| r.plan_cost).fold(f64::NEG_INFINITY, f64::max);
        let d_min = self
            .records
            .iter()
            .map(|r| r.min_distance)
            .chain(self.terminal.as_ref().map(|t| t.min_distance))
            .fold(f64::INFINITY, f64::min);
        let t_merge = match self.outcome() {
            Some(Outcome::Merged { t_merge }) => Some(t_merge),
            _ => None,
        };
        Ok(Metrics { t_merge, c_max, d_min })
    }

    pub fn header(&self) -> String {
        let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        for i in 1..=self.n_vehicles {
            cols.push(format!("veh{i}_x"));
            cols.push(format!("veh{i}_y"));
        }
        cols.join(",")
    }

    /// One `step` row per executed step followed by one `terminal` row.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        let vehicles = |v: &[[f64; 2]]| v.iter().map(|p| format!(",{},{}", p[0], p[1])).collect::<String>();
        for r in &self.records {
            let s = &r.state;
            let st = r.solver;
            writeln!(
                out,
                "{SIMLOG_SCHEMA_VERSION},step,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}{}",
                r.t,
                s.x,
                s.y,
                s.psi,
                s.v,
                r.control.delta,
                r.control.a,
                r.plan_cost,
                r.min_distance,
                opt(st.map(|s| s.iterations)),
                opt(st.map(|s| u8::from(s.converged))),
                opt(st.map(|s| s.primal_residual)),
                opt(st.and_then(|s| s.first_feasible)),
                opt(st.map(|s| s.stationarity)),
                u8::from(r.fallback),
                "",
                vehicles(&r.vehicles),
            )?;
        }
        if let Some(t) = &self.terminal {
            let s = &t.state;
            writeln!(
                out,
                "{SIMLOG_SCHEMA_VERSION},terminal,{},{},{},{},{},,,,{},,,,,,,{}{}",
                t.t,
                s.x,
                s.y,
                s.psi,
                s.v,
                t.min_distance,
                t.outcome.label(),
                vehicles(&t.vehicles),
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("simlog: {m}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let n_cols = header.split(',').count();
        if n_cols < FIXED_COLUMNS.len() || (n_cols - FIXED_COLUMNS.len()) % 2 != 0 {
            return Err(bad("unexpected header".into()));
        }
        let mut log = SimLog::new((n_cols - FIXED_COLUMNS.len()) / 2);
        if header != log.header() {
            return Err(bad("unexpected header".into()));
        }
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != n_cols {
                return Err(bad(format!("row has {} fields, expected {n_cols}", f.len())));
            }
            if f[0] != SIMLOG_SCHEMA_VERSION.to_string() {
                return Err(bad(format!("schema version {}", f[0])));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", f[k])));
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(format!("bad integer {:?}", f[k])));
            let t = int(2)?;
            let state = EgoState::new(num(3)?, num(4)?, num(5)?, num(6)?);
            let vehicles = (0..log.n_vehicles)
                .map(|i| Ok([num(18 + 2 * i)?, num(19 + 2 * i)?]))
                .collect::<Result<Vec<_>>>()?;
            match f[1] {
                "step" => {
                    let solver = if f[11].is_empty() {
                        None
                    } else {
                        Some(SolverStats {
                            iterations: int(11)?,
                            converged: f[12] == "1",
                            primal_residual: num(13)?,
                            first_feasible: if f[14].is_empty() { None } else { Some(int(14)?) },
                            stationarity: num(15)?,
                        })
                    };
                    log.records.push(StepRecord {
                        t,
                        state,
                        vehicles,
                        control: ControlInput::new(num(7)?, num(8)?),
                        plan_cost: num(9)?,
                        min_distance: num(10)?,
                        solver,
                        fallback: f[16] == "1",
                    });
                }
                "terminal" => {
                    log.terminal = Some(Terminal {
                        t,
                        state,
                        vehicles,
                        min_distance: num(10)?,
                        outcome: Outcome::parse(f[17], t)?,
                    });
                }
                other => return Err(bad(format!("unknown row kind {other:?}"))),
            }
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub planner: String,
    pub outcome: Outcome,
    pub steps: usize,
    pub metrics: Metrics,
    pub fallback_steps: usize,
    /// Largest ADMM iteration count over the run, when ADMM planned.
    pub max_admm_iterations: Option<usize>,
}
