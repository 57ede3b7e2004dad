//! Command-line front end.
//!
//! Exit codes: 0 merged or success, 1 other failure, 2 config or usage
//! error, 3 collision, 4 failed merge or step limit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::admm::{write_step_traces_csv, RhoCertificate};
use crate::error::{Error, Result};
use crate::sim::{self, Metrics, Outcome, PlannerKind, RunOptions, ScenarioConfig, Summary, BUILTIN_NAMES};

pub const LOG_LEVEL_ENV: &str = "ADMM_NNMPC_LOG_LEVEL";
pub const COMPARISON_SCHEMA_VERSION: u32 = 1;

pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const COLLISION: i32 = 3;
    pub const FAILED: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "admm-nnmpc", version, about = "Interaction-aware lane-merge planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one planner on a scenario.
    Run {
        /// Scenario JSON file or builtin name (two_lane, three_lane).
        #[arg(long)]
        config: String,
        #[arg(long, value_parser = parse_planner)]
        planner: PlannerKind,
        #[arg(long)]
        out: PathBuf,
        /// Write every step's ADMM trace to admm_trace.csv.
        #[arg(long)]
        trace: bool,
        /// Write rho_certificate.json for the first planning step.
        #[arg(long)]
        certify: bool,
        /// Seed for the certificate's sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run both planners on one scenario and tabulate their metrics.
    Compare {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the penalty certificate for a scenario.
    Certify {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn parse_planner(s: &str) -> std::result::Result<PlannerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: String,
    pub planner: PlannerKind,
    pub out: PathBuf,
    pub seed: u64,
    pub trace: bool,
    pub certify: bool,
}

pub const CERTIFICATE_SAMPLES: usize = 200;

/// A path if one exists there, otherwise a builtin name.
pub fn load_config(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.exists() {
        ScenarioConfig::load(path)
    } else if BUILTIN_NAMES.contains(&spec) {
        ScenarioConfig::builtin(spec)
    } else {
        Err(Error::Config(format!(
            "{spec:?} is neither a readable file nor a builtin config ({})",
            BUILTIN_NAMES.join(", ")
        )))
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn outcome_exit_code(outcome: &Outcome) -> i32 {
    match outcome {
        Outcome::Merged { .. } => exit::OK,
        Outcome::Collision { .. } => exit::COLLISION,
        Outcome::Failed { .. } | Outcome::StepLimit { .. } => exit::FAILED,
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::InvalidParameter(_) | Error::WeightsFormat(_) => exit::CONFIG,
        _ => exit::OTHER,
    }
}

/// Runs and writes `simlog.csv`, `summary.json` and the requested extras.
pub fn cmd_run(m: &RunManifest) -> Result<Summary> {
    let cfg = load_config(&m.config)?;
    prepare_dir(&m.out)?;
    let out = sim::run_with(
        &cfg,
        m.planner,
        RunOptions {
            keep_traces: m.trace && m.planner == PlannerKind::Admm,
        },
    )?;
    fs::write(m.out.join("simlog.csv"), out.log.to_csv_string())?;
    let summary = out.summary(&cfg.name, m.planner)?;
    write_json(&m.out.join("summary.json"), &summary)?;
    if m.trace && m.planner == PlannerKind::Admm {
        let mut f = fs::File::create(m.out.join("admm_trace.csv"))?;
        write_step_traces_csv(&out.traces, &mut f)?;
        f.flush()?;
    }
    if m.certify {
        let cert = sim::certify(&cfg, CERTIFICATE_SAMPLES, m.seed)?;
        write_json(&m.out.join("rho_certificate.json"), &cert)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub planner: PlannerKind,
    pub outcome: Option<Outcome>,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, planner: PlannerKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.planner == planner)
    }

    /// Plain-text table with `t_merge`, `C_max` and `d_min` per planner.
    pub fn table(&self) -> String {
        let mut s = format!("scenario: {}\n", self.scenario);
        s.push_str(&format!("{:<10} {:<12} {:>8} {:>12} {:>10}\n", "planner", "outcome", "t_merge", "C_max", "d_min"));
        for r in &self.rows {
            let outcome = match (&r.outcome, &r.error) {
                (Some(o), _) => format!("{}@{}", o.label(), o.step()),
                (None, _) => "error".to_string(),
            };
            let (t, c, d) = match &r.metrics {
                Some(m) => (
                    m.t_merge.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                    format!("{:.3}", m.c_max),
                    format!("{:.3}", m.d_min),
                ),
                None => ("-".into(), "-".into(), "-".into()),
            };
            s.push_str(&format!("{:<10} {:<12} {:>8} {:>12} {:>10}\n", r.planner.to_string(), outcome, t, c, d));
            if let Some(e) = &r.error {
                s.push_str(&format!("  error: {e}\n"));
            }
        }
        s
    }
}

fn run_into(cfg: &ScenarioConfig, planner: PlannerKind, dir: &Path) -> ComparisonRow {
    let result = (|| -> Result<Summary> {
        prepare_dir(dir)?;
        let out = sim::run(cfg, planner)?;
        fs::write(dir.join("simlog.csv"), out.log.to_csv_string())?;
        let summary = out.summary(&cfg.name, planner)?;
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(summary)
    })();
    match result {
        Ok(s) => ComparisonRow {
            planner,
            outcome: Some(s.outcome),
            metrics: Some(s.metrics),
            error: None,
        },
        Err(e) => ComparisonRow {
            planner,
            outcome: None,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

/// Both planners concurrently, into `out/admm` and `out/baseline`, plus
/// `comparison.json` and `comparison.txt`.
pub fn cmd_compare(config: &str, out: &Path) -> Result<Comparison> {
    let cfg = load_config(config)?;
    prepare_dir(out)?;
    let rows = thread::scope(|s| {
        let handles: Vec<_> = [PlannerKind::Admm, PlannerKind::Baseline]
            .into_iter()
            .map(|p| {
                let cfg = &cfg;
                let dir = out.join(p.to_string());
                s.spawn(move || run_into(cfg, p, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("planner thread panicked"))
            .collect()
    });
    let cmp = Comparison {
        schema_version: COMPARISON_SCHEMA_VERSION,
        scenario: cfg.name.clone(),
        rows,
    };
    write_json(&out.join("comparison.json"), &cmp)?;
    fs::write(out.join("comparison.txt"), cmp.table())?;
    Ok(cmp)
}

pub fn cmd_certify(config: &str, out: &Path, seed: u64, samples: usize) -> Result<RhoCertificate> {
    let cfg = load_config(config)?;
    prepare_dir(out)?;
    let cert = sim::certify(&cfg, samples, seed)?;
    write_json(&out.join("rho_certificate.json"), &cert)?;
    Ok(cert)
}

pub fn init_logging() {
    let level = std::env::var(LOG_LEVEL_ENV).unwrap_or_else(|_| "error".into());
    let level = match level.as_str() {
        "error" | "info" | "debug" => level,
        _ => "error".into(),
    };
    let _ = env_logger::Builder::new().parse_filters(&level).try_init();
}

/// Parses `args` (including the program name), executes and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match cli.command {
        Command::Run {
            config,
            planner,
            out,
            trace,
            certify,
            seed,
        } => {
            let m = RunManifest {
                config,
                planner,
                out,
                seed,
                trace,
                certify,
            };
            match cmd_run(&m) {
                Ok(s) => {
                    println!("{}", serde_json::to_string_pretty(&s).unwrap_or_default());
                    outcome_exit_code(&s.outcome)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    error_exit_code(&e)
                }
            }
        }
        Command::Compare { config, out } => match cmd_compare(&config, &out) {
            Ok(c) => {
                print!("{}", c.table());
                if c.rows.iter().any(|r| r.error.is_some()) {
                    exit::OTHER
                } else {
                    exit::OK
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                error_exit_code(&e)
            }
        },
        Command::Certify {
            config,
            out,
            seed,
            samples,
        } => match cmd_certify(&config, &out, seed, samples) {
            Ok(c) => {
                println!("{}", serde_json::to_string_pretty(&c).unwrap_or_default());
                exit::OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                error_exit_code(&e)
            }
        },
    }
}
