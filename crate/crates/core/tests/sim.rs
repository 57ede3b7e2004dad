use std::io::Cursor;

use admm_nnmpc::sim::{run, Outcome, PlannerKind, ScenarioConfig, SimLog, BUILTIN_NAMES};
use admm_nnmpc::Error;

fn empty_road() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::builtin("two_lane").unwrap();
    cfg.vehicles.clear();
    cfg.geometry.r_i.clear();
    cfg
}

#[test]
fn builtins_round_trip_through_json() {
    for name in BUILTIN_NAMES {
        let cfg = ScenarioConfig::builtin(name).unwrap();
        assert_eq!(cfg.name, name);
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }
    assert!(matches!(ScenarioConfig::builtin("four_lane"), Err(Error::Config(_))));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let base = ScenarioConfig::builtin("two_lane").unwrap();

    let mut in_lane = base.clone();
    in_lane.ego.y = 3.7;
    assert!(in_lane.validate().is_err());

    let mut overlap = base.clone();
    overlap.vehicles[1].x = overlap.vehicles[0].x + 0.5;
    assert!(overlap.validate().is_err());

    let mut radii = base.clone();
    radii.geometry.r_i.pop();
    assert!(radii.validate().is_err());

    let mut unknown: serde_json::Value = serde_json::from_str(&base.to_json().unwrap()).unwrap();
    unknown["surprise"] = serde_json::json!(1);
    assert!(ScenarioConfig::from_json(&unknown.to_string()).is_err());
}

#[test]
fn admm_merges_on_an_empty_road() {
    let cfg = empty_road();
    let out = run(&cfg, PlannerKind::Admm).unwrap();
    let Outcome::Merged { t_merge } = out.outcome else {
        panic!("{:?}", out.outcome);
    };
    assert!(t_merge < cfg.max_sim_steps);
    assert!(out.log.records.iter().all(|r| !r.fallback && r.solver.is_some_and(|s| s.converged)));
    assert!(out.log.metrics().unwrap().d_min.is_infinite());
}

#[test]
fn baseline_merges_on_an_empty_road() {
    let out = run(&empty_road(), PlannerKind::Baseline).unwrap();
    assert!(matches!(out.outcome, Outcome::Merged { .. }), "{:?}", out.outcome);
    assert!(out.log.records.iter().all(|r| r.solver.is_none()));
}

#[test]
fn simlog_csv_round_trips() {
    let out = run(&ScenarioConfig::builtin("two_lane").unwrap(), PlannerKind::Baseline).unwrap();
    let text = out.log.to_csv_string();
    let back = SimLog::read_csv(Cursor::new(text.as_bytes())).unwrap();
    assert_eq!(back.to_csv_string(), text);
    assert_eq!(back.records.len(), out.log.records.len());
    assert_eq!(back.outcome(), Some(out.outcome));
    assert!(text.lines().last().unwrap().contains("terminal"));
}

#[test]
fn baseline_runs_are_deterministic() {
    let cfg = ScenarioConfig::builtin("three_lane").unwrap();
    let a = run(&cfg, PlannerKind::Baseline).unwrap();
    let b = run(&cfg, PlannerKind::Baseline).unwrap();
    assert_eq!(a.log.to_csv_string(), b.log.to_csv_string());
}

#[test]
fn step_limit_is_reported() {
    let mut cfg = ScenarioConfig::builtin("two_lane").unwrap();
    cfg.max_sim_steps = 2;
    let out = run(&cfg, PlannerKind::Baseline).unwrap();
    assert_eq!(out.outcome, Outcome::StepLimit { step: 2 });
    assert_eq!(out.log.records.len(), 2);
}

#[test]
fn planner_names_parse() {
    assert_eq!("admm".parse::<PlannerKind>().unwrap(), PlannerKind::Admm);
    assert_eq!("baseline".parse::<PlannerKind>().unwrap(), PlannerKind::Baseline);
    assert!("mpc".parse::<PlannerKind>().is_err());
}

#[test]
fn empty_road_admm_is_no_costlier_than_baseline() {
    let cfg = empty_road();
    let a = run(&cfg, PlannerKind::Admm).unwrap();
    let b = run(&cfg, PlannerKind::Baseline).unwrap();
    let (Outcome::Merged { t_merge: ta }, Outcome::Merged { t_merge: tb }) = (a.outcome, b.outcome) else {
        panic!("{:?} {:?}", a.outcome, b.outcome);
    };
    assert!(ta <= tb);
    assert!(a.log.metrics().unwrap().c_max <= b.log.metrics().unwrap().c_max);
}
