#![allow(dead_code)]

use admm_nnmpc::dynamics::{ControlInput, EgoState, ModelParams};
use admm_nnmpc::objective::{CostWeights, Objective, References, SafetyGeometry};
use admm_nnmpc::predictor::ObservationBuffer;
use admm_nnmpc::sim::ScenarioConfig;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model(horizon: usize) -> ModelParams {
    ModelParams {
        horizon,
        ..ModelParams::default()
    }
}

pub fn objective(n_vehicles: usize, horizon: usize, prev: ControlInput) -> Objective {
    Objective {
        weights: CostWeights::table_one(horizon),
        refs: References {
            y_ref: 3.7,
            v_ref: 10.0,
            x_ref: 25.0,
        },
        geometry: SafetyGeometry::uniform(n_vehicles, 1.0, 0.05),
        prev_control: prev,
    }
}

/// Constant-velocity history of `depth` rows ending at the given ego and
/// vehicle positions, all moving along +x at `speeds`.
pub fn history(ego: [f64; 2], vehicles: &[[f64; 2]], speeds: &[f64], depth: usize, dt: f64) -> ObservationBuffer {
    let rows = (0..depth)
        .map(|r| {
            let back = r as f64 * dt;
            std::iter::once(ego)
                .chain(vehicles.iter().copied())
                .zip(speeds)
                .map(|(p, v)| [p[0] - back * v, p[1]])
                .collect()
        })
        .collect();
    ObservationBuffer::from_rows(rows).unwrap()
}

/// History built from a scenario's initial conditions.
pub fn scenario_history(cfg: &ScenarioConfig, depth: usize) -> ObservationBuffer {
    let vehicles: Vec<[f64; 2]> = cfg.vehicles.iter().map(|v| [v.x, v.y]).collect();
    let mut speeds = vec![cfg.ego.v];
    speeds.extend(cfg.vehicles.iter().map(|v| v.v));
    history([cfg.ego.x, cfg.ego.y], &vehicles, &speeds, depth, cfg.model.dt)
}

pub fn random_state(rng: &mut ChaCha8Rng) -> EgoState {
    EgoState::new(
        rng.random_range(-5.0..30.0),
        rng.random_range(-0.5..4.0),
        rng.random_range(-0.5..0.5),
        rng.random_range(2.0..15.0),
    )
}

pub fn random_control(rng: &mut ChaCha8Rng) -> ControlInput {
    ControlInput::new(rng.random_range(-0.45..0.45), rng.random_range(-3.5..2.5))
}

/// Ego state trajectory drifting from `start` toward the target lane.
pub fn random_trajectory(rng: &mut ChaCha8Rng, start: EgoState, horizon: usize, dt: f64) -> DVector<f64> {
    let v = rng.random_range(5.0..12.0);
    let lateral = rng.random_range(-0.3..1.2);
    DVector::from_fn(4 * horizon, |i, _| {
        let t = (i / 4 + 1) as f64;
        match i % 4 {
            0 => start.x + t * dt * v + rng.random_range(-0.3..0.3),
            1 => start.y + t * dt * lateral * 2.0 + rng.random_range(-0.2..0.2),
            2 => rng.random_range(-0.2..0.3),
            _ => v + rng.random_range(-0.5..0.5),
        }
    })
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}
