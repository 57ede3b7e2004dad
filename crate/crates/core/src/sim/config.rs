use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::baseline::CandidateGrid;
use crate::dynamics::{EgoState, ModelParams};
use crate::error::{Error, Result};
use crate::objective::{distance, CostWeights, References, SafetyGeometry};
use crate::predictor::PredictorConfig;

const TWO_LANE: &str = include_str!("../../configs/two_lane.json");
const THREE_LANE: &str = include_str!("../../configs/three_lane.json");

pub const BUILTIN_NAMES: [&str; 2] = ["two_lane", "three_lane"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleInit {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

fn default_merge_tol_y() -> f64 {
    0.2
}

fn default_merge_tol_psi() -> f64 {
    0.05
}

/// A merge scenario, field for field as stored in the JSON config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub lane_count: usize,
    pub lane_width: f64,
    pub lane_centers: Vec<f64>,
    pub ego: EgoState,
    pub vehicles: Vec<VehicleInit>,
    pub refs: References,
    pub weights: CostWeights,
    pub geometry: SafetyGeometry,
    pub model: ModelParams,
    /// Predictor the planners use for the surrounding vehicles.
    pub predictor: PredictorConfig,
    /// Predictor that moves the surrounding vehicles; `predictor` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<PredictorConfig>,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default)]
    pub baseline: CandidateGrid,
    pub max_sim_steps: usize,
    #[serde(default = "default_merge_tol_y")]
    pub merge_tol_y: f64,
    #[serde(default = "default_merge_tol_psi")]
    pub merge_tol_psi: f64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// One of [`BUILTIN_NAMES`].
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "two_lane" => Self::from_json(TWO_LANE),
            "three_lane" => Self::from_json(THREE_LANE),
            other => Err(Error::Config(format!("unknown builtin config {other:?}"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn world_predictor(&self) -> &PredictorConfig {
        self.world.as_ref().unwrap_or(&self.predictor)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=3).contains(&self.lane_count) {
            return bad(format!("lane_count must be 2 or 3, got {}", self.lane_count));
        }
        if self.lane_centers.len() != self.lane_count || !(self.lane_width > 0.0) {
            return bad("lane_centers must list one center per lane and lane_width must be positive".into());
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.weights
            .validate(self.model.horizon)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.geometry
            .validate(self.vehicles.len())
            .map_err(|e| Error::Config(e.to_string()))?;
        self.admm.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.max_sim_steps == 0 || !(self.merge_tol_y > 0.0 && self.merge_tol_psi > 0.0) {
            return bad("max_sim_steps and merge tolerances must be positive".into());
        }
        let e = &self.ego;
        if ![e.x, e.y, e.psi, e.v, self.refs.y_ref, self.refs.v_ref, self.refs.x_ref]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("ego state and references must be finite".into());
        }
        if (e.y - self.refs.y_ref).abs() <= self.merge_tol_y {
            return bad("ego starts in the target lane".into());
        }
        if !self.lane_centers.iter().any(|c| (c - self.refs.y_ref).abs() < 1e-9) {
            return bad("y_ref is not a lane center".into());
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if ![v.x, v.y, v.v].iter().all(|c| c.is_finite()) {
                return bad(format!("vehicle {i} is not finite"));
            }
            if distance([e.x, e.y], [v.x, v.y], &self.geometry, i) <= 0.0 {
                return bad(format!("vehicle {i} overlaps the ego"));
            }
            for (j, w) in self.vehicles.iter().enumerate().skip(i + 1) {
                let reach = self.geometry.r_i[i] + self.geometry.r_i[j] + self.geometry.eps;
                let d2 = (v.x - w.x).powi(2) + (v.y - w.y).powi(2);
                if d2 <= reach * reach {
                    return bad(format!("vehicles {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_validate() {
        for name in BUILTIN_NAMES {
            let c = ScenarioConfig::builtin(name).unwrap();
            assert_eq!(c.name, name);
            assert_eq!(c.vehicles.len(), 4);
            assert_eq!(c.model.horizon, 8);
            assert_eq!(c.admm.rho, 100.0);
            let back = ScenarioConfig::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(ScenarioConfig::builtin("four_lane").is_err());
    }

    #[test]
    fn rejects_overlap_and_start_in_target_lane() {
        let mut c = ScenarioConfig::builtin("two_lane").unwrap();
        c.vehicles[1].x = c.vehicles[0].x + 0.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ScenarioConfig::builtin("two_lane").unwrap();
        c.ego.y = c.refs.y_ref;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        assert!(matches!(ScenarioConfig::from_json("{\"bogus\": 1}"), Err(Error::Config(_))));
    }
}
