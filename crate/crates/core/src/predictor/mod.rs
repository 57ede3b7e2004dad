//! One-step joint predictors for the surrounding vehicles, their recursive
//! rollout along a candidate ego trajectory, and sampling estimators for the
//! boundedness/smoothness constants the convergence analysis relies on.
//!
//! A predictor maps a `T_obs × (N+1)` position history (column 0 is the ego,
//! row 0 the most recent time) to the next positions of the `N` surrounding
//! vehicles. Every predictor also returns the Jacobian of its outputs with
//! respect to the flattened history, which [`rollout`] chains through the
//! recursion to obtain sensitivities with respect to the ego trajectory.

mod constants;
mod constant_velocity;
mod interactive;
mod mlp;
mod rollout;

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub use constant_velocity::ConstantVelocity;
pub use constants::{estimate_constants, AssumptionConstants, SafetyLipschitz, SampleRegion};
pub use interactive::{InteractiveParams, InteractivePredictor};
pub use mlp::{Activation, Mlp, MlpPredictor};
pub use rollout::{rollout, PredictionRollout};
pub(crate) use rollout::{record_rollout, RolloutTape};

/// Fixed-depth position history, most recent row first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBuffer {
    depth: usize,
    columns: usize,
    rows: VecDeque<Vec<[f64; 2]>>,
}

impl ObservationBuffer {
    pub fn new(depth: usize, n_vehicles: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidParameter("history depth must be at least 1".into()));
        }
        Ok(Self {
            depth,
            columns: n_vehicles + 1,
            rows: VecDeque::with_capacity(depth),
        })
    }

    /// Builds a full buffer from rows ordered most recent first.
    pub fn from_rows(rows: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let depth = rows.len();
        let columns = rows.first().map(|r| r.len()).unwrap_or(0);
        if columns == 0 {
            return Err(Error::InvalidParameter("buffer needs at least the ego column".into()));
        }
        let mut buf = Self::new(depth, columns - 1)?;
        for row in rows.into_iter().rev() {
            buf.push(row)?;
        }
        Ok(buf)
    }

    /// Pushes a new most-recent row, dropping the oldest once full.
    pub fn push(&mut self, row: Vec<[f64; 2]>) -> Result<()> {
        if row.len() != self.columns {
            return Err(Error::DimensionMismatch {
                what: "observation row",
                expected: self.columns,
                got: row.len(),
            });
        }
        let flat: Vec<f64> = row.iter().flatten().copied().collect();
        ensure_finite("observation row", &flat)?;
        if self.rows.len() == self.depth {
            self.rows.pop_back();
        }
        self.rows.push_front(row);
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn filled(&self) -> usize {
        self.rows.len()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.depth
    }

    pub fn n_vehicles(&self) -> usize {
        self.columns - 1
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row(&self, r: usize) -> &[[f64; 2]] {
        &self.rows[r]
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.rows[row][col]
    }

    /// Length of the flattened history `(row, column, coordinate)`.
    pub fn flat_len(&self) -> usize {
        self.depth * self.columns * 2
    }

    pub fn flat_index(&self, row: usize, col: usize, coord: usize) -> usize {
        (row * self.columns + col) * 2 + coord
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().flatten().copied().collect()
    }

    pub(crate) fn require(&self, depth: usize) -> Result<()> {
        if self.rows.len() < depth || self.depth < depth {
            return Err(Error::UnderfilledBuffer {
                filled: self.rows.len(),
                depth: depth.max(self.depth),
            });
        }
        Ok(())
    }
}

/// Next-step positions of the surrounding vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPositions {
    pub positions: Vec<[f64; 2]>,
}

impl PredictedPositions {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Output of one predictor call with its local sensitivities.
#[derive(Debug, Clone)]
pub struct LocalPrediction {
    pub positions: PredictedPositions,
    /// `2N × flat_len` Jacobian with respect to the flattened history; row
    /// `2i + c` is coordinate `c` of vehicle `i + 1`.
    pub jacobian: Option<DMatrix<f64>>,
}

pub trait Predictor: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Number of history rows the predictor reads.
    fn history_depth(&self) -> usize;

    /// Declared output bounds `(s_x, s_y)`.
    fn output_bounds(&self) -> (f64, f64);

    /// `false` when outputs never depend on the ego column.
    fn is_interactive(&self) -> bool {
        true
    }

    fn predict(&self, buf: &ObservationBuffer, with_jacobian: bool) -> Result<LocalPrediction>;

    fn predict_one(&self, buf: &ObservationBuffer) -> Result<PredictedPositions> {
        Ok(self.predict(buf, false)?.positions)
    }
}

/// Smooth saturation into `(−s, s)`: identity on `[−(s−m), s−m]`, then a
/// tanh knee of width `m`. Twice continuously differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftClamp {
    pub bound: f64,
    pub margin: f64,
}

impl SoftClamp {
    pub fn new(bound: f64, margin: f64) -> Self {
        assert!(bound > 0.0 && margin > 0.0 && margin < bound);
        Self { bound, margin }
    }

    /// Value and first derivative.
    pub fn eval(&self, p: f64) -> (f64, f64) {
        let knee = self.bound - self.margin;
        let u = p.abs() - knee;
        if u <= 0.0 {
            (p, 1.0)
        } else {
            let t = (u / self.margin).tanh();
            (p.signum() * (knee + self.margin * t), 1.0 - t * t)
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Serializable choice of predictor, as used in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorConfig {
    ConstantVelocity {
        dt: f64,
        #[serde(default = "default_sx")]
        s_x: f64,
        #[serde(default = "default_sy")]
        s_y: f64,
    },
    Interactive(InteractiveParams),
    Mlp {
        weights_path: String,
        #[serde(default = "default_sx")]
        s_x: f64,
        #[serde(default = "default_sy")]
        s_y: f64,
    },
}

fn default_sx() -> f64 {
    300.0
}

fn default_sy() -> f64 {
    15.0
}

impl PredictorConfig {
    pub fn build(&self) -> Result<Box<dyn Predictor>> {
        Ok(match self {
            PredictorConfig::ConstantVelocity { dt, s_x, s_y } => {
                Box::new(ConstantVelocity::new(*dt, *s_x, *s_y)?)
            }
            PredictorConfig::Interactive(p) => Box::new(InteractivePredictor::new(p.clone())?),
            PredictorConfig::Mlp { weights_path, s_x, s_y } => {
                let mlp = Mlp::load(weights_path)?;
                Box::new(MlpPredictor::new(mlp, *s_x, *s_y)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_push_order_and_depth() {
        let mut b = ObservationBuffer::new(2, 1).unwrap();
        assert!(!b.is_full());
        b.push(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        b.push(vec![[1.0, 0.0], [2.0, 0.0]]).unwrap();
        b.push(vec![[2.0, 0.0], [3.0, 0.0]]).unwrap();
        assert!(b.is_full());
        assert_eq!(b.filled(), 2);
        assert_eq!(b.get(0, 1), [3.0, 0.0]);
        assert_eq!(b.get(1, 1), [2.0, 0.0]);
        assert_eq!(b.flatten()[b.flat_index(1, 1, 0)], 2.0);
    }

    #[test]
    fn buffer_rejects_bad_rows() {
        let mut b = ObservationBuffer::new(2, 1).unwrap();
        assert!(b.push(vec![[0.0, 0.0]]).is_err());
        assert!(b.push(vec![[0.0, f64::NAN], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn soft_clamp_is_identity_inside_and_bounded_outside() {
        let c = SoftClamp::new(15.0, 5.0);
        assert_eq!(c.eval(3.7), (3.7, 1.0));
        assert_eq!(c.eval(-10.0), (-10.0, 1.0));
        for p in [10.5, 20.0, 1e6, -1e9] {
            let (v, d) = c.eval(p);
            assert!(v.abs() <= 15.0);
            assert!((0.0..=1.0).contains(&d));
        }
        // derivative continuity across the knee
        let (_, d) = c.eval(10.0 + 1e-9);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
