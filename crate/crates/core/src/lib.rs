//! Interaction-aware model predictive control for lane merging.
//!
//! The planner linearizes a kinematic bicycle model once per receding-horizon
//! step, embeds a differentiable predictor of the surrounding vehicles in the
//! safety constraints and solves the resulting non-convex program with
//! three-block ADMM. A candidate-curve planner is included for comparison.

pub mod admm;
pub mod baseline;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod numerics;
pub mod objective;
pub mod predictor;
pub mod sim;

pub use error::{Error, Result};
