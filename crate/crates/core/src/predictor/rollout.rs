use nalgebra::{DMatrix, DVector, RowDVector};

use super::{ObservationBuffer, Predictor};
use crate::dynamics::STATE_DIM;
use crate::error::{ensure_finite, Error, Result};

/// Predictions over the horizon with sensitivities to the ego trajectory.
#[derive(Debug, Clone)]
pub struct PredictionRollout {
    /// `positions[τ][i]` is vehicle `i + 1` at time `τ + 1`, predicted at `τ`.
    pub positions: Vec<Vec<[f64; 2]>>,
    /// Row `(τ·N + i)·2 + c` is the gradient of `positions[τ][i][c]`
    /// with respect to `Z` (length `4·Tp`).
    pub jacobian: DMatrix<f64>,
}

impl PredictionRollout {
    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.positions.first().map(Vec::len).unwrap_or(0)
    }

    pub fn row_index(&self, step: usize, vehicle: usize, coord: usize) -> usize {
        (step * self.n_vehicles() + vehicle) * 2 + coord
    }

    pub fn gradient(&self, step: usize, vehicle: usize, coord: usize) -> RowDVector<f64> {
        self.jacobian.row(self.row_index(step, vehicle, coord)).into_owned()
    }
}

/// Recorded forward pass: per-step predictor Jacobians for reverse sweeps.
#[derive(Debug, Clone)]
pub(crate) struct RolloutTape {
    pub positions: Vec<Vec<[f64; 2]>>,
    local: Vec<Option<DMatrix<f64>>>,
    n_vehicles: usize,
    depth: usize,
    columns: usize,
}

/// Recursive rollout: the prediction for time `τ + 1` reads ego positions
/// from `Z` (times `1..=τ`) or the observed buffer (times `≤ 0`), and
/// surrounding-vehicle positions from earlier predictions or the buffer.
pub(crate) fn record_rollout(
    predictor: &dyn Predictor,
    buffer: &ObservationBuffer,
    z: &DVector<f64>,
    horizon: usize,
    with_jacobian: bool,
) -> Result<RolloutTape> {
    if z.len() != STATE_DIM * horizon {
        return Err(Error::DimensionMismatch {
            what: "ego trajectory",
            expected: STATE_DIM * horizon,
            got: z.len(),
        });
    }
    ensure_finite("ego trajectory", z.as_slice())?;
    let depth = predictor.history_depth();
    buffer.require(depth)?;
    let n = buffer.n_vehicles();
    let columns = n + 1;
    let with_jacobian = with_jacobian && predictor.is_interactive();

    let mut positions: Vec<Vec<[f64; 2]>> = Vec::with_capacity(horizon);
    let mut local = Vec::with_capacity(horizon);
    let row_at = |t: isize, positions: &Vec<Vec<[f64; 2]>>| -> Vec<[f64; 2]> {
        if t <= 0 {
            buffer.row((-t) as usize).to_vec()
        } else {
            let k = (t as usize - 1) * STATE_DIM;
            let mut row = Vec::with_capacity(columns);
            row.push([z[k], z[k + 1]]);
            row.extend_from_slice(&positions[t as usize - 1]);
            row
        }
    };

    for tau in 0..horizon {
        let rows = (0..depth).map(|r| row_at(tau as isize - r as isize, &positions)).collect();
        let step_buf = ObservationBuffer::from_rows(rows)?;
        let out = predictor.predict(&step_buf, with_jacobian)?;
        positions.push(out.positions.positions);
        local.push(out.jacobian);
    }

    Ok(RolloutTape {
        positions,
        local,
        n_vehicles: n,
        depth,
        columns,
    })
}

impl RolloutTape {
    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    /// Vector-Jacobian product: `seed` is indexed like the rollout rows,
    /// `(τ·N + i)·2 + c`; returns the gradient with respect to `Z`.
    pub fn vjp(&self, seed: &[f64]) -> DVector<f64> {
        let tp = self.horizon();
        let n = self.n_vehicles;
        let mut grad = DVector::zeros(STATE_DIM * tp);
        let mut adj = seed.to_vec();
        for tau in (0..tp).rev() {
            let Some(jac) = &self.local[tau] else { continue };
            let a = &adj[tau * 2 * n..(tau + 1) * 2 * n];
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            let g = jac.tr_mul(&DVector::from_column_slice(a));
            for row in 0..self.depth {
                let t = tau as isize - row as isize;
                if t < 1 {
                    break;
                }
                let t = t as usize;
                for col in 0..self.columns {
                    for c in 0..2 {
                        let v = g[(row * self.columns + col) * 2 + c];
                        if v == 0.0 {
                            continue;
                        }
                        if col == 0 {
                            grad[(t - 1) * STATE_DIM + c] += v;
                        } else {
                            adj[((t - 1) * n + col - 1) * 2 + c] += v;
                        }
                    }
                }
            }
        }
        grad
    }

    pub fn into_rollout(self) -> PredictionRollout {
        let tp = self.horizon();
        let rows = tp * self.n_vehicles * 2;
        let mut jacobian = DMatrix::zeros(rows, STATE_DIM * tp);
        if self.local.iter().any(Option::is_some) {
            let mut seed = vec![0.0; rows];
            for r in 0..rows {
                seed[r] = 1.0;
                jacobian.set_row(r, &self.vjp(&seed).transpose());
                seed[r] = 0.0;
            }
        }
        PredictionRollout {
            positions: self.positions,
            jacobian,
        }
    }
}

/// Rolls the predictor out along `z` (`Z[4τ + k]` is component `k` of `z(τ+1)`).
pub fn rollout(
    predictor: &dyn Predictor,
    buffer: &ObservationBuffer,
    z: &DVector<f64>,
    horizon: usize,
) -> Result<PredictionRollout> {
    Ok(record_rollout(predictor, buffer, z, horizon, true)?.into_rollout())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ConstantVelocity, InteractiveParams, InteractivePredictor};

    fn buffer() -> ObservationBuffer {
        ObservationBuffer::from_rows(vec![
            vec![[4.0, 0.8], [6.0, 3.7], [13.0, 3.7]],
            vec![[2.0, 0.6], [4.0, 3.7], [11.0, 3.7]],
        ])
        .unwrap()
    }

    fn ego_path(tp: usize) -> DVector<f64> {
        DVector::from_fn(4 * tp, |k, _| {
            let t = (k / 4 + 1) as f64;
            match k % 4 {
                0 => 4.0 + 2.1 * t,
                1 => 0.8 + 0.45 * t,
                2 => 0.1,
                _ => 8.5,
            }
        })
    }

    #[test]
    fn constant_velocity_rollout_has_zero_jacobian() {
        let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
        let r = rollout(&cv, &buffer(), &ego_path(3), 3).unwrap();
        assert_eq!(r.jacobian.amax(), 0.0);
        assert_eq!(r.positions[2][0], [12.0, 3.7]);
    }

    #[test]
    fn causality_is_structural() {
        let pred = InteractivePredictor::new(InteractiveParams::default()).unwrap();
        let z = ego_path(4);
        let r = rollout(&pred, &buffer(), &z, 4).unwrap();
        for tau in 0..4 {
            for i in 0..2 {
                for c in 0..2 {
                    let g = r.gradient(tau, i, c);
                    for k in 4 * tau..16 {
                        assert_eq!(g[k], 0.0);
                    }
                }
            }
        }
        let mut z2 = z.clone();
        z2[8] += 0.7;
        z2[9] -= 0.3;
        let r2 = rollout(&pred, &buffer(), &z2, 4).unwrap();
        assert_eq!(&r.positions[..3], &r2.positions[..3]);
    }

    #[test]
    fn rejects_bad_trajectories() {
        let pred = InteractivePredictor::new(InteractiveParams::default()).unwrap();
        let mut z = ego_path(2);
        assert!(rollout(&pred, &buffer(), &z, 3).is_err());
        z[3] = f64::INFINITY;
        assert!(matches!(rollout(&pred, &buffer(), &z, 2), Err(Error::NonFinite(_))));
    }
}
