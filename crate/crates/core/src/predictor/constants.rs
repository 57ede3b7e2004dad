use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rollout, ObservationBuffer, Predictor};
use crate::dynamics::{Bounds, STATE_DIM};
use crate::error::{Error, Result};

const INFLATION: f64 = 1.5;

/// Sampling box for histories and ego trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRegion {
    pub ego_x: Bounds,
    pub ego_y: Bounds,
    pub vehicle_x: Bounds,
    pub vehicle_y: Bounds,
    pub speed: Bounds,
    pub n_vehicles: usize,
    pub horizon: usize,
    pub dt: f64,
}

impl SampleRegion {
    /// Box around a merge: ego and vehicles share the same longitudinal window.
    pub fn around_merge(n_vehicles: usize, horizon: usize, dt: f64) -> Self {
        Self {
            ego_x: Bounds::new(-10.0, 30.0),
            ego_y: Bounds::new(-0.5, 4.2),
            vehicle_x: Bounds::new(-15.0, 35.0),
            vehicle_y: Bounds::new(3.2, 4.2),
            speed: Bounds::new(4.0, 12.0),
            n_vehicles,
            horizon,
            dt,
        }
    }

    fn validate(&self) -> Result<()> {
        let boxes = [
            ("ego_x", self.ego_x),
            ("ego_y", self.ego_y),
            ("vehicle_x", self.vehicle_x),
            ("vehicle_y", self.vehicle_y),
            ("speed", self.speed),
        ];
        for (name, b) in boxes {
            if !(b.min < b.max) || !b.min.is_finite() || !b.max.is_finite() {
                return Err(Error::DegenerateRegion(format!("{name} = [{}, {}]", b.min, b.max)));
            }
        }
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::DegenerateRegion("horizon and dt must be positive".into()));
        }
        Ok(())
    }
}

/// Boundedness and smoothness constants of a predictor (sampled lower
/// bounds, inflated; `s_x`, `s_y` are exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub s_x: f64,
    pub s_y: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub l_grad_phi: f64,
}

/// Closed-form Lipschitz constants of `∇b_i` implied by the assumption
/// constants over an ego box `|x| ≤ x_max`, `|y| ≤ y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLipschitz {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_g: f64,
}

impl AssumptionConstants {
    pub fn safety_lipschitz(&self, x_max: f64, y_max: f64, horizon: usize) -> SafetyLipschitz {
        let (tx, ty) = (self.theta_x, self.theta_y);
        let l1 = 2.0 * (tx * (1.0 + tx) + ty * (1.0 + ty) + (x_max + y_max + self.s_x + self.s_y) * self.l_grad_phi);
        let l2 = 2.0 * (1.0 + tx);
        let l3 = 2.0 * (1.0 + ty);
        SafetyLipschitz {
            l1,
            l2,
            l3,
            l_g: horizon as f64 * (l1.max(l2) + l1.max(l3)),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, b: Bounds) -> f64 {
    rng.random_range(b.min..b.max)
}

pub(crate) fn sample_buffer(
    rng: &mut ChaCha8Rng,
    region: &SampleRegion,
    depth: usize,
) -> Result<ObservationBuffer> {
    let mut movers = Vec::with_capacity(region.n_vehicles + 1);
    movers.push((uniform(rng, region.ego_x), uniform(rng, region.ego_y), uniform(rng, region.speed)));
    for _ in 0..region.n_vehicles {
        movers.push((uniform(rng, region.vehicle_x), uniform(rng, region.vehicle_y), uniform(rng, region.speed)));
    }
    let rows = (0..depth)
        .map(|r| {
            movers
                .iter()
                .map(|&(x, y, v)| [x - r as f64 * region.dt * v, y])
                .collect()
        })
        .collect();
    ObservationBuffer::from_rows(rows)
}

pub(crate) fn sample_trajectory(rng: &mut ChaCha8Rng, region: &SampleRegion, start: [f64; 2]) -> DVector<f64> {
    let v = uniform(rng, region.speed);
    let mut z = DVector::zeros(STATE_DIM * region.horizon);
    for t in 0..region.horizon {
        let k = t * STATE_DIM;
        z[k] = start[0] + (t + 1) as f64 * region.dt * v + rng.random_range(-1.0..1.0);
        z[k + 1] = uniform(rng, region.ego_y);
        z[k + 3] = v;
    }
    z
}

/// Samples rollouts over `region` to estimate θ_x, θ_y and L_∇φ.
pub fn estimate_constants(
    predictor: &dyn Predictor,
    region: &SampleRegion,
    samples: usize,
    seed: u64,
) -> Result<AssumptionConstants> {
    if samples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {samples}")));
    }
    region.validate()?;
    let (s_x, s_y) = predictor.output_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = [0.0f64; 2];
    let mut lip = 0.0f64;
    let tp = region.horizon;

    for s in 0..samples {
        let buf = sample_buffer(&mut rng, region, predictor.history_depth())?;
        let z1 = sample_trajectory(&mut rng, region, buf.get(0, 0));
        let r1 = rollout(predictor, &buf, &z1, tp)?;
        for row in 0..r1.jacobian.nrows() {
            let m = r1.jacobian.row(row).amax();
            theta[row % 2] = theta[row % 2].max(m);
        }
        // alternate near and far partners
        let scale = if s % 2 == 0 { rng.random_range(1e-3..0.1) } else { rng.random_range(0.1..3.0) };
        let dir = DVector::from_fn(z1.len(), |_, _| rng.random_range(-1.0..1.0));
        let z2 = &z1 + dir.normalize() * scale;
        let r2 = rollout(predictor, &buf, &z2, tp)?;
        let dz = (&z2 - &z1).norm();
        for row in 0..r1.jacobian.nrows() {
            let dg = (r1.jacobian.row(row) - r2.jacobian.row(row)).norm();
            lip = lip.max(dg / dz);
        }
    }

    Ok(AssumptionConstants {
        s_x,
        s_y,
        theta_x: INFLATION * theta[0],
        theta_y: INFLATION * theta[1],
        l_grad_phi: INFLATION * lip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ConstantVelocity, InteractiveParams, InteractivePredictor};

    #[test]
    fn constant_velocity_constants_vanish() {
        let cv = ConstantVelocity::new(0.25, 300.0, 15.0).unwrap();
        let c = estimate_constants(&cv, &SampleRegion::around_merge(2, 3, 0.25), 100, 1).unwrap();
        assert_eq!((c.theta_x, c.theta_y, c.l_grad_phi), (0.0, 0.0, 0.0));
        assert_eq!((c.s_x, c.s_y), (300.0, 15.0));
        let l = c.safety_lipschitz(200.0, 10.0, 3);
        assert_eq!((l.l1, l.l2, l.l3, l.l_g), (0.0, 2.0, 2.0, 12.0));
    }

    #[test]
    fn interactive_bounds_are_echoed() {
        let p = InteractivePredictor::new(InteractiveParams {
            escape_gain: 2.0,
            ..InteractiveParams::default()
        })
        .unwrap();
        let c = estimate_constants(&p, &SampleRegion::around_merge(2, 3, 0.25), 100, 2).unwrap();
        assert_eq!((c.s_x, c.s_y), (300.0, 15.0));
        assert!(c.theta_x > 0.0 && c.theta_y > 0.0 && c.l_grad_phi > 0.0);
        assert!(c.theta_x.is_finite() && c.l_grad_phi.is_finite());
    }

    #[test]
    fn degenerate_region_and_small_sample_rejected() {
        let p = InteractivePredictor::new(InteractiveParams::default()).unwrap();
        let mut region = SampleRegion::around_merge(1, 2, 0.25);
        assert!(estimate_constants(&p, &region, 50, 0).is_err());
        region.vehicle_y = Bounds::new(3.7, 3.7);
        assert!(matches!(estimate_constants(&p, &region, 100, 0), Err(Error::DegenerateRegion(_))));
    }
}
