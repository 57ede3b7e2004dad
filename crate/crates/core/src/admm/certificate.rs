use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AdmmProblem;
use crate::error::{Error, Result};
use crate::numerics::sigma_min;
use crate::predictor::rollout;

const INFLATION: f64 = 1.5;
pub const CERTIFICATE_SCHEMA_VERSION: u32 = 1;

/// Sufficient penalty bound `max{1, (1 + 2σ_min(C))·L_J·M}` with sampled
/// `L_J` and `M`. Informational: the bound is sufficient, not necessary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoCertificate {
    pub schema_version: u32,
    pub sigma_min_c: f64,
    pub l_j: f64,
    pub m: f64,
    pub bound: f64,
    pub rho_used: f64,
    pub satisfied: bool,
    /// Always true: sampled constants make the bound an estimate.
    pub informational: bool,
    pub samples: usize,
    pub seed: u64,
}

fn uniform_vec(rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| rng.random_range(lo[i]..=hi[i]))
}

/// Largest sampled `‖M⁺u₁ − M⁺u₂‖ / ‖u₁ − u₂‖` over `u = M·x` in the image.
fn argmin_map_ratio(m: &DMatrix<f64>, xs: &[(DVector<f64>, DVector<f64>)]) -> Result<f64> {
    let svd = m.clone().svd(true, true);
    let mut worst = 0.0f64;
    for (x1, x2) in xs {
        let (u1, u2) = (m * x1, m * x2);
        let h1 = svd.solve(&u1, 1e-12).map_err(|_| Error::Singular("argmin map"))?;
        let h2 = svd.solve(&u2, 1e-12).map_err(|_| Error::Singular("argmin map"))?;
        let du = (&u1 - &u2).norm();
        if du > 0.0 {
            worst = worst.max((h1 - h2).norm() / du);
        }
    }
    Ok(worst)
}

pub fn rho_certificate(p: &AdmmProblem, rho_used: f64, samples: usize, seed: u64) -> Result<RhoCertificate> {
    if samples == 0 {
        return Err(Error::InvalidParameter("certificate needs at least one sample".into()));
    }
    let bd = p.bd;
    let tp = bd.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dlo, dhi) = p.control_box(true);
    let (alo, ahi) = p.control_box(false);
    let (zlo, zhi) = p.model.state_box();
    let obj = p.objective;

    let mut l_j = 0.0f64;
    let mut pairs_d = Vec::with_capacity(samples);
    let mut pairs_a = Vec::with_capacity(samples);
    let mut pairs_z = Vec::with_capacity(samples);
    for s in 0..samples {
        let d1 = uniform_vec(&mut rng, &dlo, &dhi);
        let a1 = uniform_vec(&mut rng, &alo, &ahi);
        // states near the dynamics-consistent trajectory, where the
        // predictor interaction lives
        let base = bd.rollout(&d1, &a1)?;
        let z1 = DVector::from_fn(base.len(), |i, _| (base[i] + rng.random_range(-0.5..0.5)).clamp(zlo[i], zhi[i]));
        let scale = if s % 2 == 0 { 1e-3 } else { 0.2 };
        let mut perturb = |v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>| {
            DVector::from_fn(v.len(), |i, _| (v[i] + scale * rng.random_range(-1.0..1.0)).clamp(lo[i], hi[i]))
        };
        let d2 = perturb(&d1, &dlo, &dhi);
        let a2 = perturb(&a1, &alo, &ahi);
        let z2 = perturb(&z1, &zlo, &zhi);

        let r1 = rollout(p.predictor, p.buffer, &z1, tp)?;
        let r2 = rollout(p.predictor, p.buffer, &z2, tp)?;
        let g1 = obj.relaxed_gradient(&d1, &a1, &z1, &r1)?;
        let g2 = obj.relaxed_gradient(&d2, &a2, &z2, &r2)?;
        let dg = ((&g1.delta - &g2.delta).norm_squared()
            + (&g1.alpha - &g2.alpha).norm_squared()
            + (&g1.z - &g2.z).norm_squared())
        .sqrt();
        let dp = ((&d1 - &d2).norm_squared() + (&a1 - &a2).norm_squared() + (&z1 - &z2).norm_squared()).sqrt();
        if dp > 0.0 {
            l_j = l_j.max(dg / dp);
        }
        pairs_d.push((d1, d2));
        pairs_a.push((a1, a2));
        pairs_z.push((z1, z2));
    }

    let m = INFLATION
        * argmin_map_ratio(&bd.a, &pairs_d)?
            .max(argmin_map_ratio(&bd.b, &pairs_a)?)
            .max(argmin_map_ratio(&bd.c, &pairs_z)?);
    let l_j = INFLATION * l_j;
    let sigma = sigma_min(&bd.c);
    let bound = 1.0f64.max((1.0 + 2.0 * sigma) * l_j * m);
    Ok(RhoCertificate {
        schema_version: CERTIFICATE_SCHEMA_VERSION,
        sigma_min_c: sigma,
        l_j,
        m,
        bound,
        rho_used,
        satisfied: rho_used > bound,
        informational: true,
        samples,
        seed,
    })
}
