//! Projected limited-memory BFGS on a box with Armijo backtracking.
//!
//! The initial inverse-Hessian of the two-loop recursion is the inverse of a
//! fixed positive-definite matrix restricted to the free variables when one
//! is supplied, and the usual scaled identity otherwise.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::qp::projected_gradient_norm;
use crate::error::Result;

const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub armijo: f64,
    pub grad_tol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 300,
            armijo: 1e-4,
            grad_tol: 1e-9,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub pg_norm: f64,
}

fn project(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
}

/// Minimizes `f` over `[lo, hi]`; `f` returns the value and gradient.
pub(crate) fn minimize_box<F>(
    mut f: F,
    x0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    precond: Option<&DMatrix<f64>>,
    opts: &LbfgsOptions,
) -> Result<LbfgsResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = project(x0, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(&x, &g, lo, hi);

    while iterations < opts.max_iter && pg > opts.grad_tol {
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &DVector<f64>| DVector::from_fn(n, |i, _| if free[i] { v[i] } else { 0.0 });

        let mut accepted = false;
        for attempt in 0..2 {
            let use_memory = attempt == 0 && !pairs.is_empty();
            let dir = if use_memory || precond.is_some() {
                two_loop(&mask(&g), &pairs, use_memory, &free, precond, &mask)
            } else {
                -mask(&g)
            };
            let mut dir = dir;
            if g.dot(&dir) >= 0.0 {
                dir = -mask(&g);
            }
            let mut t = 1.0;
            for _ in 0..opts.max_backtracks {
                let xn = project(&(&x + &dir * t), lo, hi);
                let (fn_, gn) = f(&xn)?;
                let decrease = g.dot(&(&xn - &x));
                let armijo = fn_ <= fx + opts.armijo * decrease;
                // below round-off in f, fall back to a decrease in the projected gradient
                let flat = (fn_ - fx).abs() <= ROUNDOFF * (1.0 + fx.abs())
                    && projected_gradient_norm(&xn, &gn, lo, hi) < pg;
                if fn_.is_finite() && (armijo || flat) && decrease < 0.0 {
                    let s = &xn - &x;
                    let y = &gn - &g;
                    let sy = s.dot(&y);
                    if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
                        if pairs.len() == opts.memory {
                            pairs.pop_front();
                        }
                        pairs.push_back((s, y));
                    }
                    x = xn;
                    fx = fn_;
                    g = gn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
            pairs.clear();
        }
        pg = projected_gradient_norm(&x, &g, lo, hi);
        if !accepted {
            break;
        }
    }

    Ok(LbfgsResult {
        x,
        value: fx,
        iterations,
        pg_norm: pg,
    })
}

fn two_loop(
    q0: &DVector<f64>,
    pairs: &VecDeque<(DVector<f64>, DVector<f64>)>,
    use_memory: bool,
    free: &[bool],
    precond: Option<&DMatrix<f64>>,
    mask: &dyn Fn(&DVector<f64>) -> DVector<f64>,
) -> DVector<f64> {
    let mut q = q0.clone();
    let masked: Vec<(DVector<f64>, DVector<f64>, f64)> = if use_memory {
        pairs
            .iter()
            .filter_map(|(s, y)| {
                let (s, y) = (mask(s), mask(y));
                let sy = s.dot(&y);
                (sy > 1e-14).then(|| (s, y, 1.0 / sy))
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut alphas = vec![0.0; masked.len()];
    for (k, (s, y, rho)) in masked.iter().enumerate().rev() {
        alphas[k] = rho * s.dot(&q);
        q -= y * alphas[k];
    }
    let mut r = match precond {
        Some(p) => apply_inverse_on_free(p, &q, free),
        None => {
            let gamma = masked
                .last()
                .map(|(s, y, _)| s.dot(y) / y.norm_squared())
                .unwrap_or(1.0);
            q * gamma
        }
    };
    for (k, (s, y, rho)) in masked.iter().enumerate() {
        let beta = rho * y.dot(&r);
        r += s * (alphas[k] - beta);
    }
    -r
}

fn apply_inverse_on_free(p: &DMatrix<f64>, q: &DVector<f64>, free: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    let mut out = DVector::zeros(q.len());
    if idx.is_empty() {
        return out;
    }
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| p[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(idx.len(), |r, _| q[idx[r]]);
    let sol = match sub.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => rhs,
    };
    for (r, &i) in idx.iter().enumerate() {
        out[i] = sol[r];
    }
    out
}
