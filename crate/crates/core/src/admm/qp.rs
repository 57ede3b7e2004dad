//! Primal active-set method for `min ½xᵀHx + gᵀx` subject to `lo ≤ x ≤ hi`
//! with `H` symmetric positive definite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Norm of `x − Π(x − ∇)`, the stationarity measure on a box.
pub fn projected_gradient_norm(x: &DVector<f64>, grad: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    x.iter()
        .zip(grad.iter())
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            let p = (xi - gi).clamp(lo[i], hi[i]);
            (xi - p).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    x0: &DVector<f64>,
    max_steps: usize,
) -> Result<DVector<f64>> {
    let n = g.len();
    let mut x = DVector::from_fn(n, |i, _| x0[i].clamp(lo[i], hi[i]));
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if x[i] <= lo[i] {
                Bound::Lower
            } else if x[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    for _ in 0..max_steps.max(1) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        // equality-constrained minimizer on the current working set
        let mut target = x.clone();
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                let i = free[r];
                let mut s = -g[i];
                for j in 0..n {
                    if state[j] != Bound::Free {
                        s -= h[(i, j)] * x[j];
                    }
                }
                s
            });
            let sol = hff
                .cholesky()
                .ok_or(Error::Singular("box QP reduced Hessian"))?
                .solve(&rhs);
            for (r, &i) in free.iter().enumerate() {
                target[i] = sol[r];
            }
        }

        // largest feasible fraction of the step
        let mut t = 1.0;
        let mut blocking = None;
        for &i in &free {
            let p = target[i] - x[i];
            if p < 0.0 && target[i] < lo[i] {
                let ti = (lo[i] - x[i]) / p;
                if ti < t {
                    t = ti;
                    blocking = Some((i, Bound::Lower));
                }
            } else if p > 0.0 && target[i] > hi[i] {
                let ti = (hi[i] - x[i]) / p;
                if ti < t {
                    t = ti;
                    blocking = Some((i, Bound::Upper));
                }
            }
        }
        for &i in &free {
            x[i] += t * (target[i] - x[i]);
        }

        if let Some((i, b)) = blocking {
            x[i] = if b == Bound::Lower { lo[i] } else { hi[i] };
            state[i] = b;
            continue;
        }

        // full step taken: check multiplier signs on the working set
        let grad = h * &x + g;
        let mut worst = None;
        let mut worst_val = 0.0;
        for i in 0..n {
            let violation = match state[i] {
                Bound::Lower => -grad[i],
                Bound::Upper => grad[i],
                Bound::Free => 0.0,
            };
            if violation > worst_val {
                worst_val = violation;
                worst = Some(i);
            }
        }
        match worst {
            Some(i) if worst_val > 1e-14 * (1.0 + grad.amax()) => state[i] = Bound::Free,
            _ => return Ok(x),
        }
    }
    Err(Error::QpIterationCap(max_steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_solution_matches_linear_solve() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = DVector::from_vec(vec![-1.0, -2.0]);
        let lo = DVector::from_element(2, -10.0);
        let hi = DVector::from_element(2, 10.0);
        let x = solve_box_qp(&h, &g, &lo, &hi, &DVector::zeros(2), 20).unwrap();
        let exact = h.clone().lu().solve(&(-&g)).unwrap();
        assert!((x - exact).amax() < 1e-14);
    }

    #[test]
    fn clamped_coordinate_satisfies_sign_condition() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let g = DVector::from_vec(vec![-4.0, 0.5]);
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        let x = solve_box_qp(&h, &g, &lo, &hi, &DVector::zeros(2), 20).unwrap();
        assert_eq!(x[0], 1.0);
        let grad = &h * &x + &g;
        assert!(grad[0] <= 0.0);
        assert!((x[1] + 0.25).abs() < 1e-15);
        assert!(projected_gradient_norm(&x, &grad, &lo, &hi) < 1e-14);
    }

    #[test]
    fn starting_at_upper_bound_can_release() {
        let h = DMatrix::identity(3, 3);
        let g = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let lo = DVector::from_element(3, -1.0);
        let hi = DVector::from_element(3, 1.0);
        let x0 = DVector::from_vec(vec![1.0, -1.0, 0.3]);
        let x = solve_box_qp(&h, &g, &lo, &hi, &x0, 30).unwrap();
        assert!(x.amax() < 1e-15);
    }
}
