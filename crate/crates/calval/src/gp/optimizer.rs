//! Gradient-free hyperparameter optimization: log marginal likelihood and a
//! bounded Nelder-Mead simplex search.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::gp::kernel::ArdKernel;
use crate::stats::LN_2PI;

/// Log marginal likelihood of centered targets `y` under the kernel, or
/// `None` when the covariance cannot be factorized.
pub fn log_marginal_likelihood(
    kernel: &ArdKernel,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Option<f64> {
    let k = kernel.cov_matrix(x);
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Some(-0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * LN_2PI)
}

/// Result of a Nelder-Mead run.
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Minimize `f` with the Nelder-Mead simplex from `x0`, clamping every
/// probe into `bounds`.
///
/// The initial simplex perturbs each coordinate by `init_step`. Iteration
/// stops at `max_iters` or when the simplex function values collapse within
/// `ftol`.
pub fn nelder_mead<F>(
    f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    init_step: f64,
    max_iters: usize,
    ftol: f64,
) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let d = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for (xi, (lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = xi.clamp(*lo, *hi);
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut base = x0.to_vec();
    clamp(&mut base);
    simplex.push(base.clone());
    for i in 0..d {
        let mut v = base.clone();
        let span = bounds[i].1 - bounds[i].0;
        let step = init_step.min(0.45 * span);
        // Step toward the side with more room so the vertex stays distinct.
        if v[i] + step <= bounds[i].1 {
            v[i] += step;
        } else {
            v[i] -= step;
        }
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap_or(std::cmp::Ordering::Equal));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let refv: Vec<f64> = order.iter().map(|&i| fv[i]).collect();
        simplex = reordered;
        fv = refv;

        if (fv[d] - fv[0]).abs() <= ftol * (1.0 + fv[0].abs()) {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let probe = |coef: f64| -> (Vec<f64>, f64) {
            let mut v: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clamp(&mut v);
            let fx = f(&v);
            (v, fx)
        };

        let (xr, fr) = probe(1.0);
        if fr < fv[0] {
            let (xe, fe) = probe(2.0);
            if fe < fr {
                simplex[d] = xe;
                fv[d] = fe;
            } else {
                simplex[d] = xr;
                fv[d] = fr;
            }
        } else if fr < fv[d - 1] {
            simplex[d] = xr;
            fv[d] = fr;
        } else {
            let (xc, fc) = if fr < fv[d] { probe(0.5) } else { probe(-0.5) };
            if fc < fv[d].min(fr) {
                simplex[d] = xc;
                fv[d] = fc;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=d {
                    let best = simplex[0].clone();
                    for j in 0..d {
                        simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                    }
                    fv[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=d {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    SimplexResult {
        x: simplex[best].clone(),
        f: fv[best],
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimizes_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let r = nelder_mead(f, &[0.0, 0.0], &[(-5.0, 5.0), (-5.0, 5.0)], 0.5, 400, 1e-12);
        assert_relative_eq!(r.x[0], 1.5, epsilon = 1e-4);
        assert_relative_eq!(r.x[1], -0.5, epsilon = 1e-4);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0] + 10.0).powi(2);
        let r = nelder_mead(f, &[0.5], &[(-1.0, 1.0)], 0.3, 200, 1e-12);
        assert!(r.x[0] >= -1.0);
        assert_relative_eq!(r.x[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn minimizes_rosenbrock_reasonably() {
        let f = |x: &[f64]| {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        };
        let r = nelder_mead(f, &[-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)], 0.5, 2000, 1e-14);
        assert!(r.f < 1e-6, "rosenbrock minimum not reached: f = {}", r.f);
    }

    #[test]
    fn lml_matches_direct_computation_for_one_point() {
        // One observation with unit total variance: LML reduces to the
        // standard normal log density of y.
        let kernel = ArdKernel {
            signal_variance: 0.5,
            length_scales: vec![1.0],
            white_variance: 0.5,
        };
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_row_slice(&[0.7]);
        let lml = log_marginal_likelihood(&kernel, &x, &y).unwrap();
        assert_relative_eq!(
            lml,
            -0.5 * (LN_2PI + 0.7f64.powi(2)),
            epsilon = 1e-12
        );
    }
}
