//! Small damped least-squares solver (Levenberg-Marquardt with a
//! forward-difference Jacobian). Used by the resonance and power-scan fits,
//! both of which have at most a handful of parameters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative step used for the forward-difference Jacobian.
    pub fd_step: f64,
    pub initial_damping: f64,
    /// Convergence threshold on the relative decrease of the cost.
    pub ftol: f64,
    /// Convergence threshold on the relative parameter step.
    pub xtol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            fd_step: 1e-7,
            initial_damping: 1e-3,
            ftol: 1e-14,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals at the solution.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LsqSolution {
    pub fn residual_norm(&self) -> f64 {
        self.cost.sqrt()
    }
}

/// Forward-difference Jacobian of `f` at `x`, shape (n_residuals, n_params).
pub fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1e-8);
        xp[j] = x[j] + h;
        let rp = f(&xp);
        for i in 0..m {
            jac[(i, j)] = (rp[i] - r0[i]) / h;
        }
        xp[j] = x[j];
    }
    jac
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `Σ f(x)_i²` starting at `x0`.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LsqOptions) -> Result<LsqSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    let mut r = f(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("residuals are not finite at the starting point".into()));
    }
    let mut c = cost(&r);
    let mut lambda = opts.initial_damping;
    let n = x.len();

    for iter in 0..opts.max_iterations {
        let jac = jacobian(&f, &x, &r, opts.fd_step);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = f(&xn);
            let cn = cost(&rn);
            if cn.is_finite() && cn <= c {
                let rel_step = step
                    .iter()
                    .zip(&x)
                    .map(|(s, v)| (s / v.abs().max(1e-30)).abs())
                    .fold(0.0, f64::max);
                let rel_drop = (c - cn) / c.max(1e-300);
                x = xn;
                r = rn;
                c = cn;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < opts.ftol || rel_step < opts.xtol || c == 0.0 {
                    return Ok(LsqSolution {
                        params: x,
                        residuals: r,
                        cost: c,
                        iterations: iter + 1,
                        converged: true,
                    });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: x is a (local) minimum.
            return Ok(LsqSolution {
                params: x,
                residuals: r,
                cost: c,
                iterations: iter + 1,
                converged: true,
            });
        }
    }
    Ok(LsqSolution {
        params: x,
        residuals: r,
        cost: c,
        iterations: opts.max_iterations,
        converged: false,
    })
}

/// Parameter covariance `s² (JᵀJ)⁻¹` with `s² = cost / (m - n)`.
pub fn covariance(jac: &DMatrix<f64>, cost: f64) -> Option<DMatrix<f64>> {
    let (m, n) = jac.shape();
    if m <= n {
        return None;
    }
    let s2 = cost / (m - n) as f64;
    let jtj = jac.transpose() * jac;
    jtj.try_inverse().map(|inv| inv * s2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_decay() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-1.3 * x).exp() + 0.2).collect();
        let f = |p: &[f64]| -> Vec<f64> {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| p[0] * (-p[1] * x).exp() + p[2] - y)
                .collect()
        };
        let sol = minimize(f, &[1.0, 0.5, 0.0], &LsqOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.params[0] - 2.5).abs() < 1e-6);
        assert!((sol.params[1] - 1.3).abs() < 1e-6);
        assert!((sol.params[2] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn non_finite_start_is_a_fit_error() {
        let f = |_: &[f64]| vec![f64::NAN];
        assert!(matches!(
            minimize(f, &[1.0], &LsqOptions::default()),
            Err(Error::Fit(_))
        ));
    }
}
