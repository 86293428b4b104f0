//! Maximum likelihood estimation of the normal-half-normal frontier:
//! optimizer driver, COLS initialization, explicit handling of the gamma = 0
//! boundary, and standard errors from the observed information.

use crate::cols::cols_fit;
use crate::dist::{boundary_loglik, loglik_design, LogLikEval};
use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;
use crate::model::{CompositeErrorParams, Dataset};
use crate::optim::{bfgs, BfgsOptions};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct MleOptions {
    /// Quasi-Newton iteration cap per start.
    pub max_iters: usize,
    /// Convergence threshold on the mean-log-likelihood gradient (inf norm).
    pub grad_tol: f64,
    /// Jittered restarts attempted when a start fails to converge.
    pub restarts: usize,
    /// Seed for restart jitter.
    pub seed: u64,
    /// Compute standard errors (finite-difference Hessian at the optimum).
    pub std_errors: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iters: 500,
            grad_tol: 1e-6,
            restarts: 3,
            seed: 0,
            std_errors: true,
        }
    }
}

/// A fitted frontier MLE.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub beta0: f64,
    /// Slopes on the non-intercept X columns.
    pub slopes: Vec<f64>,
    /// Coefficients on the selected Z columns.
    pub delta: Vec<f64>,
    pub sigma: CompositeErrorParams,
    pub loglik: f64,
    /// Standard errors for `(beta0, slopes.., delta..)`.
    pub coef_std_errors: Vec<f64>,
    /// Delta-method standard errors for `(sigma^2, gamma)`; `None` at the
    /// boundary where gamma is pinned.
    pub sigma_sq_std_error: Option<f64>,
    pub gamma_std_error: Option<f64>,
    pub converged: bool,
    pub boundary_solution: bool,
    pub iterations: usize,
    /// Residuals `y - beta0 - X beta - Z delta` at the estimate.
    pub residuals: Vec<f64>,
    /// Inf norm of the mean-log-likelihood gradient at an interior optimum.
    pub grad_norm: f64,
}

/// Maximize the frontier likelihood on `[X, Z_support]`.
///
/// Starts from the COLS estimate (or OLS with gamma = 0.5 under wrong skew),
/// runs BFGS on the unconstrained `(coefs, ln sigma^2, logit gamma)`
/// parameterization with jittered restarts, then compares the interior
/// candidate against the explicit gamma = 0 boundary candidate and returns
/// whichever attains the higher likelihood.
pub fn mle_fit(data: &Dataset, support: &[usize], opts: &MleOptions) -> Result<MleFit> {
    let w = data.design_with_support(support)?;
    let n = data.n();
    let k = w.n_cols();
    if n <= k + 1 {
        return Err(Error::SupportTooLarge(format!(
            "{k} design columns with n = {n}"
        )));
    }
    let cols = cols_fit(data, support)?;

    // Interior start at the COLS estimate; wrong skew falls back to OLS
    // coefficients with gamma = 0.5 and a variance consistent with mu2.
    let mut coef0 = cols.ols_coefficients.clone();
    let (sigma_sq0, gamma0) = if cols.wrong_skew || cols.sigma.gamma() < 1e-3 {
        let g = 0.5;
        (
            cols.mu2 / (1.0 - 2.0 / std::f64::consts::PI * g),
            g,
        )
    } else {
        coef0[0] = cols.beta0_corrected;
        (cols.sigma.sigma_sq(), cols.sigma.gamma().clamp(0.01, 0.99))
    };
    let mut theta0 = coef0;
    theta0.push(sigma_sq0.max(1e-8).ln());
    theta0.push((gamma0 / (1.0 - gamma0)).ln());

    let nf = n as f64;
    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        match loglik_design(theta, &data.y, &w) {
            Ok(LogLikEval { value, grad, .. }) => {
                (-value / nf, grad.iter().map(|g| -g / nf).collect())
            }
            Err(_) => (f64::INFINITY, vec![0.0; theta.len()]),
        }
    };

    let bopts = BfgsOptions {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
    };
    let mut best = bfgs(&objective, &theta0, &bopts);
    let mut total_iters = best.iterations;
    if !best.converged {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5fa_c0de);
        for _ in 0..opts.restarts {
            let jittered: Vec<f64> = theta0
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let scale = if j + 2 >= theta0.len() { 0.3 } else { 0.05 * (1.0 + v.abs()) };
                    v + scale * rng.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            let attempt = bfgs(&objective, &jittered, &bopts);
            total_iters += attempt.iterations;
            if attempt.converged || attempt.value < best.value {
                let done = attempt.converged;
                best = attempt;
                if done {
                    break;
                }
            }
        }
    }

    let interior_loglik = -best.value * nf;

    // Explicit gamma = 0 candidate: the Gaussian OLS fit.
    let boundary_value = boundary_loglik(&cols.residuals, cols.mu2);

    if boundary_value >= interior_loglik || !best.converged {
        if !best.converged && boundary_value < interior_loglik {
            return Err(Error::NoConvergence(total_iters));
        }
        return boundary_fit(data, &w, &cols, boundary_value, total_iters, opts);
    }

    // Interior solution.
    let theta = best.x;
    let sigma_sq = theta[k].exp();
    let gamma = 1.0 / (1.0 + (-theta[k + 1]).exp());
    let sigma = CompositeErrorParams::from_gamma(sigma_sq, gamma)?;
    let mut residuals = data.y.clone();
    for j in 0..k {
        crate::linalg::axpy(-theta[j], w.col(j), &mut residuals);
    }

    let (coef_se, sig_se, gam_se) = if opts.std_errors {
        std_errors_fd(&objective, &theta, nf, sigma_sq, gamma)
    } else {
        (vec![f64::NAN; k], None, None)
    };

    let p = data.p();
    Ok(MleFit {
        beta0: theta[0],
        slopes: theta[1..=p].to_vec(),
        delta: theta[p + 1..k].to_vec(),
        sigma,
        loglik: interior_loglik,
        coef_std_errors: coef_se,
        sigma_sq_std_error: sig_se,
        gamma_std_error: gam_se,
        converged: best.converged,
        boundary_solution: false,
        iterations: total_iters,
        residuals,
        grad_norm: best.grad_inf_norm,
    })
}

fn boundary_fit(
    data: &Dataset,
    w: &DesignMatrix,
    cols: &crate::cols::ColsFit,
    boundary_value: f64,
    iterations: usize,
    opts: &MleOptions,
) -> Result<MleFit> {
    let n = data.n() as f64;
    let k = w.n_cols();
    let p = data.p();
    let coef_se = if opts.std_errors {
        ols_coef_std_errors(w, &cols.residuals)?
    } else {
        vec![f64::NAN; k]
    };
    // Gaussian MLE variance of sigma^2-hat: 2 sigma^4 / n.
    let sig_se = Some((2.0 * cols.mu2 * cols.mu2 / n).sqrt());
    Ok(MleFit {
        beta0: cols.ols_coefficients[0],
        slopes: cols.ols_coefficients[1..=p].to_vec(),
        delta: cols.ols_coefficients[p + 1..k].to_vec(),
        sigma: CompositeErrorParams::new(0.0, cols.mu2)?,
        loglik: boundary_value,
        coef_std_errors: coef_se,
        sigma_sq_std_error: sig_se,
        gamma_std_error: None,
        converged: true,
        boundary_solution: true,
        iterations,
        residuals: cols.residuals.clone(),
        grad_norm: f64::NAN,
    })
}

/// Classical OLS standard errors with the degrees-of-freedom correction.
pub fn ols_coef_std_errors(w: &DesignMatrix, residuals: &[f64]) -> Result<Vec<f64>> {
    let n = w.n_rows();
    let k = w.n_cols();
    let qr = crate::linalg::QrFactor::factor(w.values())?;
    let inv = qr.xtx_inverse();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let s2 = ssr / (n - k) as f64;
    Ok((0..k).map(|j| (s2 * inv.get(j, j)).sqrt()).collect())
}

type SeTriple = (Vec<f64>, Option<f64>, Option<f64>);

/// Observed-information standard errors: central finite differences of the
/// analytic gradient of the mean objective, scaled back to the sum, inverted,
/// and delta-method mapped to the `(sigma^2, gamma)` reporting scale.
fn std_errors_fd<F>(objective: &F, theta: &[f64], n: f64, sigma_sq: f64, gamma: f64) -> SeTriple
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let k = theta.len();
    let mut hess = vec![0.0; k * k];
    for j in 0..k {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let mut tp = theta.to_vec();
        tp[j] += h;
        let mut tm = theta.to_vec();
        tm[j] -= h;
        let (_, gp) = objective(&tp);
        let (_, gm) = objective(&tm);
        for i in 0..k {
            hess[i * k + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // Symmetrize and scale to the sum log-likelihood.
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (hess[i * k + j] + hess[j * k + i]);
            hess[i * k + j] = v;
            hess[j * k + i] = v;
        }
    }
    for v in hess.iter_mut() {
        *v *= n;
    }
    let cov = match invert_in_place(hess, k) {
        Some(c) => c,
        None => return (vec![f64::NAN; k - 2], None, None),
    };
    let mut coef_se = Vec::with_capacity(k - 2);
    for j in 0..k - 2 {
        let v = cov[j * k + j];
        coef_se.push(if v > 0.0 { v.sqrt() } else { f64::NAN });
    }
    let vs = cov[(k - 2) * k + (k - 2)];
    let vg = cov[(k - 1) * k + (k - 1)];
    // sigma^2 = exp(s) and gamma = sigmoid(g): diagonal Jacobian terms.
    let sig_se = if vs > 0.0 {
        Some(sigma_sq * vs.sqrt())
    } else {
        None
    };
    let gam_se = if vg > 0.0 {
        Some(gamma * (1.0 - gamma) * vg.sqrt())
    } else {
        None
    };
    (coef_se, sig_se, gam_se)
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
fn invert_in_place(mut a: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        inv[i * k + i] = 1.0;
    }
    for col in 0..k {
        let mut piv = col;
        for r in (col + 1)..k {
            if a[r * k + col].abs() > a[piv * k + col].abs() {
                piv = r;
            }
        }
        if a[piv * k + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..k {
                a.swap(col * k + j, piv * k + j);
                inv.swap(col * k + j, piv * k + j);
            }
        }
        let d = a[col * k + col];
        for j in 0..k {
            a[col * k + j] /= d;
            inv[col * k + j] /= d;
        }
        for r in 0..k {
            if r != col {
                let f = a[r * k + col];
                if f != 0.0 {
                    for j in 0..k {
                        a[r * k + j] -= f * a[col * k + j];
                        inv[r * k + j] -= f * inv[col * k + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Profile log-likelihood over a gamma grid: for each gamma the remaining
/// parameters are re-optimized. Used to diagnose boundary attraction.
pub fn profile_gamma(
    data: &Dataset,
    support: &[usize],
    gamma_grid: &[f64],
    opts: &MleOptions,
) -> Result<Vec<f64>> {
    let w = data.design_with_support(support)?;
    let n = data.n() as f64;
    let cols = cols_fit(data, support)?;
    let mut out = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParams(format!(
                "profile gamma {gamma} outside [0,1)"
            )));
        }
        if gamma == 0.0 {
            out.push(boundary_loglik(&cols.residuals, cols.mu2));
            continue;
        }
        let g_fixed = (gamma / (1.0 - gamma)).ln();
        let k = w.n_cols();
        // Free parameters: coefficients and ln sigma^2.
        let objective = |free: &[f64]| -> (f64, Vec<f64>) {
            let mut theta = free.to_vec();
            theta.insert(k + 1, g_fixed);
            match loglik_design(&theta, &data.y, &w) {
                Ok(ev) => {
                    let mut grad: Vec<f64> = ev.grad.iter().map(|g| -g / n).collect();
                    grad.remove(k + 1);
                    (-ev.value / n, grad)
                }
                Err(_) => (f64::INFINITY, vec![0.0; free.len()]),
            }
        };
        let mut start = cols.ols_coefficients.clone();
        start[0] = cols.beta0_corrected;
        start.push(
            (cols.mu2 / (1.0 - 2.0 / std::f64::consts::PI * gamma))
                .max(1e-8)
                .ln(),
        );
        let r = bfgs(
            &objective,
            &start,
            &BfgsOptions {
                max_iters: opts.max_iters,
                grad_tol: opts.grad_tol,
            },
        );
        out.push(-r.value * n);
    }
    Ok(out)
}
