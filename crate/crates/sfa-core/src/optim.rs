//! Dense BFGS minimizer with a strong-Wolfe line search, used by the MLE
//! driver. Objectives supply value and analytic gradient together.

/// Termination settings.
#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Convergence when `max_j |g_j| < grad_tol`.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iters: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimize `f` from `x0`. `f` returns `(value, gradient)`; non-finite values
/// are treated as +inf by the line search.
pub fn bfgs<F>(f: &F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let k = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = f(&x);
    // Inverse Hessian approximation, identity to start.
    let mut h = vec![0.0; k * k];
    for i in 0..k {
        h[i * k + i] = 1.0;
    }
    let mut iterations = 0;
    let mut converged = inf_norm(&gx) < opts.grad_tol;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        // d = -H g
        let mut d = vec![0.0; k];
        for i in 0..k {
            let mut s = 0.0;
            for j in 0..k {
                s += h[i * k + j] * gx[j];
            }
            d[i] = -s;
        }
        let mut dg: f64 = d.iter().zip(&gx).map(|(a, b)| a * b).sum();
        if !(dg < 0.0) {
            // Not a descent direction; reset to steepest descent.
            for i in 0..k {
                h[i * k + i] = 1.0;
                for j in 0..k {
                    if i != j {
                        h[i * k + j] = 0.0;
                    }
                }
            }
            d = gx.iter().map(|g| -g).collect();
            dg = -gx.iter().map(|g| g * g).sum::<f64>();
            if dg == 0.0 {
                break;
            }
        }

        let (alpha, fnew, gnew) = match wolfe_search(f, &x, fx, &gx, &d, dg) {
            Some(r) => r,
            None => break,
        };

        let mut s = vec![0.0; k];
        let mut yv = vec![0.0; k];
        for i in 0..k {
            s[i] = alpha * d[i];
            yv[i] = gnew[i] - gx[i];
        }
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yy: f64 = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * ss * yy {
            bfgs_update(&mut h, &s, &yv, sy, k);
        }

        for i in 0..k {
            x[i] += s[i];
        }
        fx = fnew;
        gx = gnew;
        converged = inf_norm(&gx) < opts.grad_tol;
    }

    let grad_inf_norm = inf_norm(&gx);
    BfgsResult {
        x,
        value: fx,
        grad: gx,
        grad_inf_norm,
        iterations,
        converged,
    }
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, k: usize) {
    let rho = 1.0 / sy;
    // t = H y
    let mut t = vec![0.0; k];
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            acc += h[i * k + j] * y[j];
        }
        t[i] = acc;
    }
    let yty: f64 = y.iter().zip(&t).map(|(a, b)| a * b).sum();
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += -rho * (s[i] * t[j] + t[i] * s[j])
                + rho * rho * yty * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

/// Strong Wolfe line search (bracket and zoom). Returns `(alpha, f, grad)`.
fn wolfe_search<F>(
    f: &F,
    x: &[f64],
    f0: f64,
    _g0: &[f64],
    d: &[f64],
    dg0: f64,
) -> Option<(f64, f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let eval = |alpha: f64| -> (f64, Vec<f64>, f64) {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (v, g) = f(&xt);
        let slope: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
        (v, g, slope)
    };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut slope_prev = dg0;
    let mut alpha = 1.0;
    let max_expand = 20;

    for i in 0..max_expand {
        let (fa, ga, slope_a) = eval(alpha);
        if !fa.is_finite() || fa > f0 + C1 * alpha * dg0 || (i > 0 && fa >= f_prev) {
            return zoom(
                f, x, f0, dg0, d, alpha_prev, f_prev, slope_prev, alpha, fa,
            );
        }
        if slope_a.abs() <= -C2 * dg0 {
            return Some((alpha, fa, ga));
        }
        if slope_a >= 0.0 {
            return zoom(f, x, f0, dg0, d, alpha, fa, slope_a, alpha_prev, f_prev);
        }
        alpha_prev = alpha;
        f_prev = fa;
        slope_prev = slope_a;
        alpha *= 2.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    f: &F,
    x: &[f64],
    f0: f64,
    dg0: f64,
    d: &[f64],
    mut lo: f64,
    mut f_lo: f64,
    mut slope_lo: f64,
    mut hi: f64,
    mut _f_hi: f64,
) -> Option<(f64, f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let eval = |alpha: f64| -> (f64, Vec<f64>, f64) {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (v, g) = f(&xt);
        let slope: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
        (v, g, slope)
    };

    for _ in 0..50 {
        // Bisection with a quadratic-interpolation bias toward lo.
        let alpha = 0.5 * (lo + hi);
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            let (fa, ga, _) = eval(alpha);
            return if fa.is_finite() {
                Some((alpha, fa, ga))
            } else {
                None
            };
        }
        let (fa, ga, slope_a) = eval(alpha);
        if !fa.is_finite() || fa > f0 + C1 * alpha * dg0 || fa >= f_lo {
            hi = alpha;
            _f_hi = fa;
        } else {
            if slope_a.abs() <= -C2 * dg0 {
                return Some((alpha, fa, ga));
            }
            if slope_a * (hi - lo) >= 0.0 {
                hi = lo;
                _f_hi = f_lo;
            }
            lo = alpha;
            f_lo = fa;
            slope_lo = slope_a;
        }
    }
    // Fall back to the best admissible point found.
    let _ = (slope_lo,);
    if f_lo < f0 {
        let (fa, ga, _) = eval(lo);
        Some((lo, fa, ga))
    } else {
        None
    }
}
