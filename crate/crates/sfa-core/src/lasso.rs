//! Partially penalized LASSO: cyclic coordinate descent over a decreasing
//! penalty grid with warm starts, ten-fold cross-validation with the
//! one-standard-error rule, and the plug-in penalty rule.
//!
//! The solver standardizes columns internally (n-1 denominator) and centers
//! the response, so the intercept is implicit and never penalized. Reported
//! penalty levels follow the unnormalized objective
//! `||y - W theta||^2 + level * ||theta_penalized||_1` on the standardized
//! full-data design; internally the solver works with the 1/n-normalized
//! objective, i.e. `level_internal = level / n`.

use crate::error::{Error, Result};
use crate::linalg::{dot, DesignMatrix, Matrix, QrFactor};
use crate::model::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const COEF_TOL: f64 = 1e-8;
/// Duality-gap tolerance, relative to the null objective. Either this or the
/// coefficient-change rule stops a level; the gap certificate bounds the
/// sweep count in ill-conditioned near-interpolation regimes where
/// coordinate moves decay too slowly.
const GAP_TOL: f64 = 1e-8;
/// Sweeps between duality-gap evaluations (a gap pass costs one sweep).
const GAP_CHECK_EVERY: usize = 8;
const MAX_SWEEPS: usize = 100_000;
/// Sweep budget for interior path levels. Deep-overfit tail levels of a
/// path (active set near min(n, k), huge restricted condition number) can
/// stall both tolerance rules; the budget accepts the current iterate there.
/// Fits returned at a caller-selected level never use the budget.
const PATH_SWEEP_BUDGET: usize = 32;

/// How the penalty level is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyRule {
    Fixed(f64),
    CvMin,
    Cv1se,
    PlugIn,
}

/// Penalty structure: which columns are penalized and how the level is picked.
#[derive(Debug, Clone)]
pub struct PenaltyPlan {
    /// One flag per design column; `true` marks a penalized coefficient. An
    /// intercept column must be unpenalized.
    pub mask: Vec<bool>,
    pub rule: PenaltyRule,
    pub folds: usize,
    pub grid_size: usize,
    /// Optional explicit grid (external scale, strictly decreasing).
    pub grid: Option<Vec<f64>>,
    /// Seed for the cross-validation fold permutation.
    pub seed: u64,
}

impl PenaltyPlan {
    pub fn new(mask: Vec<bool>, rule: PenaltyRule) -> Self {
        PenaltyPlan {
            mask,
            rule,
            folds: 10,
            grid_size: 100,
            grid: None,
            seed: 0,
        }
    }

    /// Plan for a `[X, Z]` design: X unpenalized, Z penalized.
    pub fn penalize_suffix(total: usize, penalized: usize, rule: PenaltyRule) -> Self {
        let mut mask = vec![false; total];
        for m in mask.iter_mut().skip(total - penalized) {
            *m = true;
        }
        PenaltyPlan::new(mask, rule)
    }

    fn validate(&self, w: &DesignMatrix) -> Result<()> {
        if self.mask.len() != w.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries for {} columns",
                self.mask.len(),
                w.n_cols()
            )));
        }
        if w.has_intercept() && self.mask.first() == Some(&true) {
            return Err(Error::InvalidParams(
                "intercept column must be unpenalized".into(),
            ));
        }
        if self.mask.iter().all(|&m| m) && !w.has_intercept() {
            // Fully penalized plans are allowed (selection stages); nothing
            // to check beyond the mask length.
        }
        if let Some(g) = &self.grid {
            if g.is_empty() || g.windows(2).any(|p| p[1] >= p[0]) {
                return Err(Error::InvalidParams(
                    "explicit grid must be nonempty and strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A LASSO solution at one penalty level.
#[derive(Debug, Clone)]
pub struct LassoFit {
    /// Coefficients on the original scale, aligned with the design columns.
    pub coefficients: Vec<f64>,
    /// Fitted intercept (equals `coefficients[0]` when the design carries an
    /// explicit intercept column).
    pub intercept: f64,
    /// Design-column indices of nonzero penalized coefficients.
    pub support: Vec<usize>,
    /// External-scale penalty level.
    pub penalty_level: f64,
    pub cv_curve: Option<Vec<CvPoint>>,
}

impl LassoFit {
    pub fn predict_row(&self, w: &DesignMatrix, row: usize) -> f64 {
        let mut v = if w.has_intercept() { 0.0 } else { self.intercept };
        for j in 0..w.n_cols() {
            v += self.coefficients[j] * w.col(j)[row];
        }
        v
    }
}

/// Residuals of a fit on its design.
pub fn lasso_residuals(y: &[f64], w: &DesignMatrix, fit: &LassoFit) -> Vec<f64> {
    (0..y.len()).map(|i| y[i] - fit.predict_row(w, i)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CvPoint {
    pub level: f64,
    pub mean_error: f64,
    pub se_error: f64,
}

/// Cross-validation outcome.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub level_min: f64,
    pub level_1se: f64,
    pub curve: Vec<CvPoint>,
    pub grid: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Internal standardized problem
// ---------------------------------------------------------------------------

struct Problem {
    /// Standardized non-intercept columns.
    cols: Matrix,
    /// Centered response.
    yc: Vec<f64>,
    y_mean: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
    penalized: Vec<bool>,
    /// Zero-variance penalized columns pinned to zero (fold degeneracies).
    dropped: Vec<bool>,
    /// Internal column -> original design column.
    col_map: Vec<usize>,
    /// `(1/n) ||w_j||^2` per internal column.
    q: Vec<f64>,
    n: usize,
    /// QR of the unpenalized block for exact block updates.
    unpen: Vec<usize>,
    unpen_qr: Option<QrFactor>,
    /// Gram matrix `W'W` for cached-gradient coordinate checks.
    gram: Matrix,
    /// Null objective `(1/n)||yc||^2`, the duality-gap tolerance scale.
    null_obj: f64,
}

/// Mutable solver state: coefficients, residual, and the cached gradient
/// `g_j = (1/n) w_j' r`.
struct SolverState {
    theta: Vec<f64>,
    r: Vec<f64>,
    g: Vec<f64>,
}

impl Problem {
    fn build(y: &[f64], w: &DesignMatrix, mask: &[bool]) -> Result<Problem> {
        let n = w.n_rows();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "response length {} for {} rows",
                y.len(),
                n
            )));
        }
        if n < 2 {
            return Err(Error::EmptyData("need at least two observations".into()));
        }
        let y_mean = crate::linalg::mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

        let skip_intercept = w.has_intercept();
        let mut internal_cols: Vec<Vec<f64>> = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        let mut penalized = Vec::new();
        let mut dropped = Vec::new();
        let mut col_map = Vec::new();
        for j in 0..w.n_cols() {
            if skip_intercept && j == 0 {
                continue;
            }
            let col = w.col(j);
            let m = crate::linalg::mean(col);
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if sd == 0.0 {
                if !mask[j] {
                    return Err(Error::DegenerateFolds(format!(
                        "unpenalized column `{}` is constant in this sample",
                        w.column_names()[j]
                    )));
                }
                // Constant penalized column: carries no signal, pin to zero.
                internal_cols.push(vec![0.0; n]);
                means.push(m);
                scales.push(1.0);
                penalized.push(true);
                dropped.push(true);
                col_map.push(j);
                continue;
            }
            internal_cols.push(col.iter().map(|v| (v - m) / sd).collect());
            means.push(m);
            scales.push(sd);
            penalized.push(mask[j]);
            dropped.push(false);
            col_map.push(j);
        }
        let cols = Matrix::from_columns(&internal_cols)?;
        let k = cols.cols();
        let q: Vec<f64> = (0..k)
            .map(|j| dot(cols.col(j), cols.col(j)) / n as f64)
            .collect();
        let unpen: Vec<usize> = (0..k).filter(|&j| !penalized[j]).collect();
        let unpen_qr = if unpen.is_empty() {
            None
        } else {
            let block: Vec<Vec<f64>> = unpen.iter().map(|&j| cols.col(j).to_vec()).collect();
            let m = Matrix::from_columns(&block)?;
            Some(QrFactor::factor(&m).map_err(|e| {
                Error::DegenerateFolds(format!("unpenalized block not full rank: {e}"))
            })?)
        };
        let mut gram = Matrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = dot(cols.col(a), cols.col(b));
                gram.set(a, b, v);
                gram.set(b, a, v);
            }
        }
        let null_obj = dot(&yc, &yc) / n as f64;
        Ok(Problem {
            cols,
            yc,
            y_mean,
            means,
            scales,
            penalized,
            dropped,
            col_map,
            q,
            n,
            unpen,
            unpen_qr,
            gram,
            null_obj,
        })
    }

    fn k(&self) -> usize {
        self.cols.cols()
    }

    fn fresh_state(&self) -> SolverState {
        let mut st = SolverState {
            theta: vec![0.0; self.k()],
            r: self.yc.clone(),
            g: vec![0.0; self.k()],
        };
        self.refresh_gradient(&mut st);
        st
    }

    /// Recompute the cached gradient exactly from the residual.
    fn refresh_gradient(&self, st: &mut SolverState) {
        let nf = self.n as f64;
        for j in 0..self.k() {
            st.g[j] = dot(self.cols.col(j), &st.r) / nf;
        }
    }

    /// Exact least-squares step for the unpenalized block on the partial
    /// residual; updates state in place.
    fn unpenalized_exact_step(&self, st: &mut SolverState) -> Result<f64> {
        let qr = match &self.unpen_qr {
            Some(q) => q,
            None => return Ok(0.0),
        };
        // Add the current block contribution back into the residual.
        for &j in &self.unpen {
            if st.theta[j] != 0.0 {
                crate::linalg::axpy(st.theta[j], self.cols.col(j), &mut st.r);
            }
        }
        let sol = qr.solve(&st.r)?;
        let nf = self.n as f64;
        let mut max_change = 0.0f64;
        for (idx, &j) in self.unpen.iter().enumerate() {
            let delta = sol[idx] - st.theta[j];
            max_change = max_change.max(delta.abs());
            st.theta[j] = sol[idx];
            if sol[idx] != 0.0 {
                crate::linalg::axpy(-sol[idx], self.cols.col(j), &mut st.r);
            }
            if delta != 0.0 {
                crate::linalg::axpy(-delta / nf, self.gram.col(j), &mut st.g);
            }
        }
        Ok(max_change)
    }

    /// Largest internal level at which every penalized coefficient is zero.
    fn lambda_max(&self) -> Result<f64> {
        let mut st = self.fresh_state();
        self.unpenalized_exact_step(&mut st)?;
        self.refresh_gradient(&mut st);
        let mut lm = 0.0f64;
        for j in 0..self.k() {
            if self.penalized[j] && !self.dropped[j] {
                lm = lm.max(2.0 * st.g[j].abs());
            }
        }
        Ok(lm)
    }

    /// Path of solutions over a strictly decreasing internal grid, each level
    /// warm-started and sweep-budgeted. Returns the standardized coefficient
    /// matrix (levels x k).
    fn cd_path(
        &self,
        grid_int: &[f64],
        mut objective_trace: Option<&mut Vec<f64>>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut st = self.fresh_state();
        self.unpenalized_exact_step(&mut st)?;
        let mut out = Vec::with_capacity(grid_int.len());
        for &lam in grid_int {
            self.cd_solve_at(
                lam,
                &mut st,
                objective_trace.as_deref_mut(),
                Some(PATH_SWEEP_BUDGET),
            )?;
            out.push(st.theta.clone());
        }
        Ok(out)
    }

    fn objective(&self, lam: f64, st: &SolverState) -> f64 {
        let fit = dot(&st.r, &st.r) / self.n as f64;
        let pen: f64 = (0..self.k())
            .filter(|&j| self.penalized[j])
            .map(|j| st.theta[j].abs())
            .sum();
        fit + lam * pen
    }

    /// Duality-gap certificate: scale the residual into the dual-feasible set
    /// and compare objective values. Refreshes the cached gradient as a side
    /// effect, which also bounds drift from incremental updates.
    fn gap_converged(&self, lam: f64, st: &mut SolverState) -> Result<bool> {
        self.unpenalized_exact_step(&mut *st)?;
        self.refresh_gradient(st);
        let nf = self.n as f64;
        let mut worst = 0.0f64;
        for j in 0..self.k() {
            if self.penalized[j] && !self.dropped[j] {
                worst = worst.max(2.0 * st.g[j].abs());
            }
        }
        let scale = if lam > 0.0 { (worst / lam).max(1.0) } else { f64::INFINITY };
        let primal = self.objective(lam, st);
        if !scale.is_finite() {
            // lam = 0: pure least squares; stop on the gradient itself.
            return Ok(worst < GAP_TOL.sqrt());
        }
        let rr = dot(&st.r, &st.r) / nf;
        let ry = dot(&st.r, &self.yc) / nf;
        let dual = 2.0 * ry / scale - rr / (scale * scale);
        let gap = primal - dual;
        Ok(gap < GAP_TOL * self.null_obj.max(1.0))
    }

    /// Converge coordinate descent at one level from a warm start. A level is
    /// accepted when a sweep moves no coefficient by more than `COEF_TOL` or
    /// when the duality gap certifies `GAP_TOL`-optimality; with a sweep
    /// budget the current iterate is accepted once the budget is spent.
    fn cd_solve_at(
        &self,
        lam: f64,
        st: &mut SolverState,
        mut objective_trace: Option<&mut Vec<f64>>,
        budget: Option<usize>,
    ) -> Result<()> {
        let k = self.k();
        let half = 0.5 * lam;
        let nf = self.n as f64;
        let cap = budget.unwrap_or(MAX_SWEEPS);
        let mut sweeps = 0usize;
        let mut since_gap = 0usize;
        loop {
            // Full sweep over every coordinate.
            let mut max_change = self.unpenalized_exact_step(st)?;
            for j in 0..k {
                if !self.penalized[j] || self.dropped[j] {
                    continue;
                }
                max_change = max_change.max(self.coord_update(j, half, nf, st));
            }
            sweeps += 1;
            since_gap += 1;
            if let Some(trace) = objective_trace.as_deref_mut() {
                trace.push(self.objective(lam, st));
            }
            if max_change < COEF_TOL {
                return Ok(());
            }
            if since_gap >= GAP_CHECK_EVERY {
                since_gap = 0;
                if self.gap_converged(lam, st)? {
                    return Ok(());
                }
            }
            if sweeps >= cap {
                return if budget.is_some() {
                    Ok(())
                } else {
                    Err(Error::NoConvergence(sweeps))
                };
            }
            // Iterate the active set until stable, then re-check all.
            let active: Vec<usize> = (0..k)
                .filter(|&j| self.penalized[j] && st.theta[j] != 0.0)
                .collect();
            loop {
                let mut ch = self.unpenalized_exact_step(st)?;
                for &j in &active {
                    ch = ch.max(self.coord_update(j, half, nf, st));
                }
                sweeps += 1;
                since_gap += 1;
                if let Some(trace) = objective_trace.as_deref_mut() {
                    trace.push(self.objective(lam, st));
                }
                if ch < COEF_TOL {
                    break;
                }
                if since_gap >= GAP_CHECK_EVERY {
                    since_gap = 0;
                    if self.gap_converged(lam, st)? {
                        return Ok(());
                    }
                }
                if sweeps >= cap {
                    return if budget.is_some() {
                        Ok(())
                    } else {
                        Err(Error::NoConvergence(sweeps))
                    };
                }
            }
        }
    }

    #[inline]
    fn coord_update(&self, j: usize, half: f64, nf: f64, st: &mut SolverState) -> f64 {
        let old = st.theta[j];
        let g = st.g[j] + self.q[j] * old;
        let new = if g.abs() <= half {
            0.0
        } else {
            (g - half.copysign(g)) / self.q[j]
        };
        if new != old {
            let delta = new - old;
            crate::linalg::axpy(-delta, self.cols.col(j), &mut st.r);
            crate::linalg::axpy(-delta / nf, self.gram.col(j), &mut st.g);
            st.theta[j] = new;
        }
        (new - old).abs()
    }

    /// Map a standardized solution back to the original scale.
    fn unstandardize(&self, w: &DesignMatrix, theta: &[f64], level_ext: f64) -> LassoFit {
        let mut coefficients = vec![0.0; w.n_cols()];
        let mut intercept = self.y_mean;
        for (idx, &j) in self.col_map.iter().enumerate() {
            let c = theta[idx] / self.scales[idx];
            coefficients[j] = c;
            intercept -= c * self.means[idx];
        }
        if w.has_intercept() {
            coefficients[0] = intercept;
        }
        let support: Vec<usize> = self
            .col_map
            .iter()
            .enumerate()
            .filter(|&(idx, _)| self.penalized[idx] && theta[idx] != 0.0)
            .map(|(_, &j)| j)
            .collect();
        LassoFit {
            coefficients,
            intercept,
            support,
            penalty_level: level_ext,
            cv_curve: None,
        }
    }
}

fn default_grid(lambda_max_int: f64, n: usize, k: usize, size: usize) -> Vec<f64> {
    let lm = if lambda_max_int > 0.0 {
        lambda_max_int
    } else {
        1.0
    };
    let ratio: f64 = if n > k { 1e-4 } else { 1e-2 };
    let ln_hi = lm.ln();
    let ln_lo = (lm * ratio).ln();
    (0..size)
        .map(|i| {
            let t = if size == 1 {
                0.0
            } else {
                i as f64 / (size - 1) as f64
            };
            (ln_hi + t * (ln_lo - ln_hi)).exp()
        })
        .collect()
}

/// Decreasing external-scale grid for `(y, w, plan)`.
fn plan_grid(problem: &Problem, w: &DesignMatrix, plan: &PenaltyPlan) -> Result<Vec<f64>> {
    if let Some(g) = &plan.grid {
        return Ok(g.clone());
    }
    let lm = problem.lambda_max()?;
    Ok(
        default_grid(lm, problem.n, w.n_cols(), plan.grid_size.max(1))
            .into_iter()
            .map(|v| v * problem.n as f64)
            .collect(),
    )
}

/// Fit the whole regularization path.
///
/// Solutions are returned largest-penalty first, warm-started level to level,
/// with coefficients on the original scale.
pub fn lasso_path(y: &[f64], w: &DesignMatrix, plan: &PenaltyPlan) -> Result<Vec<LassoFit>> {
    plan.validate(w)?;
    let problem = Problem::build(y, w, &plan.mask)?;
    let grid_ext = plan_grid(&problem, w, plan)?;
    let nf = problem.n as f64;
    let grid_int: Vec<f64> = grid_ext.iter().map(|v| v / nf).collect();
    let path = problem.cd_path(&grid_int, None)?;
    Ok(path
        .iter()
        .zip(&grid_ext)
        .map(|(theta, &lv)| problem.unstandardize(w, theta, lv))
        .collect())
}

/// Convenience wrapper for a [`Dataset`]: the design is `[X, Z]` with X
/// unpenalized and Z penalized.
pub fn lasso_path_dataset(data: &Dataset, plan: &PenaltyPlan) -> Result<Vec<LassoFit>> {
    let w = data.x.hcat(&data.z)?;
    lasso_path(&data.y, &w, plan)
}

/// Fit at a single external-scale level, fully converged: a short geometric
/// warm-up path from `lambda_max` stabilizes the active set, then the target
/// level runs without a sweep budget.
pub fn lasso_fit_at(y: &[f64], w: &DesignMatrix, plan: &PenaltyPlan, level: f64) -> Result<LassoFit> {
    plan.validate(w)?;
    let problem = Problem::build(y, w, &plan.mask)?;
    let nf = problem.n as f64;
    let target = level / nf;
    let lm = problem.lambda_max()?;
    let mut st = problem.fresh_state();
    problem.unpenalized_exact_step(&mut st)?;
    if lm > target && target > 0.0 {
        // Geometric warm-up in ten steps.
        let steps = 10;
        for i in 0..steps {
            let t = i as f64 / steps as f64;
            let lam = (lm.ln() + t * (target.ln() - lm.ln())).exp();
            problem.cd_solve_at(lam, &mut st, None, Some(PATH_SWEEP_BUDGET))?;
        }
    }
    problem.cd_solve_at(target, &mut st, None, None)?;
    Ok(problem.unstandardize(w, &st.theta, level))
}

/// Cross-validation over the penalty grid.
///
/// Fold assignment is a seeded permutation cut into contiguous blocks; each
/// training fold is standardized on its own rows; the error curve is the
/// across-fold mean of fold-level mean squared prediction errors with its
/// standard error `sd / sqrt(folds)`. `level_1se` is the largest level whose
/// mean error is within one standard error of the minimum.
pub fn cv_select(y: &[f64], w: &DesignMatrix, plan: &PenaltyPlan) -> Result<CvSelection> {
    plan.validate(w)?;
    let n = w.n_rows();
    if plan.folds < 2 || n < plan.folds {
        return Err(Error::DegenerateFolds(format!(
            "{} folds for {n} observations",
            plan.folds
        )));
    }
    let problem = Problem::build(y, w, &plan.mask)?;
    let grid_ext = plan_grid(&problem, w, plan)?;
    let nf_levels = grid_ext.len();

    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    perm.shuffle(&mut rng);
    let fold_of = fold_assignment(&perm, plan.folds);

    let fold_errors: Vec<Vec<f64>> = (0..plan.folds)
        .into_par_iter()
        .map(|f| fold_error_curve(y, w, plan, &grid_ext, &fold_of, f))
        .collect::<Result<Vec<_>>>()?;

    let fcount = plan.folds as f64;
    let mut curve = Vec::with_capacity(nf_levels);
    for l in 0..nf_levels {
        let errs: Vec<f64> = fold_errors.iter().map(|fe| fe[l]).collect();
        let mean = crate::linalg::mean(&errs);
        let se = crate::linalg::sample_sd(&errs) / fcount.sqrt();
        curve.push(CvPoint {
            level: grid_ext[l],
            mean_error: mean,
            se_error: se,
        });
    }
    let (min_idx, one_se_idx) = select_from_curve(&curve);
    Ok(CvSelection {
        level_min: grid_ext[min_idx],
        level_1se: grid_ext[one_se_idx],
        curve,
        grid: grid_ext,
    })
}

/// Indices of the minimum-error level and the one-standard-error level in a
/// decreasing-level curve. Ties break toward the largest level: scanning from
/// index 0 and requiring strict improvement keeps the earliest (largest)
/// minimizer, and the 1se rule takes the first level within one standard
/// error of the minimum.
pub fn select_from_curve(curve: &[CvPoint]) -> (usize, usize) {
    let mut min_idx = 0;
    for (l, pt) in curve.iter().enumerate() {
        if pt.mean_error < curve[min_idx].mean_error {
            min_idx = l;
        }
    }
    let threshold = curve[min_idx].mean_error + curve[min_idx].se_error;
    let one_se_idx = curve
        .iter()
        .position(|pt| pt.mean_error <= threshold)
        .unwrap_or(min_idx);
    (min_idx, one_se_idx)
}

/// Contiguous blocks of a permutation, sizes balanced to within one.
fn fold_assignment(perm: &[usize], folds: usize) -> Vec<usize> {
    let n = perm.len();
    let mut fold_of = vec![0usize; n];
    let base = n / folds;
    let extra = n % folds;
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = f;
        }
        pos += size;
    }
    fold_of
}

fn fold_error_curve(
    y: &[f64],
    w: &DesignMatrix,
    plan: &PenaltyPlan,
    grid_ext: &[f64],
    fold_of: &[usize],
    fold: usize,
) -> Result<Vec<f64>> {
    let n = y.len();
    let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
    let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
    let w_train = w.take_rows(&train_rows);
    let y_train: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    let problem = Problem::build(&y_train, &w_train, &plan.mask)?;
    // Shared per-observation penalty scale across folds: the external grid is
    // defined against the full-data n.
    let grid_int: Vec<f64> = grid_ext.iter().map(|v| v / n as f64).collect();
    let path = problem.cd_path(&grid_int, None)?;

    let mut errs = Vec::with_capacity(grid_ext.len());
    for (theta, &lv) in path.iter().zip(grid_ext) {
        let fit = problem.unstandardize(&w_train, theta, lv);
        let mut sse = 0.0;
        for &i in &test_rows {
            let mut pred = fit.intercept;
            for (idx, &j) in problem.col_map.iter().enumerate() {
                let c = fit.coefficients[j];
                if c != 0.0 {
                    pred += c * w.col(j)[i];
                }
                let _ = idx;
            }
            let e = y[i] - pred;
            sse += e * e;
        }
        errs.push(sse / test_rows.len() as f64);
    }
    Ok(errs)
}

/// The plug-in level formula on the external scale:
/// `2 c sqrt(n) Phi^{-1}(1 - alpha/(2d)) sigma_hat` with `c = 1.1` and
/// `alpha = 0.1 / ln n`.
pub fn plugin_level(n: usize, d: usize, sigma_hat: f64) -> Result<f64> {
    if n < 2 || d == 0 {
        return Err(Error::InvalidParams(format!(
            "plug-in level needs n >= 2 and d >= 1, got n = {n}, d = {d}"
        )));
    }
    if sigma_hat == 0.0 {
        return Ok(0.0);
    }
    let c = 1.1;
    let alpha = 0.1 / (n as f64).ln();
    let q = crate::dist::norm_quantile(1.0 - alpha / (2.0 * d as f64))?;
    Ok(2.0 * c * (n as f64).sqrt() * q * sigma_hat)
}

/// Iterated plug-in penalty: `sigma_hat` starts from the residuals of the
/// unpenalized block alone and is refined through five LASSO refits.
pub fn plugin_penalty(y: &[f64], w: &DesignMatrix, plan: &PenaltyPlan) -> Result<f64> {
    plan.validate(w)?;
    let problem = Problem::build(y, w, &plan.mask)?;
    let n = problem.n;
    let d = plan.mask.iter().filter(|&&m| m).count();
    // Initial scale: residual RMSE from the unpenalized block only.
    let mut st = problem.fresh_state();
    problem.unpenalized_exact_step(&mut st)?;
    let mut sigma_hat = (dot(&st.r, &st.r) / n as f64).sqrt();
    let mut level = plugin_level(n, d, sigma_hat)?;
    for _ in 0..5 {
        if sigma_hat < 1e-14 {
            return Ok(0.0);
        }
        level = plugin_level(n, d, sigma_hat)?;
        let fit = lasso_fit_at(y, w, plan, level)?;
        let res = lasso_residuals(y, w, &fit);
        sigma_hat = (dot(&res, &res) / n as f64).sqrt();
    }
    Ok(level)
}

/// Run the plan end to end and return the selected fit (with the CV curve
/// attached when cross-validation chose the level).
pub fn solve_plan(y: &[f64], w: &DesignMatrix, plan: &PenaltyPlan) -> Result<LassoFit> {
    match plan.rule {
        PenaltyRule::Fixed(level) => lasso_fit_at(y, w, plan, level),
        PenaltyRule::PlugIn => {
            let level = plugin_penalty(y, w, plan)?;
            lasso_fit_at(y, w, plan, level)
        }
        PenaltyRule::CvMin | PenaltyRule::Cv1se => {
            let sel = cv_select(y, w, plan)?;
            let level = if plan.rule == PenaltyRule::CvMin {
                sel.level_min
            } else {
                sel.level_1se
            };
            let mut fit = lasso_fit_at(y, w, plan, level)?;
            fit.cv_curve = Some(sel.curve);
            Ok(fit)
        }
    }
}

/// Karush-Kuhn-Tucker residuals of a fit, evaluated on the standardized
/// internal problem at the fit's level.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// `max_j | (2/n) w_j' r - level sign(theta_j) |` over nonzero penalized.
    pub worst_nonzero: f64,
    /// `max_j ( |(2/n) w_j' r| - level )_+` over zero penalized.
    pub worst_zero: f64,
    /// `max_j |(2/n) w_j' r|` over unpenalized coordinates.
    pub worst_unpenalized: f64,
}

pub fn kkt_check(y: &[f64], w: &DesignMatrix, plan: &PenaltyPlan, fit: &LassoFit) -> Result<KktReport> {
    let problem = Problem::build(y, w, &plan.mask)?;
    let nf = problem.n as f64;
    let lam = fit.penalty_level / nf;
    // Reconstruct the standardized coefficients and residual.
    let mut r = problem.yc.clone();
    let mut theta = vec![0.0; problem.k()];
    for (idx, &j) in problem.col_map.iter().enumerate() {
        let c = fit.coefficients[j] * problem.scales[idx];
        theta[idx] = c;
        if c != 0.0 {
            crate::linalg::axpy(-c, problem.cols.col(idx), &mut r);
        }
    }
    let mut worst_nonzero = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut worst_unpen = 0.0f64;
    for j in 0..problem.k() {
        if problem.dropped[j] {
            continue;
        }
        let g = 2.0 / nf * dot(problem.cols.col(j), &r);
        if !problem.penalized[j] {
            worst_unpen = worst_unpen.max(g.abs());
        } else if theta[j] != 0.0 {
            worst_nonzero = worst_nonzero.max((g - lam * theta[j].signum()).abs());
        } else {
            worst_zero = worst_zero.max((g.abs() - lam).max(0.0));
        }
    }
    Ok(KktReport {
        worst_nonzero,
        worst_zero,
        worst_unpenalized: worst_unpen,
    })
}

#[cfg(test)]
pub(crate) fn cd_objective_trace(
    y: &[f64],
    w: &DesignMatrix,
    plan: &PenaltyPlan,
    level: f64,
) -> Result<Vec<f64>> {
    let problem = Problem::build(y, w, &plan.mask)?;
    let mut trace = Vec::new();
    problem.cd_path(&[level / problem.n as f64], Some(&mut trace))?;
    Ok(trace)
}
