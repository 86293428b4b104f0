//! Post-Single and Post-Double LASSO pipelines: selection stages, the
//! union-of-supports rule, second-stage COLS/MLE fits, and two-fold
//! cross-fitting.

use crate::cols::cols_fit;
use crate::dist::efficiency_scores;
use crate::error::{Error, Result};
use crate::lasso::{solve_plan, PenaltyPlan, PenaltyRule};
use crate::linalg::DesignMatrix;
use crate::mle::{mle_fit, ols_coef_std_errors, MleFit, MleOptions};
use crate::model::{CompositeErrorParams, Dataset, FrontierFit, Stage2, StdErrors};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Which selection policy produced a support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    /// No environmental variables.
    None,
    /// All environmental variables, no selection.
    All,
    Psl,
    Pdl,
}

impl std::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectorKind::None => write!(f, "NoZ"),
            SelectorKind::All => write!(f, "AllZ"),
            SelectorKind::Psl => write!(f, "PSL"),
            SelectorKind::Pdl => write!(f, "PDL"),
        }
    }
}

/// Penalty configuration shared by the selection stages.
#[derive(Debug, Clone)]
pub struct SelectorPlan {
    pub rule: PenaltyRule,
    pub folds: usize,
    pub grid_size: usize,
    pub seed: u64,
}

impl Default for SelectorPlan {
    fn default() -> Self {
        SelectorPlan {
            rule: PenaltyRule::Cv1se,
            folds: 10,
            grid_size: 100,
            seed: 0,
        }
    }
}

impl SelectorPlan {
    fn stage_plan(&self, mask: Vec<bool>, stage: u64) -> PenaltyPlan {
        let mut p = PenaltyPlan::new(mask, self.rule);
        p.folds = self.folds;
        p.grid_size = self.grid_size;
        p.seed = self.seed.wrapping_add(stage);
        p
    }
}

/// Outcome of a selection pass.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Union support: indices into the Z block, sorted.
    pub support: Vec<usize>,
    /// One support per LASSO stage (one for PSL, `1 + p` for PDL).
    pub per_stage_supports: Vec<Vec<usize>>,
    pub method: SelectorKind,
    pub penalty_levels_used: Vec<f64>,
}

impl SelectionResult {
    pub fn none(_data: &Dataset) -> SelectionResult {
        SelectionResult {
            support: Vec::new(),
            per_stage_supports: Vec::new(),
            method: SelectorKind::None,
            penalty_levels_used: Vec::new(),
        }
    }

    pub fn all(data: &Dataset) -> SelectionResult {
        SelectionResult {
            support: (0..data.d()).collect(),
            per_stage_supports: Vec::new(),
            method: SelectorKind::All,
            penalty_levels_used: Vec::new(),
        }
    }
}

/// Post-Single LASSO selection: one LASSO of `y` on `[X unpenalized,
/// Z penalized]`; the support is the set of nonzero Z coefficients.
pub fn psl_select(data: &Dataset, plan: &SelectorPlan) -> Result<SelectionResult> {
    let w = data.x.hcat(&data.z)?;
    let offset = data.x.n_cols();
    let pplan = plan.stage_plan(
        (0..w.n_cols()).map(|j| j >= offset).collect(),
        0,
    );
    let fit = solve_plan(&data.y, &w, &pplan)?;
    let support: Vec<usize> = fit.support.iter().map(|&j| j - offset).collect();
    Ok(SelectionResult {
        support,
        per_stage_supports: vec![fit.support.iter().map(|&j| j - offset).collect()],
        method: SelectorKind::Psl,
        penalty_levels_used: vec![fit.penalty_level],
    })
}

/// Post-Double LASSO selection: one LASSO of `y` on Z (X excluded), then one
/// LASSO of each mandatory column on Z; the reported support is the union of
/// all stage supports. Every Z column is penalized in every stage.
pub fn pdl_select(data: &Dataset, plan: &SelectorPlan) -> Result<SelectionResult> {
    let p = data.p();
    let has_int = data.x.has_intercept();
    // Stage responses: y first, then each non-intercept X column.
    let responses: Vec<(u64, Vec<f64>)> = std::iter::once((0u64, data.y.clone()))
        .chain((0..p).map(|l| {
            let col = data.x.col(l + usize::from(has_int)).to_vec();
            (l as u64 + 1, col)
        }))
        .collect();

    let stage_results: Vec<(Vec<usize>, f64)> = responses
        .par_iter()
        .map(|(stage, resp)| {
            let pplan = plan.stage_plan(vec![true; data.d()], *stage);
            let fit = solve_plan(resp, &data.z, &pplan)?;
            Ok((fit.support.clone(), fit.penalty_level))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut union: Vec<usize> = stage_results
        .iter()
        .flat_map(|(s, _)| s.iter().copied())
        .collect();
    union.sort_unstable();
    union.dedup();
    Ok(SelectionResult {
        support: union,
        per_stage_supports: stage_results.iter().map(|(s, _)| s.clone()).collect(),
        method: SelectorKind::Pdl,
        penalty_levels_used: stage_results.iter().map(|(_, l)| *l).collect(),
    })
}

/// Options forwarded to the second-stage estimator.
#[derive(Debug, Clone, Default)]
pub struct PostFitOptions {
    pub mle: MleOptions,
}

/// Second-stage estimator on the selected support: COLS or MLE restricted to
/// `[X, Z_support]`.
pub fn post_fit(
    data: &Dataset,
    selection: &SelectionResult,
    stage2: Stage2,
    opts: &PostFitOptions,
) -> Result<FrontierFit> {
    let support = &selection.support;
    let n = data.n();
    if n <= 1 + data.p() + support.len() {
        return Err(Error::SupportTooLarge(format!(
            "support of {} with p = {} and n = {n}",
            support.len(),
            data.p()
        )));
    }
    let method = format!("{}-{}", selection.method, stage2);
    let w = data.design_with_support(support)?;
    let mut names = w.column_names().to_vec();
    if !names.is_empty() && w.has_intercept() {
        names[0] = "const".into();
    }
    let fit = match stage2 {
        Stage2::Cols => {
            let cf = cols_fit(data, support)?;
            let mut coefficients = cf.ols_coefficients.clone();
            coefficients[0] = cf.beta0_corrected;
            let eff = efficiency_scores(&cf.composite_residuals(), &cf.sigma);
            FrontierFit {
                method,
                coefficient_names: names,
                coefficients,
                std_errors: StdErrors {
                    coefficients: ols_coef_std_errors(&w, &cf.residuals)?,
                    sigma_sq: None,
                    gamma: None,
                },
                support: support.clone(),
                sigma: cf.sigma,
                residuals: cf.residuals,
                efficiency: eff,
                wrong_skew: cf.wrong_skew,
                boundary_solution: cf.wrong_skew,
                loglik: None,
                penalty_levels: selection.penalty_levels_used.clone(),
            }
        }
        Stage2::Mle => {
            let mf: MleFit = mle_fit(data, support, &opts.mle)?;
            let mut coefficients = vec![mf.beta0];
            coefficients.extend_from_slice(&mf.slopes);
            coefficients.extend_from_slice(&mf.delta);
            let eff = efficiency_scores(&mf.residuals, &mf.sigma);
            FrontierFit {
                method,
                coefficient_names: names,
                coefficients,
                std_errors: StdErrors {
                    coefficients: mf.coef_std_errors.clone(),
                    sigma_sq: mf.sigma_sq_std_error,
                    gamma: mf.gamma_std_error,
                },
                support: support.clone(),
                sigma: mf.sigma,
                residuals: mf.residuals,
                efficiency: eff,
                wrong_skew: mf.boundary_solution,
                boundary_solution: mf.boundary_solution,
                loglik: Some(mf.loglik),
                penalty_levels: selection.penalty_levels_used.clone(),
            }
        }
    };
    Ok(fit)
}

/// A cross-fitted estimate with the per-half selection metadata.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub fit: FrontierFit,
    pub support_a: Vec<usize>,
    pub support_b: Vec<usize>,
}

/// Two-fold cross-fitting: selection on one half, post-fit on the other,
/// roles swapped, coefficients averaged. Efficiency scores come from each
/// half's own fit.
pub fn cross_fit(
    data: &Dataset,
    selector: SelectorKind,
    plan: &SelectorPlan,
    stage2: Stage2,
    opts: &PostFitOptions,
    seed: u64,
) -> Result<CrossFit> {
    let n = data.n();
    if n < 40 {
        return Err(Error::InvalidParams(format!(
            "cross-fitting needs n >= 40, got {n}"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let half = n / 2;
    let mut rows_a = rows[..half].to_vec();
    let mut rows_b = rows[half..].to_vec();
    rows_a.sort_unstable();
    rows_b.sort_unstable();
    cross_fit_with_split(data, selector, plan, stage2, opts, &rows_a, &rows_b)
}

/// Cross-fitting with an explicit split (exposed for the swap-invariance
/// property and deterministic drivers).
pub fn cross_fit_with_split(
    data: &Dataset,
    selector: SelectorKind,
    plan: &SelectorPlan,
    stage2: Stage2,
    opts: &PostFitOptions,
    rows_a: &[usize],
    rows_b: &[usize],
) -> Result<CrossFit> {
    let half_a = subset(data, rows_a)?;
    let half_b = subset(data, rows_b)?;

    let select = |d: &Dataset| -> Result<SelectionResult> {
        match selector {
            SelectorKind::Psl => psl_select(d, plan),
            SelectorKind::Pdl => pdl_select(d, plan),
            SelectorKind::None => Ok(SelectionResult::none(d)),
            SelectorKind::All => Ok(SelectionResult::all(d)),
        }
    };

    // Selection on one half, estimation on the other.
    let sel_a = select(&half_a)?;
    let sel_b = select(&half_b)?;
    let fit_on_b = post_fit(&half_b, &sel_a, stage2, opts)?;
    let fit_on_a = post_fit(&half_a, &sel_b, stage2, opts)?;

    let combined = average_fits(data, &fit_on_b, &fit_on_a, rows_b, rows_a, stage2, selector)?;
    Ok(CrossFit {
        fit: combined,
        support_a: sel_a.support,
        support_b: sel_b.support,
    })
}

fn subset(data: &Dataset, rows: &[usize]) -> Result<Dataset> {
    let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
    let x = data.x.take_rows(rows);
    let z = if data.d() == 0 {
        DesignMatrix::empty(rows.len())
    } else {
        data.z.take_rows(rows)
    };
    Dataset::new(y, x, z)
}

fn average_fits(
    data: &Dataset,
    fit_b: &FrontierFit,
    fit_a: &FrontierFit,
    rows_b: &[usize],
    rows_a: &[usize],
    stage2: Stage2,
    selector: SelectorKind,
) -> Result<FrontierFit> {
    // Union of coefficient names, X block first (both fits share it).
    let mut names = fit_b.coefficient_names.clone();
    for nm in &fit_a.coefficient_names {
        if !names.contains(nm) {
            names.push(nm.clone());
        }
    }
    let value_of = |fit: &FrontierFit, name: &str| -> (f64, f64) {
        match fit.coefficient_names.iter().position(|n| n == name) {
            Some(i) => (fit.coefficients[i], fit.std_errors.coefficients[i]),
            None => (0.0, 0.0),
        }
    };
    let mut coefficients = Vec::with_capacity(names.len());
    let mut ses = Vec::with_capacity(names.len());
    for nm in &names {
        let (ca, sa) = value_of(fit_a, nm);
        let (cb, sb) = value_of(fit_b, nm);
        coefficients.push(0.5 * (ca + cb));
        // Halves are disjoint, so var(average) = (var_a + var_b)/4.
        ses.push(0.5 * (sa * sa + sb * sb).sqrt());
    }
    let sigma = CompositeErrorParams::new(
        0.5 * (fit_a.sigma.sigma_u_sq() + fit_b.sigma.sigma_u_sq()),
        0.5 * (fit_a.sigma.sigma_v_sq() + fit_b.sigma.sigma_v_sq()),
    )?;
    // Per-half efficiency and residuals reassembled in original row order.
    let n = data.n();
    let mut efficiency = vec![f64::NAN; n];
    let mut residuals = vec![f64::NAN; n];
    for (k, &i) in rows_b.iter().enumerate() {
        efficiency[i] = fit_b.efficiency[k];
        residuals[i] = fit_b.residuals[k];
    }
    for (k, &i) in rows_a.iter().enumerate() {
        efficiency[i] = fit_a.efficiency[k];
        residuals[i] = fit_a.residuals[k];
    }
    let mut support: Vec<usize> = fit_a
        .support
        .iter()
        .chain(fit_b.support.iter())
        .copied()
        .collect();
    support.sort_unstable();
    support.dedup();
    let mut penalty_levels = fit_a.penalty_levels.clone();
    penalty_levels.extend_from_slice(&fit_b.penalty_levels);
    Ok(FrontierFit {
        method: format!("XF-{}-{}", selector, stage2),
        coefficient_names: names,
        coefficients,
        std_errors: StdErrors {
            coefficients: ses,
            sigma_sq: None,
            gamma: None,
        },
        support,
        sigma,
        residuals,
        efficiency,
        wrong_skew: fit_a.wrong_skew && fit_b.wrong_skew,
        boundary_solution: fit_a.boundary_solution && fit_b.boundary_solution,
        loglik: None,
        penalty_levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::prelude::*;
    use rand_distr::StandardNormal;

    /// Small sparse-signal generating process: a handful of relevant z's.
    fn sparse_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let zcols: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let v: f64 = rng.sample::<f64, _>(StandardNormal);
                let u: f64 = rng.sample::<f64, _>(StandardNormal);
                1.0 + 0.5 * x1[i] + 1.2 * zcols[0][i] - 0.9 * zcols[1][i] + 0.4 * v
                    - 0.8 * u.abs()
            })
            .collect();
        let x = DesignMatrix::new(
            Matrix::from_columns(&[vec![1.0; n], x1]).unwrap(),
            vec!["const".into(), "x1".into()],
            true,
        )
        .unwrap();
        let z = DesignMatrix::new(
            Matrix::from_columns(&zcols).unwrap(),
            (0..d).map(|j| format!("z{j}")).collect(),
            false,
        )
        .unwrap();
        Dataset::new(y, x, z).unwrap()
    }

    fn plugin_plan() -> SelectorPlan {
        SelectorPlan {
            rule: PenaltyRule::PlugIn,
            ..Default::default()
        }
    }

    #[test]
    fn psl_empty_support_under_strong_penalty() {
        let data = sparse_dataset(80, 10, 3);
        let plan = SelectorPlan {
            rule: PenaltyRule::Fixed(1e9),
            ..Default::default()
        };
        let sel = psl_select(&data, &plan).unwrap();
        assert!(sel.support.is_empty());
        assert_eq!(sel.method, SelectorKind::Psl);
    }

    #[test]
    fn psl_full_support_at_zero_penalty() {
        let data = sparse_dataset(100, 6, 4);
        let plan = SelectorPlan {
            rule: PenaltyRule::Fixed(0.0),
            ..Default::default()
        };
        let sel = psl_select(&data, &plan).unwrap();
        assert_eq!(sel.support, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn pdl_union_contains_stage_supports() {
        let data = sparse_dataset(120, 15, 5);
        let sel = pdl_select(&data, &plugin_plan()).unwrap();
        assert_eq!(sel.per_stage_supports.len(), 1 + data.p());
        for stage in &sel.per_stage_supports {
            for j in stage {
                assert!(sel.support.contains(j));
            }
        }
        // Distinct penalty levels were chosen per stage.
        assert_eq!(sel.penalty_levels_used.len(), 1 + data.p());
    }

    #[test]
    fn pdl_is_union_of_given_supports() {
        // Supports {1,3} and {2,3} union to {1,2,3}: checked through the
        // plumbing by unioning directly.
        let mut a = vec![1usize, 3];
        let b = vec![2usize, 3];
        a.extend(&b);
        a.sort_unstable();
        a.dedup();
        assert_eq!(a, vec![1, 2, 3]);
    }

    #[test]
    fn post_fit_empty_support_equals_plain_fit() {
        let data = sparse_dataset(90, 8, 6);
        let sel = SelectionResult::none(&data);
        let fit = post_fit(&data, &sel, Stage2::Cols, &PostFitOptions::default()).unwrap();
        let plain = cols_fit(&data, &[]).unwrap();
        assert_eq!(fit.coefficients[1], plain.slopes[0]);
        assert_eq!(fit.coefficients[0], plain.beta0_corrected);
        assert_eq!(fit.method, "NoZ-COLS");
    }

    #[test]
    fn post_fit_full_support_equals_all_z_fit() {
        let data = sparse_dataset(150, 5, 7);
        let sel = SelectionResult::all(&data);
        let fit = post_fit(&data, &sel, Stage2::Cols, &PostFitOptions::default()).unwrap();
        let full = cols_fit(&data, &(0..5).collect::<Vec<_>>()).unwrap();
        for (a, b) in fit.coefficients[1..].iter().zip(&full.slopes) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn post_fit_support_too_large_errors() {
        let data = sparse_dataset(10, 9, 8);
        let sel = SelectionResult::all(&data);
        let err = post_fit(&data, &sel, Stage2::Cols, &PostFitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SupportTooLarge(_)));
    }

    #[test]
    fn selection_is_deterministic() {
        let data = sparse_dataset(100, 12, 9);
        let plan = SelectorPlan {
            rule: PenaltyRule::Cv1se,
            seed: 42,
            grid_size: 40,
            folds: 5,
            ..Default::default()
        };
        let a = psl_select(&data, &plan).unwrap();
        let b = psl_select(&data, &plan).unwrap();
        assert_eq!(a.support, b.support);
        assert_eq!(a.penalty_levels_used, b.penalty_levels_used);
        let c = pdl_select(&data, &plan).unwrap();
        let d = pdl_select(&data, &plan).unwrap();
        assert_eq!(c.support, d.support);
    }

    #[test]
    fn cross_fit_swap_invariance_and_support_metadata() {
        let data = sparse_dataset(120, 10, 11);
        let plan = plugin_plan();
        let rows_a: Vec<usize> = (0..60).collect();
        let rows_b: Vec<usize> = (60..120).collect();
        let opts = PostFitOptions::default();
        let ab = cross_fit_with_split(
            &data,
            SelectorKind::Psl,
            &plan,
            Stage2::Cols,
            &opts,
            &rows_a,
            &rows_b,
        )
        .unwrap();
        let ba = cross_fit_with_split(
            &data,
            SelectorKind::Psl,
            &plan,
            Stage2::Cols,
            &opts,
            &rows_b,
            &rows_a,
        )
        .unwrap();
        // Averaged coefficients are invariant to relabeling the halves.
        for nm in &ab.fit.coefficient_names {
            let i = ab.fit.coefficient_names.iter().position(|n| n == nm).unwrap();
            let j = ba.fit.coefficient_names.iter().position(|n| n == nm).unwrap();
            assert!(
                (ab.fit.coefficients[i] - ba.fit.coefficients[j]).abs() < 1e-12,
                "{nm}"
            );
        }
        assert_eq!(ab.support_a, ba.support_b);
        assert_eq!(ab.support_b, ba.support_a);

        // Strong shared signal: both halves should find z0.
        assert!(ab.support_a.contains(&0));
        assert!(ab.support_b.contains(&0));
    }

    #[test]
    fn cross_fit_requires_minimum_sample() {
        let data = sparse_dataset(30, 3, 12);
        let err = cross_fit(
            &data,
            SelectorKind::Psl,
            &plugin_plan(),
            Stage2::Cols,
            &PostFitOptions::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParams(_)));
    }
}
