//! Data-generating processes, the replication scheduler, and aggregation into
//! table and figure summaries.
//!
//! Replication `r` of a design draws from an independent stream seeded with
//! `base_seed + r`, so results are reproducible under any worker schedule.

use crate::cols::residual_moments;
use crate::error::{Error, Result};
use crate::lasso::{lasso_residuals, solve_plan, PenaltyPlan, PenaltyRule};
use crate::linalg::{ols_solve_lean, DesignMatrix, Matrix};
use crate::model::{ColumnRole, Dataset, RawDataset, Stage2};
use crate::selectors::{
    pdl_select, post_fit, psl_select, PostFitOptions, SelectionResult, SelectorKind, SelectorPlan,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;
use std::sync::OnceLock;

/// Which generating process a design draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum McKind {
    /// Section-2.3 style: three relevant inputs plus `round(c n)` irrelevant
    /// standard-normal controls; noise sd 0.5, inefficiency sd 1.2.
    IrrelevantZ { n: usize, c: f64 },
    /// Belloni Design 1: 200 correlated controls with `0.5^|k-l|` covariance,
    /// decaying true coefficients `(1/j)^2`, one endogenous input;
    /// variances 0.5 (noise) and 1.2 (inefficiency).
    BelloniD1 { n: usize },
}

impl McKind {
    pub fn n(&self) -> usize {
        match self {
            McKind::IrrelevantZ { n, .. } | McKind::BelloniD1 { n } => *n,
        }
    }

    pub fn c(&self) -> f64 {
        match self {
            McKind::IrrelevantZ { c, .. } => *c,
            McKind::BelloniD1 { .. } => f64::NAN,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            McKind::IrrelevantZ { .. } => "irrelevant-z",
            McKind::BelloniD1 { .. } => "belloni-d1",
        }
    }

    /// True intercept and slope vector of the generating process.
    pub fn truth(&self) -> (f64, Vec<f64>) {
        match self {
            McKind::IrrelevantZ { .. } => (1.0, vec![0.3, 0.4, 0.38]),
            McKind::BelloniD1 { .. } => (1.0, vec![1.0]),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match self {
            McKind::IrrelevantZ { n, c } => gen_irrelevant_z(*n, *c, seed),
            McKind::BelloniD1 { n } => gen_belloni_d1(*n, seed),
        }
    }
}

/// An estimator chain applied to every replication.
#[derive(Debug, Clone, PartialEq)]
pub enum McEstimator {
    /// OLS on `[X, Z]`; records residual skewness and the wrong-skew flag.
    Ols,
    /// Partially penalized LASSO (X unpenalized); records the skewness of the
    /// LASSO residuals themselves.
    Lasso(PenaltyRule),
    /// Selector plus second-stage estimator.
    Chain {
        selector: SelectorKind,
        stage2: Stage2,
        rule: PenaltyRule,
    },
}

impl McEstimator {
    pub fn label(&self) -> String {
        match self {
            McEstimator::Ols => "OLS".into(),
            McEstimator::Lasso(rule) => format!("LASSO-{}", rule_label(rule)),
            McEstimator::Chain {
                selector, stage2, ..
            } => format!("{selector}-{stage2}"),
        }
    }
}

pub fn rule_label(rule: &PenaltyRule) -> String {
    match rule {
        PenaltyRule::Fixed(v) => format!("fixed={v}"),
        PenaltyRule::CvMin => "cvmin".into(),
        PenaltyRule::Cv1se => "cv1se".into(),
        PenaltyRule::PlugIn => "plugin".into(),
    }
}

/// A fully parameterized Monte Carlo design.
#[derive(Debug, Clone)]
pub struct McDesign {
    pub kind: McKind,
    pub reps: usize,
    pub base_seed: u64,
    pub estimators: Vec<McEstimator>,
    /// Keep per-replication records (needed for standardized distributions).
    pub keep_records: bool,
}

/// Per-replication outcome of one estimator.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: String,
    pub skewness: f64,
    pub wrong_skew: bool,
    pub mu2: f64,
    pub mu3: f64,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub se_beta0: Option<f64>,
    pub se_beta: Vec<Option<f64>>,
    pub sigma_u_sq: Option<f64>,
    pub sigma_v_sq: Option<f64>,
    pub gamma: Option<f64>,
    pub mean_eff: Option<f64>,
    pub num_selected: Option<usize>,
    pub boundary: bool,
}

/// Aggregated statistics for one `(design cell, estimator)` pair.
#[derive(Debug, Clone)]
pub struct CellStats {
    pub completed: usize,
    pub failures: usize,
    pub mean_skewness: f64,
    /// Monte Carlo standard error `sd / sqrt(reps)` of the skewness mean.
    pub skewness_se: f64,
    pub wrong_skew_count: usize,
    pub mean_eff: Option<f64>,
    /// Replications whose mean efficiency exceeded 0.99 (no inefficiency
    /// found).
    pub full_efficiency_count: usize,
    pub mean_num_selected: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CellKey {
    pub design: String,
    pub n: usize,
    pub c: f64,
    pub estimator: String,
}

/// Aggregated design output.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub cells: Vec<(CellKey, CellStats)>,
    pub records: Vec<RepRecord>,
    /// `(rep, estimator, message)` for excluded replications.
    pub failures: Vec<(usize, String, String)>,
}

/// Section-2.3 generating process: `p = 3` standard-normal inputs with
/// coefficients `(0.3, 0.4, 0.38)`, intercept 1, `d = round(c n)` irrelevant
/// standard-normal controls, `eps = v - u` with `v ~ N(0, 0.5^2)` and
/// `u ~ |N(0, 1.2^2)|`.
pub fn gen_irrelevant_z(n: usize, c: f64, seed: u64) -> Result<Dataset> {
    if n < 10 || !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidParams(format!(
            "need n >= 10 and c in [0,1), got n = {n}, c = {c}"
        )));
    }
    let d = (c * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xcols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for _ in 0..3 {
        xcols.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
    }
    let zcols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let v: f64 = rng.sample::<f64, _>(StandardNormal);
            let u: f64 = rng.sample::<f64, _>(StandardNormal);
            1.0 + 0.3 * xcols[1][i] + 0.4 * xcols[2][i] + 0.38 * xcols[3][i] + 0.5 * v
                - 1.2 * u.abs()
        })
        .collect();
    let x = DesignMatrix::new(
        Matrix::from_columns(&xcols)?,
        vec!["const".into(), "x1".into(), "x2".into(), "x3".into()],
        true,
    )?;
    let z = if d == 0 {
        DesignMatrix::empty(n)
    } else {
        DesignMatrix::new(
            Matrix::from_columns(&zcols)?,
            (1..=d).map(|j| format!("z{j}")).collect(),
            false,
        )?
    };
    Dataset::new(y, x, z)
}

const BELLONI_D: usize = 200;
const BELLONI_RHO: f64 = 0.5;

/// Lower-triangular Cholesky factor of the `0.5^|k-l|` Toeplitz covariance,
/// computed once.
fn belloni_chol() -> &'static Vec<f64> {
    static CHOL: OnceLock<Vec<f64>> = OnceLock::new();
    CHOL.get_or_init(|| {
        let d = BELLONI_D;
        let mut a = vec![0.0f64; d * d];
        for r in 0..d {
            for c in 0..d {
                a[r * d + c] = BELLONI_RHO.powi((r as i32 - c as i32).abs());
            }
        }
        // In-place lower Cholesky.
        let mut l = vec![0.0f64; d * d];
        for r in 0..d {
            for c in 0..=r {
                let mut s = a[r * d + c];
                for m in 0..c {
                    s -= l[r * d + m] * l[c * d + m];
                }
                if r == c {
                    l[r * d + c] = s.sqrt();
                } else {
                    l[r * d + c] = s / l[c * d + c];
                }
            }
        }
        l
    })
}

/// True control coefficients of Belloni Design 1: `delta_j = (1/j)^2`.
pub fn belloni_delta() -> Vec<f64> {
    (1..=BELLONI_D).map(|j| 1.0 / (j * j) as f64).collect()
}

/// Belloni Design 1: 200 controls with Toeplitz covariance `0.5^|k-l|`
/// (drawn through its lower-triangular factor), `x = 0.8 delta'z + eta`,
/// `y = 1 + x + 0.6 delta'z + v - u` with variances 0.5 and 1.2.
pub fn gen_belloni_d1(n: usize, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::InvalidParams(format!("need n >= 10, got {n}")));
    }
    let d = BELLONI_D;
    let chol = belloni_chol();
    let delta = belloni_delta();
    let (c_x, c_y) = (0.8, 0.6);
    let sigma_v = 0.5f64.sqrt();
    let sigma_u = 1.2f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut zdata = vec![0.0f64; n * d]; // column-major
    let mut x1 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut e = vec![0.0f64; d];
    for i in 0..n {
        for ek in e.iter_mut() {
            *ek = rng.sample(StandardNormal);
        }
        let mut signal = 0.0;
        for r in 0..d {
            let mut zr = 0.0;
            for m in 0..=r {
                zr += chol[r * d + m] * e[m];
            }
            zdata[r * n + i] = zr;
            signal += delta[r] * zr;
        }
        let eta: f64 = rng.sample(StandardNormal);
        let xi = c_x * signal + eta;
        let v: f64 = rng.sample::<f64, _>(StandardNormal);
        let u: f64 = rng.sample::<f64, _>(StandardNormal);
        x1.push(xi);
        y.push(1.0 + xi + c_y * signal + sigma_v * v - sigma_u * u.abs());
    }
    let zcols: Vec<Vec<f64>> = (0..d).map(|j| zdata[j * n..(j + 1) * n].to_vec()).collect();
    let x = DesignMatrix::new(
        Matrix::from_columns(&[vec![1.0; n], x1])?,
        vec!["const".into(), "x".into()],
        true,
    )?;
    let z = DesignMatrix::new(
        Matrix::from_columns(&zcols)?,
        (1..=d).map(|j| format!("z{j}")).collect(),
        false,
    )?;
    Dataset::new(y, x, z)
}

/// Apply one estimator chain to one replication.
fn run_estimator(
    est: &McEstimator,
    data: &Dataset,
    rep: usize,
    rep_seed: u64,
) -> Result<RepRecord> {
    let label = est.label();
    match est {
        McEstimator::Ols => {
            let w = data.x.hcat(&data.z)?;
            let fit = ols_solve_lean(&w, &data.y)?;
            let (mu2, mu3, skew) = residual_moments(&fit.residuals);
            Ok(RepRecord {
                rep,
                estimator: label,
                skewness: skew,
                wrong_skew: mu3 > 0.0,
                mu2,
                mu3,
                beta0: fit.coefficients[0],
                beta: fit.coefficients[1..=data.p()].to_vec(),
                se_beta0: None,
                se_beta: vec![None; data.p()],
                sigma_u_sq: None,
                sigma_v_sq: None,
                gamma: None,
                mean_eff: None,
                num_selected: None,
                boundary: false,
            })
        }
        McEstimator::Lasso(rule) => {
            let w = data.x.hcat(&data.z)?;
            let mut plan =
                PenaltyPlan::penalize_suffix(w.n_cols(), data.d(), *rule);
            plan.seed = rep_seed;
            let fit = solve_plan(&data.y, &w, &plan)?;
            let res = lasso_residuals(&data.y, &w, &fit);
            let (mu2, mu3, skew) = residual_moments(&res);
            Ok(RepRecord {
                rep,
                estimator: label,
                skewness: skew,
                wrong_skew: mu3 > 0.0,
                mu2,
                mu3,
                beta0: fit.coefficients[0],
                beta: fit.coefficients[1..=data.p()].to_vec(),
                se_beta0: None,
                se_beta: vec![None; data.p()],
                sigma_u_sq: None,
                sigma_v_sq: None,
                gamma: None,
                mean_eff: None,
                num_selected: Some(fit.support.len()),
                boundary: false,
            })
        }
        McEstimator::Chain {
            selector,
            stage2,
            rule,
        } => {
            let plan = SelectorPlan {
                rule: *rule,
                seed: rep_seed,
                ..Default::default()
            };
            let selection: SelectionResult = match selector {
                SelectorKind::Psl => psl_select(data, &plan)?,
                SelectorKind::Pdl => pdl_select(data, &plan)?,
                SelectorKind::None => SelectionResult::none(data),
                SelectorKind::All => SelectionResult::all(data),
            };
            let opts = PostFitOptions {
                mle: crate::mle::MleOptions {
                    seed: rep_seed,
                    ..Default::default()
                },
            };
            let fit = post_fit(data, &selection, *stage2, &opts)?;
            let (mu2, mu3, skew) = residual_moments(&fit.residuals);
            let p = data.p();
            Ok(RepRecord {
                rep,
                estimator: label,
                skewness: skew,
                wrong_skew: fit.wrong_skew,
                mu2,
                mu3,
                beta0: fit.coefficients[0],
                beta: fit.coefficients[1..=p].to_vec(),
                se_beta0: fit.std_errors.coefficients.first().copied(),
                se_beta: fit.std_errors.coefficients[1..=p]
                    .iter()
                    .map(|&s| Some(s))
                    .collect(),
                sigma_u_sq: Some(fit.sigma.sigma_u_sq()),
                sigma_v_sq: Some(fit.sigma.sigma_v_sq()),
                gamma: Some(fit.sigma.gamma()),
                mean_eff: Some(fit.mean_efficiency()),
                num_selected: Some(fit.support.len()),
                boundary: fit.boundary_solution,
            })
        }
    }
}

/// Run all replications of a design. Deterministic given `base_seed`:
/// replication `r` is seeded with `base_seed + r` and aggregation follows
/// replication order, never completion order.
pub fn run_design(design: &McDesign) -> Result<McSummary> {
    let outcomes: Vec<Vec<std::result::Result<RepRecord, String>>> = (0..design.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = design.base_seed + rep as u64;
            let data = match design.kind.generate(rep_seed) {
                Ok(d) => d,
                Err(e) => {
                    return design
                        .estimators
                        .iter()
                        .map(|_| Err(format!("generation failed: {e}")))
                        .collect()
                }
            };
            design
                .estimators
                .iter()
                .map(|est| {
                    run_estimator(est, &data, rep, rep_seed).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut per_estimator: Vec<Vec<&RepRecord>> =
        vec![Vec::with_capacity(design.reps); design.estimators.len()];
    for (rep, row) in outcomes.iter().enumerate() {
        for (e, out) in row.iter().enumerate() {
            match out {
                Ok(r) => records.push((e, r.clone())),
                Err(msg) => {
                    failures.push((rep, design.estimators[e].label(), msg.clone()))
                }
            }
        }
    }
    for (e, rec) in &records {
        per_estimator[*e].push(rec);
    }

    let mut cells = Vec::new();
    for (e, est) in design.estimators.iter().enumerate() {
        let recs = &per_estimator[e];
        let skews: Vec<f64> = recs.iter().map(|r| r.skewness).collect();
        let mean_skewness = crate::linalg::mean(&skews);
        let skewness_se = if skews.len() > 1 {
            crate::linalg::sample_sd(&skews) / (skews.len() as f64).sqrt()
        } else {
            0.0
        };
        let wrong = recs.iter().filter(|r| r.wrong_skew).count();
        let effs: Vec<f64> = recs.iter().filter_map(|r| r.mean_eff).collect();
        let mean_eff = if effs.is_empty() {
            None
        } else {
            Some(crate::linalg::mean(&effs))
        };
        let full_eff = effs.iter().filter(|&&v| v > 0.99).count();
        let nsel: Vec<f64> = recs
            .iter()
            .filter_map(|r| r.num_selected.map(|v| v as f64))
            .collect();
        let mean_num_selected = if nsel.is_empty() {
            None
        } else {
            Some(crate::linalg::mean(&nsel))
        };
        let fail_count = failures
            .iter()
            .filter(|(_, lbl, _)| *lbl == est.label())
            .count();
        cells.push((
            CellKey {
                design: design.kind.label().into(),
                n: design.kind.n(),
                c: design.kind.c(),
                estimator: est.label(),
            },
            CellStats {
                completed: recs.len(),
                failures: fail_count,
                mean_skewness,
                skewness_se,
                wrong_skew_count: wrong,
                mean_eff,
                full_efficiency_count: full_eff,
                mean_num_selected,
            },
        ));
    }
    Ok(McSummary {
        cells,
        records: if design.keep_records {
            records.into_iter().map(|(_, r)| r).collect()
        } else {
            Vec::new()
        },
        failures,
    })
}

/// Run a list of designs and merge the summaries.
pub fn run_grid(designs: &[McDesign]) -> Result<McSummary> {
    let mut cells = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for d in designs {
        let s = run_design(d)?;
        cells.extend(s.cells);
        records.extend(s.records);
        failures.extend(s.failures);
    }
    Ok(McSummary {
        cells,
        records,
        failures,
    })
}

/// Which scalar a standardized sampling distribution is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McParameter {
    Beta0,
    /// Slope index into the X block (0-based).
    Beta(usize),
}

/// Standardized sampling distribution `(theta_hat - theta_0)/se(theta_hat)`
/// across replications, plus fixed-width bins for plotting.
#[derive(Debug, Clone)]
pub struct StandardizedDist {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// `(lo, hi, count)` bins over [-6, 6] in steps of 0.25; outliers are
    /// counted in the first/last bin.
    pub bins: Vec<(f64, f64, usize)>,
}

pub fn standardized_dist(
    records: &[RepRecord],
    estimator: &str,
    parameter: McParameter,
    truth: (f64, &[f64]),
) -> Result<StandardizedDist> {
    let mut values = Vec::new();
    for r in records.iter().filter(|r| r.estimator == estimator) {
        let (est, se, t0) = match parameter {
            McParameter::Beta0 => (r.beta0, r.se_beta0, truth.0),
            McParameter::Beta(i) => (r.beta[i], r.se_beta[i], truth.1[i]),
        };
        let se = se.ok_or_else(|| {
            Error::MissingSe(format!(
                "replication {} of {} has no standard error",
                r.rep, r.estimator
            ))
        })?;
        if !se.is_finite() || se <= 0.0 {
            return Err(Error::MissingSe(format!(
                "replication {} of {} has invalid standard error {se}",
                r.rep, r.estimator
            )));
        }
        values.push((est - t0) / se);
    }
    if values.is_empty() {
        return Err(Error::EmptyData(format!(
            "no replications recorded for estimator {estimator}"
        )));
    }
    let mean = crate::linalg::mean(&values);
    let sd = crate::linalg::sample_sd(&values);
    let mut bins: Vec<(f64, f64, usize)> = (0..48)
        .map(|i| (-6.0 + 0.25 * i as f64, -6.0 + 0.25 * (i + 1) as f64, 0))
        .collect();
    for &v in &values {
        let idx = (((v + 6.0) / 0.25).floor() as isize).clamp(0, 47) as usize;
        bins[idx].2 += 1;
    }
    Ok(StandardizedDist {
        values,
        mean,
        sd,
        bins,
    })
}

/// Synthetic levels dataset of the empirical workflow's shape: one output,
/// five positive inputs, eight continuous covariates and 43 dummies (51
/// selectable columns). A few covariates truly shift the frontier and load on
/// the inputs so that selection matters.
pub fn gen_empirical_fixture(n: usize, sigma_u: f64, seed: u64) -> Result<RawDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = vec!["milk".to_string()];
    let mut roles = vec![ColumnRole::Output];
    let input_names = ["feed", "cows", "land", "labor", "roughage"];
    let betas = [0.35, 0.5, 0.05, 0.04, 0.06];

    // Latent farm scale drives input correlation.
    let scale: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut log_inputs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..5 {
        log_inputs.push(
            (0..n)
                .map(|i| 0.6 * scale[i] + 0.6 * rng.sample::<f64, StandardNormal>(StandardNormal))
                .collect(),
        );
    }
    let mut cont: Vec<Vec<f64>> = Vec::new();
    for k in 0..8 {
        let load = if k == 0 { 0.5 } else { 0.0 };
        cont.push(
            (0..n)
                .map(|i| load * scale[i] + rng.sample::<f64, StandardNormal>(StandardNormal))
                .collect(),
        );
    }
    let mut dums: Vec<Vec<f64>> = Vec::new();
    for k in 0..43 {
        let p = 0.15 + 0.5 * (k as f64 / 43.0);
        dums.push((0..n).map(|_| f64::from(rng.gen::<f64>() < p)).collect());
    }
    // True frontier: log output with a sparse environmental signal.
    let delta_cont = [0.20, -0.12, 0.10];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mut ly = 1.5;
            for (k, li) in log_inputs.iter().enumerate() {
                ly += betas[k] * li[i];
            }
            for (k, &dc) in delta_cont.iter().enumerate() {
                ly += dc * cont[k][i];
            }
            ly += 0.08 * dums[0][i];
            let v: f64 = rng.sample::<f64, _>(StandardNormal);
            let u: f64 = rng.sample::<f64, _>(StandardNormal);
            (ly + 0.1 * v - sigma_u * u.abs()).exp()
        })
        .collect();
    let mut columns = vec![y];
    for (k, nm) in input_names.iter().enumerate() {
        names.push((*nm).into());
        roles.push(ColumnRole::Input);
        columns.push(log_inputs[k].iter().map(|v| v.exp()).collect());
    }
    for (k, col) in cont.into_iter().enumerate() {
        names.push(format!("cov{}", k + 1));
        roles.push(ColumnRole::Selectable);
        columns.push(col);
    }
    for (k, col) in dums.into_iter().enumerate() {
        names.push(format!("dum{}", k + 1));
        roles.push(ColumnRole::Dummy);
        columns.push(col);
    }
    Ok(RawDataset {
        names,
        roles,
        columns,
        n,
    })
}

/// Write cell summaries as CSV (schema in the header row).
pub fn write_summary_csv<W: Write>(summary: &McSummary, out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "design,n,c,estimator,completed,failures,mean_skewness,skewness_mc_se,\
         wrong_skew_count,mean_efficiency,full_efficiency_count,mean_num_selected"
    )?;
    for (key, st) in &summary.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{},{},{},{}",
            key.design,
            key.n,
            if key.c.is_nan() {
                String::new()
            } else {
                format!("{}", key.c)
            },
            key.estimator,
            st.completed,
            st.failures,
            st.mean_skewness,
            st.skewness_se,
            st.wrong_skew_count,
            st.mean_eff.map_or(String::new(), |v| format!("{v:.6}")),
            st.full_efficiency_count,
            st.mean_num_selected
                .map_or(String::new(), |v| format!("{v:.3}")),
        )?;
    }
    Ok(())
}

/// Write per-replication records in long format (schema in the header row).
pub fn write_records_csv<W: Write>(summary: &McSummary, out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "rep,estimator,skewness,wrong_skew,mu2,mu3,beta0,se_beta0,beta1,se_beta1,\
         sigma_u_sq,sigma_v_sq,gamma,mean_eff,num_selected,boundary"
    )?;
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.8}"));
    for r in &summary.records {
        writeln!(
            out,
            "{},{},{:.8},{},{:.8},{:.8},{:.8},{},{},{},{},{},{},{},{},{}",
            r.rep,
            r.estimator,
            r.skewness,
            u8::from(r.wrong_skew),
            r.mu2,
            r.mu3,
            r.beta0,
            fmt_opt(r.se_beta0),
            r.beta
                .first()
                .map_or(String::new(), |v| format!("{v:.8}")),
            fmt_opt(r.se_beta.first().copied().flatten()),
            fmt_opt(r.sigma_u_sq),
            fmt_opt(r.sigma_v_sq),
            fmt_opt(r.gamma),
            fmt_opt(r.mean_eff),
            r.num_selected.map_or(String::new(), |v| v.to_string()),
            u8::from(r.boundary),
        )?;
    }
    Ok(())
}
