//! Frontier specification: which regressors are mandatory inputs versus
//! selectable environmental variables, and expansion of functional forms
//! (Cobb-Douglas, translog) into concrete design matrices.

use crate::error::{Error, Result};
use crate::linalg::{DesignMatrix, Matrix};

/// Role of a raw data column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Output,
    Input,
    Selectable,
    /// 0/1 indicator; passes through untransformed and is never logged.
    Dummy,
}

/// Raw (levels) data as loaded from disk or generated.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub names: Vec<String>,
    pub roles: Vec<ColumnRole>,
    pub columns: Vec<Vec<f64>>,
    pub n: usize,
}

impl RawDataset {
    pub fn column(&self, name: &str) -> Result<(usize, &[f64])> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok((idx, &self.columns[idx]))
    }
}

/// Functional form of the technology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalForm {
    CobbDouglas,
    Translog,
}

/// Frontier specification.
///
/// `mandatory` names enter the technology block X; `selectable` names form
/// the environmental block Z that selection operates on. With
/// `second_order_optional`, the translog squares/interactions are generated
/// but moved into Z.
#[derive(Debug, Clone)]
pub struct FrontierSpec {
    pub form: FunctionalForm,
    pub mandatory: Vec<String>,
    pub selectable: Vec<String>,
    pub second_order_optional: bool,
    pub mean_deviate_logs: bool,
}

impl FrontierSpec {
    pub fn validate(&self) -> Result<()> {
        for m in &self.mandatory {
            if self.selectable.contains(m) {
                return Err(Error::InvalidParams(format!(
                    "column `{m}` is both mandatory and selectable"
                )));
            }
        }
        Ok(())
    }
}

/// Composite-error variance parameters `(sigma_u^2, sigma_v^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeErrorParams {
    sigma_u_sq: f64,
    sigma_v_sq: f64,
}

impl CompositeErrorParams {
    pub fn new(sigma_u_sq: f64, sigma_v_sq: f64) -> Result<Self> {
        if !(sigma_u_sq >= 0.0) || !sigma_u_sq.is_finite() {
            return Err(Error::InvalidParams(format!(
                "sigma_u^2 must be finite and >= 0, got {sigma_u_sq}"
            )));
        }
        if !(sigma_v_sq > 0.0) || !sigma_v_sq.is_finite() {
            return Err(Error::InvalidParams(format!(
                "sigma_v^2 must be finite and > 0, got {sigma_v_sq}"
            )));
        }
        Ok(CompositeErrorParams {
            sigma_u_sq,
            sigma_v_sq,
        })
    }

    /// From total variance and the variance share `gamma = sigma_u^2/sigma^2`.
    pub fn from_gamma(sigma_sq: f64, gamma: f64) -> Result<Self> {
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidParams(format!(
                "sigma^2 must be finite and > 0, got {sigma_sq}"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParams(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        CompositeErrorParams::new(gamma * sigma_sq, (1.0 - gamma) * sigma_sq)
    }

    pub fn sigma_u_sq(&self) -> f64 {
        self.sigma_u_sq
    }

    pub fn sigma_v_sq(&self) -> f64 {
        self.sigma_v_sq
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_u_sq + self.sigma_v_sq
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq().sqrt()
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma_u_sq.sqrt()
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v_sq.sqrt()
    }

    /// `lambda = sigma_u / sigma_v`.
    pub fn lambda(&self) -> f64 {
        (self.sigma_u_sq / self.sigma_v_sq).sqrt()
    }

    /// `gamma = sigma_u^2 / sigma^2`, in [0, 1).
    pub fn gamma(&self) -> f64 {
        self.sigma_u_sq / self.sigma_sq()
    }
}

/// Expanded estimation-ready data: log output, mandatory block X (intercept
/// first) and selectable block Z. All three share n; names are unique.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: DesignMatrix,
    pub z: DesignMatrix,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DesignMatrix, z: DesignMatrix) -> Result<Self> {
        let n = y.len();
        if x.n_rows() != n || (z.n_cols() > 0 && z.n_rows() != n) {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, X has {}, Z has {}",
                x.n_rows(),
                z.n_rows()
            )));
        }
        for name in z.column_names() {
            if x.column_names().contains(name) {
                return Err(Error::InvalidParams(format!(
                    "column name `{name}` appears in both X and Z"
                )));
            }
        }
        Ok(Dataset { y, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of non-intercept mandatory columns.
    pub fn p(&self) -> usize {
        self.x.n_cols() - usize::from(self.x.has_intercept())
    }

    pub fn d(&self) -> usize {
        self.z.n_cols()
    }

    /// `[X, Z_support]` design for a second-stage fit.
    pub fn design_with_support(&self, support: &[usize]) -> Result<DesignMatrix> {
        let zsel = self.z.select(support)?;
        self.x.hcat(&zsel)
    }
}

/// Expand raw levels data into an estimation dataset.
///
/// Output and non-dummy variables named in `mandatory` are logged (rows must
/// be positive); logs are centered at their sample means when
/// `mean_deviate_logs` is set. The translog adds all squares and pairwise
/// interactions of the centered log inputs; `second_order_optional` moves
/// those terms into the selectable block. Column order is intercept,
/// mandatory first-order, mandatory second-order, then the selectable block.
pub fn expand_spec(raw: &RawDataset, spec: &FrontierSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = raw.n;
    if n == 0 {
        return Err(Error::EmptyData("no rows".into()));
    }

    let out_idx = raw
        .roles
        .iter()
        .position(|r| *r == ColumnRole::Output)
        .ok_or_else(|| Error::MissingColumn("<output>".into()))?;
    let y = log_column(&raw.names[out_idx], &raw.columns[out_idx])?;

    // First-order mandatory terms.
    let mut x_cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut x_names: Vec<String> = vec!["const".into()];
    let mut centered_logs: Vec<(String, Vec<f64>)> = Vec::new();
    for name in &spec.mandatory {
        let (idx, values) = raw.column(name)?;
        if raw.roles[idx] == ColumnRole::Dummy {
            validate_dummy(name, values)?;
            x_cols.push(values.to_vec());
            x_names.push(name.clone());
        } else {
            let mut lg = log_column(name, values)?;
            if spec.mean_deviate_logs {
                let m = crate::linalg::mean(&lg);
                for v in lg.iter_mut() {
                    *v -= m;
                }
            }
            centered_logs.push((format!("ln_{name}"), lg.clone()));
            x_cols.push(lg);
            x_names.push(format!("ln_{name}"));
        }
    }

    // Second-order terms from centered logs (interactions of centered logs,
    // not centered after multiplication, so first-order coefficients stay
    // elasticities at the mean).
    let want_second_order =
        spec.form == FunctionalForm::Translog || spec.second_order_optional;
    let mut so_cols: Vec<Vec<f64>> = Vec::new();
    let mut so_names: Vec<String> = Vec::new();
    if want_second_order {
        for a in 0..centered_logs.len() {
            for b in a..centered_logs.len() {
                let (na, va) = &centered_logs[a];
                let (nb, vb) = &centered_logs[b];
                let col: Vec<f64> = va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect();
                let name = if a == b {
                    format!("{na}^2")
                } else {
                    format!("{na}*{nb}")
                };
                so_cols.push(col);
                so_names.push(name);
            }
        }
    }
    if want_second_order && !spec.second_order_optional {
        x_cols.extend(so_cols.drain(..));
        x_names.extend(so_names.drain(..));
    }

    // Selectable block.
    let mut z_cols: Vec<Vec<f64>> = Vec::new();
    let mut z_names: Vec<String> = Vec::new();
    for name in &spec.selectable {
        let (idx, values) = raw.column(name)?;
        if raw.roles[idx] == ColumnRole::Dummy {
            validate_dummy(name, values)?;
        }
        z_cols.push(values.to_vec());
        z_names.push(name.clone());
    }
    z_cols.extend(so_cols);
    z_names.extend(so_names);

    let x = DesignMatrix::new(Matrix::from_columns(&x_cols)?, x_names, true)?;
    let z = if z_cols.is_empty() {
        DesignMatrix::empty(n)
    } else {
        DesignMatrix::new(Matrix::from_columns(&z_cols)?, z_names, false)?
    };
    Dataset::new(y, x, z)
}

fn log_column(name: &str, values: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for (row, &v) in values.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveValue {
                row: row + 1,
                column: name.to_string(),
            });
        }
        out.push(v.ln());
    }
    Ok(out)
}

fn validate_dummy(name: &str, values: &[f64]) -> Result<()> {
    for (row, &v) in values.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::ParseError {
                row: row + 1,
                column: name.to_string(),
                message: format!("dummy value must be 0 or 1, got {v}"),
            });
        }
    }
    Ok(())
}

/// Which stage-two estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage2 {
    Cols,
    Mle,
}

impl std::fmt::Display for Stage2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage2::Cols => write!(f, "COLS"),
            Stage2::Mle => write!(f, "MLE"),
        }
    }
}

/// Per-coefficient standard errors in the reporting parameterization.
#[derive(Debug, Clone, Default)]
pub struct StdErrors {
    /// Aligned with the fit's coefficient vector (intercept first).
    pub coefficients: Vec<f64>,
    pub sigma_sq: Option<f64>,
    pub gamma: Option<f64>,
}

/// A fitted frontier: coefficients, support, standard errors, residuals,
/// efficiency scores and diagnostics.
#[derive(Debug, Clone)]
pub struct FrontierFit {
    /// Human-readable method chain, e.g. "PDL-COLS".
    pub method: String,
    /// Names aligned with `coefficients` (intercept first, then X, then the
    /// selected Z columns).
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: StdErrors,
    /// Indices into the dataset's Z block that were included.
    pub support: Vec<usize>,
    pub sigma: CompositeErrorParams,
    /// Raw fit residuals (OLS residuals for COLS; `y - X beta - Z delta` at
    /// the MLE for MLE).
    pub residuals: Vec<f64>,
    /// Technical efficiency scores in (0, 1].
    pub efficiency: Vec<f64>,
    pub wrong_skew: bool,
    pub boundary_solution: bool,
    pub loglik: Option<f64>,
    pub penalty_levels: Vec<f64>,
}

impl FrontierFit {
    pub fn mean_efficiency(&self) -> f64 {
        crate::linalg::mean(&self.efficiency)
    }

    pub fn coefficient(&self, name: &str) -> Result<f64> {
        self.coefficient_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
            .ok_or_else(|| Error::MissingCoefficient(name.to_string()))
    }
}

/// Returns to scale: the sum of first-order input elasticities, valid at the
/// sample mean because logs are mean-deviated.
pub fn returns_to_scale(fit: &FrontierFit, spec: &FrontierSpec) -> Result<f64> {
    let mut rts = 0.0;
    for name in &spec.mandatory {
        let term = format!("ln_{name}");
        // Mandatory dummies carry no elasticity; only logged inputs count.
        match fit.coefficient(&term) {
            Ok(c) => rts += c,
            Err(_) if fit.coefficient(name).is_ok() => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(rts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn raw_levels(n: usize, n_inputs: usize, n_selectable: usize, seed: u64) -> RawDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = vec!["output".to_string()];
        let mut roles = vec![ColumnRole::Output];
        let mut columns: Vec<Vec<f64>> = vec![(0..n).map(|_| rng.gen_range(1.0..10.0)).collect()];
        for i in 0..n_inputs {
            names.push(format!("in{i}"));
            roles.push(ColumnRole::Input);
            columns.push((0..n).map(|_| rng.gen_range(0.5..20.0)).collect());
        }
        for i in 0..n_selectable {
            names.push(format!("z{i}"));
            roles.push(ColumnRole::Selectable);
            columns.push((0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect());
        }
        RawDataset { names, roles, columns, n }
    }

    fn spec(form: FunctionalForm, n_inputs: usize, n_sel: usize, so_optional: bool) -> FrontierSpec {
        FrontierSpec {
            form,
            mandatory: (0..n_inputs).map(|i| format!("in{i}")).collect(),
            selectable: (0..n_sel).map(|i| format!("z{i}")).collect(),
            second_order_optional: so_optional,
            mean_deviate_logs: true,
        }
    }

    #[test]
    fn cobb_douglas_column_counts() {
        let raw = raw_levels(40, 5, 51, 1);
        let ds = expand_spec(&raw, &spec(FunctionalForm::CobbDouglas, 5, 51, false)).unwrap();
        assert_eq!(ds.x.n_cols(), 6);
        assert_eq!(ds.z.n_cols(), 51);
    }

    #[test]
    fn translog_column_counts() {
        let raw = raw_levels(60, 5, 51, 2);
        let ds = expand_spec(&raw, &spec(FunctionalForm::Translog, 5, 51, false)).unwrap();
        // 5 first-order + 15 second-order technology terms plus intercept.
        assert_eq!(ds.x.n_cols(), 1 + 5 + 15);
        assert_eq!(ds.z.n_cols(), 51);
    }

    #[test]
    fn second_order_optional_moves_terms_to_z() {
        let raw = raw_levels(60, 5, 51, 3);
        let ds = expand_spec(&raw, &spec(FunctionalForm::CobbDouglas, 5, 51, true)).unwrap();
        assert_eq!(ds.x.n_cols(), 6);
        assert_eq!(ds.z.n_cols(), 51 + 15);
    }

    #[test]
    fn translog_shares_first_columns_with_cobb_douglas() {
        let raw = raw_levels(50, 3, 4, 4);
        let cd = expand_spec(&raw, &spec(FunctionalForm::CobbDouglas, 3, 4, false)).unwrap();
        let tl = expand_spec(&raw, &spec(FunctionalForm::Translog, 3, 4, false)).unwrap();
        for j in 0..4 {
            assert_eq!(cd.x.col(j), tl.x.col(j));
            assert_eq!(cd.x.column_names()[j], tl.x.column_names()[j]);
        }
    }

    #[test]
    fn deterministic_and_mean_deviated() {
        let raw = raw_levels(80, 4, 6, 5);
        let s = spec(FunctionalForm::Translog, 4, 6, false);
        let a = expand_spec(&raw, &s).unwrap();
        let b = expand_spec(&raw, &s).unwrap();
        assert_eq!(a.x.values(), b.x.values());
        assert_eq!(a.z.values(), b.z.values());
        for j in 1..=4 {
            let m = crate::linalg::mean(a.x.col(j));
            assert!(m.abs() < 1e-12, "column {j} mean {m}");
        }
    }

    #[test]
    fn unknown_and_nonpositive_errors() {
        let raw = raw_levels(10, 2, 2, 6);
        let mut s = spec(FunctionalForm::CobbDouglas, 2, 2, false);
        s.mandatory.push("nope".into());
        assert!(matches!(expand_spec(&raw, &s), Err(Error::UnknownColumn(_))));

        let mut raw2 = raw_levels(10, 2, 2, 7);
        raw2.columns[1][3] = 0.0;
        let s2 = spec(FunctionalForm::CobbDouglas, 2, 2, false);
        match expand_spec(&raw2, &s2) {
            Err(Error::NonPositiveValue { row, column }) => {
                assert_eq!(row, 4);
                assert_eq!(column, "in0");
            }
            other => panic!("expected NonPositiveValue, got {other:?}"),
        }
    }

    #[test]
    fn rts_sums_first_order_inputs() {
        let s = spec(FunctionalForm::CobbDouglas, 3, 0, false);
        let fit = FrontierFit {
            method: "COLS".into(),
            coefficient_names: vec![
                "const".into(),
                "ln_in0".into(),
                "ln_in1".into(),
                "ln_in2".into(),
            ],
            coefficients: vec![1.0, 0.3, 0.4, 0.38],
            std_errors: StdErrors::default(),
            support: vec![],
            sigma: CompositeErrorParams::new(1.0, 1.0).unwrap(),
            residuals: vec![],
            efficiency: vec![],
            wrong_skew: false,
            boundary_solution: false,
            loglik: None,
            penalty_levels: vec![],
        };
        let rts = returns_to_scale(&fit, &s).unwrap();
        assert!((rts - 1.08).abs() < 1e-12);

        let mut single = fit.clone();
        single.coefficient_names = vec!["const".into(), "ln_in0".into()];
        single.coefficients = vec![0.0, 1.0];
        let s1 = spec(FunctionalForm::CobbDouglas, 1, 0, false);
        assert!((returns_to_scale(&single, &s1).unwrap() - 1.0).abs() < 1e-12);

        let mut zero = fit.clone();
        zero.coefficients = vec![0.0, 0.0, 0.0, 0.0];
        assert_eq!(returns_to_scale(&zero, &s).unwrap(), 0.0);

        let mut missing = fit;
        missing.coefficient_names.pop();
        missing.coefficients.pop();
        assert!(matches!(
            returns_to_scale(&missing, &s),
            Err(Error::MissingCoefficient(_))
        ));
    }

    #[test]
    fn params_views() {
        let p = CompositeErrorParams::new(1.44, 0.25).unwrap();
        assert!((p.sigma_sq() - 1.69).abs() < 1e-15);
        assert!((p.lambda() - 2.4).abs() < 1e-12);
        assert!((p.gamma() - 1.44 / 1.69).abs() < 1e-12);
        assert!(CompositeErrorParams::new(-0.1, 1.0).is_err());
        assert!(CompositeErrorParams::new(0.1, 0.0).is_err());
        assert!(CompositeErrorParams::from_gamma(1.0, 1.0).is_err());
    }
}
