//! Dense linear algebra used by every estimator: least squares via Householder
//! QR, orthogonal projection (partialling-out) and column standardization.
//!
//! Matrices are stored column-major because all hot paths (coordinate descent,
//! moment accumulation) walk one column at a time.

use crate::error::{Error, Result};

/// Relative condition threshold on the R diagonal beyond which a design is
/// treated as numerically rank deficient.
const RANK_COND_THRESHOLD: f64 = 1e12;

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a list of columns, all of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} has length {} but expected {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    /// Contiguous view of one column.
    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// `self * v` for a length-`cols` vector.
    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                axpy(vj, self.col(j), &mut out);
            }
        }
        out
    }

    /// Append a column, consuming and returning the matrix.
    pub fn push_column(mut self, column: &[f64]) -> Result<Self> {
        if self.cols != 0 && column.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "appended column has length {} but matrix has {} rows",
                column.len(),
                self.rows
            )));
        }
        if self.cols == 0 {
            self.rows = column.len();
        }
        self.data.extend_from_slice(column);
        self.cols += 1;
        Ok(self)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four lanes so LLVM can keep independent accumulators in registers.
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    for k in 4 * chunks..a.len() {
        s0 += a[k] * b[k];
    }
    (s0 + s1) + (s2 + s3)
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// Design matrix with named columns.
///
/// Invariants checked on construction: at least one row, finite entries, and
/// no constant column except a flagged intercept in position 0.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Matrix,
    column_names: Vec<String>,
    has_intercept: bool,
}

impl DesignMatrix {
    pub fn new(values: Matrix, column_names: Vec<String>, has_intercept: bool) -> Result<Self> {
        if values.cols() != column_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but {} names",
                values.cols(),
                column_names.len()
            )));
        }
        if values.rows() == 0 {
            return Err(Error::EmptyData("design matrix has no rows".into()));
        }
        for j in 0..values.cols() {
            let col = values.col(j);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "non-finite entry in column `{}`",
                    column_names[j]
                )));
            }
            let constant = col.iter().all(|&v| v == col[0]);
            let is_intercept = has_intercept && j == 0;
            if constant && !is_intercept && values.rows() > 1 {
                return Err(Error::ZeroVariance(column_names[j].clone()));
            }
        }
        Ok(DesignMatrix {
            values,
            column_names,
            has_intercept,
        })
    }

    /// An empty design (zero columns) over `rows` observations.
    pub fn empty(rows: usize) -> Self {
        DesignMatrix {
            values: Matrix {
                rows,
                cols: 0,
                data: Vec::new(),
            },
            column_names: Vec::new(),
            has_intercept: false,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn col(&self, j: usize) -> &[f64] {
        self.values.col(j)
    }

    /// Select a subset of columns (used to restrict to a support set).
    pub fn select(&self, indices: &[usize]) -> Result<DesignMatrix> {
        let mut cols = Vec::with_capacity(indices.len());
        let mut names = Vec::with_capacity(indices.len());
        for &j in indices {
            if j >= self.n_cols() {
                return Err(Error::DimensionMismatch(format!(
                    "column index {j} out of bounds ({} columns)",
                    self.n_cols()
                )));
            }
            cols.push(self.col(j).to_vec());
            names.push(self.column_names[j].clone());
        }
        Ok(DesignMatrix {
            values: Matrix::from_columns(&cols)?,
            column_names: names,
            has_intercept: self.has_intercept && indices.first() == Some(&0),
        })
    }

    /// Row subset, preserving column structure.
    pub fn take_rows(&self, rows: &[usize]) -> DesignMatrix {
        let mut m = Matrix::zeros(rows.len(), self.n_cols());
        for j in 0..self.n_cols() {
            let src = self.col(j);
            let dst = m.col_mut(j);
            for (k, &r) in rows.iter().enumerate() {
                dst[k] = src[r];
            }
        }
        DesignMatrix {
            values: m,
            column_names: self.column_names.clone(),
            has_intercept: self.has_intercept,
        }
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hcat(&self, other: &DesignMatrix) -> Result<DesignMatrix> {
        if other.n_cols() > 0 && self.n_cols() > 0 && other.n_rows() != self.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "hcat of {} and {} rows",
                self.n_rows(),
                other.n_rows()
            )));
        }
        let mut values = self.values.clone();
        for j in 0..other.n_cols() {
            values = values.push_column(other.col(j))?;
        }
        let mut names = self.column_names.clone();
        names.extend_from_slice(other.column_names());
        Ok(DesignMatrix {
            values,
            column_names: names,
            has_intercept: self.has_intercept,
        })
    }
}

/// Householder QR factorization of a tall matrix, kept in compact form.
///
/// The reflectors live in the lower trapezoid of `qr`, R in the upper
/// triangle; `beta` holds the reflector scalings.
pub struct QrFactor {
    qr: Matrix,
    beta: Vec<f64>,
    diag_max: f64,
    diag_min: f64,
}

impl QrFactor {
    pub fn factor(x: &Matrix) -> Result<QrFactor> {
        let (n, k) = (x.rows(), x.cols());
        if n < k {
            return Err(Error::RankDeficient(format!(
                "{n} rows < {k} columns; system is underdetermined"
            )));
        }
        let mut qr = x.clone();
        let mut beta = vec![0.0; k];
        for j in 0..k {
            // Householder vector for column j below the diagonal.
            let col = qr.col_mut(j);
            let (head, tail) = col[j..].split_first_mut().expect("n >= k");
            let sigma = dot(tail, tail);
            let alpha = (head.powi(2) + sigma).sqrt();
            if alpha == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            // Stable sign choice avoids cancellation in v0.
            let v0 = if *head >= 0.0 {
                *head + alpha
            } else {
                *head - alpha
            };
            let r_jj = if *head >= 0.0 { -alpha } else { alpha };
            // Normalize the reflector so v[j] = 1: v = [1, tail/v0].
            for t in tail.iter_mut() {
                *t /= v0;
            }
            let tail_norm_sq = sigma / (v0 * v0);
            beta[j] = 2.0 / (1.0 + tail_norm_sq);
            *head = r_jj;

            // Apply the reflector to the remaining columns.
            for c in (j + 1)..k {
                apply_reflector(&mut qr, j, beta[j], c, n);
            }
        }
        let mut diag_max: f64 = 0.0;
        let mut diag_min = f64::INFINITY;
        for j in 0..k {
            let d = qr.get(j, j).abs();
            diag_max = diag_max.max(d);
            diag_min = diag_min.min(d);
        }
        if k > 0 && (diag_min == 0.0 || diag_max / diag_min > RANK_COND_THRESHOLD) {
            return Err(Error::RankDeficient(format!(
                "R diagonal ratio {:.3e} exceeds {RANK_COND_THRESHOLD:.0e}",
                if diag_min == 0.0 {
                    f64::INFINITY
                } else {
                    diag_max / diag_min
                }
            )));
        }
        Ok(QrFactor {
            qr,
            beta,
            diag_max,
            diag_min,
        })
    }

    pub fn cols(&self) -> usize {
        self.qr.cols()
    }

    /// Condition estimate from the R diagonal.
    pub fn diag_condition(&self) -> f64 {
        if self.qr.cols() == 0 {
            1.0
        } else {
            self.diag_max / self.diag_min
        }
    }

    /// Least-squares coefficients for response `y` (applies Q' then solves R).
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        let (n, k) = (self.qr.rows(), self.qr.cols());
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "response length {} but design has {n} rows",
                y.len()
            )));
        }
        let mut w = y.to_vec();
        for j in 0..k {
            if self.beta[j] == 0.0 {
                continue;
            }
            // v = [1, qr[j+1.., j]]; w -= beta * (v'w) v
            let col = self.qr.col(j);
            let mut vw = w[j];
            for i in (j + 1)..n {
                vw += col[i] * w[i];
            }
            let s = self.beta[j] * vw;
            w[j] -= s;
            for i in (j + 1)..n {
                w[i] -= s * col[i];
            }
        }
        // Back-substitute R b = w[..k].
        let mut b = vec![0.0; k];
        for j in (0..k).rev() {
            let mut s = w[j];
            for c in (j + 1)..k {
                s -= self.qr.get(j, c) * b[c];
            }
            b[j] = s / self.qr.get(j, j);
        }
        Ok(b)
    }

    /// `(X'X)^-1 = R^-1 R^-T`, reconstructed from the triangular factor.
    pub fn xtx_inverse(&self) -> Matrix {
        let k = self.qr.cols();
        // R^-1 by back-substitution against identity columns.
        let mut rinv = Matrix::zeros(k, k);
        for c in 0..k {
            let mut col = vec![0.0; k];
            col[c] = 1.0;
            for j in (0..=c).rev() {
                let mut s = col[j];
                for m in (j + 1)..=c {
                    s -= self.qr.get(j, m) * col[m];
                }
                col[j] = s / self.qr.get(j, j);
            }
            for r in 0..k {
                rinv.set(r, c, col[r]);
            }
        }
        let mut out = Matrix::zeros(k, k);
        for r in 0..k {
            for c in 0..k {
                let mut s = 0.0;
                // (R^-1 R^-T)[r,c] = sum_m rinv[r,m] * rinv[c,m]
                for m in r.max(c)..k {
                    s += rinv.get(r, m) * rinv.get(c, m);
                }
                out.set(r, c, s);
            }
        }
        out
    }
}

fn apply_reflector(qr: &mut Matrix, j: usize, beta: f64, c: usize, n: usize) {
    // Split borrows: reflector column j, target column c (c > j).
    let (left, right) = qr.data.split_at_mut(c * n);
    let v = &left[j * n..(j + 1) * n];
    let target = &mut right[..n];
    let mut vw = target[j];
    for i in (j + 1)..n {
        vw += v[i] * target[i];
    }
    let s = beta * vw;
    target[j] -= s;
    for i in (j + 1)..n {
        target[i] -= s * v[i];
    }
}

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// `(X'X)^-1`, present when the design is full rank (always, since rank
    /// deficiency is an error).
    pub xtx_inverse: Option<Matrix>,
}

/// Least squares of `y` on the columns of `x` by Householder QR.
///
/// Rank deficiency (R diagonal condition above 1e12) is an error, never a
/// silent pseudo-inverse.
pub fn ols_solve(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit> {
    let (coefficients, fitted, residuals, qr) = ols_core(x, y)?;
    let xtx_inverse = Some(qr.xtx_inverse());
    Ok(OlsFit {
        coefficients,
        residuals,
        fitted,
        xtx_inverse,
    })
}

/// Same solve path as [`ols_solve`] without reconstructing `(X'X)^-1`;
/// used in Monte Carlo loops where only residuals are needed.
pub fn ols_solve_lean(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit> {
    let (coefficients, fitted, residuals, _) = ols_core(x, y)?;
    Ok(OlsFit {
        coefficients,
        residuals,
        fitted,
        xtx_inverse: None,
    })
}

type OlsCore = (Vec<f64>, Vec<f64>, Vec<f64>, QrFactor);

fn ols_core(x: &DesignMatrix, y: &[f64]) -> Result<OlsCore> {
    let n = x.n_rows();
    let k = x.n_cols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "len(y) = {} but design has {n} rows",
            y.len()
        )));
    }
    if n <= k {
        return Err(Error::RankDeficient(format!(
            "need n > k for least squares, got n = {n}, k = {k}"
        )));
    }
    let qr = QrFactor::factor(x.values())?;
    let coefficients = qr.solve(y)?;
    let fitted = x.values().mat_vec(&coefficients);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
    Ok((coefficients, fitted, residuals, qr))
}

/// Residual of `target` after projecting out the columns of `z`
/// (`target - Z pihat`). An empty `z` returns `target` unchanged.
pub fn partial_out(target: &[f64], z: &DesignMatrix) -> Result<Vec<f64>> {
    if z.n_cols() == 0 {
        return Ok(target.to_vec());
    }
    Ok(ols_solve_lean(z, target)?.residuals)
}

/// Center and scale every non-intercept column to sample mean 0 and sample
/// standard deviation 1 (n-1 denominator). Returns the transformed design
/// with the original means and scales so the transform can be inverted.
pub fn standardize_columns(x: &DesignMatrix) -> Result<(DesignMatrix, Vec<f64>, Vec<f64>)> {
    let n = x.n_rows();
    let k = x.n_cols();
    let mut values = x.values().clone();
    let mut means = vec![0.0; k];
    let mut scales = vec![1.0; k];
    for j in 0..k {
        if x.has_intercept() && j == 0 {
            continue;
        }
        let col = values.col_mut(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        if sd == 0.0 {
            return Err(Error::ZeroVariance(x.column_names()[j].clone()));
        }
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
        means[j] = mean;
        scales[j] = sd;
    }
    let out = DesignMatrix {
        values,
        column_names: x.column_names().to_vec(),
        has_intercept: x.has_intercept(),
    };
    Ok((out, means, scales))
}

/// Invert [`standardize_columns`].
pub fn unstandardize_columns(x: &DesignMatrix, means: &[f64], scales: &[f64]) -> DesignMatrix {
    let mut values = x.values().clone();
    for j in 0..x.n_cols() {
        if x.has_intercept() && j == 0 {
            continue;
        }
        let col = values.col_mut(j);
        for v in col.iter_mut() {
            *v = *v * scales[j] + means[j];
        }
    }
    DesignMatrix {
        values,
        column_names: x.column_names().to_vec(),
        has_intercept: x.has_intercept(),
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}
