//! Dense least-squares kernel.
//!
//! Ordinary least squares with deterministic rank-deficiency handling,
//! White (HC0) sandwich covariance, the fixed-effects within transformation
//! and a condition-checked square solver. Everything works in `f64` on
//! `nalgebra` dense matrices; problem sizes here are small (a handful of
//! columns, a few thousand rows at most).

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition estimates above this are reported as ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Relative residual norm below which a column is treated as a linear
/// combination of the columns to its left.
pub const COLLINEARITY_TOL: f64 = 1e-9;

/// A labelled regressor matrix (`n` rows, `k` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let (n, k) = values.shape();
        if labels.len() != k {
            return Err(Error::Dimension(format!(
                "{} labels for {k} columns",
                labels.len()
            )));
        }
        if k == 0 {
            return Err(Error::Dimension("design matrix has no columns".into()));
        }
        if n < k {
            return Err(Error::InsufficientData(format!(
                "{n} rows for {k} columns"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design matrix has non-finite entries".into()));
        }
        Ok(Self { values, labels })
    }

    /// Builds from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        let k = labels.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        Self::new(values, labels)
    }

    pub fn from_columns(columns: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("columns differ in length".into()));
        }
        let values = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        Self::new(values, labels)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    fn has_intercept(&self) -> bool {
        self.values.column_iter().any(|c| {
            let first = c[0];
            first != 0.0 && c.iter().all(|&v| v == first)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// White's estimator without small-sample scaling.
    #[default]
    Hc0,
    /// HC0 scaled by `n / (n - k)`.
    Hc1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsOptions {
    pub covariance: CovarianceKind,
    /// Number of entity means removed by a prior within transformation.
    pub absorbed: usize,
    /// Count absorbed means against the residual degrees of freedom. Only
    /// affects HC1 scaling and the classical variance; HC0 has no
    /// degrees-of-freedom term.
    pub adjust_absorbed_dof: bool,
    pub collinearity_tol: f64,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceKind::Hc0,
            absorbed: 0,
            adjust_absorbed_dof: true,
            collinearity_tol: COLLINEARITY_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionResult {
    /// Labels of the retained columns, in design order.
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub r_squared: f64,
    /// Set when the total sum of squares is zero and R² is reported as 0.
    pub r_squared_undefined: bool,
    pub n: usize,
    pub k: usize,
    pub dropped_columns: Vec<String>,
}

impl RegressionResult {
    fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, label: &str) -> Option<f64> {
        self.index_of(label)
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.k)
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|e| e * e).sum()
    }
}

pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult> {
    ols_fit_with(x, y, &OlsOptions::default())
}

pub fn ols_fit_with(x: &DesignMatrix, y: &[f64], opts: &OlsOptions) -> Result<RegressionResult> {
    let (n, k_full) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", y.len())));
    }
    if n <= k_full {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {k_full} regressors"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("response has non-finite entries".into()));
    }

    let retained = independent_columns(x.values(), opts.collinearity_tol);
    if retained.is_empty() {
        return Err(Error::Degenerate("every column is zero".into()));
    }
    let dropped_columns: Vec<String> = (0..k_full)
        .filter(|j| !retained.contains(j))
        .map(|j| x.labels[j].clone())
        .collect();
    let labels: Vec<String> = retained.iter().map(|&j| x.labels[j].clone()).collect();
    let xr = x.values().select_columns(retained.iter());
    let k = xr.ncols();

    let yv = DVector::from_column_slice(y);
    let qr = xr.clone().qr();
    let qty = qr.q().transpose() * &yv;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let resid = &yv - &xr * &beta;
    let residuals: Vec<f64> = resid.iter().copied().collect();

    let mut covariance = white_covariance(&xr, &residuals)?;
    if opts.covariance == CovarianceKind::Hc1 {
        let absorbed = if opts.adjust_absorbed_dof { opts.absorbed } else { 0 };
        let dof = n
            .checked_sub(k + absorbed)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::InsufficientData("no residual degrees of freedom".into()))?;
        covariance *= n as f64 / dof as f64;
    }

    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let tss = if x.has_intercept() {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let (r_squared, r_squared_undefined) = if tss > 0.0 {
        ((1.0 - rss / tss).clamp(0.0, 1.0), false)
    } else {
        (0.0, true)
    };

    Ok(RegressionResult {
        labels,
        coefficients: beta.iter().copied().collect(),
        residuals,
        covariance,
        r_squared,
        r_squared_undefined,
        n,
        k,
        dropped_columns,
    })
}

/// Indices of columns kept by a left-to-right Gram-Schmidt sweep: a column
/// is dropped when its component orthogonal to the already kept columns is
/// negligible relative to its own norm.
fn independent_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, col) in x.column_iter().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r: DVector<f64> = col.into_owned();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r.axpy(-proj, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > tol * norm {
            basis.push(r / rn);
            kept.push(j);
        }
    }
    kept
}

fn xtx_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok(chol.inverse())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = (m[(i, j)] + m[(j, i)]) / 2.0;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// HC0 sandwich `(X'X)^-1 X' diag(e^2) X (X'X)^-1`, symmetrized.
pub fn white_covariance(x: &DMatrix<f64>, residuals: &[f64]) -> Result<DMatrix<f64>> {
    if residuals.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} residuals for {} rows",
            residuals.len(),
            x.nrows()
        )));
    }
    let bread = xtx_inverse(x)?;
    let mut scaled = x.clone();
    for (i, e) in residuals.iter().enumerate() {
        scaled.row_mut(i).scale_mut(*e);
    }
    let meat = scaled.transpose() * &scaled;
    let mut cov = &bread * meat * &bread;
    symmetrize(&mut cov);
    Ok(cov)
}

/// Homoskedastic covariance `s^2 (X'X)^-1` with `s^2 = e'e / dof`.
pub fn classical_covariance(
    x: &DMatrix<f64>,
    residuals: &[f64],
    dof: usize,
) -> Result<DMatrix<f64>> {
    if residuals.len() != x.nrows() {
        return Err(Error::Dimension("residual length".into()));
    }
    if dof == 0 {
        return Err(Error::InsufficientData("zero degrees of freedom".into()));
    }
    let s2 = residuals.iter().map(|e| e * e).sum::<f64>() / dof as f64;
    let mut cov = xtx_inverse(x)? * s2;
    symmetrize(&mut cov);
    Ok(cov)
}

/// Demeans `values` within each entity. Singleton entities map to 0.
pub fn within_transform<L: Eq + Hash>(values: &[f64], entity_ids: &[L]) -> Result<Vec<f64>> {
    if values.len() != entity_ids.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} entity ids",
            values.len(),
            entity_ids.len()
        )));
    }
    let mut slot: HashMap<&L, usize> = HashMap::new();
    let mut index = Vec::with_capacity(values.len());
    for id in entity_ids {
        let next = slot.len();
        index.push(*slot.entry(id).or_insert(next));
    }
    let groups = slot.len();
    let mut out = values.to_vec();
    // second sweep removes the rounding left by the first
    for _ in 0..2 {
        let mut sum = vec![0.0; groups];
        let mut count = vec![0usize; groups];
        for (v, &g) in out.iter().zip(&index) {
            sum[g] += v;
            count[g] += 1;
        }
        for (v, &g) in out.iter_mut().zip(&index) {
            *v -= sum[g] / count[g] as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    /// 1-norm condition estimate `||A|| ||A^-1||`.
    pub condition: f64,
}

pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    match a.clone().lu().try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b`, refusing systems whose condition estimate exceeds
/// [`CONDITION_LIMIT`].
pub fn solve_linear(a: &DMatrix<f64>, b: &[f64]) -> Result<LinearSolution> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    if b.len() != a.nrows() {
        return Err(Error::Dimension(format!(
            "right-hand side of length {} for {} rows",
            b.len(),
            a.nrows()
        )));
    }
    let lu = a.clone().lu();
    let condition = match lu.try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    };
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { condition });
    }
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::IllConditioned { condition })?;
    Ok(LinearSolution {
        x: x.iter().copied().collect(),
        condition,
    })
}
