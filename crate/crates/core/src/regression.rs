//! Dense least-squares machinery: OLS with deterministic rank reduction,
//! residual-maker projections, leverage values, the HC3 (delete-one jackknife)
//! covariance and normal-theory intervals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::two_sided_critical;

/// Relative pivot tolerance below which a column is treated as collinear with
/// the columns preceding it.
pub const RANK_TOL: f64 = 1e-10;

/// Leverage values at or above `1 - LEVERAGE_TOL` make the HC3 weights blow up.
pub const LEVERAGE_TOL: f64 = 1e-12;

/// Known data-generating quantities, populated for simulated samples only.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub alpha0: f64,
    pub support_y: Vec<usize>,
    pub support_d: Vec<usize>,
    /// x'(c_y β₀) per observation.
    pub signal_y: DVector<f64>,
    /// x'(c_d β₁) per observation.
    pub signal_d: DVector<f64>,
}

/// Outcome, treatment and control matrix for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub x: DMatrix<f64>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, d: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {} rows, d has {}, X has {}",
                n,
                d.len(),
                x.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        check_finite("y", y.as_slice())?;
        check_finite("d", d.as_slice())?;
        check_finite("X", x.as_slice())?;
        Ok(Dataset { y, d, x, truth: None })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        if truth.signal_y.len() != self.n() || truth.signal_d.len() != self.n() {
            return Err(Error::Dimension("truth signals must have n entries".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Restriction to the given rows (in the given order). Truth signals are
    /// restricted as well.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let d = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.d[i]));
        let x = self.x.select_rows(rows);
        let truth = self.truth.as_ref().map(|t| Truth {
            alpha0: t.alpha0,
            support_y: t.support_y.clone(),
            support_d: t.support_d.clone(),
            signal_y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| t.signal_y[i])),
            signal_d: DVector::from_iterator(rows.len(), rows.iter().map(|&i| t.signal_d[i])),
        });
        Dataset { y, d, x, truth }
    }
}

pub(crate) fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Thin orthonormal basis of the column span, built column by column so that
/// within a collinear group the lowest-index column is the one kept.
#[derive(Debug, Clone)]
pub(crate) struct OrthoBasis {
    /// n × r, orthonormal columns.
    pub q: DMatrix<f64>,
    /// r × r upper triangular, X[:, kept] = Q R.
    pub r: DMatrix<f64>,
    pub kept: Vec<usize>,
}

pub(crate) fn orthogonalize(x: &DMatrix<f64>) -> OrthoBasis {
    let (n, k) = x.shape();
    let mut qcols: Vec<DVector<f64>> = Vec::new();
    let mut rcols: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..k {
        let mut v: DVector<f64> = x.column(j).into_owned();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut coeffs = vec![0.0; qcols.len()];
        // Two passes of modified Gram-Schmidt keep the basis orthogonal to
        // working precision.
        for _ in 0..2 {
            for (l, q) in qcols.iter().enumerate() {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
                coeffs[l] += c;
            }
        }
        let nv = v.norm();
        if nv <= RANK_TOL * norm0 {
            continue;
        }
        v /= nv;
        coeffs.push(nv);
        qcols.push(v);
        rcols.push(coeffs);
        kept.push(j);
    }
    let rank = kept.len();
    let q = if rank == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&qcols)
    };
    let mut r = DMatrix::zeros(rank, rank);
    for (j, col) in rcols.iter().enumerate() {
        for (i, &c) in col.iter().enumerate() {
            r[(i, j)] = c;
        }
    }
    OrthoBasis { q, r, kept }
}

fn upper_triangular_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    let mut inv = DMatrix::zeros(k, k);
    for col in 0..k {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for l in (i + 1)..=col {
                s -= r[(i, l)] * inv[(l, col)];
            }
            inv[(i, col)] = s / r[(i, i)];
        }
    }
    inv
}

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// One entry per input column; dropped (collinear) columns carry zero.
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    pub hat_diag: DVector<f64>,
    /// n minus rank.
    pub dof: usize,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// (X'X)⁻¹ restricted to the kept columns, in `kept` order.
    xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    pub fn ncols(&self) -> usize {
        self.coef.len()
    }

    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Least squares of `y` on the columns of `x`. Collinear columns are dropped
/// deterministically, keeping the lowest index of each collinear group.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n == 0 {
        return Err(Error::InvalidArgument("zero-row design".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows but y has {}", y.len())));
    }
    check_finite("X", x.as_slice())?;
    check_finite("y", y.as_slice())?;

    let basis = orthogonalize(x);
    let rank = basis.kept.len();
    let qty = basis.q.tr_mul(y);
    let rinv = upper_triangular_inverse(&basis.r);
    let b = &rinv * &qty;
    let fitted = &basis.q * &qty;
    let residuals = y - &fitted;
    let hat_diag = DVector::from_iterator(n, (0..n).map(|i| basis.q.row(i).norm_squared()));

    let mut coef = DVector::zeros(k);
    for (pos, &j) in basis.kept.iter().enumerate() {
        coef[j] = b[pos];
    }
    let dropped = (0..k).filter(|j| !basis.kept.contains(j)).collect();
    let xtx_inv = &rinv * rinv.transpose();
    Ok(OlsFit {
        coef,
        residuals,
        fitted,
        hat_diag,
        dof: n - rank,
        kept: basis.kept,
        dropped,
        xtx_inv,
    })
}

/// HC3 sandwich (X'X)⁻¹ X' diag(eᵢ²/(1-hᵢᵢ)²) X (X'X)⁻¹, which coincides with
/// Σᵢ (β̂₍₋ᵢ₎ - β̂)(β̂₍₋ᵢ₎ - β̂)'. Rows and columns of dropped regressors are zero.
pub fn hc_jackknife_cov(fit: &OlsFit, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if n != fit.residuals.len() || k != fit.ncols() {
        return Err(Error::Dimension("design does not match the fit".into()));
    }
    for (row, &h) in fit.hat_diag.iter().enumerate() {
        if h >= 1.0 - LEVERAGE_TOL {
            return Err(Error::LeverageSingular { row, leverage: h });
        }
    }
    let xk = x.select_columns(&fit.kept);
    let a = &xk * &fit.xtx_inv;
    let r = fit.kept.len();
    let mut meat_weighted = a.clone();
    for i in 0..n {
        let w = fit.residuals[i] / (1.0 - fit.hat_diag[i]);
        let w2 = w * w;
        for j in 0..r {
            meat_weighted[(i, j)] *= w2;
        }
    }
    let cov_kept = a.tr_mul(&meat_weighted);
    Ok(embed(&cov_kept, &fit.kept, k))
}

/// Classical homoscedastic covariance s²(X'X)⁻¹ with s² = e'e/dof.
pub fn classical_cov(fit: &OlsFit) -> Result<DMatrix<f64>> {
    if fit.dof == 0 {
        return Err(Error::DegreesOfFreedom { params: fit.rank(), n: fit.residuals.len() });
    }
    let s2 = fit.rss() / fit.dof as f64;
    Ok(embed(&(&fit.xtx_inv * s2), &fit.kept, fit.ncols()))
}

fn embed(m: &DMatrix<f64>, kept: &[usize], k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(k, k);
    for (a, &i) in kept.iter().enumerate() {
        for (b, &j) in kept.iter().enumerate() {
            out[(i, j)] = m[(a, b)];
        }
    }
    out
}

/// Annihilator M v = v - P v for the span of `x_sel`. An empty selection
/// returns `v` unchanged.
pub fn residual_maker(x_sel: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if x_sel.ncols() == 0 {
        return Ok(v.clone());
    }
    if x_sel.nrows() != v.len() {
        return Err(Error::Dimension("selection rows do not match vector".into()));
    }
    let basis = orthogonalize(x_sel);
    let proj = &basis.q * basis.q.tr_mul(v);
    Ok(v - proj)
}

/// Symmetric normal interval α̂ ± Φ⁻¹(1-ξ/2)·se.
pub fn t_interval(alpha_hat: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(se >= 0.0) {
        return Err(Error::InvalidArgument(format!("standard error must be >= 0, got {se}")));
    }
    check_level(level)?;
    let half = two_sided_critical(level) * se;
    Ok((alpha_hat - half, alpha_hat + half))
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("level must lie in (0,1), got {level}")))
    }
}

/// Conditions noticed while producing an estimate that do not invalidate it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReportFlags {
    /// Some Lasso step hit its iteration cap.
    pub nonconverged: bool,
    /// The selected set was truncated to leave residual degrees of freedom.
    pub truncated: bool,
}

impl ReportFlags {
    pub fn any(&self) -> bool {
        self.nonconverged || self.truncated
    }

    pub fn merge(self, other: ReportFlags) -> ReportFlags {
        ReportFlags {
            nonconverged: self.nonconverged || other.nonconverged,
            truncated: self.truncated || other.truncated,
        }
    }
}

/// Point estimate, standard error and interval for the treatment coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub alpha_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Control columns used in the final regression.
    pub selected: Vec<usize>,
    pub s_hat: usize,
    pub flags: ReportFlags,
}

impl EstimateReport {
    pub fn new(
        alpha_hat: f64,
        se: f64,
        level: f64,
        selected: Vec<usize>,
        flags: ReportFlags,
    ) -> Result<Self> {
        let (ci_lower, ci_upper) = t_interval(alpha_hat, se, level)?;
        Ok(EstimateReport {
            alpha_hat,
            se,
            ci_lower,
            ci_upper,
            level,
            s_hat: selected.len(),
            selected,
            flags,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    pub fn width(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }
}
