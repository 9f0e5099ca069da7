//! Weighted-ℓ₁ least squares by coordinate descent.
//!
//! The objective is
//!
//! ```text
//!     E_n[(y - x'β)²] + (λ/n) Σ_j Ψ_j |β_j|
//! ```
//!
//! with a data-driven penalty level λ = 2c√n Φ⁻¹(1 - γ/(2p)) and loadings Ψ
//! estimated by iterating residual-based moments. Columns listed as
//! unpenalized carry no penalty at all.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regression::{check_finite, ols_fit, OlsFit};
use crate::stats::normal_quantile;

/// Penalty and solver settings for the feasible Lasso.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    /// Slack constant, > 1.
    pub c: f64,
    /// Confidence parameter in (0,1).
    pub gamma: f64,
    /// Rounds of loading re-estimation after the initial fit.
    pub loading_iterations: usize,
    /// Max absolute coefficient change per sweep at convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Columns excluded from the penalty.
    pub unpenalized: Vec<usize>,
    /// Fixed penalty level overriding the formula (mainly for experiments).
    pub lambda_override: Option<f64>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            c: 1.1,
            gamma: 0.05,
            loading_iterations: 5,
            tol: 1e-7,
            max_iter: 10_000,
            unpenalized: Vec::new(),
            lambda_override: None,
        }
    }
}

impl PenaltyConfig {
    pub fn with_unpenalized(&self, unpenalized: Vec<usize>) -> Self {
        PenaltyConfig { unpenalized, ..self.clone() }
    }

    pub fn lambda(&self, n: usize, p: usize) -> Result<f64> {
        match self.lambda_override {
            Some(l) if l >= 0.0 && l.is_finite() => Ok(l),
            Some(l) => Err(Error::InvalidArgument(format!("lambda override {l} is invalid"))),
            None => penalty_level(n, p, self.c, self.gamma),
        }
    }
}

/// A fitted weighted Lasso.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coef: DVector<f64>,
    pub lambda: f64,
    /// Penalty loadings Ψ_jj (ignored for unpenalized columns).
    pub loadings: DVector<f64>,
    /// Indices with nonzero coefficient.
    pub support: Vec<usize>,
    /// Number of coordinate sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each sweep.
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    pub fn residuals(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        y - x * &self.coef
    }
}

/// λ = 2c√n Φ⁻¹(1 - γ/(2p)).
pub fn penalty_level(n: usize, p: usize, c: f64, gamma: f64) -> Result<f64> {
    if n < 1 || p < 1 {
        return Err(Error::InvalidArgument("n and p must be at least 1".into()));
    }
    if !(c > 1.0) {
        return Err(Error::InvalidArgument(format!("c must exceed 1, got {c}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0,1), got {gamma}")));
    }
    Ok(2.0 * c * (n as f64).sqrt() * normal_quantile(1.0 - gamma / (2.0 * p as f64)))
}

/// Value of the weighted Lasso objective at `coef`.
pub fn lasso_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
    lambda: f64,
    loadings: &DVector<f64>,
    unpenalized: &[usize],
) -> f64 {
    let n = y.len() as f64;
    let r = y - x * coef;
    let pen: f64 = (0..coef.len())
        .filter(|j| !unpenalized.contains(j))
        .map(|j| loadings[j] * coef[j].abs())
        .sum();
    r.norm_squared() / n + lambda / n * pen
}

#[inline]
pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn validate_inputs(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loadings: &DVector<f64>,
    unpenalized: &[usize],
) -> Result<()> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows but y has {}", y.len())));
    }
    if loadings.len() != p {
        return Err(Error::Dimension(format!("{} loadings for {p} columns", loadings.len())));
    }
    if let Some(&j) = unpenalized.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("unpenalized index {j} out of range")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    check_finite("X", x.as_slice())?;
    check_finite("y", y.as_slice())?;
    for j in 0..p {
        if unpenalized.contains(&j) {
            continue;
        }
        if !(loadings[j] > 0.0) || !loadings[j].is_finite() {
            return Err(Error::InvalidArgument(format!(
                "loading for column {j} must be positive, got {}",
                loadings[j]
            )));
        }
    }
    Ok(())
}

/// Coordinate-descent solver for the weighted Lasso. Non-convergence within
/// `max_iter` sweeps is reported through `converged = false`.
pub fn lasso_cd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loadings: &DVector<f64>,
    unpenalized: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    lasso_cd_warm(x, y, lambda, loadings, unpenalized, tol, max_iter, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lasso_cd_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loadings: &DVector<f64>,
    unpenalized: &[usize],
    tol: f64,
    max_iter: usize,
    init: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    validate_inputs(x, y, lambda, loadings, unpenalized)?;
    let (n, p) = x.shape();
    let nf = n as f64;

    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();
    let thresh: Vec<f64> = (0..p)
        .map(|j| {
            if unpenalized.contains(&j) {
                0.0
            } else {
                lambda * loadings[j] / (2.0 * nf)
            }
        })
        .collect();

    let mut coef = match init {
        Some(b) if b.len() == p => b.clone(),
        _ => DVector::zeros(p),
    };
    let mut resid = y - x * &coef;

    let objective = |resid: &DVector<f64>, coef: &DVector<f64>| -> f64 {
        let pen: f64 = (0..p).map(|j| 2.0 * thresh[j] * coef[j].abs()).sum();
        resid.norm_squared() / nf + pen
    };
    // KKT slack scaled to the problem so that badly scaled inputs still stop.
    let score_scale = (0..p)
        .map(|j| (2.0 * x.column(j).dot(y) / nf).abs())
        .fold(1.0_f64, f64::max);
    let kkt_tol = 1e-9 * score_scale;

    let update = |j: usize, coef: &mut DVector<f64>, resid: &mut DVector<f64>| -> f64 {
        let a = col_sq[j];
        if a == 0.0 {
            let old = coef[j];
            coef[j] = 0.0;
            return old.abs();
        }
        let col = x.column(j);
        let old = coef[j];
        let z = col.dot(resid) / nf + a * old;
        let new = soft_threshold(z, thresh[j]) / a;
        let delta = new - old;
        if delta != 0.0 {
            resid.axpy(-delta, &col, 1.0);
            coef[j] = new;
        }
        delta.abs()
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut active: Vec<usize>;

    'outer: while iterations < max_iter {
        // Full sweep.
        let mut max_change = 0.0_f64;
        for j in 0..p {
            max_change = max_change.max(update(j, &mut coef, &mut resid));
        }
        iterations += 1;
        trace.push(objective(&resid, &coef));
        if max_change < tol {
            if kkt_max_violation(x, &resid, &coef, &thresh) <= kkt_tol {
                converged = true;
                break;
            }
        }
        // Sweep the active set until it settles, then go back to a full sweep.
        active = (0..p).filter(|&j| coef[j] != 0.0 || thresh[j] == 0.0).collect();
        loop {
            if iterations >= max_iter {
                break 'outer;
            }
            let mut max_change = 0.0_f64;
            for &j in &active {
                max_change = max_change.max(update(j, &mut coef, &mut resid));
            }
            iterations += 1;
            trace.push(objective(&resid, &coef));
            if max_change < tol {
                break;
            }
        }
    }

    let support = (0..p).filter(|&j| coef[j] != 0.0).collect();
    Ok(LassoFit {
        coef,
        lambda,
        loadings: loadings.clone(),
        support,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Largest violation of the stationarity conditions
/// 2E_n[x_j e] = (λ/n)Ψ_j sign(β_j) for β_j ≠ 0 and |2E_n[x_j e]| ≤ (λ/n)Ψ_j otherwise,
/// expressed with per-column thresholds λΨ_j/(2n).
fn kkt_max_violation(
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    coef: &DVector<f64>,
    thresh: &[f64],
) -> f64 {
    let nf = resid.len() as f64;
    let mut worst = 0.0_f64;
    for j in 0..coef.len() {
        let score = 2.0 * x.column(j).dot(resid) / nf;
        let bound = 2.0 * thresh[j];
        let v = if coef[j] != 0.0 {
            (score - bound * coef[j].signum()).abs()
        } else {
            (score.abs() - bound).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Loadings floor relative to the largest loading.
const LOADING_FLOOR: f64 = 1e-8;

fn moment_loadings(x: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    let (n, p) = x.shape();
    let e2: Vec<f64> = e.iter().map(|v| v * v).collect();
    DVector::from_iterator(
        p,
        (0..p).map(|j| {
            let col = x.column(j);
            let s: f64 = (0..n).map(|i| col[i] * col[i] * e2[i]).sum();
            (s / n as f64).sqrt()
        }),
    )
}

fn floor_loadings(mut l: DVector<f64>) -> DVector<f64> {
    let max = l.max();
    let floor = if max > 0.0 { LOADING_FLOOR * max } else { LOADING_FLOOR };
    l.iter_mut().for_each(|v| *v = v.max(floor));
    l
}

/// Feasible Lasso: loadings start at √E_n[x_j²(y - ȳ)²] and are re-estimated
/// from the Lasso residuals for up to `loading_iterations` rounds, stopping
/// early once they reproduce themselves within `tol`.
pub fn feasible_loadings(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &PenaltyConfig,
) -> Result<(DVector<f64>, LassoFit)> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows but y has {}", y.len())));
    }
    let lambda = config.lambda(n, p.max(1))?;
    let ybar = y.mean();
    let centered = y.map(|v| v - ybar);
    let initial = moment_loadings(x, &centered);

    if initial.iter().all(|&v| v == 0.0) {
        // No variation to explain: the all-zero fit, loadings at the floor.
        let loadings = floor_loadings(initial);
        let fit = lasso_cd(x, y, lambda, &loadings, &config.unpenalized, config.tol, config.max_iter)?;
        return Ok((loadings, fit));
    }

    let mut loadings = floor_loadings(initial);
    let mut fit = lasso_cd_warm(
        x,
        y,
        lambda,
        &loadings,
        &config.unpenalized,
        config.tol,
        config.max_iter,
        None,
    )?;
    for _ in 0..config.loading_iterations {
        let e = fit.residuals(x, y);
        let next = floor_loadings(moment_loadings(x, &e));
        let change = (&next - &loadings).amax();
        if change <= config.tol {
            break;
        }
        loadings = next;
        let warm = fit.coef.clone();
        fit = lasso_cd_warm(
            x,
            y,
            lambda,
            &loadings,
            &config.unpenalized,
            config.tol,
            config.max_iter,
            Some(&warm),
        )?;
    }
    Ok((loadings, fit))
}

/// OLS refit of `y` on the columns in `support`.
pub fn post_lasso(x: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Result<OlsFit> {
    let p = x.ncols();
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("support index {j} out of range")));
    }
    if support.is_empty() {
        return ols_fit(&DMatrix::zeros(x.nrows(), 0), y);
    }
    ols_fit(&x.select_columns(support), y)
}
