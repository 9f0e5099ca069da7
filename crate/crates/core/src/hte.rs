//! Average treatment effects with a binary treatment via the efficient
//! moment conditions, using post-Lasso outcome regressions and propensity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lasso::{feasible_loadings, PenaltyConfig};
use crate::logistic::{logistic, logistic_feasible, logistic_mle};
use crate::regression::{check_finite, check_level, ols_fit, t_interval, ReportFlags};

/// Propensity link Λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Linear,
    Logit,
}

impl Link {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Link::Linear => u,
            Link::Logit => logistic(u),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Linear => "linear",
            Link::Logit => "logit",
        })
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Link::Linear),
            "logit" | "logistic" => Ok(Link::Logit),
            _ => Err(Error::InvalidArgument(format!("unknown link `{s}`; use linear or logit"))),
        }
    }
}

pub const DEFAULT_TRIM_EPS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct HteConfig {
    pub penalty: PenaltyConfig,
    /// Propensities are clipped to [trim_eps, 1 - trim_eps].
    pub trim_eps: f64,
}

impl Default for HteConfig {
    fn default() -> Self {
        HteConfig { penalty: PenaltyConfig::default(), trim_eps: DEFAULT_TRIM_EPS }
    }
}

/// Fitted nuisance functions g(0,z) = a₀ + x'β_{g,0}, g(1,z) = a₁ + x'β_{g,1}
/// and m(z) = Λ(a_m + x'β_m).
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    pub g0_intercept: f64,
    pub g0_coef: DVector<f64>,
    pub g1_intercept: f64,
    pub g1_coef: DVector<f64>,
    pub m_intercept: f64,
    pub m_coef: DVector<f64>,
    pub link: Link,
    pub trim_eps: f64,
    pub support_g0: Vec<usize>,
    pub support_g1: Vec<usize>,
    pub support_m: Vec<usize>,
    pub flags: ReportFlags,
}

/// Coefficient block of the nuisance functions, or the effect itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceBlock {
    G0,
    G1,
    M,
    Alpha,
}

/// Nuisance values at each observation.
#[derive(Debug, Clone)]
pub struct NuisanceValues {
    pub g0: DVector<f64>,
    pub g1: DVector<f64>,
    pub m: DVector<f64>,
}

impl NuisanceFits {
    /// Nuisance functions with known coefficients and empty supports.
    pub fn from_coefficients(
        g0: (f64, DVector<f64>),
        g1: (f64, DVector<f64>),
        m: (f64, DVector<f64>),
        link: Link,
        trim_eps: f64,
    ) -> Result<Self> {
        check_trim(trim_eps)?;
        let p = g0.1.len();
        if g1.1.len() != p || m.1.len() != p {
            return Err(Error::Dimension("nuisance coefficient lengths differ".into()));
        }
        let nz = |v: &DVector<f64>| (0..v.len()).filter(|&j| v[j] != 0.0).collect();
        Ok(NuisanceFits {
            support_g0: nz(&g0.1),
            support_g1: nz(&g1.1),
            support_m: nz(&m.1),
            g0_intercept: g0.0,
            g0_coef: g0.1,
            g1_intercept: g1.0,
            g1_coef: g1.1,
            m_intercept: m.0,
            m_coef: m.1,
            link,
            trim_eps,
            flags: ReportFlags::default(),
        })
    }

    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<NuisanceValues> {
        if x.ncols() != self.g0_coef.len() {
            return Err(Error::Dimension(format!(
                "X has {} columns but nuisances have {}",
                x.ncols(),
                self.g0_coef.len()
            )));
        }
        let g0 = (x * &self.g0_coef).add_scalar(self.g0_intercept);
        let g1 = (x * &self.g1_coef).add_scalar(self.g1_intercept);
        let (lo, hi) = (self.trim_eps, 1.0 - self.trim_eps);
        let m = (x * &self.m_coef).map(|u| self.link.apply(u + self.m_intercept).clamp(lo, hi));
        Ok(NuisanceValues { g0, g1, m })
    }

    fn perturbed(&self, block: NuisanceBlock, direction: &DVector<f64>, t: f64) -> NuisanceFits {
        let mut out = self.clone();
        match block {
            NuisanceBlock::G0 => out.g0_coef.axpy(t, direction, 1.0),
            NuisanceBlock::G1 => out.g1_coef.axpy(t, direction, 1.0),
            NuisanceBlock::M => out.m_coef.axpy(t, direction, 1.0),
            NuisanceBlock::Alpha => {}
        }
        out
    }
}

fn check_trim(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("trim_eps must lie in (0, 0.5), got {eps}")))
    }
}

fn check_propensity(m: f64) -> Result<()> {
    if m > 0.0 && m < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("propensity {m} outside (0,1)")))
    }
}

/// Efficient ATE moment α - d(y-g₁)/m + (1-d)(y-g₀)/(1-m) - (g₁-g₀).
pub fn phi(alpha: f64, y: f64, d: f64, g0: f64, g1: f64, m: f64) -> Result<f64> {
    check_propensity(m)?;
    Ok(alpha - d * (y - g1) / m + (1.0 - d) * (y - g0) / (1.0 - m) - (g1 - g0))
}

/// Efficient ATT moment
/// d(y-g₁)/μ - m(1-d)(y-g₀)/((1-m)μ) + d(g₁-g₀)/μ - γd/μ.
pub fn phi_tilde(gamma: f64, y: f64, d: f64, g0: f64, g1: f64, m: f64, mu: f64) -> Result<f64> {
    check_propensity(m)?;
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Domain(format!("treated share {mu} outside (0,1]")));
    }
    Ok(d * (y - g1) / mu - m * (1.0 - d) * (y - g0) / ((1.0 - m) * mu) + d * (g1 - g0) / mu - gamma * d / mu)
}

fn check_inputs(y: &DVector<f64>, d: &DVector<f64>, x: &DMatrix<f64>) -> Result<(usize, usize)> {
    let n = x.nrows();
    if y.len() != n || d.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, y {}, d {}", y.len(), d.len())));
    }
    check_finite("y", y.as_slice())?;
    check_finite("X", x.as_slice())?;
    if let Some(i) = d.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("treatment entry {i} is not 0/1")));
    }
    let treated = d.iter().filter(|&&v| v == 1.0).count();
    Ok((treated, n - treated))
}

/// Caps a support at `cap` columns, keeping the largest |coef|·sd.
fn cap_support(support: Vec<usize>, coef: impl Fn(usize) -> f64, x: &DMatrix<f64>, cap: usize) -> (Vec<usize>, bool) {
    if support.len() <= cap {
        return (support, false);
    }
    let n = x.nrows() as f64;
    let score = |j: usize| coef(j).abs() * (x.column(j).norm_squared() / n).sqrt();
    let mut ranked = support;
    ranked.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    ranked.truncate(cap);
    ranked.sort_unstable();
    (ranked, true)
}

fn with_constant(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut m = DMatrix::zeros(n, cols.len() + 1);
    m.column_mut(0).fill(1.0);
    for (k, &j) in cols.iter().enumerate() {
        m.set_column(k + 1, &x.column(j));
    }
    m
}

/// OLS of y on (1, X[support]); returns the intercept and a full-length
/// coefficient vector.
fn refit_linear(x: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Result<(f64, DVector<f64>)> {
    let fit = ols_fit(&with_constant(x, support), y)?;
    let mut coef = DVector::zeros(x.ncols());
    for (k, &j) in support.iter().enumerate() {
        coef[j] = fit.coef[k + 1];
    }
    Ok((fit.coef[0], coef))
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx)
}

/// Post-Lasso nuisance estimates. The outcome Lasso runs once over the
/// interacted dictionary (d, 1-d, d·x, (1-d)·x) with the two arm intercepts
/// unpenalized; each arm is then refit by OLS on its own support. The
/// propensity Lasso includes an unpenalized intercept.
pub fn fit_nuisances(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    link: Link,
    config: &HteConfig,
) -> Result<NuisanceFits> {
    check_trim(config.trim_eps)?;
    let (n1, n0) = check_inputs(y, d, x)?;
    if n1 < 2 || n0 < 2 {
        return Err(Error::ArmSize(format!("{n1} treated and {n0} control observations; need at least 2 each")));
    }
    let (n, p) = x.shape();
    let mut flags = ReportFlags::default();

    let mut dict = DMatrix::zeros(n, 2 * p + 2);
    for i in 0..n {
        let (di, ci) = (d[i], 1.0 - d[i]);
        dict[(i, 0)] = di;
        dict[(i, 1)] = ci;
        for j in 0..p {
            dict[(i, 2 + j)] = di * x[(i, j)];
            dict[(i, 2 + p + j)] = ci * x[(i, j)];
        }
    }
    let (_, g_fit) = feasible_loadings(&dict, y, &config.penalty.with_unpenalized(vec![0, 1]))?;
    flags.nonconverged |= !g_fit.converged;
    let s1: Vec<usize> = (0..p).filter(|&j| g_fit.coef[2 + j] != 0.0).collect();
    let s0: Vec<usize> = (0..p).filter(|&j| g_fit.coef[2 + p + j] != 0.0).collect();

    let treated: Vec<usize> = (0..n).filter(|&i| d[i] == 1.0).collect();
    let control: Vec<usize> = (0..n).filter(|&i| d[i] == 0.0).collect();
    let (x1, x0) = (rows(x, &treated), rows(x, &control));
    let (y1, y0) = (y.select_rows(&treated), y.select_rows(&control));
    let (s1, t1) = cap_support(s1, |j| g_fit.coef[2 + j], &x1, n1 - 2);
    let (s0, t0) = cap_support(s0, |j| g_fit.coef[2 + p + j], &x0, n0 - 2);
    flags.truncated |= t1 || t0;
    let (g1_intercept, g1_coef) = refit_linear(&x1, &y1, &s1)?;
    let (g0_intercept, g0_coef) = refit_linear(&x0, &y0, &s0)?;

    let all: Vec<usize> = (0..p).collect();
    let xm = with_constant(x, &all);
    let m_penalty = config.penalty.with_unpenalized(vec![0]);
    let (m_lasso_coef, m_converged) = match link {
        Link::Linear => {
            let (_, f) = feasible_loadings(&xm, d, &m_penalty)?;
            (f.coef, f.converged)
        }
        Link::Logit => {
            let (_, f) = logistic_feasible(&xm, d, &m_penalty)?;
            (f.coef, f.converged)
        }
    };
    flags.nonconverged |= !m_converged;
    let sm: Vec<usize> = (0..p).filter(|&j| m_lasso_coef[1 + j] != 0.0).collect();
    let (sm, tm) = cap_support(sm, |j| m_lasso_coef[1 + j], x, n - 2);
    flags.truncated |= tm;
    let (m_intercept, m_coef) = match link {
        Link::Linear => refit_linear(x, d, &sm)?,
        Link::Logit => {
            let b = logistic_mle(&with_constant(x, &sm), d, 100)?;
            let mut coef = DVector::zeros(p);
            for (k, &j) in sm.iter().enumerate() {
                coef[j] = b[k + 1];
            }
            (b[0], coef)
        }
    };

    Ok(NuisanceFits {
        g0_intercept,
        g0_coef,
        g1_intercept,
        g1_coef,
        m_intercept,
        m_coef,
        link,
        trim_eps: config.trim_eps,
        support_g0: s0,
        support_g1: s1,
        support_m: sm,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EffectKind {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "ATT")]
    Att,
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectKind::Ate => "ATE",
            EffectKind::Att => "ATT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteReport {
    pub effect_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub kind: EffectKind,
    /// Share of treated observations; ATT only.
    pub mu_hat: Option<f64>,
    pub n: usize,
    pub flags: ReportFlags,
}

impl AteReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

/// Per-observation ATE moments at `alpha`.
pub fn ate_moments(y: &DVector<f64>, d: &DVector<f64>, v: &NuisanceValues, alpha: f64) -> Result<DVector<f64>> {
    let n = y.len();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = phi(alpha, y[i], d[i], v.g0[i], v.g1[i], v.m[i])?;
    }
    Ok(out)
}

/// Per-observation ATT moments at `gamma`.
pub fn att_moments(y: &DVector<f64>, d: &DVector<f64>, v: &NuisanceValues, gamma: f64, mu: f64) -> Result<DVector<f64>> {
    let n = y.len();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = phi_tilde(gamma, y[i], d[i], v.g0[i], v.g1[i], v.m[i], mu)?;
    }
    Ok(out)
}

/// ATE from given nuisance fits: the root of E_n[φ(α, …)] = 0 in closed form.
pub fn ate_from_fits(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    fits: &NuisanceFits,
    level: f64,
) -> Result<AteReport> {
    check_level(level)?;
    let (n1, n0) = check_inputs(y, d, x)?;
    if n1 == 0 || n0 == 0 {
        return Err(Error::ArmSize(format!("{n1} treated and {n0} control observations")));
    }
    let v = fits.evaluate(x)?;
    let n = y.len();
    let alpha = ate_moments(y, d, &v, 0.0)?.iter().map(|&s| -s).sum::<f64>() / n as f64;
    let moments = ate_moments(y, d, &v, alpha)?;
    finish(alpha, &moments, level, EffectKind::Ate, None, fits.flags)
}

/// ATT from given nuisance fits, with μ̂ = E_n[d].
pub fn att_from_fits(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    fits: &NuisanceFits,
    level: f64,
) -> Result<AteReport> {
    check_level(level)?;
    let (n1, _) = check_inputs(y, d, x)?;
    if n1 == 0 {
        return Err(Error::NoTreated);
    }
    let v = fits.evaluate(x)?;
    let n = y.len();
    let mu = n1 as f64 / n as f64;
    let mut num = 0.0;
    for i in 0..n {
        let (yi, di, g0, g1, m) = (y[i], d[i], v.g0[i], v.g1[i], v.m[i]);
        num += di * (yi - g1) - m * (1.0 - di) * (yi - g0) / (1.0 - m) + di * (g1 - g0);
    }
    let gamma = num / n as f64 / mu;
    let moments = att_moments(y, d, &v, gamma, mu)?;
    finish(gamma, &moments, level, EffectKind::Att, Some(mu), fits.flags)
}

fn finish(
    effect: f64,
    moments: &DVector<f64>,
    level: f64,
    kind: EffectKind,
    mu_hat: Option<f64>,
    flags: ReportFlags,
) -> Result<AteReport> {
    let n = moments.len();
    let sigma2 = moments.norm_squared() / n as f64;
    let se = (sigma2 / n as f64).sqrt();
    let (ci_lower, ci_upper) = t_interval(effect, se, level)?;
    Ok(AteReport { effect_hat: effect, se, ci_lower, ci_upper, level, kind, mu_hat, n, flags })
}

pub fn ate_estimate(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    link: Link,
    config: &HteConfig,
    level: f64,
) -> Result<AteReport> {
    check_level(level)?;
    let fits = fit_nuisances(y, d, x, link, config)?;
    ate_from_fits(y, d, x, &fits, level)
}

pub fn att_estimate(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    link: Link,
    config: &HteConfig,
    level: f64,
) -> Result<AteReport> {
    check_level(level)?;
    let (n1, _) = check_inputs(y, d, x)?;
    if n1 == 0 {
        return Err(Error::NoTreated);
    }
    let fits = fit_nuisances(y, d, x, link, config)?;
    att_from_fits(y, d, x, &fits, level)
}

/// Central finite difference of E_n[φ(α̌, …)] when the coefficients of one
/// nuisance block move along `direction`. For the `Alpha` block the effect
/// itself moves by ±h and `direction` is ignored. α̌ is held at its value
/// under the unperturbed fits.
pub fn immunization_check(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    fits: &NuisanceFits,
    block: NuisanceBlock,
    direction: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if direction.len() != fits.g0_coef.len() {
        return Err(Error::Dimension("direction length must equal the number of controls".into()));
    }
    check_inputs(y, d, x)?;
    let alpha = ate_from_fits(y, d, x, fits, 0.95)?.effect_hat;
    let n = y.len() as f64;
    let mean_at = |t: f64| -> Result<f64> {
        let shifted = fits.perturbed(block, direction, t);
        let a = if block == NuisanceBlock::Alpha { alpha + t } else { alpha };
        Ok(ate_moments(y, d, &shifted.evaluate(x)?, a)?.sum() / n)
    };
    Ok((mean_at(h)? - mean_at(-h)?) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn phi_hand_values() {
        assert_abs_diff_eq!(phi(0.5, 1.0, 1.0, 0.0, 0.5, 0.5).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(phi(0.3, 2.0, 1.0, 1.0, 2.0, 0.4).unwrap(), 0.3 - 1.0, epsilon = 1e-15);
        let a = phi(0.1, 1.3, 0.0, 0.2, 0.7, 0.3).unwrap();
        let b = phi(0.6, 1.3, 0.0, 0.2, 0.7, 0.3).unwrap();
        assert_abs_diff_eq!(b - a, 0.5, epsilon = 1e-15);
        assert!(matches!(phi(0.0, 0.0, 1.0, 0.0, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn phi_tilde_hand_values() {
        assert_abs_diff_eq!(phi_tilde(0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.5).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(phi_tilde(0.7, 0.4, 0.0, 0.4, 1.0, 0.5, 0.5).unwrap(), 0.0);
        let a = phi_tilde(0.0, 1.0, 1.0, 0.2, 0.9, 0.4, 0.25).unwrap();
        let b = phi_tilde(1.0, 1.0, 1.0, 0.2, 0.9, 0.4, 0.25).unwrap();
        assert_abs_diff_eq!(b - a, -4.0, epsilon = 1e-12);
        assert!(matches!(phi_tilde(0.0, 0.0, 1.0, 0.0, 0.0, 0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_outcome_gives_zero_effects() {
        let n = 8;
        let x = DMatrix::from_fn(n, 2, |i, j| (i * (j + 1)) as f64 * 0.1);
        let d = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let y = DVector::zeros(n);
        let zero = || (0.0, DVector::zeros(2));
        let fits = NuisanceFits::from_coefficients(zero(), zero(), (0.5, DVector::zeros(2)), Link::Linear, 0.01).unwrap();
        let ate = ate_from_fits(&y, &d, &x, &fits, 0.95).unwrap();
        assert_eq!(ate.effect_hat, 0.0);
        let att = att_from_fits(&y, &d, &x, &fits, 0.95).unwrap();
        assert_eq!(att.effect_hat, 0.0);
    }

    #[test]
    fn arm_size_errors() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_element(5, 1.0);
        let d = DVector::from_element(5, 1.0);
        assert!(matches!(
            fit_nuisances(&y, &d, &x, Link::Linear, &HteConfig::default()),
            Err(Error::ArmSize(_))
        ));
        let d0 = DVector::zeros(5);
        assert_eq!(
            att_estimate(&y, &d0, &x, Link::Linear, &HteConfig::default(), 0.95).unwrap_err(),
            Error::NoTreated
        );
    }

    #[test]
    fn trimming_bounds_propensity() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64 * 10.0 - 15.0);
        let fits = NuisanceFits::from_coefficients(
            (0.0, DVector::zeros(1)),
            (0.0, DVector::zeros(1)),
            (0.5, DVector::from_element(1, 1.0)),
            Link::Linear,
            0.05,
        )
        .unwrap();
        let v = fits.evaluate(&x).unwrap();
        assert!(v.m.iter().all(|&m| (0.05..=0.95).contains(&m)));
    }
}
