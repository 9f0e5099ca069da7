//! Full-sample estimators of the treatment coefficient in
//! y = dα + x'β + ζ: post-double-selection and its comparators.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lasso::{feasible_loadings, LassoFit, PenaltyConfig};
use crate::montecarlo::{McSummary, Replicate};
use crate::regression::{
    check_level, classical_cov, hc_jackknife_cov, ols_fit, Dataset, EstimateReport, ReportFlags,
};
use crate::stats::{derive_seed, normal_quantile, two_sided_critical};

/// Settings shared by the selection-based estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOptions {
    pub penalty: PenaltyConfig,
    /// Nominal coverage of reported intervals.
    pub level: f64,
    /// Add a constant to every regression. Selection Lassos then run on
    /// column-centered data, which is the same as an unpenalized intercept.
    pub intercept: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { penalty: PenaltyConfig::default(), level: 0.95, intercept: false }
    }
}

/// Controls chosen by each selection step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionSets {
    /// From the treatment equation, d on X.
    pub i1: Vec<usize>,
    /// From the outcome equation, y on X.
    pub i2: Vec<usize>,
    /// From y on (d, X) with d unpenalized.
    pub i3: Option<Vec<usize>>,
    pub union: Vec<usize>,
}

impl SelectionSets {
    fn build(i1: Vec<usize>, i2: Vec<usize>, i3: Option<Vec<usize>>) -> Self {
        let mut union: Vec<usize> = i1.iter().chain(i2.iter()).copied().collect();
        if let Some(i3) = &i3 {
            union.extend(i3.iter().copied());
        }
        union.sort_unstable();
        union.dedup();
        SelectionSets { i1, i2, i3, union }
    }
}

fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    out
}

fn center(v: &DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.map(|a| a - m)
}

/// Data as seen by the selection Lassos, plus per-column importance scores
/// used when the selected set has to be truncated.
pub(crate) struct SelectionInput {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    col_sd: Vec<f64>,
}

impl SelectionInput {
    pub fn new(data: &Dataset, intercept: bool) -> Self {
        let (x, y, d) = if intercept {
            (center_columns(&data.x), center(&data.y), center(&data.d))
        } else {
            (data.x.clone(), data.y.clone(), data.d.clone())
        };
        let n = x.nrows() as f64;
        let col_sd = x.column_iter().map(|c| (c.norm_squared() / n).sqrt()).collect();
        SelectionInput { x, y, d, col_sd }
    }

    fn with_treatment(&self) -> DMatrix<f64> {
        let (n, p) = self.x.shape();
        let mut m = DMatrix::zeros(n, p + 1);
        m.set_column(0, &self.d);
        m.columns_mut(1, p).copy_from(&self.x);
        m
    }
}

/// Tracks the selection fits so that controls can be ranked by their
/// largest standardized Lasso coefficient.
#[derive(Default)]
pub(crate) struct SelectionTrace {
    scores: Vec<f64>,
    pub flags: ReportFlags,
}

impl SelectionTrace {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn new(p: usize) -> Self {
        SelectionTrace { scores: vec![0.0; p], flags: ReportFlags::default() }
    }

    /// Records a fit whose coefficient `offset + j` belongs to control j.
    fn record(&mut self, fit: &LassoFit, offset: usize, col_sd: &[f64]) {
        for (j, s) in self.scores.iter_mut().enumerate() {
            *s = s.max(fit.coef[offset + j].abs() * col_sd[j]);
        }
        if !fit.converged {
            self.flags.nonconverged = true;
        }
    }
}

fn controls_in(fit: &LassoFit, offset: usize) -> Vec<usize> {
    fit.support.iter().filter(|&&j| j >= offset).map(|&j| j - offset).collect()
}

/// Runs the requested selection Lassos on prepared data.
pub(crate) fn select_sets(
    input: &SelectionInput,
    penalty: &PenaltyConfig,
    want_i1_i2: bool,
    want_i3: bool,
) -> Result<(SelectionSets, SelectionTrace)> {
    let p = input.x.ncols();
    let mut trace = SelectionTrace::new(p);
    let base = penalty.with_unpenalized(Vec::new());
    let (mut i1, mut i2) = (Vec::new(), Vec::new());
    if want_i1_i2 {
        let (_, fit_d) = feasible_loadings(&input.x, &input.d, &base)?;
        trace.record(&fit_d, 0, &input.col_sd);
        i1 = fit_d.support.clone();
        let (_, fit_y) = feasible_loadings(&input.x, &input.y, &base)?;
        trace.record(&fit_y, 0, &input.col_sd);
        i2 = fit_y.support.clone();
    }
    let i3 = if want_i3 {
        let (_, fit) = feasible_loadings(&input.with_treatment(), &input.y, &penalty.with_unpenalized(vec![0]))?;
        trace.record(&fit, 1, &input.col_sd);
        Some(controls_in(&fit, 1))
    } else {
        None
    };
    Ok((SelectionSets::build(i1, i2, i3), trace))
}

/// Number of controls that still leaves one residual degree of freedom.
fn max_controls(n: usize, intercept: bool) -> Result<usize> {
    let fixed = 2 + usize::from(intercept);
    if n <= fixed {
        return Err(Error::DegreesOfFreedom { params: fixed, n });
    }
    Ok(n - fixed)
}

/// Applies the degrees-of-freedom guard: keeps the highest-scoring controls
/// when the set would exhaust the sample.
pub(crate) fn guard_selection(
    controls: &[usize],
    n: usize,
    intercept: bool,
    scores: &[f64],
) -> Result<(Vec<usize>, bool)> {
    let cap = max_controls(n, intercept)?;
    if controls.len() <= cap {
        return Ok((controls.to_vec(), false));
    }
    let mut ranked = controls.to_vec();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked.truncate(cap);
    ranked.sort_unstable();
    Ok((ranked, true))
}

/// Design [d, 1?, X[controls]].
pub(crate) fn treatment_design(
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    controls: &[usize],
    intercept: bool,
) -> DMatrix<f64> {
    let n = d.len();
    let extra = usize::from(intercept);
    let mut m = DMatrix::zeros(n, 1 + extra + controls.len());
    m.set_column(0, d);
    if intercept {
        m.column_mut(1).fill(1.0);
    }
    for (k, &j) in controls.iter().enumerate() {
        m.set_column(1 + extra + k, &x.column(j));
    }
    m
}

/// OLS of y on (d, X[controls]) with HC3 standard error for α̂.
fn treatment_ols(
    y: &DVector<f64>,
    d: &DVector<f64>,
    x: &DMatrix<f64>,
    controls: &[usize],
    intercept: bool,
) -> Result<(f64, f64)> {
    let design = treatment_design(d, x, controls, intercept);
    let fit = ols_fit(&design, y)?;
    if fit.kept.first() != Some(&0) {
        return Err(Error::TreatmentCollinear);
    }
    let cov = hc_jackknife_cov(&fit, &design)?;
    Ok((fit.coef[0], cov[(0, 0)].max(0.0).sqrt()))
}

/// OLS of y on d and a fixed set of controls, with the HC3 standard error.
pub fn fixed_set_estimate(data: &Dataset, controls: &[usize], opts: &EstimatorOptions) -> Result<EstimateReport> {
    check_level(opts.level)?;
    if let Some(&j) = controls.iter().find(|&&j| j >= data.p()) {
        return Err(Error::InvalidArgument(format!("control index {j} out of range")));
    }
    let mut controls = controls.to_vec();
    controls.sort_unstable();
    controls.dedup();
    let params = 1 + usize::from(opts.intercept) + controls.len();
    if params >= data.n() {
        return Err(Error::DegreesOfFreedom { params, n: data.n() });
    }
    let (alpha, se) = treatment_ols(&data.y, &data.d, &data.x, &controls, opts.intercept)?;
    EstimateReport::new(alpha, se, opts.level, controls, ReportFlags::default())
}

fn finish(
    data: &Dataset,
    controls: &[usize],
    trace: &SelectionTrace,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let (controls, truncated) = guard_selection(controls, data.n(), opts.intercept, &trace.scores)?;
    let (alpha, se) = treatment_ols(&data.y, &data.d, &data.x, &controls, opts.intercept)?;
    let flags = trace.flags.merge(ReportFlags { truncated, nonconverged: false });
    EstimateReport::new(alpha, se, opts.level, controls, flags)
}

/// Selection sets Î₁ (d on X) and Î₂ (y on X), optionally Î₃.
pub fn selection_sets(data: &Dataset, opts: &EstimatorOptions, with_i3: bool) -> Result<SelectionSets> {
    let input = SelectionInput::new(data, opts.intercept);
    Ok(select_sets(&input, &opts.penalty, true, with_i3)?.0)
}

/// Post-double-selection: OLS of y on d and the union of controls selected
/// from the treatment and outcome equations.
pub fn double_selection(data: &Dataset, opts: &EstimatorOptions) -> Result<EstimateReport> {
    check_level(opts.level)?;
    let input = SelectionInput::new(data, opts.intercept);
    let (sets, trace) = select_sets(&input, &opts.penalty, true, false)?;
    finish(data, &sets.union, &trace, opts)
}

/// Double selection with the extra set Î₃ from y on (d, X), d unpenalized.
pub fn ds_plus_i3(data: &Dataset, opts: &EstimatorOptions) -> Result<EstimateReport> {
    check_level(opts.level)?;
    let input = SelectionInput::new(data, opts.intercept);
    let (sets, trace) = select_sets(&input, &opts.penalty, true, true)?;
    finish(data, &sets.union, &trace, opts)
}

/// Post-single-selection: controls from the outcome equation only (Lasso of
/// y on (d, X) with d unpenalized), then OLS.
pub fn single_selection_post_lasso(data: &Dataset, opts: &EstimatorOptions) -> Result<EstimateReport> {
    check_level(opts.level)?;
    let input = SelectionInput::new(data, opts.intercept);
    let (sets, trace) = select_sets(&input, &opts.penalty, false, true)?;
    let i2 = sets.i3.unwrap_or_default();
    finish(data, &i2, &trace, opts)
}

/// Plain Lasso of y on (d, X) with d unpenalized. The point estimate is the
/// Lasso coefficient on d; the standard error comes from the HC3 OLS on d and
/// the Lasso-active controls.
pub fn lasso_direct(data: &Dataset, opts: &EstimatorOptions) -> Result<EstimateReport> {
    check_level(opts.level)?;
    let input = SelectionInput::new(data, opts.intercept);
    let mut trace = SelectionTrace::new(data.p());
    let (_, fit) = feasible_loadings(&input.with_treatment(), &input.y, &opts.penalty.with_unpenalized(vec![0]))?;
    trace.record(&fit, 1, &input.col_sd);
    let alpha = fit.coef[0];
    let active = controls_in(&fit, 1);
    let (controls, truncated) = guard_selection(&active, data.n(), opts.intercept, &trace.scores)?;
    let (_, se) = treatment_ols(&data.y, &data.d, &data.x, &controls, opts.intercept)?;
    let flags = trace.flags.merge(ReportFlags { truncated, nonconverged: false });
    EstimateReport::new(alpha, se, opts.level, controls, flags)
}

/// Union of the double-selection and post-Lasso intervals (convex hull when
/// they are disjoint); the point estimate is the midpoint.
pub fn union_ads(ds: &EstimateReport, post_lasso: &EstimateReport) -> Result<EstimateReport> {
    if ds.level != post_lasso.level {
        return Err(Error::InvalidArgument(format!(
            "interval levels differ: {} vs {}",
            ds.level, post_lasso.level
        )));
    }
    let lower = ds.ci_lower.min(post_lasso.ci_lower);
    let upper = ds.ci_upper.max(post_lasso.ci_upper);
    let mut selected: Vec<usize> = ds.selected.iter().chain(post_lasso.selected.iter()).copied().collect();
    selected.sort_unstable();
    selected.dedup();
    let z = two_sided_critical(ds.level);
    Ok(EstimateReport {
        alpha_hat: 0.5 * (lower + upper),
        se: (upper - lower) / (2.0 * z),
        ci_lower: lower,
        ci_upper: upper,
        level: ds.level,
        s_hat: selected.len(),
        selected,
        flags: ds.flags.merge(post_lasso.flags),
    })
}

fn oracle_with(data: &Dataset, opts: &EstimatorOptions, both: bool) -> Result<EstimateReport> {
    check_level(opts.level)?;
    let truth = data.truth.as_ref().ok_or(Error::MissingTruth("oracle estimators need simulated truth"))?;
    let n = data.n();
    let mut signals = vec![truth.signal_y.clone()];
    let mut selected = truth.support_y.clone();
    if both {
        signals.push(truth.signal_d.clone());
        selected.extend(truth.support_d.iter().copied());
        selected.sort_unstable();
        selected.dedup();
    }
    let extra = usize::from(opts.intercept);
    let mut design = DMatrix::zeros(n, 1 + extra + signals.len());
    design.set_column(0, &data.d);
    if opts.intercept {
        design.column_mut(1).fill(1.0);
    }
    for (k, s) in signals.iter().enumerate() {
        design.set_column(1 + extra + k, s);
    }
    let fit = ols_fit(&design, &data.y)?;
    if fit.kept.first() != Some(&0) {
        return Err(Error::TreatmentCollinear);
    }
    let cov = hc_jackknife_cov(&fit, &design)?;
    EstimateReport::new(fit.coef[0], cov[(0, 0)].max(0.0).sqrt(), opts.level, selected, ReportFlags::default())
}

/// OLS of y on d and the true outcome index x'(c_y β₀).
pub fn oracle(data: &Dataset, opts: &EstimatorOptions) -> Result<EstimateReport> {
    oracle_with(data, opts, false)
}

/// OLS of y on d and both true indices x'(c_y β₀), x'(c_d β₁); a collinear
/// treatment index is dropped.
pub fn ds_oracle(data: &Dataset, opts: &EstimatorOptions) -> Result<EstimateReport> {
    oracle_with(data, opts, true)
}

/// Single- vs double-selection coverage in the one-control model
/// y = α₀d + β_g x + ζ, d = β_m x + v, with t-test selection at Φ⁻¹(1 - 1/(2n)).
#[derive(Debug, Clone)]
pub struct P1Demo {
    pub single: McSummary,
    pub double: McSummary,
    /// Share of replications in which x was kept, per method.
    pub single_inclusion: f64,
    pub double_inclusion: f64,
}

/// True treatment effect used by the one-control experiment.
pub const P1_ALPHA0: f64 = 0.5;

pub fn p1_ttest_demo(beta_g: f64, beta_m: f64, n: usize, reps: usize, seed: u64) -> Result<P1Demo> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("n must be at least 4, got {n}")));
    }
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let level = 0.95;
    let thr = normal_quantile(1.0 - 1.0 / (2.0 * n as f64));
    let mut single = Vec::with_capacity(reps);
    let mut double = Vec::with_capacity(reps);
    let (mut inc_s, mut inc_d) = (0usize, 0usize);
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, r as u64]));
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = DVector::from_fn(n, |_, _| draw());
        let v = DVector::from_fn(n, |_, _| draw());
        let zeta = DVector::from_fn(n, |_, _| draw());
        let d = &x * beta_m + v;
        let y = &d * P1_ALPHA0 + &x * beta_g + zeta;

        let long = DMatrix::from_columns(&[d.clone(), x.clone()]);
        let fit_g = ols_fit(&long, &y)?;
        let t_g = t_stat(&fit_g, 1)?;
        let xm = DMatrix::from_columns(&[x.clone()]);
        let fit_m = ols_fit(&xm, &d)?;
        let t_m = t_stat(&fit_m, 0)?;

        let keep_single = t_g.abs() > thr;
        let keep_double = keep_single || t_m.abs() > thr;
        inc_s += usize::from(keep_single);
        inc_d += usize::from(keep_double);

        let data = Dataset::new(y, d, xm)?;
        let opts = EstimatorOptions { level, ..Default::default() };
        let run = |keep: bool| -> Replicate {
            let controls: Vec<usize> = if keep { vec![0] } else { Vec::new() };
            Replicate::from_result(&fixed_set_estimate(&data, &controls, &opts), P1_ALPHA0)
        };
        single.push(run(keep_single));
        double.push(run(keep_double));
    }
    Ok(P1Demo {
        single: McSummary::from_replicates("single-selection", "p1", 0.0, 0.0, &single),
        double: McSummary::from_replicates("double-selection", "p1", 0.0, 0.0, &double),
        single_inclusion: inc_s as f64 / reps as f64,
        double_inclusion: inc_d as f64 / reps as f64,
    })
}

fn t_stat(fit: &crate::regression::OlsFit, j: usize) -> Result<f64> {
    let cov = classical_cov(fit)?;
    let se = cov[(j, j)].sqrt();
    Ok(if se > 0.0 { fit.coef[j] / se } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn noise_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = DMatrix::from_fn(n, p, |_, _| draw());
        let d = DVector::from_fn(n, |_, _| draw());
        let y = DVector::from_fn(n, |i, _| 0.5 * d[i] + draw());
        Dataset::new(y, d, x).unwrap()
    }

    #[test]
    fn union_ads_arithmetic() {
        let z = two_sided_critical(0.95);
        let mk = |lo: f64, hi: f64| EstimateReport {
            alpha_hat: 0.5 * (lo + hi),
            se: (hi - lo) / (2.0 * z),
            ci_lower: lo,
            ci_upper: hi,
            level: 0.95,
            selected: vec![],
            s_hat: 0,
            flags: ReportFlags::default(),
        };
        let u = union_ads(&mk(0.0, 1.0), &mk(0.5, 2.0)).unwrap();
        assert_eq!((u.ci_lower, u.ci_upper, u.alpha_hat), (0.0, 2.0, 1.0));
        let u = union_ads(&mk(0.0, 1.0), &mk(2.0, 3.0)).unwrap();
        assert_eq!((u.ci_lower, u.ci_upper, u.alpha_hat), (0.0, 3.0, 1.5));
        let a = mk(0.2, 0.6);
        let u = union_ads(&a, &a).unwrap();
        assert_abs_diff_eq!(u.alpha_hat, a.alpha_hat, epsilon = 1e-15);
        assert_eq!((u.ci_lower, u.ci_upper), (a.ci_lower, a.ci_upper));
        let mut b = mk(0.0, 1.0);
        b.level = 0.9;
        assert!(union_ads(&a, &b).is_err());
    }

    #[test]
    fn null_selection_matches_bivariate_ols() {
        let data = noise_data(400, 30, 1);
        let opts = EstimatorOptions::default();
        let ds = double_selection(&data, &opts).unwrap();
        if ds.selected.is_empty() {
            let biv = fixed_set_estimate(&data, &[], &opts).unwrap();
            assert_abs_diff_eq!(ds.alpha_hat, biv.alpha_hat, epsilon = 1e-12);
            assert_abs_diff_eq!(ds.se, biv.se, epsilon = 1e-12);
        }
        let direct = lasso_direct(&data, &opts).unwrap();
        if direct.selected.is_empty() {
            let biv = fixed_set_estimate(&data, &[], &opts).unwrap();
            assert_abs_diff_eq!(direct.alpha_hat, biv.alpha_hat, epsilon = 1e-6);
        }
    }

    #[test]
    fn oracle_requires_truth() {
        let data = noise_data(20, 3, 2);
        assert!(matches!(oracle(&data, &EstimatorOptions::default()), Err(Error::MissingTruth(_))));
    }

    #[test]
    fn guard_truncates_by_score() {
        let scores = vec![0.1, 0.9, 0.5, 0.7, 0.0];
        let (kept, truncated) = guard_selection(&[0, 1, 2, 3, 4], 5, false, &scores).unwrap();
        assert!(truncated);
        assert_eq!(kept, vec![1, 3, 2].into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect::<Vec<_>>());
        let (kept, truncated) = guard_selection(&[0, 1], 5, false, &scores).unwrap();
        assert!(!truncated);
        assert_eq!(kept, vec![0, 1]);
        assert!(guard_selection(&[0], 2, false, &scores).is_err());
    }

    #[test]
    fn fixed_set_dof_error() {
        let data = noise_data(5, 6, 3);
        let opts = EstimatorOptions::default();
        assert!(matches!(
            fixed_set_estimate(&data, &[0, 1, 2, 3], &opts),
            Err(Error::DegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn p1_far_above_threshold_both_include() {
        let demo = p1_ttest_demo(10.0, 1.0, 100, 200, 7).unwrap();
        assert_eq!(demo.single_inclusion, 1.0);
        assert_eq!(demo.double_inclusion, 1.0);
        assert_eq!(demo.single.coverage_95, demo.double.coverage_95);
    }
}
