//! Split-sample double selection: controls are chosen on one half and used
//! to fit the other, the two half estimates are combined by precision, and
//! the variance uses truncated cross-fitted residuals.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::regression::{check_level, ols_fit, Dataset, EstimateReport, ReportFlags};
use crate::selection::{guard_selection, select_sets, treatment_design, EstimatorOptions, SelectionInput};

/// Default truncation constant for the residual cut-off H_k.
pub const DEFAULT_TRUNC_C: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub options: EstimatorOptions,
    /// Constant C in H_k = C·√(n / ((ŝ ∨ √n)·log n)).
    pub trunc_c: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { options: EstimatorOptions::default(), trunc_c: DEFAULT_TRUNC_C }
    }
}

/// Diagnostics of a split-sample fit. Residual vectors are in the original
/// row order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFit {
    pub idx_a: Vec<usize>,
    pub idx_b: Vec<usize>,
    /// Controls selected on subsample A and on subsample B.
    pub i_hat_a: Vec<usize>,
    pub i_hat_b: Vec<usize>,
    /// Controls used to fit subsample A (from B, after the degrees-of-freedom
    /// guard) and subsample B (from A).
    pub controls_a: Vec<usize>,
    pub controls_b: Vec<usize>,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub upsilon_a: f64,
    pub upsilon_b: f64,
    pub alpha_ab: f64,
    pub v_hat: DVector<f64>,
    pub zeta_hat: DVector<f64>,
    pub s_hat_a: usize,
    pub s_hat_b: usize,
    pub intercept: bool,
    /// Number of observations whose ζ̂ was zeroed by truncation.
    pub truncated_count: usize,
    pub flags: ReportFlags,
}

/// Random partition into A with ⌈n/2⌉ rows and B with the rest, both sorted.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("split sample needs n >= 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let n_a = n.div_ceil(2);
    let mut a = perm[..n_a].to_vec();
    let mut b = perm[n_a..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

struct HalfFit {
    alpha: f64,
    upsilon: f64,
    /// Raw outcome residuals y - dα̌ - x'β̌ (before inflation).
    zeta: DVector<f64>,
    v: DVector<f64>,
}

fn fit_half(sub: &Dataset, controls: &[usize], intercept: bool) -> Result<HalfFit> {
    let design = treatment_design(&sub.d, &sub.x, controls, intercept);
    let fit = ols_fit(&design, &sub.y)?;
    if fit.kept.first() != Some(&0) {
        return Err(Error::TreatmentCollinear);
    }
    let v = if design.ncols() > 1 {
        let rest = design.columns(1, design.ncols() - 1).into_owned();
        ols_fit(&rest, &sub.d)?.residuals
    } else {
        sub.d.clone()
    };
    let n_k = sub.n() as f64;
    Ok(HalfFit { alpha: fit.coef[0], upsilon: v.norm_squared() / n_k, zeta: fit.residuals, v })
}

/// Split-sample estimate with a random partition drawn from `seed`.
pub fn split_sample_estimate(
    data: &Dataset,
    config: &SplitConfig,
    seed: u64,
) -> Result<(EstimateReport, SplitFit)> {
    let (a, b) = split_indices(data.n(), seed)?;
    split_with_partition(data, &a, &b, config, None)
}

/// Split-sample estimate on a given partition. When `fixed` is set, those
/// control sets stand in for the selections on A and B respectively.
pub fn split_with_partition(
    data: &Dataset,
    idx_a: &[usize],
    idx_b: &[usize],
    config: &SplitConfig,
    fixed: Option<(&[usize], &[usize])>,
) -> Result<(EstimateReport, SplitFit)> {
    let opts = &config.options;
    check_level(opts.level)?;
    if !(config.trunc_c > 0.0) {
        return Err(Error::InvalidArgument(format!("trunc_c must be positive, got {}", config.trunc_c)));
    }
    check_partition(data.n(), idx_a, idx_b)?;
    let sub_a = data.subset(idx_a);
    let sub_b = data.subset(idx_b);

    let select = |sub: &Dataset| -> Result<(Vec<usize>, Vec<f64>, ReportFlags)> {
        let input = SelectionInput::new(sub, opts.intercept);
        let (sets, trace) = select_sets(&input, &opts.penalty, true, true)?;
        Ok((sets.union, trace.scores().to_vec(), trace.flags))
    };
    let ((sel_a, scores_a, flags_a), (sel_b, scores_b, flags_b)) = match fixed {
        Some((fa, fb)) => {
            let check = |s: &[usize]| -> Result<Vec<usize>> {
                if let Some(&j) = s.iter().find(|&&j| j >= data.p()) {
                    return Err(Error::InvalidArgument(format!("control index {j} out of range")));
                }
                let mut v = s.to_vec();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            };
            let zeros = vec![0.0; data.p()];
            (
                (check(fa)?, zeros.clone(), ReportFlags::default()),
                (check(fb)?, zeros, ReportFlags::default()),
            )
        }
        None => {
            let (ra, rb) = rayon::join(|| select(&sub_a), || select(&sub_b));
            (ra?, rb?)
        }
    };

    // Subsample A is fit with the controls chosen on B and vice versa.
    let (controls_a, trunc_a) = guard_selection(&sel_b, idx_a.len(), opts.intercept, &scores_b)?;
    let (controls_b, trunc_b) = guard_selection(&sel_a, idx_b.len(), opts.intercept, &scores_a)?;
    let half_a = fit_half(&sub_a, &controls_a, opts.intercept)?;
    let half_b = fit_half(&sub_b, &controls_b, opts.intercept)?;

    let (n_a, n_b) = (idx_a.len() as f64, idx_b.len() as f64);
    let wa = n_a * half_a.upsilon;
    let wb = n_b * half_b.upsilon;
    if !(wa + wb > 0.0) {
        return Err(Error::TreatmentCollinear);
    }
    let alpha_ab = (wa * half_a.alpha + wb * half_b.alpha) / (wa + wb);

    let flags = flags_a.merge(flags_b).merge(ReportFlags { truncated: trunc_a || trunc_b, nonconverged: false });
    let mut fit = SplitFit {
        idx_a: idx_a.to_vec(),
        idx_b: idx_b.to_vec(),
        s_hat_a: sel_a.len(),
        s_hat_b: sel_b.len(),
        i_hat_a: sel_a,
        i_hat_b: sel_b,
        controls_a,
        controls_b,
        alpha_a: half_a.alpha,
        alpha_b: half_b.alpha,
        upsilon_a: half_a.upsilon,
        upsilon_b: half_b.upsilon,
        alpha_ab,
        v_hat: DVector::zeros(data.n()),
        zeta_hat: DVector::zeros(data.n()),
        intercept: opts.intercept,
        truncated_count: 0,
        flags,
    };
    let (zeta, v, cut) = residuals_from_halves(&fit, data.n(), &[&half_a, &half_b], config.trunc_c)?;
    fit.zeta_hat = zeta;
    fit.v_hat = v;
    fit.truncated_count = cut;

    let se = sandwich_se(&fit.v_hat, &fit.zeta_hat)?;
    let mut selected: Vec<usize> = fit.i_hat_a.iter().chain(fit.i_hat_b.iter()).copied().collect();
    selected.sort_unstable();
    selected.dedup();
    let report = EstimateReport::new(alpha_ab, se, opts.level, selected, flags)?;
    Ok((report, fit))
}

fn check_partition(n: usize, a: &[usize], b: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in a.iter().chain(b.iter()) {
        if i >= n || seen[i] {
            return Err(Error::InvalidArgument("partition must be disjoint and within 0..n".into()));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("partition must cover every row".into()));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("each subsample needs at least 2 rows".into()));
    }
    Ok(())
}

fn residuals_from_halves(
    fit: &SplitFit,
    n: usize,
    halves: &[&HalfFit; 2],
    trunc_c: f64,
) -> Result<(DVector<f64>, DVector<f64>, usize)> {
    let nf = n as f64;
    let mut zeta = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut cut = 0;
    let extra = usize::from(fit.intercept);
    let parts = [(&fit.idx_a, fit.controls_a.len(), halves[0]), (&fit.idx_b, fit.controls_b.len(), halves[1])];
    for (idx, s_hat, half) in parts {
        let n_k = idx.len();
        if n_k <= s_hat + 1 + extra {
            return Err(Error::DegreesOfFreedom { params: s_hat + 1 + extra, n: n_k });
        }
        let inflate = (n_k as f64 / (n_k - s_hat - 1 - extra) as f64).sqrt();
        let h = trunc_c * (nf / ((s_hat as f64).max(nf.sqrt()) * nf.ln())).sqrt();
        for (k, &i) in idx.iter().enumerate() {
            let z0 = half.zeta[k] * inflate;
            let vi = half.v[k];
            v[i] = vi;
            if z0.abs().max(vi.abs()) <= h {
                zeta[i] = z0;
            } else {
                cut += 1;
            }
        }
    }
    Ok((zeta, v, cut))
}

/// Recomputes the truncated residuals (ζ̂, v̂) of a split fit for a given
/// truncation constant.
pub fn compute_residuals(fit: &SplitFit, data: &Dataset, trunc_c: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(trunc_c > 0.0) {
        return Err(Error::InvalidArgument(format!("trunc_c must be positive, got {trunc_c}")));
    }
    let half_a = fit_half(&data.subset(&fit.idx_a), &fit.controls_a, fit.intercept)?;
    let half_b = fit_half(&data.subset(&fit.idx_b), &fit.controls_b, fit.intercept)?;
    let (zeta, v, _) = residuals_from_halves(fit, data.n(), &[&half_a, &half_b], trunc_c)?;
    Ok((zeta, v))
}

/// √(E_n[v̂²]⁻¹ E_n[v̂²ζ̂²] E_n[v̂²]⁻¹ / n).
pub fn sandwich_se(v: &DVector<f64>, zeta: &DVector<f64>) -> Result<f64> {
    let n = v.len() as f64;
    let vv = v.norm_squared() / n;
    if !(vv > 0.0) {
        return Err(Error::TreatmentCollinear);
    }
    let meat = v.iter().zip(zeta.iter()).map(|(a, b)| (a * b).powi(2)).sum::<f64>() / n;
    Ok((meat / (vv * vv) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn sample(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = DMatrix::from_fn(n, p, |_, _| draw());
        let d = DVector::from_fn(n, |i, _| x[(i, 0)] + draw());
        let y = DVector::from_fn(n, |i, _| 0.5 * d[i] + x[(i, 0)] + draw());
        Dataset::new(y, d, x).unwrap()
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let (a, b) = split_indices(5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (3, 2));
        let (a, b) = split_indices(100, 1).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
        assert_eq!(split_indices(100, 9).unwrap(), split_indices(100, 9).unwrap());
        assert!(split_indices(3, 0).is_err());
    }

    #[test]
    fn empty_selection_gives_bivariate_halves() {
        let data = sample(40, 2, 3);
        let (a, b) = split_indices(40, 4).unwrap();
        let (_, fit) = split_with_partition(&data, &a, &b, &SplitConfig::default(), Some((&[], &[]))).unwrap();
        for (idx, alpha, ups) in [(&a, fit.alpha_a, fit.upsilon_a), (&b, fit.alpha_b, fit.upsilon_b)] {
            let dd: f64 = idx.iter().map(|&i| data.d[i] * data.d[i]).sum();
            let dy: f64 = idx.iter().map(|&i| data.d[i] * data.y[i]).sum();
            assert_abs_diff_eq!(alpha, dy / dd, epsilon = 1e-12);
            assert_abs_diff_eq!(ups, dd / idx.len() as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn combined_estimate_is_convex() {
        let data = sample(60, 10, 5);
        let (r, fit) = split_sample_estimate(&data, &SplitConfig::default(), 11).unwrap();
        let lo = fit.alpha_a.min(fit.alpha_b);
        let hi = fit.alpha_a.max(fit.alpha_b);
        assert!(r.alpha_hat >= lo - 1e-12 && r.alpha_hat <= hi + 1e-12);
        assert!(fit.upsilon_a >= 0.0 && fit.upsilon_b >= 0.0);
    }

    #[test]
    fn label_swap_is_invariant() {
        let data = sample(50, 3, 6);
        let (a, b) = split_indices(50, 2).unwrap();
        let cfg = SplitConfig::default();
        let (r1, _) = split_with_partition(&data, &a, &b, &cfg, Some((&[0], &[0, 1]))).unwrap();
        let (r2, _) = split_with_partition(&data, &b, &a, &cfg, Some((&[0, 1], &[0]))).unwrap();
        assert_abs_diff_eq!(r1.alpha_hat, r2.alpha_hat, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.se, r2.se, epsilon = 1e-12);
    }

    #[test]
    fn zero_selection_inflation_factor() {
        let data = sample(20, 1, 7);
        let (a, b) = split_indices(20, 1).unwrap();
        let cfg = SplitConfig { trunc_c: 1e12, ..Default::default() };
        let (_, fit) = split_with_partition(&data, &a, &b, &cfg, Some((&[], &[]))).unwrap();
        let n_a = a.len() as f64;
        let i = a[0];
        let raw = data.y[i] - data.d[i] * fit.alpha_a;
        assert_abs_diff_eq!(fit.zeta_hat[i], raw * (n_a / (n_a - 1.0)).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn tiny_truncation_zeroes_residuals() {
        let data = sample(30, 1, 8);
        let (a, b) = split_indices(30, 1).unwrap();
        let cfg = SplitConfig { trunc_c: 1e-9, ..Default::default() };
        let (_, fit) = split_with_partition(&data, &a, &b, &cfg, Some((&[0], &[0]))).unwrap();
        assert!(fit.zeta_hat.iter().all(|&z| z == 0.0));
        assert_eq!(fit.truncated_count, 30);
        let (z, v) = compute_residuals(&fit, &data, 1e12).unwrap();
        assert!(z.iter().any(|&x| x != 0.0));
        assert_eq!(v, fit.v_hat);
    }
}
