use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pdsinfer::regression::Dataset;
use pdsinfer::selection::{fixed_set_estimate, EstimatorOptions};
use pdsinfer::split::{compute_residuals, sandwich_se, split_indices, split_with_partition, SplitConfig};

fn sample(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = DMatrix::from_fn(n, p, |_, _| g());
    let d = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + g());
    let y = DVector::from_fn(n, |i, _| 0.5 * d[i] + x[(i, 0)] + 0.7 * x[(i, 2)] + g());
    Dataset::new(y, d, x).unwrap()
}

/// Least squares through the normal equations.
fn lsq(z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let ztz = z.transpose() * z;
    ztz.lu().solve(&(z.transpose() * y)).unwrap()
}

struct Half {
    alpha: f64,
    zeta: DVector<f64>,
    v: DVector<f64>,
}

fn hand_half(data: &Dataset, rows: &[usize], controls: &[usize]) -> Half {
    let n = rows.len();
    let w = DMatrix::from_fn(n, controls.len(), |i, j| data.x[(rows[i], controls[j])]);
    let d = DVector::from_fn(n, |i, _| data.d[rows[i]]);
    let y = DVector::from_fn(n, |i, _| data.y[rows[i]]);
    let mut z = DMatrix::zeros(n, controls.len() + 1);
    z.set_column(0, &d);
    for j in 0..controls.len() {
        z.set_column(j + 1, &w.column(j));
    }
    let b = lsq(&z, &y);
    let zeta = &y - &z * &b;
    let v = if controls.is_empty() { d.clone() } else { &d - &w * lsq(&w, &d) };
    Half { alpha: b[0], zeta, v }
}

#[test]
fn twenty_observation_hand_oracle() {
    let data = sample(20, 5, 77);
    let a: Vec<usize> = (0..20).filter(|i| i % 2 == 0).collect();
    let b: Vec<usize> = (0..20).filter(|i| i % 2 == 1).collect();
    let sel_a = [0usize, 2];
    let sel_b = [1usize];
    let config = SplitConfig { trunc_c: 1e9, ..Default::default() };
    let (report, fit) = split_with_partition(&data, &a, &b, &config, Some((&sel_a, &sel_b))).unwrap();

    // A is fit with B's controls and B with A's.
    let ha = hand_half(&data, &a, &sel_b);
    let hb = hand_half(&data, &b, &sel_a);
    let ua = ha.v.norm_squared();
    let ub = hb.v.norm_squared();
    let alpha = (ua * ha.alpha + ub * hb.alpha) / (ua + ub);
    assert!((fit.alpha_a - ha.alpha).abs() < 1e-10);
    assert!((fit.alpha_b - hb.alpha).abs() < 1e-10);
    assert!((report.alpha_hat - alpha).abs() < 1e-10);

    let infl_a = (10.0 / (10.0 - 1.0 - 1.0_f64)).sqrt();
    let infl_b = (10.0 / (10.0 - 2.0 - 1.0_f64)).sqrt();
    let mut num = 0.0;
    let mut vv = 0.0;
    for k in 0..10 {
        num += (ha.v[k] * ha.zeta[k] * infl_a).powi(2) + (hb.v[k] * hb.zeta[k] * infl_b).powi(2);
        vv += ha.v[k].powi(2) + hb.v[k].powi(2);
    }
    let (n, vv) = (20.0, vv / 20.0);
    let se = (num / n / (vv * vv) / n).sqrt();
    assert!((report.se - se).abs() < 1e-10, "{} vs {se}", report.se);
}

#[test]
fn empty_selection_is_bivariate_regression() {
    let data = sample(30, 4, 3);
    let (a, b) = split_indices(30, 1).unwrap();
    let (_, fit) = split_with_partition(&data, &a, &b, &SplitConfig::default(), Some((&[], &[]))).unwrap();
    let slope = |rows: &[usize]| {
        let sdy: f64 = rows.iter().map(|&i| data.d[i] * data.y[i]).sum();
        let sdd: f64 = rows.iter().map(|&i| data.d[i] * data.d[i]).sum();
        sdy / sdd
    };
    assert!((fit.alpha_a - slope(&a)).abs() < 1e-12);
    assert!((fit.alpha_b - slope(&b)).abs() < 1e-12);
}

#[test]
fn fixed_sets_agree_with_full_sample_regression() {
    let data = sample(200, 10, 12);
    let controls = [0usize, 1, 2];
    let (a, b) = split_indices(200, 4).unwrap();
    let (split, _) =
        split_with_partition(&data, &a, &b, &SplitConfig::default(), Some((&controls, &controls))).unwrap();
    let full = fixed_set_estimate(&data, &controls, &EstimatorOptions::default()).unwrap();
    assert!((split.alpha_hat - full.alpha_hat).abs() < 5.0 / 200.0, "{} {}", split.alpha_hat, full.alpha_hat);
}

#[test]
fn huge_truncation_constant_keeps_every_residual() {
    let data = sample(60, 8, 5);
    let (a, b) = split_indices(60, 2).unwrap();
    let (_, fit) = split_with_partition(&data, &a, &b, &SplitConfig { trunc_c: 1e12, ..Default::default() }, None)
        .unwrap();
    assert_eq!(fit.truncated_count, 0);
    let (zeta, v) = compute_residuals(&fit, &data, 1e12).unwrap();
    assert_eq!(zeta, fit.zeta_hat);
    assert!(zeta.iter().all(|z| *z != 0.0));
    let se = sandwich_se(&v, &zeta).unwrap();
    assert!(se.is_finite() && se > 0.0);

    let (tight, _) = compute_residuals(&fit, &data, 1e-3).unwrap();
    assert!(tight.iter().all(|z| *z == 0.0));
}

#[test]
fn partition_must_cover_rows() {
    let data = sample(10, 3, 1);
    let a = [0usize, 1, 2, 3];
    let b = [4usize, 5, 6, 7, 8];
    assert!(split_with_partition(&data, &a, &b, &SplitConfig::default(), None).is_err());
}
