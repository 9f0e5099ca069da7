use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pdsinfer::regression::{hc_jackknife_cov, ols_fit, Dataset};
use pdsinfer::selection::{
    double_selection, ds_plus_i3, fixed_set_estimate, p1_ttest_demo, selection_sets, single_selection_post_lasso,
    union_ads, EstimatorOptions,
};

fn sparse_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = DMatrix::from_fn(n, p, |_, _| g());
    let d = DVector::from_fn(n, |i, _| x[(i, 0)] + 0.5 * x[(i, 1)] + g());
    let y = DVector::from_fn(n, |i, _| 0.5 * d[i] + x[(i, 0)] - x[(i, 2)] + g());
    Dataset::new(y, d, x).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn row_permutation_leaves_estimate_unchanged(seed in 0u64..10_000, n in 40usize..90, p in 5usize..60) {
        let data = sparse_data(seed, n, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = data.subset(&perm);
        let opts = EstimatorOptions::default();
        let a = double_selection(&data, &opts).unwrap();
        let b = double_selection(&shuffled, &opts).unwrap();
        prop_assert_eq!(&a.selected, &b.selected);
        prop_assert!((a.alpha_hat - b.alpha_hat).abs() < 1e-6);
        prop_assert!((a.se - b.se).abs() < 1e-6);
    }

    #[test]
    fn outcome_scaling_scales_estimate(seed in 0u64..10_000, scale in 0.1f64..20.0) {
        let data = sparse_data(seed, 80, 30);
        let scaled = Dataset::new(&data.y * scale, data.d.clone(), data.x.clone()).unwrap();
        let opts = EstimatorOptions::default();
        let a = double_selection(&data, &opts).unwrap();
        let b = double_selection(&scaled, &opts).unwrap();
        prop_assert_eq!(&a.selected, &b.selected);
        prop_assert!((b.alpha_hat - scale * a.alpha_hat).abs() < 1e-6 * scale.max(1.0));
        prop_assert!((b.se - scale * a.se).abs() < 1e-6 * scale.max(1.0));
    }

    #[test]
    fn i3_only_adds_controls(seed in 0u64..10_000) {
        let data = sparse_data(seed, 70, 40);
        let opts = EstimatorOptions::default();
        let ds = double_selection(&data, &opts).unwrap();
        let ds3 = ds_plus_i3(&data, &opts).unwrap();
        prop_assert!(ds.s_hat <= ds3.s_hat);
        prop_assert!(ds.selected.iter().all(|j| ds3.selected.contains(j)));
    }

    #[test]
    fn unused_column_does_not_move_fixed_set_estimate(seed in 0u64..10_000) {
        let data = sparse_data(seed, 60, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let extra = DMatrix::from_fn(60, 1, |_, _| rng.random::<f64>());
        let wider = Dataset::new(data.y.clone(), data.d.clone(), DMatrix::from_fn(60, 9, |i, j| {
            if j < 8 { data.x[(i, j)] } else { extra[(i, 0)] }
        })).unwrap();
        let opts = EstimatorOptions::default();
        let a = fixed_set_estimate(&data, &[0, 2, 5], &opts).unwrap();
        let b = fixed_set_estimate(&wider, &[0, 2, 5], &opts).unwrap();
        prop_assert!((a.alpha_hat - b.alpha_hat).abs() < 1e-12);
        prop_assert!((a.se - b.se).abs() < 1e-12);
    }

    #[test]
    fn union_ads_interval_covers_both(seed in 0u64..10_000) {
        let data = sparse_data(seed, 70, 30);
        let opts = EstimatorOptions::default();
        let ds = double_selection(&data, &opts).unwrap();
        let pl = single_selection_post_lasso(&data, &opts).unwrap();
        let u = union_ads(&ds, &pl).unwrap();
        prop_assert!(u.ci_lower <= ds.ci_lower.min(pl.ci_lower) + 1e-12);
        prop_assert!(u.ci_upper >= ds.ci_upper.max(pl.ci_upper) - 1e-12);
    }
}

#[test]
fn zero_penalty_gives_long_regression() {
    let data = sparse_data(3, 80, 10);
    let mut opts = EstimatorOptions::default();
    opts.penalty.lambda_override = Some(0.0);
    let sets = selection_sets(&data, &opts, false).unwrap();
    assert_eq!(sets.union, (0..10).collect::<Vec<_>>());
    let ds = double_selection(&data, &opts).unwrap();
    let long = fixed_set_estimate(&data, &(0..10).collect::<Vec<_>>(), &opts).unwrap();
    assert!((ds.alpha_hat - long.alpha_hat).abs() < 1e-10);
    assert!((ds.se - long.se).abs() < 1e-10);
}

#[test]
fn fixed_set_matches_hand_regression() {
    let data = sparse_data(9, 50, 6);
    let controls = [1usize, 4];
    let z = DMatrix::from_fn(50, 3, |i, j| if j == 0 { data.d[i] } else { data.x[(i, controls[j - 1])] });
    let fit = ols_fit(&z, &data.y).unwrap();
    let cov = hc_jackknife_cov(&fit, &z).unwrap();
    let r = fixed_set_estimate(&data, &controls, &EstimatorOptions::default()).unwrap();
    assert!((r.alpha_hat - fit.coef[0]).abs() < 1e-12);
    assert!((r.se - cov[(0, 0)].sqrt()).abs() < 1e-12);
}

#[test]
fn too_many_controls_is_rejected() {
    let data = sparse_data(1, 10, 12);
    let all: Vec<usize> = (0..12).collect();
    assert!(fixed_set_estimate(&data, &all, &EstimatorOptions::default()).is_err());
}

#[test]
fn t_test_demo_shows_single_selection_failure() {
    let demo = p1_ttest_demo(0.3, 0.8, 100, 600, 5).unwrap();
    assert!(demo.double.coverage_95 > 0.9, "{}", demo.double.coverage_95);
    assert!(demo.single.coverage_95 < demo.double.coverage_95 - 0.1, "{}", demo.single.coverage_95);
    assert!(demo.double_inclusion >= demo.single_inclusion);
}

#[test]
fn t_test_demo_without_confounding_is_fine() {
    let demo = p1_ttest_demo(0.0, 0.0, 100, 600, 6).unwrap();
    assert!(demo.single.coverage_95 > 0.92 && demo.double.coverage_95 > 0.92);
    assert!(demo.single.mean_bias.abs() < 0.02);
}
