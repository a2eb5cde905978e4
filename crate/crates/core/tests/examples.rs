//! Worked examples for the estimator and inference routines, checked
//! against the Newton oracle and Monte-Carlo frequencies.

mod common;

use bitmat::connectivity::check_connectivity;
use bitmat::inference::{exact_variance, variance_refined};
use bitmat::model::{sigma_stats, LinearForm, ModelParams, ObservedBinaryMatrix};
use bitmat::{fit, fit_profile, test_difference, FitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diagonal_two_by_two() -> ObservedBinaryMatrix {
    ObservedBinaryMatrix::new(2, 2, vec![(0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)]).unwrap()
}

/// Tolerances tight enough that the fit is limited by rounding only.
fn strict() -> FitConfig {
    FitConfig {
        grad_tol: 1e-10,
        tol: Some(f64::MIN_POSITIVE),
        ..FitConfig::default()
    }
}

fn max_entry_gap(a: &ModelParams, b: &ModelParams) -> f64 {
    let mut gap = 0.0f64;
    for i in 0..a.n_rows() {
        for j in 0..a.n_cols() {
            gap = gap.max((a.m(i, j) - b.m(i, j)).abs());
        }
    }
    gap
}

#[test]
fn two_by_two_fit_matches_newton() {
    let data = diagonal_two_by_two();
    let oracle = common::newton_mle(&data).expect("MLE exists on a cycle");
    assert!(oracle.residual < 1e-10);
    let report = fit(&data, &FitConfig::default()).unwrap();
    assert!(report.converged);
    assert!(max_entry_gap(&report.params, &oracle.params) < 1e-6);
}

#[test]
fn fit_agrees_with_newton_on_random_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 10 {
        let (n, j) = (rng.gen_range(3..12), rng.gen_range(3..8));
        let p = common::random_params(n, j, 1.0, &mut rng);
        let data = common::random_instance(n, j, 0.2, &p, &mut rng);
        if !bitmat::estimate_exists(&data) {
            continue;
        }
        let oracle = common::newton_mle(&data).unwrap();
        let report = fit(&data, &strict()).unwrap();
        assert!(max_entry_gap(&report.params, &oracle.params) < 1e-6);
        checked += 1;
    }
}

#[test]
fn fitted_entries_do_not_depend_on_the_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = common::random_params(40, 20, 1.0, &mut rng);
    let data = common::random_instance(40, 20, 0.3, &p, &mut rng);
    assert!(bitmat::estimate_exists(&data));
    let base = fit(&data, &FitConfig::default()).unwrap();
    for seed in 1..5 {
        let other = fit(
            &data,
            &FitConfig {
                seed,
                ..FitConfig::default()
            },
        )
        .unwrap();
        assert!(max_entry_gap(&base.params, &other.params) < 1e-6);
    }
}

#[test]
fn null_model_estimates_stay_small() {
    // Row effects have standard error about 2 / sqrt(J) = 0.2, so the
    // maximum over 200 rows stays below five standard errors.
    let (n, j) = (200, 100);
    let mut within = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = common::random_instance(n, j, 0.0, &ModelParams::zeros(n, j), &mut rng);
        let report = fit(&data, &FitConfig::default()).unwrap();
        let worst = report.params.theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        within += usize::from(worst <= 1.0);
    }
    assert_eq!(within, 20);
}

#[test]
fn probe_trace_approaches_the_optimum() {
    let data = diagonal_two_by_two();
    let target = common::newton_mle(&data).unwrap().params.theta[0];
    let probe = LinearForm::row_effect(2, 2, 0);
    let (report, traces) = fit_profile(&data, &FitConfig::default(), &[probe]).unwrap();
    let trace = &traces[0];
    assert_eq!(trace.len(), report.sweeps);
    assert!((trace.last().unwrap() - target).abs() < 1e-6);
    let gaps: Vec<f64> = trace.iter().map(|g| (g - target).abs()).collect();
    for w in gaps[2..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{gaps:?}");
    }
}

#[test]
fn identical_rows_have_zero_difference() {
    let mut e = Vec::new();
    let pattern = [1u8, 0, 1, 1, 0, 0, 1, 0];
    for (j, &y) in pattern.iter().enumerate() {
        e.push((0, j, y));
        e.push((1, j, y));
        e.push((2, j, u8::from(j % 3 == 0)));
        e.push((3, j, u8::from(j % 2 == 1)));
    }
    let data = ObservedBinaryMatrix::new(4, 8, e).unwrap();
    let report = fit(&data, &FitConfig::default()).unwrap();
    let r = test_difference(0, 1, &report, &data, 0.95).unwrap();
    assert!(r.estimate.abs() < 1e-8);
    assert!(r.p_value > 1.0 - 1e-6);
}

#[test]
fn null_difference_test_has_nominal_size() {
    let (n, j) = (50, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut truth = common::random_params(n, j, 1.0, &mut rng);
    truth.theta[1] = truth.theta[0];
    let truth = truth.centered();
    let (mut rejected, mut total) = (0, 0);
    for _ in 0..2000 {
        let data = common::random_instance(n, j, 0.0, &truth, &mut rng);
        if !bitmat::estimate_exists(&data) {
            continue;
        }
        let report = fit(&data, &FitConfig::default()).unwrap();
        let r = test_difference(0, 1, &report, &data, 0.95).unwrap();
        rejected += usize::from(r.p_value < 0.05);
        total += 1;
    }
    assert!(total >= 1990);
    let rate = rejected as f64 / total as f64;
    assert!((0.03..=0.07).contains(&rate), "rejection rate {rate}");
}

#[test]
fn refined_variance_tracks_exact_on_small_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (n, j) = (6, 4);
        let p = common::random_params(n, j, 0.5, &mut rng).centered();
        let data = common::random_instance(n, j, 0.0, &p, &mut rng);
        assert!(check_connectivity(&data).connected);
        let s = sigma_stats(&p, &data).unwrap();
        let bound = 5.0 / (n * j) as f64;
        for g in [
            LinearForm::row_effect(n, j, 0),
            LinearForm::col_effect(n, j, 0),
            LinearForm::entry(n, j, 0, 0),
        ] {
            let refined = variance_refined(&g.with_entry_origin(), &s, &data).unwrap().value;
            let exact = exact_variance(&g, &s, &data).unwrap().value;
            assert!((refined - exact).abs() <= bound, "{refined} vs {exact}");
        }
    }
}
