mod common;

use common::{baseline_spec, simulate, REFERENCE_THETA};
use nalgebra::DMatrix;
use proptest::prelude::*;
use richfit::estimator::{
    compare_models, fit, information_criteria, parameter_intervals, FitConfig, IntervalMethod,
};
use richfit::likelihood::{evaluate, loglik, Scale};
use richfit::model::{from_unconstrained, FamilyKind, ModelSpec, Param};
use richfit::series::CountSeries;
use richfit::Error;

/// Peak at day 40 with `s = 1`, away from the ridge along which `p` and `s`
/// trade off, so the asymptotic normal approximation is sharp.
const WELL_POSED: [f64; 6] = [60.0, 150_000.0, 0.05, 40.0, 1.0, 25.0];

#[test]
fn underdetermined_series_rejected() {
    let y = CountSeries::new(common::start(), vec![3, 5, 9, 4], "x").unwrap();
    match fit(&y, &baseline_spec(), &FitConfig::default()) {
        Err(Error::InsufficientData { required, available }) => {
            assert_eq!(available, 4);
            assert!(required > 6);
        }
        other => panic!("expected insufficient data, got {other:?}"),
    }
    let zeros = CountSeries::new(common::start(), vec![0; 40], "x").unwrap();
    assert!(matches!(fit(&zeros, &baseline_spec(), &FitConfig::default()), Err(Error::InvalidData(_))));
}

#[test]
fn optimum_is_stationary_and_best() {
    let spec = baseline_spec();
    let y = simulate(&spec, &REFERENCE_THETA, 146, 11);
    let f = fit(&y, &spec, &FitConfig::default().with_seed(4)).unwrap();
    assert!(f.convergence.converged);
    assert!(f.convergence.gradient_norm < 1e-6 * f.loglik.abs().max(1.0));
    assert!(f.convergence.hessian_negative_definite);
    let best_other = f.polished_logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(f.loglik >= best_other - 1e-9);
    // same maximum whichever scale reports it
    let on_u = evaluate(&y, &spec, &f.theta, Scale::Unconstrained).unwrap().loglik;
    assert_eq!(loglik(&y, &spec, &f.theta).unwrap(), on_u);
    assert_eq!(f.loglik, on_u);
}

#[test]
fn independent_seed_sets_agree() {
    let spec = baseline_spec();
    let y = simulate(&spec, &REFERENCE_THETA, 146, 12);
    let a = fit(&y, &spec, &FitConfig::default().with_seed(1)).unwrap();
    let b = fit(&y, &spec, &FitConfig::default().with_seed(1_000_003)).unwrap();
    assert!((a.loglik - b.loglik).abs() < 1e-4, "{} vs {}", a.loglik, b.loglik);
}

#[test]
fn covariance_inverts_finite_difference_hessian() {
    let spec = baseline_spec();
    let theta = WELL_POSED;
    let y = simulate(&spec, &theta, 120, 3);
    let f = fit(&y, &spec, &FitConfig::default()).unwrap();
    let cov = f.covariance.as_ref().unwrap();
    let grad = |v: &[f64]| {
        let th = from_unconstrained(v, &spec).unwrap();
        evaluate(&y, &spec, &th, Scale::Unconstrained).unwrap().gradient
    };
    let jac = common::fd_jacobian(&grad, &f.unconstrained, 1e-3);
    let k = f.n_params;
    let h = DMatrix::from_fn(k, k, |i, j| 0.5 * (jac[i][j].d + jac[j][i].d));
    let v_fd = (-h).try_inverse().unwrap();
    for i in 0..k {
        for j in 0..k {
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!(
                (cov[(i, j)] - v_fd[(i, j)]).abs() <= 1e-6 * scale,
                "V[{i},{j}] {} vs {}",
                cov[(i, j)],
                v_fd[(i, j)]
            );
        }
    }
}

#[test]
fn simulate_and_recover_within_three_standard_errors() {
    let spec = baseline_spec();
    let theta = WELL_POSED;
    let reps = 200;
    let mut inside = 0;
    for seed in 0..reps {
        let y = simulate(&spec, &theta, 150, 5000 + seed);
        let f = fit(&y, &spec, &FitConfig::default().with_seed(seed)).unwrap();
        let cov = f.covariance.as_ref().unwrap();
        let truth = richfit::model::to_unconstrained(&theta, &spec).unwrap().values;
        if (0..f.n_params).all(|i| (f.unconstrained[i] - truth[i]).abs() <= 3.0 * cov[(i, i)].sqrt()) {
            inside += 1;
        }
    }
    let share = inside as f64 / reps as f64;
    assert!(share >= 0.95, "{share}");
}

#[test]
fn ridge_parameters_strongly_correlated() {
    let spec = baseline_spec();
    let y = simulate(&spec, &REFERENCE_THETA, 146, 21);
    let f = fit(&y, &spec, &FitConfig::default()).unwrap();
    let corr = f.correlation().unwrap();
    let (p, s) = (
        spec.layout().index(Param::P).unwrap(),
        spec.layout().index(Param::S).unwrap(),
    );
    assert!(corr[(p, s)].abs() > 0.9, "{}", corr[(p, s)]);
}

#[test]
fn interval_methods_respect_domain() {
    let spec = baseline_spec();
    let y = simulate(&spec, &WELL_POSED, 146, 22);
    let f = fit(&y, &spec, &FitConfig::default()).unwrap();
    let log = parameter_intervals(&f, 0.95, IntervalMethod::LogScale).unwrap();
    let delta = parameter_intervals(&f, 0.95, IntervalMethod::Delta).unwrap();
    for (a, b) in log.iter().zip(&delta) {
        assert!(a.lower <= a.estimate && a.estimate <= a.upper);
        assert!(b.lower <= b.estimate && b.estimate <= b.upper);
        if a.name != "p" && !a.name.starts_with("beta") {
            assert!(a.lower > 0.0 && b.lower >= 0.0, "{}", a.name);
            assert!(a.reliable && b.reliable);
        }
        assert_eq!(a.std_error, b.std_error);
    }
    // intervals are narrower at a lower level
    let narrow = parameter_intervals(&f, 0.5, IntervalMethod::LogScale).unwrap();
    for (a, b) in narrow.iter().zip(&log) {
        assert!(a.lower >= b.lower && a.upper <= b.upper);
    }
}

#[test]
fn baseline_free_truth_favours_smaller_model() {
    let plain = ModelSpec::new(FamilyKind::NegBin);
    let with = baseline_spec();
    let theta = [150_000.0, 0.05, 40.0, 1.0, 25.0];
    let (mut wins, mut compared) = (0, 0);
    for seed in 0..100u64 {
        let y = simulate(&plain, &theta, 120, 9000 + seed);
        let a = fit(&y, &plain, &FitConfig::default().with_seed(seed));
        let b = fit(&y, &with, &FitConfig::default().with_seed(seed));
        let (Ok(a), Ok(b)) = (a, b) else { continue };
        compared += 1;
        let table = compare_models(&[("plain", &a), ("baseline", &b)]).unwrap();
        if table[0].label == "plain" {
            wins += 1;
        }
    }
    assert!(compared >= 90, "{compared}");
    assert!(wins * 2 > compared, "{wins} of {compared}");
}

#[test]
fn comparison_rules() {
    let spec = baseline_spec();
    let y = simulate(&spec, &REFERENCE_THETA, 146, 23);
    let f = fit(&y, &spec, &FitConfig::default()).unwrap();
    let mut g = f.clone();
    g.n_params -= 1;
    g.criteria = information_criteria(f.loglik, g.n_params, g.n_obs);
    let table = compare_models(&[("big", &f), ("same-but-smaller", &g)]).unwrap();
    assert_eq!(table[0].label, "same-but-smaller");
    assert_eq!(table[0].delta_aic, 0.0);
    let twin = compare_models(&[("a", &f), ("b", &f)]).unwrap();
    assert!(twin.iter().all(|r| r.delta_aic == 0.0));

    let other = simulate(&spec, &REFERENCE_THETA, 140, 24);
    let h = fit(&other, &spec, &FitConfig::default()).unwrap();
    assert!(matches!(compare_models(&[("a", &f), ("b", &h)]), Err(Error::Comparison(_))));
}

proptest! {
    #[test]
    fn criteria_formulas(ll in -1e5f64..0.0, k in 1usize..12, extra in 2usize..500) {
        let n = k + extra;
        let c = information_criteria(ll, k, n);
        prop_assert_eq!(c.aic, 2.0 * k as f64 - 2.0 * ll);
        prop_assert!((c.bic - (k as f64 * (n as f64).ln() - 2.0 * ll)).abs() <= 1e-12 * c.bic.abs().max(1.0));
        prop_assert!(c.aicc.unwrap() > c.aic);
    }
}

#[test]
fn criteria_degenerate_cases() {
    let c = information_criteria(0.0, 0, 10);
    assert_eq!((c.aic, c.bic, c.aicc), (0.0, 0.0, Some(0.0)));
    assert_eq!(information_criteria(-10.0, 5, 6).aicc, None);
}
