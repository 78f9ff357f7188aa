mod common;

use chrono::Duration;
use common::{simulate, start};
use proptest::prelude::*;
use richfit::estimator::FitConfig;
use richfit::evaluation::{
    backtest_grid, date_range, peak_backtest, rmspe, smoothed_true_peak, PeakBacktestConfig,
};
use richfit::model::{mean_daily, FamilyKind, ModelSpec, Param};
use richfit::series::CountSeries;

fn well_posed(spec: &ModelSpec) -> Vec<f64> {
    spec.layout().assemble(|q| match q {
        Param::Alpha => 60.0,
        Param::R => 150_000.0,
        Param::H => 0.05,
        Param::P => 40.0,
        Param::S => 1.0,
        Param::Nu => 25.0,
        Param::Beta(_) => unreachable!(),
    })
}

fn quick() -> FitConfig {
    FitConfig {
        n_starts: 20,
        ..FitConfig::default()
    }
}

#[test]
fn rmspe_against_direct_formula() {
    let a = [3.0, 10.0, 0.0, 7.5];
    let p = [1.0, 12.0, 1.0, 7.5];
    // (4 + 4 + 1 + 0) / 4 = 2.25
    assert!((rmspe(&a, &p).unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(rmspe(&a, &a).unwrap(), 0.0);
    assert!(rmspe(&a, &p[..3]).is_err());
    assert!(rmspe(&[], &[]).is_err());
}

#[test]
fn noiseless_series_forecasts_itself() {
    let spec = ModelSpec::new(FamilyKind::Poisson);
    let y = noiseless(120);
    let ends = [y.date_of(60), y.date_of(80), y.date_of(100)];
    let grid = backtest_grid(&y, &spec, &quick(), &ends, &[1, 5, 10]).unwrap();
    assert_eq!(grid.cells.len(), 9);
    for c in &grid.cells {
        assert!(c.converged);
        // rounding alone leaves at most half a count per day
        let e = c.rmspe.unwrap();
        assert!(e < 1.0, "{} K={} rmspe {e}", c.window_end, c.horizon);
    }
    assert_eq!(grid.cell(ends[1], 5).unwrap().window_len, 80);
}

#[test]
fn grid_is_deterministic_and_marks_short_horizons() {
    let spec = ModelSpec::new(FamilyKind::NegBin);
    let y = simulate(&spec, &well_posed(&spec), 110, 4);
    let ends = date_range(y.date_of(70), y.date_of(100));
    let horizons = [1, 15];
    let a = backtest_grid(&y, &spec, &quick(), &ends.iter().step_by(10).copied().collect::<Vec<_>>(), &horizons)
        .unwrap();
    let b = backtest_grid(&y, &spec, &quick(), &a.window_ends, &horizons).unwrap();
    assert_eq!(a, b);
    // day 100 + 15 runs past the 110 observed days
    let last = *a.window_ends.last().unwrap();
    assert!(a.cell(last, 15).unwrap().rmspe.is_none());
    assert!(a.cell(last, 1).unwrap().rmspe.is_some());
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("window_end,window_len,horizon,rmspe,converged"));
    assert_eq!(text.lines().count(), 1 + a.cells.len());
    assert!(backtest_grid(&y, &spec, &quick(), &[start()], &[1]).is_err());
    assert!(backtest_grid(&y, &spec, &quick(), &ends, &[0]).is_err());
}

fn noiseless(len: usize) -> CountSeries {
    let spec = ModelSpec::new(FamilyKind::Poisson);
    let theta = well_posed(&spec);
    let values: Vec<u64> = (1..=len)
        .map(|t| mean_daily(t, &spec, &theta).unwrap().round() as u64)
        .collect();
    CountSeries::new(start(), values, "synthetic").unwrap()
}

/// Float moving average over every full centred window, argmax taken first.
fn oracle_peak(y: &[u64], w: usize) -> usize {
    let half = w / 2;
    let mut best = (0usize, f64::NEG_INFINITY);
    for c in half..y.len() - half {
        let m = y[c - half..=c + half].iter().map(|&v| v as f64).sum::<f64>() / w as f64;
        if m > best.1 {
            best = (c, m);
        }
    }
    best.0 + 1
}

#[test]
fn smoothed_peak_matches_brute_force() {
    let spec = common::baseline_spec();
    for seed in 0..20 {
        let y = simulate(&spec, &common::REFERENCE_THETA, 146, 100 + seed);
        for w in [3, 5, 7, 9] {
            let p = smoothed_true_peak(&y, w).unwrap();
            assert_eq!(p.t, oracle_peak(&y.values, w), "seed {seed} window {w}");
            assert_eq!(p.date, start() + Duration::days(p.t as i64 - 1));
        }
    }
    // a smooth unimodal curve peaks at the same day whatever the window
    let y = noiseless(120);
    let p5 = smoothed_true_peak(&y, 5).unwrap();
    let p7 = smoothed_true_peak(&y, 7).unwrap();
    assert!((p5.t as i64 - p7.t as i64).abs() <= 1);
    assert_eq!(p7.method, "centered-moving-average-7");
    assert!(smoothed_true_peak(&y, 4).is_err());
    assert!(smoothed_true_peak(&y.truncated(10).unwrap(), 7).is_err());
}

#[test]
fn noiseless_peak_anticipated() {
    let y = noiseless(120);
    let pb = PeakBacktestConfig {
        offsets: vec![5, 1],
        draws: 200,
        ..PeakBacktestConfig::default()
    };
    let out = peak_backtest(&y, &ModelSpec::new(FamilyKind::Poisson), &quick(), &pb).unwrap();
    for r in &out.rows {
        assert!(r.converged);
        assert!(r.delay_days.unwrap().abs() <= 2, "offset {}: {:?}", r.offset, r.delay_days);
        assert!(r.contains_truth.unwrap());
    }
}

#[test]
fn peak_backtest_rows() {
    let spec = ModelSpec::new(FamilyKind::NegBin);
    let y = simulate(&spec, &well_posed(&spec), 120, 6);
    let pb = PeakBacktestConfig {
        offsets: vec![10, 5, 1],
        draws: 300,
        ..PeakBacktestConfig::default()
    };
    let out = peak_backtest(&y, &spec, &quick(), &pb).unwrap();
    assert_eq!(out.rows.len(), 3);
    assert_eq!(out.draws, 300);
    for r in &out.rows {
        assert_eq!(r.window_end, y.date_of(out.truth.t - r.offset));
        if let (Some(lo), Some(pt), Some(hi)) = (r.lower_date, r.point_date, r.upper_date) {
            assert!(lo <= pt && pt <= hi);
            assert!(r.ci_width_days.unwrap() >= 0.0);
            assert_eq!(r.delay_days.unwrap(), (pt - out.truth.date).num_days());
            assert_eq!(r.contains_truth.unwrap(), lo <= out.truth.date && out.truth.date <= hi);
        } else {
            assert!(r.error.is_some());
        }
    }
    let again = peak_backtest(&y, &spec, &quick(), &pb).unwrap();
    assert_eq!(out, again);
    let too_far = PeakBacktestConfig {
        offsets: vec![out.truth.t],
        ..pb
    };
    assert!(peak_backtest(&y, &spec, &quick(), &too_far).is_err());
}

proptest! {
    #[test]
    fn rmspe_translation_invariant(
        pairs in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..40),
        shift in -1e3f64..1e3,
    ) {
        let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = rmspe(&a, &p).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let sp: Vec<f64> = p.iter().map(|v| v + shift).collect();
        prop_assert!(base >= 0.0);
        prop_assert!((rmspe(&sa, &sp).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        prop_assert_eq!(rmspe(&a, &p).unwrap(), rmspe(&p, &a).unwrap());
    }
}
