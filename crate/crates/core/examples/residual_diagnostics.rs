//! Goodness of fit for a model that ignores a Monday reporting dip: pseudo-R²,
//! band coverage, residual autocorrelation, normality and weekday medians.

use chrono::{Datelike, NaiveDate, Weekday};
use richfit::diagnostics::diagnose;
use richfit::estimator::{fit, FitConfig};
use richfit::likelihood::{pearson_residuals, sample_counts};
use richfit::model::{mean_trajectory, FamilyKind, ModelSpec};
use richfit::uncertainty::{draw_ensemble, prediction_band};
use richfit::series::CountSeries;

fn main() -> richfit::Result<()> {
    let spec = ModelSpec::new(FamilyKind::NegBin).with_baseline();
    let truth = [60.0, 150_000.0, 0.05, 40.0, 1.0, 25.0];
    let start = NaiveDate::from_ymd_opt(2020, 2, 24).unwrap();
    let raw = sample_counts(&spec, &truth, spec.family_of(&truth)?, start, 140, 5)?;
    let values = raw
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| if raw.date_of(i + 1).weekday() == Weekday::Mon { v * 6 / 10 } else { v })
        .collect();
    let y = CountSeries::new(start, values, "positives")?;

    let f = fit(&y, &spec, &FitConfig::default())?;
    let traj = mean_trajectory(&spec, &f.theta, y.len(), 0.0)?;
    let res = pearson_residuals(&y.as_f64(), &traj, spec.family_of(&f.theta)?)?;
    let band = prediction_band(&draw_ensemble(&f, y.start_date, 2000, 0, 0)?, 0.95, 0)?;
    let report = diagnose(&y.as_f64(), &traj.values, &res, &y.dates(y.len()), Some(&band), 14)?;

    println!("pseudo-R² {:.3}, coverage {:.3}", report.r2, report.coverage.unwrap_or(f64::NAN));
    println!("acf(7) {:.3} (band ±{:.3})", report.acf.values[7], report.acf.band);
    println!("normality p-value {:.2e} ({:?})", report.normality.p_value, report.normality.method);
    for g in &report.weekday_residuals {
        println!("{:?} median residual {:+.2}", g.weekday, g.median);
    }
    Ok(())
}
