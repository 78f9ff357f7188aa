//! Parametric double bootstrap: prediction bands for daily and cumulative
//! counts two weeks past the end of the data.

use chrono::NaiveDate;
use richfit::estimator::{fit, FitConfig};
use richfit::likelihood::sample_counts;
use richfit::model::{FamilyKind, ModelSpec};
use richfit::uncertainty::{cumulative_band, draw_ensemble, prediction_band};

fn main() -> richfit::Result<()> {
    let spec = ModelSpec::new(FamilyKind::NegBin).with_baseline();
    let truth = [60.0, 150_000.0, 0.05, 40.0, 1.0, 25.0];
    let start = NaiveDate::from_ymd_opt(2020, 2, 25).unwrap();
    let y = sample_counts(&spec, &truth, spec.family_of(&truth)?, start, 100, 1)?;
    let f = fit(&y, &spec, &FitConfig::default())?;

    let horizon = 14;
    let ens = draw_ensemble(&f, y.start_date, 2000, 42, horizon)?;
    let daily = prediction_band(&ens, 0.95, horizon)?;
    let total = cumulative_band(&ens, 0.95, horizon)?;
    println!("{:<12} {:>24} {:>30}", "date", "daily (95%)", "cumulative (95%)");
    for t in y.len() - 3..daily.len() {
        println!(
            "{:<12} {:>7.0} [{:>6.0}, {:>6.0}] {:>9.0} [{:>8.0}, {:>8.0}]",
            daily.dates[t].to_string(),
            daily.point[t],
            daily.lower[t],
            daily.upper[t],
            total.point[t],
            total.lower[t],
            total.upper[t]
        );
    }
    println!("{} parameter draws rejected", ens.rejected);
    Ok(())
}
