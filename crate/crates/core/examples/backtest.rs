//! Rolling-origin evaluation: step-ahead RMSPE by fitting-window length, and
//! how early the peak day is anticipated.

use chrono::NaiveDate;
use richfit::estimator::FitConfig;
use richfit::evaluation::{backtest_grid, date_range, peak_backtest, PeakBacktestConfig};
use richfit::likelihood::sample_counts;
use richfit::model::{FamilyKind, ModelSpec};

fn main() -> richfit::Result<()> {
    let spec = ModelSpec::new(FamilyKind::NegBin).with_baseline();
    let truth = [60.0, 150_000.0, 0.05, 40.0, 1.0, 25.0];
    let start = NaiveDate::from_ymd_opt(2020, 2, 25).unwrap();
    let y = sample_counts(&spec, &truth, spec.family_of(&truth)?, start, 120, 11)?;
    let cfg = FitConfig::default();

    let ends: Vec<NaiveDate> = date_range(y.date_of(40), y.date_of(105)).into_iter().step_by(5).collect();
    let grid = backtest_grid(&y, &spec, &cfg, &ends, &[1, 5, 15])?;
    grid.write_csv(std::io::stdout())?;

    let pb = peak_backtest(&y, &spec, &cfg, &PeakBacktestConfig { draws: 500, ..Default::default() })?;
    println!("\nsmoothed peak {} ({})", pb.truth.date, pb.truth.method);
    pb.write_csv(std::io::stdout())?;
    Ok(())
}
