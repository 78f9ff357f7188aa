//! Peak day of the epidemic curve with a bootstrap interval, estimated from
//! data that stop two days before the peak.

use chrono::NaiveDate;
use richfit::estimator::{fit, FitConfig};
use richfit::likelihood::sample_counts;
use richfit::model::{FamilyKind, ModelSpec};
use richfit::uncertainty::{draw_ensemble, peak_interval};

fn main() -> richfit::Result<()> {
    let spec = ModelSpec::new(FamilyKind::NegBin);
    // r, h, p, s, nu; the daily mean peaks on day 40
    let truth = [150_000.0, 0.05, 40.0, 1.0, 25.0];
    let start = NaiveDate::from_ymd_opt(2020, 2, 25).unwrap();
    let y = sample_counts(&spec, &truth, spec.family_of(&truth)?, start, 38, 3)?;
    let f = fit(&y, &spec, &FitConfig::default())?;
    let ens = draw_ensemble(&f, y.start_date, 2000, 0, 0)?;
    let pk = peak_interval(&ens, &spec, 0.95)?;
    println!("data end {}, true peak {}", y.date_of(y.len()), y.date_of(40));
    println!(
        "estimated peak {} (95%: {} to {}, {:.1} days wide)",
        pk.point_date,
        pk.lower_date,
        pk.upper_date,
        pk.width_days()
    );
    Ok(())
}
