//! Rank alternative mean structures on one series by information criteria:
//! plain curve, constant baseline, and a Monday/Tuesday reporting effect.

use chrono::{Datelike, NaiveDate, Weekday};
use richfit::data::weekday_design;
use richfit::estimator::{compare_models, fit, FitConfig};
use richfit::likelihood::sample_counts;
use richfit::model::{FamilyKind, ModelSpec};
use richfit::series::CountSeries;

fn main() -> richfit::Result<()> {
    let truth_spec = ModelSpec::new(FamilyKind::NegBin).with_baseline();
    let truth = [60.0, 150_000.0, 0.05, 40.0, 1.0, 25.0];
    let start = NaiveDate::from_ymd_opt(2020, 2, 25).unwrap();
    let raw = sample_counts(&truth_spec, &truth, truth_spec.family_of(&truth)?, start, 140, 2)?;
    let values = (1..=raw.len())
        .map(|t| match raw.date_of(t).weekday() {
            Weekday::Mon | Weekday::Tue => raw.values[t - 1] * 7 / 10,
            _ => raw.values[t - 1],
        })
        .collect();
    let y = CountSeries::new(start, values, "positives")?;

    let x = weekday_design(&y.dates(y.len()), &[Weekday::Mon, Weekday::Tue])?;
    let specs = [
        ("plain", ModelSpec::new(FamilyKind::NegBin)),
        ("baseline", truth_spec.clone()),
        ("baseline + weekday", truth_spec.with_multiplicative(x)),
    ];
    let cfg = FitConfig::default();
    let fits = specs
        .iter()
        .map(|(label, spec)| Ok((*label, fit(&y, spec, &cfg)?)))
        .collect::<richfit::Result<Vec<_>>>()?;
    let refs: Vec<_> = fits.iter().map(|(l, f)| (*l, f)).collect();
    for row in compare_models(&refs)? {
        println!(
            "{:<20} k={} loglik {:>9.2} AIC {:>8.2} BIC {:>8.2} ΔAIC {:>6.2}",
            row.label, row.n_params, row.loglik, row.criteria.aic, row.criteria.bic, row.delta_aic
        );
    }
    Ok(())
}
