//! Simulate a negative binomial epidemic with a constant baseline, then recover
//! the parameters and the peak day by maximum likelihood.

use chrono::NaiveDate;
use richfit::estimator::{fit, parameter_intervals, FitConfig, IntervalMethod};
use richfit::growth::peak_time;
use richfit::likelihood::sample_counts;
use richfit::model::{FamilyKind, ModelSpec};

fn main() -> richfit::Result<()> {
    let spec = ModelSpec::new(FamilyKind::NegBin).with_baseline();
    // alpha, r, h, p, s, nu
    let truth = [60.0, 150_000.0, 0.05, 40.0, 1.0, 25.0];
    let start = NaiveDate::from_ymd_opt(2020, 2, 25).unwrap();
    let y = sample_counts(&spec, &truth, spec.family_of(&truth)?, start, 150, 7)?;

    let f = fit(&y, &spec, &FitConfig::default())?;
    println!("log-likelihood {:.2}, AIC {:.2}", f.loglik, f.criteria.aic);
    for (iv, t) in parameter_intervals(&f, 0.95, IntervalMethod::LogScale)?.iter().zip(truth) {
        println!("{:>6} {:>12.4} ({:.4}, {:.4})  true {t}", iv.name, iv.estimate, iv.lower, iv.upper);
    }
    let t = peak_time(&spec.richards_params(&f.theta)?);
    println!("peak of the daily mean: day {t:.2}, {}", y.date_of_real(t));
    Ok(())
}
