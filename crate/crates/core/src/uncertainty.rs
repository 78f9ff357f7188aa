//! Parametric double bootstrap.
//!
//! Each replicate draws a parameter vector from the asymptotic normal law of
//! the estimate on the optimizer scale, evaluates its mean trajectory over
//! the fit window plus a forecast horizon, and simulates one count path from
//! it. Replicates are seeded independently from `(seed, index)`, so results
//! do not depend on thread scheduling.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::growth::peak_time;
use crate::likelihood::draw_count;
use crate::model::{from_unconstrained, MeanEvaluator, ModelSpec};
use crate::series::{checked_day_date, saturating_day_date};

pub const DEFAULT_DRAWS: usize = 5000;
/// Redraw attempts per replicate before giving up on a valid parameter.
const MAX_REDRAWS: usize = 100;
/// Bands from fewer replicates are flagged unreliable.
const MIN_RELIABLE_DRAWS: usize = 100;

/// Stream seed for replicate `index` (SplitMix64 finalizer).
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(seed ^ mix(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub n_obs: usize,
    /// Days covered by every trajectory and path: `n_obs + horizon`.
    pub len: usize,
    /// Mean trajectory at the estimate.
    pub point: Vec<f64>,
    pub point_theta: Vec<f64>,
    pub theta_draws: Vec<Vec<f64>>,
    pub trajectories: Vec<Vec<f64>>,
    pub paths: Vec<Vec<u64>>,
    /// Draws rejected for leaving the parameter domain and redrawn.
    pub rejected: usize,
}

impl BootstrapEnsemble {
    pub fn draws(&self) -> usize {
        self.theta_draws.len()
    }
}

/// Whether a band summarizes simulated counts or mean trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandSource {
    CountPaths,
    MeanTrajectories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    pub level: f64,
    pub source: BandSource,
    pub cumulative: bool,
    pub dates: Vec<NaiveDate>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Days where Monte Carlo noise crossed the bounds and they were reordered.
    pub repairs: usize,
    pub reliable: bool,
}

impl PredictionBand {
    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["date", "point", "lower", "upper"])?;
        for i in 0..self.len() {
            wr.write_record([
                self.dates[i].to_string(),
                crate::report::real(self.point[i]),
                crate::report::real(self.lower[i]),
                crate::report::real(self.upper[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    /// Day index `p + log10(s)/h` at the estimate.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub point_date: NaiveDate,
    pub lower_date: NaiveDate,
    pub upper_date: NaiveDate,
    pub draws: Vec<f64>,
    /// Share of parameter draws that were rejected and redrawn.
    pub rejected_fraction: f64,
    pub reliable: bool,
}

impl PeakEstimate {
    pub fn width_days(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(data: &[f64], prob: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

fn valid_trajectory(ev: &MeanEvaluator, theta: &[f64], len: usize) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    for t in 1..=len {
        let mu = ev.value(t, theta).ok()?;
        if !(mu.is_finite() && mu >= 0.0) {
            return None;
        }
        out.push(mu);
    }
    Some(out)
}

/// Draw `b` replicates from the fit, with trajectories running `horizon`
/// days past the observed window.
pub fn draw_ensemble(
    fit: &FitResult,
    start_date: NaiveDate,
    b: usize,
    seed: u64,
    horizon: usize,
) -> Result<BootstrapEnsemble> {
    if b == 0 {
        return Err(Error::InvalidParameter("at least one bootstrap draw is required".into()));
    }
    let cov = fit.covariance.as_ref().ok_or_else(|| {
        Error::DegenerateInformation("fit has no covariance; inspect its convergence report".into())
    })?;
    // a log-scale SD above 3 puts the 95% range across five orders of magnitude
    for (i, q) in fit.spec.layout().params().iter().enumerate() {
        let sd = cov[(i, i)].max(0.0).sqrt();
        if q.is_log_scaled() && sd > 3.0 {
            log::warn!(
                "{} is weakly identified (log-scale SD {sd:.1}); its draws and any band built on them are extreme",
                q.name()
            );
        }
    }
    let len = fit.n_obs + horizon;
    let spec: ModelSpec = fit.spec.extended(len)?;
    let ev = MeanEvaluator::new(&spec);
    let n = fit.unconstrained.len();

    // V = Q Λ Qᵀ, negative eigenvalues from rounding are clamped to zero
    let eig = SymmetricEigen::new(cov.clone());
    let root: DMatrix<f64> = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let centre = DVector::from_column_slice(&fit.unconstrained);
    let point = valid_trajectory(&ev, &fit.theta, len)
        .ok_or_else(|| Error::Domain("mean at the estimate is not finite over the horizon".into()))?;

    let reps: Vec<Result<(Vec<f64>, Vec<f64>, Vec<u64>, usize)>> = (0..b as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, i));
            for attempt in 0..MAX_REDRAWS {
                let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
                let v = &centre + &root * z;
                let Ok(theta) = from_unconstrained(v.as_slice(), &spec) else { continue };
                if spec.check_theta(&spec.layout(), &theta).is_err() {
                    continue;
                }
                let Some(traj) = valid_trajectory(&ev, &theta, len) else { continue };
                let Ok(family) = spec.family_of(&theta) else { continue };
                let path = traj.iter().map(|&mu| draw_count(mu, family, &mut rng)).collect();
                return Ok((theta, traj, path, attempt));
            }
            Err(Error::Domain(format!("replicate {i}: no valid parameter draw in {MAX_REDRAWS} attempts")))
        })
        .collect();

    let mut ens = BootstrapEnsemble {
        seed,
        start_date,
        n_obs: fit.n_obs,
        len,
        point,
        point_theta: fit.theta.clone(),
        theta_draws: Vec::with_capacity(b),
        trajectories: Vec::with_capacity(b),
        paths: Vec::with_capacity(b),
        rejected: 0,
    };
    for r in reps {
        let (theta, traj, path, rejected) = r?;
        ens.theta_draws.push(theta);
        ens.trajectories.push(traj);
        ens.paths.push(path);
        ens.rejected += rejected;
    }
    if ens.rejected > 0 {
        log::info!("{} parameter draws left the domain and were redrawn", ens.rejected);
    }
    Ok(ens)
}

fn band_from(
    ens: &BootstrapEnsemble,
    level: f64,
    horizon: usize,
    source: BandSource,
    cumulative: bool,
) -> Result<PredictionBand> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidParameter(format!("level must lie in [0, 1), got {level}")));
    }
    let len = ens.n_obs + horizon;
    if len > ens.len {
        return Err(Error::Dimension(format!(
            "ensemble covers {} days, {} requested",
            ens.len, len
        )));
    }
    let rows: Vec<Vec<f64>> = match source {
        BandSource::CountPaths => ens.paths.iter().map(|p| p[..len].iter().map(|&v| v as f64).collect()).collect(),
        BandSource::MeanTrajectories => ens.trajectories.iter().map(|p| p[..len].to_vec()).collect(),
    };
    let accumulate = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if cumulative { rows.iter().map(|r| accumulate(r)).collect() } else { rows };
    let point = if cumulative { accumulate(&ens.point[..len]) } else { ens.point[..len].to_vec() };
    let (pl, pu) = (0.5 - level / 2.0, 0.5 + level / 2.0);
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut repairs = 0;
    let mut column = vec![0.0; rows.len()];
    for t in 0..len {
        for (c, r) in column.iter_mut().zip(&rows) {
            *c = r[t];
        }
        column.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (quantile_sorted(&column, pl), quantile_sorted(&column, pu));
        if lo > hi {
            let mid = point[t].clamp(hi, lo);
            lo = mid;
            hi = mid;
            repairs += 1;
        }
        lower.push(lo);
        upper.push(hi);
    }
    if repairs > 0 {
        log::info!("{repairs} band crossings repaired");
    }
    let dates = (1..=len)
        .map(|t| ens.start_date + chrono::Duration::days(t as i64 - 1))
        .collect();
    Ok(PredictionBand {
        level,
        source,
        cumulative,
        dates,
        point,
        lower,
        upper,
        repairs,
        reliable: ens.draws() >= MIN_RELIABLE_DRAWS,
    })
}

/// Pointwise quantiles of simulated daily counts over the fit window plus
/// `horizon` days.
pub fn prediction_band(ens: &BootstrapEnsemble, level: f64, horizon: usize) -> Result<PredictionBand> {
    band_from(ens, level, horizon, BandSource::CountPaths, false)
}

/// Pointwise quantiles of the mean trajectories only.
pub fn mean_band(ens: &BootstrapEnsemble, level: f64, horizon: usize) -> Result<PredictionBand> {
    band_from(ens, level, horizon, BandSource::MeanTrajectories, false)
}

/// Pointwise quantiles of running sums of the simulated counts.
pub fn cumulative_band(ens: &BootstrapEnsemble, level: f64, horizon: usize) -> Result<PredictionBand> {
    band_from(ens, level, horizon, BandSource::CountPaths, true)
}

/// Peak day of the daily mean with a bootstrap interval.
pub fn peak_interval(ens: &BootstrapEnsemble, spec: &ModelSpec, level: f64) -> Result<PeakEstimate> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidParameter(format!("level must lie in [0, 1), got {level}")));
    }
    let point = peak_time(&spec.richards_params(&ens.point_theta)?);
    let mut draws = ens
        .theta_draws
        .iter()
        .map(|th| spec.richards_params(th).map(|g| peak_time(&g)))
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let mut lower = quantile_sorted(&sorted, 0.5 - level / 2.0);
    let mut upper = quantile_sorted(&sorted, 0.5 + level / 2.0);
    if point < lower || point > upper {
        log::warn!("peak estimate {point:.2} outside its bootstrap interval; interval widened to include it");
        lower = lower.min(point);
        upper = upper.max(point);
    }
    let total = ens.draws() + ens.rejected;
    let rejected_fraction = ens.rejected as f64 / total as f64;
    let in_calendar = [point, lower, upper]
        .iter()
        .all(|&t| checked_day_date(ens.start_date, t).is_some());
    if !in_calendar {
        log::warn!("peak interval ({lower:.3e}, {upper:.3e}) runs off the calendar; dates saturated");
    }
    let date = |t: f64| saturating_day_date(ens.start_date, t);
    draws.shrink_to_fit();
    Ok(PeakEstimate {
        point,
        lower,
        upper,
        level,
        point_date: date(point),
        lower_date: date(lower),
        upper_date: date(upper),
        draws,
        rejected_fraction,
        reliable: rejected_fraction <= 0.1 && in_calendar,
    })
}
