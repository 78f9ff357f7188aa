//! Rolling-origin backtests: step-ahead RMSPE grids and peak anticipation.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig, FitResult};
use crate::model::{mean_daily, Baseline, Covariates, ModelSpec};
use crate::report::real;
use crate::series::CountSeries;
use crate::uncertainty::{draw_ensemble, peak_interval, replicate_seed};

pub const DEFAULT_HORIZONS: [usize; 4] = [1, 5, 10, 15];
pub const DEFAULT_PEAK_OFFSETS: [usize; 6] = [15, 10, 5, 3, 2, 1];

/// Root mean squared prediction error.
pub fn rmspe(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::Dimension(format!(
            "{} observations against {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let ss: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub window_end: NaiveDate,
    /// Length of the fitting window in days.
    pub window_len: usize,
    pub horizon: usize,
    /// Absent when the horizon runs past the observed data or the fit failed
    /// without a usable estimate.
    pub rmspe: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestGrid {
    pub window_ends: Vec<NaiveDate>,
    pub horizons: Vec<usize>,
    /// Window-major: all horizons of the first window end, then the next.
    pub cells: Vec<GridCell>,
}

impl BacktestGrid {
    pub fn cell(&self, window_end: NaiveDate, horizon: usize) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.window_end == window_end && c.horizon == horizon)
    }

    /// Mean RMSPE at `horizon` over window ends in `[from, to]`, skipping
    /// empty cells. `None` when no cell qualifies.
    pub fn mean_rmspe(&self, horizon: usize, from: NaiveDate, to: NaiveDate) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.horizon == horizon && c.window_end >= from && c.window_end <= to)
            .filter_map(|c| c.rmspe)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["window_end", "window_len", "horizon", "rmspe", "converged"])?;
        for c in &self.cells {
            out.write_record([
                c.window_end.to_string(),
                c.window_len.to_string(),
                c.horizon.to_string(),
                c.rmspe.map(real).unwrap_or_default(),
                u8::from(c.converged).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Estimate from a fit attempt, with whether it converged. Non-convergence
/// still yields the best-effort point when one exists.
fn fit_or_best_effort(y: &CountSeries, spec: &ModelSpec, cfg: &FitConfig) -> Result<(Option<FitResult>, Option<Vec<f64>>)> {
    match fit(y, spec, cfg) {
        Ok(f) => {
            let theta = f.theta.clone();
            Ok((Some(f), Some(theta)))
        }
        Err(Error::NonConvergence { message, best_effort }) => {
            log::warn!("window ending {}: {message}", y.date_of(y.len()));
            Ok((None, (!best_effort.is_empty()).then_some(best_effort)))
        }
        Err(e) => Err(e),
    }
}

fn spec_covering(spec: &ModelSpec, len: usize) -> Result<ModelSpec> {
    match spec.design_rows() {
        Some(rows) if rows < len => spec.extended(len),
        _ => Ok(spec.clone()),
    }
}

/// Fit on `[1, t̃]` for each window end and score the `K`-step mean forecast
/// against the held-out counts. Each window warm-starts from the previous
/// optimum in addition to fresh multistarts.
pub fn backtest_grid(
    y: &CountSeries,
    spec: &ModelSpec,
    cfg: &FitConfig,
    window_ends: &[NaiveDate],
    horizons: &[usize],
) -> Result<BacktestGrid> {
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::InvalidParameter("horizons must be non-empty and positive".into()));
    }
    let spec = spec_covering(spec, y.len())?;
    let obs = y.as_f64();
    let mut cells = Vec::with_capacity(window_ends.len() * horizons.len());
    let mut previous: Option<Vec<f64>> = None;
    for &end in window_ends {
        let t_end = y.day_of(end);
        if t_end < 1 || t_end as usize > y.len() {
            return Err(Error::InvalidParameter(format!(
                "window end {end} lies outside the series {}..{}",
                y.date_of(1),
                y.date_of(y.len())
            )));
        }
        let t_end = t_end as usize;
        let window = y.truncated(t_end)?;
        let mut wcfg = cfg.clone();
        if let Some(w) = &previous {
            wcfg.warm_starts.push(w.clone());
        }
        let (fitted, theta) = fit_or_best_effort(&window, &spec, &wcfg)?;
        let converged = fitted.is_some();
        if let Some(th) = &theta {
            previous = Some(th.clone());
        }
        for &k in horizons {
            let score = match &theta {
                Some(th) if t_end + k <= y.len() => {
                    let pred = (t_end + 1..=t_end + k)
                        .map(|t| mean_daily(t, &spec, th))
                        .collect::<Result<Vec<f64>>>()?;
                    Some(rmspe(&obs[t_end..t_end + k], &pred)?)
                }
                _ => None,
            };
            cells.push(GridCell {
                window_end: end,
                window_len: t_end,
                horizon: k,
                rmspe: score,
                converged,
            });
        }
    }
    Ok(BacktestGrid {
        window_ends: window_ends.to_vec(),
        horizons: horizons.to_vec(),
        cells,
    })
}

/// Consecutive dates from `from` through `to`.
pub fn date_range(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days().take_while(|d| *d <= to).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPeak {
    pub date: NaiveDate,
    /// Day index of the peak, 1-based like the series.
    pub t: usize,
    pub value: f64,
    pub window: usize,
    pub method: String,
    /// Days sharing the maximal smoothed value.
    pub ties: usize,
}

/// Day of the largest centered moving average of width `window` (odd).
/// Only full windows are considered; ties go to the earliest day.
pub fn smoothed_true_peak(y: &CountSeries, window: usize) -> Result<SmoothedPeak> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!("smoothing window must be odd and ≥ 3, got {window}")));
    }
    let need = window.max(15);
    if y.len() < need {
        return Err(Error::InsufficientData {
            required: need,
            available: y.len(),
        });
    }
    // integer window sums compare exactly
    let sums: Vec<u64> = y.values.windows(window).map(|w| w.iter().sum()).collect();
    let best = *sums.iter().max().expect("non-empty");
    let first = sums.iter().position(|&s| s == best).expect("max present");
    let ties = sums.iter().filter(|&&s| s == best).count();
    if ties > 1 {
        log::warn!("{ties} days share the maximal smoothed value; taking the earliest");
    }
    let t = first + window / 2 + 1;
    Ok(SmoothedPeak {
        date: y.date_of(t),
        t,
        value: best as f64 / window as f64,
        window,
        method: format!("centered-moving-average-{window}"),
        ties,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakBacktestRow {
    /// Days between the end of the fitting window and the true peak.
    pub offset: usize,
    pub window_end: NaiveDate,
    pub converged: bool,
    pub point_date: Option<NaiveDate>,
    pub lower_date: Option<NaiveDate>,
    pub upper_date: Option<NaiveDate>,
    /// Estimated minus true peak date, in days.
    pub delay_days: Option<i64>,
    pub ci_width_days: Option<f64>,
    pub contains_truth: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakBacktest {
    pub truth: SmoothedPeak,
    pub level: f64,
    pub draws: usize,
    pub rows: Vec<PeakBacktestRow>,
}

impl PeakBacktest {
    pub fn row(&self, offset: usize) -> Option<&PeakBacktestRow> {
        self.rows.iter().find(|r| r.offset == offset)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "offset",
            "window_end",
            "converged",
            "point",
            "lower",
            "upper",
            "delay_days",
            "ci_width_days",
            "contains_truth",
        ])?;
        let opt = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.offset.to_string(),
                r.window_end.to_string(),
                u8::from(r.converged).to_string(),
                opt(r.point_date),
                opt(r.lower_date),
                opt(r.upper_date),
                r.delay_days.map(|d| d.to_string()).unwrap_or_default(),
                r.ci_width_days.map(real).unwrap_or_default(),
                r.contains_truth.map(|c| u8::from(c).to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakBacktestConfig {
    pub offsets: Vec<usize>,
    pub smoothing_window: usize,
    pub draws: usize,
    pub level: f64,
    pub seed: u64,
    /// Keep the constant baseline in the pre-peak fits. Off by default: before
    /// the peak the baseline is not identified and its estimate collapses to
    /// zero with an unusable standard error.
    pub keep_baseline: bool,
}

impl Default for PeakBacktestConfig {
    fn default() -> Self {
        Self {
            offsets: DEFAULT_PEAK_OFFSETS.to_vec(),
            smoothing_window: 7,
            draws: 2000,
            level: 0.95,
            seed: 0,
            keep_baseline: false,
        }
    }
}

/// Fit the plain curve of `spec` (same family, no covariates) on data ending
/// `offset` days before the smoothed true peak and score the bootstrap peak
/// interval.
pub fn peak_backtest(
    y: &CountSeries,
    spec: &ModelSpec,
    cfg: &FitConfig,
    pb: &PeakBacktestConfig,
) -> Result<PeakBacktest> {
    let truth = smoothed_true_peak(y, pb.smoothing_window)?;
    let bare = ModelSpec {
        covariates: Covariates::None,
        baseline: if pb.keep_baseline { spec.baseline } else { Baseline::None },
        family: spec.family,
    };
    let mut fcfg = cfg.clone();
    fcfg.warm_starts.clear();
    let mut rows = Vec::with_capacity(pb.offsets.len());
    for &offset in &pb.offsets {
        if offset >= truth.t {
            return Err(Error::InvalidParameter(format!(
                "offset {offset} reaches before the start of the series"
            )));
        }
        let t_end = truth.t - offset;
        let window_end = y.date_of(t_end);
        let mut row = PeakBacktestRow {
            offset,
            window_end,
            converged: false,
            point_date: None,
            lower_date: None,
            upper_date: None,
            delay_days: None,
            ci_width_days: None,
            contains_truth: None,
            error: None,
        };
        let outcome = y
            .truncated(t_end)
            .and_then(|w| fit(&w, &bare, &fcfg))
            .and_then(|f| {
                let ens = draw_ensemble(&f, y.start_date, pb.draws, replicate_seed(pb.seed, offset as u64), 0)?;
                peak_interval(&ens, &bare, pb.level)
            });
        match outcome {
            Ok(peak) => {
                row.converged = true;
                row.point_date = Some(peak.point_date);
                row.lower_date = Some(peak.lower_date);
                row.upper_date = Some(peak.upper_date);
                row.delay_days = Some((peak.point_date - truth.date).num_days());
                row.ci_width_days = Some(peak.width_days());
                row.contains_truth = Some(peak.lower_date <= truth.date && truth.date <= peak.upper_date);
            }
            Err(e) => {
                log::warn!("peak backtest at offset {offset}: {e}");
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    Ok(PeakBacktest {
        truth,
        level: pb.level,
        draws: pb.draws,
        rows,
    })
}
