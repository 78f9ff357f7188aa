//! Command-line front end. Every subcommand writes JSON reports and plot-ready
//! CSV files into `--out`; errors go to stderr as one JSON object.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 non-convergence.
//!
//! A `--config FILE` holds `key = value` lines (TOML) whose keys are long flag
//! names, e.g. `family = "negbin"`, `baseline = true`, `seed = 7`. Flags given
//! on the command line win over the file.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{
    extract_series, merge_autonomous_provinces, parse_dpc, parse_weekdays, reconcile, region_names, weekday_design,
    DpcRecord, Indicator, Scope,
};
use crate::diagnostics::diagnose;
use crate::error::Error;
use crate::estimator::{fit, parameter_intervals, FitConfig, FitResult, IntervalMethod};
use crate::evaluation::{backtest_grid, date_range, peak_backtest, PeakBacktestConfig};
use crate::growth::peak_time;
use crate::likelihood::{pearson_residuals, sample_counts};
use crate::model::{mean_trajectory, FamilyKind, ModelSpec};
use crate::report::{real, Provenance};
use crate::series::CountSeries;
use crate::uncertainty::{cumulative_band, draw_ensemble, peak_interval, prediction_band};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, Parser, Serialize)]
#[command(name = "richfit", version, about = "Richards-curve count models for daily epidemic series")]
pub struct Cli {
    /// TOML file of `flag = value` defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Extract a daily series from a civil-protection CSV.
    Ingest(IngestArgs),
    /// Maximum-likelihood fit with Wald intervals.
    Fit(FitArgs),
    /// Bootstrap prediction bands, daily and cumulative.
    Forecast(ForecastArgs),
    /// Peak day with a bootstrap interval.
    Peak(PeakArgs),
    /// Residuals, pseudo-R², coverage, autocorrelation and normality.
    Diagnose(DiagnoseArgs),
    /// Rolling-origin RMSPE grid and peak-anticipation backtest.
    Backtest(BacktestArgs),
    /// Synthetic counts from given parameter values.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Poisson,
    Negbin,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateMode {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalArg {
    LogScale,
    Delta,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Civil-protection CSV (national or regional) or a `date,value` series CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "positives")]
    pub indicator: Indicator,
    /// Region name; regional files without it are summed to national totals.
    #[arg(long)]
    pub region: Option<String>,
    /// Keep the two autonomous provinces separate instead of merging them.
    #[arg(long)]
    pub keep_provinces: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "negbin")]
    pub family: FamilyArg,
    /// Constant daily baseline α added to the curve increments.
    #[arg(long)]
    pub baseline: bool,
    /// Weekday dummy covariate, e.g. `mon,tue`.
    #[arg(long)]
    pub weekdays: Option<String>,
    #[arg(long, value_enum, default_value = "additive")]
    pub covariates: CovariateMode,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimationArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled starting points for the global search.
    #[arg(long, default_value_t = 50)]
    pub starts: usize,
    /// Skip the genetic refinement of the sampled starts.
    #[arg(long)]
    pub no_ga: bool,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value = "log-scale")]
    pub interval_method: IntervalArg,
}

#[derive(Debug, Args, Serialize)]
pub struct OutputArgs {
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = crate::uncertainty::DEFAULT_DRAWS)]
    pub draws: usize,
    /// Days forecast past the last observation.
    #[arg(long, default_value_t = 14)]
    pub horizon: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PeakArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = crate::uncertainty::DEFAULT_DRAWS)]
    pub draws: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = crate::uncertainty::DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = 21)]
    pub max_lag: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// First fitting-window end date.
    #[arg(long, default_value = "2020-04-01")]
    pub from: NaiveDate,
    /// Last fitting-window end date; the last observation when absent.
    #[arg(long)]
    pub to: Option<NaiveDate>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15")]
    pub horizons: Vec<usize>,
    /// Days before the smoothed peak at which the peak is forecast.
    #[arg(long, value_delimiter = ',', default_value = "15,10,5,3,2,1")]
    pub peak_offsets: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    pub smoothing_window: usize,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    /// Keep the baseline in the pre-peak fits.
    #[arg(long)]
    pub peak_keep_baseline: bool,
    #[arg(long)]
    pub skip_grid: bool,
    #[arg(long)]
    pub skip_peak: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parameter values by name, e.g. `r=2e5,h=0.03,p=40,s=1,alpha=150,nu=20`.
    #[arg(long)]
    pub theta: String,
    /// Date of the first simulated day.
    #[arg(long, default_value = "2020-02-25")]
    pub start_date: NaiveDate,
    #[arg(long, default_value_t = 146)]
    pub days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Json(e))
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Domain(_) | Error::Comparison(_) => EXIT_USAGE,
        Error::NonConvergence { .. } | Error::DegenerateInformation(_) => EXIT_NONCONVERGENCE,
        _ => EXIT_DATA,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter(_) => "invalid-parameter",
        Error::Domain(_) => "domain",
        Error::Dimension(_) => "dimension",
        Error::InvalidData(_) => "invalid-data",
        Error::InsufficientData { .. } => "insufficient-data",
        Error::NonConvergence { .. } => "non-convergence",
        Error::DegenerateInformation(_) => "degenerate-information",
        Error::MissingColumn(_) => "missing-column",
        Error::Schema(_) => "schema",
        Error::Row { .. } => "row",
        Error::Comparison(_) => "comparison",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

fn report_failure(f: &Failure) -> i32 {
    let (code, body) = match f {
        Failure::Usage(msg) => (EXIT_USAGE, json!({"kind": "usage", "message": msg})),
        Failure::Lib(e) => {
            let mut body = json!({"kind": error_kind(e), "message": e.to_string()});
            if let Error::NonConvergence { best_effort, .. } = e {
                body["best_effort"] = json!(best_effort);
            }
            (exit_code(e), body)
        }
    };
    let mut body = body;
    body["exit_code"] = json!(code);
    eprintln!("{}", json!({ "error": body }));
    code
}

/// Append config-file entries as flags unless the flag is already present.
fn merge_config(args: Vec<OsString>) -> Outcome<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    let mut out = args.clone();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        });
        if given {
            continue;
        }
        let rendered = match value {
            toml::Value::Boolean(true) => {
                out.push(flag.into());
                continue;
            }
            toml::Value::Boolean(false) => continue,
            toml::Value::String(s) => s,
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        out.push(flag.into());
        out.push(rendered.into());
    }
    Ok(out)
}

/// Parse `argv` (program name first), run the subcommand, return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(f) => return report_failure(&f),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            return report_failure(&Failure::Usage(e.to_string()));
        }
    };
    let threads = match std::env::var("RICHFIT_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return report_failure(&Failure::Usage(format!("RICHFIT_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => None,
    };
    let outcome = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Failure::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => report_failure(&f),
    }
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    let config = serde_json::to_value(&cli.command)?;
    match &cli.command {
        Command::Ingest(a) => ingest(a, config),
        Command::Fit(a) => run_fit(a, config),
        Command::Forecast(a) => forecast(a, config),
        Command::Peak(a) => peak(a, config),
        Command::Diagnose(a) => run_diagnose(a, config),
        Command::Backtest(a) => backtest(a, config),
        Command::Simulate(a) => simulate(a, config),
    }
}

enum InputKind {
    Dpc(Scope),
    Series,
}

fn sniff(path: &Path) -> Outcome<InputKind> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("").trim_start_matches('\u{feff}');
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.contains(&"nuovi_positivi") || cols.contains(&"deceduti") {
        Ok(InputKind::Dpc(if cols.contains(&"codice_regione") {
            Scope::Regional
        } else {
            Scope::National
        }))
    } else if cols.first() == Some(&"date") && cols.contains(&"value") {
        Ok(InputKind::Series)
    } else {
        Err(Error::Schema(format!("unrecognised header in {}: {header}", path.display())).into())
    }
}

fn load(input: &InputArgs) -> Outcome<(CountSeries, Option<Vec<DpcRecord>>)> {
    match sniff(&input.input)? {
        InputKind::Series => {
            if input.region.is_some() {
                return Err(Failure::Usage("--region applies to civil-protection input only".into()));
            }
            let file = fs::File::open(&input.input)?;
            let y = CountSeries::read_csv(file, input.indicator.label())?;
            Ok((y, None))
        }
        InputKind::Dpc(scope) => {
            let mut records = parse_dpc(&input.input, scope)?;
            if scope == Scope::Regional && !input.keep_provinces {
                records = merge_autonomous_provinces(&records)?;
            }
            if let Some(name) = &input.region {
                if scope == Scope::National {
                    return Err(Failure::Usage("--region needs a regional file".into()));
                }
                if !region_names(&records).iter().any(|r| r == name) {
                    return Err(Failure::Usage(format!(
                        "unknown region {name:?}; known: {}",
                        region_names(&records).join(", ")
                    )));
                }
            }
            let y = extract_series(&records, input.indicator, input.region.as_deref())?;
            Ok((y, Some(records)))
        }
    }
}

fn build_spec(m: &ModelArgs, dates: &[NaiveDate]) -> Outcome<ModelSpec> {
    let family = match m.family {
        FamilyArg::Poisson => FamilyKind::Poisson,
        FamilyArg::Negbin => FamilyKind::NegBin,
    };
    let mut spec = ModelSpec::new(family);
    if m.baseline {
        spec = spec.with_baseline();
    }
    if let Some(days) = &m.weekdays {
        if m.baseline && matches!(m.covariates, CovariateMode::Additive) {
            return Err(Failure::Usage(
                "--baseline and additive --weekdays both model the baseline; pick one or use --covariates multiplicative".into(),
            ));
        }
        let flagged = parse_weekdays(days).map_err(|e| Failure::Usage(e.to_string()))?;
        let design = weekday_design(dates, &flagged)?;
        spec = match m.covariates {
            CovariateMode::Additive => spec.with_additive(design),
            CovariateMode::Multiplicative => spec.with_multiplicative(design),
        };
    }
    Ok(spec)
}

fn fit_config(e: &EstimationArgs) -> Outcome<FitConfig> {
    if e.starts == 0 {
        return Err(Failure::Usage("--starts must be at least 1".into()));
    }
    if !(e.level > 0.0 && e.level < 1.0) {
        return Err(Failure::Usage(format!("--level must lie in (0, 1), got {}", e.level)));
    }
    let mut cfg = FitConfig::default().with_seed(e.seed);
    cfg.n_starts = e.starts;
    if e.no_ga {
        cfg.ga = None;
    }
    Ok(cfg)
}

fn provenance(input: Option<&Path>, seed: u64, config: Value) -> Outcome<Value> {
    Ok(serde_json::to_value(Provenance::new(input, seed, config)?)?)
}

fn create_out(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: PathBuf, value: &Value) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_file(path: PathBuf) -> Outcome<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn series_json(y: &CountSeries) -> Value {
    json!({
        "indicator": y.indicator,
        "region": y.region,
        "start_date": y.start_date,
        "end_date": y.date_of(y.len()),
        "n_obs": y.len(),
        "clamped_days": y.clamp_log.len(),
        "clamped_mass": y.clamped_mass,
    })
}

fn ingest(a: &IngestArgs, config: Value) -> Outcome<()> {
    let (y, records) = load(&a.input)?;
    let recon = match &records {
        Some(r) => Some(reconcile(r, &y, a.input.indicator)?),
        None => None,
    };
    create_out(&a.output.out)?;
    y.write_csv(csv_file(a.output.out.join("series.csv"))?)?;
    let report = json!({
        "provenance": provenance(Some(&a.input.input), 0, config)?,
        "series": series_json(&y),
        "clamp_log": y.clamp_log.iter().map(|&t| y.date_of(t)).collect::<Vec<_>>(),
        "reconciliation": recon,
        "regions": records.as_deref().map(region_names).unwrap_or_default(),
    });
    write_json(a.output.out.join("ingest.json"), &report)
}

struct Fitted {
    y: CountSeries,
    spec: ModelSpec,
    fit: FitResult,
}

fn load_and_fit(a: &FitArgs) -> Outcome<Fitted> {
    let (y, _) = load(&a.input)?;
    let spec = build_spec(&a.model, &y.dates(y.len()))?;
    let cfg = fit_config(&a.estimation)?;
    let fit = fit(&y, &spec, &cfg)?;
    Ok(Fitted { y, spec, fit })
}

fn interval_method(a: IntervalArg) -> IntervalMethod {
    match a {
        IntervalArg::LogScale => IntervalMethod::LogScale,
        IntervalArg::Delta => IntervalMethod::Delta,
    }
}

fn fit_report(f: &Fitted, e: &EstimationArgs, prov: Value) -> Outcome<Value> {
    let intervals = parameter_intervals(&f.fit, e.level, interval_method(e.interval_method))?;
    let t_peak = peak_time(&f.spec.richards_params(&f.fit.theta)?);
    Ok(json!({
        "provenance": prov,
        "series": series_json(&f.y),
        "model": {
            "family": f.spec.family,
            "baseline": f.spec.baseline,
            "covariates": f.spec.design().map(|d| d.labels().to_vec()),
            "parameters": f.fit.names,
        },
        "estimates": intervals,
        "level": e.level,
        "interval_method": e.interval_method,
        "loglik": f.fit.loglik,
        "criteria": f.fit.criteria,
        "n_params": f.fit.n_params,
        "n_obs": f.fit.n_obs,
        "convergence": f.fit.convergence,
        "peak": {"t": t_peak, "date": f.y.date_of_real(t_peak)},
    }))
}

fn write_fitted_csv(f: &Fitted, path: PathBuf) -> Outcome<()> {
    let traj = mean_trajectory(&f.spec, &f.fit.theta, f.y.len(), 0.0)?;
    let mut w = csv::Writer::from_writer(csv_file(path)?);
    w.write_record(["date", "observed", "fitted", "observed_cumulative", "fitted_cumulative"])
        .map_err(Error::from)?;
    let mut cum = 0u64;
    for (i, &v) in f.y.values.iter().enumerate() {
        cum += v;
        w.write_record([
            f.y.date_of(i + 1).to_string(),
            v.to_string(),
            real(traj.values[i]),
            cum.to_string(),
            real(traj.cumulative[i]),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn run_fit(a: &FitArgs, config: Value) -> Outcome<()> {
    let f = load_and_fit(a)?;
    let report = fit_report(&f, &a.estimation, provenance(Some(&a.input.input), a.estimation.seed, config)?)?;
    create_out(&a.output.out)?;
    write_json(a.output.out.join("fit-report.json"), &report)?;
    write_fitted_csv(&f, a.output.out.join("fitted.csv"))
}

fn forecast(a: &ForecastArgs, config: Value) -> Outcome<()> {
    let f = load_and_fit(&a.fit)?;
    let level = a.fit.estimation.level;
    let ens = draw_ensemble(&f.fit, f.y.start_date, a.draws, a.fit.estimation.seed, a.horizon)?;
    let daily = prediction_band(&ens, level, a.horizon)?;
    let cumulative = cumulative_band(&ens, level, a.horizon)?;
    let out = &a.fit.output.out;
    create_out(out)?;
    daily.write_csv(csv_file(out.join("band-daily.csv"))?)?;
    cumulative.write_csv(csv_file(out.join("band-cumulative.csv"))?)?;
    let report = json!({
        "provenance": provenance(Some(&a.fit.input.input), a.fit.estimation.seed, config)?,
        "series": series_json(&f.y),
        "draws": ens.draws(),
        "rejected": ens.rejected,
        "horizon": a.horizon,
        "level": level,
        "last_observed": f.y.date_of(f.y.len()),
        "daily": {"repairs": daily.repairs, "reliable": daily.reliable},
        "cumulative": {"repairs": cumulative.repairs, "reliable": cumulative.reliable},
    });
    write_json(out.join("forecast.json"), &report)
}

fn peak(a: &PeakArgs, config: Value) -> Outcome<()> {
    let f = load_and_fit(&a.fit)?;
    let ens = draw_ensemble(&f.fit, f.y.start_date, a.draws, a.fit.estimation.seed, 0)?;
    let pk = peak_interval(&ens, &f.spec, a.fit.estimation.level)?;
    create_out(&a.fit.output.out)?;
    let report = json!({
        "provenance": provenance(Some(&a.fit.input.input), a.fit.estimation.seed, config)?,
        "series": series_json(&f.y),
        "point": pk.point,
        "lower": pk.lower,
        "upper": pk.upper,
        "point_date": pk.point_date,
        "lower_date": pk.lower_date,
        "upper_date": pk.upper_date,
        "width_days": pk.width_days(),
        "level": pk.level,
        "draws": pk.draws.len(),
        "rejected_fraction": pk.rejected_fraction,
        "reliable": pk.reliable,
    });
    write_json(a.fit.output.out.join("peak.json"), &report)
}

fn run_diagnose(a: &DiagnoseArgs, config: Value) -> Outcome<()> {
    let f = load_and_fit(&a.fit)?;
    let n = f.y.len();
    let y = f.y.as_f64();
    let traj = mean_trajectory(&f.spec, &f.fit.theta, n, 0.0)?;
    let residuals = pearson_residuals(&y, &traj, f.spec.family_of(&f.fit.theta)?)?;
    let dates = f.y.dates(n);
    let ens = draw_ensemble(&f.fit, f.y.start_date, a.draws, a.fit.estimation.seed, 0)?;
    let band = prediction_band(&ens, a.fit.estimation.level, 0)?;
    let report = diagnose(&y, &traj.values, &residuals, &dates, Some(&band), a.max_lag)?;
    let out = &a.fit.output.out;
    create_out(out)?;
    let mut w = csv::Writer::from_writer(csv_file(out.join("residuals.csv"))?);
    w.write_record(["date", "observed", "fitted", "pearson", "lower", "upper"])
        .map_err(Error::from)?;
    for i in 0..n {
        w.write_record([
            dates[i].to_string(),
            f.y.values[i].to_string(),
            real(traj.values[i]),
            real(residuals[i]),
            real(band.lower[i]),
            real(band.upper[i]),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    let mut body = serde_json::to_value(&report)?;
    body["provenance"] = provenance(Some(&a.fit.input.input), a.fit.estimation.seed, config)?;
    body["series"] = series_json(&f.y);
    body["loglik"] = json!(f.fit.loglik);
    write_json(out.join("diagnostics.json"), &body)
}

fn backtest(a: &BacktestArgs, config: Value) -> Outcome<()> {
    if a.skip_grid && a.skip_peak {
        return Err(Failure::Usage("--skip-grid and --skip-peak leave nothing to do".into()));
    }
    let (y, _) = load(&a.fit.input)?;
    let spec = build_spec(&a.fit.model, &y.dates(y.len()))?;
    let cfg = fit_config(&a.fit.estimation)?;
    let to = a.to.unwrap_or_else(|| y.date_of(y.len()));
    if a.from > to {
        return Err(Failure::Usage(format!("--from {} is after --to {to}", a.from)));
    }
    let grid = if a.skip_grid {
        None
    } else {
        Some(backtest_grid(&y, &spec, &cfg, &date_range(a.from, to), &a.horizons)?)
    };
    let pb = if a.skip_peak {
        None
    } else {
        let pcfg = PeakBacktestConfig {
            offsets: a.peak_offsets.clone(),
            smoothing_window: a.smoothing_window,
            draws: a.draws,
            level: a.fit.estimation.level,
            seed: a.fit.estimation.seed,
            keep_baseline: a.peak_keep_baseline,
        };
        Some(peak_backtest(&y, &spec, &cfg, &pcfg)?)
    };
    let out = &a.fit.output.out;
    create_out(out)?;
    let prov = provenance(Some(&a.fit.input.input), a.fit.estimation.seed, config)?;
    if let Some(g) = &grid {
        g.write_csv(csv_file(out.join("backtest-grid.csv"))?)?;
        let mut body = serde_json::to_value(g)?;
        body["provenance"] = prov.clone();
        write_json(out.join("backtest-grid.json"), &body)?;
    }
    if let Some(p) = &pb {
        p.write_csv(csv_file(out.join("peak-backtest.csv"))?)?;
        let mut body = serde_json::to_value(p)?;
        body["provenance"] = prov;
        write_json(out.join("peak-backtest.json"), &body)?;
    }
    Ok(())
}

/// `name=value` pairs in any order, one per parameter of the layout.
fn parse_theta(raw: &str, spec: &ModelSpec) -> Outcome<Vec<f64>> {
    let mut given = std::collections::BTreeMap::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("expected name=value, got {part:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{k}: not a number: {v:?}")))?;
        given.insert(k.trim().to_string(), v);
    }
    let names = spec.layout().names();
    if let Some(extra) = given.keys().find(|k| !names.contains(k)) {
        return Err(Failure::Usage(format!("unknown parameter {extra:?}; expected {}", names.join(","))));
    }
    names
        .iter()
        .map(|n| {
            given
                .get(n)
                .copied()
                .ok_or_else(|| Failure::Usage(format!("missing parameter {n:?}; expected {}", names.join(","))))
        })
        .collect()
}

fn simulate(a: &SimulateArgs, config: Value) -> Outcome<()> {
    if a.days == 0 {
        return Err(Failure::Usage("--days must be positive".into()));
    }
    let dates: Vec<NaiveDate> = a.start_date.iter_days().take(a.days).collect();
    let spec = build_spec(&a.model, &dates)?;
    let theta = parse_theta(&a.theta, &spec)?;
    let family = spec.family_of(&theta).map_err(|e| Failure::Usage(e.to_string()))?;
    let y = sample_counts(&spec, &theta, family, a.start_date, a.days, a.seed)?;
    create_out(&a.output.out)?;
    y.write_csv(csv_file(a.output.out.join("simulated.csv"))?)?;
    let report = json!({
        "provenance": provenance(None, a.seed, config)?,
        "parameters": spec.layout().names().into_iter().zip(theta).collect::<std::collections::BTreeMap<_, _>>(),
        "series": series_json(&y),
    });
    write_json(a.output.out.join("simulate.json"), &report)
}
