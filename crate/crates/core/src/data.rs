//! Civil-protection (DPC) CSV ingestion and covariate design matrices.
//!
//! Mandatory columns, in any order:
//!
//! | column | meaning |
//! |---|---|
//! | `data` | ISO date, optional time suffix |
//! | `nuovi_positivi` | new positives on the day |
//! | `deceduti` | cumulative deceased |
//! | `dimessi_guariti` | cumulative recovered / discharged |
//! | `terapia_intensiva` | ICU occupancy (parsed, not modeled) |
//! | `totale_positivi` | current positives (parsed, not modeled) |
//!
//! Regional files additionally need `codice_regione` and
//! `denominazione_regione`. `tamponi` is read when present. Any other column
//! is ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{parse_date, CountSeries};

pub const BOLZANO: &str = "P.A. Bolzano";
pub const TRENTO: &str = "P.A. Trento";
pub const TRENTINO: &str = "Trentino-Alto Adige";
/// Region code used for the merged Trentino-Alto Adige record.
pub const TRENTINO_CODE: u32 = 4;

const NATIONAL_COLUMNS: [&str; 6] = [
    "data",
    "nuovi_positivi",
    "deceduti",
    "dimessi_guariti",
    "terapia_intensiva",
    "totale_positivi",
];
const REGIONAL_COLUMNS: [&str; 2] = ["codice_regione", "denominazione_regione"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    National,
    Regional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub code: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpcRecord {
    pub date: NaiveDate,
    pub region: Option<Region>,
    /// Daily field; may be negative on correction days.
    pub nuovi_positivi: i64,
    pub deceduti: u64,
    pub dimessi_guariti: u64,
    pub terapia_intensiva: u64,
    pub totale_positivi: u64,
    pub tamponi: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indicator {
    Positives,
    Deceased,
    Recovered,
}

impl Indicator {
    pub fn label(&self) -> &'static str {
        match self {
            Indicator::Positives => "positives",
            Indicator::Deceased => "deceased",
            Indicator::Recovered => "recovered",
        }
    }
}

impl std::str::FromStr for Indicator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positives" => Ok(Indicator::Positives),
            "deceased" => Ok(Indicator::Deceased),
            "recovered" => Ok(Indicator::Recovered),
            _ => Err(Error::InvalidParameter(format!("unknown indicator `{s}`"))),
        }
    }
}

pub fn parse_dpc(path: impl AsRef<Path>, scope: Scope) -> Result<Vec<DpcRecord>> {
    let file = std::fs::File::open(path)?;
    parse_dpc_reader(file, scope)
}

pub fn parse_dpc_reader<R: std::io::Read>(reader: R, scope: Scope) -> Result<Vec<DpcRecord>> {
    let mut rd = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rd.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Schema("file is empty or has no header row".into()));
    }
    let index: BTreeMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_string(), i))
        .collect();
    let mut required: Vec<&str> = NATIONAL_COLUMNS.to_vec();
    if scope == Scope::Regional {
        required.extend(REGIONAL_COLUMNS);
    }
    for name in &required {
        if !index.contains_key(*name) {
            return Err(Error::MissingColumn((*name).into()));
        }
    }
    let known: BTreeSet<&str> = required.iter().copied().chain(["tamponi"]).collect();
    let ignored: Vec<&String> = index.keys().filter(|k| !known.contains(k.as_str())).collect();
    if !ignored.is_empty() {
        log::info!("ignoring {} unused DPC columns: {:?}", ignored.len(), ignored);
    }

    let col = |name: &str| index[name];
    let mut out = Vec::new();
    let mut last: BTreeMap<Option<u32>, NaiveDate> = BTreeMap::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k as u64 + 2, |p| p.line());
        let row_err = |message: String| Error::Row { line, message };
        let field = |name: &str| rec.get(col(name)).unwrap_or("").trim();
        let count = |name: &str| -> Result<u64> {
            let raw = field(name);
            raw.parse::<u64>()
                .or_else(|_| parse_integral_float(raw).ok_or(()))
                .map_err(|_| row_err(format!("`{name}` = `{raw}` is not a non-negative integer")))
        };
        let date = parse_date(field("data")).map_err(row_err)?;
        let nuovi_raw = field("nuovi_positivi");
        let nuovi_positivi = nuovi_raw
            .parse::<i64>()
            .map_err(|_| row_err(format!("`nuovi_positivi` = `{nuovi_raw}` is not an integer")))?;
        let region = if scope == Scope::Regional {
            let code_raw = field("codice_regione");
            let code = code_raw
                .parse::<u32>()
                .map_err(|_| row_err(format!("`codice_regione` = `{code_raw}` is not a region code")))?;
            Some(Region {
                code,
                name: field("denominazione_regione").to_string(),
            })
        } else {
            None
        };
        let tamponi = match index.get("tamponi") {
            Some(_) if !field("tamponi").is_empty() => Some(count("tamponi")?),
            _ => None,
        };
        let key = region.as_ref().map(|r| r.code * 1000 + name_discriminator(&r.name));
        if let Some(prev) = last.get(&key) {
            if date <= *prev {
                return Err(row_err(format!("date {date} does not follow {prev}")));
            }
        }
        last.insert(key, date);
        out.push(DpcRecord {
            date,
            region,
            nuovi_positivi,
            deceduti: count("deceduti")?,
            dimessi_guariti: count("dimessi_guariti")?,
            terapia_intensiva: count("terapia_intensiva")?,
            totale_positivi: count("totale_positivi")?,
            tamponi,
        });
    }
    Ok(out)
}

// The two autonomous provinces share one region code in some releases.
fn name_discriminator(name: &str) -> u32 {
    match name {
        BOLZANO => 1,
        TRENTO => 2,
        _ => 0,
    }
}

fn parse_integral_float(raw: &str) -> Option<u64> {
    let v: f64 = raw.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v < 9e15).then_some(v as u64)
}

/// Sum the two autonomous provinces into one Trentino-Alto Adige record per
/// date. A province missing on a date counts as zero (logged).
pub fn merge_autonomous_provinces(records: &[DpcRecord]) -> Result<Vec<DpcRecord>> {
    let mut out = Vec::with_capacity(records.len());
    let mut merged: BTreeMap<NaiveDate, (DpcRecord, u8)> = BTreeMap::new();
    for rec in records {
        let region = rec
            .region
            .as_ref()
            .ok_or_else(|| Error::InvalidData("province merge needs regional records".into()))?;
        let bit = match region.name.as_str() {
            BOLZANO => 1,
            TRENTO => 2,
            _ => {
                out.push(rec.clone());
                continue;
            }
        };
        let entry = merged.entry(rec.date).or_insert_with(|| {
            (
                DpcRecord {
                    date: rec.date,
                    region: Some(Region {
                        code: TRENTINO_CODE,
                        name: TRENTINO.into(),
                    }),
                    nuovi_positivi: 0,
                    deceduti: 0,
                    dimessi_guariti: 0,
                    terapia_intensiva: 0,
                    totale_positivi: 0,
                    tamponi: Some(0),
                },
                0,
            )
        });
        let m = &mut entry.0;
        m.nuovi_positivi += rec.nuovi_positivi;
        m.deceduti += rec.deceduti;
        m.dimessi_guariti += rec.dimessi_guariti;
        m.terapia_intensiva += rec.terapia_intensiva;
        m.totale_positivi += rec.totale_positivi;
        m.tamponi = match (m.tamponi, rec.tamponi) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        entry.1 |= bit;
    }
    for (date, (rec, seen)) in merged {
        if seen != 3 {
            let missing = if seen == 1 { TRENTO } else { BOLZANO };
            log::warn!("{missing} missing on {date}; counted as zero in the merge");
        }
        out.push(rec);
    }
    out.sort_by(|a, b| {
        let ka = a.region.as_ref().map(|r| r.code);
        let kb = b.region.as_ref().map(|r| r.code);
        (a.date, ka).cmp(&(b.date, kb))
    });
    Ok(out)
}

/// Distinct region names, sorted.
pub fn region_names(records: &[DpcRecord]) -> Vec<String> {
    let set: BTreeSet<&str> = records
        .iter()
        .filter_map(|r| r.region.as_ref().map(|g| g.name.as_str()))
        .collect();
    set.into_iter().map(String::from).collect()
}

/// One day's indicator inputs after optional regional aggregation.
#[derive(Debug, Clone, Copy, Default)]
struct DayTotals {
    nuovi: i64,
    deceduti: u64,
    dimessi: u64,
}

fn daily_totals(records: &[DpcRecord], region: Option<&str>) -> Result<Vec<(NaiveDate, DayTotals)>> {
    let mut by_date: BTreeMap<NaiveDate, DayTotals> = BTreeMap::new();
    for rec in records {
        let keep = match (region, &rec.region) {
            (None, _) => true,
            (Some(want), Some(r)) => r.name == want,
            (Some(_), None) => {
                return Err(Error::InvalidParameter(
                    "region requested but the records are national".into(),
                ))
            }
        };
        if keep {
            let e = by_date.entry(rec.date).or_default();
            e.nuovi += rec.nuovi_positivi;
            e.deceduti += rec.deceduti;
            e.dimessi += rec.dimessi_guariti;
        }
    }
    if by_date.is_empty() {
        return Err(Error::InvalidData(match region {
            Some(r) => format!("no records for region `{r}`"),
            None => "no records".into(),
        }));
    }
    let days: Vec<_> = by_date.into_iter().collect();
    for w in days.windows(2) {
        if w[1].0 - w[0].0 != Duration::days(1) {
            return Err(Error::InvalidData(format!("dates jump from {} to {}", w[0].0, w[1].0)));
        }
    }
    Ok(days)
}

/// Clamp a signed daily series at zero, logging the day indices (`t ≥ 1`).
fn clamp(raw: &[i64]) -> (Vec<u64>, Vec<usize>, i64) {
    let mut log = Vec::new();
    let mut mass = 0;
    let values = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < 0 {
                log.push(i + 1);
                mass += v;
                0
            } else {
                v as u64
            }
        })
        .collect();
    (values, log, mass)
}

/// First differences of a cumulative series, clamped at zero.
///
/// Returns `(daily, clamp_log, clamped_mass)` with `daily.len() = cum.len() - 1`
/// and `Σ daily + cum[0] + clamped_mass = cum[last]`.
pub fn difference_cumulative(cum: &[u64]) -> (Vec<u64>, Vec<usize>, i64) {
    let raw: Vec<i64> = cum.windows(2).map(|w| w[1] as i64 - w[0] as i64).collect();
    clamp(&raw)
}

/// Daily series of one indicator. The first recorded date is day `t = 0` and
/// is dropped, so the series starts the next day. Regional records without a
/// `region` filter are summed into national totals.
pub fn extract_series(records: &[DpcRecord], indicator: Indicator, region: Option<&str>) -> Result<CountSeries> {
    let days = daily_totals(records, region)?;
    if days.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: days.len(),
        });
    }
    let start = days[1].0;
    let (values, clamp_log, clamped_mass) = match indicator {
        Indicator::Positives => {
            let raw: Vec<i64> = days[1..].iter().map(|(_, d)| d.nuovi).collect();
            clamp(&raw)
        }
        Indicator::Deceased => difference_cumulative(&days.iter().map(|(_, d)| d.deceduti).collect::<Vec<_>>()),
        Indicator::Recovered => difference_cumulative(&days.iter().map(|(_, d)| d.dimessi).collect::<Vec<_>>()),
    };
    if !clamp_log.is_empty() {
        log::warn!(
            "{}: {} negative daily values clamped to zero (mass {clamped_mass})",
            indicator.label(),
            clamp_log.len()
        );
    }
    let mut s = CountSeries::new(start, values, indicator.label())?;
    s.region = region.map(String::from);
    s.clamp_log = clamp_log;
    s.clamped_mass = clamped_mass;
    Ok(s)
}

/// Bookkeeping check between a daily series and its cumulative source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub day0_value: u64,
    pub daily_sum: u64,
    pub clamped_mass: i64,
    pub final_cumulative: u64,
    /// `daily_sum + day0_value + clamped_mass - final_cumulative`; zero for
    /// cumulative indicators, the correction drift for positives.
    pub discrepancy: i64,
}

/// Reconcile an extracted series against the cumulative column it comes from
/// (`totale_positivi + dimessi_guariti + deceduti` for positives).
pub fn reconcile(records: &[DpcRecord], series: &CountSeries, indicator: Indicator) -> Result<Reconciliation> {
    let region = series.region.as_deref();
    let mut cum: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for rec in records {
        let keep = match (region, &rec.region) {
            (None, _) => true,
            (Some(want), Some(r)) => r.name == want,
            (Some(_), None) => false,
        };
        if keep {
            *cum.entry(rec.date).or_default() += match indicator {
                Indicator::Positives => rec.totale_positivi + rec.dimessi_guariti + rec.deceduti,
                Indicator::Deceased => rec.deceduti,
                Indicator::Recovered => rec.dimessi_guariti,
            };
        }
    }
    let day0 = series.start_date - Duration::days(1);
    let last = series.date_of(series.len());
    let day0_value = *cum.get(&day0).ok_or_else(|| Error::InvalidData(format!("no record on {day0}")))?;
    let final_cumulative = *cum.get(&last).ok_or_else(|| Error::InvalidData(format!("no record on {last}")))?;
    let daily_sum: u64 = series.values.iter().sum();
    Ok(Reconciliation {
        day0_value,
        daily_sum,
        clamped_mass: series.clamped_mass,
        final_cumulative,
        discrepancy: daily_sum as i64 + day0_value as i64 + series.clamped_mass - final_cumulative as i64,
    })
}

/// How a design matrix can be regenerated for dates past the fit window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignRule {
    /// Intercept only.
    Intercept,
    /// Intercept plus a dummy for the flagged weekdays, rows from `start`.
    Weekday { start: NaiveDate, flagged: Vec<Weekday> },
    /// Caller-supplied rows; cannot be extended.
    Fixed,
}

/// `T × (k+1)` covariate matrix whose first column is all ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
    labels: Vec<String>,
    rule: DesignRule,
}

impl DesignMatrix {
    /// Build from row-major data; checks the intercept column and full column rank.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        Self::with_rule(rows, labels, DesignRule::Fixed)
    }

    fn with_rule(rows: Vec<Vec<f64>>, labels: Vec<String>, rule: DesignRule) -> Result<Self> {
        let nrows = rows.len();
        let ncols = labels.len();
        if nrows == 0 || ncols == 0 {
            return Err(Error::Dimension("design matrix must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Dimension(format!("row {i} has {} columns, expected {ncols}", row.len())));
            }
            if row[0] != 1.0 {
                return Err(Error::InvalidData("first design column must be the intercept".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("row {i} has a non-finite entry")));
            }
            data.extend_from_slice(row);
        }
        let m = Self {
            data,
            nrows,
            ncols,
            labels,
            rule,
        };
        m.check_rank()?;
        Ok(m)
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept(n: usize) -> Self {
        Self {
            data: vec![1.0; n],
            nrows: n,
            ncols: 1,
            labels: vec!["intercept".into()],
            rule: DesignRule::Intercept,
        }
    }

    fn check_rank(&self) -> Result<()> {
        if self.nrows < self.ncols {
            return Err(Error::InvalidData("design has fewer rows than columns".into()));
        }
        let x = DMatrix::from_row_slice(self.nrows, self.ncols, &self.data);
        let sv = x.singular_values();
        let max = sv.max();
        let tol = max * (self.nrows.max(self.ncols) as f64) * f64::EPSILON;
        if sv.iter().any(|&v| v <= tol) {
            return Err(Error::InvalidData("design matrix is not of full column rank".into()));
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rule(&self) -> &DesignRule {
        &self.rule
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    /// Design covering `len` rows. Shorter lengths truncate; longer ones
    /// regenerate from the rule.
    pub fn extended(&self, len: usize) -> Result<Self> {
        if len <= self.nrows {
            let mut out = self.clone();
            out.data.truncate(len * self.ncols);
            out.nrows = len;
            return Ok(out);
        }
        match &self.rule {
            DesignRule::Intercept => Ok(Self::intercept(len)),
            DesignRule::Weekday { start, flagged } => {
                let dates: Vec<NaiveDate> = (0..len).map(|i| *start + Duration::days(i as i64)).collect();
                let mut out = self.clone();
                out.data = weekday_rows(&dates, flagged);
                out.nrows = len;
                Ok(out)
            }
            DesignRule::Fixed => Err(Error::Dimension(format!(
                "fixed design has {} rows and cannot be extended to {len}",
                self.nrows
            ))),
        }
    }
}

fn weekday_rows(dates: &[NaiveDate], flagged: &[Weekday]) -> Vec<f64> {
    dates
        .iter()
        .flat_map(|d| [1.0, if flagged.contains(&d.weekday()) { 1.0 } else { 0.0 }])
        .collect()
}

/// Intercept plus one dummy that is 1 on the flagged weekdays.
pub fn weekday_design(dates: &[NaiveDate], flagged: &[Weekday]) -> Result<DesignMatrix> {
    if dates.is_empty() {
        return Err(Error::InvalidData("weekday design needs at least one date".into()));
    }
    let set: BTreeSet<u32> = flagged.iter().map(|w| w.num_days_from_monday()).collect();
    if set.is_empty() {
        return Err(Error::InvalidData("no weekday flagged; the dummy would be all zero".into()));
    }
    if set.len() == 7 {
        return Err(Error::InvalidData("every weekday flagged; the dummy equals the intercept".into()));
    }
    for w in dates.windows(2) {
        if w[1] - w[0] != Duration::days(1) {
            return Err(Error::InvalidData("weekday design needs consecutive dates".into()));
        }
    }
    let mut flagged: Vec<Weekday> = set.iter().map(|&d| Weekday::try_from(d as u8).unwrap()).collect();
    flagged.sort_by_key(|w| w.num_days_from_monday());
    let label = flagged.iter().map(|w| format!("{w:?}")).collect::<Vec<_>>().join("+");
    let rows = weekday_rows(dates, &flagged);
    let rows: Vec<Vec<f64>> = rows.chunks(2).map(<[f64]>::to_vec).collect();
    DesignMatrix::with_rule(
        rows,
        vec!["intercept".into(), format!("weekday[{label}]")],
        DesignRule::Weekday {
            start: dates[0],
            flagged,
        },
    )
}

/// Parse weekday names such as `mon,tue` or `Sunday`.
pub fn parse_weekdays(raw: &str) -> Result<Vec<Weekday>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<Weekday>()
                .map_err(|_| Error::InvalidParameter(format!("unknown weekday `{s}`")))
        })
        .collect()
}
