//! Dated daily count series and the canonical `date,value,clamped` CSV form.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Date of real day index `t` counted from `start` as day 1; `None` for
/// non-finite `t` or dates the calendar cannot represent.
pub fn checked_day_date(start: NaiveDate, t: f64) -> Option<NaiveDate> {
    if !t.is_finite() || t.abs() > 1e9 {
        return None;
    }
    Duration::try_days(t.round() as i64 - 1).and_then(|d| start.checked_add_signed(d))
}

/// As [`checked_day_date`], clamped to the first or last representable date.
pub fn saturating_day_date(start: NaiveDate, t: f64) -> NaiveDate {
    checked_day_date(start, t).unwrap_or(if t > 0.0 { NaiveDate::MAX } else { NaiveDate::MIN })
}

/// Daily incidence counts `y_1..y_T`.
///
/// `start_date` is the calendar date of `t = 1`; day `t = 0` is the day before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSeries {
    pub start_date: NaiveDate,
    pub values: Vec<u64>,
    pub indicator: String,
    pub region: Option<String>,
    /// Day indices `t` whose raw difference was negative and was set to zero.
    pub clamp_log: Vec<usize>,
    /// Signed sum of the raw negative differences removed by clamping.
    pub clamped_mass: i64,
}

impl CountSeries {
    pub fn new(start_date: NaiveDate, values: Vec<u64>, indicator: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData("a count series needs at least one value".into()));
        }
        Ok(Self {
            start_date,
            values,
            indicator: indicator.into(),
            region: None,
            clamp_log: Vec::new(),
            clamped_mass: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Calendar date of day `t`.
    pub fn date_of(&self, t: usize) -> NaiveDate {
        self.start_date + Duration::days(t as i64 - 1)
    }

    /// Day index of a calendar date (may be outside `1..=T`).
    pub fn day_of(&self, date: NaiveDate) -> i64 {
        (date - self.start_date).num_days() + 1
    }

    /// Dates for `t = 1..=len`, which may run past the observed window.
    pub fn dates(&self, len: usize) -> Vec<NaiveDate> {
        (1..=len).map(|t| self.date_of(t)).collect()
    }

    /// Map a fractional day index to the calendar date of the day containing it,
    /// saturating at the ends of the calendar.
    pub fn date_of_real(&self, t: f64) -> NaiveDate {
        saturating_day_date(self.start_date, t)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// First `len` days.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::Dimension(format!("cannot truncate {} days to {len}", self.len())));
        }
        let mut out = self.clone();
        out.values.truncate(len);
        out.clamp_log.retain(|&t| t <= len);
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["date", "value", "clamped"])?;
        for (i, v) in self.values.iter().enumerate() {
            let t = i + 1;
            let clamped = self.clamp_log.binary_search(&t).is_ok();
            wr.write_record([
                self.date_of(t).to_string(),
                v.to_string(),
                u8::from(clamped).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Read the canonical series CSV. Dates must be consecutive.
    pub fn read_csv<R: Read>(r: R, indicator: impl Into<String>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.into()))
        };
        let (id, iv) = (col("date")?, col("value")?);
        let ic = headers.iter().position(|h| h.trim() == "clamped");
        let mut start = None;
        let mut values = Vec::new();
        let mut clamp_log = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(k as u64 + 2, |p| p.line());
            let date = parse_date(rec.get(id).unwrap_or(""))
                .map_err(|message| Error::Row { line, message })?;
            let value: u64 = rec.get(iv).unwrap_or("").trim().parse().map_err(|_| Error::Row {
                line,
                message: format!("value `{}` is not a non-negative integer", rec.get(iv).unwrap_or("")),
            })?;
            match start {
                None => start = Some(date),
                Some(s) => {
                    let expected = s + Duration::days(values.len() as i64);
                    if date != expected {
                        return Err(Error::Row {
                            line,
                            message: format!("expected date {expected}, found {date}"),
                        });
                    }
                }
            }
            values.push(value);
            if let Some(ic) = ic {
                if matches!(rec.get(ic).map(str::trim), Some("1" | "true")) {
                    clamp_log.push(values.len());
                }
            }
        }
        let start = start.ok_or_else(|| Error::Schema("series file has no rows".into()))?;
        let mut s = CountSeries::new(start, values, indicator)?;
        s.clamp_log = clamp_log;
        Ok(s)
    }
}

/// ISO date, tolerating a `T…` or ` …` time suffix.
pub(crate) fn parse_date(raw: &str) -> std::result::Result<NaiveDate, String> {
    let raw = raw.trim();
    let head = raw.get(..10).unwrap_or(raw);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|e| format!("bad date `{raw}`: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let mut s = CountSeries::new(d("2020-02-25"), vec![3, 0, 9], "positives").unwrap();
        s.clamp_log = vec![2];
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "date,value,clamped\n2020-02-25,3,0\n2020-02-26,0,1\n2020-02-27,9,0\n");
        let back = CountSeries::read_csv(&buf[..], "positives").unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.clamp_log, s.clamp_log);
        assert_eq!(back.start_date, s.start_date);
    }

    #[test]
    fn gaps_are_rejected_with_line_number() {
        let text = "date,value\n2020-03-01,1\n2020-03-03,2\n";
        match CountSeries::read_csv(text.as_bytes(), "x") {
            Err(Error::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timestamp_suffix_is_tolerated() {
        assert_eq!(parse_date("2020-02-24T18:00:00").unwrap(), d("2020-02-24"));
        assert_eq!(parse_date("2020-02-24 18:00:00").unwrap(), d("2020-02-24"));
        assert!(parse_date("24/02/2020").is_err());
    }

    #[test]
    fn date_mapping() {
        let s = CountSeries::new(d("2020-02-25"), vec![1; 10], "x").unwrap();
        assert_eq!(s.date_of(1), d("2020-02-25"));
        assert_eq!(s.day_of(d("2020-02-24")), 0);
        assert_eq!(s.date_of_real(32.9), d("2020-03-28"));
        assert_eq!(s.date_of_real(1e300), NaiveDate::MAX);
        assert_eq!(s.date_of_real(-1e12), NaiveDate::MIN);
        assert_eq!(checked_day_date(s.start_date, f64::NAN), None);
    }
}
