mod common;

use chrono::NaiveDate;
use proptest::prelude::*;
use richfit::data::{
    difference_cumulative, extract_series, merge_autonomous_provinces, parse_dpc_reader, reconcile, region_names,
    Indicator, Scope, TRENTINO,
};
use richfit::series::CountSeries;

fn national() -> Vec<richfit::data::DpcRecord> {
    parse_dpc_reader(common::dpc_national(90).as_bytes(), Scope::National).unwrap()
}

fn regional() -> Vec<richfit::data::DpcRecord> {
    parse_dpc_reader(common::dpc_regional(60).as_bytes(), Scope::Regional).unwrap()
}

#[test]
fn differencing_examples() {
    assert_eq!(difference_cumulative(&[5, 7, 7, 10]), (vec![2, 0, 3], vec![], 0));
    assert_eq!(difference_cumulative(&[5, 4]), (vec![0], vec![1], -1));
    assert_eq!(difference_cumulative(&[9]), (vec![], vec![], 0));
}

#[test]
fn timestamps_and_extra_columns_parse() {
    let recs = national();
    assert_eq!(recs.len(), 90);
    assert_eq!(recs[0].date, NaiveDate::from_ymd_opt(2020, 2, 24).unwrap());
    assert!(recs.iter().all(|r| r.region.is_none() && r.tamponi.is_some()));
}

#[test]
fn day_zero_dropped_and_bookkeeping_closes() {
    let recs = national();
    for ind in [Indicator::Positives, Indicator::Deceased, Indicator::Recovered] {
        let s = extract_series(&recs, ind, None).unwrap();
        assert_eq!(s.len(), 89);
        assert_eq!(s.start_date, NaiveDate::from_ymd_opt(2020, 2, 25).unwrap());
        assert_eq!(s.indicator, ind.label());
        let rec = reconcile(&recs, &s, ind).unwrap();
        assert_eq!(rec.discrepancy, 0, "{ind:?}: {rec:?}");
    }
}

#[test]
fn provinces_merge_preserving_totals() {
    let recs = regional();
    assert_eq!(region_names(&recs).len(), 21);
    let merged = merge_autonomous_provinces(&recs).unwrap();
    let names = region_names(&merged);
    assert_eq!(names.len(), 20);
    assert!(names.iter().any(|n| n == TRENTINO));
    assert_eq!(merged.len(), 60 * 20);
    for ind in [Indicator::Positives, Indicator::Deceased] {
        let before = extract_series(&recs, ind, None).unwrap();
        let after = extract_series(&merged, ind, None).unwrap();
        assert_eq!(before.values, after.values);
    }
    let t = extract_series(&merged, Indicator::Deceased, Some(TRENTINO)).unwrap();
    let b = extract_series(&recs, Indicator::Deceased, Some("P.A. Bolzano")).unwrap();
    let tr = extract_series(&recs, Indicator::Deceased, Some("P.A. Trento")).unwrap();
    // differencing is linear where nothing is clamped
    if t.clamp_log.is_empty() && b.clamp_log.is_empty() && tr.clamp_log.is_empty() {
        for i in 0..t.len() {
            assert_eq!(t.values[i], b.values[i] + tr.values[i]);
        }
    }
    assert_eq!(t.region.as_deref(), Some(TRENTINO));
    assert!(extract_series(&merged, Indicator::Deceased, Some("Atlantide")).is_err());
}

#[test]
fn malformed_inputs_rejected() {
    let text = common::dpc_national(5);
    let no_deaths = text.replace("deceduti", "morti");
    assert!(matches!(
        parse_dpc_reader(no_deaths.as_bytes(), Scope::National),
        Err(richfit::Error::MissingColumn(_))
    ));
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(2, 3);
    assert!(matches!(
        parse_dpc_reader(lines.join("\n").as_bytes(), Scope::National),
        Err(richfit::Error::Row { .. })
    ));
    assert!(parse_dpc_reader("".as_bytes(), Scope::National).is_err());
    assert!(parse_dpc_reader(text.as_bytes(), Scope::Regional).is_err());
    let gap: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 3).map(|(_, l)| l).collect();
    let recs = parse_dpc_reader(gap.join("\n").as_bytes(), Scope::National).unwrap();
    assert!(extract_series(&recs, Indicator::Positives, None).is_err());
}

#[test]
fn series_csv_round_trip() {
    let recs = national();
    let s = extract_series(&recs, Indicator::Positives, None).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let back = CountSeries::read_csv(buf.as_slice(), "positives").unwrap();
    assert_eq!(back.values, s.values);
    assert_eq!(back.start_date, s.start_date);
    assert_eq!(back.clamp_log, s.clamp_log);
}

proptest! {
    #[test]
    fn differencing_inverts_cumulation(daily in prop::collection::vec(0u64..10_000, 0..80), first in 0u64..1000) {
        let mut cum = vec![first];
        for d in &daily {
            cum.push(cum.last().unwrap() + d);
        }
        let (back, log, mass) = difference_cumulative(&cum);
        prop_assert_eq!(back, daily);
        prop_assert!(log.is_empty());
        prop_assert_eq!(mass, 0);
    }

    #[test]
    fn clamped_differencing_conserves_mass(cum in prop::collection::vec(0u64..10_000, 1..80)) {
        let (daily, log, mass) = difference_cumulative(&cum);
        prop_assert_eq!(daily.len(), cum.len() - 1);
        let total = daily.iter().sum::<u64>() as i64 + cum[0] as i64 + mass;
        prop_assert_eq!(total, *cum.last().unwrap() as i64);
        for &t in &log {
            prop_assert!(cum[t] < cum[t - 1]);
            prop_assert_eq!(daily[t - 1], 0);
        }
    }
}
