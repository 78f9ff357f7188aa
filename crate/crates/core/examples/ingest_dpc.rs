//! Read a Protezione Civile national or regional CSV and extract daily
//! series. Pass the file path as the first argument.
//!
//! ```text
//! cargo run --example ingest_dpc -- dpc-covid19-ita-regioni.csv
//! ```

use richfit::data::{extract_series, merge_autonomous_provinces, parse_dpc, reconcile, region_names, Indicator, Scope};

fn main() -> richfit::Result<()> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: ingest_dpc <dpc csv>");
        std::process::exit(2);
    };
    let header = std::fs::read_to_string(&path)?.lines().next().unwrap_or_default().to_string();
    let scope = if header.contains("codice_regione") { Scope::Regional } else { Scope::National };
    let mut records = parse_dpc(&path, scope)?;
    if scope == Scope::Regional {
        records = merge_autonomous_provinces(&records)?;
        println!("{} regions", region_names(&records).len());
    }
    for ind in [Indicator::Positives, Indicator::Deceased, Indicator::Recovered] {
        let s = extract_series(&records, ind, None)?;
        let rec = reconcile(&records, &s, ind)?;
        println!(
            "{:<9} {} days from {}, total {}, {} clamped days, reconciliation gap {}",
            ind.label(),
            s.len(),
            s.start_date,
            rec.daily_sum,
            s.clamp_log.len(),
            rec.discrepancy
        );
    }
    Ok(())
}
