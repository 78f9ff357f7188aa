#![allow(dead_code)]

use chrono::{Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use richfit::data::{weekday_design, DesignMatrix};
use richfit::model::{FamilyKind, ModelSpec, Param};

pub const T: usize = 120;

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 2, 25).unwrap()
}

/// A difference quotient with a bound on its floating-point noise.
#[derive(Debug, Clone, Copy)]
pub struct Fd {
    pub d: f64,
    pub noise: f64,
}

impl Fd {
    /// `|analytic - d| ≤ tol·max(|analytic|, |d|) + noise`. Values near the
    /// subnormal range carry no relative precision and always agree.
    pub fn agrees(&self, analytic: f64, tol: f64) -> bool {
        (analytic - self.d).abs() <= tol * analytic.abs().max(self.d.abs()) + self.noise.max(TINY)
    }
}

/// Rounding in the evaluated function is taken as `1e3·ε·|f|`, to allow
/// for cancellation inside sums; the five-point weights add `1.5/h`.
const TINY: f64 = 1e-290;

const NOISE_ULPS: f64 = 1e3;

pub fn step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1e-2)
}

fn fd5_at(at: &dyn Fn(f64) -> Vec<f64>, h: f64) -> (Vec<f64>, Vec<f64>) {
    let (m2, m1, p1, p2) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
    (0..m2.len())
        .map(|k| {
            // below the normal range relative precision is gone
            let big = m2[k].abs().max(m1[k].abs()).max(p1[k].abs()).max(p2[k].abs()).max(f64::MIN_POSITIVE);
            (
                (m2[k] - 8.0 * m1[k] + 8.0 * p1[k] - p2[k]) / (12.0 * h),
                NOISE_ULPS * f64::EPSILON * big * 1.5 / h,
            )
        })
        .unzip()
}

/// Jacobian of a vector function by five-point differences at steps `h` and
/// `h/2` (`h = rel·|x_i|`), combined by Richardson extrapolation. The
/// difference between the two step sizes bounds the truncation error.
/// Row `i` holds `∂f/∂x_i`, a Hessian when `f` is a gradient.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], rel: f64) -> Vec<Vec<Fd>> {
    (0..x.len())
        .map(|i| {
            let h = step(x[i], rel);
            let at = |dx: f64| {
                let mut y = x.to_vec();
                y[i] = x[i] + dx;
                f(&y)
            };
            let (big, noise_big) = fd5_at(&at, h);
            let (small, noise_small) = fd5_at(&at, 0.5 * h);
            (0..big.len())
                .map(|k| Fd {
                    d: (16.0 * small[k] - big[k]) / 15.0,
                    noise: (small[k] - big[k]).abs() + noise_small[k] + noise_big[k],
                })
                .collect()
        })
        .collect()
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> Vec<Fd> {
    fd_jacobian(&|y| vec![f(y)], x, rel).into_iter().map(|row| row[0]).collect()
}

pub fn weekday_x(len: usize) -> DesignMatrix {
    let dates: Vec<NaiveDate> = (0..len).map(|i| start() + Duration::days(i as i64)).collect();
    weekday_design(&dates, &[Weekday::Mon, Weekday::Tue]).unwrap()
}

/// One of the six supported mean structures for `family`.
pub fn spec_variant(family: FamilyKind, k: usize) -> ModelSpec {
    let base = ModelSpec::new(family);
    match k % 6 {
        0 => base,
        1 => base.with_baseline(),
        2 => base.with_additive(DesignMatrix::intercept(T)),
        3 => base.with_additive(weekday_x(T)),
        4 => base.with_multiplicative(weekday_x(T)),
        _ => base.with_baseline().with_multiplicative(weekday_x(T)),
    }
}

/// Random valid parameter vector with `r` spanning four orders of magnitude
/// and the epidemic peak inside the window.
pub fn random_theta(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r = 10f64.powf(rng.random_range(3.0..7.0));
    let h = rng.random_range(0.015..0.12);
    let s = 10f64.powf(rng.random_range(-0.5..1.9));
    let peak = rng.random_range(20.0..90.0);
    let p = peak - s.log10() / h;
    let scale_daily = r * h;
    spec.layout().assemble(|q| match q {
        Param::Alpha => scale_daily * rng.random_range(0.001..0.05),
        Param::R => r,
        Param::H => h,
        Param::P => p,
        Param::S => s,
        Param::Beta(0) => match spec.covariates {
            richfit::model::Covariates::Multiplicative(_) => r.ln(),
            _ => (scale_daily * rng.random_range(0.001..0.05)).ln(),
        },
        Param::Beta(_) => rng.random_range(-0.6..0.3),
        Param::Nu => 10f64.powf(rng.random_range(0.0..2.5)),
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Daily-positives scale: baseline 175/day, final size 2.2e5, peak near day 33,
/// dispersion 18.8. Layout of `baseline_spec()`.
pub const REFERENCE_THETA: [f64; 6] = [175.04, 221_940.0, 0.029, -32.29, 77.74, 18.76];

pub fn baseline_spec() -> ModelSpec {
    ModelSpec::new(FamilyKind::NegBin).with_baseline()
}

pub fn simulate(spec: &ModelSpec, theta: &[f64], len: usize, seed: u64) -> richfit::series::CountSeries {
    let family = spec.family_of(theta).unwrap();
    richfit::likelihood::sample_counts(spec, theta, family, start(), len, seed).unwrap()
}

pub const REGIONS: [(u32, &str); 21] = [
    (1, "Piemonte"),
    (2, "Valle d'Aosta"),
    (3, "Lombardia"),
    (4, "P.A. Bolzano"),
    (4, "P.A. Trento"),
    (5, "Veneto"),
    (6, "Friuli Venezia Giulia"),
    (7, "Liguria"),
    (8, "Emilia-Romagna"),
    (9, "Toscana"),
    (10, "Umbria"),
    (11, "Marche"),
    (12, "Lazio"),
    (13, "Abruzzo"),
    (14, "Molise"),
    (15, "Campania"),
    (16, "Puglia"),
    (17, "Basilicata"),
    (18, "Calabria"),
    (19, "Sicilia"),
    (20, "Sardegna"),
];

/// Cumulative stocks for one area: `(totale_positivi, dimessi_guariti, deceduti)`
/// per day, consistent with `nuovi_positivi` as the daily change of their sum.
fn area_stocks(days: usize, scale: u64, seed: u64) -> Vec<(u64, u64, u64)> {
    let mut rng = rng(seed);
    let (mut active, mut rec, mut dead) = (0u64, 0u64, 0u64);
    (0..days)
        .map(|d| {
            let bump = (scale as f64 * (-((d as f64 - 30.0) / 12.0).powi(2)).exp()) as u64;
            let new = bump + rng.random_range(0..=scale / 10 + 1);
            let healed = active / 20;
            let died = active / 200;
            active = active + new - healed - died;
            rec += healed;
            dead += died;
            (active, rec, dead)
        })
        .collect()
}

fn dpc_row(date: NaiveDate, region: Option<(u32, &str)>, s: (u64, u64, u64), prev: Option<(u64, u64, u64)>) -> String {
    let total = s.0 + s.1 + s.2;
    let new = prev.map_or(total as i64, |p| total as i64 - (p.0 + p.1 + p.2) as i64);
    let stamp = format!("{date}T18:00:00");
    let tail = format!("{},{},{},{},{},{},{}", s.0 / 10, s.0, new, s.1, s.2, 10 * total, "");
    match region {
        Some((code, name)) => format!("{stamp},ITA,{code},{name},45.0,9.1,{tail}"),
        None => format!("{stamp},ITA,{tail}"),
    }
}

const TAIL_HEADER: &str = "terapia_intensiva,totale_positivi,nuovi_positivi,dimessi_guariti,deceduti,tamponi,note";

/// National DPC-shaped CSV (timestamped dates, extra columns) from 2020-02-24.
pub fn dpc_national(days: usize) -> String {
    let start = NaiveDate::from_ymd_opt(2020, 2, 24).unwrap();
    let stocks = area_stocks(days, 3000, 77);
    let mut out = format!("data,stato,{TAIL_HEADER}\n");
    for d in 0..days {
        let prev = d.checked_sub(1).map(|p| stocks[p]);
        out += &dpc_row(start + Duration::days(d as i64), None, stocks[d], prev);
        out.push('\n');
    }
    out
}

/// Regional DPC-shaped CSV with the two autonomous provinces listed apart.
pub fn dpc_regional(days: usize) -> String {
    let start = NaiveDate::from_ymd_opt(2020, 2, 24).unwrap();
    let stocks: Vec<_> = (0..REGIONS.len())
        .map(|i| area_stocks(days, 50 + 40 * i as u64, i as u64))
        .collect();
    let mut out = format!("data,stato,codice_regione,denominazione_regione,lat,long,{TAIL_HEADER}\n");
    for d in 0..days {
        for (i, &region) in REGIONS.iter().enumerate() {
            let prev = d.checked_sub(1).map(|p| stocks[i][p]);
            out += &dpc_row(start + Duration::days(d as i64), Some(region), stocks[i][d], prev);
            out.push('\n');
        }
    }
    out
}
