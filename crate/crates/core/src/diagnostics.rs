//! Goodness of fit and residual checks.

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::uncertainty::{quantile_sorted, PredictionBand};

/// `1 - Σ(y - ŷ)² / Σ(y - ȳ)²`.
pub fn pseudo_r2(y: &[f64], fitted: &[f64]) -> Result<f64> {
    if y.len() != fitted.len() {
        return Err(Error::Dimension(format!("{} observations, {} fitted values", y.len(), fitted.len())));
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: y.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidData("pseudo-R² is undefined for a constant series".into()));
    }
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Share of observations inside the band, endpoints included.
pub fn empirical_coverage(y: &[f64], band: &PredictionBand) -> Result<f64> {
    if band.len() < y.len() || y.is_empty() {
        return Err(Error::Dimension(format!(
            "band covers {} days, observation window has {}",
            band.len(),
            y.len()
        )));
    }
    let inside = y
        .iter()
        .enumerate()
        .filter(|&(i, &v)| band.lower[i] <= v && v <= band.upper[i])
        .count();
    Ok(inside as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acf {
    /// `values[k]` is the autocorrelation at lag `k`; `values[0] = 1`.
    pub values: Vec<f64>,
    /// Half-width `1.96/√T` of the white-noise band.
    pub band: f64,
}

/// Sample autocorrelation up to `max_lag`.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Acf> {
    let n = x.len();
    if max_lag >= n {
        return Err(Error::InvalidParameter(format!("max lag {max_lag} needs more than {n} observations")));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if c0 == 0.0 {
        return Err(Error::InvalidData("autocorrelation of a constant series".into()));
    }
    let values = (0..=max_lag)
        .map(|k| dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect();
    Ok(Acf {
        values,
        band: 1.96 / (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalityMethod {
    /// Shapiro–Wilk W with Royston's (1995) coefficients and p-value.
    ShapiroWilkRoyston,
    JarqueBera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    pub method: NormalityMethod,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro–Wilk for `3 ≤ n ≤ 5000`; Jarque–Bera above that.
pub fn normality_test(x: &[f64]) -> Result<NormalityTest> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData { required: 3, available: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("normality test on non-finite values".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[n - 1] - sorted[0] <= 0.0 {
        return Err(Error::InvalidData("normality test on a constant sample".into()));
    }
    if n > 5000 {
        return Ok(jarque_bera(&sorted));
    }
    let (w, p) = shapiro_wilk(&sorted);
    Ok(NormalityTest {
        method: NormalityMethod::ShapiroWilkRoyston,
        statistic: w,
        p_value: p,
        n,
    })
}

fn shapiro_wilk(sorted: &[f64]) -> (f64, f64) {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = sorted.len();
    let an = n as f64;
    let half = n / 2;
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");

    // coefficients a_1..a_half for the lower half, positive
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=half)
            .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    let mean = sorted.iter().sum::<f64>() / an;
    let ssq: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (sorted[n - 1 - i] - sorted[i])).sum();
    let w = (num * num / ssq).min(1.0);

    if n == 3 {
        // exact distribution
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - std::f64::consts::PI / 3.0);
        return (w, p.clamp(0.0, 1.0));
    }
    let w1 = (1.0 - w).ln();
    let (y, m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if w1 >= gamma {
            return (w, 0.0);
        }
        (-(gamma - w1).ln(), poly(&C3, an), poly(&C4, an).exp())
    } else {
        let xx = an.ln();
        (w1, poly(&C5, xx), poly(&C6, xx).exp())
    };
    let p = 1.0 - Normal::new(m, s).expect("valid normal").cdf(y);
    (w, p.clamp(0.0, 1.0))
}

fn jarque_bera(x: &[f64]) -> NormalityTest {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    NormalityTest {
        method: NormalityMethod::JarqueBera,
        statistic: jb,
        // χ² with two degrees of freedom
        p_value: (-jb / 2.0).exp(),
        n: x.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdaySummary {
    pub weekday: Weekday,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Residual distribution per day of week, Monday first; empty days omitted.
pub fn weekday_residual_summary(residuals: &[f64], dates: &[NaiveDate]) -> Result<Vec<WeekdaySummary>> {
    if residuals.len() != dates.len() {
        return Err(Error::Dimension(format!(
            "{} residuals for {} dates",
            residuals.len(),
            dates.len()
        )));
    }
    let mut groups: [Vec<f64>; 7] = Default::default();
    for (r, d) in residuals.iter().zip(dates) {
        groups[d.weekday().num_days_from_monday() as usize].push(*r);
    }
    Ok(groups
        .iter_mut()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(i, g)| {
            g.sort_by(f64::total_cmp);
            WeekdaySummary {
                weekday: Weekday::try_from(i as u8).expect("weekday index"),
                n: g.len(),
                min: g[0],
                q1: quantile_sorted(g, 0.25),
                median: quantile_sorted(g, 0.5),
                q3: quantile_sorted(g, 0.75),
                max: g[g.len() - 1],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub r2: f64,
    pub coverage: Option<f64>,
    pub acf: Acf,
    pub normality: NormalityTest,
    pub weekday_residuals: Vec<WeekdaySummary>,
}

/// All diagnostics for observed counts, fitted means and Pearson residuals.
pub fn diagnose(
    y: &[f64],
    fitted: &[f64],
    residuals: &[f64],
    dates: &[NaiveDate],
    band: Option<&PredictionBand>,
    max_lag: usize,
) -> Result<DiagnosticsReport> {
    Ok(DiagnosticsReport {
        r2: pseudo_r2(y, &fitted[..y.len().min(fitted.len())])?,
        coverage: band.map(|b| empirical_coverage(y, b)).transpose()?,
        acf: acf(residuals, max_lag.min(residuals.len().saturating_sub(1)))?,
        normality: normality_test(residuals)?,
        weekday_residuals: weekday_residual_summary(residuals, dates)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_extremes() {
        let y = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(pseudo_r2(&y, &y).unwrap(), 1.0);
        assert_eq!(pseudo_r2(&y, &[3.75; 4]).unwrap(), 0.0);
        assert!(pseudo_r2(&[2.0; 4], &y).is_err());
    }

    #[test]
    fn acf_basics() {
        let x: Vec<f64> = (0..70).map(|i| if i % 7 == 0 { 5.0 } else { (i as f64 * 0.37).sin() }).collect();
        let a = acf(&x, 10).unwrap();
        assert_eq!(a.values[0], 1.0);
        for k in 1..7 {
            assert!(a.values[7] > a.values[k]);
        }
        assert!(acf(&x, 70).is_err());
    }

    #[test]
    fn shapiro_reference_values() {
        // (sample, W, p) from an independent AS R94 implementation
        let cases: [(Vec<f64>, f64, f64); 5] = [
            ((1..=20).map(f64::from).collect(), 0.960_375_183, 0.551_371_7),
            (vec![1.0, 2.0, 4.0], 0.964_285_714, 0.636_886_8),
            (vec![1.0, 2.0, 4.0, 8.0, 9.0], 0.900_963_269, 0.415_232_4),
            (vec![0.3, -1.2, 2.5, 0.1, 0.8, -0.4, 1.7, -2.2, 0.05, 0.9], 0.984_983_744, 0.986_229_2),
            (
                (0..60).map(|i| (i as f64 * 1.7).sin() + i as f64 * 0.01).collect(),
                0.934_970_365,
                0.003_248_0,
            ),
        ];
        for (x, w, p) in cases {
            let t = normality_test(&x).unwrap();
            assert_eq!(t.method, NormalityMethod::ShapiroWilkRoyston);
            assert!((t.statistic - w).abs() < 1e-6, "W {} vs {w}", t.statistic);
            assert!((t.p_value - p).abs() < 1e-4 * p.max(0.01), "p {} vs {p}", t.p_value);
        }
        assert!(normality_test(&[3.0; 10]).is_err());
        assert!(normality_test(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn jarque_bera_above_limit() {
        let x: Vec<f64> = (0..6000).map(|i| ((i * 7919) % 6000) as f64).collect();
        let t = normality_test(&x).unwrap();
        assert_eq!(t.method, NormalityMethod::JarqueBera);
        // uniform: skew 0, excess kurtosis -1.2, JB ≈ n/24·1.44
        assert!((t.statistic - 6000.0 / 24.0 * 1.44).abs() < 1.0, "{}", t.statistic);
    }

    #[test]
    fn weekday_groups() {
        let start = NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(); // Monday
        let dates: Vec<NaiveDate> = (0..14).map(|i| start + chrono::Duration::days(i)).collect();
        let res = vec![0.0; 14];
        let s = weekday_residual_summary(&res, &dates).unwrap();
        assert_eq!(s.len(), 7);
        assert!(s.iter().all(|g| g.median == 0.0 && g.n == 2));
        assert_eq!(s[0].weekday, Weekday::Mon);
        assert!(weekday_residual_summary(&res[..3], &dates).is_err());
    }
}
