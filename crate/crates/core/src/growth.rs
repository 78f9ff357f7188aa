//! The Richards (generalized logistic) growth curve
//!
//! ```text
//! λ(t) = b + r · (1 + 10^{h(p - t)})^{-s}
//! ```
//!
//! together with its unit-lag first difference, the closed-form partial
//! derivatives in `(r, h, p, s)` and the analytic peak day of the daily
//! curve.
//!
//! Everything is evaluated through `L(t) = ln(1 + 10^{h(p-t)})` so that the
//! shape factor `g = exp(-s·L)` never overflows, even for asymmetry values in
//! the hundreds.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five growth-curve parameters `(b, r, h, p, s)`.
///
/// `b` is the lower asymptote, `r` the distance to the upper asymptote, `h`
/// the hill (growth rate per day), `p` the peak-position parameter in days
/// and `s` the asymmetry. `p` carries no sign constraint: fitted epidemic
/// curves regularly place it before the first recorded day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsParams {
    b: f64,
    r: f64,
    h: f64,
    p: f64,
    s: f64,
}

impl RichardsParams {
    pub fn new(b: f64, r: f64, h: f64, p: f64, s: f64) -> Result<Self> {
        for (name, v) in [("b", b), ("r", r), ("h", h), ("p", p), ("s", s)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} is not finite ({v})")));
            }
        }
        if b < 0.0 {
            return Err(Error::InvalidParameter(format!("b must be >= 0, got {b}")));
        }
        for (name, v) in [("r", r), ("h", h), ("s", s)] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self { b, r, h, p, s })
    }

    /// Parameters for the daily curve, where the lower asymptote cancels.
    pub fn daily(r: f64, h: f64, p: f64, s: f64) -> Result<Self> {
        Self::new(0.0, r, h, p, s)
    }

    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn with_b(self, b: f64) -> Result<Self> {
        Self::new(b, self.r, self.h, self.p, self.s)
    }
}

/// `ln(1 + 10^u)` without overflow.
#[inline]
pub(crate) fn log1p_pow10(u: f64) -> f64 {
    if u > 0.0 {
        u * LN_10 + (-u * LN_10).exp().ln_1p()
    } else {
        (u * LN_10).exp().ln_1p()
    }
}

/// `10^u / (1 + 10^u)`, the logistic in base 10.
#[inline]
pub(crate) fn logistic10(u: f64) -> f64 {
    if u > 0.0 {
        1.0 / (1.0 + (-u * LN_10).exp())
    } else {
        let w = (u * LN_10).exp();
        w / (1.0 + w)
    }
}

/// Shape factor `g(t) = (1 + 10^{h(p-t)})^{-s}` with its gradient and
/// Hessian in `(h, p, s)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ShapeTerms {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

pub(crate) fn shape_terms(t: f64, h: f64, p: f64, s: f64) -> ShapeTerms {
    let d = p - t;
    let u = h * d;
    let l = log1p_pow10(u);
    let sig = logistic10(u);
    let g = (-s * l).exp();
    // derivatives of ln g = -s·L
    let dsig = LN_10 * sig * (1.0 - sig);
    let lh = -s * LN_10 * sig * d;
    let lp = -s * LN_10 * sig * h;
    let ls = -l;
    let lhh = -s * LN_10 * dsig * d * d;
    let lpp = -s * LN_10 * dsig * h * h;
    let lhp = -s * LN_10 * (dsig * h * d + sig);
    let lhs = -LN_10 * sig * d;
    let lps = -LN_10 * sig * h;
    let lss = 0.0;
    let dl = [lh, lp, ls];
    let d2l = [[lhh, lhp, lhs], [lhp, lpp, lps], [lhs, lps, lss]];
    let mut hess = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = g * (dl[i] * dl[j] + d2l[i][j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    ShapeTerms {
        value: g,
        grad: [g * lh, g * lp, g * ls],
        hess,
    }
}

/// Value of `g(t) - g(t-1)`, computed as `g(t)·(1 - exp(-s·(L(t-1) - L(t))))`
/// so late-time differences of two numbers close to one keep full precision.
pub(crate) fn shape_difference(t: f64, h: f64, p: f64, s: f64) -> f64 {
    let lt = log1p_pow10(h * (p - t));
    let lprev = log1p_pow10(h * (p - (t - 1.0)));
    let g = (-s * lt).exp();
    g * -(-s * (lprev - lt)).exp_m1()
}

/// Stripped first difference `g(t) - g(t-1)` and its derivatives in
/// `(h, p, s)`; the daily Richards mean is `r` times this.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DifferenceTerms {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

pub(crate) fn difference_terms(t: f64, h: f64, p: f64, s: f64) -> DifferenceTerms {
    let now = shape_terms(t, h, p, s);
    let prev = shape_terms(t - 1.0, h, p, s);
    let mut grad = [0.0; 3];
    let mut hess = [[0.0; 3]; 3];
    for i in 0..3 {
        grad[i] = now.grad[i] - prev.grad[i];
        for j in 0..3 {
            hess[i][j] = now.hess[i][j] - prev.hess[i][j];
        }
    }
    DifferenceTerms {
        value: shape_difference(t, h, p, s),
        grad,
        hess,
    }
}

/// Expected cumulative count `λ(t)`.
pub fn richards(t: f64, params: &RichardsParams) -> f64 {
    let l = log1p_pow10(params.h * (params.p - t));
    params.b + params.r * (-params.s * l).exp()
}

/// Expected daily count `λ(t) - λ(t-1)`; independent of `b`.
pub fn richards_diff(t: f64, params: &RichardsParams) -> f64 {
    params.r * shape_difference(t, params.h, params.p, params.s)
}

/// Gradient of `λ(t)` with respect to `(r, h, p, s)`. The derivative in `b`
/// is identically one.
pub fn richards_gradient(t: f64, params: &RichardsParams) -> [f64; 4] {
    let sh = shape_terms(t, params.h, params.p, params.s);
    let r = params.r;
    [sh.value, r * sh.grad[0], r * sh.grad[1], r * sh.grad[2]]
}

/// Hessian of `λ(t)` with respect to `(r, h, p, s)`.
///
/// `λ` is linear in `r`, so the first row holds the shape-factor gradient and
/// the `(r, r)` entry is zero.
pub fn richards_hessian(t: f64, params: &RichardsParams) -> [[f64; 4]; 4] {
    let sh = shape_terms(t, params.h, params.p, params.s);
    let r = params.r;
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        out[0][i + 1] = sh.grad[i];
        out[i + 1][0] = sh.grad[i];
        for j in 0..3 {
            out[i + 1][j + 1] = r * sh.hess[i][j];
        }
    }
    out
}

/// Day index at which the continuous-time derivative of the Richards curve
/// peaks: `p + log10(s) / h`.
pub fn peak_time(params: &RichardsParams) -> f64 {
    params.p + params.s.log10() / params.h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2() -> RichardsParams {
        RichardsParams::daily(221_940.0, 0.029, -32.29, 77.74).unwrap()
    }

    #[test]
    fn midpoint_is_half_the_range() {
        let g = RichardsParams::new(0.0, 1.0, 1.0, 5.0, 1.0).unwrap();
        assert!((richards(5.0, &g) - 0.5).abs() < 1e-15);
        assert!((richards_gradient(5.0, &g)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn asymptotes() {
        let g = RichardsParams::new(3.0, 10.0, 0.2, 4.0, 2.5).unwrap();
        assert!((richards(1e6, &g) - 13.0).abs() < 1e-12);
        assert!((richards(-1e6, &g) - 3.0).abs() < 1e-12);
        assert_eq!(richards_diff(1e6, &g), 0.0);
        // ∂/∂s vanishes once 10^{h(p-t)} is negligible
        assert!(richards_gradient(1e4, &g)[3].abs() < 1e-300);
    }

    #[test]
    fn large_asymmetry_does_not_overflow() {
        let g = RichardsParams::daily(1e5, 0.02, -200.0, 300.0).unwrap();
        for t in [-5000.0, -100.0, 0.0, 50.0, 400.0] {
            assert!(richards(t, &g).is_finite());
            assert!(richards_diff(t, &g).is_finite());
            assert!(richards_gradient(t, &g).iter().all(|v| v.is_finite()));
            let hs = richards_hessian(t, &g);
            assert!(hs.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn difference_matches_subtraction() {
        let g = table2();
        let direct = richards(33.0, &g) - richards(32.0, &g);
        let diff = richards_diff(33.0, &g);
        assert!((diff - direct).abs() <= 1e-12 * direct.abs());
    }

    #[test]
    fn difference_ignores_lower_asymptote() {
        let g = table2();
        let shifted = g.with_b(12_345.0).unwrap();
        for t in 1..150 {
            assert_eq!(
                richards_diff(t as f64, &g).to_bits(),
                richards_diff(t as f64, &shifted).to_bits()
            );
        }
    }

    #[test]
    fn hessian_is_symmetric_with_zero_rr() {
        let g = table2();
        for t in [0.0, 17.0, 33.0, 90.0] {
            let hs = richards_hessian(t, &g);
            assert_eq!(hs[0][0], 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(hs[i][j].to_bits(), hs[j][i].to_bits());
                }
            }
        }
    }

    #[test]
    fn peak_formula_cases() {
        let g = RichardsParams::daily(1.0, 0.3, 12.0, 1.0).unwrap();
        assert_eq!(peak_time(&g), 12.0);
        let g = RichardsParams::daily(1.0, 1.0, 5.0, 10.0).unwrap();
        assert!((peak_time(&g) - 6.0).abs() < 1e-15);
        let t = peak_time(&table2());
        assert!((t - 32.9).abs() < 0.05, "{t}");
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(RichardsParams::new(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(RichardsParams::new(0.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(RichardsParams::new(0.0, 1.0, 1.0, f64::NAN, 1.0).is_err());
        assert!(RichardsParams::new(-1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(RichardsParams::new(0.0, 1.0, 1.0, -40.0, 1.0).is_ok());
    }
}
