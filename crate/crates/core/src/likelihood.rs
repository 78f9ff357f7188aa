//! Poisson and Negative Binomial log-likelihoods with analytic derivatives.
//!
//! Both include their normalizing constants so that values are comparable
//! across families. Derivatives are assembled through the chain rule from
//! per-day `∂ℓ_t/∂μ`, `∂²ℓ_t/∂μ²` and the mean-function derivatives; the
//! dispersion `ν` enters the Negative Binomial block directly.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Family, FamilyKind, MeanEvaluator, MeanTrajectory, ModelSpec, Param};
use crate::series::CountSeries;
use crate::special::{digamma_unchecked, ln_factorial, ln_gamma_ratio, trigamma_unchecked};

/// Counts at or below this use exact finite sums for the `ν`-polygamma
/// differences, which keeps them accurate when `ν` is huge.
const SMALL_COUNT: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// Derivatives with respect to the parameters as reported.
    Constrained,
    /// Derivatives with respect to the optimizer's log/identity coordinates.
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEvaluation {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub scale: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

struct Accumulated {
    loglik: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// `ψ(ν+y) - ψ(ν)`.
fn digamma_shift(nu: f64, y: u64) -> f64 {
    if y <= SMALL_COUNT {
        (0..y).map(|k| 1.0 / (nu + k as f64)).sum()
    } else {
        digamma_unchecked(nu + y as f64) - digamma_unchecked(nu)
    }
}

/// `ψ'(ν+y) - ψ'(ν)`.
fn trigamma_shift(nu: f64, y: u64) -> f64 {
    if y <= SMALL_COUNT {
        -(0..y).map(|k| (nu + k as f64).powi(-2)).sum::<f64>()
    } else {
        trigamma_unchecked(nu + y as f64) - trigamma_unchecked(nu)
    }
}

fn check_mean(mu: f64, t: usize) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("mean at day {t} is {mu}; it must be positive and finite")))
    }
}

fn accumulate(values: &[u64], first_day: usize, spec: &ModelSpec, theta: &[f64], order: Order) -> Result<Accumulated> {
    spec.validate()?;
    let layout = spec.layout();
    spec.check_theta(&layout, theta)?;
    if first_day == 0 {
        return Err(Error::Dimension("observations start at day 1".into()));
    }
    let n = layout.len();
    let ev = MeanEvaluator::new(spec);
    let nu_idx = layout.index(Param::Nu);
    let nu = nu_idx.map(|i| theta[i]);
    let mut ll = 0.0;
    let mut grad = if order >= Order::Gradient { vec![0.0; n] } else { Vec::new() };
    let mut hess = if order >= Order::Hessian { vec![0.0; n * n] } else { Vec::new() };

    for (i, &y) in values.iter().enumerate() {
        let t = first_day + i;
        let yf = y as f64;
        let terms = if order == Order::Value {
            None
        } else {
            Some(ev.terms(t, theta, order == Order::Hessian)?)
        };
        let mu = match &terms {
            Some(m) => m.value,
            None => ev.value(t, theta)?,
        };
        check_mean(mu, t)?;
        // ∂ℓ_t/∂μ = d1; ∂²ℓ_t/∂μ² = -y/μ² + d2m, with y/μ² applied as
        // (y/μ)(1/μ) against the gradient so tiny means cannot overflow
        let (d1, d2m) = match nu {
            None => {
                ll += yf * mu.ln() - mu - ln_factorial(y);
                (yf / mu - 1.0, 0.0)
            }
            Some(nu) => {
                let mn = mu + nu;
                let log_ratio = (mu / nu).ln_1p(); // ln((ν+μ)/ν)
                ll += ln_gamma_ratio(nu, y) - ln_factorial(y) - nu * log_ratio - yf * (nu / mu).ln_1p();
                (yf / mu - (yf + nu) / mn, (yf + nu) / (mn * mn))
            }
        };
        let Some(terms) = terms else { continue };
        let mg = &terms.grad;
        for j in 0..n {
            grad[j] += d1 * mg[j];
        }
        if order == Order::Hessian {
            let scaled: Vec<f64> = mg.iter().map(|g| g / mu).collect();
            for j in 0..n {
                for k in 0..n {
                    hess[j * n + k] += -yf * scaled[j] * scaled[k] + d2m * mg[j] * mg[k] + d1 * terms.hess[j * n + k];
                }
            }
        }
        if let (Some(nu), Some(iv)) = (nu, nu_idx) {
            let mn = mu + nu;
            let log_ratio = (mu / nu).ln_1p();
            grad[iv] += digamma_shift(nu, y) - log_ratio + (mu - yf) / mn;
            if order == Order::Hessian {
                hess[iv * n + iv] += trigamma_shift(nu, y) + mu / (nu * mn) - (mu - yf) / (mn * mn);
                let cross = (yf - mu) / (mn * mn);
                for j in 0..n {
                    if j != iv {
                        hess[iv * n + j] += cross * mg[j];
                        hess[j * n + iv] += cross * mg[j];
                    }
                }
            }
        }
    }
    // exact symmetry
    if order == Order::Hessian {
        for j in 0..n {
            for k in 0..j {
                let v = 0.5 * (hess[j * n + k] + hess[k * n + j]);
                hess[j * n + k] = v;
                hess[k * n + j] = v;
            }
        }
    }
    Ok(Accumulated { loglik: ll, grad, hess })
}

/// Log-likelihood of `y` under the model at constrained parameters `theta`.
pub fn loglik(y: &CountSeries, spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    Ok(accumulate(&y.values, 1, spec, theta, Order::Value)?.loglik)
}

/// Log-likelihood of counts observed on days `first_day..first_day+len`.
pub fn loglik_window(values: &[u64], first_day: usize, spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    Ok(accumulate(values, first_day, spec, theta, Order::Value)?.loglik)
}

/// Gradient over the constrained parameters.
pub fn loglik_gradient(y: &CountSeries, spec: &ModelSpec, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(accumulate(&y.values, 1, spec, theta, Order::Gradient)?.grad)
}

/// Hessian over the constrained parameters.
pub fn loglik_hessian(y: &CountSeries, spec: &ModelSpec, theta: &[f64]) -> Result<DMatrix<f64>> {
    let n = spec.n_params();
    let acc = accumulate(&y.values, 1, spec, theta, Order::Hessian)?;
    Ok(DMatrix::from_row_slice(n, n, &acc.hess))
}

/// Value, gradient and Hessian in one pass, on either scale. `theta` is
/// always given on the constrained scale.
pub fn evaluate(y: &CountSeries, spec: &ModelSpec, theta: &[f64], scale: Scale) -> Result<LikelihoodEvaluation> {
    evaluate_values(&y.values, spec, theta, scale)
}

pub(crate) fn evaluate_values(values: &[u64], spec: &ModelSpec, theta: &[f64], scale: Scale) -> Result<LikelihoodEvaluation> {
    let n = spec.n_params();
    let acc = accumulate(values, 1, spec, theta, Order::Hessian)?;
    let (gradient, hess) = match scale {
        Scale::Constrained => (acc.grad, acc.hess),
        Scale::Unconstrained => {
            let layout = spec.layout();
            let h = model::pull_back_hessian(&acc.hess, &acc.grad, theta, &layout);
            (model::pull_back_gradient(&acc.grad, theta, &layout), h)
        }
    };
    Ok(LikelihoodEvaluation {
        loglik: acc.loglik,
        gradient,
        hessian: DMatrix::from_row_slice(n, n, &hess),
        scale,
    })
}

pub(crate) fn loglik_values(values: &[u64], spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    Ok(accumulate(values, 1, spec, theta, Order::Value)?.loglik)
}

/// One count drawn from `family` with the given mean. Negative Binomial
/// counts are drawn as Poisson with a Gamma(ν, μ/ν) rate.
pub(crate) fn draw_count<R: rand::Rng + ?Sized>(mu: f64, family: Family, rng: &mut R) -> u64 {
    let rate = match family {
        Family::Poisson => mu,
        Family::NegBin { nu } => {
            let scale = mu / nu;
            // an underflowed mean yields zero with probability 1 - O(μ)
            if !(scale > 0.0) {
                return 0;
            }
            Gamma::new(nu, scale).expect("valid gamma").sample(rng)
        }
    };
    if !(rate > 0.0) {
        return 0;
    }
    if rate >= 1e17 {
        // Poisson noise is below one part in 1e8 here and the sampler's range ends
        return rate as u64;
    }
    Poisson::new(rate).expect("valid poisson").sample(rng) as u64
}

/// Independent counts from the model mean, deterministic in `seed`.
pub fn sample_counts(
    spec: &ModelSpec,
    theta: &[f64],
    family: Family,
    start_date: NaiveDate,
    len: usize,
    seed: u64,
) -> Result<CountSeries> {
    let traj = model::mean_trajectory(spec, theta, len, 0.0)?;
    for (i, &mu) in traj.values.iter().enumerate() {
        check_mean(mu, i + 1)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = traj.values.iter().map(|&mu| draw_count(mu, family, &mut rng)).collect();
    let label = match family.kind() {
        FamilyKind::Poisson => "simulated-poisson",
        FamilyKind::NegBin => "simulated-negbin",
    };
    CountSeries::new(start_date, values, label)
}

/// `(y_t - ŷ_t) / sqrt(Var[Y_t])` over the observed window.
pub fn pearson_residuals(y: &[f64], fitted: &MeanTrajectory, family: Family) -> Result<Vec<f64>> {
    if fitted.values.len() < y.len() {
        return Err(Error::Dimension(format!(
            "{} fitted values for {} observations",
            fitted.values.len(),
            y.len()
        )));
    }
    y.iter()
        .zip(&fitted.values)
        .enumerate()
        .map(|(i, (&obs, &mu))| {
            if !(mu > 0.0) {
                return Err(Error::Domain(format!("fitted value at day {} is {mu}", i + 1)));
            }
            Ok((obs - mu) / family.variance(mu).sqrt())
        })
        .collect()
}
