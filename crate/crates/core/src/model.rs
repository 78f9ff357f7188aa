//! Mean-function specification for daily incidence counts.
//!
//! Every supported mean has the form
//!
//! ```text
//! μ(t) = base(t) + scale(t) · D(t),    D(t) = g(t) - g(t-1)
//! ```
//!
//! where `g` is the Richards shape factor. `base` is zero, a constant `α`, or
//! `exp(x(t)·β)` for additive covariates; `scale` is the constant `r`, or
//! `exp(x(t)·β)` for multiplicative covariates (the intercept absorbs `log r`).
//!
//! Parameter vectors are plain `&[f64]` slices ordered by [`ParamLayout`].

use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::growth::{self, RichardsParams};

/// Count distribution of the daily series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Poisson,
    NegBin,
}

/// A count family with its dispersion, when it has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Poisson,
    /// Negative Binomial with variance `μ + μ²/ν`.
    NegBin { nu: f64 },
}

impl Family {
    pub fn negbin(nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidParameter(format!("dispersion must be finite and > 0, got {nu}")));
        }
        Ok(Family::NegBin { nu })
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            Family::Poisson => FamilyKind::Poisson,
            Family::NegBin { .. } => FamilyKind::NegBin,
        }
    }

    pub fn variance(&self, mean: f64) -> f64 {
        match *self {
            Family::Poisson => mean,
            Family::NegBin { nu } => mean + mean * mean / nu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    None,
    /// Free constant rate `α ≥ 0` added to the Richards differences.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariates {
    None,
    /// `exp(x(t)·β)` takes the place of the constant baseline.
    Additive(DesignMatrix),
    /// `exp(x(t)·β)` multiplies the stripped Richards differences.
    Multiplicative(DesignMatrix),
}

/// Named entry of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    Alpha,
    R,
    H,
    P,
    S,
    Beta(usize),
    Nu,
}

impl Param {
    /// Whether the entry is positive-constrained and optimized on the log scale.
    pub fn is_log_scaled(&self) -> bool {
        matches!(self, Param::Alpha | Param::R | Param::H | Param::S | Param::Nu)
    }

    pub fn name(&self) -> String {
        match self {
            Param::Alpha => "alpha".into(),
            Param::R => "r".into(),
            Param::H => "h".into(),
            Param::P => "p".into(),
            Param::S => "s".into(),
            Param::Beta(j) => format!("beta{j}"),
            Param::Nu => "nu".into(),
        }
    }
}

/// Ordered parameter names for a given [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    params: Vec<Param>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn index(&self, p: Param) -> Option<usize> {
        self.params.iter().position(|&q| q == p)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(Param::name).collect()
    }

    /// Assemble a parameter vector by asking `value` for each entry in order.
    pub fn assemble(&self, mut value: impl FnMut(Param) -> f64) -> Vec<f64> {
        self.params.iter().map(|&p| value(p)).collect()
    }
}

/// Family, baseline and covariate configuration; fully determines `μ(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: FamilyKind,
    pub baseline: Baseline,
    pub covariates: Covariates,
}

impl ModelSpec {
    pub fn new(family: FamilyKind) -> Self {
        Self {
            family,
            baseline: Baseline::None,
            covariates: Covariates::None,
        }
    }

    pub fn with_baseline(mut self) -> Self {
        self.baseline = Baseline::Constant;
        self
    }

    pub fn with_additive(mut self, design: DesignMatrix) -> Self {
        self.covariates = Covariates::Additive(design);
        self
    }

    pub fn with_multiplicative(mut self, design: DesignMatrix) -> Self {
        self.covariates = Covariates::Multiplicative(design);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let (Baseline::Constant, Covariates::Additive(_)) = (&self.baseline, &self.covariates) {
            return Err(Error::InvalidParameter(
                "additive covariates replace the constant baseline; use one or the other".into(),
            ));
        }
        Ok(())
    }

    pub fn design(&self) -> Option<&DesignMatrix> {
        match &self.covariates {
            Covariates::None => None,
            Covariates::Additive(x) | Covariates::Multiplicative(x) => Some(x),
        }
    }

    /// Rows available in the design, if any covariates are present.
    pub fn design_rows(&self) -> Option<usize> {
        self.design().map(DesignMatrix::nrows)
    }

    pub fn layout(&self) -> ParamLayout {
        let mut params = Vec::new();
        if self.baseline == Baseline::Constant {
            params.push(Param::Alpha);
        }
        if !matches!(self.covariates, Covariates::Multiplicative(_)) {
            params.push(Param::R);
        }
        params.extend([Param::H, Param::P, Param::S]);
        if let Some(x) = self.design() {
            params.extend((0..x.ncols()).map(Param::Beta));
        }
        if self.family == FamilyKind::NegBin {
            params.push(Param::Nu);
        }
        ParamLayout { params }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    /// Same model with the design extended to cover `len` days, for forecasting.
    pub fn extended(&self, len: usize) -> Result<Self> {
        let mut out = self.clone();
        out.covariates = match &self.covariates {
            Covariates::None => Covariates::None,
            Covariates::Additive(x) => Covariates::Additive(x.extended(len)?),
            Covariates::Multiplicative(x) => Covariates::Multiplicative(x.extended(len)?),
        };
        Ok(out)
    }

    /// Family instance carrying the dispersion found in `theta`.
    pub fn family_of(&self, theta: &[f64]) -> Result<Family> {
        match self.family {
            FamilyKind::Poisson => Ok(Family::Poisson),
            FamilyKind::NegBin => {
                let idx = self.layout().index(Param::Nu).expect("negbin layout has nu");
                Family::negbin(theta[idx])
            }
        }
    }

    /// Richards parameters implied by `theta` (`b = 0`). For multiplicative
    /// covariates `r` is read from the intercept as `exp(β0)`.
    pub fn richards_params(&self, theta: &[f64]) -> Result<RichardsParams> {
        let layout = self.layout();
        self.check_theta(&layout, theta)?;
        let get = |p| theta[layout.index(p).expect("param present")];
        let r = match layout.index(Param::R) {
            Some(i) => theta[i],
            None => get(Param::Beta(0)).exp(),
        };
        RichardsParams::daily(r, get(Param::H), get(Param::P), get(Param::S))
    }

    pub(crate) fn check_theta(&self, layout: &ParamLayout, theta: &[f64]) -> Result<()> {
        if theta.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, layout expects {}",
                theta.len(),
                layout.len()
            )));
        }
        for (p, &v) in layout.params().iter().zip(theta) {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{} is not finite", p.name())));
            }
            let ok = match p {
                Param::Alpha => v >= 0.0,
                _ if p.is_log_scaled() => v > 0.0,
                _ => true,
            };
            if !ok {
                return Err(Error::InvalidParameter(format!("{} out of domain: {v}", p.name())));
            }
        }
        Ok(())
    }
}

/// Mean value and derivatives at one day.
#[derive(Debug, Clone)]
pub(crate) struct MeanTerms {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `n × n`, empty when not requested.
    pub hess: Vec<f64>,
}

/// Precomputed indices for fast repeated mean evaluation.
#[derive(Debug, Clone)]
pub(crate) struct MeanEvaluator<'a> {
    spec: &'a ModelSpec,
    n: usize,
    alpha: Option<usize>,
    r: Option<usize>,
    hps: [usize; 3],
    beta0: Option<usize>,
}

impl<'a> MeanEvaluator<'a> {
    pub fn new(spec: &'a ModelSpec) -> Self {
        let layout = spec.layout();
        Self {
            spec,
            n: layout.len(),
            alpha: layout.index(Param::Alpha),
            r: layout.index(Param::R),
            hps: [
                layout.index(Param::H).unwrap(),
                layout.index(Param::P).unwrap(),
                layout.index(Param::S).unwrap(),
            ],
            beta0: layout.index(Param::Beta(0)),
        }
    }

    fn row(&self, t: usize) -> Result<Option<&'a [f64]>> {
        match self.spec.design() {
            None => Ok(None),
            Some(x) => {
                if t == 0 || t > x.nrows() {
                    Err(Error::Dimension(format!(
                        "design has {} rows, day {t} requested",
                        x.nrows()
                    )))
                } else {
                    Ok(Some(x.row(t - 1)))
                }
            }
        }
    }

    pub fn value(&self, t: usize, theta: &[f64]) -> Result<f64> {
        let row = self.row(t)?;
        let [ih, ip, is] = self.hps;
        let d = growth::shape_difference(t as f64, theta[ih], theta[ip], theta[is]);
        let lin = |x: &[f64]| -> f64 {
            let b0 = self.beta0.unwrap();
            x.iter().enumerate().map(|(j, xj)| xj * theta[b0 + j]).sum::<f64>().exp()
        };
        let (base, scale) = match &self.spec.covariates {
            Covariates::None => (self.alpha.map_or(0.0, |i| theta[i]), theta[self.r.unwrap()]),
            Covariates::Additive(_) => (lin(row.unwrap()), theta[self.r.unwrap()]),
            Covariates::Multiplicative(_) => (self.alpha.map_or(0.0, |i| theta[i]), lin(row.unwrap())),
        };
        Ok(base + scale * d)
    }

    pub fn terms(&self, t: usize, theta: &[f64], with_hessian: bool) -> Result<MeanTerms> {
        let n = self.n;
        let row = self.row(t)?;
        let [ih, ip, is] = self.hps;
        let dt = growth::difference_terms(t as f64, theta[ih], theta[ip], theta[is]);
        let mut grad = vec![0.0; n];
        let mut hess = if with_hessian { vec![0.0; n * n] } else { Vec::new() };
        let lin = |x: &[f64]| -> f64 {
            let b0 = self.beta0.unwrap();
            x.iter().enumerate().map(|(j, xj)| xj * theta[b0 + j]).sum::<f64>().exp()
        };

        // baseline contribution
        let base = match &self.spec.covariates {
            Covariates::Additive(_) => {
                let x = row.unwrap();
                let e = lin(x);
                let b0 = self.beta0.unwrap();
                for (j, xj) in x.iter().enumerate() {
                    grad[b0 + j] += xj * e;
                    if with_hessian {
                        for (k, xk) in x.iter().enumerate() {
                            hess[(b0 + j) * n + b0 + k] += xj * xk * e;
                        }
                    }
                }
                e
            }
            _ => match self.alpha {
                Some(i) => {
                    grad[i] += 1.0;
                    theta[i]
                }
                None => 0.0,
            },
        };

        // scale factor S and its gradient entries (index, dS)
        let (scale, scale_grad): (f64, Vec<(usize, f64)>) = match &self.spec.covariates {
            Covariates::Multiplicative(_) => {
                let x = row.unwrap();
                let e = lin(x);
                let b0 = self.beta0.unwrap();
                let sg = x.iter().enumerate().map(|(j, xj)| (b0 + j, xj * e)).collect();
                if with_hessian {
                    for (j, xj) in x.iter().enumerate() {
                        for (k, xk) in x.iter().enumerate() {
                            hess[(b0 + j) * n + b0 + k] += xj * xk * e * dt.value;
                        }
                    }
                }
                (e, sg)
            }
            _ => {
                let i = self.r.unwrap();
                (theta[i], vec![(i, 1.0)])
            }
        };

        for &(i, ds) in &scale_grad {
            grad[i] += ds * dt.value;
        }
        let shape_idx = [ih, ip, is];
        for (a, &ia) in shape_idx.iter().enumerate() {
            grad[ia] += scale * dt.grad[a];
        }
        if with_hessian {
            for &(i, ds) in &scale_grad {
                for (a, &ia) in shape_idx.iter().enumerate() {
                    let v = ds * dt.grad[a];
                    hess[i * n + ia] += v;
                    hess[ia * n + i] += v;
                }
            }
            for (a, &ia) in shape_idx.iter().enumerate() {
                for (b, &ib) in shape_idx.iter().enumerate() {
                    hess[ia * n + ib] += scale * dt.hess[a][b];
                }
            }
        }

        Ok(MeanTerms {
            value: base + scale * dt.value,
            grad,
            hess,
        })
    }
}

/// Expected daily count `μ(t)` for day `t ≥ 1`.
pub fn mean_daily(t: usize, spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    spec.validate()?;
    spec.check_theta(&spec.layout(), theta)?;
    if t == 0 {
        return Err(Error::Dimension("daily means start at t = 1".into()));
    }
    MeanEvaluator::new(spec).value(t, theta)
}

/// Gradient of `μ(t)` over the full parameter vector (zero in `ν`).
pub fn mean_gradient(t: usize, spec: &ModelSpec, theta: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.check_theta(&spec.layout(), theta)?;
    if t == 0 {
        return Err(Error::Dimension("daily means start at t = 1".into()));
    }
    Ok(MeanEvaluator::new(spec).terms(t, theta, false)?.grad)
}

/// Expected daily counts for `t = 1..=len`, with a cumulative view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub values: Vec<f64>,
    /// `start + Σ_{τ ≤ t} values[τ]`.
    pub cumulative: Vec<f64>,
}

impl MeanTrajectory {
    pub fn from_daily(values: Vec<f64>, start: f64) -> Self {
        let cumulative = values
            .iter()
            .scan(start, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        Self { values, cumulative }
    }
}

/// Daily means over `len` days. The spec's design must cover `len` rows.
pub fn mean_trajectory(spec: &ModelSpec, theta: &[f64], len: usize, start: f64) -> Result<MeanTrajectory> {
    spec.validate()?;
    spec.check_theta(&spec.layout(), theta)?;
    let ev = MeanEvaluator::new(spec);
    let values = (1..=len).map(|t| ev.value(t, theta)).collect::<Result<Vec<_>>>()?;
    Ok(MeanTrajectory::from_daily(values, start))
}

/// Parameter vector on the optimizer's scale: log for positive entries,
/// identity for `p` and `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl UnconstrainedVector {
    pub fn log_scaled(&self) -> Vec<bool> {
        self.layout.params().iter().map(Param::is_log_scaled).collect()
    }
}

pub fn to_unconstrained(theta: &[f64], spec: &ModelSpec) -> Result<UnconstrainedVector> {
    let layout = spec.layout();
    if theta.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "parameter vector has {} entries, layout expects {}",
            theta.len(),
            layout.len()
        )));
    }
    let values = layout
        .params()
        .iter()
        .zip(theta)
        .map(|(p, &q)| {
            if p.is_log_scaled() {
                if q > 0.0 && q.is_finite() {
                    Ok(q.ln())
                } else {
                    Err(Error::Domain(format!("{} must be > 0 to log-transform, got {q}", p.name())))
                }
            } else if q.is_finite() {
                Ok(q)
            } else {
                Err(Error::Domain(format!("{} is not finite", p.name())))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UnconstrainedVector { values, layout })
}

pub fn from_unconstrained(v: &[f64], spec: &ModelSpec) -> Result<Vec<f64>> {
    let layout = spec.layout();
    if v.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "unconstrained vector has {} entries, layout expects {}",
            v.len(),
            layout.len()
        )));
    }
    Ok(layout
        .params()
        .iter()
        .zip(v)
        .map(|(p, &x)| if p.is_log_scaled() { x.exp() } else { x })
        .collect())
}

/// Pull a constrained-scale gradient back to the log scale: entries for
/// log-scaled `q` are multiplied by `q`.
pub fn pull_back_gradient(grad: &[f64], theta: &[f64], layout: &ParamLayout) -> Vec<f64> {
    layout
        .params()
        .iter()
        .zip(grad.iter().zip(theta))
        .map(|(p, (&g, &q))| if p.is_log_scaled() { g * q } else { g })
        .collect()
}

/// Pull a constrained-scale Hessian (row-major) back to the log scale.
///
/// Mixed entries pick up the product of both Jacobian factors; diagonal
/// entries of log-scaled `q` become `q²·∂²ℓ/∂q² + q·∂ℓ/∂q`.
pub fn pull_back_hessian(hess: &[f64], grad: &[f64], theta: &[f64], layout: &ParamLayout) -> Vec<f64> {
    let n = layout.len();
    let jac: Vec<f64> = layout
        .params()
        .iter()
        .zip(theta)
        .map(|(p, &q)| if p.is_log_scaled() { q } else { 1.0 })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = hess[i * n + j] * jac[i] * jac[j];
        }
        if layout.params()[i].is_log_scaled() {
            out[i * n + i] += grad[i] * theta[i];
        }
    }
    out
}
