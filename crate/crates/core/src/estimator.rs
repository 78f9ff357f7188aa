//! Maximum-likelihood fitting.
//!
//! Starts are drawn by Latin-hypercube sampling inside per-parameter boxes on
//! the optimizer's scale, optionally refined by a small genetic search, and the
//! best tenth are polished by damped Newton iterations using the analytic
//! Hessian. The covariance of the estimate is the inverse observed
//! information on the log/identity scale.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalSampler};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::{self, Scale};
use crate::model::{from_unconstrained, to_unconstrained, Covariates, ModelSpec, Param};
use crate::series::CountSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Mutation standard deviation as a fraction of each box width.
    pub mutation_scale: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 40,
            mutation_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Convergence when `‖∇ℓ‖∞ ≤ grad_tol · max(1, |ℓ|)` on the optimizer scale.
    pub grad_tol: f64,
    /// First ridge is `ridge_start · ‖H‖_F`, doubled until `-H + λI` is
    /// positive definite.
    pub ridge_start: f64,
    pub ridge_max_doublings: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Newton directions are shortened to this ∞-norm on the optimizer scale.
    pub max_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-8,
            ridge_start: 1e-8,
            ridge_max_doublings: 200,
            armijo: 1e-4,
            max_backtracks: 60,
            max_step: 5.0,
        }
    }
}

/// Start-sampling interval for one parameter, on the optimizer scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    pub ga: Option<GaConfig>,
    pub newton: NewtonConfig,
    /// Per-parameter boxes on the optimizer scale, in layout order. Derived
    /// from the data when absent.
    pub bounds: Option<Vec<Interval>>,
    /// Extra constrained-scale starting points polished alongside the best
    /// sampled ones.
    pub warm_starts: Vec<Vec<f64>>,
    pub seed: u64,
    /// Fraction of sampled starts passed to Newton polishing.
    pub polish_fraction: f64,
    /// Two polished optima agree when their log-likelihoods differ by less.
    pub agreement_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 50,
            ga: Some(GaConfig::default()),
            newton: NewtonConfig::default(),
            bounds: None,
            warm_starts: Vec::new(),
            seed: 0,
            polish_fraction: 0.1,
            agreement_tol: 1e-4,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::InvalidParameter("n_starts must be at least 1".into()));
        }
        let nt = &self.newton;
        if !(nt.grad_tol > 0.0 && nt.ridge_start > 0.0 && nt.armijo > 0.0 && nt.armijo < 1.0 && nt.max_step > 0.0) {
            return Err(Error::InvalidParameter("Newton tolerances must be positive".into()));
        }
        if !(self.polish_fraction > 0.0 && self.polish_fraction <= 1.0) {
            return Err(Error::InvalidParameter("polish_fraction must lie in (0, 1]".into()));
        }
        if let Some(b) = &self.bounds {
            for iv in b {
                if !(iv.lower.is_finite() && iv.upper.is_finite() && iv.lower < iv.upper) {
                    return Err(Error::InvalidParameter(format!(
                        "start box [{}, {}] must be finite with lower < upper",
                        iv.lower, iv.upper
                    )));
                }
            }
        }
        if let Some(ga) = &self.ga {
            if ga.population < 2 || !(ga.mutation_scale > 0.0) {
                return Err(Error::InvalidParameter("GA needs population ≥ 2 and positive mutation".into()));
            }
        }
        Ok(())
    }
}

/// Default start boxes on the optimizer scale.
pub fn default_bounds(y: &CountSeries, spec: &ModelSpec) -> Vec<Interval> {
    let t = y.len() as f64;
    let total = (y.values.iter().sum::<u64>() as f64).max(1.0);
    let max_daily = (*y.values.iter().max().unwrap_or(&1) as f64).max(1.0);
    let log_r = Interval {
        lower: (total / 10.0).ln(),
        upper: (total * 10.0).ln(),
    };
    let log_alpha = Interval {
        lower: 1e-2f64.ln(),
        upper: max_daily.max(0.02).ln(),
    };
    spec.layout()
        .params()
        .iter()
        .map(|p| match p {
            Param::Alpha => log_alpha,
            Param::R => log_r,
            Param::H => Interval {
                lower: 1e-3f64.ln(),
                upper: 0.5f64.ln(),
            },
            Param::P => Interval { lower: -t, upper: 2.0 * t },
            Param::S => Interval {
                lower: 1e-2f64.ln(),
                upper: 500f64.ln(),
            },
            Param::Beta(0) => match spec.covariates {
                Covariates::Multiplicative(_) => log_r,
                _ => log_alpha,
            },
            Param::Beta(_) => Interval { lower: -1.0, upper: 1.0 },
            Param::Nu => Interval {
                lower: 0.5f64.ln(),
                upper: 500f64.ln(),
            },
        })
        .collect()
}

/// Whether the inverse information was obtained regularly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InformationStatus {
    Regular,
    /// `-H` was not positive definite; a pseudo-inverse over its positive
    /// eigenvalues was used.
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Information {
    /// `-H⁻¹` on the optimizer scale.
    pub covariance: DMatrix<f64>,
    pub status: InformationStatus,
}

/// `V = -H⁻¹` from a Hessian on the optimizer scale.
pub fn invert_information(hessian: &DMatrix<f64>) -> Result<Information> {
    let n = hessian.nrows();
    let neg = -hessian;
    if let Some(ch) = neg.clone().cholesky() {
        return Ok(Information {
            covariance: ch.inverse(),
            status: InformationStatus::Regular,
        });
    }
    let eig = SymmetricEigen::new(neg);
    let max = eig.eigenvalues.iter().fold(0f64, |m, v| m.max(v.abs()));
    let tol = max * n as f64 * f64::EPSILON;
    if !(max > 0.0) || eig.eigenvalues.iter().all(|&v| v <= tol) {
        return Err(Error::DegenerateInformation(
            "information matrix has no positive eigenvalue".into(),
        ));
    }
    log::warn!("observed information not positive definite; using a pseudo-inverse");
    let inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&v| if v > tol { 1.0 / v } else { 0.0 }));
    let q = &eig.eigenvectors;
    Ok(Information {
        covariance: q * DMatrix::from_diagonal(&inv) * q.transpose(),
        status: InformationStatus::PseudoInverse,
    })
}

/// Observed-information covariance on the optimizer scale at `theta`.
pub fn observed_information(y: &CountSeries, spec: &ModelSpec, theta: &[f64]) -> Result<Information> {
    let ev = likelihood::evaluate(y, spec, theta, Scale::Unconstrained)?;
    invert_information(&ev.hessian)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    /// Absent when `T ≤ k + 1`.
    pub aicc: Option<f64>,
    pub bic: f64,
}

pub fn information_criteria(loglik: f64, k: usize, n_obs: usize) -> InformationCriteria {
    let kf = k as f64;
    let aic = 2.0 * kf - 2.0 * loglik;
    let aicc = (n_obs > k + 1).then(|| aic + 2.0 * kf * (kf + 1.0) / (n_obs as f64 - kf - 1.0));
    let bic = if n_obs == 0 { f64::NAN } else { kf * (n_obs as f64).ln() - 2.0 * loglik };
    InformationCriteria { aic, aicc, bic }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// `‖∇ℓ‖∞` on the optimizer scale at the estimate.
    pub gradient_norm: f64,
    pub hessian_negative_definite: bool,
    pub iterations: usize,
    pub starts_sampled: usize,
    pub starts_polished: usize,
    pub starts_converged: usize,
    /// Converged polished optima within `agreement_tol` of the best.
    pub starts_agreeing: usize,
    pub information: Option<InformationStatus>,
}

/// How intervals are formed for positive-constrained parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    /// Symmetric on the log scale, mapped back through `exp`.
    LogScale,
    /// Symmetric on the reported scale with delta-method standard errors,
    /// truncated at the domain boundary.
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInterval {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub unconstrained: Vec<f64>,
    pub loglik: f64,
    /// Optimizer-scale covariance; absent when the information is degenerate.
    pub covariance: Option<DMatrix<f64>>,
    /// Delta-method covariance on the reported scale.
    pub covariance_constrained: Option<DMatrix<f64>>,
    pub intervals: Vec<ParamInterval>,
    pub criteria: InformationCriteria,
    pub n_params: usize,
    pub n_obs: usize,
    pub convergence: ConvergenceReport,
    /// Log-likelihoods of every polished optimum, best first.
    pub polished_logliks: Vec<f64>,
    /// Fingerprint of the fitted counts, used to refuse cross-data comparisons.
    pub data_fingerprint: u64,
}

impl FitResult {
    pub fn get(&self, p: Param) -> Option<f64> {
        self.spec.layout().index(p).map(|i| self.theta[i])
    }

    pub fn interval(&self, name: &str) -> Option<&ParamInterval> {
        self.intervals.iter().find(|iv| iv.name == name)
    }

    /// Correlation matrix implied by the optimizer-scale covariance.
    pub fn correlation(&self) -> Option<DMatrix<f64>> {
        let v = self.covariance.as_ref()?;
        let n = v.nrows();
        Some(DMatrix::from_fn(n, n, |i, j| {
            let d = (v[(i, i)] * v[(j, j)]).sqrt();
            if d > 0.0 {
                v[(i, j)] / d
            } else {
                0.0
            }
        }))
    }
}

fn fingerprint(values: &[u64]) -> u64 {
    // FNV-1a over the little-endian counts
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Wald intervals at `level` from the fit's covariance.
pub fn parameter_intervals(fit: &FitResult, level: f64, method: IntervalMethod) -> Result<Vec<ParamInterval>> {
    intervals_from(&fit.spec, &fit.theta, fit.covariance.as_ref(), level, method)
}

fn intervals_from(
    spec: &ModelSpec,
    theta: &[f64],
    cov: Option<&DMatrix<f64>>,
    level: f64,
    method: IntervalMethod,
) -> Result<Vec<ParamInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let layout = spec.layout();
    Ok(layout
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = theta[i];
            let var = cov.map_or(f64::NAN, |c| c[(i, i)]);
            let reliable = var.is_finite() && var >= 0.0;
            let se_v = if reliable { var.sqrt() } else { f64::NAN };
            let (std_error, lower, upper) = match (p.is_log_scaled(), method) {
                (false, _) => (se_v, q - z * se_v, q + z * se_v),
                (true, IntervalMethod::LogScale) => (q * se_v, q * (-z * se_v).exp(), q * (z * se_v).exp()),
                (true, IntervalMethod::Delta) => {
                    let se = q * se_v;
                    (se, (q - z * se).max(0.0), q + z * se)
                }
            };
            let (lower, upper) = if reliable { (lower, upper) } else { (f64::NAN, f64::NAN) };
            // an estimate drifting to a boundary of the curve family overflows here
            let reliable = reliable && lower.is_finite() && upper.is_finite();
            ParamInterval {
                name: p.name(),
                estimate: q,
                std_error,
                lower,
                upper,
                reliable,
            }
        })
        .collect())
}

struct Polished {
    v: Vec<f64>,
    loglik: f64,
    gradient_norm: f64,
    converged: bool,
    iterations: usize,
}

fn objective(values: &[u64], spec: &ModelSpec, v: &[f64]) -> f64 {
    match from_unconstrained(v, spec).and_then(|th| likelihood::loglik_values(values, spec, &th)) {
        Ok(l) if l.is_finite() => l,
        _ => f64::NEG_INFINITY,
    }
}

/// Damped Newton ascent from `v0` on the optimizer scale.
fn newton(values: &[u64], spec: &ModelSpec, v0: Vec<f64>, cfg: &NewtonConfig) -> Option<Polished> {
    let n = v0.len();
    let mut v = v0;
    let mut iterations = 0;
    loop {
        let theta = from_unconstrained(&v, spec).ok()?;
        let ev = likelihood::evaluate_values(values, spec, &theta, Scale::Unconstrained).ok()?;
        if !ev.loglik.is_finite() || ev.gradient.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let gnorm = ev.gradient.iter().fold(0f64, |m, g| m.max(g.abs()));
        let target = cfg.grad_tol * ev.loglik.abs().max(1.0);
        macro_rules! done {
            ($converged:expr) => {
                return Some(Polished {
                    v,
                    loglik: ev.loglik,
                    gradient_norm: gnorm,
                    converged: $converged,
                    iterations,
                })
            };
        }
        if gnorm <= target {
            done!(true);
        }
        if iterations >= cfg.max_iter {
            done!(false);
        }
        iterations += 1;

        let neg = -&ev.hessian;
        let g = DVector::from_vec(ev.gradient.clone());
        let mut chol = neg.clone().cholesky();
        if chol.is_none() {
            let norm = ev.hessian.norm().max(f64::MIN_POSITIVE);
            let mut ridge = cfg.ridge_start * norm;
            for _ in 0..cfg.ridge_max_doublings {
                chol = (&neg + DMatrix::identity(n, n) * ridge).cholesky();
                if chol.is_some() {
                    break;
                }
                ridge *= 2.0;
            }
        }
        let mut d = match chol {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let dmax = d.amax();
        if dmax > cfg.max_step {
            d *= cfg.max_step / dmax;
        }
        let slope = g.dot(&d);
        if !(slope > 0.0) {
            done!(gnorm <= 1e2 * target);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            let cand: Vec<f64> = v.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            let l = objective(values, spec, &cand);
            if l > ev.loglik && l >= ev.loglik + cfg.armijo * step * slope {
                v = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable ascent left: accept if within rounding of the target
            done!(gnorm <= 1e2 * target);
        }
    }
}

fn latin_hypercube(bounds: &[Interval], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let k = bounds.len();
    let mut pts = vec![vec![0.0; k]; n];
    for (j, iv) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            pts[i][j] = iv.lower + (iv.upper - iv.lower) * (s as f64 + u) / n as f64;
        }
    }
    pts
}

fn score_all(values: &[u64], spec: &ModelSpec, pts: &[Vec<f64>]) -> Vec<f64> {
    pts.par_iter().map(|v| objective(values, spec, v)).collect()
}

/// Tournament selection, blend crossover and Gaussian mutation with elitism.
fn genetic_refine(
    values: &[u64],
    spec: &ModelSpec,
    bounds: &[Interval],
    mut pop: Vec<Vec<f64>>,
    mut fit: Vec<f64>,
    ga: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = bounds.len();
    let size = ga.population.max(2);
    // top up or trim to the configured population
    while pop.len() < size {
        let extra = latin_hypercube(bounds, size - pop.len(), rng);
        let f = score_all(values, spec, &extra);
        pop.extend(extra);
        fit.extend(f);
    }
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
    order.truncate(size);
    pop = order.iter().map(|&i| pop[i].clone()).collect();
    fit = order.iter().map(|&i| fit[i]).collect();

    let noise = NormalSampler::new(0.0, 1.0).expect("unit normal");
    for _ in 0..ga.generations {
        let pick = |rng: &mut ChaCha8Rng| {
            let mut best = rng.random_range(0..size);
            for _ in 0..2 {
                let c = rng.random_range(0..size);
                if fit[c] > fit[best] {
                    best = c;
                }
            }
            best
        };
        let mut children = Vec::with_capacity(size);
        for _ in 0..size - 2 {
            let (a, b) = (pick(rng), pick(rng));
            let child: Vec<f64> = (0..k)
                .map(|j| {
                    let u: f64 = rng.random();
                    let w = bounds[j].upper - bounds[j].lower;
                    let x = pop[a][j] + u * (pop[b][j] - pop[a][j]) + ga.mutation_scale * w * noise.sample(rng);
                    x.clamp(bounds[j].lower, bounds[j].upper)
                })
                .collect();
            children.push(child);
        }
        let child_fit = score_all(values, spec, &children);
        // elitism: keep the two best parents
        let mut idx: Vec<usize> = (0..size).collect();
        idx.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
        let mut next: Vec<Vec<f64>> = idx[..2].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = idx[..2].iter().map(|&i| fit[i]).collect();
        next.extend(children);
        next_fit.extend(child_fit);
        pop = next;
        fit = next_fit;
    }
    (pop, fit)
}

/// Fit `spec` to `y` by maximum likelihood.
pub fn fit(y: &CountSeries, spec: &ModelSpec, cfg: &FitConfig) -> Result<FitResult> {
    spec.validate()?;
    cfg.validate()?;
    let layout = spec.layout();
    let k = layout.len();
    let t = y.len();
    if t < k + 3 {
        return Err(Error::InsufficientData {
            required: k + 3,
            available: t,
        });
    }
    if y.values.iter().all(|&v| v == 0) {
        return Err(Error::InvalidData("all counts are zero".into()));
    }
    if let Some(rows) = spec.design_rows() {
        if rows < t {
            return Err(Error::Dimension(format!("design has {rows} rows for {t} observations")));
        }
    }
    let bounds = match &cfg.bounds {
        Some(b) if b.len() == k => b.clone(),
        Some(b) => {
            return Err(Error::Dimension(format!("{} start boxes for {k} parameters", b.len())));
        }
        None => default_bounds(y, spec),
    };
    let values = &y.values;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pts = latin_hypercube(&bounds, cfg.n_starts, &mut rng);
    let mut scores = score_all(values, spec, &pts);
    if let Some(ga) = &cfg.ga {
        let (p, s) = genetic_refine(values, spec, &bounds, pts, scores, ga, &mut rng);
        pts = p;
        scores = s;
    }
    let n_polish = ((cfg.n_starts as f64 * cfg.polish_fraction).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..pts.len()).filter(|&i| scores[i].is_finite()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for w in &cfg.warm_starts {
        match to_unconstrained(w, spec) {
            Ok(v) => starts.push(v.values),
            Err(e) => log::warn!("skipping invalid warm start: {e}"),
        }
    }
    for &i in &order {
        if starts.len() >= n_polish + cfg.warm_starts.len() {
            break;
        }
        // skip near-duplicates produced by elitism
        if starts.iter().any(|s| s.iter().zip(&pts[i]).all(|(a, b)| (a - b).abs() < 1e-12)) {
            continue;
        }
        starts.push(pts[i].clone());
    }
    if starts.is_empty() {
        return Err(Error::NonConvergence {
            message: "no starting point has a finite log-likelihood".into(),
            best_effort: Vec::new(),
        });
    }

    let polished: Vec<Option<Polished>> = starts
        .par_iter()
        .map(|v0| newton(values, spec, v0.clone(), &cfg.newton))
        .collect();
    let mut runs: Vec<Polished> = polished.into_iter().flatten().collect();
    if runs.is_empty() {
        return Err(Error::NonConvergence {
            message: "every Newton polish failed".into(),
            best_effort: from_unconstrained(&starts[0], spec)?,
        });
    }
    // converged optima first, then by log-likelihood; ties keep start order
    runs.sort_by(|a, b| b.converged.cmp(&a.converged).then(b.loglik.total_cmp(&a.loglik)));
    let best_converged = runs.iter().position(|r| r.converged);
    let best = match best_converged {
        Some(i) => &runs[i],
        None => {
            let top = runs.iter().max_by(|a, b| a.loglik.total_cmp(&b.loglik)).unwrap();
            return Err(Error::NonConvergence {
                message: format!(
                    "no start converged after {} iterations; best gradient norm {:.3e}",
                    cfg.newton.max_iter, top.gradient_norm
                ),
                best_effort: from_unconstrained(&top.v, spec)?,
            });
        }
    };
    let converged_runs: Vec<&Polished> = runs.iter().filter(|r| r.converged).collect();
    let starts_agreeing = converged_runs
        .iter()
        .filter(|r| (r.loglik - best.loglik).abs() < cfg.agreement_tol)
        .count();
    let theta = from_unconstrained(&best.v, spec)?;
    let ev = likelihood::evaluate(y, spec, &theta, Scale::Unconstrained)?;
    let hessian_negative_definite = (-&ev.hessian).cholesky().is_some();
    let info = invert_information(&ev.hessian);
    let (covariance, info_status) = match info {
        Ok(i) => (Some(i.covariance), Some(i.status)),
        Err(e) => {
            log::warn!("{e}");
            (None, None)
        }
    };
    let covariance_constrained = covariance.as_ref().map(|v| {
        let jac: Vec<f64> = layout
            .params()
            .iter()
            .zip(&theta)
            .map(|(p, &q)| if p.is_log_scaled() { q } else { 1.0 })
            .collect();
        DMatrix::from_fn(k, k, |i, j| v[(i, j)] * jac[i] * jac[j])
    });
    let intervals = intervals_from(spec, &theta, covariance.as_ref(), 0.95, IntervalMethod::LogScale)?;
    let mut polished_logliks: Vec<f64> = runs.iter().map(|r| r.loglik).collect();
    polished_logliks.sort_by(|a, b| b.total_cmp(a));
    Ok(FitResult {
        spec: spec.clone(),
        names: layout.names(),
        unconstrained: best.v.clone(),
        loglik: ev.loglik,
        covariance,
        covariance_constrained,
        intervals,
        criteria: information_criteria(ev.loglik, k, t),
        n_params: k,
        n_obs: t,
        convergence: ConvergenceReport {
            converged: true,
            gradient_norm: ev.gradient.iter().fold(0f64, |m, g| m.max(g.abs())),
            hessian_negative_definite,
            iterations: best.iterations,
            starts_sampled: pts.len(),
            starts_polished: starts.len(),
            starts_converged: converged_runs.len(),
            starts_agreeing,
            information: info_status,
        },
        polished_logliks,
        data_fingerprint: fingerprint(values),
        theta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub loglik: f64,
    pub n_params: usize,
    pub criteria: InformationCriteria,
    pub delta_aic: f64,
}

/// Rank fits on the same data by AIC, then BIC, then parameter count.
pub fn compare_models(fits: &[(&str, &FitResult)]) -> Result<Vec<ComparisonRow>> {
    let Some((_, first)) = fits.first() else {
        return Ok(Vec::new());
    };
    for (label, f) in fits {
        if f.n_obs != first.n_obs || f.data_fingerprint != first.data_fingerprint {
            return Err(Error::Comparison(format!("`{label}` was fitted to different data")));
        }
    }
    let mut rows: Vec<ComparisonRow> = fits
        .iter()
        .map(|(label, f)| ComparisonRow {
            label: label.to_string(),
            loglik: f.loglik,
            n_params: f.n_params,
            criteria: f.criteria,
            delta_aic: 0.0,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.criteria
            .aic
            .total_cmp(&b.criteria.aic)
            .then(a.criteria.bic.total_cmp(&b.criteria.bic))
            .then(a.n_params.cmp(&b.n_params))
    });
    let best = rows[0].criteria.aic;
    for r in &mut rows {
        r.delta_aic = r.criteria.aic - best;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_formulas() {
        let c = information_criteria(0.0, 0, 10);
        assert_eq!((c.aic, c.bic), (0.0, 0.0));
        assert_eq!(c.aicc, Some(0.0));
        let c = information_criteria(-100.0, 2, 50);
        assert_eq!(c.aic, 204.0);
        assert!((c.bic - (2.0 * 50f64.ln() + 200.0)).abs() < 1e-12);
        assert!((c.bic - 207.824).abs() < 1e-3);
        assert!(c.aicc.unwrap() > c.aic);
        assert_eq!(information_criteria(-1.0, 3, 4).aicc, None);
    }

    #[test]
    fn gaussian_information_is_exact() {
        // ℓ(v) = -(v - a)² / (2σ²) has H = -1/σ²
        let sigma2 = 0.37;
        let h = DMatrix::from_element(1, 1, -1.0 / sigma2);
        let info = invert_information(&h).unwrap();
        assert!((info.covariance[(0, 0)] - sigma2).abs() < 1e-15);
        assert_eq!(info.status, InformationStatus::Regular);
    }

    #[test]
    fn indefinite_information_uses_pseudo_inverse() {
        let h = DMatrix::from_row_slice(2, 2, &[-4.0, 0.0, 0.0, 1.0]);
        let info = invert_information(&h).unwrap();
        assert_eq!(info.status, InformationStatus::PseudoInverse);
        assert!((info.covariance[(0, 0)] - 0.25).abs() < 1e-15);
        assert!(info.covariance[(1, 1)].abs() < 1e-15);
        assert!(invert_information(&DMatrix::from_element(1, 1, 2.0)).is_err());
    }

    #[test]
    fn zero_variance_interval_is_a_point() {
        let spec = ModelSpec::new(crate::model::FamilyKind::Poisson);
        let theta = [1e4, 0.05, 10.0, 2.0];
        let cov = DMatrix::zeros(4, 4);
        let iv = intervals_from(&spec, &theta, Some(&cov), 0.95, IntervalMethod::LogScale).unwrap();
        for (i, q) in iv.iter().enumerate() {
            assert_eq!((q.lower, q.upper), (theta[i], theta[i]));
        }
    }

    #[test]
    fn delta_intervals_truncate_at_zero() {
        let spec = ModelSpec::new(crate::model::FamilyKind::Poisson);
        let theta = [1e4, 0.05, 10.0, 2.0];
        // sd of log s = 1 gives a delta-method interval reaching below zero
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01, 1.0, 1.0]));
        let iv = intervals_from(&spec, &theta, Some(&cov), 0.95, IntervalMethod::Delta).unwrap();
        assert_eq!(iv[3].lower, 0.0);
        assert!((iv[3].upper - (2.0 + 1.959_963_984_540_054 * 2.0)).abs() < 1e-9);
        let iv = intervals_from(&spec, &theta, Some(&cov), 0.95, IntervalMethod::LogScale).unwrap();
        assert!(iv[3].lower > 0.0);
    }

    #[test]
    fn too_short_series_is_rejected() {
        let spec = ModelSpec::new(crate::model::FamilyKind::NegBin).with_baseline();
        let y = CountSeries::new(chrono::NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(), vec![1, 2, 3, 4], "x").unwrap();
        assert!(matches!(
            fit(&y, &spec, &FitConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
