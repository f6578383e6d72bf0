use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{tier1_eval, Tier2Problem};
use super::optimizer::{minimize, Bounds, OptimDiagnostics, OptimSettings};
use crate::error::{OmmError, Result};
use crate::rng::stream_rng;
use crate::share::{FeatureStats, OmmModel, Tier2Params};
use crate::types::{CountPanel, SignalSet};
use crate::volume::{conditional_intensity_series, MuSplit, Tier1Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterTransform {
    /// Optimise `log μ`, `log α`, `logit θ`.
    Log,
    /// Optimise natural parameters projected onto their bounds.
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub transform: ParameterTransform,
    pub lambda_reg: f64,
    /// Total number of starts; the first is the deterministic initial point.
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            transform: ParameterTransform::Log,
            lambda_reg: 1.0,
            n_restarts: 3,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(OmmError::InvalidParameter("max_iterations must be ≥ 1".into()));
        }
        if !(self.gradient_tolerance.is_finite() && self.gradient_tolerance > 0.0) {
            return Err(OmmError::InvalidParameter("gradient_tolerance must be > 0".into()));
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return Err(OmmError::InvalidParameter("lambda_reg must be ≥ 0".into()));
        }
        if self.n_restarts == 0 {
            return Err(OmmError::InvalidParameter("n_restarts must be ≥ 1".into()));
        }
        Ok(())
    }

    fn settings(&self) -> OptimSettings {
        OptimSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier1Fit {
    pub params: Tier1Params,
    pub loglik: f64,
    pub diagnostics: OptimDiagnostics,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier2Fit {
    pub params: Tier2Params,
    pub stats: FeatureStats,
    /// Penalised tier-2 log-likelihood under `stats`.
    pub loglik: f64,
    pub diagnostics: OptimDiagnostics,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: OmmModel,
    pub loglik1: f64,
    /// Penalised tier-2 log-likelihood.
    pub loglik2: f64,
    pub converged: bool,
    pub tier1: OptimDiagnostics,
    pub tier2: OptimDiagnostics,
    pub warnings: Vec<String>,
    pub options: FitOptions,
    pub samples: usize,
}

/// Mean and median of every entry of one parameter type across groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub fits: Vec<FitResult>,
    pub summary: BTreeMap<String, TypeSummary>,
}

/// Parameters of a model flattened by type, in row-major order.
pub fn parameter_groups(model: &OmmModel) -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("mu", model.params1.mu.to_vec()),
        ("mu_split", model.params2.mu_split.0.iter().copied().collect()),
        ("alpha", model.params1.alpha.iter().copied().collect()),
        ("theta", vec![model.params1.theta]),
        ("gamma", model.params2.gamma.iter().copied().collect()),
        ("beta", model.params2.beta.iter().copied().collect()),
    ]
}

fn sample_shape(samples: &[CountPanel]) -> Result<(usize, usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| OmmError::InvalidParameter("no count panels supplied".into()))?;
    let dims = first.counts().dim();
    if samples.iter().any(|s| s.counts().dim() != dims) {
        return Err(OmmError::DimensionMismatch("count panels in a group differ in shape".into()));
    }
    Ok(dims)
}

/// Pooled empirical opinion shares per platform (P×M); uniform where a platform is silent.
pub fn empirical_shares(samples: &[CountPanel]) -> Result<Array2<f64>> {
    let (p_n, m_n, _) = sample_shape(samples)?;
    let mut totals = Array2::<f64>::zeros((p_n, m_n));
    for s in samples {
        totals += &s.counts().sum_axis(Axis(2)).mapv(|n| n as f64);
    }
    for mut row in totals.outer_iter_mut() {
        let sum = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(1.0 / m_n as f64);
        }
    }
    Ok(totals)
}

// ---------------------------------------------------------------- tier 1

struct Tier1Layout {
    platforms: usize,
    /// Opinions in per-opinion signal mode.
    split_opinions: Option<usize>,
    transform: ParameterTransform,
}

const THETA_MIN: f64 = 1e-6;
const POSITIVE_MIN: f64 = 1e-12;

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tier1Layout {
    fn baseline_len(&self) -> usize {
        self.platforms * self.split_opinions.unwrap_or(1)
    }

    fn len(&self) -> usize {
        self.baseline_len() + self.platforms * self.platforms + 1
    }

    fn pack(&self, params: &Tier1Params) -> Vec<f64> {
        let baseline: Vec<f64> = match &params.exogenous_split {
            Some(s) => s.iter().copied().collect(),
            None => params.mu.to_vec(),
        };
        let mut x: Vec<f64> = baseline.into_iter().chain(params.alpha.iter().copied()).collect();
        match self.transform {
            ParameterTransform::Log => {
                x.iter_mut().for_each(|v| *v = v.max(POSITIVE_MIN).ln());
                x.push(logit(params.theta));
            }
            ParameterTransform::Box => x.push(params.theta),
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> Result<Tier1Params> {
        let p = self.platforms;
        let nb = self.baseline_len();
        let natural = |v: f64| match self.transform {
            ParameterTransform::Log => v.exp(),
            ParameterTransform::Box => v,
        };
        let alpha = Array2::from_shape_fn((p, p), |(a, b)| natural(x[nb + a * p + b]));
        let theta = match self.transform {
            ParameterTransform::Log => sigmoid(x[nb + p * p]).clamp(THETA_MIN, 1.0),
            ParameterTransform::Box => x[nb + p * p],
        };
        match self.split_opinions {
            Some(m) => {
                let split = Array2::from_shape_fn((p, m), |(a, j)| natural(x[a * m + j]));
                Tier1Params::per_opinion(split, alpha, theta)
            }
            None => Tier1Params::new(Array1::from_shape_fn(p, |a| natural(x[a])), alpha, theta),
        }
    }

    /// Gradient of the log-likelihood on the optimisation scale.
    fn chain(&self, params: &Tier1Params, grad: &super::likelihood::Tier1Gradient) -> Vec<f64> {
        let baseline: Vec<(f64, f64)> = match (&params.exogenous_split, &grad.exogenous_split) {
            (Some(s), Some(g)) => s.iter().copied().zip(g.iter().copied()).collect(),
            _ => params.mu.iter().copied().zip(grad.mu.iter().copied()).collect(),
        };
        let mut out: Vec<f64> = baseline
            .into_iter()
            .chain(params.alpha.iter().copied().zip(grad.alpha.iter().copied()))
            .map(|(v, g)| match self.transform {
                ParameterTransform::Log => v * g,
                ParameterTransform::Box => g,
            })
            .collect();
        out.push(match self.transform {
            ParameterTransform::Log => params.theta * (1.0 - params.theta) * grad.theta,
            ParameterTransform::Box => grad.theta,
        });
        out
    }

    fn bounds(&self) -> Option<Bounds> {
        (self.transform == ParameterTransform::Box).then(|| {
            let n = self.len();
            let mut lower = vec![0.0; n];
            let mut upper = vec![f64::INFINITY; n];
            lower[n - 1] = THETA_MIN;
            upper[n - 1] = 1.0;
            Bounds { lower, upper }
        })
    }
}

fn tier1_layout(signals: &SignalSet, platforms: usize, opinions: usize, transform: ParameterTransform) -> Tier1Layout {
    Tier1Layout {
        platforms,
        split_opinions: signals.is_per_opinion().then_some(opinions),
        transform,
    }
}

/// Deterministic tier-1 starting point.
pub fn initial_tier1(signals: &SignalSet, samples: &[CountPanel]) -> Result<Tier1Params> {
    let (p_n, m_n, t_n) = sample_shape(samples)?;
    if signals.bins() < t_n {
        return Err(OmmError::DimensionMismatch("signals shorter than counts".into()));
    }
    let denom = (samples.len() * t_n) as f64;
    let mut per_opinion_means = Array2::<f64>::zeros((p_n, m_n));
    for s in samples {
        per_opinion_means += &s.counts().sum_axis(Axis(2)).mapv(|n| n as f64 / denom);
    }
    let mean_signal = |j: usize| (0..t_n).map(|idx| signals.exogenous_at(j, idx)).sum::<f64>() / t_n as f64;
    let alpha = Array2::from_elem((p_n, p_n), 0.05);
    if signals.is_per_opinion() {
        signals.check_opinions(m_n)?;
        let split = Array2::from_shape_fn((p_n, m_n), |(p, j)| {
            let s = mean_signal(j);
            if s > 0.0 {
                per_opinion_means[[p, j]] / s
            } else {
                0.0
            }
        });
        Tier1Params::per_opinion(split, alpha, 0.5)
    } else {
        let s = mean_signal(0);
        let mu = per_opinion_means.sum_axis(Axis(1)).mapv(|n| if s > 0.0 { n / s } else { 0.0 });
        Tier1Params::new(mu, alpha, 0.5)
    }
}

fn jitter_tier1<R: Rng>(params: &Tier1Params, rng: &mut R) -> Result<Tier1Params> {
    let mut out = params.clone();
    out.alpha.mapv_inplace(|a| a * rng.random_range(-0.7f64..0.7).exp());
    let theta = sigmoid(logit(params.theta) + rng.random_range(-1.0..1.0));
    out.theta = theta.clamp(0.05, 0.95);
    match out.exogenous_split.as_mut() {
        Some(split) => {
            split.mapv_inplace(|v| v * rng.random_range(-0.3f64..0.3).exp());
            out.mu = split.sum_axis(Axis(1));
        }
        None => out.mu.mapv_inplace(|v| v * rng.random_range(-0.3f64..0.3).exp()),
    }
    out.validate()?;
    Ok(out)
}

/// Maximum-likelihood tier-1 fit with jittered restarts.
pub fn fit_tier1(signals: &SignalSet, samples: &[CountPanel], options: &FitOptions) -> Result<Tier1Fit> {
    options.validate()?;
    let (_, _, t_n) = sample_shape(samples)?;
    if t_n < 2 {
        return Err(OmmError::InvalidParameter("tier-1 fitting needs at least two bins".into()));
    }
    let start = initial_tier1(signals, samples)?;
    let mut best: Option<Tier1Fit> = None;
    for restart in 0..options.n_restarts {
        let init = if restart == 0 {
            start.clone()
        } else {
            jitter_tier1(&start, &mut stream_rng(options.seed, restart as u64))?
        };
        let fit = match fit_tier1_from(signals, samples, &init, options) {
            Ok(fit) => fit,
            Err(e) if restart > 0 => {
                log::debug!("tier-1 restart {restart} failed: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("first start always yields a fit");
    if let Some(w) = best.params.warn_if_unstable() {
        best.warnings.push(w);
    }
    Ok(best)
}

/// Tier-1 fit from one starting point.
pub fn fit_tier1_from(
    signals: &SignalSet,
    samples: &[CountPanel],
    start: &Tier1Params,
    options: &FitOptions,
) -> Result<Tier1Fit> {
    options.validate()?;
    let (p_n, m_n, t_n) = sample_shape(samples)?;
    start.check_signals(signals, m_n)?;
    let layout = tier1_layout(signals, p_n, m_n, options.transform);
    let scale = (samples.len() * p_n * t_n) as f64;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = layout.unpack(x)?;
        let (ll, grad) = tier1_eval(&params, signals, samples, true)?;
        let g = layout.chain(&params, &grad.expect("gradient requested"));
        Ok((-ll / scale, g.into_iter().map(|v| -v / scale).collect()))
    };
    let bounds = layout.bounds();
    let result = minimize(objective, layout.pack(start), bounds.as_ref(), options.settings())?;
    let params = layout.unpack(&result.x)?;
    let loglik = tier1_eval(&params, signals, samples, false)?.0;
    let mut warnings = Vec::new();
    if !result.diagnostics.converged {
        let w = format!("tier-1 optimiser did not converge: {}", result.diagnostics.message);
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(Tier1Fit {
        params,
        loglik,
        diagnostics: result.diagnostics,
        warnings,
    })
}

// ---------------------------------------------------------------- tier 2

struct Tier2Layout {
    platforms: usize,
    opinions: usize,
    interventions: usize,
    /// Tier-1 μ̂ when the split is free; `None` freezes the split.
    mu_hat: Option<Array1<f64>>,
    frozen_split: MuSplit,
}

impl Tier2Layout {
    fn n_scores(&self) -> usize {
        if self.mu_hat.is_some() {
            self.platforms * self.opinions
        } else {
            0
        }
    }

    fn n_gamma(&self) -> usize {
        self.platforms * self.opinions * self.interventions
    }

    fn pack(&self, params: &Tier2Params) -> Vec<f64> {
        let mut x = Vec::new();
        if let Some(mu) = &self.mu_hat {
            for ((p, _), v) in params.mu_split.0.indexed_iter() {
                x.push(if mu[p] > 0.0 { (v / mu[p]).max(POSITIVE_MIN).ln() } else { 0.0 });
            }
        }
        x.extend(params.gamma.iter().copied());
        x.extend(params.beta.iter().copied());
        x
    }

    fn unpack(&self, x: &[f64]) -> Result<Tier2Params> {
        let (p_n, m_n, k_n) = (self.platforms, self.opinions, self.interventions);
        let ns = self.n_scores();
        let ng = self.n_gamma();
        let split = match &self.mu_hat {
            Some(mu) => {
                let mut split = Array2::zeros((p_n, m_n));
                for p in 0..p_n {
                    let mut row: Vec<f64> = x[p * m_n..(p + 1) * m_n].to_vec();
                    crate::share::softmax_in_place(&mut row);
                    for (j, w) in row.into_iter().enumerate() {
                        split[[p, j]] = mu[p] * w;
                    }
                }
                MuSplit(split)
            }
            None => self.frozen_split.clone(),
        };
        let gamma = Array3::from_shape_vec((p_n, m_n, k_n), x[ns..ns + ng].to_vec())
            .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
        let beta = Array4::from_shape_vec((p_n, p_n, m_n, m_n), x[ns + ng..].to_vec())
            .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
        Tier2Params::new(gamma, beta, split)
    }

    fn chain(&self, params: &Tier2Params, grad: &super::likelihood::Tier2Gradient) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scores() + grad.gamma.len() + grad.beta.len());
        if self.mu_hat.is_some() {
            let split = &params.mu_split.0;
            for p in 0..self.platforms {
                let total: f64 = split.row(p).sum();
                let mean_grad = if total > 0.0 {
                    (0..self.opinions).map(|j| split[[p, j]] * grad.mu_split[[p, j]]).sum::<f64>() / total
                } else {
                    0.0
                };
                for m in 0..self.opinions {
                    out.push(split[[p, m]] * (grad.mu_split[[p, m]] - mean_grad));
                }
            }
        }
        out.extend(grad.gamma.iter().copied());
        out.extend(grad.beta.iter().copied());
        out
    }
}

/// Standardisation statistics of the tier-2 features pooled over `samples`.
pub fn fit_feature_stats(
    split: &MuSplit,
    params1: &Tier1Params,
    signals: &SignalSet,
    samples: &[CountPanel],
) -> Result<(FeatureStats, Vec<String>)> {
    let (_, _, t_n) = sample_shape(samples)?;
    let lam: Vec<Array3<f64>> = samples
        .iter()
        .map(|s| conditional_intensity_series(split, params1, signals, s))
        .collect::<Result<_>>()?;
    let xbar = signals
        .smoothed_interventions(params1.theta)?
        .slice(ndarray::s![.., ..t_n])
        .to_owned();
    let lam_refs: Vec<&Array3<f64>> = lam.iter().collect();
    let xbar_refs: Vec<&Array2<f64>> = vec![&xbar; samples.len()];
    FeatureStats::fit(&lam_refs, &xbar_refs)
}

/// The tier-2 split implied by tier 1 in per-opinion mode, or proportional to
/// the empirical shares otherwise.
pub fn initial_split(params1: &Tier1Params, samples: &[CountPanel]) -> Result<MuSplit> {
    match &params1.exogenous_split {
        Some(split) => MuSplit::new(split.clone(), &params1.mu),
        None => MuSplit::proportional(&params1.mu, &empirical_shares(samples)?),
    }
}

fn tier2_layout(params1: &Tier1Params, start: &Tier2Params) -> Tier2Layout {
    Tier2Layout {
        platforms: start.platforms(),
        opinions: start.opinions(),
        interventions: start.interventions(),
        mu_hat: params1.exogenous_split.is_none().then(|| params1.mu.clone()),
        frozen_split: start.mu_split.clone(),
    }
}

fn jitter_tier2<R: Rng>(params: &Tier2Params, params1: &Tier1Params, rng: &mut R) -> Result<Tier2Params> {
    let layout = tier2_layout(params1, params);
    let mut x = layout.pack(params);
    let ns = layout.n_scores();
    for (idx, v) in x.iter_mut().enumerate() {
        *v += if idx < ns {
            rng.random_range(-0.3..0.3)
        } else {
            rng.random_range(-0.1..0.1)
        };
    }
    layout.unpack(&x)
}

fn coupling_norm(params: &Tier2Params) -> f64 {
    let g: f64 = params.gamma.iter().map(|v| v * v).sum();
    let b: f64 = params.beta.iter().map(|v| v * v).sum();
    g.sqrt() + b.sqrt()
}

fn better_tier2(candidate: &Tier2Fit, incumbent: &Tier2Fit) -> bool {
    let tol = 1e-9 * incumbent.loglik.abs().max(1.0);
    if (candidate.loglik - incumbent.loglik).abs() <= tol {
        coupling_norm(&candidate.params) < coupling_norm(&incumbent.params)
    } else {
        candidate.loglik > incumbent.loglik
    }
}

/// Tier-2 fit conditioned on `params1`.
///
/// Feature statistics are fitted at the initial split, the share model is
/// optimised under them, and the statistics are refreshed once at the fitted
/// split before a final warm-started pass.
pub fn fit_tier2(
    signals: &SignalSet,
    samples: &[CountPanel],
    params1: &Tier1Params,
    options: &FitOptions,
) -> Result<Tier2Fit> {
    options.validate()?;
    let (p_n, m_n, _) = sample_shape(samples)?;
    if m_n < 2 {
        return Err(OmmError::Degenerate(
            "a single-opinion market has shares identically 1; tier 2 is unidentifiable".into(),
        ));
    }
    if params1.platforms() != p_n {
        return Err(OmmError::DimensionMismatch("tier-1 parameters do not match the counts".into()));
    }
    let split0 = initial_split(params1, samples)?;
    let (stats0, mut warnings) = fit_feature_stats(&split0, params1, signals, samples)?;
    let start = Tier2Params::zero(split0, signals.n_interventions());
    let mut best: Option<Tier2Fit> = None;
    for restart in 0..options.n_restarts {
        let init = if restart == 0 {
            start.clone()
        } else {
            jitter_tier2(&start, params1, &mut stream_rng(options.seed ^ 0x7432_0000, restart as u64))?
        };
        let fit = match fit_tier2_from(signals, samples, params1, &init, &stats0, options) {
            Ok(fit) => fit,
            Err(e) if restart > 0 => {
                log::debug!("tier-2 restart {restart} failed: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| better_tier2(&fit, b)) {
            best = Some(fit);
        }
    }
    let best = best.expect("first start always yields a fit");
    let (stats1, _) = fit_feature_stats(&best.params.mu_split, params1, signals, samples)?;
    let mut refined = if stats1 == best.stats {
        best
    } else {
        fit_tier2_from(signals, samples, params1, &best.params, &stats1, options)?
    };
    warnings.append(&mut refined.warnings);
    refined.warnings = warnings;
    Ok(refined)
}

/// Tier-2 fit from one starting point under frozen feature statistics.
pub fn fit_tier2_from(
    signals: &SignalSet,
    samples: &[CountPanel],
    params1: &Tier1Params,
    start: &Tier2Params,
    stats: &FeatureStats,
    options: &FitOptions,
) -> Result<Tier2Fit> {
    options.validate()?;
    let (_, m_n, t_n) = sample_shape(samples)?;
    if m_n < 2 {
        return Err(OmmError::Degenerate("tier 2 needs at least two opinions".into()));
    }
    if start.interventions() != signals.n_interventions() {
        return Err(OmmError::DimensionMismatch("gamma does not match the number of interventions".into()));
    }
    let problem = Tier2Problem::new(params1, stats, signals, samples, 0..t_n)?;
    let layout = tier2_layout(params1, start);
    let scale = problem.observations() as f64;
    let lambda_reg = options.lambda_reg;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = layout.unpack(x)?;
        let (ll, grad) = problem.eval(&params, lambda_reg, true)?;
        let g = layout.chain(&params, &grad.expect("gradient requested"));
        Ok((-ll / scale, g.into_iter().map(|v| -v / scale).collect()))
    };
    let result = minimize(objective, layout.pack(start), None, options.settings())?;
    let mut params = layout.unpack(&result.x)?;
    if let Some(mu) = &layout.mu_hat {
        params.mu_split = MuSplit::new(params.mu_split.0.clone(), mu)?;
    }
    let loglik = problem.eval(&params, lambda_reg, false)?.0;
    let mut warnings = Vec::new();
    if !result.diagnostics.converged {
        let w = format!("tier-2 optimiser did not converge: {}", result.diagnostics.message);
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(Tier2Fit {
        params,
        stats: stats.clone(),
        loglik,
        diagnostics: result.diagnostics,
        warnings,
    })
}

// ---------------------------------------------------------------- groups

/// Two-tier fit of one group of samples sharing parameters.
pub fn fit_group(signals: &SignalSet, samples: &[CountPanel], options: &FitOptions) -> Result<FitResult> {
    let t1 = fit_tier1(signals, samples, options)?;
    let t2 = fit_tier2(signals, samples, &t1.params, options)?;
    let model = OmmModel::new(t1.params, t2.params, t2.stats)?;
    let mut warnings = t1.warnings;
    warnings.extend(t2.warnings);
    Ok(FitResult {
        model,
        loglik1: t1.loglik,
        loglik2: t2.loglik,
        converged: t1.diagnostics.converged && t2.diagnostics.converged,
        tier1: t1.diagnostics,
        tier2: t2.diagnostics,
        warnings,
        options: options.clone(),
        samples: samples.len(),
    })
}

/// Fits every group independently (in parallel) and summarises the estimates
/// per parameter type. Group `g` uses seed `options.seed + g`.
pub fn joint_fit(signals: &SignalSet, groups: &[Vec<CountPanel>], options: &FitOptions) -> Result<JointFit> {
    options.validate()?;
    if groups.is_empty() {
        return Err(OmmError::InvalidParameter("joint fit needs at least one group".into()));
    }
    let dims = sample_shape(&groups[0])?;
    for g in groups {
        if sample_shape(g)? != dims {
            return Err(OmmError::DimensionMismatch("groups differ in panel dimensions".into()));
        }
    }
    let fits: Vec<FitResult> = groups
        .par_iter()
        .enumerate()
        .map(|(g, samples)| {
            let opts = FitOptions {
                seed: options.seed.wrapping_add(g as u64),
                ..options.clone()
            };
            fit_group(signals, samples, &opts)
        })
        .collect::<Result<_>>()?;
    let summary = summarise(&fits);
    Ok(JointFit { fits, summary })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn summarise(fits: &[FitResult]) -> BTreeMap<String, TypeSummary> {
    let per_fit: Vec<Vec<(&'static str, Vec<f64>)>> = fits.iter().map(|f| parameter_groups(&f.model)).collect();
    let mut out = BTreeMap::new();
    for (t, (name, first)) in per_fit[0].iter().enumerate() {
        let mut mean = Vec::with_capacity(first.len());
        let mut med = Vec::with_capacity(first.len());
        for e in 0..first.len() {
            let mut column: Vec<f64> = per_fit.iter().map(|groups| groups[t].1[e]).collect();
            mean.push(column.iter().sum::<f64>() / column.len() as f64);
            med.push(median(&mut column));
        }
        out.insert(name.to_string(), TypeSummary { mean, median: med });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::likelihood::{grad_tier1, loglik_tier2_joint, Tier1Gradient};
    use ndarray::array;

    fn toy_counts() -> Vec<CountPanel> {
        let mut panel = CountPanel::zeros(2, 2, 12);
        for ((p, i, t), v) in panel.counts_mut().indexed_iter_mut() {
            *v = ((p * 5 + i * 3 + t * 7) % 6) as u64 + 1;
        }
        vec![panel]
    }

    #[test]
    fn tier1_layout_round_trips() {
        let params = Tier1Params::new(array![3.0, 0.5], array![[0.1, 0.2], [0.0, 0.4]], 0.3).unwrap();
        for transform in [ParameterTransform::Log, ParameterTransform::Box] {
            let layout = Tier1Layout {
                platforms: 2,
                split_opinions: None,
                transform,
            };
            let back = layout.unpack(&layout.pack(&params)).unwrap();
            assert!((back.mu[0] - 3.0).abs() < 1e-12 && (back.theta - 0.3).abs() < 1e-12);
            assert!(back.alpha[[1, 0]] < 1e-11);
        }
    }

    #[test]
    fn log_scale_chain_rule() {
        let params = Tier1Params::new(array![3.0], array![[0.2]], 0.4).unwrap();
        let grad = Tier1Gradient {
            mu: array![1.0],
            alpha: array![[2.0]],
            theta: 3.0,
            exogenous_split: None,
        };
        let layout = Tier1Layout {
            platforms: 1,
            split_opinions: None,
            transform: ParameterTransform::Log,
        };
        let g = layout.chain(&params, &grad);
        assert!((g[0] - 3.0).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15 && (g[2] - 0.4 * 0.6 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn initial_point_matches_definition() {
        let samples = toy_counts();
        let signals = SignalSet::exogenous_only(vec![2.0; 12]).unwrap();
        let init = initial_tier1(&signals, &samples).unwrap();
        let totals = samples[0].platform_totals();
        for p in 0..2 {
            let mean = totals.row(p).iter().sum::<u64>() as f64 / 12.0;
            assert!((init.mu[p] - mean / 2.0).abs() < 1e-12);
        }
        assert_eq!(init.theta, 0.5);
        assert!(init.alpha.iter().all(|&a| a == 0.05));
    }

    #[test]
    fn rejects_single_opinion_and_short_series() {
        let signals = SignalSet::exogenous_only(vec![1.0; 10]).unwrap();
        let one = vec![CountPanel::new(Array3::from_elem((1, 1, 10), 3)).unwrap()];
        let params1 = Tier1Params::new(array![3.0], array![[0.1]], 0.5).unwrap();
        assert!(matches!(
            fit_tier2(&signals, &one, &params1, &FitOptions::default()),
            Err(OmmError::Degenerate(_))
        ));
        let short = vec![CountPanel::new(Array3::from_elem((1, 2, 1), 3)).unwrap()];
        assert!(fit_tier1(&signals, &short, &FitOptions::default()).is_err());
    }

    #[test]
    fn split_rows_keep_tier1_totals() {
        let samples = toy_counts();
        let signals = SignalSet::exogenous_only(vec![1.0; 12]).unwrap();
        let options = FitOptions {
            n_restarts: 1,
            ..FitOptions::default()
        };
        let fit = fit_group(&signals, &samples, &options).unwrap();
        let totals = fit.model.params2.mu_split.totals();
        for p in 0..2 {
            assert!((totals[p] - fit.model.params1.mu[p]).abs() < 1e-8);
        }
        let ll2 = loglik_tier2_joint(
            &fit.model.params2,
            &fit.model.params1,
            &fit.model.stats,
            &signals,
            &samples,
            options.lambda_reg,
        )
        .unwrap();
        assert!((ll2 - fit.loglik2).abs() < 1e-8);
        let g = grad_tier1(&fit.model.params1, &signals, &samples[0]).unwrap();
        assert!(g.theta.is_finite());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
