//! Poisson log-likelihoods of both tiers and their analytic gradients.
//!
//! Tier 1 scores platform totals against `λ^p(t)`:
//! `L1 = Σ_{p,t} n^p_t·log λ^p(t) - λ^p(t) - log n^p_t!`.
//!
//! Tier 2 scores opinion counts against `λ^p(t)·s^p_i(t)` with tier 1 held
//! fixed, minus a ridge penalty `λ_reg·‖γ‖²`. Because `Σ_i s^p_i = 1`, the
//! derivative of L2 with respect to a tendency is `n^p_{i,t} - n^p_t·s^p_i(t)`.

use std::ops::Range;

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::share::{softmax_in_place, FeatureStats, Tier2Params};
use crate::types::{CountPanel, SignalSet};
use crate::volume::{opinion_excitation, platform_intensity_series, Tier1Params, INTENSITY_FLOOR};

/// `log n!`, exact sums below 256 and a Stirling series above.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n < 256 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64 + 1.0;
    // ln Γ(x) Stirling series
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}

#[inline]
fn poisson_term(n: u64, lambda: f64) -> f64 {
    let lam = lambda.max(INTENSITY_FLOOR);
    n as f64 * lam.ln() - lam - ln_factorial(n)
}

fn check_panels(signals: &SignalSet, samples: &[CountPanel], platforms: usize) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| OmmError::InvalidParameter("no count panels supplied".into()))?;
    let (m, t) = (first.opinions(), first.bins());
    for s in samples {
        if s.platforms() != platforms || s.opinions() != m || s.bins() != t {
            return Err(OmmError::DimensionMismatch(format!(
                "count panel {}×{}×{} does not match {platforms}×{m}×{t}",
                s.platforms(),
                s.opinions(),
                s.bins()
            )));
        }
    }
    if signals.bins() < t {
        return Err(OmmError::DimensionMismatch(format!(
            "signals cover {} bins, counts cover {t}",
            signals.bins()
        )));
    }
    Ok((m, t))
}

fn check_range(range: &Range<usize>, bins: usize) -> Result<()> {
    if range.start >= range.end || range.end > bins {
        return Err(OmmError::InvalidParameter(format!(
            "likelihood window {range:?} is empty or exceeds {bins} bins"
        )));
    }
    Ok(())
}

/// Gradient of L1 on the natural parameter scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier1Gradient {
    /// Zero in per-opinion signal mode, where `exogenous_split` carries the baseline gradient.
    pub mu: Array1<f64>,
    pub alpha: Array2<f64>,
    pub theta: f64,
    pub exogenous_split: Option<Array2<f64>>,
}

/// Gradient of L2 on the natural parameter scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier2Gradient {
    pub mu_split: Array2<f64>,
    pub gamma: Array3<f64>,
    pub beta: Array4<f64>,
}

pub fn loglik_tier1(params: &Tier1Params, signals: &SignalSet, counts: &CountPanel) -> Result<f64> {
    loglik_tier1_joint(params, signals, std::slice::from_ref(counts))
}

/// Sum of per-sample tier-1 log-likelihoods under shared parameters.
pub fn loglik_tier1_joint(params: &Tier1Params, signals: &SignalSet, samples: &[CountPanel]) -> Result<f64> {
    Ok(tier1_eval(params, signals, samples, false)?.0)
}

pub fn grad_tier1(params: &Tier1Params, signals: &SignalSet, counts: &CountPanel) -> Result<Tier1Gradient> {
    grad_tier1_joint(params, signals, std::slice::from_ref(counts))
}

pub fn grad_tier1_joint(params: &Tier1Params, signals: &SignalSet, samples: &[CountPanel]) -> Result<Tier1Gradient> {
    Ok(tier1_eval(params, signals, samples, true)?.1.expect("gradient requested"))
}

pub(crate) fn tier1_eval(
    params: &Tier1Params,
    signals: &SignalSet,
    samples: &[CountPanel],
    want_grad: bool,
) -> Result<(f64, Option<Tier1Gradient>)> {
    params.validate()?;
    let p_n = params.platforms();
    let (m_n, t_n) = check_panels(signals, samples, p_n)?;
    params.check_signals(signals, m_n)?;
    let kernel = params.kernel()?;
    let per_opinion = params.exogenous_split.is_some();

    let mut ll = 0.0;
    let mut g_mu = Array1::zeros(p_n);
    let mut g_alpha = Array2::zeros((p_n, p_n));
    let mut g_theta = 0.0;
    let mut g_split = params.exogenous_split.as_ref().map(|s| Array2::zeros(s.raw_dim()));

    for sample in samples {
        let totals = sample.platform_totals();
        let mut conv = Vec::with_capacity(p_n);
        let mut dconv = Vec::with_capacity(p_n);
        for q in 0..p_n {
            let series: Vec<f64> = totals.row(q).iter().map(|&n| n as f64).collect();
            let (c, d) = kernel.causal_series_with_derivative(&series);
            conv.push(c);
            dconv.push(d);
        }
        for p in 0..p_n {
            for idx in 0..t_n {
                let mut lambda = params.baseline(signals, p, idx);
                for q in 0..p_n {
                    lambda += params.alpha[[p, q]] * conv[q][idx];
                }
                let n = totals[[p, idx]];
                ll += poisson_term(n, lambda);
                if !want_grad {
                    continue;
                }
                let w = if lambda > INTENSITY_FLOOR { n as f64 / lambda - 1.0 } else { -1.0 };
                if let Some(gs) = g_split.as_mut() {
                    for j in 0..m_n {
                        gs[[p, j]] += w * signals.exogenous_at(j, idx);
                    }
                } else {
                    g_mu[p] += w * signals.exogenous_at(0, idx);
                }
                for q in 0..p_n {
                    g_alpha[[p, q]] += w * conv[q][idx];
                    g_theta += w * params.alpha[[p, q]] * dconv[q][idx];
                }
            }
        }
    }
    if !ll.is_finite() {
        return Err(OmmError::NonFinite(format!("tier-1 log-likelihood is {ll}")));
    }
    let grad = want_grad.then(|| Tier1Gradient {
        mu: if per_opinion { Array1::zeros(p_n) } else { g_mu },
        alpha: g_alpha,
        theta: g_theta,
        exogenous_split: g_split,
    });
    Ok((ll, grad))
}

/// Per-sample quantities that stay fixed while tier 2 is optimised.
pub(crate) struct Tier2Sample {
    counts: Array3<u64>,
    totals: Array2<f64>,
    /// Tier-1 `λ^p(t)`, P×T.
    lambda: Array2<f64>,
    /// Endogenous part of `λ^q(t|j)`, P×M×T.
    excitation: Array3<f64>,
    /// Constant `Σ log n!` over the window.
    log_fact: f64,
}

/// Fixed inputs of the tier-2 objective over a window of bins.
pub(crate) struct Tier2Problem {
    samples: Vec<Tier2Sample>,
    /// Standardised `X̄`, K×T.
    xstd: Array2<f64>,
    /// `S_j(t)`, M×T (the shared signal repeated when not per-opinion).
    exo: Array2<f64>,
    stats: FeatureStats,
    range: Range<usize>,
    p_n: usize,
    m_n: usize,
}

impl Tier2Problem {
    pub(crate) fn new(
        params1: &Tier1Params,
        stats: &FeatureStats,
        signals: &SignalSet,
        samples: &[CountPanel],
        range: Range<usize>,
    ) -> Result<Self> {
        params1.validate()?;
        let p_n = params1.platforms();
        let (m_n, t_n) = check_panels(signals, samples, p_n)?;
        params1.check_signals(signals, m_n)?;
        check_range(&range, t_n)?;
        let k_n = signals.n_interventions();
        stats.check(p_n, m_n, k_n)?;
        let xbar = signals.smoothed_interventions(params1.theta)?;
        let mut xstd = Array2::zeros((k_n, t_n));
        for ((k, idx), v) in xstd.indexed_iter_mut() {
            *v = stats.standardize_x(k, xbar[[k, idx]]);
        }
        let exo = Array2::from_shape_fn((m_n, t_n), |(j, idx)| signals.exogenous_at(j, idx));
        let mut prepared = Vec::with_capacity(samples.len());
        for sample in samples {
            let lambda = platform_intensity_series(params1, signals, sample)?;
            let excitation = opinion_excitation(params1, sample)?;
            let counts = sample.counts().clone();
            let totals = sample.platform_totals().mapv(|n| n as f64);
            let mut log_fact = 0.0;
            for p in 0..p_n {
                for i in 0..m_n {
                    for idx in range.clone() {
                        log_fact += ln_factorial(counts[[p, i, idx]]);
                    }
                }
            }
            prepared.push(Tier2Sample {
                counts,
                totals,
                lambda,
                excitation,
                log_fact,
            });
        }
        Ok(Self {
            samples: prepared,
            xstd,
            exo,
            stats: stats.clone(),
            range,
            p_n,
            m_n,
        })
    }

    pub(crate) fn observations(&self) -> usize {
        self.samples.len() * self.p_n * self.range.len()
    }

    pub(crate) fn interventions(&self) -> usize {
        self.xstd.nrows()
    }

    /// Penalised L2 and, when requested, its gradient.
    pub(crate) fn eval(&self, params: &Tier2Params, lambda_reg: f64, want_grad: bool) -> Result<(f64, Option<Tier2Gradient>)> {
        params.validate()?;
        let (p_n, m_n, k_n) = (self.p_n, self.m_n, self.interventions());
        if params.platforms() != p_n || params.opinions() != m_n || params.interventions() != k_n {
            return Err(OmmError::DimensionMismatch("tier-2 parameters do not match the data".into()));
        }
        let split = &params.mu_split.0;
        let mut ll = 0.0;
        let mut g_split = Array2::zeros((p_n, m_n));
        let mut g_gamma = Array3::zeros((p_n, m_n, k_n));
        let mut g_beta = Array4::zeros((p_n, p_n, m_n, m_n));

        let mut z = Array2::<f64>::zeros((p_n, m_n));
        let mut dz = Array2::<f64>::zeros((p_n, m_n));
        let mut weight = Array2::<f64>::zeros((p_n, m_n));
        let mut tend = vec![0.0; m_n];
        let mut resid = vec![0.0; m_n];

        for sample in &self.samples {
            ll -= sample.log_fact;
            for idx in self.range.clone() {
                for q in 0..p_n {
                    for j in 0..m_n {
                        let lam = split[[q, j]] * self.exo[[j, idx]] + sample.excitation[[q, j, idx]];
                        z[[q, j]] = self.stats.standardize_lam(q, j, lam);
                        dz[[q, j]] = self.exo[[j, idx]] / ((1.0 + lam) * self.stats.lam_sd[[q, j]]);
                    }
                }
                weight.fill(0.0);
                for p in 0..p_n {
                    for (i, t_i) in tend.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for k in 0..k_n {
                            acc += params.gamma[[p, i, k]] * self.xstd[[k, idx]];
                        }
                        for q in 0..p_n {
                            for j in 0..m_n {
                                acc += params.beta[[p, q, i, j]] * z[[q, j]];
                            }
                        }
                        *t_i = acc;
                    }
                    if tend.iter().any(|v| !v.is_finite()) {
                        return Err(OmmError::NonFinite(format!("tendencies at platform {p}, bin {}", idx + 1)));
                    }
                    softmax_in_place(&mut tend);
                    let lambda = sample.lambda[[p, idx]];
                    let n_total = sample.totals[[p, idx]];
                    for i in 0..m_n {
                        let n = sample.counts[[p, i, idx]];
                        let rate = (lambda * tend[i]).max(INTENSITY_FLOOR);
                        ll += n as f64 * rate.ln() - lambda * tend[i];
                        resid[i] = n as f64 - n_total * tend[i];
                    }
                    if !want_grad {
                        continue;
                    }
                    for i in 0..m_n {
                        let r = resid[i];
                        if r == 0.0 {
                            continue;
                        }
                        for k in 0..k_n {
                            g_gamma[[p, i, k]] += r * self.xstd[[k, idx]];
                        }
                        for q in 0..p_n {
                            for j in 0..m_n {
                                g_beta[[p, q, i, j]] += r * z[[q, j]];
                                weight[[q, j]] += r * params.beta[[p, q, i, j]];
                            }
                        }
                    }
                }
                if want_grad {
                    for q in 0..p_n {
                        for j in 0..m_n {
                            g_split[[q, j]] += weight[[q, j]] * dz[[q, j]];
                        }
                    }
                }
            }
        }
        let penalty: f64 = params.gamma.iter().map(|g| g * g).sum();
        ll -= lambda_reg * penalty;
        if !ll.is_finite() {
            return Err(OmmError::NonFinite(format!("tier-2 log-likelihood is {ll}")));
        }
        let grad = want_grad.then(|| {
            g_gamma.zip_mut_with(&params.gamma, |g, &gamma| *g -= 2.0 * lambda_reg * gamma);
            Tier2Gradient {
                mu_split: g_split,
                gamma: g_gamma,
                beta: g_beta,
            }
        });
        Ok((ll, grad))
    }
}

pub fn loglik_tier2(
    params2: &Tier2Params,
    params1: &Tier1Params,
    stats: &FeatureStats,
    signals: &SignalSet,
    counts: &CountPanel,
    lambda_reg: f64,
) -> Result<f64> {
    loglik_tier2_joint(params2, params1, stats, signals, std::slice::from_ref(counts), lambda_reg)
}

pub fn loglik_tier2_joint(
    params2: &Tier2Params,
    params1: &Tier1Params,
    stats: &FeatureStats,
    signals: &SignalSet,
    samples: &[CountPanel],
    lambda_reg: f64,
) -> Result<f64> {
    let bins = samples.first().map_or(0, |s| s.bins());
    loglik_tier2_window(params2, params1, stats, signals, samples, lambda_reg, 0..bins)
}

/// Tier-2 log-likelihood restricted to the 0-based bins in `range`; the full
/// panel before each bin still conditions the intensities.
pub fn loglik_tier2_window(
    params2: &Tier2Params,
    params1: &Tier1Params,
    stats: &FeatureStats,
    signals: &SignalSet,
    samples: &[CountPanel],
    lambda_reg: f64,
    range: Range<usize>,
) -> Result<f64> {
    check_lambda_reg(lambda_reg)?;
    let problem = Tier2Problem::new(params1, stats, signals, samples, range)?;
    Ok(problem.eval(params2, lambda_reg, false)?.0)
}

pub fn grad_tier2(
    params2: &Tier2Params,
    params1: &Tier1Params,
    stats: &FeatureStats,
    signals: &SignalSet,
    counts: &CountPanel,
    lambda_reg: f64,
) -> Result<Tier2Gradient> {
    grad_tier2_joint(params2, params1, stats, signals, std::slice::from_ref(counts), lambda_reg)
}

pub fn grad_tier2_joint(
    params2: &Tier2Params,
    params1: &Tier1Params,
    stats: &FeatureStats,
    signals: &SignalSet,
    samples: &[CountPanel],
    lambda_reg: f64,
) -> Result<Tier2Gradient> {
    check_lambda_reg(lambda_reg)?;
    let bins = samples.first().map_or(0, |s| s.bins());
    let problem = Tier2Problem::new(params1, stats, signals, samples, 0..bins)?;
    Ok(problem.eval(params2, lambda_reg, true)?.1.expect("gradient requested"))
}

fn check_lambda_reg(lambda_reg: f64) -> Result<()> {
    if !(lambda_reg.is_finite() && lambda_reg >= 0.0) {
        return Err(OmmError::InvalidParameter(format!("lambda_reg must be ≥ 0, got {lambda_reg}")));
    }
    Ok(())
}
