//! Tier 2: attraction-based allocation of platform attention across opinions.
//!
//! The tendency of opinion `i` on platform `p` is
//!
//! ```text
//! T^p_i(t) = Σ_k γ^p_{ik}·x̃_k(t) + Σ_q Σ_j β^{pq}_{ij}·z̃_{qj}(t)
//! ```
//!
//! where `x̃_k` is the z-scored smoothed intervention `X̄_k` and `z̃_{qj}` the
//! z-scored `log(1 + λ^q(t|j))`. Shares are the normalised exponential of the
//! tendencies, evaluated after subtracting the largest tendency.

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::types::{CountPanel, SignalSet};
use crate::volume::{conditional_intensity_series, platform_intensity_series, MuSplit, Tier1Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier2Params {
    /// `γ[p, i, k]`, P×M×K.
    pub gamma: Array3<f64>,
    /// `β[p, q, i, j]`: effect of opinion `j` on platform `q` on opinion `i` on platform `p`.
    pub beta: Array4<f64>,
    pub mu_split: MuSplit,
}

impl Tier2Params {
    pub fn new(gamma: Array3<f64>, beta: Array4<f64>, mu_split: MuSplit) -> Result<Self> {
        let params = Self { gamma, beta, mu_split };
        params.validate()?;
        Ok(params)
    }

    /// No interventions, no coupling: shares are uniform.
    pub fn zero(mu_split: MuSplit, interventions: usize) -> Self {
        let (p, m) = mu_split.0.dim();
        Self {
            gamma: Array3::zeros((p, m, interventions)),
            beta: Array4::zeros((p, p, m, m)),
            mu_split,
        }
    }

    pub fn platforms(&self) -> usize {
        self.mu_split.0.nrows()
    }

    pub fn opinions(&self) -> usize {
        self.mu_split.0.ncols()
    }

    pub fn interventions(&self) -> usize {
        self.gamma.dim().2
    }

    pub fn validate(&self) -> Result<()> {
        let (p, m) = self.mu_split.0.dim();
        if self.gamma.dim().0 != p || self.gamma.dim().1 != m {
            return Err(OmmError::DimensionMismatch(format!("gamma is {:?}, expected {p}×{m}×K", self.gamma.dim())));
        }
        if self.beta.dim() != (p, p, m, m) {
            return Err(OmmError::DimensionMismatch(format!(
                "beta is {:?}, expected {p}×{p}×{m}×{m}",
                self.beta.dim()
            )));
        }
        if self.gamma.iter().chain(self.beta.iter()).any(|v| !v.is_finite()) {
            return Err(OmmError::NonFinite("gamma/beta entries".into()));
        }
        Ok(())
    }
}

/// Frozen standardisation statistics for the tier-2 features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// Mean of `log1p(λ^q(t|j))`, P×M.
    pub lam_mean: Array2<f64>,
    pub lam_sd: Array2<f64>,
    /// Mean of `X̄_k`, length K.
    pub x_mean: Array1<f64>,
    pub x_sd: Array1<f64>,
}

impl FeatureStats {
    /// Statistics that leave features unchanged (mean 0, sd 1).
    pub fn identity(platforms: usize, opinions: usize, interventions: usize) -> Self {
        Self {
            lam_mean: Array2::zeros((platforms, opinions)),
            lam_sd: Array2::ones((platforms, opinions)),
            x_mean: Array1::zeros(interventions),
            x_sd: Array1::ones(interventions),
        }
    }

    /// Fits statistics over the pooled windows of one or more feature panels.
    /// Zero-variance features get sd 1 and a warning.
    pub fn fit(lam_raw: &[&Array3<f64>], xbar_raw: &[&Array2<f64>]) -> Result<(Self, Vec<String>)> {
        let first = lam_raw
            .first()
            .ok_or_else(|| OmmError::InvalidParameter("no feature panels to standardise".into()))?;
        let (p_n, m_n, _) = first.dim();
        let k_n = xbar_raw.first().map_or(0, |x| x.nrows());
        let mut warnings = Vec::new();
        let mut stats = Self::identity(p_n, m_n, k_n);
        for q in 0..p_n {
            for j in 0..m_n {
                let values = lam_raw.iter().flat_map(|lam| lam.slice(ndarray::s![q, j, ..]).to_vec());
                let (mean, sd) = mean_sd(values.map(f64::ln_1p));
                stats.lam_mean[[q, j]] = mean;
                stats.lam_sd[[q, j]] = if sd > 0.0 {
                    sd
                } else {
                    warnings.push(format!("λ(t|j) feature (platform {q}, opinion {j}) has zero variance; sd set to 1"));
                    1.0
                };
            }
        }
        for k in 0..k_n {
            let values = xbar_raw.iter().flat_map(|x| x.row(k).to_vec());
            let (mean, sd) = mean_sd(values);
            stats.x_mean[k] = mean;
            stats.x_sd[k] = if sd > 0.0 {
                sd
            } else {
                warnings.push(format!("intervention feature {k} has zero variance; sd set to 1"));
                1.0
            };
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((stats, warnings))
    }

    #[inline]
    pub fn standardize_lam(&self, q: usize, j: usize, lam: f64) -> f64 {
        (lam.ln_1p() - self.lam_mean[[q, j]]) / self.lam_sd[[q, j]]
    }

    #[inline]
    pub fn standardize_x(&self, k: usize, xbar: f64) -> f64 {
        (xbar - self.x_mean[k]) / self.x_sd[k]
    }

    pub(crate) fn check(&self, platforms: usize, opinions: usize, interventions: usize) -> Result<()> {
        if self.lam_mean.dim() != (platforms, opinions)
            || self.lam_sd.dim() != (platforms, opinions)
            || self.x_mean.len() != interventions
            || self.x_sd.len() != interventions
        {
            return Err(OmmError::DimensionMismatch("feature statistics do not match model dimensions".into()));
        }
        Ok(())
    }
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Raw and standardised tier-2 features over a window of bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePanel {
    /// `λ^q(t|j)`, P×M×T.
    pub lam_raw: Array3<f64>,
    /// z-scored `log1p(λ^q(t|j))`, P×M×T.
    pub lam_cond: Array3<f64>,
    /// `X̄_k(t)`, K×T.
    pub xbar_raw: Array2<f64>,
    /// z-scored `X̄_k(t)`, K×T.
    pub xbar_std: Array2<f64>,
    pub stats: FeatureStats,
    pub warnings: Vec<String>,
}

impl FeaturePanel {
    pub fn bins(&self) -> usize {
        self.lam_raw.dim().2
    }
}

/// Features over the bins of `history`, with statistics fitted on that window.
pub fn build_features(
    split: &MuSplit,
    params1: &Tier1Params,
    signals: &SignalSet,
    history: &CountPanel,
) -> Result<FeaturePanel> {
    let lam_raw = conditional_intensity_series(split, params1, signals, history)?;
    let xbar_raw = smoothed_window(signals, params1.theta, history.bins())?;
    let (stats, warnings) = FeatureStats::fit(&[&lam_raw], &[&xbar_raw])?;
    Ok(assemble(lam_raw, xbar_raw, stats, warnings))
}

/// Features over the bins of `history`, standardised with frozen statistics.
pub fn build_features_with_stats(
    split: &MuSplit,
    params1: &Tier1Params,
    signals: &SignalSet,
    history: &CountPanel,
    stats: &FeatureStats,
) -> Result<FeaturePanel> {
    stats.check(params1.platforms(), split.opinions(), signals.n_interventions())?;
    let lam_raw = conditional_intensity_series(split, params1, signals, history)?;
    let xbar_raw = smoothed_window(signals, params1.theta, history.bins())?;
    Ok(assemble(lam_raw, xbar_raw, stats.clone(), Vec::new()))
}

fn smoothed_window(signals: &SignalSet, theta: f64, bins: usize) -> Result<Array2<f64>> {
    let full = signals.smoothed_interventions(theta)?;
    Ok(full.slice(ndarray::s![.., ..bins]).to_owned())
}

fn assemble(lam_raw: Array3<f64>, xbar_raw: Array2<f64>, stats: FeatureStats, warnings: Vec<String>) -> FeaturePanel {
    let mut lam_cond = lam_raw.clone();
    for ((q, j, _), v) in lam_cond.indexed_iter_mut() {
        *v = stats.standardize_lam(q, j, *v);
    }
    let mut xbar_std = xbar_raw.clone();
    for ((k, _), v) in xbar_std.indexed_iter_mut() {
        *v = stats.standardize_x(k, *v);
    }
    FeaturePanel {
        lam_raw,
        lam_cond,
        xbar_raw,
        xbar_std,
        stats,
        warnings,
    }
}

/// Writes the M tendencies of platform `p` at 0-based bin `idx` into `out`.
pub fn tendencies_into(params2: &Tier2Params, features: &FeaturePanel, p: usize, idx: usize, out: &mut [f64]) {
    let (p_n, m_n) = params2.mu_split.0.dim();
    let k_n = params2.interventions();
    for (i, slot) in out.iter_mut().enumerate().take(m_n) {
        let mut acc = 0.0;
        for k in 0..k_n {
            acc += params2.gamma[[p, i, k]] * features.xbar_std[[k, idx]];
        }
        for q in 0..p_n {
            for j in 0..m_n {
                acc += params2.beta[[p, q, i, j]] * features.lam_cond[[q, j, idx]];
            }
        }
        *slot = acc;
    }
}

/// `T^p_i(t)` at the 1-based bin `t`.
pub fn tendency(params2: &Tier2Params, features: &FeaturePanel, p: usize, i: usize, t: usize) -> Result<f64> {
    if p >= params2.platforms() || i >= params2.opinions() {
        return Err(OmmError::IndexOutOfRange(format!("platform {p}, opinion {i}")));
    }
    if t == 0 || t > features.bins() {
        return Err(OmmError::TimeOutOfRange { t, bins: features.bins() });
    }
    if features.xbar_std.nrows() != params2.interventions() {
        return Err(OmmError::DimensionMismatch("gamma and features disagree on K".into()));
    }
    let mut out = vec![0.0; params2.opinions()];
    tendencies_into(params2, features, p, t - 1, &mut out);
    Ok(out[i])
}

/// Normalised exponential of `tendencies`, stabilised by the maximum.
pub fn shares_from_tendencies(tendencies: &[f64]) -> Result<Vec<f64>> {
    if tendencies.is_empty() {
        return Err(OmmError::InvalidParameter("no tendencies".into()));
    }
    if tendencies.iter().any(|v| !v.is_finite()) {
        return Err(OmmError::NonFinite(format!("tendencies {tendencies:?}")));
    }
    let mut out = tendencies.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

#[inline]
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// A fitted two-tier model: parameters plus frozen feature statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmmModel {
    pub params1: Tier1Params,
    pub params2: Tier2Params,
    pub stats: FeatureStats,
}

impl OmmModel {
    pub fn new(params1: Tier1Params, params2: Tier2Params, stats: FeatureStats) -> Result<Self> {
        let model = Self { params1, params2, stats };
        model.validate()?;
        Ok(model)
    }

    pub fn platforms(&self) -> usize {
        self.params1.platforms()
    }

    pub fn opinions(&self) -> usize {
        self.params2.opinions()
    }

    pub fn interventions(&self) -> usize {
        self.params2.interventions()
    }

    pub fn validate(&self) -> Result<()> {
        self.params1.validate()?;
        self.params2.validate()?;
        if self.params2.platforms() != self.params1.platforms() {
            return Err(OmmError::DimensionMismatch("tier-1 and tier-2 platform counts differ".into()));
        }
        if self.params1.exogenous_split.is_none() {
            let totals = self.params2.mu_split.totals();
            for (p, (&a, &b)) in totals.iter().zip(self.params1.mu.iter()).enumerate() {
                if (a - b).abs() > 1e-8 * b.abs().max(1.0) {
                    return Err(OmmError::InvalidParameter(format!(
                        "mu split of platform {p} sums to {a}, tier-1 mu is {b}"
                    )));
                }
            }
        }
        self.stats.check(self.platforms(), self.opinions(), self.interventions())
    }

    pub(crate) fn check_inputs(&self, signals: &SignalSet, history: &CountPanel) -> Result<()> {
        self.params1.check_signals(signals, self.opinions())?;
        history.check_shape(self.platforms(), self.opinions())?;
        if signals.n_interventions() != self.interventions() {
            return Err(OmmError::DimensionMismatch(format!(
                "signals carry {} interventions, model expects {}",
                signals.n_interventions(),
                self.interventions()
            )));
        }
        Ok(())
    }

    /// Features over the bins of `history` under the model's frozen statistics.
    pub fn features(&self, signals: &SignalSet, history: &CountPanel) -> Result<FeaturePanel> {
        self.check_inputs(signals, history)?;
        build_features_with_stats(&self.params2.mu_split, &self.params1, signals, history, &self.stats)
    }
}

/// Market shares `s[p][i][t]` (P×M×T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareMatrix(pub Array3<f64>);

impl ShareMatrix {
    pub fn at(&self, p: usize, idx: usize) -> Vec<f64> {
        self.0.slice(ndarray::s![p, .., idx]).to_vec()
    }
}

/// Model shares for every bin of `history` (history before each bin conditions it).
pub fn model_shares(model: &OmmModel, signals: &SignalSet, history: &CountPanel) -> Result<ShareMatrix> {
    let features = model.features(signals, history)?;
    let (p_n, m_n, t_n) = (model.platforms(), model.opinions(), history.bins());
    let mut out = Array3::zeros((p_n, m_n, t_n));
    let mut buf = vec![0.0; m_n];
    for p in 0..p_n {
        for idx in 0..t_n {
            tendencies_into(&model.params2, &features, p, idx, &mut buf);
            let shares = shares_from_tendencies(&buf)?;
            for (i, s) in shares.into_iter().enumerate() {
                out[[p, i, idx]] = s;
            }
        }
    }
    Ok(ShareMatrix(out))
}

/// `λ^p_i(t) = λ^p(t)·s^p_i(t)` at the 1-based bin `t`.
pub fn opinion_intensity(
    model: &OmmModel,
    signals: &SignalSet,
    history: &CountPanel,
    p: usize,
    i: usize,
    t: usize,
) -> Result<f64> {
    if p >= model.platforms() || i >= model.opinions() {
        return Err(OmmError::IndexOutOfRange(format!("platform {p}, opinion {i}")));
    }
    if t == 0 || t > signals.bins() || t > history.bins() + 1 {
        return Err(OmmError::TimeOutOfRange { t, bins: signals.bins().min(history.bins() + 1) });
    }
    let window = extend_to(history, t)?;
    let lambda = platform_intensity_series(&model.params1, signals, &window)?[[p, t - 1]];
    let shares = model_shares(model, signals, &window)?;
    Ok(lambda * shares.0[[p, i, t - 1]])
}

/// History padded (or cut) to exactly `bins` bins; padding never affects bins ≤ `bins`.
fn extend_to(history: &CountPanel, bins: usize) -> Result<CountPanel> {
    if history.bins() >= bins {
        return history.truncated(bins);
    }
    let mut padded = CountPanel::zeros(history.platforms(), history.opinions(), bins);
    padded
        .counts_mut()
        .slice_mut(ndarray::s![.., .., ..history.bins()])
        .assign(history.counts());
    Ok(padded)
}
