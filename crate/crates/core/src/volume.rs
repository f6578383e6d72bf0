//! Tier 1: the P-dimensional discrete-time Hawkes process for platform volumes.
//!
//! ```text
//! λ^p(t)   = μ^p·S(t)   + Σ_q Σ_{s<t} α^{pq}·f(t-s)·n^q_s
//! λ^p(t|j) = μ^p_j·S(t) + Σ_q Σ_{s<t} α^{pq}·f(t-s)·n^q_{j,s}
//! ```
//!
//! With per-opinion exogenous signals the baseline becomes `Σ_j μ^p_j·S_j(t)`
//! and the conditional baseline `μ^p_j·S_j(t)`.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::kernel::Kernel;
use crate::types::{CountPanel, SignalSet};

/// Lower clamp on intensities inside log-likelihoods.
pub const INTENSITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier1Params {
    pub mu: Array1<f64>,
    pub alpha: Array2<f64>,
    pub theta: f64,
    /// Per-opinion baseline scalings, present only in per-opinion signal mode.
    #[serde(default)]
    pub exogenous_split: Option<Array2<f64>>,
}

impl Tier1Params {
    pub fn new(mu: Array1<f64>, alpha: Array2<f64>, theta: f64) -> Result<Self> {
        let params = Self {
            mu,
            alpha,
            theta,
            exogenous_split: None,
        };
        params.validate()?;
        Ok(params)
    }

    /// Per-opinion signal mode: `mu` is derived from the row sums of `split`.
    pub fn per_opinion(split: Array2<f64>, alpha: Array2<f64>, theta: f64) -> Result<Self> {
        let mu = split.sum_axis(ndarray::Axis(1));
        let params = Self {
            mu,
            alpha,
            theta,
            exogenous_split: Some(split),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn platforms(&self) -> usize {
        self.mu.len()
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::new(self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.mu.len();
        if p == 0 {
            return Err(OmmError::InvalidParameter("tier-1 parameters need at least one platform".into()));
        }
        if self.alpha.dim() != (p, p) {
            return Err(OmmError::DimensionMismatch(format!(
                "alpha is {:?}, expected {p}×{p}",
                self.alpha.dim()
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OmmError::InvalidParameter("mu entries must be finite and ≥ 0".into()));
        }
        if self.alpha.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OmmError::InvalidParameter("alpha entries must be finite and ≥ 0".into()));
        }
        Kernel::new(self.theta)?;
        if let Some(split) = &self.exogenous_split {
            if split.nrows() != p {
                return Err(OmmError::DimensionMismatch("exogenous split rows must equal P".into()));
            }
            if split.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(OmmError::InvalidParameter("exogenous split entries must be ≥ 0".into()));
            }
            for (row, &total) in split.outer_iter().zip(self.mu.iter()) {
                if (row.sum() - total).abs() > 1e-9 * total.max(1.0) {
                    return Err(OmmError::InvalidParameter("exogenous split rows must sum to mu".into()));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn check_signals(&self, signals: &SignalSet, opinions: usize) -> Result<()> {
        signals.check_opinions(opinions)?;
        match (&self.exogenous_split, signals.is_per_opinion()) {
            (None, true) => Err(OmmError::InvalidParameter(
                "per-opinion signals require tier-1 parameters with an exogenous split".into(),
            )),
            (Some(split), true) if split.ncols() != opinions => Err(OmmError::DimensionMismatch(
                "exogenous split columns must equal M".into(),
            )),
            (Some(_), false) => Err(OmmError::InvalidParameter(
                "tier-1 parameters carry an exogenous split but signals are shared".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Exogenous part of `λ^p` at 0-based bin `idx`.
    #[inline]
    pub fn baseline(&self, signals: &SignalSet, p: usize, idx: usize) -> f64 {
        match &self.exogenous_split {
            Some(split) => split
                .row(p)
                .iter()
                .enumerate()
                .map(|(j, m)| m * signals.exogenous_at(j, idx))
                .sum(),
            None => self.mu[p] * signals.exogenous_at(0, idx),
        }
    }

    /// Spectral radius of `alpha`; values ≥ 1 mean the volume process is supercritical.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.alpha)
    }

    /// Logs a warning when the excitation matrix is not subcritical.
    pub fn warn_if_unstable(&self) -> Option<String> {
        let rho = self.spectral_radius();
        (rho >= 1.0).then(|| {
            let msg = format!("spectral radius of alpha is {rho:.4} ≥ 1; volumes may explode");
            log::warn!("{msg}");
            msg
        })
    }
}

/// The split `μ^p_j` of each platform baseline across opinions (P×M).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSplit(pub Array2<f64>);

impl MuSplit {
    pub fn new(split: Array2<f64>, mu: &Array1<f64>) -> Result<Self> {
        if split.nrows() != mu.len() {
            return Err(OmmError::DimensionMismatch(format!(
                "mu split has {} rows, expected {}",
                split.nrows(),
                mu.len()
            )));
        }
        if split.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OmmError::InvalidParameter("mu split entries must be finite and ≥ 0".into()));
        }
        for (p, row) in split.outer_iter().enumerate() {
            if (row.sum() - mu[p]).abs() > 1e-9 * mu[p].abs().max(1.0) {
                return Err(OmmError::InvalidParameter(format!(
                    "mu split row {p} sums to {}, expected {}",
                    row.sum(),
                    mu[p]
                )));
            }
        }
        Ok(Self(split))
    }

    /// `μ^p_j = μ^p · w^p_j` for row-normalised weights.
    pub fn proportional(mu: &Array1<f64>, weights: &Array2<f64>) -> Result<Self> {
        let mut split = weights.clone();
        for (p, mut row) in split.outer_iter_mut().enumerate() {
            let total: f64 = row.sum();
            if !(total > 0.0) {
                let m = row.len() as f64;
                row.fill(mu[p] / m);
            } else {
                row.mapv_inplace(|w| mu[p] * w / total);
            }
        }
        Self::new(split, mu)
    }

    pub fn opinions(&self) -> usize {
        self.0.ncols()
    }

    pub fn totals(&self) -> Array1<f64> {
        self.0.sum_axis(ndarray::Axis(1))
    }
}

fn check_time(t: usize, history: &CountPanel, signals: &SignalSet) -> Result<usize> {
    if t == 0 || t > signals.bins() {
        return Err(OmmError::TimeOutOfRange { t, bins: signals.bins() });
    }
    if history.bins() + 1 < t {
        return Err(OmmError::DimensionMismatch(format!(
            "history covers {} bins, intensity at t={t} needs {}",
            history.bins(),
            t - 1
        )));
    }
    Ok(t - 1)
}

/// `λ^p(t)` at the 1-based bin `t`; `history` must cover every bin before `t`.
pub fn platform_intensity(
    params: &Tier1Params,
    signals: &SignalSet,
    history: &CountPanel,
    p: usize,
    t: usize,
) -> Result<f64> {
    params.validate()?;
    params.check_signals(signals, history.opinions())?;
    history.check_shape(params.platforms(), history.opinions())?;
    if p >= params.platforms() {
        return Err(OmmError::IndexOutOfRange(format!("platform {p}")));
    }
    let idx = check_time(t, history, signals)?;
    let kernel = params.kernel()?;
    let totals = history.platform_totals();
    let mut lambda = params.baseline(signals, p, idx);
    for q in 0..params.platforms() {
        let series: Vec<f64> = totals.row(q).iter().map(|&n| n as f64).collect();
        lambda += params.alpha[[p, q]] * kernel.convolve_at(&series[..idx], t)?;
    }
    Ok(lambda)
}

/// `λ^p(t|j)`: the intensity opinion `j` would have on its own.
pub fn conditional_opinion_intensity(
    split: &MuSplit,
    params: &Tier1Params,
    signals: &SignalSet,
    history: &CountPanel,
    p: usize,
    j: usize,
    t: usize,
) -> Result<f64> {
    params.validate()?;
    let m = history.opinions();
    params.check_signals(signals, m)?;
    history.check_shape(params.platforms(), split.opinions())?;
    if p >= params.platforms() || j >= m {
        return Err(OmmError::IndexOutOfRange(format!("platform {p}, opinion {j}")));
    }
    let idx = check_time(t, history, signals)?;
    let kernel = params.kernel()?;
    let mut lambda = split.0[[p, j]] * signals.exogenous_at(j, idx);
    for q in 0..params.platforms() {
        let series: Vec<f64> = (0..idx).map(|s| history.get(q, j, s) as f64).collect();
        lambda += params.alpha[[p, q]] * kernel.convolve_at(&series, t)?;
    }
    Ok(lambda)
}

/// Kernel-convolved per-opinion counts `c[q][j][idx] = Σ_{s<idx} f(idx-s)·n^q_{j,s}`.
pub(crate) fn opinion_convolutions(kernel: &Kernel, history: &CountPanel) -> Array3<f64> {
    let (p_n, m_n, t_n) = history.counts().dim();
    let mut out = Array3::zeros((p_n, m_n, t_n));
    for q in 0..p_n {
        for j in 0..m_n {
            let series: Vec<f64> = (0..t_n).map(|s| history.get(q, j, s) as f64).collect();
            for (idx, v) in kernel.causal_series(&series).into_iter().enumerate() {
                out[[q, j, idx]] = v;
            }
        }
    }
    out
}

/// Endogenous part of `λ^p(t|j)` for every bin covered by `history` (P×M×T).
pub(crate) fn opinion_excitation(params: &Tier1Params, history: &CountPanel) -> Result<Array3<f64>> {
    let conv = opinion_convolutions(&params.kernel()?, history);
    let (p_n, m_n, t_n) = conv.dim();
    let mut out = Array3::zeros((p_n, m_n, t_n));
    for p in 0..p_n {
        for q in 0..p_n {
            let a = params.alpha[[p, q]];
            if a == 0.0 {
                continue;
            }
            for j in 0..m_n {
                for idx in 0..t_n {
                    out[[p, j, idx]] += a * conv[[q, j, idx]];
                }
            }
        }
    }
    Ok(out)
}

/// `λ^p(t)` for bins `1..=history.bins()` (P×T).
pub fn platform_intensity_series(
    params: &Tier1Params,
    signals: &SignalSet,
    history: &CountPanel,
) -> Result<Array2<f64>> {
    params.validate()?;
    params.check_signals(signals, history.opinions())?;
    history.check_shape(params.platforms(), history.opinions())?;
    if signals.bins() < history.bins() {
        return Err(OmmError::DimensionMismatch("signals shorter than history".into()));
    }
    let kernel = params.kernel()?;
    let totals = history.platform_totals();
    let p_n = params.platforms();
    let t_n = history.bins();
    let conv: Vec<Vec<f64>> = (0..p_n)
        .map(|q| kernel.causal_series(&totals.row(q).iter().map(|&n| n as f64).collect::<Vec<_>>()))
        .collect();
    let mut out = Array2::zeros((p_n, t_n));
    for p in 0..p_n {
        for idx in 0..t_n {
            let mut lambda = params.baseline(signals, p, idx);
            for (q, c) in conv.iter().enumerate() {
                lambda += params.alpha[[p, q]] * c[idx];
            }
            out[[p, idx]] = lambda;
        }
    }
    Ok(out)
}

/// `λ^p(t|j)` for bins `1..=history.bins()` (P×M×T).
pub fn conditional_intensity_series(
    split: &MuSplit,
    params: &Tier1Params,
    signals: &SignalSet,
    history: &CountPanel,
) -> Result<Array3<f64>> {
    params.validate()?;
    params.check_signals(signals, history.opinions())?;
    history.check_shape(params.platforms(), split.opinions())?;
    if signals.bins() < history.bins() {
        return Err(OmmError::DimensionMismatch("signals shorter than history".into()));
    }
    let mut out = opinion_excitation(params, history)?;
    for ((p, j, idx), v) in out.indexed_iter_mut() {
        *v += split.0[[p, j]] * signals.exogenous_at(j, idx);
    }
    Ok(out)
}

/// One Poisson draw with mean `lambda`.
pub fn emit_counts<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(OmmError::InvalidParameter(format!(
            "Poisson mean must be finite and ≥ 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda)
        .map_err(|e| OmmError::InvalidParameter(format!("Poisson mean {lambda}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Spectral radius of a square matrix via the Gelfand limit `‖A^n‖^(1/n)`,
/// taken along repeated squaring with renormalisation.
pub fn spectral_radius(a: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| {
        m.outer_iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let n0 = norm(a);
    if n0 == 0.0 {
        return 0.0;
    }
    let mut b = a / n0;
    let mut log_scale = n0.ln();
    let mut power = 1.0_f64;
    for _ in 0..48 {
        let sq = b.dot(&b);
        let n = norm(&sq);
        if n == 0.0 {
            return 0.0;
        }
        b = sq / n;
        log_scale = 2.0 * log_scale + n.ln();
        power *= 2.0;
    }
    (log_scale / power).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shared_signals(bins: usize) -> SignalSet {
        SignalSet::exogenous_only(vec![1.0; bins]).unwrap()
    }

    #[test]
    fn exogenous_only_intensity_is_baseline() {
        let params = Tier1Params::new(array![15.0, 25.0], Array2::zeros((2, 2)), 0.5).unwrap();
        let signals = shared_signals(10);
        let mut history = CountPanel::zeros(2, 2, 9);
        history.counts_mut().fill(7);
        for t in 1..=10 {
            assert_eq!(platform_intensity(&params, &signals, &history, 0, t).unwrap(), 15.0);
        }
    }

    #[test]
    fn first_bin_ignores_history() {
        let params = Tier1Params::new(array![2.0, 3.0], array![[0.3, 0.2], [0.1, 0.4]], 0.5).unwrap();
        let signals = SignalSet::exogenous_only(vec![1.5, 1.0, 1.0]).unwrap();
        let history = CountPanel::zeros(2, 1, 0);
        assert_eq!(platform_intensity(&params, &signals, &history, 1, 1).unwrap(), 4.5);
    }

    #[test]
    fn single_event_hand_value() {
        let alpha = array![[0.1, 0.6], [0.0, 0.2]];
        let params = Tier1Params::new(array![2.0, 1.0], alpha, 0.5).unwrap();
        let signals = shared_signals(4);
        let mut history = CountPanel::zeros(2, 1, 3);
        history.counts_mut()[[1, 0, 2]] = 1;
        let lambda = platform_intensity(&params, &signals, &history, 0, 4).unwrap();
        assert_abs_diff_eq!(lambda, 2.0 + 0.6 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn conditional_zero_history_opinions_are_baseline() {
        let params = Tier1Params::new(array![6.0, 4.0], array![[0.3, 0.2], [0.1, 0.4]], 0.5).unwrap();
        let split = MuSplit::new(array![[1.0, 2.0, 3.0], [2.0, 1.0, 1.0]], &params.mu).unwrap();
        let signals = SignalSet::exogenous_only(vec![0.5; 6]).unwrap();
        let mut history = CountPanel::zeros(2, 3, 5);
        for t in 0..5 {
            history.counts_mut()[[0, 0, t]] = 3 + t as u64;
            history.counts_mut()[[1, 0, t]] = 1;
        }
        for p in 0..2 {
            for j in 1..3 {
                let v = conditional_opinion_intensity(&split, &params, &signals, &history, p, j, 6).unwrap();
                assert_abs_diff_eq!(v, split.0[[p, j]] * 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn split_must_sum_to_mu() {
        assert!(MuSplit::new(array![[1.0, 2.0]], &array![3.5]).is_err());
        assert!(MuSplit::new(array![[1.0, -2.0]], &array![-1.0]).is_err());
        let split = MuSplit::proportional(&array![10.0], &array![[1.0, 3.0]]).unwrap();
        assert_eq!(split.0, array![[2.5, 7.5]]);
    }

    #[test]
    fn emit_zero_and_rejects_bad_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(emit_counts(0.0, &mut rng).unwrap(), 0);
        }
        assert!(emit_counts(-1.0, &mut rng).is_err());
        assert!(emit_counts(f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn emit_moments_match_poisson() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| emit_counts(20.0, &mut rng).unwrap() as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 20.0).abs() <= 3.0 * (20.0 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 20.0).abs() <= 0.05 * 20.0, "variance {var}");
    }

    #[test]
    fn spectral_radius_known_matrices() {
        assert_abs_diff_eq!(spectral_radius(&array![[0.5, 0.0], [0.0, 0.2]]), 0.5, epsilon = 1e-9);
        // eigenvalues of [[0.2,0.3],[0.4,0.1]] are 0.5 and -0.2
        assert_abs_diff_eq!(spectral_radius(&array![[0.2, 0.3], [0.4, 0.1]]), 0.5, epsilon = 1e-9);
        assert_eq!(spectral_radius(&array![[0.0, 1.0], [0.0, 0.0]]), 0.0);
        let params = Tier1Params::new(array![1.0, 1.0], array![[0.9, 0.5], [0.5, 0.9]], 0.5).unwrap();
        assert!(params.warn_if_unstable().is_some());
    }
}
