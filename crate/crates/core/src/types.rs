//! Shared containers: model dimensions, input signals and count panels.

use ndarray::{s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::kernel::build_smoothed_interventions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub platforms: usize,
    pub opinions: usize,
    pub interventions: usize,
    pub bins: usize,
}

impl Dimensions {
    pub fn new(platforms: usize, opinions: usize, interventions: usize, bins: usize) -> Result<Self> {
        if platforms == 0 || opinions == 0 || bins == 0 {
            return Err(OmmError::InvalidParameter(format!(
                "dimensions must be positive (P={platforms}, M={opinions}, T={bins})"
            )));
        }
        Ok(Self {
            platforms,
            opinions,
            interventions,
            bins,
        })
    }
}

/// Exogenous drive of the attention market: one shared series, or one per opinion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Exogenous {
    Shared(Array1<f64>),
    /// M×T, one row per opinion.
    PerOpinion(Array2<f64>),
}

/// Exogenous signal(s) and the raw intervention series over T bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSet {
    exogenous: Exogenous,
    /// K×T
    interventions: Array2<f64>,
}

impl SignalSet {
    pub fn shared(exogenous: Vec<f64>, interventions: Array2<f64>) -> Result<Self> {
        Self::from_parts(Exogenous::Shared(Array1::from(exogenous)), interventions)
    }

    pub fn per_opinion(exogenous: Array2<f64>, interventions: Array2<f64>) -> Result<Self> {
        Self::from_parts(Exogenous::PerOpinion(exogenous), interventions)
    }

    /// Signals with no interventions.
    pub fn exogenous_only(exogenous: Vec<f64>) -> Result<Self> {
        let bins = exogenous.len();
        Self::shared(exogenous, Array2::zeros((0, bins)))
    }

    pub fn from_parts(exogenous: Exogenous, interventions: Array2<f64>) -> Result<Self> {
        let (bins, values): (usize, Vec<f64>) = match &exogenous {
            Exogenous::Shared(s) => (s.len(), s.to_vec()),
            Exogenous::PerOpinion(s) => (s.ncols(), s.iter().copied().collect()),
        };
        if bins == 0 {
            return Err(OmmError::InvalidParameter("signals must cover at least one bin".into()));
        }
        if let Exogenous::PerOpinion(s) = &exogenous {
            if s.nrows() == 0 {
                return Err(OmmError::InvalidParameter("per-opinion exogenous signal has no rows".into()));
            }
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(OmmError::InvalidParameter(format!(
                "exogenous signal entries must be finite and nonnegative, found {bad}"
            )));
        }
        if interventions.ncols() != bins {
            return Err(OmmError::DimensionMismatch(format!(
                "interventions cover {} bins, exogenous signal covers {bins}",
                interventions.ncols()
            )));
        }
        if interventions.iter().any(|v| !v.is_finite()) {
            return Err(OmmError::NonFinite("intervention series".into()));
        }
        Ok(Self {
            exogenous,
            interventions,
        })
    }

    pub fn bins(&self) -> usize {
        self.interventions.ncols()
    }

    pub fn n_interventions(&self) -> usize {
        self.interventions.nrows()
    }

    pub fn is_per_opinion(&self) -> bool {
        matches!(self.exogenous, Exogenous::PerOpinion(_))
    }

    pub fn exogenous(&self) -> &Exogenous {
        &self.exogenous
    }

    pub fn interventions(&self) -> &Array2<f64> {
        &self.interventions
    }

    /// Exogenous value driving opinion `j` at 0-based bin `idx`.
    #[inline]
    pub fn exogenous_at(&self, j: usize, idx: usize) -> f64 {
        match &self.exogenous {
            Exogenous::Shared(s) => s[idx],
            Exogenous::PerOpinion(s) => s[[j, idx]],
        }
    }

    /// Kernel-smoothed interventions `X̄` (K×T).
    pub fn smoothed_interventions(&self, theta: f64) -> Result<Array2<f64>> {
        build_smoothed_interventions(&self.interventions, theta)
    }

    /// Same exogenous drive with a replaced intervention matrix.
    pub fn with_interventions(&self, interventions: Array2<f64>) -> Result<Self> {
        Self::from_parts(self.exogenous.clone(), interventions)
    }

    /// Drops the interventions (K becomes 0).
    pub fn without_interventions(&self) -> Self {
        Self {
            exogenous: self.exogenous.clone(),
            interventions: Array2::zeros((0, self.bins())),
        }
    }

    /// First `bins` bins.
    pub fn truncated(&self, bins: usize) -> Result<Self> {
        if bins == 0 || bins > self.bins() {
            return Err(OmmError::TimeOutOfRange {
                t: bins,
                bins: self.bins(),
            });
        }
        let exogenous = match &self.exogenous {
            Exogenous::Shared(s) => Exogenous::Shared(s.slice(s![..bins]).to_owned()),
            Exogenous::PerOpinion(s) => Exogenous::PerOpinion(s.slice(s![.., ..bins]).to_owned()),
        };
        Ok(Self {
            exogenous,
            interventions: self.interventions.slice(s![.., ..bins]).to_owned(),
        })
    }

    pub(crate) fn check_opinions(&self, opinions: usize) -> Result<()> {
        if let Exogenous::PerOpinion(s) = &self.exogenous {
            if s.nrows() != opinions {
                return Err(OmmError::DimensionMismatch(format!(
                    "per-opinion exogenous signal has {} rows, model has {opinions} opinions",
                    s.nrows()
                )));
            }
        }
        Ok(())
    }
}

/// Post counts `n[p][i][t]` (P×M×T).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPanel {
    counts: Array3<u64>,
}

impl CountPanel {
    pub fn new(counts: Array3<u64>) -> Result<Self> {
        let (p, m, _) = counts.dim();
        if p == 0 || m == 0 {
            return Err(OmmError::InvalidParameter(
                "count panel needs at least one platform and one opinion".into(),
            ));
        }
        Ok(Self { counts })
    }

    pub fn zeros(platforms: usize, opinions: usize, bins: usize) -> Self {
        Self {
            counts: Array3::zeros((platforms, opinions, bins)),
        }
    }

    pub fn platforms(&self) -> usize {
        self.counts.dim().0
    }

    pub fn opinions(&self) -> usize {
        self.counts.dim().1
    }

    pub fn bins(&self) -> usize {
        self.counts.dim().2
    }

    pub fn counts(&self) -> &Array3<u64> {
        &self.counts
    }

    pub fn counts_mut(&mut self) -> &mut Array3<u64> {
        &mut self.counts
    }

    #[inline]
    pub fn get(&self, p: usize, i: usize, idx: usize) -> u64 {
        self.counts[[p, i, idx]]
    }

    /// Platform totals `n^p_t` (P×T).
    pub fn platform_totals(&self) -> Array2<u64> {
        self.counts.sum_axis(Axis(1))
    }

    pub fn total(&self, p: usize, idx: usize) -> u64 {
        self.counts.slice(s![p, .., idx]).sum()
    }

    /// Observed shares with `None` for empty bins.
    pub fn shares_at(&self, p: usize, idx: usize) -> Option<Vec<f64>> {
        let total = self.total(p, idx);
        (total > 0).then(|| {
            self.counts
                .slice(s![p, .., idx])
                .iter()
                .map(|&n| n as f64 / total as f64)
                .collect()
        })
    }

    /// First `bins` bins (may be zero, giving an empty history).
    pub fn truncated(&self, bins: usize) -> Result<Self> {
        if bins > self.bins() {
            return Err(OmmError::TimeOutOfRange {
                t: bins,
                bins: self.bins(),
            });
        }
        Ok(Self {
            counts: self.counts.slice(s![.., .., ..bins]).to_owned(),
        })
    }

    pub(crate) fn check_shape(&self, platforms: usize, opinions: usize) -> Result<()> {
        if self.platforms() != platforms || self.opinions() != opinions {
            return Err(OmmError::DimensionMismatch(format!(
                "count panel is {}×{}, model expects {platforms}×{opinions}",
                self.platforms(),
                self.opinions()
            )));
        }
        Ok(())
    }
}
