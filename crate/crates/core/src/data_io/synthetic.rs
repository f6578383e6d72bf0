//! Synthetic panels drawn from a known two-tier model.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetBundle;
use crate::error::{OmmError, Result};
use crate::estimation::fit_feature_stats;
use crate::rng::stream_rng;
use crate::share::{FeatureStats, OmmModel, Tier2Params};
use crate::simulation::{simulate_all, SimulationSpec};
use crate::types::{CountPanel, SignalSet};
use crate::volume::{MuSplit, Tier1Params};

/// A parameter block given outright or drawn i.i.d. uniform once per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    Uniform { low: f64, high: f64 },
    /// Row-major values in the block's natural shape.
    Fixed(Vec<f64>),
}

impl ParamSource {
    fn realise<R: Rng>(&self, len: usize, rng: &mut R, name: &str) -> Result<Vec<f64>> {
        match self {
            ParamSource::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(OmmError::InvalidParameter(format!("{name}: bad range [{low}, {high}]")));
                }
                Ok((0..len)
                    .map(|_| if low == high { *low } else { rng.random_range(*low..*high) })
                    .collect())
            }
            ParamSource::Fixed(v) if v.len() == len => Ok(v.clone()),
            ParamSource::Fixed(v) => Err(OmmError::DimensionMismatch(format!(
                "{name}: {} values given, {len} needed",
                v.len()
            ))),
        }
    }
}

/// A deterministic signal evaluated at integer `t = 1, 2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalDef {
    Constant(f64),
    /// `amplitude·sin(frequency·t + phase) + offset`
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
}

impl SignalDef {
    pub fn series(&self, bins: usize) -> Vec<f64> {
        (1..=bins)
            .map(|t| match *self {
                SignalDef::Constant(c) => c,
                SignalDef::Sinusoid {
                    amplitude,
                    frequency,
                    phase,
                    offset,
                } => amplitude * (frequency * t as f64 + phase).sin() + offset,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// `μ^p_j`, one row per platform.
    pub mu_split: Vec<Vec<f64>>,
    pub theta: f64,
    pub alpha: ParamSource,
    pub beta: ParamSource,
    pub gamma: ParamSource,
    pub exogenous: SignalDef,
    pub interventions: Vec<SignalDef>,
    pub bins: usize,
    pub n_groups: usize,
    pub n_samples: usize,
    /// Panels simulated to fit the truth model's feature statistics.
    pub pilot_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            mu_split: vec![vec![15.0, 5.0], vec![5.0, 20.0]],
            theta: 0.5,
            alpha: ParamSource::Uniform { low: 0.0, high: 0.5 },
            beta: ParamSource::Uniform { low: 0.0, high: 0.1 },
            gamma: ParamSource::Uniform { low: 0.0, high: 0.1 },
            exogenous: SignalDef::Constant(1.0),
            interventions: vec![
                SignalDef::Sinusoid {
                    amplitude: 5.0,
                    frequency: 0.1,
                    phase: 0.0,
                    offset: 5.0,
                },
                SignalDef::Sinusoid {
                    amplitude: 10.0,
                    frequency: 0.05,
                    phase: 1.25,
                    offset: 10.0,
                },
            ],
            bins: 300,
            n_groups: 20,
            n_samples: 20,
            pilot_samples: 20,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn platforms(&self) -> usize {
        self.mu_split.len()
    }

    pub fn opinions(&self) -> usize {
        self.mu_split.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, m) = (self.platforms(), self.opinions());
        if p == 0 || m == 0 || self.mu_split.iter().any(|r| r.len() != m) {
            return Err(OmmError::InvalidParameter("mu_split must be a non-empty P×M table".into()));
        }
        if self.bins == 0 || self.n_groups == 0 || self.n_samples == 0 || self.pilot_samples == 0 {
            return Err(OmmError::InvalidParameter("bins, groups, samples and pilot samples must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn signals(&self) -> Result<SignalSet> {
        let k = self.interventions.len();
        let mut x = Array2::zeros((k, self.bins));
        for (row, def) in self.interventions.iter().enumerate() {
            x.row_mut(row).assign(&Array1::from(def.series(self.bins)));
        }
        SignalSet::shared(self.exogenous.series(self.bins), x)
    }

    /// Draws the generating parameters (feature statistics still identity).
    fn draw_parameters(&self) -> Result<(Tier1Params, Tier2Params)> {
        let (p, m, k) = (self.platforms(), self.opinions(), self.interventions.len());
        let mut rng = stream_rng(self.seed, 0);
        let split = Array2::from_shape_fn((p, m), |(a, j)| self.mu_split[a][j]);
        let mu = split.sum_axis(ndarray::Axis(1));
        let alpha = Array2::from_shape_vec((p, p), self.alpha.realise(p * p, &mut rng, "alpha")?)
            .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
        let beta = Array4::from_shape_vec((p, p, m, m), self.beta.realise(p * p * m * m, &mut rng, "beta")?)
            .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
        let gamma = Array3::from_shape_vec((p, m, k), self.gamma.realise(p * m * k, &mut rng, "gamma")?)
            .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
        let params1 = Tier1Params::new(mu.clone(), alpha, self.theta)?;
        let params2 = Tier2Params::new(gamma, beta, MuSplit::new(split, &mu)?)?;
        Ok((params1, params2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub truth: OmmModel,
    pub signals: SignalSet,
    pub groups: Vec<Vec<CountPanel>>,
}

impl SyntheticDataset {
    pub fn labels(&self) -> (Vec<String>, Vec<String>, Vec<String>) {
        let p = (1..=self.truth.platforms()).map(|i| format!("platform{i}")).collect();
        let m = (1..=self.truth.opinions()).map(|i| format!("opinion{i}")).collect();
        let k = (1..=self.truth.interventions()).map(|i| format!("X{i}")).collect();
        (p, m, k)
    }

    /// One bundle per panel, group by group.
    pub fn bundles(&self) -> Result<Vec<DatasetBundle>> {
        let (p, m, k) = self.labels();
        self.groups
            .iter()
            .flatten()
            .map(|panel| DatasetBundle::new(p.clone(), m.clone(), k.clone(), "1", panel.clone(), self.signals.clone()))
            .collect()
    }
}

fn pilot_stats(model: &OmmModel, signals: &SignalSet, config: &SyntheticConfig, stream: u64) -> Result<FeatureStats> {
    let spec = SimulationSpec::from_scratch(
        model.clone(),
        signals.clone(),
        config.bins,
        config.pilot_samples,
        config.seed ^ (0x5eed_0000 + stream),
    )?;
    let panels: Vec<CountPanel> = simulate_all(&spec)?.into_iter().map(|r| r.counts).collect();
    let (stats, _) = fit_feature_stats(&model.params2.mu_split, &model.params1, signals, &panels)?;
    Ok(stats)
}

/// Draws truths once, fixes their feature statistics from pilot runs, then
/// simulates `n_groups × n_samples` independent panels.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let signals = config.signals()?;
    let (params1, params2) = config.draw_parameters()?;
    let (p, m, k) = (config.platforms(), config.opinions(), config.interventions.len());
    if let Some(w) = params1.warn_if_unstable() {
        log::warn!("synthetic truth: {w}");
    }
    // Pilot 1: shares are uniform, so the statistics do not matter.
    let uncoupled = OmmModel::new(
        params1.clone(),
        Tier2Params::zero(params2.mu_split.clone(), k),
        FeatureStats::identity(p, m, k),
    )?;
    let stats0 = pilot_stats(&uncoupled, &signals, config, 1)?;
    let provisional = OmmModel::new(params1.clone(), params2.clone(), stats0)?;
    let stats1 = pilot_stats(&provisional, &signals, config, 2)?;
    let truth = OmmModel::new(params1, params2, stats1)?;

    let spec = SimulationSpec::from_scratch(
        truth.clone(),
        signals.clone(),
        config.bins,
        config.n_groups * config.n_samples,
        config.seed,
    )?;
    let panels: Vec<CountPanel> = simulate_all(&spec)?.into_iter().map(|r| r.counts).collect();
    let groups = panels.chunks(config.n_samples).map(<[CountPanel]>::to_vec).collect();
    Ok(SyntheticDataset {
        config: config.clone(),
        truth,
        signals,
        groups,
    })
}
