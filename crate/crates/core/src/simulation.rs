//! Forward sampling of the two-tier process.
//!
//! Each step computes `λ^p(t)` and the shares `s^p_i(t)` from the realised
//! history, draws `n^p_{i,t} ~ Poisson(λ^p(t)·s^p_i(t))`, and feeds the draws
//! back into the kernel state. The state is the per-platform, per-opinion
//! convolution of past counts, updated by the geometric recurrence.

use ndarray::{s, Array1, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::rng::{stream_rng, SimRng};
use crate::share::{softmax_in_place, OmmModel};
use crate::types::{CountPanel, SignalSet};
use crate::volume::emit_counts;

/// Per-bin intensity above which a run is declared explosive.
pub const EXPLOSION_CAP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareAggregation {
    /// Average of realised share vectors; empty bins use the model share.
    #[default]
    MeanOfRealized,
    /// Shares of the replicate-averaged opinion counts.
    OfMeanCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub model: OmmModel,
    pub signals: SignalSet,
    /// Observed prefix covering bins `1..start`; may be empty.
    pub history: CountPanel,
    /// First simulated bin (1-based); equals `history.bins() + 1`.
    pub start: usize,
    /// Last simulated bin, inclusive.
    pub end: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub share_aggregation: ShareAggregation,
}

impl SimulationSpec {
    /// Continuation of `history` up to bin `end`.
    pub fn new(
        model: OmmModel,
        signals: SignalSet,
        history: CountPanel,
        end: usize,
        replicates: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            start: history.bins() + 1,
            model,
            signals,
            history,
            end,
            replicates,
            seed,
            aggregation: Aggregation::Mean,
            share_aggregation: ShareAggregation::MeanOfRealized,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Unconditioned simulation of bins `1..=end`.
    pub fn from_scratch(model: OmmModel, signals: SignalSet, end: usize, replicates: usize, seed: u64) -> Result<Self> {
        let history = CountPanel::zeros(model.platforms(), model.opinions(), 0);
        Self::new(model, signals, history, end, replicates, seed)
    }

    pub fn horizon(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_inputs(&self.signals, &self.history)?;
        if self.start != self.history.bins() + 1 {
            return Err(OmmError::InvalidParameter(format!(
                "horizon starts at {} but the observed prefix ends at {}",
                self.start,
                self.history.bins()
            )));
        }
        if self.end < self.start {
            return Err(OmmError::InvalidParameter(format!(
                "empty horizon {}..={}",
                self.start, self.end
            )));
        }
        if self.end > self.signals.bins() {
            return Err(OmmError::TimeOutOfRange {
                t: self.end,
                bins: self.signals.bins(),
            });
        }
        if self.replicates == 0 {
            return Err(OmmError::InvalidParameter("replicate count must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    /// Prefix followed by the simulated bins (bins `1..=end`).
    pub counts: CountPanel,
    /// `λ^p(t)` over the horizon, P×H.
    pub intensities: Array2<f64>,
    /// Model shares `s^p_i(t)` used for emission, P×M×H.
    pub model_shares: Array3<f64>,
    /// Realised shares, with the model share in empty bins, P×M×H.
    pub realized_shares: Array3<f64>,
}

/// Replicate-aggregated prediction over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub start: usize,
    pub end: usize,
    /// Aggregated platform volumes, P×H.
    pub volumes: Array2<f64>,
    /// Aggregated shares, P×M×H.
    pub shares: Array3<f64>,
    /// Platform volumes of each replicate, P×H.
    pub replicate_volumes: Vec<Array2<f64>>,
}

/// Sequential sampler state for one path.
pub(crate) struct Stepper<'a> {
    model: &'a OmmModel,
    signals: &'a SignalSet,
    /// z-scored `X̄`, K×T over the full signal horizon.
    xstd: Array2<f64>,
    /// `Σ_{s<t} f(t-s)·n^q_{j,s}`, P×M.
    conv: Array2<f64>,
    theta: f64,
    /// 0-based index of the next bin.
    next: usize,
    tend: Vec<f64>,
}

/// Intensities and shares at one bin.
pub(crate) struct StepState {
    pub lambda: Array1<f64>,
    pub shares: Array2<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a OmmModel, signals: &'a SignalSet, history: &CountPanel) -> Result<Self> {
        model.check_inputs(signals, history)?;
        let theta = model.params1.theta;
        let xbar = signals.smoothed_interventions(theta)?;
        let mut xstd = xbar;
        for ((k, _), v) in xstd.indexed_iter_mut() {
            *v = model.stats.standardize_x(k, *v);
        }
        let mut stepper = Self {
            model,
            signals,
            xstd,
            conv: Array2::zeros((model.platforms(), model.opinions())),
            theta,
            next: 0,
            tend: vec![0.0; model.opinions()],
        };
        for idx in 0..history.bins() {
            let counts = history.counts().slice(s![.., .., idx]).to_owned();
            stepper.absorb(&counts);
        }
        Ok(stepper)
    }

    pub(crate) fn state(&mut self) -> Result<StepState> {
        let idx = self.next;
        let m = self.model;
        let (p_n, m_n, k_n) = (m.platforms(), m.opinions(), m.interventions());
        let split = &m.params2.mu_split.0;
        let alpha = &m.params1.alpha;
        // λ^q(t|j) standardised
        let mut z = Array2::<f64>::zeros((p_n, m_n));
        for q in 0..p_n {
            for j in 0..m_n {
                let mut lam = split[[q, j]] * self.signals.exogenous_at(j, idx);
                for r in 0..p_n {
                    lam += alpha[[q, r]] * self.conv[[r, j]];
                }
                z[[q, j]] = m.stats.standardize_lam(q, j, lam);
            }
        }
        let mut lambda = Array1::zeros(p_n);
        let mut shares = Array2::zeros((p_n, m_n));
        for p in 0..p_n {
            let mut lam = m.params1.baseline(self.signals, p, idx);
            for q in 0..p_n {
                lam += alpha[[p, q]] * self.conv.row(q).sum();
            }
            if !lam.is_finite() || lam > EXPLOSION_CAP {
                return Err(OmmError::Explosion {
                    platform: p,
                    t: idx + 1,
                    lambda: lam,
                    state: format!("kernel state {:?}", self.conv.as_slice().unwrap_or(&[])),
                });
            }
            lambda[p] = lam;
            for i in 0..m_n {
                let mut acc = 0.0;
                for k in 0..k_n {
                    acc += m.params2.gamma[[p, i, k]] * self.xstd[[k, idx]];
                }
                for q in 0..p_n {
                    for j in 0..m_n {
                        acc += m.params2.beta[[p, q, i, j]] * z[[q, j]];
                    }
                }
                self.tend[i] = acc;
            }
            if self.tend.iter().any(|v| !v.is_finite()) {
                return Err(OmmError::NonFinite(format!(
                    "tendencies on platform {p} at t={}: {:?}",
                    idx + 1,
                    self.tend
                )));
            }
            softmax_in_place(&mut self.tend);
            for i in 0..m_n {
                shares[[p, i]] = self.tend[i];
            }
        }
        Ok(StepState { lambda, shares })
    }

    /// Feeds the counts of the current bin (P×M) into the kernel state.
    pub(crate) fn absorb(&mut self, counts: &Array2<u64>) {
        let decay = 1.0 - self.theta;
        for ((q, j), c) in self.conv.indexed_iter_mut() {
            *c = decay * *c + self.theta * counts[[q, j]] as f64;
        }
        self.next += 1;
    }
}

fn draw_bin(state: &StepState, rng: &mut SimRng) -> Result<Array2<u64>> {
    let (p_n, m_n) = state.shares.dim();
    let mut out = Array2::zeros((p_n, m_n));
    for p in 0..p_n {
        for i in 0..m_n {
            out[[p, i]] = emit_counts(state.lambda[p] * state.shares[[p, i]], rng)?;
        }
    }
    Ok(out)
}

/// Replicate `r` of `spec`, drawn from stream `r` of the spec seed.
pub fn simulate_replicate(spec: &SimulationSpec, r: usize) -> Result<Replicate> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, r as u64);
    simulate_with_rng(spec, &mut rng)
}

pub(crate) fn simulate_with_rng(spec: &SimulationSpec, rng: &mut SimRng) -> Result<Replicate> {
    let (p_n, m_n) = (spec.model.platforms(), spec.model.opinions());
    let h = spec.horizon();
    let mut stepper = Stepper::new(&spec.model, &spec.signals, &spec.history)?;
    let mut counts = Array3::zeros((p_n, m_n, spec.end));
    counts.slice_mut(s![.., .., ..spec.history.bins()]).assign(spec.history.counts());
    let mut intensities = Array2::zeros((p_n, h));
    let mut model_shares = Array3::zeros((p_n, m_n, h));
    let mut realized_shares = Array3::zeros((p_n, m_n, h));
    for step in 0..h {
        let state = stepper.state()?;
        let drawn = draw_bin(&state, rng)?;
        let idx = spec.start - 1 + step;
        counts.slice_mut(s![.., .., idx]).assign(&drawn);
        intensities.column_mut(step).assign(&state.lambda);
        model_shares.slice_mut(s![.., .., step]).assign(&state.shares);
        for p in 0..p_n {
            let total: u64 = drawn.row(p).sum();
            for i in 0..m_n {
                realized_shares[[p, i, step]] = if total > 0 {
                    drawn[[p, i]] as f64 / total as f64
                } else {
                    state.shares[[p, i]]
                };
            }
        }
        stepper.absorb(&drawn);
    }
    Ok(Replicate {
        counts: CountPanel::new(counts)?,
        intensities,
        model_shares,
        realized_shares,
    })
}

/// Counts of replicate 0 over bins `1..=end`.
pub fn simulate(spec: &SimulationSpec) -> Result<CountPanel> {
    Ok(simulate_replicate(spec, 0)?.counts)
}

/// All replicates, computed in parallel and returned in replicate order.
pub fn simulate_all(spec: &SimulationSpec) -> Result<Vec<Replicate>> {
    spec.validate()?;
    (0..spec.replicates)
        .into_par_iter()
        .map(|r| simulate_replicate(spec, r))
        .collect()
}

/// Replicate-aggregated volumes and shares over the horizon.
pub fn predict(spec: &SimulationSpec) -> Result<Prediction> {
    let replicates = simulate_all(spec)?;
    aggregate(spec, &replicates)
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

pub(crate) fn aggregate(spec: &SimulationSpec, replicates: &[Replicate]) -> Result<Prediction> {
    let (p_n, m_n, h) = (spec.model.platforms(), spec.model.opinions(), spec.horizon());
    let offset = spec.start - 1;
    let replicate_volumes: Vec<Array2<f64>> = replicates
        .iter()
        .map(|rep| {
            Array2::from_shape_fn((p_n, h), |(p, step)| rep.counts.total(p, offset + step) as f64)
        })
        .collect();
    let n = replicates.len() as f64;
    let reduce = |values: &mut Vec<f64>| match spec.aggregation {
        Aggregation::Mean => values.iter().sum::<f64>() / n,
        Aggregation::Median => median(values),
    };
    let mut buf = Vec::with_capacity(replicates.len());
    let volumes = Array2::from_shape_fn((p_n, h), |(p, step)| {
        buf.clear();
        buf.extend(replicate_volumes.iter().map(|v| v[[p, step]]));
        reduce(&mut buf)
    });
    let mut shares = Array3::zeros((p_n, m_n, h));
    match spec.share_aggregation {
        ShareAggregation::MeanOfRealized => {
            for ((p, i, step), v) in shares.indexed_iter_mut() {
                buf.clear();
                buf.extend(replicates.iter().map(|rep| rep.realized_shares[[p, i, step]]));
                *v = reduce(&mut buf);
            }
        }
        ShareAggregation::OfMeanCounts => {
            for ((p, i, step), v) in shares.indexed_iter_mut() {
                buf.clear();
                buf.extend(replicates.iter().map(|rep| rep.counts.get(p, i, offset + step) as f64));
                *v = reduce(&mut buf);
            }
            for p in 0..p_n {
                for step in 0..h {
                    let total: f64 = (0..m_n).map(|i| shares[[p, i, step]]).sum();
                    for i in 0..m_n {
                        shares[[p, i, step]] = if total > 0.0 {
                            shares[[p, i, step]] / total
                        } else {
                            replicates.iter().map(|r| r.model_shares[[p, i, step]]).sum::<f64>() / n
                        };
                    }
                }
            }
        }
    }
    if spec.aggregation == Aggregation::Median {
        for p in 0..p_n {
            for step in 0..h {
                let total: f64 = (0..m_n).map(|i| shares[[p, i, step]]).sum();
                if total > 0.0 {
                    for i in 0..m_n {
                        shares[[p, i, step]] /= total;
                    }
                }
            }
        }
    }
    Ok(Prediction {
        start: spec.start,
        end: spec.end,
        volumes,
        shares,
        replicate_volumes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::share::{FeatureStats, Tier2Params};
    use crate::volume::{platform_intensity_series, MuSplit, Tier1Params};
    use ndarray::array;

    fn model(alpha: f64) -> OmmModel {
        let params1 = Tier1Params::new(array![8.0, 4.0], Array2::from_elem((2, 2), alpha), 0.5).unwrap();
        let split = MuSplit::new(array![[2.0, 6.0], [1.0, 3.0]], &params1.mu).unwrap();
        let mut params2 = Tier2Params::zero(split, 1);
        params2.gamma[[0, 0, 0]] = 0.4;
        params2.beta[[1, 0, 1, 0]] = 0.3;
        OmmModel::new(params1, params2, FeatureStats::identity(2, 2, 1)).unwrap()
    }

    fn signals(bins: usize) -> SignalSet {
        SignalSet::shared(
            vec![1.0; bins],
            Array2::from_shape_fn((1, bins), |(_, t)| (0.2 * t as f64).sin()),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_path() {
        let spec = SimulationSpec::from_scratch(model(0.2), signals(40), 40, 1, 9).unwrap();
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let other = SimulationSpec { seed: 10, ..spec.clone() };
        assert_ne!(simulate(&spec).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn stepper_matches_batch_intensities() {
        let m = model(0.25);
        let sig = signals(30);
        let spec = SimulationSpec::from_scratch(m.clone(), sig.clone(), 30, 1, 3).unwrap();
        let rep = simulate_replicate(&spec, 0).unwrap();
        let batch = platform_intensity_series(&m.params1, &sig, &rep.counts).unwrap();
        for p in 0..2 {
            for idx in 0..30 {
                assert!((batch[[p, idx]] - rep.intensities[[p, idx]]).abs() < 1e-9 * batch[[p, idx]]);
            }
        }
        let shares = crate::share::model_shares(&m, &sig, &rep.counts).unwrap();
        for (a, b) in shares.0.iter().zip(rep.model_shares.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_is_copied() {
        let m = model(0.2);
        let sig = signals(25);
        let base = SimulationSpec::from_scratch(m.clone(), sig.clone(), 10, 1, 1).unwrap();
        let prefix = simulate(&base).unwrap();
        let spec = SimulationSpec::new(m, sig, prefix.clone(), 25, 4, 2).unwrap();
        for rep in simulate_all(&spec).unwrap() {
            assert_eq!(rep.counts.truncated(10).unwrap(), prefix);
        }
    }

    #[test]
    fn one_replicate_prediction_is_the_replicate() {
        let spec = SimulationSpec::from_scratch(model(0.1), signals(12), 12, 1, 5).unwrap();
        let rep = simulate_replicate(&spec, 0).unwrap();
        let pred = predict(&spec).unwrap();
        for p in 0..2 {
            for idx in 0..12 {
                assert_eq!(pred.volumes[[p, idx]], rep.counts.total(p, idx) as f64);
            }
        }
        assert_eq!(pred.shares, rep.realized_shares);
    }

    #[test]
    fn supercritical_run_explodes_loudly() {
        let params1 = Tier1Params::new(array![50.0], array![[3.0]], 0.9).unwrap();
        let split = MuSplit::new(array![[25.0, 25.0]], &params1.mu).unwrap();
        let m = OmmModel::new(params1, Tier2Params::zero(split, 0), FeatureStats::identity(1, 2, 0)).unwrap();
        let spec = SimulationSpec::from_scratch(m, SignalSet::exogenous_only(vec![1.0; 400]).unwrap(), 400, 1, 0).unwrap();
        assert!(matches!(simulate(&spec), Err(OmmError::Explosion { .. })));
    }

    #[test]
    fn rejects_bad_horizons() {
        let m = model(0.1);
        assert!(SimulationSpec::from_scratch(m.clone(), signals(5), 6, 1, 0).is_err());
        assert!(SimulationSpec::from_scratch(m.clone(), signals(5), 5, 0, 0).is_err());
        assert!(SimulationSpec::new(m, signals(5), CountPanel::zeros(2, 2, 5), 5, 1, 0).is_err());
    }
}
