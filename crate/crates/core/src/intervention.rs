//! Share elasticities, their time averages, and counterfactual what-if runs
//! that modulate one intervention after a changepoint.

use std::ops::RangeInclusive;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array2, Array4, Array5, ArrayD, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::share::{shares_from_tendencies, tendencies_into, FeaturePanel, OmmModel};
use crate::simulation::{simulate_replicate, Replicate, SimulationSpec};
use crate::types::{CountPanel, SignalSet};

fn check_cell(model: &OmmModel, features: &FeaturePanel, p: usize, i: usize, t: usize) -> Result<()> {
    if p >= model.platforms() || i >= model.opinions() {
        return Err(OmmError::IndexOutOfRange(format!("platform {p}, opinion {i}")));
    }
    if t == 0 || t > features.bins() {
        return Err(OmmError::TimeOutOfRange { t, bins: features.bins() });
    }
    if features.lam_raw.dim().0 != model.platforms()
        || features.lam_raw.dim().1 != model.opinions()
        || features.xbar_raw.nrows() != model.interventions()
    {
        return Err(OmmError::DimensionMismatch("features do not match the model".into()));
    }
    Ok(())
}

fn shares_at(model: &OmmModel, features: &FeaturePanel, p: usize, idx: usize) -> Result<Vec<f64>> {
    let mut tend = vec![0.0; model.opinions()];
    tendencies_into(&model.params2, features, p, idx, &mut tend);
    shares_from_tendencies(&tend)
}

/// `v·(d_i − Σ_m s_m·d_m)` where `d_m` is the tendency slope of opinion `m`.
fn simplex_elasticity(v: f64, shares: &[f64], slopes: impl Fn(usize) -> f64, i: usize) -> f64 {
    let weighted: f64 = shares.iter().enumerate().map(|(m, s)| s * slopes(m)).sum();
    v * (slopes(i) - weighted)
}

fn endogenous_at(model: &OmmModel, features: &FeaturePanel, shares: &[f64], p: usize, i: usize, q: usize, j: usize, idx: usize) -> Option<f64> {
    let v = features.lam_raw[[q, j, idx]];
    if v == 0.0 {
        return None;
    }
    let dz = 1.0 / ((1.0 + v) * features.stats.lam_sd[[q, j]]);
    let beta = &model.params2.beta;
    Some(simplex_elasticity(v, shares, |m| beta[[p, q, m, j]] * dz, i))
}

fn intervention_at(model: &OmmModel, features: &FeaturePanel, shares: &[f64], p: usize, i: usize, k: usize, idx: usize) -> Option<f64> {
    let v = features.xbar_raw[[k, idx]];
    if v == 0.0 {
        return None;
    }
    let dz = 1.0 / features.stats.x_sd[k];
    let gamma = &model.params2.gamma;
    Some(simplex_elasticity(v, shares, |m| gamma[[p, m, k]] * dz, i))
}

/// `e(s^p_i(t), λ^q(t|j))`, the percent change of the share per percent
/// change of the opinion-conditional intensity. `None` where `λ^q(t|j) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn endogenous_elasticity(
    model: &OmmModel,
    features: &FeaturePanel,
    p: usize,
    i: usize,
    q: usize,
    j: usize,
    t: usize,
) -> Result<Option<f64>> {
    check_cell(model, features, p, i, t)?;
    if q >= model.platforms() || j >= model.opinions() {
        return Err(OmmError::IndexOutOfRange(format!("source platform {q}, opinion {j}")));
    }
    let shares = shares_at(model, features, p, t - 1)?;
    Ok(endogenous_at(model, features, &shares, p, i, q, j, t - 1))
}

/// `e(s^p_i(t), X̄_k(t))`. `None` where `X̄_k(t) = 0`.
pub fn intervention_elasticity(
    model: &OmmModel,
    features: &FeaturePanel,
    p: usize,
    i: usize,
    k: usize,
    t: usize,
) -> Result<Option<f64>> {
    check_cell(model, features, p, i, t)?;
    if k >= model.interventions() {
        return Err(OmmError::IndexOutOfRange(format!("intervention {k}")));
    }
    let shares = shares_at(model, features, p, t - 1)?;
    Ok(intervention_at(model, features, &shares, p, i, k, t - 1))
}

/// Time average of one cell over its defined bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedCell {
    /// `None` when no bin in the range is defined.
    pub mean: Option<f64>,
    /// Fraction of bins in the range that were defined.
    pub coverage: f64,
}

/// Mean over the defined entries of `series`; undefined entries count in neither numerator nor denominator.
pub fn time_average(series: &[Option<f64>]) -> Result<AveragedCell> {
    if series.is_empty() {
        return Err(OmmError::InvalidParameter("time average over an empty range".into()));
    }
    let defined: Vec<f64> = series.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AveragedCell {
        mean,
        coverage: defined.len() as f64 / series.len() as f64,
    })
}

/// Time-averaged elasticities: every axis of the source tensor but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedTensor {
    pub mean: ArrayD<Option<f64>>,
    pub coverage: ArrayD<f64>,
}

fn average_last_axis<D: ndarray::Dimension>(
    values: &ndarray::Array<Option<f64>, D>,
    range: &RangeInclusive<usize>,
    first: usize,
) -> Result<AveragedTensor> {
    let shape = values.shape();
    let bins = shape[shape.len() - 1];
    let last = first + bins - 1;
    if range.is_empty() || *range.start() < first || *range.end() > last {
        return Err(OmmError::InvalidParameter(format!(
            "average range {range:?} outside the report window {first}..={last}"
        )));
    }
    let lead: Vec<usize> = shape[..shape.len() - 1].to_vec();
    let flat = values
        .to_shape((lead.iter().product::<usize>(), bins))
        .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
    let (lo, hi) = (range.start() - first, range.end() - first);
    let cells = flat
        .outer_iter()
        .map(|row| time_average(&row.slice(s![lo..=hi]).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mean = ArrayD::from_shape_vec(IxDyn(&lead), cells.iter().map(|c| c.mean).collect())
        .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
    let coverage = ArrayD::from_shape_vec(IxDyn(&lead), cells.iter().map(|c| c.coverage).collect())
        .map_err(|e| OmmError::DimensionMismatch(e.to_string()))?;
    Ok(AveragedTensor { mean, coverage })
}

/// Elasticities over a window of bins. Undefined cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    /// First bin of the window (1-based).
    pub start: usize,
    pub end: usize,
    /// `e(s^p_i(t), λ^q(t|j))` indexed `[p, q, i, j, t - start]`.
    pub endogenous: Array5<Option<f64>>,
    /// `e(s^p_i(t), X̄_k(t))` indexed `[p, i, k, t - start]`.
    pub intervention: Array4<Option<f64>>,
    /// Averages of `endogenous` over the whole window, `[p, q, i, j]`.
    pub endogenous_mean: AveragedTensor,
    /// Averages of `intervention` over the whole window, `[p, i, k]`.
    pub intervention_mean: AveragedTensor,
}

impl ElasticityReport {
    pub fn average_endogenous(&self, range: RangeInclusive<usize>) -> Result<AveragedTensor> {
        average_last_axis(&self.endogenous, &range, self.start)
    }

    pub fn average_intervention(&self, range: RangeInclusive<usize>) -> Result<AveragedTensor> {
        average_last_axis(&self.intervention, &range, self.start)
    }
}

/// Elasticities at bins `range` of the observed `history`.
pub fn elasticities(
    model: &OmmModel,
    signals: &SignalSet,
    history: &CountPanel,
    range: RangeInclusive<usize>,
) -> Result<ElasticityReport> {
    let (start, end) = (*range.start(), *range.end());
    if range.is_empty() || start == 0 || end > history.bins() {
        return Err(OmmError::InvalidParameter(format!(
            "elasticity window {range:?} outside 1..={}",
            history.bins()
        )));
    }
    let features = model.features(signals, history)?;
    let (p_n, m_n, k_n) = (model.platforms(), model.opinions(), model.interventions());
    let per_bin: Vec<(Vec<Option<f64>>, Vec<Option<f64>>)> = (start - 1..end)
        .into_par_iter()
        .map(|idx| {
            let mut endo = Vec::with_capacity(p_n * p_n * m_n * m_n);
            let mut inter = Vec::with_capacity(p_n * m_n * k_n);
            for p in 0..p_n {
                let shares = shares_at(model, &features, p, idx)?;
                for q in 0..p_n {
                    for i in 0..m_n {
                        for j in 0..m_n {
                            endo.push(endogenous_at(model, &features, &shares, p, i, q, j, idx));
                        }
                    }
                }
                for i in 0..m_n {
                    for k in 0..k_n {
                        inter.push(intervention_at(model, &features, &shares, p, i, k, idx));
                    }
                }
            }
            Ok((endo, inter))
        })
        .collect::<Result<_>>()?;
    let h = end - start + 1;
    let mut endogenous = Array5::from_elem((p_n, p_n, m_n, m_n, h), None);
    let mut intervention = Array4::from_elem((p_n, m_n, k_n, h), None);
    for (step, (endo, inter)) in per_bin.into_iter().enumerate() {
        for (slot, v) in endogenous.slice_mut(s![.., .., .., .., step]).iter_mut().zip(endo) {
            *slot = v;
        }
        for (slot, v) in intervention.slice_mut(s![.., .., .., step]).iter_mut().zip(inter) {
            *slot = v;
        }
    }
    let endogenous_mean = average_last_axis(&endogenous, &range, start)?;
    let intervention_mean = average_last_axis(&intervention, &range, start)?;
    Ok(ElasticityReport {
        start,
        end,
        endogenous,
        intervention,
        endogenous_mean,
        intervention_mean,
    })
}

/// Adds `r` times the mean of intervention `k_star` over `mean_window` to
/// that intervention at every bin after `changepoint`.
pub fn modulate_intervention(
    signals: &SignalSet,
    k_star: usize,
    r: f64,
    changepoint: usize,
    mean_window: RangeInclusive<usize>,
) -> Result<SignalSet> {
    if k_star >= signals.n_interventions() {
        return Err(OmmError::IndexOutOfRange(format!(
            "intervention {k_star} of {}",
            signals.n_interventions()
        )));
    }
    if !r.is_finite() {
        return Err(OmmError::InvalidParameter(format!("modulation r={r}")));
    }
    if mean_window.is_empty() || *mean_window.start() == 0 || *mean_window.end() > signals.bins() {
        return Err(OmmError::InvalidParameter(format!(
            "mean window {mean_window:?} outside 1..={}",
            signals.bins()
        )));
    }
    let mut x = signals.interventions().clone();
    let window = x.slice(s![k_star, mean_window.start() - 1..*mean_window.end()]);
    let shift = r * window.sum() / window.len() as f64;
    if changepoint < x.ncols() {
        x.slice_mut(s![k_star, changepoint..]).mapv_inplace(|v| v + shift);
    }
    signals.with_interventions(x)
}

/// Which simulated shares enter the window means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareSource {
    /// Shares of the simulated counts (model shares in empty bins).
    #[default]
    Realized,
    /// The model's share vectors along the simulated path.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfScenario {
    pub k_star: usize,
    pub r: f64,
    /// Last bin before the modulation takes effect.
    pub changepoint: usize,
    pub n_sims: usize,
    /// Last simulated bin.
    pub end: usize,
    pub seed: u64,
    /// Window for the intervention mean; defaults to the observed history,
    /// or `1..=changepoint` when simulating from scratch.
    #[serde(default)]
    pub mean_window: Option<(usize, usize)>,
    #[serde(default)]
    pub share_source: ShareSource,
}

impl WhatIfScenario {
    pub fn validate(&self, history_bins: usize) -> Result<()> {
        if self.n_sims == 0 {
            return Err(OmmError::InvalidParameter("n_sims must be ≥ 1".into()));
        }
        if !self.r.is_finite() {
            return Err(OmmError::InvalidParameter(format!("modulation r={}", self.r)));
        }
        if self.changepoint < history_bins || self.changepoint >= self.end {
            return Err(OmmError::InvalidParameter(format!(
                "changepoint {} must lie in {history_bins}..{} (after the observed history, before the horizon end)",
                self.changepoint, self.end
            )));
        }
        Ok(())
    }

    fn window(&self, history_bins: usize) -> RangeInclusive<usize> {
        match self.mean_window {
            Some((a, b)) => a..=b,
            None if history_bins > 0 => 1..=history_bins,
            None => 1..=self.changepoint.max(1),
        }
    }
}

/// Paired baseline/modulated outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEffect {
    /// Post-changepoint mean shares (P×M) under `r = 0`.
    pub baseline_post: Array2<f64>,
    /// Post-changepoint mean shares under the scenario.
    pub modulated_post: Array2<f64>,
    /// Mean shares of the simulated bins up to the changepoint; `None` when there are none.
    pub modulated_pre: Option<Array2<f64>>,
    /// `100·(modulated − baseline)/baseline`; `None` where the baseline share is 0.
    pub percent_change: Array2<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub scenario: WhatIfScenario,
    /// Replicate-averaged post-changepoint shares, P×M.
    pub baseline_share: Array2<f64>,
    pub modulated_share: Array2<f64>,
    /// `100·(modulated_share − baseline_share)/baseline_share`, P×M.
    pub percent_change: Array2<f64>,
    /// Standard deviation of the per-replicate percent changes.
    pub spread: Array2<f64>,
    pub replicates: Vec<ReplicateEffect>,
}

/// Replicates completed so far out of the total scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

pub type ProgressFn<'a> = &'a (dyn Fn(Progress) + Sync);

fn window_mean(rep: &Replicate, source: ShareSource, steps: std::ops::Range<usize>) -> Array2<f64> {
    let shares = match source {
        ShareSource::Realized => &rep.realized_shares,
        ShareSource::Model => &rep.model_shares,
    };
    let n = steps.len() as f64;
    shares.slice(s![.., .., steps]).sum_axis(ndarray::Axis(2)) / n
}

struct Runner<'a> {
    model: &'a OmmModel,
    history: &'a CountPanel,
    end: usize,
    n_sims: usize,
    seed: u64,
    done: AtomicUsize,
    total: usize,
    progress: Option<ProgressFn<'a>>,
}

impl Runner<'_> {
    fn spec(&self, signals: SignalSet) -> Result<SimulationSpec> {
        SimulationSpec::new(self.model.clone(), signals, self.history.clone(), self.end, self.n_sims, self.seed)
    }

    fn run(&self, spec: &SimulationSpec, rep: usize) -> Result<Replicate> {
        let out = simulate_replicate(spec, rep)?;
        let completed = self.done.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some(report) = self.progress {
            report(Progress { completed, total: self.total });
        }
        Ok(out)
    }
}

/// One scenario against its `r = 0` counterpart with shared replicate seeds.
pub fn whatif_run(
    model: &OmmModel,
    signals: &SignalSet,
    history: &CountPanel,
    scenario: &WhatIfScenario,
    progress: Option<ProgressFn<'_>>,
) -> Result<WhatIfResult> {
    let mut out = whatif_sweep(model, signals, history, scenario, &[scenario.r], progress)?;
    Ok(out.remove(0))
}

/// Scenario results for each modulation in `rs`, sharing one `r = 0` baseline.
/// Replicates of all modulations run concurrently.
pub fn whatif_sweep(
    model: &OmmModel,
    signals: &SignalSet,
    history: &CountPanel,
    scenario: &WhatIfScenario,
    rs: &[f64],
    progress: Option<ProgressFn<'_>>,
) -> Result<Vec<WhatIfResult>> {
    if rs.is_empty() {
        return Err(OmmError::InvalidParameter("empty modulation sweep".into()));
    }
    for &r in rs {
        WhatIfScenario { r, ..scenario.clone() }.validate(history.bins())?;
    }
    let window = scenario.window(history.bins());
    let runner = Runner {
        model,
        history,
        end: scenario.end,
        n_sims: scenario.n_sims,
        seed: scenario.seed,
        done: AtomicUsize::new(0),
        total: scenario.n_sims * (1 + rs.iter().filter(|&&r| r != 0.0).count()),
        progress,
    };
    let baseline_spec = runner.spec(signals.clone())?;
    let modulated_specs: Vec<Option<SimulationSpec>> = rs
        .iter()
        .map(|&r| {
            if r == 0.0 {
                return Ok(None);
            }
            let modulated = modulate_intervention(signals, scenario.k_star, r, scenario.changepoint, window.clone())?;
            runner.spec(modulated).map(Some)
        })
        .collect::<Result<_>>()?;

    let start = history.bins() + 1;
    let pre = 0..scenario.changepoint + 1 - start;
    let post = pre.end..scenario.end + 1 - start;
    let summarise = |rep: &Replicate| -> (Array2<f64>, Option<Array2<f64>>) {
        let pre_mean = (!pre.is_empty()).then(|| window_mean(rep, scenario.share_source, pre.clone()));
        (window_mean(rep, scenario.share_source, post.clone()), pre_mean)
    };

    // Jobs: (spec slot, replicate); slot 0 is the baseline.
    let jobs: Vec<(usize, usize)> = std::iter::once(0)
        .chain(modulated_specs.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(i, _)| i + 1))
        .flat_map(|slot| (0..scenario.n_sims).map(move |rep| (slot, rep)))
        .collect();
    let outcomes: Vec<(Array2<f64>, Option<Array2<f64>>)> = jobs
        .par_iter()
        .map(|&(slot, rep)| {
            let spec = if slot == 0 {
                &baseline_spec
            } else {
                modulated_specs[slot - 1].as_ref().expect("scheduled slot has a spec")
            };
            runner.run(spec, rep).map(|r| summarise(&r))
        })
        .collect::<Result<_>>()?;
    let n = scenario.n_sims;
    let slot_of = |slot: usize| -> &[(Array2<f64>, Option<Array2<f64>>)] {
        let pos = jobs.iter().position(|&(s, _)| s == slot).expect("slot scheduled");
        &outcomes[pos..pos + n]
    };
    let baseline = slot_of(0);

    rs.iter()
        .enumerate()
        .map(|(idx, &r)| {
            let modulated = if r == 0.0 { baseline } else { slot_of(idx + 1) };
            assemble(WhatIfScenario { r, ..scenario.clone() }, baseline, modulated)
        })
        .collect()
}

fn percent(new: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| 100.0 * (new - base) / base)
}

fn assemble(
    scenario: WhatIfScenario,
    baseline: &[(Array2<f64>, Option<Array2<f64>>)],
    modulated: &[(Array2<f64>, Option<Array2<f64>>)],
) -> Result<WhatIfResult> {
    let n = baseline.len() as f64;
    let dim = baseline[0].0.dim();
    let mut baseline_share = Array2::zeros(dim);
    let mut modulated_share = Array2::zeros(dim);
    let mut replicates = Vec::with_capacity(baseline.len());
    for ((base, _), (modu, pre)) in baseline.iter().zip(modulated) {
        baseline_share += base;
        modulated_share += modu;
        let percent_change = Array2::from_shape_fn(dim, |cell| percent(modu[cell], base[cell]));
        replicates.push(ReplicateEffect {
            baseline_post: base.clone(),
            modulated_post: modu.clone(),
            modulated_pre: pre.clone(),
            percent_change,
        });
    }
    baseline_share /= n;
    modulated_share /= n;
    let mut percent_change = Array2::zeros(dim);
    let mut spread = Array2::zeros(dim);
    for (cell, slot) in percent_change.indexed_iter_mut() {
        *slot = percent(modulated_share[cell], baseline_share[cell]).ok_or_else(|| {
            OmmError::Degenerate(format!("baseline share of (platform, opinion) {cell:?} is 0 after the changepoint"))
        })?;
        let values: Vec<f64> = replicates.iter().filter_map(|r| r.percent_change[cell]).collect();
        if values.len() > 1 {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
            spread[cell] = var.sqrt();
        }
    }
    Ok(WhatIfResult {
        scenario,
        baseline_share,
        modulated_share,
        percent_change,
        spread,
        replicates,
    })
}
