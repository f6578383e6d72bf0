//! Predictive metrics, parameter-recovery error, and the temporal holdout harness.

use std::ops::RangeInclusive;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};
use crate::estimation::{fit_group, loglik_tier2_window, parameter_groups, FitOptions, FitResult};
use crate::share::OmmModel;
use crate::simulation::{predict, Prediction, ShareAggregation, SimulationSpec};
use crate::types::{CountPanel, SignalSet};

/// Additive smoothing applied to both share vectors before KL.
pub const KL_EPSILON: f64 = 1e-6;

/// Observed window `1..=obs_end` followed by the prediction window `obs_end+1..=pred_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub obs_end: usize,
    pub pred_end: usize,
}

impl HoldoutSplit {
    pub fn new(obs_end: usize, pred_end: usize) -> Result<Self> {
        if obs_end == 0 {
            return Err(OmmError::InvalidParameter("observed window is empty".into()));
        }
        if pred_end <= obs_end {
            return Err(OmmError::InvalidParameter(format!(
                "prediction window {}..={pred_end} is empty",
                obs_end + 1
            )));
        }
        Ok(Self { obs_end, pred_end })
    }

    pub fn obs(&self) -> RangeInclusive<usize> {
        1..=self.obs_end
    }

    pub fn pred(&self) -> RangeInclusive<usize> {
        self.obs_end + 1..=self.pred_end
    }

    pub fn pred_len(&self) -> usize {
        self.pred_end - self.obs_end
    }
}

/// Symmetric mean absolute percentage error over platforms and bins (P×H
/// arrays), in percent. A bin where both values are zero contributes 0.
pub fn smape(predicted: &Array2<f64>, actual: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != actual.dim() {
        return Err(OmmError::DimensionMismatch(format!(
            "predicted {:?} vs actual {:?}",
            predicted.dim(),
            actual.dim()
        )));
    }
    let (p_n, h) = actual.dim();
    if p_n == 0 || h == 0 {
        return Err(OmmError::InvalidParameter("SMAPE over an empty window".into()));
    }
    let mut total = 0.0;
    for p in 0..p_n {
        let mut acc = 0.0;
        for t in 0..h {
            let (f, a) = (predicted[[p, t]], actual[[p, t]]);
            if !f.is_finite() || !a.is_finite() {
                return Err(OmmError::NonFinite("SMAPE input".into()));
            }
            let denom = f.abs() + a.abs();
            if denom > 0.0 {
                acc += (f - a).abs() / denom;
            }
        }
        total += 100.0 * acc / h as f64;
    }
    Ok(total / p_n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlForm {
    /// `Σ s·log(s/ŝ)`
    #[default]
    Standard,
    /// `Σ s·log(ŝ/s)`, the negated form.
    Printed,
}

fn smoothed(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x + KL_EPSILON).sum();
    v.iter().map(|x| (x + KL_EPSILON) / total).collect()
}

/// KL divergence between an actual and a predicted share vector after
/// ε-smoothing and renormalisation of both.
pub fn kl_shares(actual: &[f64], predicted: &[f64], form: KlForm) -> Result<f64> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(OmmError::DimensionMismatch(format!(
            "share vectors of length {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(OmmError::InvalidParameter("shares must be finite and nonnegative".into()));
    }
    let (a, b) = (smoothed(actual), smoothed(predicted));
    let kl: f64 = a.iter().zip(&b).map(|(x, y)| x * (x / y).ln()).sum();
    Ok(match form {
        KlForm::Standard => kl.max(0.0),
        KlForm::Printed => -kl.max(0.0),
    })
}

/// Per-platform, per-bin KL between observed shares (`counts`, P×M×H) and
/// predicted shares (P×M×H). Bins without posts have no observed shares and are `None`.
pub fn kl_series(counts: &Array3<u64>, predicted: &Array3<f64>, form: KlForm) -> Result<Vec<Vec<Option<f64>>>> {
    if counts.dim() != predicted.dim() {
        return Err(OmmError::DimensionMismatch("observed and predicted share panels differ".into()));
    }
    let (p_n, _, h) = counts.dim();
    (0..p_n)
        .map(|p| {
            (0..h)
                .map(|t| {
                    let row = counts.slice(s![p, .., t]);
                    let total: u64 = row.sum();
                    if total == 0 {
                        return Ok(None);
                    }
                    let actual: Vec<f64> = row.iter().map(|&n| n as f64 / total as f64).collect();
                    kl_shares(&actual, &predicted.slice(s![p, .., t]).to_vec(), form).map(Some)
                })
                .collect()
        })
        .collect()
}

/// Per-type RMSE: the root mean squared componentwise error of each estimate
/// set, averaged over estimate sets.
pub fn rmse_by_type(estimates: &[OmmModel], truth: &OmmModel) -> Result<Vec<(String, f64)>> {
    if estimates.is_empty() {
        return Err(OmmError::InvalidParameter("no estimates".into()));
    }
    let truth_groups = parameter_groups(truth);
    let mut sums = vec![0.0; truth_groups.len()];
    for est in estimates {
        let groups = parameter_groups(est);
        for (t, ((name, e), (_, tv))) in groups.iter().zip(&truth_groups).enumerate() {
            if e.len() != tv.len() {
                return Err(OmmError::DimensionMismatch(format!(
                    "{name}: estimate has {} entries, truth {}",
                    e.len(),
                    tv.len()
                )));
            }
            if e.is_empty() {
                continue;
            }
            let mse = e.iter().zip(tv).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / e.len() as f64;
            sums[t] += mse.sqrt();
        }
    }
    Ok(truth_groups
        .iter()
        .zip(sums)
        .map(|((name, _), s)| (name.to_string(), s / estimates.len() as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldoutOptions {
    pub fit: FitOptions,
    pub replicates: usize,
    pub seed: u64,
    pub kl_form: KlForm,
    pub share_aggregation: ShareAggregation,
    /// Fit and predict without the intervention series.
    pub no_interventions: bool,
}

impl Default for HoldoutOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            replicates: 5,
            seed: 0,
            kl_form: KlForm::Standard,
            share_aggregation: ShareAggregation::MeanOfRealized,
            no_interventions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub split: HoldoutSplit,
    pub options: HoldoutOptions,
    /// Absent when an existing model was evaluated.
    pub fit: Option<FitResult>,
    pub smape: f64,
    /// SMAPE of predicting each platform's observed-window mean volume.
    pub baseline_smape: f64,
    /// Per platform, per prediction bin.
    pub kl: Vec<Vec<Option<f64>>>,
    pub mean_kl: Vec<f64>,
    /// Unpenalised tier-2 log-likelihood on the prediction window, conditioned on observed history.
    pub holdout_loglik2: f64,
    pub actual_volumes: Array2<f64>,
    pub prediction: Prediction,
}

fn check_data(signals: &SignalSet, counts: &CountPanel, split: &HoldoutSplit) -> Result<()> {
    if counts.bins() < split.pred_end || signals.bins() < split.pred_end {
        return Err(OmmError::TimeOutOfRange {
            t: split.pred_end,
            bins: counts.bins().min(signals.bins()),
        });
    }
    Ok(())
}

fn working_signals(signals: &SignalSet, options: &HoldoutOptions) -> SignalSet {
    if options.no_interventions {
        signals.without_interventions()
    } else {
        signals.clone()
    }
}

/// Fits on the observed window, then evaluates on the prediction window.
pub fn run_holdout(
    signals: &SignalSet,
    counts: &CountPanel,
    split: HoldoutSplit,
    options: &HoldoutOptions,
) -> Result<HoldoutReport> {
    check_data(signals, counts, &split)?;
    let signals = working_signals(signals, options);
    let observed = counts.truncated(split.obs_end)?;
    let fit = fit_group(&signals, std::slice::from_ref(&observed), &options.fit).map_err(|e| e.in_stage("fit"))?;
    let mut report = evaluate_model(&fit.model, &signals, counts, split, options)?;
    report.fit = Some(fit);
    Ok(report)
}

/// Holdout evaluation of a given model, without fitting.
pub fn evaluate_model(
    model: &OmmModel,
    signals: &SignalSet,
    counts: &CountPanel,
    split: HoldoutSplit,
    options: &HoldoutOptions,
) -> Result<HoldoutReport> {
    check_data(signals, counts, &split)?;
    if options.replicates == 0 {
        return Err(OmmError::InvalidParameter("replicate count must be ≥ 1".into()));
    }
    let signals = working_signals(signals, options);
    let signals = signals.truncated(split.pred_end)?;
    let counts = counts.truncated(split.pred_end)?;
    let p_n = counts.platforms();
    let mut spec = SimulationSpec::new(
        model.clone(),
        signals.clone(),
        counts.truncated(split.obs_end)?,
        split.pred_end,
        options.replicates,
        options.seed,
    )
    .map_err(|e| e.in_stage("predict"))?;
    spec.share_aggregation = options.share_aggregation;
    let prediction = predict(&spec).map_err(|e| e.in_stage("predict"))?;

    let totals = counts.platform_totals().mapv(|n| n as f64);
    let actual_volumes = totals.slice(s![.., split.obs_end..]).to_owned();
    let smape_value = smape(&prediction.volumes, &actual_volumes)?;
    let baseline = Array2::from_shape_fn((p_n, split.pred_len()), |(p, _)| {
        totals.slice(s![p, ..split.obs_end]).mean().unwrap_or(0.0)
    });
    let baseline_smape = smape(&baseline, &actual_volumes)?;

    let observed_counts = counts.counts().slice(s![.., .., split.obs_end..]).to_owned();
    let kl = kl_series(&observed_counts, &prediction.shares, options.kl_form)?;
    let mean_kl = kl
        .iter()
        .map(|row| {
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    let holdout_loglik2 = if model.opinions() > 1 {
        loglik_tier2_window(
            &model.params2,
            &model.params1,
            &model.stats,
            &signals,
            std::slice::from_ref(&counts),
            0.0,
            split.obs_end..split.pred_end,
        )
        .map_err(|e| e.in_stage("holdout likelihood"))?
    } else {
        0.0
    };
    Ok(HoldoutReport {
        split,
        options: options.clone(),
        fit: None,
        smape: smape_value,
        baseline_smape,
        kl,
        mean_kl,
        holdout_loglik2,
        actual_volumes,
        prediction,
    })
}
