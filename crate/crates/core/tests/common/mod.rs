#![allow(dead_code)]

use ndarray::{Array2, Array3, Array4};
use omm_core::estimation::fit_feature_stats;
use omm_core::rng::rng_from_seed;
use omm_core::{CountPanel, FeatureStats, MuSplit, OmmModel, SignalSet, Tier1Params, Tier2Params};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub model: OmmModel,
    pub signals: SignalSet,
    pub counts: CountPanel,
}

pub fn random_signals(rng: &mut ChaCha8Rng, k: usize, t: usize) -> SignalSet {
    let s: Vec<f64> = (0..t).map(|_| rng.random_range(0.5..1.5)).collect();
    let x = Array2::from_shape_fn((k, t), |_| rng.random_range(0.0..10.0));
    SignalSet::shared(s, x).unwrap()
}

pub fn random_counts(rng: &mut ChaCha8Rng, p: usize, m: usize, t: usize, high: u64) -> CountPanel {
    CountPanel::new(Array3::from_shape_fn((p, m, t), |_| rng.random_range(0..high))).unwrap()
}

/// Random parameters with coupling in `[-c, c]`; statistics fitted on `counts`.
pub fn random_model(rng: &mut ChaCha8Rng, p: usize, m: usize, k: usize, signals: &SignalSet, counts: &CountPanel, c: f64) -> OmmModel {
    let split = Array2::from_shape_fn((p, m), |_| rng.random_range(1.0..8.0));
    let mu = split.sum_axis(ndarray::Axis(1));
    let alpha = Array2::from_shape_fn((p, p), |_| rng.random_range(0.0..0.8 / p as f64));
    let theta = rng.random_range(0.2..0.9);
    let params1 = Tier1Params::new(mu.clone(), alpha, theta).unwrap();
    let split = MuSplit::new(split, &mu).unwrap();
    let gamma = Array3::from_shape_fn((p, m, k), |_| rng.random_range(-c..c));
    let beta = Array4::from_shape_fn((p, p, m, m), |_| rng.random_range(-c..c));
    let stats = fit_feature_stats(&split, &params1, signals, std::slice::from_ref(counts))
        .map(|(s, _)| s)
        .unwrap_or_else(|_| FeatureStats::identity(p, m, k));
    OmmModel::new(params1, Tier2Params::new(gamma, beta, split).unwrap(), stats).unwrap()
}

pub fn instance(seed: u64, p: usize, m: usize, k: usize, t: usize) -> Instance {
    let mut rng = rng_from_seed(seed);
    let signals = random_signals(&mut rng, k, t);
    let counts = random_counts(&mut rng, p, m, t, 25);
    let model = random_model(&mut rng, p, m, k, &signals, &counts, 0.5);
    Instance { model, signals, counts }
}

/// `|a − b| ≤ rel·max(|a|, |b|)` or `|a − b| ≤ abs`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let d = (a - b).abs();
    d <= abs || d <= rel * a.abs().max(b.abs())
}
