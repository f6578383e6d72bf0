mod common;

use common::{close, instance, Instance};
use ndarray::{Array3, Array4};
use omm_core::intervention::{elasticities, endogenous_elasticity, intervention_elasticity};
use omm_core::share::{shares_from_tendencies, tendencies_into};
use omm_core::{FeaturePanel, OmmModel};
use proptest::prelude::*;

fn shares(model: &OmmModel, features: &FeaturePanel, p: usize, idx: usize) -> Vec<f64> {
    let mut t = vec![0.0; model.opinions()];
    tendencies_into(&model.params2, features, p, idx, &mut t);
    shares_from_tendencies(&t).unwrap()
}

/// `((s₊ − s₋)/s)/(2δ)` for a relative change `±δ` of the raw feature.
fn numeric(model: &OmmModel, features: &FeaturePanel, p: usize, i: usize, idx: usize, set: impl Fn(&mut FeaturePanel, f64)) -> f64 {
    let delta = 1e-3;
    let base = shares(model, features, p, idx)[i];
    let mut up = features.clone();
    set(&mut up, 1.0 + delta);
    let mut down = features.clone();
    set(&mut down, 1.0 - delta);
    let diff = shares(model, &up, p, idx)[i] - shares(model, &down, p, idx)[i];
    diff / base / (2.0 * delta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn closed_forms_match_finite_differences(seed in 0u64..10_000, t in 2usize..30) {
        let Instance { model, signals, counts } = instance(seed, 2, 3, 2, 30);
        let features = model.features(&signals, &counts).unwrap();
        let idx = t - 1;
        for p in 0..2 {
            for i in 0..3 {
                for q in 0..2 {
                    for j in 0..3 {
                        let v = features.lam_raw[[q, j, idx]];
                        let stats = features.stats.clone();
                        let num = numeric(&model, &features, p, i, idx, |f, scale| {
                            f.lam_raw[[q, j, idx]] = v * scale;
                            f.lam_cond[[q, j, idx]] = stats.standardize_lam(q, j, v * scale);
                        });
                        let e = endogenous_elasticity(&model, &features, p, i, q, j, t).unwrap().unwrap();
                        prop_assert!(close(e, num, 1e-3, 1e-9), "endogenous {e} vs {num}");
                    }
                }
                for k in 0..2 {
                    let v = features.xbar_raw[[k, idx]];
                    let stats = features.stats.clone();
                    let num = numeric(&model, &features, p, i, idx, |f, scale| {
                        f.xbar_raw[[k, idx]] = v * scale;
                        f.xbar_std[[k, idx]] = stats.standardize_x(k, v * scale);
                    });
                    let e = intervention_elasticity(&model, &features, p, i, k, t).unwrap().unwrap();
                    prop_assert!(close(e, num, 1e-3, 1e-9), "intervention {e} vs {num}");
                }
            }
        }
    }

    #[test]
    fn share_weighted_elasticities_vanish(seed in 0u64..10_000) {
        let Instance { model, signals, counts } = instance(seed, 2, 4, 2, 25);
        let features = model.features(&signals, &counts).unwrap();
        let report = elasticities(&model, &signals, &counts, 2..=25).unwrap();
        for step in 0..24 {
            for p in 0..2 {
                let s = shares(&model, &features, p, step + 1);
                for q in 0..2 {
                    for j in 0..4 {
                        let sum: f64 = (0..4).map(|i| s[i] * report.endogenous[[p, q, i, j, step]].unwrap()).sum();
                        prop_assert!(sum.abs() < 1e-10);
                    }
                }
                for k in 0..2 {
                    let sum: f64 = (0..4).map(|i| s[i] * report.intervention[[p, i, k, step]].unwrap()).sum();
                    prop_assert!(sum.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_coupling_nullity(seed in 0u64..10_000) {
        let Instance { mut model, signals, counts } = instance(seed, 2, 3, 2, 20);
        model.params2.beta = Array4::zeros(model.params2.beta.dim());
        let report = elasticities(&model, &signals, &counts, 1..=20).unwrap();
        prop_assert!(report.endogenous.iter().flatten().all(|v| *v == 0.0));
        model.params2.gamma = Array3::zeros(model.params2.gamma.dim());
        let report = elasticities(&model, &signals, &counts, 1..=20).unwrap();
        prop_assert!(report.intervention.iter().flatten().all(|v| *v == 0.0));
    }
}

#[test]
fn undefined_cells_are_flagged_with_coverage() {
    let Instance { model, signals, counts } = instance(1, 2, 2, 2, 12);
    let report = elasticities(&model, &signals, &counts, 1..=12).unwrap();
    // X̄ has no past at t = 1.
    assert!(report.intervention.slice(ndarray::s![.., .., .., 0]).iter().all(Option::is_none));
    let cov = &report.intervention_mean.coverage;
    assert!(cov.iter().all(|c| (c - 11.0 / 12.0).abs() < 1e-12));
    let late = report.average_intervention(2..=12).unwrap();
    assert!(late.coverage.iter().all(|c| *c == 1.0));
    assert!(report.average_intervention(0..=3).is_err());
}

#[test]
fn constant_elasticity_averages_to_itself() {
    // One opinion per platform pinned at share 1: every elasticity is exactly 0.
    let Instance { model, signals, counts } = instance(2, 1, 1, 1, 10);
    let report = elasticities(&model, &signals, &counts, 2..=10).unwrap();
    assert!(report.endogenous_mean.mean.iter().all(|v| *v == Some(0.0)));
}
