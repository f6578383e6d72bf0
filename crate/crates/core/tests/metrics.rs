mod common;

use common::instance;
use ndarray::{Array2, Array3};
use omm_core::data_io::{generate_synthetic, SyntheticConfig};
use omm_core::evaluation::{evaluate_model, kl_series, kl_shares, rmse_by_type, smape, HoldoutOptions, HoldoutSplit, KlForm};
use proptest::prelude::*;

fn panel(values: Vec<f64>, p: usize) -> Array2<f64> {
    let h = values.len() / p;
    Array2::from_shape_vec((p, h), values).unwrap()
}

proptest! {
    #[test]
    fn smape_bounded_and_symmetric(a in prop::collection::vec(0.0f64..1e4, 12), b in prop::collection::vec(0.0f64..1e4, 12)) {
        let (x, y) = (panel(a, 2), panel(b, 2));
        let v = smape(&x, &y).unwrap();
        prop_assert!((0.0..=100.0).contains(&v));
        prop_assert_eq!(v, smape(&y, &x).unwrap());
        prop_assert_eq!(smape(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn kl_nonnegative_and_relabel_invariant(a in prop::collection::vec(0.0f64..1.0, 4), b in prop::collection::vec(0.001f64..1.0, 4), shift in 1usize..4) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| if s > 0.0 { x / s } else { 0.25 }).collect::<Vec<_>>() };
        let (s, t) = (norm(&a), norm(&b));
        let kl = kl_shares(&s, &t, KlForm::Standard).unwrap();
        prop_assert!(kl >= 0.0);
        let mut rs = s.clone();
        let mut rt = t.clone();
        rs.rotate_left(shift);
        rt.rotate_left(shift);
        prop_assert!((kl - kl_shares(&rs, &rt, KlForm::Standard).unwrap()).abs() < 1e-12);
        prop_assert_eq!(kl_shares(&s, &s, KlForm::Standard).unwrap(), 0.0);
    }

    #[test]
    fn rmse_ignores_estimate_order(seeds in prop::collection::vec(0u64..1000, 3), rot in 1usize..3) {
        let truth = instance(seeds[0] + 5000, 2, 2, 2, 10).model;
        let mut estimates: Vec<_> = seeds.iter().map(|&s| instance(s, 2, 2, 2, 10).model).collect();
        let a = rmse_by_type(&estimates, &truth).unwrap();
        estimates.rotate_left(rot);
        let b = rmse_by_type(&estimates, &truth).unwrap();
        for ((na, va), (nb, vb)) in a.iter().zip(&b) {
            prop_assert_eq!(na, nb);
            prop_assert!((va - vb).abs() < 1e-12);
        }
    }
}

#[test]
fn kl_limit_and_empty_bins() {
    let v = kl_shares(&[1.0, 0.0], &[0.5, 0.5], KlForm::Standard).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-4);
    let counts = Array3::from_shape_vec((1, 2, 2), vec![3u64, 0, 0, 0]).unwrap();
    let predicted = Array3::from_elem((1, 2, 2), 0.5);
    let series = kl_series(&counts, &predicted, KlForm::Standard).unwrap();
    assert_eq!(series[0][1], None);
    assert!((series[0][0].unwrap() - v).abs() < 1e-12);
}

#[test]
fn rmse_examples() {
    let truth = instance(1, 2, 2, 2, 10).model;
    let zero = rmse_by_type(std::slice::from_ref(&truth), &truth).unwrap();
    assert!(zero.iter().all(|(_, v)| *v == 0.0));
    let mut off = truth.clone();
    off.params1.theta += 0.2;
    let r = rmse_by_type(&[off], &truth).unwrap();
    for (name, v) in r {
        let want = if name == "theta" { 0.2 } else { 0.0 };
        assert!((v - want).abs() < 1e-12, "{name}: {v}");
    }
}

#[test]
fn generating_model_beats_the_constant_mean_baseline() {
    let data = generate_synthetic(&SyntheticConfig {
        bins: 200,
        n_groups: 1,
        n_samples: 1,
        pilot_samples: 5,
        seed: 12,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let split = HoldoutSplit::new(150, 200).unwrap();
    let options = HoldoutOptions {
        replicates: 20,
        ..HoldoutOptions::default()
    };
    let report = evaluate_model(&data.truth, &data.signals, &data.groups[0][0], split, &options).unwrap();
    assert!(report.smape < report.baseline_smape, "{} vs {}", report.smape, report.baseline_smape);
    assert_eq!(report.kl.len(), 2);
    assert_eq!(report.kl[0].len(), 50);
    assert_eq!(report.prediction.replicate_volumes.len(), 20);
    assert!(report.holdout_loglik2.is_finite());
}
