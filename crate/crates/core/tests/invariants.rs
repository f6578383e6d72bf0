mod common;

use common::{instance, Instance};
use omm_core::simulation::{predict, simulate_all, SimulationSpec};
use omm_core::volume::{conditional_intensity_series, platform_intensity, platform_intensity_series};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn intensity_never_below_baseline(seed in 0u64..10_000) {
        let Instance { model, signals, counts } = instance(seed, 2, 3, 2, 40);
        let lam = platform_intensity_series(&model.params1, &signals, &counts).unwrap();
        for ((p, idx), v) in lam.indexed_iter() {
            prop_assert!(*v >= model.params1.baseline(&signals, p, idx));
        }
    }

    #[test]
    fn conditional_intensities_add_up(seed in 0u64..10_000) {
        let Instance { model, signals, counts } = instance(seed, 2, 3, 2, 40);
        let lam = platform_intensity_series(&model.params1, &signals, &counts).unwrap();
        let cond = conditional_intensity_series(&model.params2.mu_split, &model.params1, &signals, &counts).unwrap();
        for ((p, idx), v) in lam.indexed_iter() {
            let sum: f64 = (0..3).map(|j| cond[[p, j, idx]]).sum();
            prop_assert!((sum - v).abs() <= 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn extra_events_never_lower_intensity(seed in 0u64..10_000, bump_p in 0usize..2, bump_i in 0usize..3, at in 0usize..39, extra in 1u64..50) {
        let Instance { model, signals, counts } = instance(seed, 2, 3, 2, 40);
        let mut more = counts.clone();
        more.counts_mut()[[bump_p, bump_i, at]] += extra;
        let a = platform_intensity_series(&model.params1, &signals, &counts).unwrap();
        let b = platform_intensity_series(&model.params1, &signals, &more).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn recurrence_matches_naive_sum(seed in 0u64..10_000) {
        let Instance { model, signals, counts } = instance(seed, 2, 2, 1, 60);
        let fast = platform_intensity_series(&model.params1, &signals, &counts).unwrap();
        for p in 0..2 {
            for t in 1..=60 {
                let naive = platform_intensity(&model.params1, &signals, &counts, p, t).unwrap();
                prop_assert!((fast[[p, t - 1]] - naive).abs() <= 1e-10 * naive.max(1.0));
            }
        }
    }

    #[test]
    fn simulated_shares_stay_on_the_simplex(seed in 0u64..10_000) {
        let Instance { model, signals, counts } = instance(seed, 2, 3, 2, 30);
        let history = counts.truncated(10).unwrap();
        let spec = SimulationSpec::new(model, signals, history.clone(), 30, 3, seed).unwrap();
        for rep in simulate_all(&spec).unwrap() {
            for p in 0..2 {
                for step in 0..20 {
                    let m: f64 = (0..3).map(|i| rep.model_shares[[p, i, step]]).sum();
                    let r: f64 = (0..3).map(|i| rep.realized_shares[[p, i, step]]).sum();
                    prop_assert!((m - 1.0).abs() < 1e-9 && (r - 1.0).abs() < 1e-9);
                }
            }
            prop_assert_eq!(
                rep.counts.counts().slice(ndarray::s![.., .., ..10]),
                history.counts().view()
            );
        }
    }
}

#[test]
fn one_step_mean_matches_intensity() {
    let Instance { model, signals, counts } = instance(77, 2, 2, 2, 30);
    let history = counts.truncated(20).unwrap();
    let lambda = platform_intensity(&model.params1, &signals, &history, 0, 21).unwrap();
    let lambda1 = platform_intensity(&model.params1, &signals, &history, 1, 21).unwrap();
    let spec = SimulationSpec::new(model, signals, history, 21, 10_000, 5).unwrap();
    let pred = predict(&spec).unwrap();
    for (p, lam) in [(0, lambda), (1, lambda1)] {
        let se = (lam / 10_000.0).sqrt();
        assert!((pred.volumes[[p, 0]] - lam).abs() < 3.0 * se, "{} vs {lam}", pred.volumes[[p, 0]]);
    }
}

#[test]
fn equal_seeds_give_identical_replicates() {
    let Instance { model, signals, .. } = instance(5, 2, 2, 2, 30);
    let spec = SimulationSpec::from_scratch(model, signals, 30, 2, 9).unwrap();
    assert_eq!(simulate_all(&spec).unwrap(), simulate_all(&spec).unwrap());
}
