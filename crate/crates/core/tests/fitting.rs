use ndarray::Array3;
use omm_core::data_io::{generate_synthetic, ParamSource, SignalDef, SyntheticConfig, SyntheticDataset};
use omm_core::estimation::{
    fit_group, fit_tier1, fit_tier1_from, fit_tier2, fit_tier2_from, joint_fit, loglik_tier1_joint, loglik_tier2_joint,
    FitOptions, ParameterTransform,
};
use omm_core::{CountPanel, OmmError};

fn small(seed: u64, samples: usize, alpha: ParamSource) -> SyntheticDataset {
    small_with(seed, samples, alpha, SyntheticConfig::default())
}

fn small_with(seed: u64, samples: usize, alpha: ParamSource, base: SyntheticConfig) -> SyntheticDataset {
    generate_synthetic(&SyntheticConfig {
        bins: 150,
        n_groups: 1,
        n_samples: samples,
        pilot_samples: 5,
        alpha,
        seed,
        ..base
    })
    .unwrap()
}

fn default_alpha() -> ParamSource {
    ParamSource::Uniform { low: 0.0, high: 0.5 }
}

fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn tier1_optimum_is_a_fixed_point() {
    let data = small(1, 4, default_alpha());
    let options = FitOptions::default();
    let first = fit_tier1(&data.signals, &data.groups[0], &options).unwrap();
    assert!(first.diagnostics.converged, "{}", first.diagnostics.message);
    let again = fit_tier1_from(&data.signals, &data.groups[0], &first.params, &options).unwrap();
    assert!((again.loglik - first.loglik).abs() < 1e-6);
    let reevaluated = loglik_tier1_joint(&first.params, &data.signals, &data.groups[0]).unwrap();
    assert!((reevaluated - first.loglik).abs() < 1e-8);
}

#[test]
fn tier2_optimum_is_a_fixed_point() {
    let data = small(2, 4, default_alpha());
    let options = FitOptions::default();
    let t1 = fit_tier1(&data.signals, &data.groups[0], &options).unwrap();
    let t2 = fit_tier2(&data.signals, &data.groups[0], &t1.params, &options).unwrap();
    let again = fit_tier2_from(&data.signals, &data.groups[0], &t1.params, &t2.params, &t2.stats, &options).unwrap();
    assert!((again.loglik - t2.loglik).abs() < 1e-6, "{} vs {}", again.loglik, t2.loglik);
    let reevaluated = loglik_tier2_joint(
        &t2.params,
        &t1.params,
        &t2.stats,
        &data.signals,
        &data.groups[0],
        options.lambda_reg,
    )
    .unwrap();
    assert!((reevaluated - t2.loglik).abs() < 1e-8);
}

#[test]
fn pure_exogenous_data_gives_small_alpha() {
    // A constant S makes cross-excitation by a near-constant volume collinear with μ.
    let base = SyntheticConfig {
        exogenous: SignalDef::Sinusoid {
            amplitude: 0.5,
            frequency: 0.1,
            phase: 0.0,
            offset: 1.0,
        },
        ..SyntheticConfig::default()
    };
    let data = small_with(3, 5, ParamSource::Fixed(vec![0.0; 4]), base);
    let fit = fit_tier1(&data.signals, &data.groups[0], &FitOptions::default()).unwrap();
    assert!(fit.params.alpha.iter().all(|&a| a <= 0.05), "alpha {:?}", fit.params.alpha);
}

#[test]
fn constraints_hold_at_exit_under_both_transforms() {
    let data = small(4, 3, default_alpha());
    for transform in [ParameterTransform::Log, ParameterTransform::Box] {
        let options = FitOptions {
            transform,
            ..FitOptions::default()
        };
        let fit = fit_group(&data.signals, &data.groups[0], &options).unwrap();
        let p1 = &fit.model.params1;
        assert!(p1.mu.iter().all(|&m| m >= 0.0));
        assert!(p1.alpha.iter().all(|&a| a >= 0.0));
        assert!(p1.theta > 0.0 && p1.theta <= 1.0);
        for (p, total) in fit.model.params2.mu_split.totals().iter().enumerate() {
            assert!((total - p1.mu[p]).abs() < 1e-8 * p1.mu[p].max(1.0));
        }
        assert!(non_increasing(&fit.tier1.objective_trace), "{transform:?} tier 1");
        assert!(non_increasing(&fit.tier2.objective_trace), "{transform:?} tier 2");
    }
}

#[test]
fn duplicating_samples_keeps_the_maximiser() {
    let data = small(5, 2, default_alpha());
    // The ridge does not scale with the sample count, so invariance holds without it.
    let options = FitOptions {
        lambda_reg: 0.0,
        ..FitOptions::default()
    };
    let base = fit_group(&data.signals, &data.groups[0], &options).unwrap();
    let doubled: Vec<CountPanel> = data.groups[0].iter().flat_map(|s| [s.clone(), s.clone()]).collect();
    let dup = fit_group(&data.signals, &doubled, &options).unwrap();
    assert!((dup.loglik1 - 2.0 * base.loglik1).abs() < 1e-6 * base.loglik1.abs());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-2);
    let p = (&base.model.params1, &dup.model.params1);
    assert!(p.0.mu.iter().zip(&p.1.mu).all(|(a, b)| close(*a, *b)));
    assert!(p.0.alpha.iter().zip(&p.1.alpha).all(|(a, b)| close(*a, *b)));
    assert!(close(p.0.theta, p.1.theta));
    let q = (&base.model.params2, &dup.model.params2);
    assert!(q.0.gamma.iter().zip(&q.1.gamma).all(|(a, b)| close(*a, *b)));
    assert!(q.0.beta.iter().zip(&q.1.beta).all(|(a, b)| close(*a, *b)));
}

#[test]
fn single_sample_group_reduces_to_two_tier_fit() {
    let data = small(6, 1, default_alpha());
    let options = FitOptions {
        seed: 11,
        ..FitOptions::default()
    };
    let joint = joint_fit(&data.signals, &data.groups, &options).unwrap();
    let t1 = fit_tier1(&data.signals, &data.groups[0], &options).unwrap();
    let t2 = fit_tier2(&data.signals, &data.groups[0], &t1.params, &options).unwrap();
    let fit = &joint.fits[0];
    assert_eq!(fit.model.params1, t1.params);
    assert_eq!(fit.model.params2, t2.params);
    assert_eq!(fit.loglik1, t1.loglik);
    assert_eq!(fit.loglik2, t2.loglik);
    assert_eq!(joint.summary["alpha"].mean, t1.params.alpha.iter().copied().collect::<Vec<_>>());
}

#[test]
fn single_opinion_market_is_rejected() {
    let data = small(7, 1, default_alpha());
    let panel = &data.groups[0][0];
    let totals = panel.platform_totals();
    let single = CountPanel::new(Array3::from_shape_fn((2, 1, panel.bins()), |(p, _, t)| totals[[p, t]])).unwrap();
    let signals = data.signals.clone();
    let t1 = fit_tier1(&signals, std::slice::from_ref(&single), &FitOptions::default()).unwrap();
    let err = fit_tier2(&signals, &[single], &t1.params, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, OmmError::Degenerate(_)), "{err}");
}

#[test]
fn invalid_options_are_rejected() {
    let data = small(8, 1, default_alpha());
    for options in [
        FitOptions { max_iterations: 0, ..FitOptions::default() },
        FitOptions { gradient_tolerance: 0.0, ..FitOptions::default() },
        FitOptions { lambda_reg: -1.0, ..FitOptions::default() },
    ] {
        assert!(fit_tier1(&data.signals, &data.groups[0], &options).is_err());
    }
}
