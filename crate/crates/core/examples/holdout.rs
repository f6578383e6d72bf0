//! Temporal holdout: fit on the first bins, predict the rest, and compare
//! against a constant-mean predictor and the fit without interventions.
//!
//! cargo run --release -p omm-core --example holdout

use omm_core::data_io::{generate_synthetic, ParamSource, SignalDef, SyntheticConfig};
use omm_core::evaluation::{run_holdout, HoldoutOptions, HoldoutSplit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(&SyntheticConfig {
        bins: 200,
        n_groups: 1,
        n_samples: 1,
        gamma: ParamSource::Fixed(vec![1.0, -0.5, -1.0, 0.5, -0.8, 0.6, 0.8, -0.6]),
        exogenous: SignalDef::Sinusoid {
            amplitude: 0.6,
            frequency: 0.08,
            phase: 0.0,
            offset: 1.0,
        },
        seed: 31,
        ..SyntheticConfig::default()
    })?;
    let counts = &data.groups[0][0];
    let split = HoldoutSplit::new(150, 200)?;
    for no_interventions in [false, true] {
        let options = HoldoutOptions {
            no_interventions,
            ..HoldoutOptions::default()
        };
        let report = run_holdout(&data.signals, counts, split, &options)?;
        println!(
            "{:18} SMAPE {:6.2} (constant mean {:6.2})  mean KL {:.4?}  holdout L2 {:.1}",
            if no_interventions { "without X" } else { "with X" },
            report.smape,
            report.baseline_smape,
            report.mean_kl,
            report.holdout_loglik2
        );
    }
    Ok(())
}
