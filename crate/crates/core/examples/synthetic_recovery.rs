//! Joint fitting on the default synthetic configuration, reporting per-type
//! mean error and RMSE against the generating parameters.
//!
//! cargo run --release -p omm-core --example synthetic_recovery -- [bins] [groups] [samples]

use omm_core::data_io::{generate_synthetic, SyntheticConfig};
use omm_core::estimation::{joint_fit, parameter_groups, FitOptions};
use omm_core::evaluation::rmse_by_type;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let config = SyntheticConfig {
        bins: args.first().copied().unwrap_or(300),
        n_groups: args.get(1).copied().unwrap_or(20),
        n_samples: args.get(2).copied().unwrap_or(20),
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&config)?;
    let started = std::time::Instant::now();
    let fit = joint_fit(&data.signals, &data.groups, &FitOptions::default())?;
    println!("fitted {} groups in {:.1?}", fit.fits.len(), started.elapsed());
    println!(
        "converged: {}/{}",
        fit.fits.iter().filter(|f| f.converged).count(),
        fit.fits.len()
    );

    for (name, truth) in parameter_groups(&data.truth) {
        let mean = &fit.summary[name].mean;
        let diffs: Vec<String> = mean.iter().zip(&truth).map(|(m, t)| format!("{:+.3}", m - t)).collect();
        println!("{name:9} truth {truth:.3?}\n{:9} mean-truth [{}]", "", diffs.join(", "));
    }
    let models: Vec<_> = fit.fits.iter().map(|f| f.model.clone()).collect();
    for (name, value) in rmse_by_type(&models, &data.truth)? {
        println!("rmse {name:9} {value:.4}");
    }
    Ok(())
}
