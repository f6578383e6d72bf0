//! Fits one group of panels sharing the same signals and prints the
//! estimates next to the generating parameters.
//!
//! cargo run --release -p omm-core --example fit_group -- [bins] [samples]

use omm_core::data_io::{generate_synthetic, SyntheticConfig};
use omm_core::estimation::{fit_group, parameter_groups, FitOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let data = generate_synthetic(&SyntheticConfig {
        bins: args.first().copied().unwrap_or(200),
        n_groups: 1,
        n_samples: args.get(1).copied().unwrap_or(10),
        seed: 3,
        ..SyntheticConfig::default()
    })?;
    let fit = fit_group(&data.signals, &data.groups[0], &FitOptions::default())?;
    println!(
        "L1 {:.2}  L2 {:.2}  converged {}  spectral radius {:.3}",
        fit.loglik1,
        fit.loglik2,
        fit.converged,
        fit.model.params1.spectral_radius()
    );
    let truth = parameter_groups(&data.truth);
    for ((name, est), (_, want)) in parameter_groups(&fit.model).into_iter().zip(truth) {
        println!("{name:9} fit   {est:.3?}\n{:9} truth {want:.3?}", "");
    }
    for w in &fit.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
