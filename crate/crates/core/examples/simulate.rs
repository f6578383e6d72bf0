//! Continues an observed prefix with the fitted-form model and prints the
//! replicate-averaged volumes and shares.
//!
//! cargo run --release -p omm-core --example simulate

use omm_core::data_io::{generate_synthetic, SyntheticConfig};
use omm_core::simulation::{predict, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(&SyntheticConfig {
        bins: 120,
        n_groups: 1,
        n_samples: 1,
        ..SyntheticConfig::default()
    })?;
    let observed = &data.groups[0][0];
    let spec = SimulationSpec::new(data.truth.clone(), data.signals.clone(), observed.truncated(100)?, 120, 20, 9)?;
    let prediction = predict(&spec)?;
    println!("bin  platform  predicted  actual  shares");
    for step in (0..spec.horizon()).step_by(4) {
        let t = spec.start + step;
        for p in 0..data.truth.platforms() {
            let shares: Vec<f64> = (0..data.truth.opinions()).map(|i| prediction.shares[[p, i, step]]).collect();
            println!(
                "{t:3}  {p:8}  {:9.2}  {:6}  {shares:.3?}",
                prediction.volumes[[p, step]],
                observed.total(p, t - 1)
            );
        }
    }
    Ok(())
}
