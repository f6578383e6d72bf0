//! Writes a dataset directory and a fitted model document, reads both back
//! and checks they round-trip.
//!
//! cargo run --release -p omm-core --example dataset_io -- [dir]

use omm_core::data_io::{generate_synthetic, load_dataset, load_model, save_dataset, save_model, SyntheticConfig};
use omm_core::estimation::{fit_group, FitOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("omm-dataset-io"),
    };
    let data = generate_synthetic(&SyntheticConfig {
        bins: 80,
        n_groups: 1,
        n_samples: 1,
        ..SyntheticConfig::default()
    })?;
    let bundle = data.bundles()?.remove(0);
    save_dataset(&bundle, dir.join("sample"))?;
    let loaded = load_dataset(dir.join("sample"))?;
    assert_eq!(loaded, bundle);
    println!("dataset: {:?} in {}", loaded.dimensions(), dir.join("sample").display());

    let fit = fit_group(&loaded.signals, std::slice::from_ref(&loaded.counts), &FitOptions {
        n_restarts: 1,
        ..FitOptions::default()
    })?;
    save_model(&fit, dir.join("model.json"))?;
    assert_eq!(load_model(dir.join("model.json"))?, fit);
    println!("model: {} (L1 {:.2}, L2 {:.2})", dir.join("model.json").display(), fit.loglik1, fit.loglik2);
    Ok(())
}
