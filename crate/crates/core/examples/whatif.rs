//! Sweeps the modulation of one intervention after a changepoint and prints
//! the percent change in mean post-changepoint shares.
//!
//! cargo run --release -p omm-core --example whatif

use omm_core::data_io::{generate_synthetic, ParamSource, SyntheticConfig};
use omm_core::intervention::{whatif_sweep, ShareSource, WhatIfScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(&SyntheticConfig {
        bins: 150,
        n_groups: 1,
        n_samples: 1,
        gamma: ParamSource::Fixed(vec![-1.0, 0.0, 0.5, 0.0, -0.5, 0.0, 1.0, 0.0]),
        ..SyntheticConfig::default()
    })?;
    let history = data.groups[0][0].truncated(100)?;
    let scenario = WhatIfScenario {
        k_star: 0,
        r: 0.0,
        changepoint: 100,
        n_sims: 40,
        end: 150,
        seed: 1,
        mean_window: None,
        share_source: ShareSource::Realized,
    };
    let rs = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let results = whatif_sweep(&data.truth, &data.signals, &history, &scenario, &rs, None)?;
    println!("    r  platform  opinion  baseline  modulated  change%  spread");
    for result in &results {
        let (p_n, m_n) = result.percent_change.dim();
        for p in 0..p_n {
            for i in 0..m_n {
                println!(
                    "{:5.1}  {p:8}  {i:7}  {:8.4}  {:9.4}  {:+7.2}  {:6.2}",
                    result.scenario.r,
                    result.baseline_share[[p, i]],
                    result.modulated_share[[p, i]],
                    result.percent_change[[p, i]],
                    result.spread[[p, i]]
                );
            }
        }
    }
    Ok(())
}
