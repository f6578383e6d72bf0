//! Share elasticities of a model over an observed window, averaged over bins.
//!
//! cargo run --release -p omm-core --example elasticity

use omm_core::data_io::{generate_synthetic, SyntheticConfig};
use omm_core::intervention::elasticities;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(&SyntheticConfig {
        bins: 150,
        n_groups: 1,
        n_samples: 1,
        ..SyntheticConfig::default()
    })?;
    let model = &data.truth;
    let report = elasticities(model, &data.signals, &data.groups[0][0], 2..=150)?;
    let (p_n, m_n, k_n) = (model.platforms(), model.opinions(), model.interventions());
    println!("share of (p, i) w.r.t. volume of (q, j)");
    for p in 0..p_n {
        for i in 0..m_n {
            for q in 0..p_n {
                for j in 0..m_n {
                    let cell = report.endogenous_mean.mean[[p, q, i, j]];
                    println!("  ({p}, {i}) <- ({q}, {j}): {cell:+.4?}");
                }
            }
        }
    }
    println!("share of (p, i) w.r.t. intervention k");
    for p in 0..p_n {
        for i in 0..m_n {
            for k in 0..k_n {
                println!("  ({p}, {i}) <- X{k}: {:+.4?}", report.intervention_mean.mean[[p, i, k]]);
            }
        }
    }
    Ok(())
}
