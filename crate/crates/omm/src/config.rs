//! Config file and the resolved per-run record.

use std::path::Path;

use omm_core::data_io::SyntheticConfig;
use omm_core::estimation::FitOptions;
use omm_core::evaluation::KlForm;
use omm_core::intervention::ShareSource;
use omm_core::simulation::ShareAggregation;
use omm_core::{OmmError, Result};
use serde::{Deserialize, Serialize};

use crate::cli::{Command, GlobalArgs};

/// Options read from `--config`; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub fit: FitOptions,
    pub synthetic: SyntheticConfig,
    /// Replicates for `eval` and `simulate`.
    pub replicates: usize,
    pub kl_form: KlForm,
    pub share_aggregation: ShareAggregation,
    pub share_source: ShareSource,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            synthetic: SyntheticConfig::default(),
            replicates: 5,
            kl_form: KlForm::Standard,
            share_aggregation: ShareAggregation::MeanOfRealized,
            share_source: ShareSource::Realized,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OmmError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| OmmError::InvalidParameter(format!("config {}: {e}", path.display())))
    }
}

/// Everything needed to reproduce a run. The output directory is left out so
/// that reruns into different directories produce identical files.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: &'static str,
    pub seed: u64,
    pub no_interventions: bool,
    pub args: Command,
    pub config: ConfigFile,
}

/// Config after applying the file, then the command-line overrides.
pub fn resolve(global: &GlobalArgs, command: &Command) -> Result<RunRecord> {
    let mut config = match &global.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = global.seed.unwrap_or(config.fit.seed);
    config.fit.seed = seed;
    config.synthetic.seed = seed;
    match command {
        Command::Synth(a) => {
            if a.use_default {
                config.synthetic = SyntheticConfig {
                    seed,
                    ..SyntheticConfig::default()
                };
            }
            if let Some(v) = a.bins {
                config.synthetic.bins = v;
            }
            if let Some(v) = a.groups {
                config.synthetic.n_groups = v;
            }
            if let Some(v) = a.samples {
                config.synthetic.n_samples = v;
            }
            if global.no_interventions {
                config.synthetic.interventions.clear();
            }
        }
        Command::Fit(a) => {
            if let Some(v) = a.max_iterations {
                config.fit.max_iterations = v;
            }
            if let Some(v) = a.restarts {
                config.fit.n_restarts = v;
            }
            if let Some(v) = a.lambda_reg {
                config.fit.lambda_reg = v;
            }
        }
        Command::Eval(a) => {
            if let Some(v) = a.replicates {
                config.replicates = v;
            }
        }
        Command::Simulate(a) => {
            if let Some(v) = a.replicates {
                config.replicates = v;
            }
        }
        Command::Elasticity(_) | Command::Whatif(_) | Command::Serve(_) => {}
    }
    config.fit.validate()?;
    Ok(RunRecord {
        command: command.name(),
        seed,
        no_interventions: global.no_interventions,
        args: command.clone(),
        config,
    })
}
