//! Datasets, synthetic generation, and versioned model/report documents.

mod dataset;
mod document;
mod synthetic;

pub use dataset::{load_dataset, save_dataset, standardize_intervention, DatasetBundle, DATASET_SCHEMA, DATASET_VERSION};
pub use document::{
    decode_document, encode_document, load_model, read_document, save_model, write_document, DOCUMENT_VERSION,
    MODEL_SCHEMA,
};
pub use synthetic::{generate_synthetic, ParamSource, SignalDef, SyntheticConfig, SyntheticDataset};

use crate::error::{OmmError, Result};

/// Accepts any `1.x` version string.
pub(crate) fn check_version(found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(1) => Ok(()),
        _ => Err(OmmError::VersionMismatch {
            found: found.into(),
            supported: "1.x".into(),
        }),
    }
}
