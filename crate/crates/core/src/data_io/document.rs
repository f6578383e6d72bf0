//! Versioned, checksummed JSON documents for models and reports.
//!
//! A document is `{schema, version, checksum, body}`. The checksum is the
//! SHA-256 of the compact JSON of `body` with object keys sorted, so it does
//! not depend on field order or whitespace.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{OmmError, Result};
use crate::estimation::FitResult;

pub const DOCUMENT_VERSION: &str = "1.0";
pub const MODEL_SCHEMA: &str = "omm.model";

fn checksum(body: &Value) -> Result<String> {
    // serde_json::Value keeps object keys sorted, giving a canonical encoding.
    let canonical = serde_json::to_string(body)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

/// Pretty-printed document text for `body`.
pub fn encode_document<T: Serialize>(schema: &str, body: &T) -> Result<String> {
    let body = serde_json::to_value(body)?;
    let doc = json!({
        "schema": schema,
        "version": DOCUMENT_VERSION,
        "checksum": checksum(&body)?,
        "body": body,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Parses and verifies a document produced by [`encode_document`].
pub fn decode_document<T: DeserializeOwned>(schema: &str, text: &str) -> Result<T> {
    let doc: Value = serde_json::from_str(text)?;
    let field = |name: &str| {
        doc.get(name).ok_or_else(|| OmmError::Schema {
            expected: format!("{schema} document with a {name:?} field"),
            found: "no such field".into(),
        })
    };
    let found_schema = field("schema")?.as_str().unwrap_or_default().to_string();
    if found_schema != schema {
        return Err(OmmError::Schema {
            expected: schema.into(),
            found: found_schema,
        });
    }
    super::check_version(field("version")?.as_str().unwrap_or_default())?;
    let body = field("body")?;
    let expected = field("checksum")?.as_str().unwrap_or_default().to_string();
    let computed = checksum(body)?;
    if expected != computed {
        return Err(OmmError::Checksum { expected, computed });
    }
    Ok(serde_json::from_value(body.clone())?)
}

pub fn write_document<T: Serialize>(schema: &str, body: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| OmmError::io(parent, e))?;
    }
    fs::write(path, encode_document(schema, body)?).map_err(|e| OmmError::io(path, e))
}

pub fn read_document<T: DeserializeOwned>(schema: &str, path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| OmmError::io(path, e))?;
    decode_document(schema, &text).map_err(|e| match e {
        OmmError::Serialization(source) => OmmError::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn save_model(fit: &FitResult, path: impl AsRef<Path>) -> Result<()> {
    write_document(MODEL_SCHEMA, fit, path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FitResult> {
    let fit: FitResult = read_document(MODEL_SCHEMA, path)?;
    fit.model.validate()?;
    Ok(fit)
}
