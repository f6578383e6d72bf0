//! Output directory writer: checksummed JSON reports and plain CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use omm_core::data_io::write_document;
use omm_core::{OmmError, Result};
use serde::Serialize;

use crate::config::RunRecord;

/// Report body: the run record next to the command's result.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub run: &'a RunRecord,
    pub result: T,
}

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| OmmError::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn report<T: Serialize>(&mut self, name: &str, schema: &str, run: &RunRecord, result: T) -> Result<()> {
        let path = self.path(name);
        write_document(schema, &Report { run, result }, &path)?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `header` and `rows`; cells are already formatted.
    pub fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| OmmError::Io { path: path.clone(), source: e })?;
        self.written.push(path);
        Ok(())
    }

    pub fn note(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Shortest round-trip decimal; empty for `None`.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
