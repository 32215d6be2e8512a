//! CSV/JSON ingest and output.

mod dataset;
mod output;

use std::path::Path;

use thiserror::Error;

pub use dataset::{
    ingest, read_dataset, read_morbidity_from, read_regions, read_regions_from, write_dataset, write_morbidity_to, write_regions_to, Dataset,
    MORBIDITY_FILE, REGIONS_FILE,
};
pub use output::{
    read_targets, read_targets_from, write_predictions, write_report_csv, write_report_json, write_selection, write_spatial_profile,
    write_temporal_grid,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{file}, line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("{file}, line {line}: unknown region_id `{id}`")]
    UnknownRegion { file: String, line: u64, id: String },
    #[error("{file}, line {line}: duplicate {key}")]
    Duplicate { file: String, line: u64, key: String },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(file: &str, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        IoError::Parse {
            file: file.into(),
            line,
            message: e.to_string(),
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Io { .. } => "io",
            IoError::Parse { .. } => "parse",
            IoError::UnknownRegion { .. } => "unknown_region",
            IoError::Duplicate { .. } => "duplicate",
            IoError::Invalid(_) => "invalid",
        }
    }
}

/// Shortest decimal form of `x` rounded to 12 significant digits.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}
