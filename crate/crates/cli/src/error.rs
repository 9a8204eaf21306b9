use std::path::Path;

use csc_ipca_core::Error as CoreError;
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{}", csv_message(.path, .row, .column, .message))]
    Csv { path: String, row: Option<u64>, column: Option<String>, message: String },

    #[error("invalid configuration in {source_name}: {message}")]
    Config { source_name: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("fixture check failed: {0}")]
    Fixture(String),
}

fn csv_message(path: &str, row: &Option<u64>, column: &Option<String>, message: &str) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("{path}: row {r}, column {c}: {message}"),
        (Some(r), None) => format!("{path}: row {r}: {message}"),
        (None, Some(c)) => format!("{path}: column {c}: {message}"),
        (None, None) => format!("{path}: {message}"),
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: err.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e {
                CoreError::DimensionMismatch { .. } => "dimension_mismatch",
                CoreError::NonBinaryTreatment { .. } => "non_binary_treatment",
                CoreError::NonFinite { .. } => "non_finite",
                CoreError::NonAbsorbingTreatment { .. } => "non_absorbing_treatment",
                CoreError::NoTreatedUnits => "no_treated_units",
                CoreError::NoControlUnits => "no_control_units",
                CoreError::NoPreTreatmentPeriods { .. } => "no_pre_treatment_periods",
                CoreError::InvalidConfig { .. } => "invalid_config",
                CoreError::RankDeficient { .. } => "rank_deficient",
                CoreError::DegeneratePeriod { .. } => "degenerate_period",
                CoreError::Underdetermined { .. } => "underdetermined",
                CoreError::NotPositiveDefinite => "not_positive_definite",
                CoreError::Empty(_) => "empty",
                CoreError::UnsupportedPattern(_) => "unsupported_pattern",
                CoreError::MissingPeriod { .. } => "missing_period",
            },
            CliError::Io { .. } => "io",
            CliError::Csv { .. } => "csv",
            CliError::Config { .. } => "invalid_config",
            CliError::Usage(_) => "usage",
            CliError::Fixture(_) => "fixture",
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Core(CoreError::InvalidConfig { field, .. }) => body["field"] = json!(field),
            CliError::Csv { row, column, path, .. } => {
                body["path"] = json!(path);
                if let Some(r) = row {
                    body["row"] = json!(r);
                }
                if let Some(c) = column {
                    body["column"] = json!(c);
                }
            }
            _ => {}
        }
        json!({ "error": body })
    }
}
