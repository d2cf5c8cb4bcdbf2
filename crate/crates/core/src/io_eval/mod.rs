//! Dataset and solution files, the trajectory text format, and trajectory
//! error metrics.
//!
//! Formats are documented in `docs/formats.md` with golden fixtures under
//! `crates/core/tests/fixtures`.

mod json;
mod metrics;
mod trajectory;

use thiserror::Error;

pub use json::{
    dataset_from_str, dataset_to_string, read_dataset, read_solution, solution_from_str, to_canonical_string,
    write_dataset, write_solution, LabelHint, LandmarkRecord, SolutionRecord, WeightRecord, SCHEMA_VERSION,
};
pub use metrics::{align_rigid, ate, ate_errors, evaluate, rpe, rpe_errors, MetricReport};
pub use trajectory::{export_trajectory, format_g9, format_trajectory, import_trajectory, parse_trajectory, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u64 },
    #[error("trajectory lengths differ: estimated {estimated}, ground truth {ground_truth}")]
    LengthMismatch { estimated: usize, ground_truth: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_error(path: &std::path::Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}
