//! Datasets, prompt templates, scoring, sweeps and reports.

pub mod dataset;
pub mod eval;
pub mod report;
pub mod sweep;
pub mod template;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub use dataset::{load_dataset, parse_jsonl, DatasetExample, LoadedDataset, RowDiagnostic};
pub use eval::{aggregate, load_predictions, score_predictions, ExampleScore, Prediction};
pub use report::{CellResult, EvalReport, Provenance};
pub use sweep::{run_sweep, DatasetEntry, ModelEntry, SamplingOverrides, SweepOutcome, SweepSpec, DEFAULT_ALPHAS};
pub use template::{DatasetKind, DecodingHyperparameters, PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed row at {0}")]
    MalformedRow(RowDiagnostic),
    #[error("no valid rows ({} rejected)", .0.len())]
    NoValidRows(Vec<RowDiagnostic>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("predictions without a matching dataset example: {}", .ids.join(", "))]
    OrphanPredictions { ids: Vec<String> },
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("report has no cells")]
    EmptyReport,
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Model(#[from] crate::lm::LmError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Record of how a run was configured, written before any decoding starts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: Value,
    /// Per-dataset decoding defaults, keyed by display name.
    pub hyperparameters: BTreeMap<&'static str, DecodingHyperparameters>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64, config: Value) -> Self {
        Self {
            tool: "ctxdecode",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            seed,
            config,
            hyperparameters: DatasetKind::ALL
                .iter()
                .map(|k| (k.display_name(), k.hyperparameters()))
                .collect(),
        }
    }

    /// Writes `manifest.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| HarnessError::io(&path, e))
    }
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("row serializes"));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}
