//! Grid runs over models × datasets × PMI weights.
//!
//! Each cell decodes every example of one dataset with one model at one α,
//! scores the outputs and writes its records. A failing cell is marked
//! incomplete and the rest of the grid carries on. α = 0 is ordinary
//! decoding.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::dataset::{load_dataset, DatasetExample};
use super::eval::{aggregate, score_predictions, Prediction};
use super::report::{format_alpha, CellResult, EvalReport, Provenance};
use super::template::{DatasetKind, PromptTemplate};
use super::{write_jsonl, HarnessError};
use crate::engine::{decode, DecodeError, DecodeRequest, DecodingMethod, ExecutionMode, GenerationRecord};
use crate::flops::{self, Approximation};
use crate::lm::{open_model, LanguageModel};
use crate::metrics::external::ExternalScorer;
use crate::sampler::{SamplingConfig, SamplingStrategy};

pub const DEFAULT_ALPHAS: [f64; 4] = [0.0, 0.15, 0.3, 0.5];

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// Name used in reports; defaults to the backend's own id.
    #[serde(default)]
    pub id: Option<String>,
    /// `table:<path>` or `remote:<url>`.
    pub locator: String,
}

/// Per-dataset replacements for the built-in decoding defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingOverrides {
    pub strategy: Option<SamplingStrategy>,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub temperature: Option<f64>,
    pub repetition_penalty: Option<f64>,
    pub min_new_tokens: Option<usize>,
    pub max_new_tokens: Option<usize>,
}

impl SamplingOverrides {
    pub fn apply(&self, mut config: SamplingConfig) -> SamplingConfig {
        if let Some(v) = self.strategy {
            config.strategy = v;
        }
        if let Some(v) = self.top_k {
            config.top_k = v;
        }
        if let Some(v) = self.top_p {
            config.top_p = v;
        }
        if let Some(v) = self.temperature {
            config.temperature = v;
        }
        if let Some(v) = self.repetition_penalty {
            config.repetition_penalty = v;
        }
        if let Some(v) = self.min_new_tokens {
            config.min_new_tokens = v;
        }
        if let Some(v) = self.max_new_tokens {
            config.max_new_tokens = v;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: PathBuf,
    /// Inferred from the file name when absent.
    #[serde(default)]
    pub kind: Option<DatasetKind>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub sampling: SamplingOverrides,
    /// Decode only the first `limit` examples.
    #[serde(default)]
    pub limit: Option<usize>,
}

impl DatasetEntry {
    pub fn resolved_kind(&self) -> Result<DatasetKind, HarnessError> {
        self.kind.or_else(|| DatasetKind::infer_from_path(&self.path)).ok_or_else(|| {
            HarnessError::InvalidSpec(format!(
                "cannot infer dataset kind from {}; set \"kind\"",
                self.path.display()
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution_mode: ExecutionMode,
    /// Worker threads; defaults to the number of CPUs.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub literal_template_table: bool,
    #[serde(default)]
    pub approximation: Approximation,
    #[serde(default = "default_true")]
    pub stem: bool,
    pub models: Vec<ModelEntry>,
    pub datasets: Vec<DatasetEntry>,
    /// Base URL of a service answering the scorer protocol for every
    /// model-based metric.
    #[serde(default)]
    pub external_scorer: Option<String>,
}

impl SweepSpec {
    pub fn from_json(json: &str) -> Result<Self, HarnessError> {
        let spec: SweepSpec = serde_json::from_str(json).map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; relative dataset paths and `table:` locators are
    /// resolved against the file's directory.
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve_paths(base);
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for dataset in &mut self.datasets {
            if dataset.path.is_relative() {
                dataset.path = base.join(&dataset.path);
            }
        }
        for model in &mut self.models {
            if let Some(rest) = model.locator.strip_prefix("table:") {
                if Path::new(rest).is_relative() {
                    model.locator = format!("table:{}", base.join(rest).display());
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.alphas.is_empty() {
            return invalid("alphas must not be empty".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return invalid(format!("alpha must be finite and >= 0, got {a}"));
        }
        if self.models.is_empty() {
            return invalid("at least one model is required".into());
        }
        if self.datasets.is_empty() {
            return invalid("at least one dataset is required".into());
        }
        if self.jobs == Some(0) {
            return invalid("jobs must be >= 1".into());
        }
        for dataset in &self.datasets {
            dataset.resolved_kind()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: EvalReport,
    /// Record files, one per cell, in report order.
    pub cell_files: Vec<PathBuf>,
}

impl SweepOutcome {
    pub fn is_complete(&self) -> bool {
        self.report.incomplete_cells().next().is_none()
    }
}

fn config_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_stem_part(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

struct Cell<'a> {
    kind: DatasetKind,
    entry: &'a DatasetEntry,
    examples: &'a [DatasetExample],
    model_name: String,
    model_locator: &'a str,
    alpha: f64,
}

fn decode_one(model: &dyn LanguageModel, request: &DecodeRequest, spec: &SweepSpec) -> Result<GenerationRecord, String> {
    match decode(model, request) {
        Ok(record) => Ok(match flops::annotate(&record, model.model_config().ok().as_ref(), spec.approximation) {
            Ok(annotated) => annotated,
            Err(_) => record,
        }),
        Err(DecodeError::Aborted { partial, source }) => {
            log::warn!("{}: {source}", request.id);
            Ok(*partial)
        }
        Err(e) => Err(e.to_string()),
    }
}

fn run_cell(
    cell: &Cell<'_>,
    model: Result<&dyn LanguageModel, String>,
    spec: &SweepSpec,
    scorer: Option<&ExternalScorer>,
    out_dir: &Path,
) -> Result<(CellResult, PathBuf), HarnessError> {
    let sampling = cell.entry.sampling.apply(cell.kind.hyperparameters().sampling_config(spec.seed));
    let method = if cell.alpha == 0.0 {
        DecodingMethod::Vanilla
    } else {
        DecodingMethod::Cad {
            alpha: cell.alpha,
            execution: spec.execution_mode,
        }
    };
    let file = out_dir.join("cells").join(format!(
        "{}__{}__alpha-{}.jsonl",
        cell.kind.slug(),
        file_stem_part(&cell.model_name),
        format_alpha(cell.alpha)
    ));
    let display = cell.kind.display_name();

    let model = match model {
        Ok(model) => model,
        Err(message) => {
            let mut result = aggregate(display, &cell.model_name, cell.alpha, cell.examples.len(), &[]);
            result.errors.push(message);
            write_jsonl::<GenerationRecord>(&file, &[])?;
            return Ok((result, file));
        }
    };
    let template = PromptTemplate::builtin(cell.kind, model.family(), spec.literal_template_table);
    let hash_input = json!({
        "model": cell.model_locator,
        "dataset": cell.entry.path,
        "kind": cell.kind,
        "template": template,
        "sampling": sampling,
        "alpha": cell.alpha,
        "execution_mode": spec.execution_mode,
        "approximation": spec.approximation,
        "stem": spec.stem,
    });
    let provenance = Provenance {
        model_id: model.id().to_string(),
        template_id: template.id.clone(),
        sampling: sampling.clone(),
        execution_mode: if method.is_cad() {
            serde_json::to_value(spec.execution_mode).expect("enum serializes").as_str().unwrap_or("").to_string()
        } else {
            "vanilla".to_string()
        },
        seed: spec.seed,
        config_hash: config_hash(&hash_input),
    };

    let records: Vec<GenerationRecord> = cell
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut request = DecodeRequest::new(
                ex.id.clone(),
                ex.document.clone(),
                ex.query.clone(),
                template.clone(),
                method,
                sampling.clone(),
            );
            request.rng_stream = i as u64;
            let mut record = decode_one(model, &request, spec)
                .unwrap_or_else(|e| GenerationRecord::failed(&request, model.id(), e));
            record.model = Some(cell.model_name.clone());
            record.dataset = Some(display.to_string());
            record
        })
        .collect();

    let errors: Vec<String> = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.id)))
        .collect();
    write_jsonl(&file, &records)?;

    let predictions: Vec<Prediction> = records
        .iter()
        .map(|r| Prediction {
            id: r.id.clone(),
            output: r.output.clone(),
            alpha: r.alpha,
            model: r.model.clone(),
            incomplete: r.incomplete,
        })
        .collect();
    let scores = score_predictions(cell.examples, &predictions, spec.stem, scorer)?;
    let mut result = aggregate(display, &cell.model_name, cell.alpha, cell.examples.len(), &scores);
    result.n_tokens = records.iter().map(|r| r.n_tokens).sum();
    result.n_forward = records.iter().map(|r| r.n_forward).sum();
    result.flops = records.iter().map(|r| r.flops).sum::<Option<f64>>();
    result.incomplete |= !errors.is_empty();
    result.errors = errors;
    result.provenance = Some(provenance);
    Ok((result, file))
}

/// Runs every cell of the grid and writes records and reports to `out_dir`.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let mut datasets = Vec::new();
    for entry in &spec.datasets {
        let kind = entry.resolved_kind()?;
        let loaded = load_dataset(&entry.path, entry.strict)?;
        for diag in &loaded.diagnostics {
            log::warn!("{}: skipped {diag}", entry.path.display());
        }
        let mut examples = loaded.examples;
        if let Some(limit) = entry.limit {
            examples.truncate(limit);
        }
        datasets.push((kind, entry, examples));
    }
    let scorer = spec.external_scorer.as_deref().map(|url| {
        let mut scorer = ExternalScorer::new();
        scorer.register_all(url);
        scorer
    });
    let models: Vec<(String, Result<Box<dyn LanguageModel>, String>)> = spec
        .models
        .iter()
        .map(|entry| {
            let opened = open_model(&entry.locator).map_err(|e| format!("cannot open {}: {e}", entry.locator));
            let name = match (&entry.id, &opened) {
                (Some(id), _) => id.clone(),
                (None, Ok(model)) => model.id().to_string(),
                (None, Err(_)) => entry.locator.clone(),
            };
            (name, opened)
        })
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = spec.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::InvalidSpec(format!("cannot start worker pool: {e}")))?;

    let mut cells = Vec::new();
    let mut cell_files = Vec::new();
    for (kind, entry, examples) in &datasets {
        for ((name, model), model_entry) in models.iter().zip(&spec.models) {
            for &alpha in &spec.alphas {
                let cell = Cell {
                    kind: *kind,
                    entry,
                    examples,
                    model_name: name.clone(),
                    model_locator: &model_entry.locator,
                    alpha,
                };
                let model = model.as_deref().map_err(Clone::clone);
                let (result, file) = pool.install(|| run_cell(&cell, model, spec, scorer.as_ref(), out_dir))?;
                if result.incomplete {
                    log::warn!(
                        "{} / {} / α={}: incomplete ({} of {} scored)",
                        result.dataset,
                        result.model,
                        format_alpha(alpha),
                        result.n_scored,
                        result.n_examples
                    );
                }
                cells.push(result);
                cell_files.push(file);
            }
        }
    }
    let report = EvalReport::new(cells);
    report.emit(out_dir)?;
    Ok(SweepOutcome { report, cell_files })
}
