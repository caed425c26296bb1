//! Aggregate scores and their CSV / Markdown renderings.
//!
//! Scores are stored as fractions and rendered ×100 with one decimal.
//! Missing external metrics render as an em dash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::sampler::SamplingConfig;

pub const MISSING: &str = "—";

/// Column headers of the per-cell table.
pub const MAIN_HEADER: [&str; 8] = [
    "Datasets",
    "Model",
    "Decoding",
    "ROUGE-1",
    "ROUGE-2",
    "ROUGE-L",
    "BERTScore-P",
    "FactKB",
];

/// Column headers of the per-alpha table averaged over models.
pub const ALPHA_HEADER: [&str; 7] = [
    "Datasets",
    "α value",
    "ROUGE-1",
    "ROUGE-2",
    "ROUGE-L",
    "BERTScore-P",
    "FactKB",
];

/// Where a cell's numbers came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub template_id: String,
    pub sampling: SamplingConfig,
    pub execution_mode: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Scores of one (dataset, model, alpha) cell, averaged over examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub model: String,
    pub alpha: f64,
    pub n_examples: usize,
    pub n_scored: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bertscore_p: Option<f64>,
    pub factkb: Option<f64>,
    pub n_tokens: usize,
    pub n_forward: usize,
    pub flops: Option<f64>,
    pub incomplete: bool,
    #[serde(default)]
    pub errors: Vec<String>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl CellResult {
    pub fn decoding_label(&self) -> String {
        if self.alpha == 0.0 {
            "Vanilla".to_string()
        } else {
            format!("CAD (α={})", format_alpha(self.alpha))
        }
    }
}

/// `0` → `0.0`, `0.15` → `0.15`.
pub fn format_alpha(alpha: f64) -> String {
    let s = format!("{alpha}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

/// Fraction rendered ×100 with one decimal.
pub fn format_score(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

fn format_optional(value: Option<f64>) -> String {
    value.map_or_else(|| MISSING.to_string(), format_score)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-dataset, per-alpha averages over models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub dataset: String,
    pub alpha: f64,
    pub n_models: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bertscore_p: Option<f64>,
    pub factkb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<CellResult>,
}

impl EvalReport {
    pub fn new(cells: Vec<CellResult>) -> Self {
        Self { cells }
    }

    pub fn incomplete_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.incomplete)
    }

    /// Averages cells over models, keeping datasets in first-seen order and
    /// alphas ascending.
    pub fn alpha_rows(&self) -> Vec<AlphaRow> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<(usize, u64), Vec<&CellResult>> = BTreeMap::new();
        for cell in &self.cells {
            let idx = match order.iter().position(|d| *d == cell.dataset) {
                Some(i) => i,
                None => {
                    order.push(&cell.dataset);
                    order.len() - 1
                }
            };
            // Alphas are non-negative, so their bit patterns sort numerically.
            groups.entry((idx, cell.alpha.to_bits())).or_default().push(cell);
        }
        groups
            .into_iter()
            .map(|((idx, alpha_bits), cells)| AlphaRow {
                dataset: order[idx].to_string(),
                alpha: f64::from_bits(alpha_bits),
                n_models: cells.len(),
                rouge1: mean(cells.iter().map(|c| c.rouge1)).unwrap_or(0.0),
                rouge2: mean(cells.iter().map(|c| c.rouge2)).unwrap_or(0.0),
                rouge_l: mean(cells.iter().map(|c| c.rouge_l)).unwrap_or(0.0),
                bertscore_p: mean(cells.iter().filter_map(|c| c.bertscore_p)),
                factkb: mean(cells.iter().filter_map(|c| c.factkb)),
            })
            .collect()
    }

    fn main_rows(&self) -> Vec<[String; 8]> {
        self.cells
            .iter()
            .map(|c| {
                [
                    c.dataset.clone(),
                    c.model.clone(),
                    c.decoding_label(),
                    format_score(c.rouge1),
                    format_score(c.rouge2),
                    format_score(c.rouge_l),
                    format_optional(c.bertscore_p),
                    format_optional(c.factkb),
                ]
            })
            .collect()
    }

    fn alpha_table_rows(&self) -> Vec<[String; 7]> {
        self.alpha_rows()
            .into_iter()
            .map(|r| {
                [
                    r.dataset,
                    format!("α={}", format_alpha(r.alpha)),
                    format_score(r.rouge1),
                    format_score(r.rouge2),
                    format_score(r.rouge_l),
                    format_optional(r.bertscore_p),
                    format_optional(r.factkb),
                ]
            })
            .collect()
    }

    pub fn main_csv(&self) -> String {
        to_csv(&MAIN_HEADER, &self.main_rows())
    }

    pub fn main_markdown(&self) -> String {
        let mut md = to_markdown(&MAIN_HEADER, &self.main_rows(), 3);
        let incomplete: Vec<String> = self
            .incomplete_cells()
            .map(|c| format!("{} / {} / {}", c.dataset, c.model, c.decoding_label()))
            .collect();
        if !incomplete.is_empty() {
            md.push_str("\nIncomplete cells: ");
            md.push_str(&incomplete.join("; "));
            md.push('\n');
        }
        md
    }

    pub fn alpha_csv(&self) -> String {
        to_csv(&ALPHA_HEADER, &self.alpha_table_rows())
    }

    pub fn alpha_markdown(&self) -> String {
        to_markdown(&ALPHA_HEADER, &self.alpha_table_rows(), 2)
    }

    /// Writes `report.csv`, `report.md`, `alpha_report.csv`,
    /// `alpha_report.md` and `report.json` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<(), HarnessError> {
        if self.cells.is_empty() {
            return Err(HarnessError::EmptyReport);
        }
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        let files = [
            ("report.csv", self.main_csv()),
            ("report.md", self.main_markdown()),
            ("alpha_report.csv", self.alpha_csv()),
            ("alpha_report.md", self.alpha_markdown()),
            ("report.json", json + "\n"),
        ];
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, contents) in files {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

fn to_csv<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn to_markdown<const N: usize>(header: &[&str; N], rows: &[[String; N]], numeric_from: usize) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "| {} |", header.join(" | "));
    let rule: Vec<&str> = (0..N).map(|i| if i >= numeric_from { "---:" } else { "---" }).collect();
    let _ = writeln!(md, "|{}|", rule.join("|"));
    for row in rows {
        let _ = writeln!(md, "| {} |", row.join(" | "));
    }
    md
}

/// Reads a report CSV back into its header and rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), HarnessError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| HarnessError::Report(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Report(e.to_string()))?;
    Ok((header, rows))
}
