use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HarnessError;

/// One (query, document, reference) triplet. News summarization rows have
/// an empty query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub id: String,
    #[serde(default)]
    pub query: String,
    pub document: String,
    pub reference: String,
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub examples: Vec<DatasetExample>,
    pub diagnostics: Vec<RowDiagnostic>,
}

fn text_field(row: &serde_json::Map<String, Value>, field: &str, required: bool) -> Result<String, String> {
    match row.get(field) {
        Some(Value::String(s)) if required && s.trim().is_empty() => Err(format!("field {field:?} is empty")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) if field == "id" => Ok(n.to_string()),
        Some(Value::Null) | None if !required => Ok(String::new()),
        Some(other) => Err(format!("field {field:?} must be a string, got {other}")),
        None => Err(format!("missing field {field:?}")),
    }
}

fn parse_row(line: &str) -> Result<DatasetExample, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(row) = value else {
        return Err("row is not a JSON object".into());
    };
    Ok(DatasetExample {
        id: text_field(&row, "id", true)?,
        query: text_field(&row, "query", false)?,
        document: text_field(&row, "document", true)?,
        reference: text_field(&row, "reference", true)?,
    })
}

/// Parses JSONL rows with fields `id`, `query` (optional), `document` and
/// `reference`. Blank lines are skipped. In strict mode the first bad row
/// fails the whole load; otherwise bad rows become diagnostics.
pub fn parse_jsonl(text: &str, strict: bool) -> Result<LoadedDataset, HarnessError> {
    let mut examples = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let parsed = parse_row(line).and_then(|ex| {
            if seen.insert(ex.id.clone()) {
                Ok(ex)
            } else {
                Err(format!("duplicate id {:?}", ex.id))
            }
        });
        match parsed {
            Ok(ex) => examples.push(ex),
            Err(message) => {
                let diag = RowDiagnostic { line: i + 1, message };
                if strict {
                    return Err(HarnessError::MalformedRow(diag));
                }
                diagnostics.push(diag);
            }
        }
    }
    if rows == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    if examples.is_empty() {
        return Err(HarnessError::NoValidRows(diagnostics));
    }
    Ok(LoadedDataset { examples, diagnostics })
}

pub fn load_dataset(path: impl AsRef<Path>, strict: bool) -> Result<LoadedDataset, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_jsonl(&text, strict)
}
