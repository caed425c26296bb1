//! Scoring generated outputs against dataset references.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::DatasetExample;
use super::report::CellResult;
use super::HarnessError;
use crate::metrics::external::{ExternalScore, ExternalScoreRequest, ExternalScorer, BERTSCORE_P, FACTKB};
use crate::metrics::rouge::{self, RougeScore};

/// The part of a results row that scoring needs. Full generation records
/// deserialize into this as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub output: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub rouge: RougeScore,
    pub bertscore_p: Option<f64>,
    pub factkb: Option<f64>,
    /// Why an external score is absent, per metric.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                HarnessError::MalformedRow(super::RowDiagnostic {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
        })
        .collect()
}

fn external(scorer: Option<&ExternalScorer>, metric: &str, request: ExternalScoreRequest) -> Result<ExternalScore, HarnessError> {
    match scorer {
        Some(s) if s.metrics().any(|m| m == metric) => Ok(s.score(&request)?),
        _ => Ok(ExternalScore::Missing {
            reason: format!("no scorer registered for {metric}"),
        }),
    }
}

/// Scores every complete prediction. A prediction whose id is absent from the
/// dataset is an error; incomplete predictions are skipped.
pub fn score_predictions(
    dataset: &[DatasetExample],
    predictions: &[Prediction],
    stem: bool,
    scorer: Option<&ExternalScorer>,
) -> Result<Vec<ExampleScore>, HarnessError> {
    let by_id: HashMap<&str, &DatasetExample> = dataset.iter().map(|ex| (ex.id.as_str(), ex)).collect();
    let orphans: Vec<String> = predictions
        .iter()
        .filter(|p| !by_id.contains_key(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(HarnessError::OrphanPredictions { ids: orphans });
    }
    let mut scores = Vec::with_capacity(predictions.len());
    for pred in predictions {
        let example = by_id[pred.id.as_str()];
        if pred.incomplete {
            continue;
        }
        let mut score = ExampleScore {
            id: pred.id.clone(),
            rouge: rouge::score_texts(&pred.output, &example.reference, stem),
            bertscore_p: None,
            factkb: None,
            missing: Vec::new(),
        };
        for metric in [BERTSCORE_P, FACTKB] {
            let request = ExternalScoreRequest {
                metric: metric.to_string(),
                candidate: pred.output.clone(),
                reference: example.reference.clone(),
                document: example.document.clone(),
            };
            match external(scorer, metric, request)? {
                ExternalScore::Scored { score: v, .. } if metric == BERTSCORE_P => score.bertscore_p = Some(v),
                ExternalScore::Scored { score: v, .. } => score.factkb = Some(v),
                ExternalScore::Missing { reason } => score.missing.push(format!("{metric}: {reason}")),
            }
        }
        scores.push(score);
    }
    Ok(scores)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages example scores into one cell. External metrics average over the
/// examples that have them and stay `None` when none do.
pub fn aggregate(dataset: &str, model: &str, alpha: f64, n_examples: usize, scores: &[ExampleScore]) -> CellResult {
    CellResult {
        dataset: dataset.to_string(),
        model: model.to_string(),
        alpha,
        n_examples,
        n_scored: scores.len(),
        rouge1: mean(scores.iter().map(|s| s.rouge.rouge1_f())).unwrap_or(0.0),
        rouge2: mean(scores.iter().map(|s| s.rouge.rouge2_f())).unwrap_or(0.0),
        rouge_l: mean(scores.iter().map(|s| s.rouge.rouge_l_f())).unwrap_or(0.0),
        bertscore_p: mean(scores.iter().filter_map(|s| s.bertscore_p)),
        factkb: mean(scores.iter().filter_map(|s| s.factkb)),
        n_tokens: 0,
        n_forward: 0,
        flops: None,
        incomplete: scores.len() < n_examples,
        errors: Vec::new(),
        provenance: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::external::MockScorer;

    fn example(id: &str, reference: &str) -> DatasetExample {
        DatasetExample {
            id: id.into(),
            query: String::new(),
            document: "doc".into(),
            reference: reference.into(),
        }
    }

    fn pred(id: &str, output: &str) -> Prediction {
        Prediction {
            id: id.into(),
            output: output.into(),
            alpha: None,
            model: None,
            incomplete: false,
        }
    }

    #[test]
    fn identical_outputs_score_one() {
        let ds = vec![example("1", "the cat sat"), example("2", "a dog ran")];
        let preds = vec![pred("1", "the cat sat"), pred("2", "a dog ran")];
        let scores = score_predictions(&ds, &preds, false, None).unwrap();
        let cell = aggregate("XSUM", "m", 0.0, 2, &scores);
        assert_eq!((cell.rouge1, cell.rouge2, cell.rouge_l), (1.0, 1.0, 1.0));
        assert_eq!(cell.bertscore_p, None);
        assert!(!cell.incomplete);
        assert_eq!(scores[0].missing.len(), 2);
    }

    #[test]
    fn orphan_prediction_is_an_error() {
        let ds = vec![example("1", "x")];
        let err = score_predictions(&ds, &[pred("9", "x"), pred("1", "x"), pred("8", "y")], false, None).unwrap_err();
        match err {
            HarnessError::OrphanPredictions { ids } => assert_eq!(ids, ["9", "8"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn incomplete_predictions_are_skipped() {
        let ds = vec![example("1", "x"), example("2", "y")];
        let mut partial = pred("2", "y");
        partial.incomplete = true;
        let scores = score_predictions(&ds, &[pred("1", "x"), partial], false, None).unwrap();
        assert_eq!(scores.len(), 1);
        assert!(aggregate("XSUM", "m", 0.0, 2, &scores).incomplete);
    }

    #[test]
    fn external_scores_are_averaged() {
        let server = MockScorer::Constant(0.25).spawn("127.0.0.1:0").unwrap();
        let mut scorer = ExternalScorer::new();
        scorer.register(FACTKB, &server.url()).unwrap();
        let ds = vec![example("1", "x")];
        let scores = score_predictions(&ds, &[pred("1", "x")], false, Some(&scorer)).unwrap();
        let cell = aggregate("XSUM", "m", 0.5, 1, &scores);
        assert_eq!(cell.factkb, Some(0.25));
        assert_eq!(cell.bertscore_p, None);
    }

    #[test]
    fn records_deserialize_as_predictions() {
        let line = r#"{"id":"1","output":"a b","n_tokens":2,"mode":"two_pass","alpha":0.5,"model":"toy"}"#;
        let p: Prediction = serde_json::from_str(line).unwrap();
        assert_eq!(p.alpha, Some(0.5));
        assert!(!p.incomplete);
    }
}
