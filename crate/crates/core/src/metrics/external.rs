//! Client for model-based metrics served elsewhere.
//!
//! Protocol: `POST /v1/score` with
//! `{"metric": str, "candidate": str, "reference": str, "document": str}`
//! answered by `{"score": float}` in `[0, 1]`. Scores are never computed
//! locally; a failed call yields an explicit missing marker rather than 0.

use std::collections::BTreeMap;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tiny_http::Method;

use crate::http::{error_body, ServerHandle};
use crate::metrics::rouge;

pub const BERTSCORE_P: &str = "bertscore_p";
pub const FACTKB: &str = "factkb";
/// Metric ids the report knows how to place in a column.
pub const KNOWN_METRICS: [&str; 2] = [BERTSCORE_P, FACTKB];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("unsupported capability: no scorer registered for metric {0:?}")]
    Unregistered(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScoreRequest {
    pub metric: String,
    pub candidate: String,
    pub reference: String,
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExternalScore {
    Scored { score: f64, provenance: String },
    Missing { reason: String },
}

impl ExternalScore {
    pub fn value(&self) -> Option<f64> {
        match self {
            ExternalScore::Scored { score, .. } => Some(*score),
            ExternalScore::Missing { .. } => None,
        }
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// Routes metric ids to scorer services.
#[derive(Clone)]
pub struct ExternalScorer {
    routes: BTreeMap<String, String>,
    agent: ureq::Agent,
}

impl Default for ExternalScorer {
    fn default() -> Self {
        Self::new()
    }
}

impl ExternalScorer {
    pub fn new() -> Self {
        Self {
            routes: BTreeMap::new(),
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(5))
                .timeout(Duration::from_secs(300))
                .build(),
        }
    }

    pub fn register(&mut self, metric: &str, base_url: &str) -> Result<(), MetricsError> {
        if !KNOWN_METRICS.contains(&metric) {
            return Err(MetricsError::UnknownMetric(metric.to_string()));
        }
        self.routes
            .insert(metric.to_string(), base_url.trim_end_matches('/').to_string());
        Ok(())
    }

    /// Sends every known metric to one service.
    pub fn register_all(&mut self, base_url: &str) {
        for metric in KNOWN_METRICS {
            self.register(metric, base_url).expect("known metric");
        }
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.routes.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn score(&self, request: &ExternalScoreRequest) -> Result<ExternalScore, MetricsError> {
        let base = self
            .routes
            .get(&request.metric)
            .ok_or_else(|| MetricsError::Unregistered(request.metric.clone()))?;
        let outcome = self
            .agent
            .post(&format!("{base}/v1/score"))
            .send_json(request)
            .map_err(|e| e.to_string())
            .and_then(|resp| resp.into_json::<ScoreResponse>().map_err(|e| e.to_string()));
        Ok(match outcome {
            Ok(ScoreResponse { score }) if (0.0..=1.0).contains(&score) => ExternalScore::Scored {
                score,
                provenance: "external".into(),
            },
            Ok(ScoreResponse { score }) => ExternalScore::Missing {
                reason: format!("scorer returned out-of-range score {score}"),
            },
            Err(reason) => ExternalScore::Missing { reason },
        })
    }
}

/// Behaviour of the stand-in scorer service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockScorer {
    /// Same score for every request.
    Constant(f64),
    /// Unigram F1 between candidate and reference; 1.0 when they are equal.
    Echo,
}

impl MockScorer {
    pub fn score(&self, request: &ExternalScoreRequest) -> f64 {
        match *self {
            MockScorer::Constant(v) => v,
            MockScorer::Echo if request.candidate == request.reference => 1.0,
            MockScorer::Echo => {
                let c = rouge::tokenize_for_rouge(&request.candidate, false);
                let r = rouge::tokenize_for_rouge(&request.reference, false);
                rouge::rouge_n(&c, &r, 1).f1
            }
        }
    }

    /// Serves the scorer protocol until the handle is dropped.
    pub fn spawn(self, bind: &str) -> io::Result<ServerHandle> {
        ServerHandle::spawn(
            bind,
            4,
            Arc::new(move |method: &Method, path: &str, body: &[u8]| -> (u16, Value) {
                match (method, path) {
                    (Method::Post, "/v1/score") => match serde_json::from_slice::<ExternalScoreRequest>(body) {
                        Ok(req) => (200, json!({ "score": self.score(&req) })),
                        Err(e) => (400, error_body(e)),
                    },
                    _ => (404, error_body(format!("no route for {method} {path}"))),
                }
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(metric: &str, candidate: &str, reference: &str) -> ExternalScoreRequest {
        ExternalScoreRequest {
            metric: metric.into(),
            candidate: candidate.into(),
            reference: reference.into(),
            document: "doc".into(),
        }
    }

    #[test]
    fn unregistered_metric_is_unsupported() {
        let scorer = ExternalScorer::new();
        assert_eq!(
            scorer.score(&req(FACTKB, "a", "b")),
            Err(MetricsError::Unregistered(FACTKB.into()))
        );
        assert!(ExternalScorer::new().register("bleurt", "http://x").is_err());
    }

    #[test]
    fn constant_and_echo_scorers() {
        let constant = MockScorer::Constant(0.5).spawn("127.0.0.1:0").unwrap();
        let echo = MockScorer::Echo.spawn("127.0.0.1:0").unwrap();
        let mut scorer = ExternalScorer::new();
        scorer.register(FACTKB, &constant.url()).unwrap();
        scorer.register(BERTSCORE_P, &echo.url()).unwrap();
        assert_eq!(
            scorer.score(&req(FACTKB, "x", "y")).unwrap(),
            ExternalScore::Scored { score: 0.5, provenance: "external".into() }
        );
        assert_eq!(scorer.score(&req(BERTSCORE_P, "same text", "same text")).unwrap().value(), Some(1.0));
    }

    #[test]
    fn transport_failure_is_marked_missing() {
        let dead = MockScorer::Constant(0.5).spawn("127.0.0.1:0").unwrap();
        let url = dead.url();
        dead.shutdown();
        let mut scorer = ExternalScorer::new();
        scorer.register_all(&url);
        let got = scorer.score(&req(FACTKB, "a", "b")).unwrap();
        assert!(matches!(got, ExternalScore::Missing { .. }), "{got:?}");
        assert_eq!(got.value(), None);
    }
}
