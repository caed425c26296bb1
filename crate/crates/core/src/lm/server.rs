use std::io;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};
use tiny_http::Method;

use super::{LanguageModel, LmError, TokenId};
use crate::http::{error_body, ServerHandle};

/// Serves a [`LanguageModel`] over the HTTP logit protocol.
///
/// Endpoints can be switched off to exercise client fallbacks: a backend
/// without `/v1/config` metadata, without `/v1/tokenize`, or with batching
/// disabled (`/v1/logits/batch` answers 501).
pub struct LogitServer {
    model: Arc<dyn LanguageModel>,
    expose_config: bool,
    expose_tokenize: bool,
    batching: bool,
    workers: usize,
}

#[derive(Deserialize)]
struct LogitsBody {
    tokens: Vec<TokenId>,
}

#[derive(Deserialize)]
struct BatchBody {
    batch: Vec<Vec<TokenId>>,
}

#[derive(Deserialize)]
struct TokenizeBody {
    text: String,
}

impl LogitServer {
    pub fn new(model: Arc<dyn LanguageModel>) -> Self {
        Self {
            model,
            expose_config: true,
            expose_tokenize: false,
            batching: true,
            workers: 4,
        }
    }

    pub fn expose_config(mut self, on: bool) -> Self {
        self.expose_config = on;
        self
    }

    pub fn expose_tokenize(mut self, on: bool) -> Self {
        self.expose_tokenize = on;
        self
    }

    pub fn batching(mut self, on: bool) -> Self {
        self.batching = on;
        self
    }

    pub fn workers(mut self, n: usize) -> Self {
        self.workers = n;
        self
    }

    pub fn spawn(self, bind: &str) -> io::Result<ServerHandle> {
        let workers = self.workers;
        let this = Arc::new(self);
        ServerHandle::spawn(
            bind,
            workers,
            Arc::new(move |method: &Method, path: &str, body: &[u8]| this.handle(method, path, body)),
        )
    }

    fn handle(&self, method: &Method, path: &str, body: &[u8]) -> (u16, Value) {
        match (method, path) {
            (Method::Get, "/v1/vocab") => {
                let vocab = self.model.vocab();
                (200, json!({ "tokens": vocab.tokens(), "eos_id": vocab.eos_id() }))
            }
            (Method::Get, "/v1/config") if self.expose_config => match self.model.model_config() {
                Ok(config) => {
                    let mut value = serde_json::to_value(config).expect("config serializes");
                    value["family"] = json!(self.model.family());
                    value["supports_batch"] = json!(self.batching);
                    value["model_id"] = json!(self.model.id());
                    if let Some(max) = self.model.max_input_len() {
                        value["max_input_len"] = json!(max);
                    }
                    (200, value)
                }
                Err(e) => (501, error_body(e)),
            },
            (Method::Post, "/v1/logits") => match serde_json::from_slice::<LogitsBody>(body) {
                Ok(req) => match self.model.forward(&req.tokens) {
                    Ok(logits) => (200, json!({ "logits": logits.values() })),
                    Err(e) => model_error(e),
                },
                Err(e) => (400, error_body(e)),
            },
            (Method::Post, "/v1/logits/batch") => {
                if !self.batching {
                    return (501, error_body("batch packing disabled"));
                }
                match serde_json::from_slice::<BatchBody>(body) {
                    Ok(req) => {
                        let inputs: Vec<&[TokenId]> = req.batch.iter().map(Vec::as_slice).collect();
                        let result = if self.model.supports_batch() {
                            self.model.forward_batch(&inputs)
                        } else {
                            inputs.iter().map(|i| self.model.forward(i)).collect()
                        };
                        match result {
                            Ok(rows) => {
                                let rows: Vec<&[f64]> = rows.iter().map(|r| r.values()).collect();
                                (200, json!({ "logits": rows }))
                            }
                            Err(e) => model_error(e),
                        }
                    }
                    Err(e) => (400, error_body(e)),
                }
            }
            (Method::Post, "/v1/tokenize") if self.expose_tokenize => {
                match serde_json::from_slice::<TokenizeBody>(body) {
                    Ok(req) => match self.model.tokenize(&req.text) {
                        Ok(tokens) => (200, json!({ "tokens": tokens })),
                        Err(e) => model_error(e),
                    },
                    Err(e) => (400, error_body(e)),
                }
            }
            _ => (404, error_body(format!("no route for {method} {path}"))),
        }
    }
}

fn model_error(e: LmError) -> (u16, Value) {
    let status = match e {
        LmError::InvalidInput(ref msg) if msg.contains("exceeds maximum") => 413,
        LmError::InvalidInput(_) | LmError::UnknownToken(_) => 400,
        LmError::Unsupported(_) => 501,
        _ => 500,
    };
    (status, error_body(e))
}
