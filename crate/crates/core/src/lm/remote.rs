use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LanguageModel, LmError, LogitVector, ModelConfig, ModelFamily, TokenId, Vocabulary};

#[derive(Serialize)]
struct LogitsRequest<'a> {
    tokens: &'a [TokenId],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    batch: &'a [&'a [TokenId]],
}

#[derive(Deserialize)]
struct BatchResponse {
    logits: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VocabResponse {
    tokens: Vec<String>,
    eos_id: TokenId,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<TokenId>,
}

/// Extra fields a backend may report next to the geometry in `/v1/config`.
#[derive(Debug, Clone, Default, Deserialize)]
pub(crate) struct ConfigExtras {
    #[serde(default)]
    pub family: Option<ModelFamily>,
    #[serde(default)]
    pub max_input_len: Option<usize>,
    #[serde(default)]
    pub supports_batch: bool,
    #[serde(default)]
    pub model_id: Option<String>,
}

/// Client for the HTTP logit protocol.
///
/// Requests are stateless: every call carries the full prefix. The
/// underlying agent pools connections and may be shared across threads.
pub struct RemoteLm {
    base: String,
    id: String,
    agent: ureq::Agent,
    vocab: Vocabulary,
    config: Option<ModelConfig>,
    extras: ConfigExtras,
    has_tokenize: bool,
}

impl RemoteLm {
    pub fn connect(url: &str) -> Result<Self, LmError> {
        let base = url.trim_end_matches('/').to_string();
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(600))
            .build();

        let vocab: VocabResponse = read_json(get(&agent, &format!("{base}/v1/vocab"))?)?;
        let vocab = Vocabulary::new(vocab.tokens, vocab.eos_id)?;

        let (config, extras) = match get(&agent, &format!("{base}/v1/config")) {
            Ok(resp) => {
                let value: Value = read_json(resp)?;
                let config: ModelConfig = serde_json::from_value(value.clone())
                    .map_err(|e| LmError::Backend {
                        status: 200,
                        message: format!("malformed /v1/config: {e}"),
                    })?;
                let extras: ConfigExtras = serde_json::from_value(value).unwrap_or_default();
                (Some(config), extras)
            }
            Err(LmError::Backend { status: 404 | 501, .. }) => (None, ConfigExtras::default()),
            Err(e) => return Err(e),
        };

        let has_tokenize = match post(&agent, &format!("{base}/v1/tokenize"), &TokenizeRequest { text: "" }) {
            Ok(_) => true,
            Err(LmError::Backend { status: 404 | 405 | 501, .. }) => false,
            Err(e) => return Err(e),
        };

        let id = extras.model_id.clone().unwrap_or_else(|| base.clone());
        Ok(Self {
            base,
            id,
            agent,
            vocab,
            config,
            extras,
            has_tokenize,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn has_tokenize_endpoint(&self) -> bool {
        self.has_tokenize
    }

    fn checked_logits(&self, values: Vec<f64>) -> Result<LogitVector, LmError> {
        if values.len() != self.vocab.size() {
            return Err(LmError::Backend {
                status: 200,
                message: format!(
                    "backend returned {} logits for a vocabulary of {}",
                    values.len(),
                    self.vocab.size()
                ),
            });
        }
        LogitVector::new(values)
    }
}

fn get(agent: &ureq::Agent, url: &str) -> Result<ureq::Response, LmError> {
    agent.get(url).call().map_err(map_err)
}

fn post<T: Serialize>(agent: &ureq::Agent, url: &str, body: &T) -> Result<ureq::Response, LmError> {
    agent.post(url).send_json(body).map_err(map_err)
}

fn read_json<T: serde::de::DeserializeOwned>(resp: ureq::Response) -> Result<T, LmError> {
    resp.into_json().map_err(|e| LmError::Backend {
        status: 200,
        message: format!("malformed response body: {e}"),
    })
}

fn map_err(err: ureq::Error) -> LmError {
    match err {
        ureq::Error::Status(status, resp) => LmError::Backend {
            status,
            message: resp.into_string().unwrap_or_default(),
        },
        ureq::Error::Transport(t) => LmError::Transport(t.to_string()),
    }
}

impl LanguageModel for RemoteLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, input: &[TokenId]) -> Result<LogitVector, LmError> {
        if input.is_empty() {
            return Err(LmError::InvalidInput("empty input".into()));
        }
        self.vocab.check_ids(input)?;
        let resp: LogitsResponse = read_json(post(
            &self.agent,
            &format!("{}/v1/logits", self.base),
            &LogitsRequest { tokens: input },
        )?)?;
        self.checked_logits(resp.logits)
    }

    fn supports_batch(&self) -> bool {
        self.extras.supports_batch
    }

    fn forward_batch(&self, inputs: &[&[TokenId]]) -> Result<Vec<LogitVector>, LmError> {
        for input in inputs {
            if input.is_empty() {
                return Err(LmError::InvalidInput("empty input".into()));
            }
            self.vocab.check_ids(input)?;
        }
        let resp = post(
            &self.agent,
            &format!("{}/v1/logits/batch", self.base),
            &BatchRequest { batch: inputs },
        );
        let resp: BatchResponse = match resp {
            Err(LmError::Backend { status: 501 | 503, message }) => {
                return Err(LmError::Unsupported(format!("batched forward: {message}")))
            }
            other => read_json(other?)?,
        };
        if resp.logits.len() != inputs.len() {
            return Err(LmError::Backend {
                status: 200,
                message: format!("batch of {} answered with {} rows", inputs.len(), resp.logits.len()),
            });
        }
        resp.logits.into_iter().map(|row| self.checked_logits(row)).collect()
    }

    fn model_config(&self) -> Result<ModelConfig, LmError> {
        self.config
            .ok_or_else(|| LmError::Unsupported(format!("{} exposes no /v1/config", self.base)))
    }

    fn family(&self) -> ModelFamily {
        self.extras.family.unwrap_or_default()
    }

    fn max_input_len(&self) -> Option<usize> {
        self.extras.max_input_len
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        if !self.has_tokenize {
            return self.vocab.tokenize_whitespace(text);
        }
        let resp: TokenizeResponse = read_json(post(
            &self.agent,
            &format!("{}/v1/tokenize", self.base),
            &TokenizeRequest { text },
        )?)?;
        self.vocab.check_ids(&resp.tokens)?;
        Ok(resp.tokens)
    }

    fn detokenize(&self, ids: &[TokenId]) -> String {
        if !self.has_tokenize {
            return self.vocab.join_whitespace(ids);
        }
        // Subword vocabularies mark word starts with U+2581 (SentencePiece)
        // or U+0120 (byte-level BPE).
        let joined: String = ids.iter().filter_map(|&id| self.vocab.token(id)).collect();
        joined.replace(['\u{2581}', '\u{0120}'], " ").trim().to_string()
    }
}
