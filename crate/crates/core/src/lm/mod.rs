//! Language-model interface shared by every backend.
//!
//! A backend turns a token prefix into next-token logits. Two backends ship
//! here: [`TableLm`], a deterministic suffix-rule model used as an exact
//! oracle in tests and desk-scale sweeps, and [`RemoteLm`], a client for the
//! HTTP logit protocol. [`LogitServer`] serves any backend over that same
//! protocol.

mod remote;
mod server;
mod table;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::RemoteLm;
pub use server::LogitServer;
pub use table::{TableLm, TableLmSpec, TableRule};

/// Index into a [`Vocabulary`].
pub type TokenId = u32;

/// Floor applied to zero probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown token {0:?} and the vocabulary has no <unk> entry")]
    UnknownToken(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {message}")]
    Backend { status: u16, message: String },
    #[error("unsupported capability: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LmError {
    /// True when the failure happened before the backend produced an answer.
    pub fn is_transport(&self) -> bool {
        matches!(self, LmError::Transport(_))
    }
}

/// Ordered, duplicate-free token strings with a designated end-of-sequence id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos_id: TokenId,
    unk_id: Option<TokenId>,
}

impl Vocabulary {
    pub const UNK: &'static str = "<unk>";

    pub fn new(tokens: Vec<String>, eos_id: TokenId) -> Result<Self, LmError> {
        if tokens.is_empty() {
            return Err(LmError::InvalidSpec("vocabulary is empty".into()));
        }
        if tokens.len() > TokenId::MAX as usize {
            return Err(LmError::InvalidSpec("vocabulary too large".into()));
        }
        if eos_id as usize >= tokens.len() {
            return Err(LmError::InvalidSpec(format!(
                "eos id {eos_id} out of range for vocabulary of size {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(LmError::InvalidSpec(format!("duplicate token {tok:?}")));
            }
        }
        let unk_id = index.get(Self::UNK).copied();
        Ok(Self {
            tokens,
            index,
            eos_id,
            unk_id,
        })
    }

    /// Builds a vocabulary naming the end-of-sequence token by string.
    pub fn with_eos_token(tokens: Vec<String>, eos: &str) -> Result<Self, LmError> {
        let eos_id = tokens
            .iter()
            .position(|t| t == eos)
            .ok_or_else(|| LmError::InvalidSpec(format!("eos token {eos:?} not in vocabulary")))?;
        Self::new(tokens, eos_id as TokenId)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace tokenization. Unknown words map to `<unk>` when the
    /// vocabulary has one and are an error otherwise.
    pub fn tokenize_whitespace(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        text.split_whitespace()
            .map(|word| match self.id_of(word) {
                Some(id) => Ok(id),
                None => self
                    .unk_id
                    .ok_or_else(|| LmError::UnknownToken(word.to_string())),
            })
            .collect()
    }

    /// Inverse of [`Self::tokenize_whitespace`] for in-vocabulary words.
    pub fn join_whitespace(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<(), LmError> {
        match ids.iter().find(|&&id| id as usize >= self.size()) {
            Some(id) => Err(LmError::InvalidInput(format!(
                "token id {id} out of range for vocabulary of size {}",
                self.size()
            ))),
            None => Ok(()),
        }
    }
}

/// Token ids known to be valid for some vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self, LmError> {
        vocab.check_ids(&ids)?;
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

/// Unnormalized next-token scores, one per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Wraps adapter output, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, LmError> {
        if values.is_empty() {
            return Err(LmError::InvalidInput("empty logit vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LmError::InvalidInput(format!(
                "non-finite logit {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    /// Wraps values that may contain `-inf` masks. Used inside the decode
    /// loop after processors run; never returned by adapters.
    pub(crate) fn masked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Architecture family; selects the prompt template row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    DecoderOnly,
    EncoderDecoder,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::DecoderOnly => "decoder_only",
            ModelFamily::EncoderDecoder => "encoder_decoder",
        })
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "decoder_only" | "decoder" => Ok(ModelFamily::DecoderOnly),
            "encoder_decoder" | "seq2seq" => Ok(ModelFamily::EncoderDecoder),
            other => Err(format!("unknown model family {other:?}")),
        }
    }
}

/// Transformer geometry consumed by FLOPs accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layer: u64,
    pub d_model: u64,
    pub d_attn: u64,
    pub d_ff: u64,
    pub n_heads: u64,
    pub n_vocab: u64,
}

impl ModelConfig {
    /// Geometry with the usual proportions `d_attn = d_model`, `d_ff = 4 d_model`.
    pub fn standard(n_layer: u64, d_model: u64, n_heads: u64, n_vocab: u64) -> Self {
        Self {
            n_layer,
            d_model,
            d_attn: d_model,
            d_ff: 4 * d_model,
            n_heads,
            n_vocab,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let fields = [
            ("n_layer", self.n_layer),
            ("d_model", self.d_model),
            ("d_attn", self.d_attn),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("n_vocab", self.n_vocab),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(LmError::InvalidSpec(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn has_standard_proportions(&self) -> bool {
        self.d_attn == self.d_model && self.d_ff == 4 * self.d_model
    }
}

/// A next-token logit producer.
///
/// Implementations must be safe to share across threads; the sweep runner
/// decodes many examples concurrently against one handle.
pub trait LanguageModel: Send + Sync {
    /// Short identifier used in reports.
    fn id(&self) -> &str;

    fn vocab(&self) -> &Vocabulary;

    /// Logits for the position following `input`.
    fn forward(&self, input: &[TokenId]) -> Result<LogitVector, LmError>;

    /// Whether [`Self::forward_batch`] runs several prefixes in one call.
    fn supports_batch(&self) -> bool {
        false
    }

    /// One call carrying several prefixes. Backends without batching return
    /// [`LmError::Unsupported`].
    fn forward_batch(&self, _inputs: &[&[TokenId]]) -> Result<Vec<LogitVector>, LmError> {
        Err(LmError::Unsupported("batched forward".into()))
    }

    fn model_config(&self) -> Result<ModelConfig, LmError>;

    fn family(&self) -> ModelFamily {
        ModelFamily::DecoderOnly
    }

    /// Longest prefix the backend accepts, if bounded.
    fn max_input_len(&self) -> Option<usize> {
        None
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        self.vocab().tokenize_whitespace(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> String {
        self.vocab().join_whitespace(ids)
    }
}

/// Opens a model from a `table:<path>` or `remote:<url>` locator.
pub fn open_model(locator: &str) -> Result<Box<dyn LanguageModel>, LmError> {
    if let Some(path) = locator.strip_prefix("table:") {
        Ok(Box::new(TableLm::from_path(path)?))
    } else if let Some(url) = locator.strip_prefix("remote:") {
        Ok(Box::new(RemoteLm::connect(url)?))
    } else {
        Err(LmError::InvalidInput(format!(
            "model locator {locator:?} must start with table: or remote:"
        )))
    }
}
