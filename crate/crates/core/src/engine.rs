//! Autoregressive dual-stream decoding.
//!
//! Stream A is the with-context prompt, stream B the context-free prompt.
//! Every step runs stream A (and stream B under CAD), combines the logits,
//! applies the repetition penalty and minimum-length EOS mask, samples one
//! token and appends it to both streams. EOS ends generation; it is not part
//! of the output but its step counts as a decoding step.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cad::{self, CadError, CadParams};
use crate::harness::template::{PromptTemplate, TemplateError};
use crate::lm::{LanguageModel, LmError, LogitVector, TokenId};
use crate::sampler::{self, SamplerRng, SamplingConfig, SamplingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Two sequential forward calls per step.
    #[default]
    TwoPass,
    /// Both streams in one batched forward call per step.
    PackedBatch,
}

impl std::str::FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_pass" => Ok(ExecutionMode::TwoPass),
            "packed_batch" => Ok(ExecutionMode::PackedBatch),
            other => Err(format!("unknown execution mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DecodingMethod {
    Vanilla,
    Cad { alpha: f64, execution: ExecutionMode },
}

impl DecodingMethod {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            DecodingMethod::Vanilla => None,
            DecodingMethod::Cad { alpha, .. } => Some(*alpha),
        }
    }

    pub fn is_cad(&self) -> bool {
        matches!(self, DecodingMethod::Cad { .. })
    }
}

/// How a record was actually produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    Vanilla,
    TwoPass,
    PackedBatch,
}

impl RecordMode {
    pub fn is_cad(self) -> bool {
        !matches!(self, RecordMode::Vanilla)
    }
}

impl fmt::Display for RecordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordMode::Vanilla => "vanilla",
            RecordMode::TwoPass => "two_pass",
            RecordMode::PackedBatch => "packed_batch",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRequest {
    pub id: String,
    pub context: String,
    pub query: String,
    pub template: PromptTemplate,
    pub method: DecodingMethod,
    pub sampling: SamplingConfig,
    /// Selects an independent generator stream under `sampling.seed`, so
    /// examples decode identically whatever order they run in.
    pub rng_stream: u64,
    /// Head-truncate the document when the prompt exceeds the backend limit.
    pub truncate_document: bool,
}

impl DecodeRequest {
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        query: impl Into<String>,
        template: PromptTemplate,
        method: DecodingMethod,
        sampling: SamplingConfig,
    ) -> Self {
        Self {
            id: id.into(),
            context: context.into(),
            query: query.into(),
            template,
            method,
            sampling,
            rng_stream: 0,
            truncate_document: true,
        }
    }
}

/// One decoded example. Serializes to the results JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub output: String,
    /// Generated tokens, EOS excluded.
    pub n_tokens: usize,
    /// Decoding steps, including the step that produced EOS.
    pub n_steps: usize,
    /// Logical sequences run through the model.
    pub n_forward: usize,
    /// Adapter invocations; smaller than `n_forward` under packed batching.
    pub n_calls: usize,
    pub wall_s: f64,
    pub s_per_token: f64,
    pub mode: RecordMode,
    pub alpha: Option<f64>,
    pub token_ids: Vec<TokenId>,
    pub prompt_with_context: String,
    pub prompt_without_context: String,
    pub prompt_tokens_with_context: usize,
    pub prompt_tokens_without_context: usize,
    #[serde(default)]
    pub document_truncated: bool,
    #[serde(default)]
    pub flops: Option<f64>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub incomplete: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl GenerationRecord {
    /// Placeholder row for an example that could not be decoded at all.
    pub fn failed(request: &DecodeRequest, model: &str, error: impl fmt::Display) -> Self {
        let mode = match request.method {
            DecodingMethod::Vanilla => RecordMode::Vanilla,
            DecodingMethod::Cad { execution: ExecutionMode::TwoPass, .. } => RecordMode::TwoPass,
            DecodingMethod::Cad { execution: ExecutionMode::PackedBatch, .. } => RecordMode::PackedBatch,
        };
        Self {
            id: request.id.clone(),
            output: String::new(),
            n_tokens: 0,
            n_steps: 0,
            n_forward: 0,
            n_calls: 0,
            wall_s: 0.0,
            s_per_token: 0.0,
            mode,
            alpha: request.method.alpha(),
            token_ids: Vec::new(),
            prompt_with_context: String::new(),
            prompt_without_context: String::new(),
            prompt_tokens_with_context: 0,
            prompt_tokens_without_context: 0,
            document_truncated: false,
            flops: None,
            model: Some(model.to_string()),
            dataset: None,
            incomplete: true,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Cad(#[from] CadError),
    #[error("model error: {0}")]
    Model(#[from] LmError),
    #[error("{stream} prompt of {len} tokens leaves no room for {max_new_tokens} new tokens within the backend limit of {max}")]
    InputTooLong {
        stream: &'static str,
        len: usize,
        max: usize,
        max_new_tokens: usize,
    },
    #[error("generation of {id:?} aborted after {steps} steps: {source}", id = partial.id, steps = partial.n_steps)]
    Aborted {
        partial: Box<GenerationRecord>,
        source: LmError,
    },
}

struct Prompts {
    with_context: String,
    without_context: String,
    tokens_with_context: Vec<TokenId>,
    tokens_without_context: Vec<TokenId>,
    truncated: bool,
}

/// Renders and tokenizes both prompts, shortening the document from the end
/// when the with-context prompt would not fit.
fn build_prompts(model: &dyn LanguageModel, request: &DecodeRequest) -> Result<Prompts, DecodeError> {
    let template = &request.template;
    let (with_context, without_context) = template.render(&request.query, &request.context)?;
    let tokens_with_context = model.tokenize(&with_context)?;
    let tokens_without_context = model.tokenize(&without_context)?;
    if tokens_with_context.is_empty() || tokens_without_context.is_empty() {
        return Err(DecodeError::InvalidRequest("rendered prompt tokenizes to nothing".into()));
    }
    let mut prompts = Prompts {
        with_context,
        without_context,
        tokens_with_context,
        tokens_without_context,
        truncated: false,
    };
    let Some(max) = model.max_input_len() else {
        return Ok(prompts);
    };
    // The last step feeds the prompt plus max_new_tokens - 1 generated tokens.
    let reserve = request.sampling.max_new_tokens.saturating_sub(1);
    let budget = max.saturating_sub(reserve);
    let too_long = |stream, len| DecodeError::InputTooLong {
        stream,
        len,
        max,
        max_new_tokens: request.sampling.max_new_tokens,
    };
    if prompts.tokens_without_context.len() > budget {
        return Err(too_long("without-context", prompts.tokens_without_context.len()));
    }
    if prompts.tokens_with_context.len() <= budget {
        return Ok(prompts);
    }
    if !request.truncate_document {
        return Err(too_long("with-context", prompts.tokens_with_context.len()));
    }
    let words: Vec<&str> = request.context.split_whitespace().collect();
    let attempt = |n: usize| -> Result<(String, Vec<TokenId>), DecodeError> {
        let (text, _) = template.render(&request.query, &words[..n].join(" "))?;
        let tokens = model.tokenize(&text)?;
        Ok((text, tokens))
    };
    // Largest word count whose prompt fits; the prompt length is monotone in it.
    let (mut lo, mut hi) = (0usize, words.len());
    let mut best = None;
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        let (text, tokens) = attempt(mid)?;
        if tokens.len() <= budget {
            best = Some((text, tokens));
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let (text, tokens) = match best {
        Some(found) => found,
        None => {
            let (text, tokens) = attempt(lo)?;
            if tokens.len() > budget || tokens.is_empty() {
                return Err(too_long("with-context", prompts.tokens_with_context.len()));
            }
            (text, tokens)
        }
    };
    prompts.with_context = text;
    prompts.tokens_with_context = tokens;
    prompts.truncated = true;
    Ok(prompts)
}

/// Decodes one request.
pub fn decode(model: &dyn LanguageModel, request: &DecodeRequest) -> Result<GenerationRecord, DecodeError> {
    let sampling = &request.sampling;
    sampling.validate()?;
    if sampling.max_new_tokens == 0 {
        return Err(DecodeError::InvalidRequest("max_new_tokens must be >= 1".into()));
    }
    request.template.check_family(model.family())?;
    let cad_params = match request.method {
        DecodingMethod::Vanilla => None,
        DecodingMethod::Cad { alpha, .. } => Some(CadParams::new(alpha, sampling.temperature)?),
    };
    let mut packed = matches!(
        request.method,
        DecodingMethod::Cad { execution: ExecutionMode::PackedBatch, .. }
    );
    if packed && !model.supports_batch() {
        log::warn!("{}: backend cannot batch, falling back to two forward passes", model.id());
        packed = false;
    }

    let prompts = build_prompts(model, request)?;
    let eos = model.vocab().eos_id() as usize;
    let mut stream_a = prompts.tokens_with_context.clone();
    let mut stream_b = prompts.tokens_without_context.clone();
    let mut generated: Vec<TokenId> = Vec::new();
    let mut rng = SamplerRng::for_stream(sampling.seed, request.rng_stream);
    let (mut n_steps, mut n_forward, mut n_calls) = (0usize, 0usize, 0usize);
    let mut failure = None;

    let start = Instant::now();
    while n_steps < sampling.max_new_tokens {
        let step = match cad_params {
            None => model.forward(&stream_a).map(|ctx| (ctx, None, 1, 1)),
            Some(_) if packed => match model.forward_batch(&[&stream_a, &stream_b]) {
                Ok(mut rows) if rows.len() == 2 => {
                    let unc = rows.pop().expect("two rows");
                    let ctx = rows.pop().expect("two rows");
                    Ok((ctx, Some(unc), 2, 1))
                }
                Ok(rows) => Err(LmError::Backend {
                    status: 200,
                    message: format!("batch of 2 answered with {} rows", rows.len()),
                }),
                Err(LmError::Unsupported(msg)) => {
                    log::warn!("{}: {msg}; falling back to two forward passes", model.id());
                    packed = false;
                    continue;
                }
                Err(e) => Err(e),
            },
            Some(_) => model
                .forward(&stream_a)
                .and_then(|ctx| model.forward(&stream_b).map(|unc| (ctx, Some(unc), 2, 2))),
        };
        let (ctx, unc, sequences, calls) = match step {
            Ok(step) => step,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        n_forward += sequences;
        n_calls += calls;

        let logits: LogitVector = match (&unc, cad_params) {
            (Some(unc), Some(params)) => cad::combine_logits(&ctx, unc, params.alpha())?,
            _ => ctx,
        };
        let mut logits = sampler::apply_repetition_penalty(&logits, &generated, sampling.repetition_penalty);
        if generated.len() < sampling.min_new_tokens {
            if let Some(v) = logits.values_mut().get_mut(eos) {
                *v = f64::NEG_INFINITY;
            }
        }
        let dist = cad::softmax_with_temperature(logits.values(), sampling.temperature)?;
        let token = sampler::sample(&dist, sampling, &mut rng);
        n_steps += 1;
        if token as usize == eos {
            break;
        }
        generated.push(token);
        stream_a.push(token);
        stream_b.push(token);
        debug_assert_eq!(
            &stream_a[prompts.tokens_with_context.len()..],
            &stream_b[prompts.tokens_without_context.len()..]
        );
    }
    let wall_s = start.elapsed().as_secs_f64();

    let mode = match (request.method, packed) {
        (DecodingMethod::Vanilla, _) => RecordMode::Vanilla,
        (DecodingMethod::Cad { .. }, true) => RecordMode::PackedBatch,
        (DecodingMethod::Cad { .. }, false) => RecordMode::TwoPass,
    };
    let mut record = GenerationRecord {
        id: request.id.clone(),
        output: model.detokenize(&generated),
        n_tokens: generated.len(),
        n_steps,
        n_forward,
        n_calls,
        wall_s,
        s_per_token: if n_steps > 0 { wall_s / n_steps as f64 } else { 0.0 },
        mode,
        alpha: request.method.alpha(),
        token_ids: generated,
        prompt_with_context: prompts.with_context,
        prompt_without_context: prompts.without_context,
        prompt_tokens_with_context: prompts.tokens_with_context.len(),
        prompt_tokens_without_context: prompts.tokens_without_context.len(),
        document_truncated: prompts.truncated,
        flops: None,
        model: Some(model.id().to_string()),
        dataset: None,
        incomplete: false,
        error: None,
    };
    match failure {
        None => Ok(record),
        Some(source) => {
            record.incomplete = true;
            record.error = Some(source.to_string());
            Err(DecodeError::Aborted {
                partial: Box::new(record),
                source,
            })
        }
    }
}

/// Aggregate timing of one decoding method over a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub mode: RecordMode,
    pub alpha: Option<f64>,
    pub per_request_s_per_token: Vec<f64>,
    /// Total wall time over total decoding steps.
    pub s_per_token: f64,
    pub total_wall_s: f64,
    pub total_steps: usize,
    pub total_tokens: usize,
    pub total_forward: usize,
    pub total_calls: usize,
}

/// Decodes every request sequentially with `method` and reports timing.
pub fn measure_speed(
    model: &dyn LanguageModel,
    requests: &[DecodeRequest],
    method: DecodingMethod,
) -> Result<SpeedReport, DecodeError> {
    if requests.is_empty() {
        return Err(DecodeError::InvalidRequest("speed measurement needs at least one request".into()));
    }
    let mut per_request = Vec::with_capacity(requests.len());
    let (mut wall, mut steps, mut tokens, mut forward, mut calls) = (0.0, 0, 0, 0, 0);
    let mut mode = RecordMode::Vanilla;
    for request in requests {
        let request = DecodeRequest {
            method,
            ..request.clone()
        };
        let record = decode(model, &request)?;
        per_request.push(record.s_per_token);
        wall += record.wall_s;
        steps += record.n_steps;
        tokens += record.n_tokens;
        forward += record.n_forward;
        calls += record.n_calls;
        mode = record.mode;
    }
    Ok(SpeedReport {
        mode,
        alpha: method.alpha(),
        per_request_s_per_token: per_request,
        s_per_token: if steps > 0 { wall / steps as f64 } else { 0.0 },
        total_wall_s: wall,
        total_steps: steps,
        total_tokens: tokens,
        total_forward: forward,
        total_calls: calls,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::lm::{ModelConfig, ModelFamily, TableLm, Vocabulary};

    fn template() -> PromptTemplate {
        PromptTemplate {
            id: "toy".into(),
            with_context: "{document} {query}".into(),
            without_context: "None {query}".into(),
            family: ModelFamily::DecoderOnly,
        }
    }

    /// After the prompt "d q", emits B then EOS.
    fn b_then_eos() -> TableLm {
        TableLm::from_json(
            r#"{"order": 2, "vocab": ["d", "q", "None", "A", "B", "</s>"], "eos": "</s>",
                "rules": [
                    {"suffix": ["q"], "dist": {"B": 1.0}},
                    {"suffix": ["B"], "dist": {"</s>": 1.0}}
                ],
                "default": {"A": 1.0}}"#,
        )
        .unwrap()
    }

    fn request(method: DecodingMethod, sampling: SamplingConfig) -> DecodeRequest {
        DecodeRequest::new("1", "d", "q", template(), method, sampling)
    }

    #[test]
    fn vanilla_stops_at_eos() {
        let lm = b_then_eos();
        let rec = decode(&lm, &request(DecodingMethod::Vanilla, SamplingConfig::greedy(1, 10))).unwrap();
        assert_eq!(rec.output, "B");
        assert_eq!(rec.n_tokens, 1);
        assert_eq!(rec.n_steps, 2);
        assert_eq!(rec.n_forward, 2);
        assert_eq!(rec.mode, RecordMode::Vanilla);
        assert_eq!(rec.prompt_with_context, "d q");
        assert_eq!(rec.prompt_without_context, "None q");
    }

    #[test]
    fn cad_counts_two_sequences_per_step() {
        let lm = b_then_eos();
        let method = DecodingMethod::Cad { alpha: 0.5, execution: ExecutionMode::TwoPass };
        let rec = decode(&lm, &request(method, SamplingConfig::greedy(1, 10))).unwrap();
        assert_eq!(rec.output, "B");
        assert_eq!((rec.n_forward, rec.n_calls), (4, 4));
        let method = DecodingMethod::Cad { alpha: 0.5, execution: ExecutionMode::PackedBatch };
        let rec = decode(&lm, &request(method, SamplingConfig::greedy(1, 10))).unwrap();
        assert_eq!(rec.mode, RecordMode::PackedBatch);
        assert_eq!((rec.n_forward, rec.n_calls), (4, 2));
    }

    #[test]
    fn min_new_tokens_masks_eos() {
        let lm = b_then_eos();
        // With EOS masked after B the default rule (A) takes over.
        let rec = decode(&lm, &request(DecodingMethod::Vanilla, SamplingConfig::greedy(3, 10))).unwrap();
        assert!(rec.n_tokens >= 3);
        assert_eq!(rec.token_ids[0], 4);
    }

    #[test]
    fn max_new_tokens_caps_generation() {
        let lm = b_then_eos();
        let rec = decode(&lm, &request(DecodingMethod::Vanilla, SamplingConfig::greedy(0, 1))).unwrap();
        assert_eq!((rec.n_tokens, rec.n_steps, rec.n_forward), (1, 1, 1));
    }

    #[test]
    fn zero_alpha_cad_matches_vanilla_with_sampling() {
        let lm = TableLm::from_json(
            r#"{"order": 1, "vocab": ["d", "q", "None", "A", "B", "C", "</s>"], "eos": "</s>",
                "rules": [{"suffix": ["None"], "dist": {"C": 1.0}}],
                "default": {"A": 0.3, "B": 0.3, "C": 0.3, "</s>": 0.1}}"#,
        )
        .unwrap();
        let sampling = SamplingConfig { seed: 11, max_new_tokens: 20, ..SamplingConfig::default() };
        for stream in 0..10 {
            let mut a = request(DecodingMethod::Vanilla, sampling.clone());
            a.rng_stream = stream;
            let mut b = a.clone();
            b.method = DecodingMethod::Cad { alpha: 0.0, execution: ExecutionMode::TwoPass };
            let (ra, rb) = (decode(&lm, &a).unwrap(), decode(&lm, &b).unwrap());
            assert_eq!(ra.token_ids, rb.token_ids);
            assert_eq!(rb.n_forward, 2 * ra.n_forward);
        }
    }

    /// Records every prefix it is asked about.
    struct Recording {
        inner: TableLm,
        seen: Mutex<Vec<Vec<TokenId>>>,
        fail_after: Option<usize>,
    }

    impl LanguageModel for Recording {
        fn id(&self) -> &str {
            "recording"
        }
        fn vocab(&self) -> &Vocabulary {
            self.inner.vocab()
        }
        fn forward(&self, input: &[TokenId]) -> Result<LogitVector, LmError> {
            let mut seen = self.seen.lock().unwrap();
            if self.fail_after.is_some_and(|n| seen.len() >= n) {
                return Err(LmError::Transport("connection reset".into()));
            }
            seen.push(input.to_vec());
            self.inner.forward(input)
        }
        fn model_config(&self) -> Result<ModelConfig, LmError> {
            self.inner.model_config()
        }
        fn max_input_len(&self) -> Option<usize> {
            self.inner.max_input_len()
        }
    }

    fn uniform() -> TableLm {
        TableLm::from_json(
            r#"{"order": 1, "vocab": ["w1", "w2", "w3", "q", "None", "A", "B", "</s>", "<unk>"], "eos": "</s>",
                "default": {"A": 0.5, "B": 0.5}}"#,
        )
        .unwrap()
    }

    #[test]
    fn streams_share_the_generated_suffix() {
        let lm = Recording { inner: uniform(), seen: Mutex::new(Vec::new()), fail_after: None };
        let method = DecodingMethod::Cad { alpha: 0.3, execution: ExecutionMode::TwoPass };
        let sampling = SamplingConfig { seed: 3, min_new_tokens: 6, max_new_tokens: 6, ..SamplingConfig::default() };
        let mut req = request(method, sampling);
        req.context = "w1 w2 w3".into();
        let rec = decode(&lm, &req).unwrap();
        let seen = lm.seen.lock().unwrap();
        assert_eq!(seen.len(), 12);
        for (t, pair) in seen.chunks(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            assert_eq!(&a[..rec.prompt_tokens_with_context], &[0, 1, 2, 3]);
            assert_eq!(&b[..rec.prompt_tokens_without_context], &[4, 3]);
            assert_eq!(&a[4..], &rec.token_ids[..t]);
            assert_eq!(&b[2..], &rec.token_ids[..t]);
        }
    }

    #[test]
    fn transport_failure_returns_partial_record() {
        let lm = Recording { inner: uniform(), seen: Mutex::new(Vec::new()), fail_after: Some(3) };
        let sampling = SamplingConfig { min_new_tokens: 5, max_new_tokens: 5, ..SamplingConfig::default() };
        match decode(&lm, &request(DecodingMethod::Vanilla, sampling)) {
            Err(DecodeError::Aborted { partial, source }) => {
                assert!(source.is_transport());
                assert!(partial.incomplete);
                assert_eq!(partial.n_tokens, 3);
                assert!(partial.error.is_some());
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn long_documents_are_head_truncated() {
        let lm = uniform().with_max_input_len(Some(6));
        let sampling = SamplingConfig { min_new_tokens: 2, max_new_tokens: 2, ..SamplingConfig::default() };
        let mut req = request(DecodingMethod::Vanilla, sampling);
        req.context = "w1 w2 w3 w1 w2 w3".into();
        let rec = decode(&lm, &req).unwrap();
        assert!(rec.document_truncated);
        assert_eq!(rec.prompt_with_context, "w1 w2 w3 w1 q");
        req.truncate_document = false;
        match decode(&lm, &req) {
            Err(DecodeError::InputTooLong { stream, .. }) => assert_eq!(stream, "with-context"),
            other => panic!("expected input-too-long, got {other:?}"),
        }
        let tiny = uniform().with_max_input_len(Some(2));
        match decode(&tiny, &request(DecodingMethod::Vanilla, SamplingConfig::greedy(0, 2))) {
            Err(DecodeError::InputTooLong { stream, .. }) => assert_eq!(stream, "without-context"),
            other => panic!("expected input-too-long, got {other:?}"),
        }
    }

    #[test]
    fn invalid_requests() {
        let lm = b_then_eos();
        let bad = SamplingConfig { max_new_tokens: 0, ..SamplingConfig::greedy(0, 0) };
        assert!(matches!(decode(&lm, &request(DecodingMethod::Vanilla, bad)), Err(DecodeError::InvalidRequest(_))));
        let neg = DecodingMethod::Cad { alpha: -1.0, execution: ExecutionMode::TwoPass };
        assert!(matches!(decode(&lm, &request(neg, SamplingConfig::greedy(0, 3))), Err(DecodeError::Cad(_))));
        let mut wrong_family = request(DecodingMethod::Vanilla, SamplingConfig::greedy(0, 3));
        wrong_family.template.family = ModelFamily::EncoderDecoder;
        assert!(matches!(decode(&lm, &wrong_family), Err(DecodeError::Template(_))));
    }

    #[test]
    fn speed_report_counts() {
        let lm = b_then_eos();
        let reqs = vec![request(DecodingMethod::Vanilla, SamplingConfig::greedy(1, 10)); 3];
        let v = measure_speed(&lm, &reqs, DecodingMethod::Vanilla).unwrap();
        let c = measure_speed(&lm, &reqs, DecodingMethod::Cad { alpha: 0.5, execution: ExecutionMode::TwoPass }).unwrap();
        assert_eq!(v.total_forward * 2, c.total_forward);
        assert_eq!(v.per_request_s_per_token.len(), 3);
        assert!(v.s_per_token > 0.0);
        assert!(measure_speed(&lm, &[], DecodingMethod::Vanilla).is_err());
    }
}
