//! Inference cost model.
//!
//! Non-embedding parameters `N = 2 d_model n_layer (2 d_attn + d_ff)`, forward
//! cost per token `C = 2N + 2 n_layer n_input d_attn` (or just `2N`), and per
//! step `(t + |x| + |c|) C` for ordinary decoding against `(2t + 2|x| + |c|) C`
//! for context-aware decoding, where `t` counts tokens generated so far.
//! Without a KV cache each step reprocesses the whole prefix of every stream,
//! which is what these expressions count.
//!
//! Token counts are integers and are summed exactly in `u128`; FLOP values
//! are `f64`, exact up to 2^53.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::GenerationRecord;
use crate::lm::ModelConfig;

#[derive(Debug, Error, PartialEq)]
pub enum FlopsError {
    #[error("unsupported capability: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// `2N + 2 n_layer n_input d_attn`.
    #[default]
    ExactWithAttention,
    /// `2N`, dropping the attention term.
    TwoNApprox,
}

impl std::str::FromStr for Approximation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" | "exact_with_attention" => Ok(Approximation::ExactWithAttention),
            "2n" | "two_n" | "two_n_approx" => Ok(Approximation::TwoNApprox),
            other => Err(format!("unknown approximation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Vanilla,
    Cad,
}

/// Exact non-embedding parameter count.
pub fn n_params_exact(config: &ModelConfig) -> u128 {
    2 * config.d_model as u128 * config.n_layer as u128 * (2 * config.d_attn as u128 + config.d_ff as u128)
}

pub fn n_params(config: &ModelConfig) -> f64 {
    n_params_exact(config) as f64
}

/// FLOPs per token of one forward pass over `n_input` tokens.
pub fn c_forward(config: &ModelConfig, n_input: u64, approx: Approximation) -> f64 {
    let base = 2 * n_params_exact(config);
    match approx {
        Approximation::TwoNApprox => base as f64,
        Approximation::ExactWithAttention => {
            (base + 2 * config.n_layer as u128 * n_input as u128 * config.d_attn as u128) as f64
        }
    }
}

/// Tokens processed at step `t`, i.e. the step cost in units of `C_forward`.
pub fn step_units(mode: CostMode, len_c: u64, len_x: u64, t: u64) -> u64 {
    match mode {
        CostMode::Vanilla => t + len_x + len_c,
        CostMode::Cad => 2 * t + 2 * len_x + len_c,
    }
}

/// Closed-form sum of [`step_units`] over steps `0..n_steps`.
pub fn total_units(mode: CostMode, len_c: u64, len_x: u64, n_steps: u64) -> u128 {
    let (n, c, x) = (n_steps as u128, len_c as u128, len_x as u128);
    let triangle = n * n.saturating_sub(1) / 2;
    match mode {
        CostMode::Vanilla => triangle + n * (x + c),
        CostMode::Cad => 2 * triangle + n * (2 * x + c),
    }
}

/// Cost of one step whose streams hold `lengths` tokens each.
fn streams_flops(config: &ModelConfig, lengths: &[u64], approx: Approximation) -> f64 {
    lengths
        .iter()
        .map(|&n| n as f64 * c_forward(config, n, approx))
        .sum()
}

/// Absolute FLOPs of step `t`. In exact mode each stream pays the attention
/// term for its own length.
pub fn step_flops(
    config: &ModelConfig,
    mode: CostMode,
    len_c: u64,
    len_x: u64,
    t: u64,
    approx: Approximation,
) -> f64 {
    match mode {
        CostMode::Vanilla => streams_flops(config, &[t + len_x + len_c], approx),
        CostMode::Cad => streams_flops(config, &[t + len_x + len_c, t + len_x], approx),
    }
}

/// FLOPs of a whole generation of `n_steps` steps.
pub fn total_flops(
    config: &ModelConfig,
    mode: CostMode,
    len_c: u64,
    len_x: u64,
    n_steps: u64,
    approx: Approximation,
) -> f64 {
    match approx {
        Approximation::TwoNApprox => total_units(mode, len_c, len_x, n_steps) as f64 * c_forward(config, 1, approx),
        Approximation::ExactWithAttention => (0..n_steps)
            .map(|t| step_flops(config, mode, len_c, len_x, t, approx))
            .sum(),
    }
}

/// Fills `flops` from the prompt lengths and step count of a record.
///
/// The context-free prompt plays the role of `x`; the with-context prompt is
/// `x` plus the document, so its length is `|x| + |c|`.
pub fn annotate(
    record: &GenerationRecord,
    config: Option<&ModelConfig>,
    approx: Approximation,
) -> Result<GenerationRecord, FlopsError> {
    let config = config.ok_or_else(|| FlopsError::Unsupported("model exposes no architecture config".into()))?;
    let with_context = record.prompt_tokens_with_context as u64;
    let without_context = record.prompt_tokens_without_context as u64;
    let flops: f64 = (0..record.n_steps as u64)
        .map(|t| {
            let mut streams = vec![with_context + t];
            if record.mode.is_cad() {
                streams.push(without_context + t);
            }
            streams_flops(config, &streams, approx)
        })
        .sum();
    let mut out = record.clone();
    out.flops = Some(flops);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub t: u64,
    pub vanilla_units: u64,
    pub cad_units: u64,
    pub vanilla_flops: f64,
    pub cad_flops: f64,
    pub ratio: f64,
}

/// Everything the cost table reports for one geometry and length profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub config: ModelConfig,
    pub approximation: Approximation,
    pub len_c: u64,
    pub len_x: u64,
    pub len_y: u64,
    pub n_params_nonembed: f64,
    /// Evaluated at the with-context prompt length.
    pub c_forward: f64,
    pub steps: Vec<StepCost>,
    pub total_vanilla: f64,
    pub total_cad: f64,
    pub total_ratio: f64,
}

pub fn breakdown(config: &ModelConfig, len_c: u64, len_x: u64, len_y: u64, approx: Approximation) -> CostBreakdown {
    let steps: Vec<StepCost> = (0..len_y)
        .map(|t| {
            let vanilla_flops = step_flops(config, CostMode::Vanilla, len_c, len_x, t, approx);
            let cad_flops = step_flops(config, CostMode::Cad, len_c, len_x, t, approx);
            StepCost {
                t,
                vanilla_units: step_units(CostMode::Vanilla, len_c, len_x, t),
                cad_units: step_units(CostMode::Cad, len_c, len_x, t),
                vanilla_flops,
                cad_flops,
                ratio: cad_flops / vanilla_flops,
            }
        })
        .collect();
    let total_vanilla = total_flops(config, CostMode::Vanilla, len_c, len_x, len_y, approx);
    let total_cad = total_flops(config, CostMode::Cad, len_c, len_x, len_y, approx);
    CostBreakdown {
        config: *config,
        approximation: approx,
        len_c,
        len_x,
        len_y,
        n_params_nonembed: n_params(config),
        c_forward: c_forward(config, (len_c + len_x).max(1), approx),
        steps,
        total_vanilla,
        total_cad,
        total_ratio: total_cad / total_vanilla,
    }
}
