use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use ctxdecode::engine::{measure_speed, DecodeRequest, DecodingMethod, ExecutionMode, SpeedReport};
use ctxdecode::harness::{load_dataset, PromptTemplate, RunManifest};

use crate::commands::{check_alpha, open, usage, DatasetArgs, ModeArg, SamplingArgs};
use crate::Outcome;

/// Numeric precision of the logit arithmetic, reported next to timings.
const PRECISION: &str = "fp64 logits on CPU";
const BATCH_SIZE: usize = 1;

#[derive(Args, Debug)]
pub struct BenchSpeedArgs {
    #[arg(long)]
    model: String,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Comma-separated subset of vanilla,cad.
    #[arg(long, default_value = "vanilla,cad")]
    modes: String,
    /// PMI weight of the cad mode.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "two-pass")]
    mode: ModeArg,
    /// Timed passes over the workload per mode.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
    /// Untimed passes before measuring.
    #[arg(long, default_value_t = 1)]
    warmup: u64,
    /// Use only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    literal_template_table: bool,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Directory for speed.json, speed.md and the manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ModeSummary {
    mode: String,
    alpha: Option<f64>,
    repeats: Vec<f64>,
    mean_s_per_token: f64,
    total_steps: usize,
    total_tokens: usize,
    total_forward: usize,
    total_calls: usize,
}

#[derive(Debug, Serialize)]
struct SpeedTable {
    precision: &'static str,
    batch_size: usize,
    warmup: u64,
    repeats: u64,
    n_examples: usize,
    modes: Vec<ModeSummary>,
    /// Mean CAD seconds per token over mean vanilla seconds per token.
    ratio: Option<f64>,
    /// CAD forwards per step over vanilla forwards per step.
    forward_ratio_per_step: Option<f64>,
}

fn parse_modes(spec: &str, alpha: f64, execution: ExecutionMode) -> Result<Vec<(&'static str, DecodingMethod)>> {
    let mut modes = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let entry = match item {
            "vanilla" => ("vanilla", DecodingMethod::Vanilla),
            "cad" => ("cad", DecodingMethod::Cad { alpha, execution }),
            other => return Err(usage(format!("unknown mode {other:?}; expected vanilla or cad"))),
        };
        if !modes.iter().any(|(name, _)| *name == entry.0) {
            modes.push(entry);
        }
    }
    if modes.is_empty() {
        return Err(usage("--modes is empty"));
    }
    Ok(modes)
}

pub fn bench_speed(args: BenchSpeedArgs) -> Result<Outcome> {
    check_alpha(args.alpha)?;
    if args.alpha == 0.0 && args.modes.contains("cad") {
        return Err(usage("--alpha 0 makes the cad mode identical to vanilla"));
    }
    let kind = args.dataset.kind()?;
    let sampling = args.sampling.resolve(kind)?;
    let modes = parse_modes(&args.modes, args.alpha, args.mode.into())?;
    let model = open(&args.model)?;
    let template = PromptTemplate::builtin(kind, model.family(), args.literal_template_table);
    RunManifest::new(
        "bench-speed",
        sampling.seed,
        json!({
            "model": args.model,
            "model_id": model.id(),
            "dataset": args.dataset.dataset,
            "dataset_kind": kind,
            "template": template,
            "modes": modes.iter().map(|(_, m)| m).collect::<Vec<_>>(),
            "sampling": sampling,
            "repeats": args.repeats,
            "warmup": args.warmup,
            "limit": args.limit,
            "batch_size": BATCH_SIZE,
            "precision": PRECISION,
        }),
    )
    .write(&args.out)?;

    let mut examples = load_dataset(&args.dataset.dataset, args.dataset.strict)
        .map_err(|e| usage(e.to_string()))?
        .examples;
    if let Some(limit) = args.limit {
        examples.truncate(limit.max(1));
    }
    let requests: Vec<DecodeRequest> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = DecodeRequest::new(
                ex.id.clone(),
                ex.document.clone(),
                ex.query.clone(),
                template.clone(),
                DecodingMethod::Vanilla,
                sampling.clone(),
            );
            r.rng_stream = i as u64;
            r
        })
        .collect();

    for _ in 0..args.warmup {
        for (_, method) in &modes {
            measure_speed(model.as_ref(), &requests, *method)?;
        }
    }
    let mut summaries = Vec::new();
    for (name, method) in &modes {
        let runs: Vec<SpeedReport> = (0..args.repeats)
            .map(|_| measure_speed(model.as_ref(), &requests, *method))
            .collect::<Result<_, _>>()?;
        let repeats: Vec<f64> = runs.iter().map(|r| r.s_per_token).collect();
        let last = runs.last().expect("at least one repeat");
        summaries.push(ModeSummary {
            mode: name.to_string(),
            alpha: method.alpha(),
            mean_s_per_token: repeats.iter().sum::<f64>() / repeats.len() as f64,
            repeats,
            total_steps: last.total_steps,
            total_tokens: last.total_tokens,
            total_forward: last.total_forward,
            total_calls: last.total_calls,
        });
    }
    let find = |name: &str| summaries.iter().find(|s| s.mode == name);
    let (ratio, forward_ratio_per_step) = match (find("vanilla"), find("cad")) {
        (Some(v), Some(c)) => (
            Some(c.mean_s_per_token / v.mean_s_per_token),
            Some((c.total_forward as f64 / c.total_steps as f64) / (v.total_forward as f64 / v.total_steps as f64)),
        ),
        _ => (None, None),
    };
    let table = SpeedTable {
        precision: PRECISION,
        batch_size: BATCH_SIZE,
        warmup: args.warmup,
        repeats: args.repeats,
        n_examples: requests.len(),
        modes: summaries,
        ratio,
        forward_ratio_per_step,
    };

    let mut md = String::new();
    writeln!(md, "| mode | repeat | s_per_token |")?;
    writeln!(md, "|---|---:|---:|")?;
    for s in &table.modes {
        for (i, v) in s.repeats.iter().enumerate() {
            writeln!(md, "| {} | {} | {:.3e} |", s.mode, i + 1, v)?;
        }
        writeln!(md, "| {} | mean | {:.3e} |", s.mode, s.mean_s_per_token)?;
    }
    writeln!(md)?;
    writeln!(md, "| mode | steps | tokens | forward passes | adapter calls |")?;
    writeln!(md, "|---|---:|---:|---:|---:|")?;
    for s in &table.modes {
        writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            s.mode, s.total_steps, s.total_tokens, s.total_forward, s.total_calls
        )?;
    }
    writeln!(md)?;
    if let Some(r) = table.ratio {
        writeln!(md, "CAD / vanilla seconds per token: {r:.3}")?;
    }
    if let Some(r) = table.forward_ratio_per_step {
        writeln!(md, "CAD / vanilla forward passes per step: {r}")?;
    }
    writeln!(
        md,
        "precision: {}; batch size: {}; warmup passes excluded: {}; examples: {}",
        table.precision, table.batch_size, table.warmup, table.n_examples
    )?;
    std::fs::write(args.out.join("speed.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    std::fs::write(args.out.join("speed.md"), &md)?;
    print!("{md}");
    Ok(Outcome::Complete)
}
