use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use ctxdecode::engine::{decode, DecodeError, DecodeRequest, DecodingMethod, ExecutionMode, GenerationRecord};
use ctxdecode::flops::{self, Approximation};
use ctxdecode::harness::eval::{aggregate, load_predictions, score_predictions, Prediction};
use ctxdecode::harness::{
    load_dataset, write_jsonl, DatasetKind, EvalReport, HarnessError, PromptTemplate, RunManifest, SamplingOverrides,
    SweepSpec,
};
use ctxdecode::lm::{open_model, LanguageModel, LmError, ModelConfig};
use ctxdecode::metrics::{ExternalScorer, MockScorer};
use ctxdecode::sampler::{SamplingConfig, SamplingStrategy};

use crate::{JobsArg, Outcome};

/// Marks an error as the caller's fault (exit 64).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    TwoPass,
    PackedBatch,
}

impl From<ModeArg> for ExecutionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TwoPass => ExecutionMode::TwoPass,
            ModeArg::PackedBatch => ExecutionMode::PackedBatch,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Greedy,
    TopkTopp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApproxArg {
    Exact,
    #[value(name = "2n")]
    TwoN,
}

impl From<ApproxArg> for Approximation {
    fn from(a: ApproxArg) -> Self {
        match a {
            ApproxArg::Exact => Approximation::ExactWithAttention,
            ApproxArg::TwoN => Approximation::TwoNApprox,
        }
    }
}

/// Sampling flags; anything omitted falls back to the dataset's defaults.
#[derive(Args, Debug, Clone)]
pub struct SamplingArgs {
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    repetition_penalty: Option<f64>,
    #[arg(long)]
    min_new_tokens: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplingArgs {
    pub fn resolve(&self, kind: DatasetKind) -> Result<SamplingConfig> {
        let overrides = SamplingOverrides {
            strategy: self.strategy.map(|s| match s {
                StrategyArg::Greedy => SamplingStrategy::Greedy,
                StrategyArg::TopkTopp => SamplingStrategy::TopkTopp,
            }),
            top_k: self.top_k,
            top_p: self.top_p,
            temperature: self.temperature,
            repetition_penalty: self.repetition_penalty,
            min_new_tokens: self.min_new_tokens,
            max_new_tokens: self.max_new_tokens,
        };
        let config = overrides.apply(kind.hyperparameters().sampling_config(self.seed));
        config.validate().map_err(|e| usage(e.to_string()))?;
        if config.max_new_tokens == 0 {
            return Err(usage("max_new_tokens must be >= 1"));
        }
        Ok(config)
    }
}

/// Dataset file plus an optional explicit kind.
#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// JSONL file with id, query, document and reference fields.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset kind; inferred from the file name when omitted.
    #[arg(long)]
    pub dataset_kind: Option<DatasetKind>,
    /// Fail on the first malformed row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

impl DatasetArgs {
    pub fn kind(&self) -> Result<DatasetKind> {
        self.dataset_kind
            .or_else(|| DatasetKind::infer_from_path(&self.dataset))
            .ok_or_else(|| {
                usage(format!(
                    "cannot infer the dataset kind from {}; pass --dataset-kind",
                    self.dataset.display()
                ))
            })
    }
}

pub fn open(locator: &str) -> Result<Box<dyn LanguageModel>> {
    open_model(locator).map_err(|e| match e {
        LmError::InvalidInput(msg) => usage(msg),
        other => anyhow::Error::new(other).context(format!("cannot open model {locator}")),
    })
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(usage(format!("--alpha must be finite and >= 0, got {alpha}")))
    }
}

/// α = 0 is ordinary decoding.
pub fn method_for(alpha: f64, mode: ExecutionMode) -> DecodingMethod {
    if alpha == 0.0 {
        DecodingMethod::Vanilla
    } else {
        DecodingMethod::Cad { alpha, execution: mode }
    }
}

fn harness_error(e: HarnessError) -> anyhow::Error {
    match e {
        HarnessError::InvalidSpec(_)
        | HarnessError::EmptyDataset
        | HarnessError::MalformedRow(_)
        | HarnessError::NoValidRows(_)
        | HarnessError::OrphanPredictions { .. } => usage(e.to_string()),
        other => other.into(),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// `table:<path>` or `remote:<url>`.
    #[arg(long)]
    model: String,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// JSON prompt template replacing the built-in one.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Use the context-free PubMedQA prompt exactly as printed in the
    /// published template table.
    #[arg(long)]
    literal_template_table: bool,
    /// PMI weight; 0 decodes without the context-free stream.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, value_enum, default_value = "two-pass")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "exact")]
    approximation: ApproxArg,
    /// Error instead of head-truncating documents that do not fit.
    #[arg(long)]
    no_truncate: bool,
    /// Results JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Manifest path; defaults to manifest.json beside the results.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    jobs: JobsArg,
}

pub fn generate(args: GenerateArgs) -> Result<Outcome> {
    check_alpha(args.alpha)?;
    let kind = args.dataset.kind()?;
    let sampling = args.sampling.resolve(kind)?;
    let model = open(&args.model)?;
    let template = match &args.template {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<PromptTemplate>(&text)
                .map_err(|e| usage(format!("{}: invalid template: {e}", path.display())))?
        }
        None => PromptTemplate::builtin(kind, model.family(), args.literal_template_table),
    };
    template.check_family(model.family()).map_err(|e| usage(e.to_string()))?;
    let method = method_for(args.alpha, args.mode.into());
    let approximation: Approximation = args.approximation.into();

    let manifest_dir = args.manifest.as_deref().map(parent_dir).unwrap_or_else(|| parent_dir(&args.out));
    let manifest = RunManifest::new(
        "generate",
        sampling.seed,
        json!({
            "model": args.model,
            "model_id": model.id(),
            "dataset": args.dataset.dataset,
            "dataset_kind": kind,
            "template": template,
            "alpha": args.alpha,
            "method": method,
            "sampling": sampling,
            "approximation": approximation,
            "truncate_document": !args.no_truncate,
            "jobs": args.jobs.get(),
            "out": args.out,
        }),
    );
    match &args.manifest {
        Some(path) => {
            std::fs::create_dir_all(parent_dir(path))?;
            std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        }
        None => manifest.write(&manifest_dir)?,
    }

    let loaded = load_dataset(&args.dataset.dataset, args.dataset.strict).map_err(harness_error)?;
    for diag in &loaded.diagnostics {
        log::warn!("{}: skipped {diag}", args.dataset.dataset.display());
    }
    let config = model.model_config().ok();
    let model = model.as_ref();
    let pool = args.jobs.pool()?;
    let records: Vec<GenerationRecord> = pool.install(|| {
        loaded
            .examples
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut request = DecodeRequest::new(
                    ex.id.clone(),
                    ex.document.clone(),
                    ex.query.clone(),
                    template.clone(),
                    method,
                    sampling.clone(),
                );
                request.rng_stream = i as u64;
                request.truncate_document = !args.no_truncate;
                let mut record = match decode(model, &request) {
                    Ok(record) => flops::annotate(&record, config.as_ref(), approximation).unwrap_or(record),
                    Err(DecodeError::Aborted { partial, .. }) => *partial,
                    Err(e) => GenerationRecord::failed(&request, model.id(), e),
                };
                record.dataset = Some(kind.display_name().to_string());
                record
            })
            .collect()
    });
    write_jsonl(&args.out, &records)?;

    let failed: Vec<&GenerationRecord> = records.iter().filter(|r| r.incomplete).collect();
    for r in &failed {
        log::error!("{}: {}", r.id, r.error.as_deref().unwrap_or("incomplete"));
    }
    eprintln!(
        "wrote {} records to {} ({} incomplete, {} rows skipped)",
        records.len(),
        args.out.display(),
        failed.len(),
        loaded.diagnostics.len()
    );
    Ok(if failed.is_empty() && loaded.diagnostics.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predictions JSONL (at least id and output per row).
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Comma-separated: `rouge` and optionally `external:<url>`.
    #[arg(long, default_value = "rouge")]
    metrics: String,
    /// Tokenize ROUGE without Porter stemming.
    #[arg(long)]
    no_stem: bool,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_metrics(spec: &str) -> Result<Option<ExternalScorer>> {
    let mut scorer = None;
    let mut rouge = false;
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "rouge" {
            rouge = true;
        } else if let Some(url) = item.strip_prefix("external:") {
            if url.is_empty() {
                return Err(usage("external: needs a scorer URL"));
            }
            let mut s = ExternalScorer::new();
            s.register_all(url);
            scorer = Some(s);
        } else {
            return Err(usage(format!("unknown metric {item:?}; expected rouge or external:<url>")));
        }
    }
    if !rouge {
        return Err(usage("--metrics must include rouge"));
    }
    Ok(scorer)
}

pub fn evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let scorer = parse_metrics(&args.metrics)?;
    let dataset_name = match args.dataset.kind() {
        Ok(kind) => kind.display_name().to_string(),
        Err(_) => args
            .dataset
            .dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    };
    RunManifest::new(
        "evaluate",
        0,
        json!({
            "pred": args.pred,
            "dataset": args.dataset.dataset,
            "dataset_name": dataset_name,
            "metrics": args.metrics,
            "stem": !args.no_stem,
        }),
    )
    .write(&args.out)?;

    let loaded = load_dataset(&args.dataset.dataset, args.dataset.strict).map_err(harness_error)?;
    let predictions = load_predictions(&args.pred).map_err(harness_error)?;
    let default_model = args
        .pred
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "predictions".into());

    // One cell per (model, alpha), in first-seen order.
    let mut groups: Vec<((String, f64), Vec<Prediction>)> = Vec::new();
    for p in predictions {
        let key = (p.model.clone().unwrap_or_else(|| default_model.clone()), p.alpha.unwrap_or(0.0));
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, group)) => group.push(p),
            None => groups.push((key, vec![p])),
        }
    }
    if groups.is_empty() {
        return Err(usage(format!("{} holds no predictions", args.pred.display())));
    }
    let mut cells = Vec::new();
    for ((model, alpha), group) in &groups {
        let scores =
            score_predictions(&loaded.examples, group, !args.no_stem, scorer.as_ref()).map_err(harness_error)?;
        cells.push(aggregate(&dataset_name, model, *alpha, loaded.examples.len(), &scores));
    }
    let report = EvalReport::new(cells);
    report.emit(&args.out)?;
    print!("{}", report.main_markdown());
    Ok(if report.incomplete_cells().next().is_none() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for cell records and reports.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    jobs: JobsArg,
}

pub fn sweep(args: SweepArgs) -> Result<Outcome> {
    let mut spec = SweepSpec::from_path(&args.spec).map_err(|e| match e {
        HarnessError::Io { .. } => e.into(),
        other => usage(other.to_string()),
    })?;
    if let Some(jobs) = args.jobs.get() {
        spec.jobs = Some(jobs);
    }
    RunManifest::new("sweep", spec.seed, serde_json::to_value(&spec)?).write(&args.out)?;
    let outcome = ctxdecode::harness::run_sweep(&spec, &args.out).map_err(harness_error)?;
    print!("{}", outcome.report.main_markdown());
    println!();
    print!("{}", outcome.report.alpha_markdown());
    Ok(if outcome.is_complete() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostModeArg {
    Vanilla,
    Cad,
    Both,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_layer: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_model: u64,
    /// Defaults to d_model.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_attn: Option<u64>,
    /// Defaults to 4 × d_model.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_ff: Option<u64>,
    /// Document tokens.
    #[arg(long, default_value_t = 0)]
    len_c: u64,
    /// Query and instruction tokens.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    len_x: u64,
    /// Generated tokens.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    len_y: u64,
    #[arg(long, value_enum, default_value = "both")]
    mode: CostModeArg,
    #[arg(long, value_enum, default_value = "exact")]
    approximation: ApproxArg,
    /// Directory for cost.csv, cost.md and the manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn grouped(n: u128) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn flops(args: FlopsArgs) -> Result<Outcome> {
    let config = ModelConfig {
        n_layer: args.n_layer,
        d_model: args.d_model,
        d_attn: args.d_attn.unwrap_or(args.d_model),
        d_ff: args.d_ff.unwrap_or(4 * args.d_model),
        n_heads: 1,
        n_vocab: 1,
    };
    let approximation: Approximation = args.approximation.into();
    RunManifest::new(
        "flops",
        0,
        json!({
            "config": config,
            "len_c": args.len_c,
            "len_x": args.len_x,
            "len_y": args.len_y,
            "mode": format!("{:?}", args.mode).to_lowercase(),
            "approximation": approximation,
        }),
    )
    .write(&args.out)?;

    let b = flops::breakdown(&config, args.len_c, args.len_x, args.len_y, approximation);
    let show_vanilla = args.mode != CostModeArg::Cad;
    let show_cad = args.mode != CostModeArg::Vanilla;
    let both = show_vanilla && show_cad;

    let mut header = vec!["t"];
    if show_vanilla {
        header.extend(["vanilla_tokens", "vanilla_flops"]);
    }
    if show_cad {
        header.extend(["cad_tokens", "cad_flops"]);
    }
    if both {
        header.extend(["token_ratio", "flops_ratio"]);
    }
    let rows: Vec<Vec<String>> = b
        .steps
        .iter()
        .map(|s| {
            let mut row = vec![s.t.to_string()];
            if show_vanilla {
                row.extend([s.vanilla_units.to_string(), format!("{:.6e}", s.vanilla_flops)]);
            }
            if show_cad {
                row.extend([s.cad_units.to_string(), format!("{:.6e}", s.cad_flops)]);
            }
            if both {
                row.extend([
                    format!("{}/{} = {}", s.cad_units, s.vanilla_units, s.cad_units as f64 / s.vanilla_units as f64),
                    format!("{}", s.ratio),
                ]);
            }
            row
        })
        .collect();

    let mut csv = header.join(",") + "\n";
    for row in &rows {
        csv.push_str(&row.iter().map(|c| if c.contains(',') { format!("\"{c}\"") } else { c.clone() }).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    let mut md = String::new();
    writeln!(md, "N (non-embedding parameters) = {}", grouped(flops::n_params_exact(&config)))?;
    writeln!(
        md,
        "C_forward at {} input tokens = {:.6e} FLOPs/token ({})",
        args.len_c + args.len_x,
        b.c_forward,
        match approximation {
            Approximation::ExactWithAttention => "2N + 2 n_layer n_input d_attn",
            Approximation::TwoNApprox => "2N",
        }
    )?;
    writeln!(md)?;
    writeln!(md, "| {} |", header.join(" | "))?;
    writeln!(md, "|{}|", vec!["---:"; header.len()].join("|"))?;
    for row in &rows {
        writeln!(md, "| {} |", row.join(" | "))?;
    }
    writeln!(md)?;
    if show_vanilla {
        writeln!(md, "total vanilla = {:.6e} FLOPs", b.total_vanilla)?;
    }
    if show_cad {
        writeln!(md, "total CAD = {:.6e} FLOPs", b.total_cad)?;
    }
    if both {
        writeln!(md, "total ratio CAD / vanilla = {}", b.total_ratio)?;
    }
    std::fs::write(args.out.join("cost.csv"), &csv)?;
    std::fs::write(args.out.join("cost.md"), &md)?;
    std::fs::write(args.out.join("cost.json"), serde_json::to_string_pretty(&b)? + "\n")?;
    print!("{md}");
    Ok(Outcome::Complete)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MockModeArg {
    Echo,
    Constant,
}

#[derive(Args, Debug)]
pub struct MockScorerArgs {
    #[arg(long, default_value = "127.0.0.1:9000")]
    bind: String,
    #[arg(long, value_enum, default_value = "echo")]
    mode: MockModeArg,
    /// Score returned in constant mode.
    #[arg(long, default_value_t = 0.5)]
    score: f64,
    /// Directory for the manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

pub fn serve_mock_scorer(args: MockScorerArgs) -> Result<Outcome> {
    if !(0.0..=1.0).contains(&args.score) {
        bail!(UsageError(format!("--score must be in [0, 1], got {}", args.score)));
    }
    let scorer = match args.mode {
        MockModeArg::Echo => MockScorer::Echo,
        MockModeArg::Constant => MockScorer::Constant(args.score),
    };
    let mut config = BTreeMap::new();
    config.insert("bind", json!(args.bind));
    config.insert("mode", json!(format!("{:?}", args.mode).to_lowercase()));
    config.insert("score", json!(args.score));
    RunManifest::new("serve-mock-scorer", 0, json!(config)).write(&args.out)?;
    let handle = scorer.spawn(&args.bind).with_context(|| format!("binding {}", args.bind))?;
    println!("mock scorer listening on {}", handle.url());
    handle.join();
    Ok(Outcome::Complete)
}
