//! `ctxdecode` command-line entry point.

mod bench;
mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::UsageError;

const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_INTERNAL: u8 = 70;

#[derive(Parser, Debug)]
#[command(name = "ctxdecode", version, about = "Context-aware decoding engine and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode every example of a dataset.
    Generate(commands::GenerateArgs),
    /// Score predictions against dataset references.
    Evaluate(commands::EvaluateArgs),
    /// Run a grid of models, datasets and α values.
    Sweep(commands::SweepArgs),
    /// Print the inference cost table for one geometry.
    Flops(commands::FlopsArgs),
    /// Measure seconds per token for vanilla and context-aware decoding.
    BenchSpeed(bench::BenchSpeedArgs),
    /// Serve a stand-in for the external metric protocol.
    ServeMockScorer(commands::MockScorerArgs),
}

/// Worker-thread bound shared by the heavy subcommands.
#[derive(Args, Debug, Clone)]
pub struct JobsArg {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

impl JobsArg {
    pub fn get(&self) -> Option<usize> {
        self.jobs.map(|j| j as usize)
    }

    pub fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = self.get() {
            builder = builder.num_threads(jobs);
        }
        Ok(builder.build()?)
    }
}

/// How a subcommand finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Flops(args) => commands::flops(args),
        Command::BenchSpeed(args) => bench::bench_speed(args),
        Command::ServeMockScorer(args) => commands::serve_mock_scorer(args),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_INTERNAL)
            }
        }
    }
}
