//! `mcncc`: template matching, training and evaluation from the command line.
//!
//! Failures are reported on stderr as one JSON object,
//! `{"error": <kind>, "message": <text>}`, with a nonzero exit status.

mod args;
mod commands;
mod inputs;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use mcncc::tensor::DEFAULT_EPSILON;
use serde_json::json;

use args::Ctx;
use commands::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "mcncc", version, about = "Cross-domain template matching with multi-channel NCC")]
struct Cli {
    /// Worker threads (0 = one per core). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    /// Permit reading float64 files into a float32 pipeline.
    #[arg(long, global = true)]
    allow_narrowing: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Added to every standard deviation in NCC.
    #[arg(long, global = true, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn images into feature tensors.
    Featurize(FeaturizeArgs),
    /// Dataset-wide channel statistics and the per-channel spread report.
    Stats(StatsArgs),
    /// Fit a PCA whitening projection.
    FitPca(FitPcaArgs),
    /// Fit paired CCA projections on search-aligned query/database pairs.
    FitCca(FitCcaArgs),
    /// Learn channel weights (and optionally projections) from a manifest.
    Train(TrainArgs),
    /// Best alignment of one query inside one target.
    Match(MatchArgs),
    /// Rank the database for every query of a manifest.
    Retrieve(RetrieveArgs),
    /// Metrics from a results file.
    Eval(EvalArgs),
    /// Write the synthetic cross-domain benchmark.
    Bench(BenchArgs),
}

fn dispatch<T: mcncc::Scalar>(cmd: &Command, ctx: &Ctx) -> anyhow::Result<()> {
    match cmd {
        Command::Featurize(a) => featurize::<T>(a, ctx),
        Command::Stats(a) => stats::<T>(a, ctx),
        Command::FitPca(a) => fit_pca_cmd::<T>(a, ctx),
        Command::FitCca(a) => fit_cca_cmd::<T>(a, ctx),
        Command::Train(a) => train_cmd::<T>(a, ctx),
        Command::Match(a) => match_cmd::<T>(a, ctx),
        Command::Retrieve(a) => retrieve::<T>(a, ctx),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench::<T>(a, ctx),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx {
        allow_narrowing: cli.allow_narrowing,
        seed: cli.seed,
        epsilon: cli.epsilon,
    };
    if !(ctx.epsilon >= 0.0 && ctx.epsilon.is_finite()) {
        return Err(mcncc::Error::Config(format!("--epsilon {} must be >= 0", ctx.epsilon)).into());
    }
    let go = || match cli.precision {
        Precision::F32 => dispatch::<f32>(&cli.command, &ctx),
        Precision::F64 => dispatch::<f64>(&cli.command, &ctx),
    };
    if cli.workers == 0 {
        go()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build()?
            .install(go)
    }
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": kind, "message": message}));
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| {
            c.downcast_ref::<mcncc::Error>()
                .map(mcncc::Error::kind)
                .or_else(|| c.downcast_ref::<std::io::Error>().map(|_| "io"))
        })
        .unwrap_or("error")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
