//! Command-line driver: configuration, the per-stage subcommands, the end to
//! end pipeline and the raw / pre / pre+post ablation harness.

pub mod commands;
pub mod config;
pub mod dataset;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_gradcheck, cmd_infer, cmd_pipeline, cmd_preprocess, cmd_train, AblationMode,
    AblationReport, AblationRow,
};
pub use config::{parse_config, parse_override, IoConfig, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    stenunet::Error,
    stenunet::specio::SpecioError,
    stenunet::stenunet::ModelError,
    stenunet::stenunet::TrainError,
    stenunet::tensorkit::TensorError,
    stenunet::prefilter::PrefilterError,
    stenunet::postseg::PostError,
    stenunet::evalkit::EvalError
);

#[derive(Debug, Parser)]
#[command(name = "stenunet", version, about = "Stenosis segmentation pipeline")]
struct Args {
    /// TOML file with dotted keys; `--section.key=value` flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Shorthand for `--io.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--io.threads` (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved configuration before running.
    #[arg(long, global = true)]
    echo: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Enhance and normalise every image into `preprocessed/`.
    Preprocess,
    /// Train from scratch and write `checkpoints/epoch-N.sten`.
    Train,
    /// Predict masks with `io.checkpoint`.
    Infer,
    /// Score `masks/` against the annotations.
    Eval,
    /// Preprocess, infer, postprocess and evaluate in one pass.
    Pipeline,
    /// Evaluate one checkpoint as raw, pre and pre+post.
    Ablate,
    /// Finite-difference check of every differentiable primitive.
    Gradcheck,
}

/// `(section.key, raw value)` in command-line order.
pub type Overrides = Vec<(String, String)>;

/// Pulls `--section.key=value` (or `--section.key value`) pairs out of argv
/// so clap only sees the fixed flags.
pub fn split_overrides(argv: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut overrides = Vec::new();
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Parses argv, runs the subcommand and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<String> = argv
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    match try_run(argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_run(argv: Vec<String>) -> Result<i32, CliError> {
    let (rest, mut overrides) = split_overrides(argv)?;
    let args = match Args::try_parse_from(rest) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return Ok(code);
        }
    };
    if let Some(seed) = args.seed {
        overrides.push(("io.seed".into(), seed.to_string()));
    }
    if let Some(threads) = args.threads {
        overrides.push(("io.threads".into(), threads.to_string()));
    }
    let cfg = parse_config(args.config.as_deref(), &overrides)?;
    if args.echo {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "# fingerprint {}", cfg.fingerprint());
        let _ = write!(out, "{}", cfg.echo());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.io.threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(args.command, &cfg))
}

fn dispatch(command: Command, cfg: &PipelineConfig) -> Result<i32, CliError> {
    match command {
        Command::Preprocess => {
            let written = cmd_preprocess(cfg)?;
            println!("preprocessed {} images", written.len());
        }
        Command::Train => {
            let outcome = cmd_train(cfg)?;
            if let Some(last) = outcome.history.last() {
                println!("epoch {} loss {:.6} soft dice {:.6}", last.epoch, last.loss, last.soft_dice);
            }
            for p in &outcome.checkpoints {
                println!("wrote {}", p.display());
            }
        }
        Command::Infer => {
            let timing = cmd_infer(cfg)?;
            println!(
                "inferred {} images, max {:.3} s (budget {:.1} s{})",
                timing.seconds.len(),
                timing.max_seconds,
                timing.budget_seconds,
                if timing.within_budget { "" } else { ", EXCEEDED" }
            );
        }
        Command::Eval => print!("{}", cmd_eval(cfg)?.summary()),
        Command::Pipeline => print!("{}", cmd_pipeline(cfg)?.summary()),
        Command::Ablate => print!("{}", cmd_ablate(cfg)?.table()),
        Command::Gradcheck => {
            let rows = cmd_gradcheck(cfg)?;
            print!("{}", commands::gradcheck_table(&rows));
            if rows.iter().any(|r| !r.passed()) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}
