//! `commnet` command-line pipeline: configuration, staged execution with a
//! content-hashed manifest, and report emission.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::stages::Context;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "COMMNET_OUT";
const DEFAULT_OUT: &str = "commnet-out";

#[derive(Debug, Parser)]
#[command(name = "commnet", version, about = "Correlation-network analysis of stable and volatile market periods")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for within-stage parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Suppress per-stage progress lines.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Load or generate prices, compute returns, align the two periods.
    Ingest,
    /// Build one PMFG per rolling window.
    Networks,
    /// Path and communicability measures per window.
    Measures,
    /// Hyperbolic embeddings and the hyperbolic measures.
    Embed,
    /// Per-pair permutation tests and difference heatmaps.
    Sigtest,
    /// Cross-validated SVM-RFE per measure.
    Classify,
    /// Classification on per-window shuffled returns.
    Surrogate,
    /// Every stage in dependency order.
    RunAll,
    /// Summary tables and network histograms.
    Report,
}

/// Settings that shape execution but not results; never echoed.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub quiet: bool,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .clone()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let runtime = RuntimeOptions {
        out: cli
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        threads: cli.threads,
        quiet: cli.quiet,
    };
    if runtime.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = runtime.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| {
        let mut ctx = Context::new(cfg, base, runtime.out.clone())?;
        ctx.quiet = runtime.quiet;
        match cli.command {
            Command::Ingest => stages::ingest(&mut ctx).map(drop),
            Command::Networks => stages::networks(&mut ctx).map(drop),
            Command::Measures => stages::measures(&mut ctx).map(drop),
            Command::Embed => stages::embed(&mut ctx).map(drop),
            Command::Sigtest => stages::sigtest(&mut ctx).map(drop),
            Command::Classify => stages::classify(&mut ctx).map(drop),
            Command::Surrogate => stages::surrogate(&mut ctx).map(drop),
            Command::RunAll => stages::run_all(&mut ctx).map(drop),
            Command::Report => stages::report(&mut ctx).map(drop),
        }
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("commnet: {e}");
            e.exit_code()
        }
    }
}
