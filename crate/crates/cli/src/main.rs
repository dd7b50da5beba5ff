//! `mdcs`: reproducible experiments for MDCS attacks and their baselines.
//!
//! Exit codes: 0 success, 1 verdict or run failure, 2 usage or
//! configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::{Format, RunConfig};
use output::Reporter;

#[derive(Parser)]
#[command(name = "mdcs", version, about = "MDCS attack experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "mdcs-out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Verb {
    /// Suboptimality against T on concave quadratics, with rate fit and bounds.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Fit an exact power law `T^EXP` instead of running the optimizer.
        #[arg(long, value_name = "EXP", allow_hyphen_values = true)]
        synthetic: Option<f64>,
    },
    /// Transfer success rate against the iteration budget.
    Stability {
        #[command(flatten)]
        common: Common,
    },
    /// Per-iteration effective step-size of a tracked coordinate.
    Stepdyn {
        #[command(flatten)]
        common: Common,
    },
    /// Grid over gamma or epsilon with ASR and distortion metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Runs a counterexample fixture and reports verdicts.
    Counterexample {
        #[command(flatten)]
        common: Common,
    },
    /// Oracle-call counts per algorithm; timings go to stderr.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(format) = common.format {
        cfg.format = format;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("MDCS_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("MDCS_THREADS must be a positive integer, got '{raw}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Failure::Runtime(e.to_string()))
}

fn execute(verb: Verb) -> Result<commands::Verdicts, Failure> {
    let (common, synthetic) = match &verb {
        Verb::Converge { common, synthetic } => (common.clone(), *synthetic),
        Verb::Stability { common }
        | Verb::Stepdyn { common }
        | Verb::Ablate { common }
        | Verb::Counterexample { common }
        | Verb::Bench { common } => (common.clone(), None),
    };
    let cfg = load(&common)?;
    let rep = Reporter::new(&common.out, cfg.format, cfg.hash())?;
    let pool = thread_pool()?;
    pool.install(|| match verb {
        Verb::Converge { .. } => commands::converge(&cfg, &rep, synthetic),
        Verb::Stability { .. } => commands::stability(&cfg, &rep),
        Verb::Stepdyn { .. } => commands::stepdyn(&cfg, &rep),
        Verb::Ablate { .. } => commands::ablate(&cfg, &rep),
        Verb::Counterexample { .. } => commands::counterexample(&cfg, &rep),
        Verb::Bench { .. } => commands::bench(&cfg, &rep),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(verdicts) if verdicts.is_empty() => ExitCode::SUCCESS,
        Ok(verdicts) => {
            for v in verdicts {
                eprintln!("verdict failed: {v}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
