//! `quota-lab` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quota_core::harness::gradcheck::full_grad_check;
use quota_core::harness::{self, ExperimentConfig, ExperimentKind, Ini};
use quota_core::Error;

#[derive(Parser)]
#[command(name = "quota-lab", about = "Quantile-option reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steps-to-optimal sweep of the tabular agents over chain lengths.
    ChainSweep(Common),
    /// Deep (chain) or continuous (reach1d) training run.
    Train(Common),
    /// Finite-difference check of the QR loss and network gradients.
    GradCheck(Common),
    /// Monte-Carlo baselines for reach1d.
    Oracle(Common),
    /// Print the version.
    Version,
}

#[derive(Args, Default)]
struct Common {
    /// INI configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per sweep cell, or cases per gradient check.
    #[arg(long)]
    trials: Option<usize>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn config_error(key: &str, message: &str) -> Failure {
    Failure::Config(format!("config error at `{key}`: {message}"))
}

fn reject(flag: &str, present: bool, verb: &str) -> Result<(), Failure> {
    if present {
        return Err(config_error(flag, &format!("not used by {verb}")));
    }
    Ok(())
}

fn load(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig, Failure> {
    let mut ini = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error("--config", &format!("cannot read {}: {e}", path.display())))?;
            Ini::parse(&text)?
        }
        None => Ini::default(),
    };
    for o in &common.overrides {
        ini.apply_override(o)?;
    }
    let mut cfg = ExperimentConfig::from_ini(&ini, kind)?;
    if cfg.kind != kind {
        return Err(config_error("experiment.kind", &format!("expected {}, found {}", kind.id(), cfg.kind.id())));
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn chain_sweep(common: &Common) -> Result<(), Failure> {
    let mut cfg = load(common, ExperimentKind::ChainSweep)?;
    if let Some(t) = common.trials {
        cfg.set_trials(t)?;
    }
    let threads = harness::threads_from_env()?;
    let res = harness::run_chain_sweep(&cfg, &cfg.out_dir, threads)?;
    println!("{:<7} {:>6} {:<10} {:>12} {:>7}", "env", "length", "algorithm", "median", "capped");
    for s in &res.summaries {
        println!(
            "{:<7} {:>6} {:<10} {:>12} {:>4}/{}",
            s.chain.id(),
            s.chain_length,
            s.algorithm.id(),
            s.median_steps,
            s.capped,
            s.trials
        );
    }
    println!("wrote {}", res.csv_path.display());
    Ok(())
}

fn train(common: &Common) -> Result<(), Failure> {
    reject("--trials", common.trials.is_some(), "train")?;
    let cfg = load(common, ExperimentKind::Train)?;
    let report = harness::run_training(&cfg, &cfg.out_dir)?;
    println!("{}", report.summary);
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn grad_check(common: &Common) -> Result<(), Failure> {
    reject("--config", common.config.is_some(), "grad-check")?;
    reject("--out", common.out.is_some(), "grad-check")?;
    reject("--override", !common.overrides.is_empty(), "grad-check")?;
    let cases = common.trials.unwrap_or(100);
    if cases == 0 {
        return Err(config_error("--trials", "must be at least 1"));
    }
    let reports = full_grad_check(cases, common.seed.unwrap_or(0))?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{:<18} cases {:>4} derivatives {:>6} max rel error {:.3e} {}",
            r.name,
            r.cases,
            r.derivatives,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}

fn oracle(common: &Common) -> Result<(), Failure> {
    reject("--config", common.config.is_some(), "oracle")?;
    reject("--trials", common.trials.is_some(), "oracle")?;
    reject("--override", !common.overrides.is_empty(), "oracle")?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let (b, path) = harness::run_oracle(&out, harness::ORACLE_EPISODES, common.seed.unwrap_or(0))?;
    println!("random baseline      {:.6}", b.random);
    println!("greedy-step baseline {:.6}", b.oracle);
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ChainSweep(c) => chain_sweep(c),
        Command::Train(c) => train(c),
        Command::GradCheck(c) => grad_check(c),
        Command::Oracle(c) => oracle(c),
        Command::Version => {
            println!("quota-lab {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
