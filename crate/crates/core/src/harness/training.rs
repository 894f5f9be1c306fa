//! Training runs: logs plus final parameter snapshots.
//!
//! Deep runs write `train_log.csv`, `option_log.csv` (QUOTA only) and one
//! snapshot per network part. Continuous runs write `eval_log.csv` and one
//! snapshot per actor, the critic and the option network. Logs are written
//! even when training aborts; the abort is reported afterwards.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, TrainSpec};
use super::output::{fmt_f64, fmt_opt, open_csv};
use crate::contagents::{self, ContRunResult};
use crate::deepagents::{self, option_frequency_tracker, DeepAlgorithm, DeepRunResult};
use crate::nnkit::DenseNet;
use crate::{Error, Result};

pub const TRAIN_LOG_HEADER: [&str; 5] = ["global_step", "mean_episode_return_last_100", "loss", "epsilon", "epsilon_omega"];
pub const OPTION_LOG_HEADER: [&str; 3] = ["bin_index", "option_index", "frequency"];
pub const EVAL_LOG_HEADER: [&str; 3] = ["train_step", "mean_eval_return_over_20_episodes", "std_err"];

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub files: Vec<PathBuf>,
    /// One-line description of the outcome.
    pub summary: String,
}

fn write_snapshot(dir: &Path, name: &str, net: &DenseNet, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    net.write_snapshot(BufWriter::new(File::create(&path)?))?;
    files.push(path);
    Ok(())
}

fn write_deep(dir: &Path, run: &DeepRunResult, algorithm: DeepAlgorithm, m_options: usize, bins: usize) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let (file, path) = open_csv(dir, "train_log.csv")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TRAIN_LOG_HEADER)?;
    for row in &run.log {
        w.write_record([
            row.global_step.to_string(),
            fmt_opt(row.mean_episode_return_last_100),
            fmt_f64(row.loss),
            fmt_f64(row.epsilon),
            fmt_f64(row.epsilon_omega),
        ])?;
    }
    w.flush()?;
    files.push(path);

    if algorithm == DeepAlgorithm::Quota {
        let (file, path) = open_csv(dir, "option_log.csv")?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(OPTION_LOG_HEADER)?;
        if !run.option_events.is_empty() {
            let f = option_frequency_tracker(&run.option_events, m_options, bins)?;
            for b in 0..bins {
                for (o, row) in f.freq.iter().enumerate() {
                    w.write_record([b.to_string(), o.to_string(), fmt_f64(row[b])])?;
                }
            }
        }
        w.flush()?;
        files.push(path);
    }

    write_snapshot(dir, "trunk.snapshot", &run.net.trunk, &mut files)?;
    write_snapshot(dir, "quantile_head.snapshot", &run.net.quantile_head, &mut files)?;
    if let Some(h) = &run.net.option_head {
        write_snapshot(dir, "option_head.snapshot", h, &mut files)?;
    }
    Ok(files)
}

fn write_continuous(dir: &Path, run: &ContRunResult) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let (file, path) = open_csv(dir, "eval_log.csv")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(EVAL_LOG_HEADER)?;
    for row in &run.eval_log {
        w.write_record([row.train_step.to_string(), fmt_f64(row.mean_eval_return), fmt_f64(row.std_err)])?;
    }
    w.flush()?;
    files.push(path);
    for (j, actor) in run.agent.actors.actors.iter().enumerate() {
        write_snapshot(dir, &format!("actor_{j}.snapshot"), actor, &mut files)?;
    }
    write_snapshot(dir, "critic.snapshot", &run.agent.critic, &mut files)?;
    if let Some(net) = &run.agent.option_net {
        write_snapshot(dir, "option.snapshot", net, &mut files)?;
    }
    Ok(files)
}

/// Runs the configured training loop and writes its artifacts into
/// `out_dir`. Returns [`Error::Aborted`] after writing if training stopped
/// on repeated non-finite updates.
pub fn run_training(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainingReport> {
    let spec = cfg
        .train
        .as_ref()
        .ok_or_else(|| Error::config("experiment.kind", "not a training experiment"))?;
    std::fs::create_dir_all(out_dir)?;
    let (files, summary, aborted) = match spec {
        TrainSpec::Deep(d) => {
            let run = deepagents::train(d)?;
            let files = write_deep(out_dir, &run, d.algorithm, d.m_options, cfg.option_bins)?;
            let summary = format!(
                "{} on {} length {}: {} env steps, {} updates, final greedy policy optimal: {}",
                d.algorithm.id(),
                d.chain.variant.id(),
                d.chain.length,
                run.env_steps,
                run.updates,
                run.final_policy_optimal
            );
            (files, summary, run.aborted)
        }
        TrainSpec::Continuous(c) => {
            let run = contagents::train(c)?;
            let files = write_continuous(out_dir, &run)?;
            let last = run
                .eval_log
                .last()
                .map(|r| format!("last evaluation return {:.4}", r.mean_eval_return))
                .unwrap_or_else(|| "no evaluations".into());
            let summary = format!("{} on reach1d: {} env steps, {last}", c.algorithm.id(), run.env_steps);
            (files, summary, run.aborted)
        }
    };
    match aborted {
        Some(msg) => Err(Error::Aborted(msg)),
        None => Ok(TrainingReport { files, summary }),
    }
}
