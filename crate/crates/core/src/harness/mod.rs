//! Configuration, seeding, sweeps, training drivers and CSV output.

pub mod config;
pub mod gradcheck;
pub mod ini;
pub mod output;
pub mod schedule;
pub mod sweep;
pub mod training;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, ExperimentKind, SweepSpec, TrainSpec};
pub use ini::Ini;
pub use schedule::{resolve_schedule, Schedule, ScheduleKind};
pub use sweep::{cell_seed, run_chain_sweep, sweep_records, threads_from_env, CellSummary, MetricsRecord, SweepResult};
pub use training::{run_training, TrainingReport};

use crate::contagents::{reach_baselines, ReachBaselines};
use crate::envs::Reach1d;
use crate::Result;

/// Episodes per Monte-Carlo baseline.
pub const ORACLE_EPISODES: usize = 100_000;

/// Recomputes the reach1d baselines and writes `oracle.csv`
/// (`baseline, mean_return, episodes`).
pub fn run_oracle(out_dir: &Path, episodes: usize, seed: u64) -> Result<(ReachBaselines, PathBuf)> {
    let (file, path) = output::open_csv(out_dir, "oracle.csv")?;
    let b = reach_baselines(&Reach1d::default(), episodes, seed);
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["baseline", "mean_return", "episodes"])?;
    w.write_record(["random".to_string(), output::fmt_f64(b.random), episodes.to_string()])?;
    w.write_record(["greedy_step".to_string(), output::fmt_f64(b.oracle), episodes.to_string()])?;
    w.flush()?;
    Ok((b, path))
}
