//! Chain sweeps: every `(chain, length, algorithm, trial)` cell runs one
//! tabular trial; results are written as detail rows followed by one
//! summary row per `(chain, length, algorithm)`.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::ExperimentConfig;
use super::output::{fmt_f64, open_csv};
use crate::envs::{ChainConfig, ChainVariant};
use crate::rng::mix64;
use crate::tabular::{run_trial, Algorithm, TrialOutcome};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "QUOTA_LAB_THREADS";

/// FNV-1a over the bytes of an id.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of one sweep cell:
/// `mix64(mix64(mix64(mix64(base) ^ length) ^ fnv1a(algorithm)) ^ trial)`.
///
/// Depends only on its arguments, so cells can run in any order.
pub fn cell_seed(base: u64, length: usize, algorithm: Algorithm, trial: usize) -> u64 {
    let h = mix64(mix64(base) ^ length as u64);
    let h = mix64(h ^ fnv1a(algorithm.id()));
    mix64(h ^ trial as u64)
}

/// Job-pool size from `QUOTA_LAB_THREADS`, defaulting to the available
/// parallelism.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config(THREADS_ENV, format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Runs `f(0..n)` on at most `threads` threads; results keep index order.
pub fn run_jobs<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|o| o.unwrap()).collect()
}

/// One trial of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub experiment_id: String,
    pub chain: ChainVariant,
    pub algorithm: Algorithm,
    pub chain_length: usize,
    pub trial: usize,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub chain: ChainVariant,
    pub algorithm: Algorithm,
    pub chain_length: usize,
    pub trials: usize,
    pub median_steps: f64,
    pub mean_steps: f64,
    pub stderr_steps: f64,
    /// Trials that hit the step cap.
    pub capped: usize,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl CellSummary {
    fn from_records(records: &[MetricsRecord]) -> Self {
        let first = &records[0];
        let steps: Vec<f64> = records.iter().map(|r| r.outcome.steps_to_optimal as f64).collect();
        let (mean, se) = mean_stderr(&steps);
        Self {
            chain: first.chain,
            algorithm: first.algorithm,
            chain_length: first.chain_length,
            trials: records.len(),
            median_steps: median(&steps),
            mean_steps: mean,
            stderr_steps: se,
            capped: records.iter().filter(|r| !r.outcome.reached_optimal).count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<MetricsRecord>,
    pub summaries: Vec<CellSummary>,
    pub csv_path: PathBuf,
}

impl SweepResult {
    pub fn summary(&self, chain: ChainVariant, length: usize, algorithm: Algorithm) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| s.chain == chain && s.chain_length == length && s.algorithm == algorithm)
    }
}

pub const SWEEP_FILE: &str = "chain_sweep.csv";

pub const SWEEP_HEADER: [&str; 14] = [
    "row_kind",
    "experiment_id",
    "env",
    "algorithm",
    "chain_length",
    "trial",
    "seed",
    "steps_to_optimal",
    "reached_optimal",
    "trials",
    "capped_trials",
    "median_steps",
    "mean_steps",
    "stderr_steps",
];

/// Runs every cell without touching the filesystem.
pub fn sweep_records(cfg: &ExperimentConfig, threads: usize) -> Result<(Vec<MetricsRecord>, Vec<CellSummary>)> {
    cfg.sweep.validate()?;
    let mut cells = Vec::new();
    for &chain in &cfg.sweep.chains {
        for &length in &cfg.sweep.lengths {
            for &algorithm in &cfg.sweep.algorithms {
                for trial in 0..cfg.sweep.trials {
                    cells.push((chain, length, algorithm, trial));
                }
            }
        }
    }
    let results = run_jobs(cells.len(), threads, |i| {
        let (chain, length, algorithm, trial) = cells[i];
        let seed = cell_seed(cfg.seed, length, algorithm, trial);
        let chain_cfg = ChainConfig::new(length, chain)?;
        let outcome = run_trial(algorithm, chain_cfg, &cfg.trial, seed)?;
        Ok(MetricsRecord {
            experiment_id: cfg.id.clone(),
            chain,
            algorithm,
            chain_length: length,
            trial,
            seed,
            outcome,
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = records.chunks(cfg.sweep.trials).map(CellSummary::from_records).collect();
    Ok((records, summaries))
}

fn write_sweep(file: File, cfg: &ExperimentConfig, records: &[MetricsRecord], summaries: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SWEEP_HEADER)?;
    for (chunk, s) in records.chunks(cfg.sweep.trials).zip(summaries) {
        for r in chunk {
            w.write_record([
                "detail".to_string(),
                r.experiment_id.clone(),
                r.chain.id().to_string(),
                r.algorithm.id().to_string(),
                r.chain_length.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.outcome.steps_to_optimal.to_string(),
                r.outcome.reached_optimal.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.write_record([
            "summary".to_string(),
            cfg.id.clone(),
            s.chain.id().to_string(),
            s.algorithm.id().to_string(),
            s.chain_length.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            s.trials.to_string(),
            s.capped.to_string(),
            fmt_f64(s.median_steps),
            fmt_f64(s.mean_steps),
            fmt_f64(s.stderr_steps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the sweep and writes `<out_dir>/chain_sweep.csv`. The output file
/// is created before any trial runs, so an unwritable directory fails
/// fast.
pub fn run_chain_sweep(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<SweepResult> {
    cfg.sweep.validate()?;
    let (file, csv_path) = open_csv(out_dir, SWEEP_FILE)?;
    let (records, summaries) = sweep_records(cfg, threads)?;
    write_sweep(file, cfg, &records, &summaries)?;
    Ok(SweepResult {
        records,
        summaries,
        csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentKind;
    use crate::harness::ini::Ini;

    fn small(trials: usize) -> ExperimentConfig {
        let text = format!("[experiment]\ntrials = {trials}\n[env]\nchains = chain1\nlengths = 3\n[agent]\nalgorithms = qlearning\n");
        ExperimentConfig::from_ini(&Ini::parse(&text).unwrap(), ExperimentKind::ChainSweep).unwrap()
    }

    #[test]
    fn seeds_are_pure_and_distinct() {
        assert_eq!(cell_seed(1, 6, Algorithm::Qr, 3), cell_seed(1, 6, Algorithm::Qr, 3));
        let mut seen = std::collections::BTreeSet::new();
        for algo in Algorithm::ALL {
            for len in [3, 5] {
                for trial in 0..4 {
                    assert!(seen.insert(cell_seed(0, len, algo, trial)));
                }
            }
        }
    }

    #[test]
    fn counting_example() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_chain_sweep(&small(2), dir.path(), 1).unwrap();
        let text = std::fs::read_to_string(&res.csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert!(lines[1].starts_with("detail,"));
        assert!(lines[3].starts_with("summary,"));
    }

    #[test]
    fn rerun_is_byte_identical_and_thread_independent() {
        let mut cfg = small(3);
        cfg.sweep.algorithms = vec![Algorithm::QLearning, Algorithm::Quota];
        cfg.sweep.lengths = vec![3, 4];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_chain_sweep(&cfg, a.path(), 1).unwrap();
        let rb = run_chain_sweep(&cfg, b.path(), 3).unwrap();
        assert_eq!(std::fs::read(ra.csv_path).unwrap(), std::fs::read(rb.csv_path).unwrap());
    }

    #[test]
    fn unwritable_directory_fails_before_trials() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mut cfg = small(1);
        // a step cap this large would take long if any trial ran
        cfg.trial.learning.step_cap = u64::MAX;
        cfg.sweep.lengths = vec![60];
        assert!(run_chain_sweep(&cfg, &blocker.join("sub"), 1).is_err());
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn job_pool_keeps_order() {
        let out = run_jobs(50, 4, |i| i * i);
        assert_eq!(out, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }

    proptest::proptest! {
        #[test]
        fn job_pool_preserves_order(n in 0usize..50, threads in 1usize..6) {
            proptest::prop_assert_eq!(run_jobs(n, threads, |i| i * i), (0..n).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
