//! Typed experiment configuration read from the INI dialect in
//! [`ini`](super::ini).
//!
//! ```ini
//! [experiment]
//! kind = chain-sweep        # or train
//! id = chains
//! seed = 0
//! trials = 10
//! out = results
//!
//! [env]
//! chains = chain1, chain2   # sweep
//! lengths = 6, 10, 14       # sweep
//! name = chain1             # train: chain1, chain2 or reach1d
//! length = 5                # train on a chain
//!
//! [agent]
//! algorithms = qlearning, qr, oqr, pqr, quota   # sweep
//! algorithm = quota                              # train
//! alpha = 0.1
//!
//! [schedule.epsilon]
//! kind = linear
//! start = 1.0
//! end = 0.05
//! horizon = 30000
//! ```

use std::path::PathBuf;

use super::ini::Ini;
use super::schedule::{Schedule, ScheduleKind};
use crate::contagents::{ContAlgorithm, ContConfig, NoiseKind};
use crate::deepagents::{DeepAlgorithm, DeepConfig};
use crate::envs::{ChainConfig, ChainVariant, Reach1d};
use crate::tabular::{Algorithm, LearningConfig, OptionConfig, TrialConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ChainSweep,
    Train,
}

impl ExperimentKind {
    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::ChainSweep => "chain-sweep",
            ExperimentKind::Train => "train",
        }
    }
}

/// Grid of a chain sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub chains: Vec<ChainVariant>,
    pub lengths: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chains.is_empty() {
            return Err(Error::config("env.chains", "must not be empty"));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::config("env.lengths", "must be a nonempty list of positive lengths"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("agent.algorithms", "must not be empty"));
        }
        if self.trials == 0 {
            return Err(Error::config("experiment.trials", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainSpec {
    Deep(DeepConfig),
    Continuous(ContConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub id: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sweep: SweepSpec,
    pub trial: TrialConfig,
    /// Present for `train` experiments.
    pub train: Option<TrainSpec>,
    /// Bins of the option-frequency log.
    pub option_bins: usize,
}

fn parse_id<T>(key: &str, s: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
    parse(s).ok_or_else(|| Error::config(key, format!("unknown id {s:?}")))
}

fn schedule(ini: &Ini, name: &str, default: Schedule) -> Result<Schedule> {
    let key = |k: &str| format!("schedule.{name}.{k}");
    let kind = match ini.raw(&key("kind")) {
        None => default.kind,
        Some("constant") => ScheduleKind::Constant,
        Some("linear") => ScheduleKind::Linear,
        Some(other) => return Err(Error::config(key("kind"), format!("unknown schedule kind {other:?}"))),
    };
    let start = ini.get(&key("start"), default.start)?;
    let end = ini.get(&key("end"), if kind == ScheduleKind::Constant { start } else { default.end })?;
    let s = Schedule {
        kind,
        start,
        end,
        horizon: ini.get(&key("horizon"), default.horizon)?,
    };
    s.validate().map_err(|e| Error::config(key("horizon"), e.to_string()))?;
    Ok(s)
}

impl ExperimentConfig {
    /// Builds a config for `kind` from `ini`; any key the chosen experiment
    /// does not read is rejected.
    pub fn from_ini(ini: &Ini, default_kind: ExperimentKind) -> Result<Self> {
        Self::build(ini, default_kind).map_err(|e| match e {
            Error::Config { key, message } if !key.contains('.') && !key.starts_with("line ") => Error::Config {
                key: format!("agent.{key}"),
                message,
            },
            other => other,
        })
    }

    fn build(ini: &Ini, default_kind: ExperimentKind) -> Result<Self> {
        let kind = match ini.raw("experiment.kind") {
            None => default_kind,
            Some("chain-sweep") => ExperimentKind::ChainSweep,
            Some("train") => ExperimentKind::Train,
            Some(other) => return Err(Error::config("experiment.kind", format!("unknown kind {other:?}"))),
        };
        let id = ini.get("experiment.id", kind.id().to_string())?;
        let seed = ini.get("experiment.seed", 0u64)?;
        let out_dir = PathBuf::from(ini.get("experiment.out", "out".to_string())?);
        let option_bins = ini.get("experiment.option_bins", 20usize)?;
        if option_bins == 0 {
            return Err(Error::config("experiment.option_bins", "must be positive"));
        }

        let defaults = TrialConfig::default();
        let learning = LearningConfig {
            alpha: ini.get("agent.alpha", defaults.learning.alpha)?,
            epsilon: ini.get("agent.epsilon", defaults.learning.epsilon)?,
            gamma: ini.get("agent.gamma", defaults.learning.gamma)?,
            kappa: ini.get("agent.kappa", defaults.learning.kappa)?,
            step_cap: ini.get("agent.step_cap", defaults.learning.step_cap)?,
        };
        let mut cfg = Self {
            kind,
            id,
            seed,
            out_dir,
            sweep: SweepSpec {
                chains: vec![ChainVariant::Chain1, ChainVariant::Chain2],
                lengths: vec![6, 10, 14],
                algorithms: Algorithm::ALL.to_vec(),
                trials: 10,
            },
            trial: TrialConfig {
                learning,
                n_quantiles: defaults.n_quantiles,
                options: defaults.options,
            },
            train: None,
            option_bins,
        };
        match kind {
            ExperimentKind::ChainSweep => cfg.read_sweep(ini)?,
            ExperimentKind::Train => cfg.train = Some(read_train(ini, seed)?),
        }
        ini.reject_unknown()?;
        Ok(cfg)
    }

    fn read_sweep(&mut self, ini: &Ini) -> Result<()> {
        let chains: Vec<String> = ini.get_list("env.chains", vec!["chain1".into(), "chain2".into()])?;
        self.sweep.chains = chains
            .iter()
            .map(|c| parse_id("env.chains", c, ChainVariant::parse))
            .collect::<Result<_>>()?;
        self.sweep.lengths = ini.get_list("env.lengths", self.sweep.lengths.clone())?;
        let algos: Vec<String> = ini.get_list("agent.algorithms", Algorithm::ALL.iter().map(|a| a.id().to_string()).collect())?;
        self.sweep.algorithms = algos
            .iter()
            .map(|a| parse_id("agent.algorithms", a, Algorithm::parse))
            .collect::<Result<_>>()?;
        self.sweep.trials = ini.get("experiment.trials", self.sweep.trials)?;
        let d = OptionConfig::default();
        self.trial.n_quantiles = ini.get("agent.n_quantiles", self.trial.n_quantiles)?;
        self.trial.options = OptionConfig {
            m_options: ini.get("agent.m_options", d.m_options)?,
            window: ini.get("agent.window", d.window)?,
            beta: ini.get("agent.beta", d.beta)?,
            epsilon_omega: ini.get("agent.epsilon_omega", d.epsilon_omega)?,
        };
        self.sweep.validate()?;
        for &algo in &self.sweep.algorithms {
            self.trial.validate(algo)?;
        }
        Ok(())
    }

    /// Overrides the trial count (sweeps only).
    pub fn set_trials(&mut self, trials: usize) -> Result<()> {
        self.sweep.trials = trials;
        self.sweep.validate()
    }

    /// Overrides the base seed, including the seed of a training run.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        match &mut self.train {
            Some(TrainSpec::Deep(d)) => d.seed = seed,
            Some(TrainSpec::Continuous(c)) => c.seed = seed,
            None => {}
        }
    }
}

fn read_train(ini: &Ini, seed: u64) -> Result<TrainSpec> {
    let env: String = ini.get("env.name", "chain1".to_string())?;
    if env == "reach1d" {
        return read_continuous(ini, seed).map(TrainSpec::Continuous);
    }
    let variant = parse_id("env.name", &env, ChainVariant::parse)?;
    let algorithm = match ini.get("agent.algorithm", "quota".to_string())?.as_str() {
        "qrdqn" => DeepAlgorithm::QrDqn,
        "quota" => DeepAlgorithm::Quota,
        other => return Err(Error::config("agent.algorithm", format!("unknown deep algorithm {other:?}"))),
    };
    let length = ini.get("env.length", 5usize)?;
    let default_budget = match algorithm {
        DeepAlgorithm::QrDqn => 200_000,
        DeepAlgorithm::Quota => 300_000,
    };
    let budget = ini.get("agent.step_budget", default_budget)?;
    let mut d = DeepConfig::chain_defaults(algorithm, length.max(1), budget, seed)?;
    let noise = ini.get("env.noise_variance", ChainConfig::new(1, variant)?.noise_variance)?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config("env.noise_variance", "must be finite and nonnegative"));
    }
    d.chain = ChainConfig::new(length, variant)
        .map_err(|e| Error::config("env.length", e.to_string()))?
        .with_noise_variance(noise);
    d.workers = ini.get("agent.workers", d.workers)?;
    d.rollout = ini.get("agent.rollout", d.rollout)?;
    d.n_quantiles = ini.get("agent.n_quantiles", d.n_quantiles)?;
    d.m_options = ini.get("agent.m_options", d.m_options)?;
    d.window = ini.get("agent.window", d.window)?;
    d.beta = ini.get("agent.beta", d.beta)?;
    d.hidden = ini.get_list("agent.hidden", d.hidden.clone())?;
    d.learning_rate = ini.get("agent.learning_rate", d.learning_rate)?;
    d.target_sync_every = ini.get("agent.target_sync_every", d.target_sync_every)?;
    d.kappa = ini.get("agent.kappa", d.kappa)?;
    d.gamma = ini.get("agent.gamma", d.gamma)?;
    d.log_every = ini.get("agent.log_every", d.log_every)?;
    d.epsilon = schedule(ini, "epsilon", d.epsilon)?;
    d.epsilon_omega = schedule(ini, "epsilon_omega", d.epsilon_omega)?;
    if d.target_sync_every == 0 {
        return Err(Error::config("agent.target_sync_every", "must be positive"));
    }
    d.validate()?;
    Ok(TrainSpec::Deep(d))
}

fn read_continuous(ini: &Ini, seed: u64) -> Result<ContConfig> {
    let algorithm = match ini.get("agent.algorithm", "quota".to_string())?.as_str() {
        "ddpg" => ContAlgorithm::Ddpg,
        "qrddpg" => ContAlgorithm::QrDdpg,
        "quota" => ContAlgorithm::Quota,
        other => return Err(Error::config("agent.algorithm", format!("unknown continuous algorithm {other:?}"))),
    };
    let budget = ini.get("agent.step_budget", 50_000u64)?;
    let mut c = ContConfig::reach_defaults(algorithm, budget, seed);
    c.env = Reach1d {
        noise_variance: ini.get("env.noise_variance", c.env.noise_variance)?,
        horizon: ini.get("env.horizon", c.env.horizon)?,
    };
    if !(c.env.noise_variance >= 0.0) {
        return Err(Error::config("env.noise_variance", "must be nonnegative"));
    }
    if c.env.horizon == 0 {
        return Err(Error::config("env.horizon", "must be positive"));
    }
    c.n_quantiles = ini.get("agent.n_quantiles", c.n_quantiles)?;
    c.m_options = ini.get("agent.m_options", c.m_options)?;
    c.beta = ini.get("agent.beta", c.beta)?;
    c.actor_hidden = ini.get_list("agent.actor_hidden", c.actor_hidden.clone())?;
    c.critic_hidden = ini.get_list("agent.critic_hidden", c.critic_hidden.clone())?;
    c.option_hidden = ini.get_list("agent.option_hidden", c.option_hidden.clone())?;
    c.critic_lr = ini.get("agent.critic_lr", c.critic_lr)?;
    c.actor_lr = ini.get("agent.actor_lr", c.actor_lr)?;
    c.option_lr = ini.get("agent.option_lr", c.option_lr)?;
    c.tau = ini.get("agent.tau", c.tau)?;
    c.gamma = ini.get("agent.gamma", c.gamma)?;
    c.kappa = ini.get("agent.kappa", c.kappa)?;
    c.replay_capacity = ini.get("agent.replay_capacity", c.replay_capacity)?;
    c.batch = ini.get("agent.batch", c.batch)?;
    c.warmup = ini.get("agent.warmup", c.warmup)?;
    c.eval_every = ini.get("agent.eval_every", c.eval_every)?;
    c.eval_episodes = ini.get("agent.eval_episodes", c.eval_episodes)?;
    c.noise = match ini.get("agent.noise", "ou".to_string())?.as_str() {
        "ou" => NoiseKind::OrnsteinUhlenbeck {
            theta: ini.get("agent.noise_theta", 0.15)?,
            sigma: ini.get("agent.noise_sigma", 0.2)?,
            dt: ini.get("agent.noise_dt", 1.0)?,
        },
        "gaussian" => NoiseKind::Gaussian {
            sigma: ini.get("agent.noise_sigma", 0.1)?,
        },
        other => return Err(Error::config("agent.noise", format!("unknown noise kind {other:?}"))),
    };
    c.epsilon_omega = schedule(ini, "epsilon_omega", c.epsilon_omega)?;
    c.validate()?;
    Ok(c)
}
