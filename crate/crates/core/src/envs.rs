//! Environments: the two diagnostic chains and the `reach1d` continuous task.
//!
//! Chain states are numbered `1..=N`; [`TERMINAL`] (0) marks the end of an
//! episode, so tabular agents can index their tables by state id directly
//! with row 0 reserved for the terminal state.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Error, Result, SeededRng};

pub const TERMINAL: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteEnvSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// A discrete-state, discrete-action episodic environment.
pub trait DiscreteEnv {
    fn spec(&self) -> DiscreteEnvSpec;
    /// Starts an episode and returns the initial state id.
    fn reset(&mut self, rng: &mut SeededRng) -> usize;
    fn step(&mut self, state: usize, action: usize, rng: &mut SeededRng) -> Result<StepResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChainVariant {
    /// LEFT pays Normal(0, 1); UP ends with 0.
    Chain1,
    /// LEFT pays -0.1; UP ends with Normal(0, 0.2).
    Chain2,
}

impl ChainVariant {
    pub fn id(self) -> &'static str {
        match self {
            ChainVariant::Chain1 => "chain1",
            ChainVariant::Chain2 => "chain2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chain1" => Some(ChainVariant::Chain1),
            "chain2" => Some(ChainVariant::Chain2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum ChainAction {
    Left = 0,
    Up = 1,
}

impl ChainAction {
    pub fn from_index(a: usize) -> Option<Self> {
        match a {
            0 => Some(ChainAction::Left),
            1 => Some(ChainAction::Up),
            _ => None,
        }
    }
}

pub const LEFT: usize = ChainAction::Left as usize;
pub const UP: usize = ChainAction::Up as usize;

pub const GOAL_REWARD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub length: usize,
    pub variant: ChainVariant,
    /// Variance of the noisy reward: LEFT in Chain 1, UP in Chain 2.
    pub noise_variance: f64,
}

impl ChainConfig {
    pub fn new(length: usize, variant: ChainVariant) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("chain length must be at least 1"));
        }
        let noise_variance = match variant {
            ChainVariant::Chain1 => 1.0,
            ChainVariant::Chain2 => 0.2,
        };
        Ok(Self {
            length,
            variant,
            noise_variance,
        })
    }

    pub fn with_noise_variance(mut self, variance: f64) -> Self {
        self.noise_variance = variance;
        self
    }
}

/// One step of a chain.
pub fn chain_step(
    cfg: &ChainConfig,
    state: usize,
    action: ChainAction,
    rng: &mut SeededRng,
) -> Result<StepResult> {
    if state == 0 || state > cfg.length {
        return Err(Error::invalid(format!(
            "state {state} outside 1..={}",
            cfg.length
        )));
    }
    let noise = |rng: &mut SeededRng| -> f64 {
        let sd = cfg.noise_variance.sqrt();
        if sd == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sd).unwrap().sample(rng)
        }
    };
    let done = |reward| StepResult {
        next_state: TERMINAL,
        reward,
        terminal: true,
    };
    Ok(match (cfg.variant, action) {
        (ChainVariant::Chain1, ChainAction::Up) => done(0.0),
        (ChainVariant::Chain2, ChainAction::Up) => done(noise(rng)),
        (_, ChainAction::Left) if state == cfg.length => done(GOAL_REWARD),
        (ChainVariant::Chain1, ChainAction::Left) => StepResult {
            next_state: state + 1,
            reward: noise(rng),
            terminal: false,
        },
        (ChainVariant::Chain2, ChainAction::Left) => StepResult {
            next_state: state + 1,
            reward: -0.1,
            terminal: false,
        },
    })
}

/// True iff every entry is LEFT.
pub fn chain_optimal_policy_check(policy_actions: &[ChainAction]) -> Result<bool> {
    if policy_actions.is_empty() {
        return Err(Error::invalid("empty policy"));
    }
    Ok(policy_actions.iter().all(|&a| a == ChainAction::Left))
}

#[derive(Debug, Clone)]
pub struct ChainEnv {
    pub cfg: ChainConfig,
}

impl ChainEnv {
    pub fn new(cfg: ChainConfig) -> Self {
        Self { cfg }
    }

    /// One-hot observation for function approximators; the terminal state
    /// maps to the zero vector.
    pub fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.cfg.length];
        if state != TERMINAL {
            v[state - 1] = 1.0;
        }
        v
    }
}

impl DiscreteEnv for ChainEnv {
    fn spec(&self) -> DiscreteEnvSpec {
        DiscreteEnvSpec {
            n_states: self.cfg.length,
            n_actions: 2,
            gamma: 1.0,
        }
    }

    fn reset(&mut self, _rng: &mut SeededRng) -> usize {
        1
    }

    fn step(&mut self, state: usize, action: usize, rng: &mut SeededRng) -> Result<StepResult> {
        let a = ChainAction::from_index(action)
            .ok_or_else(|| Error::invalid(format!("chain action {action} out of range")))?;
        chain_step(&self.cfg, state, a, rng)
    }
}

// ---------------------------------------------------------------------------
// reach1d

pub const REACH_HORIZON: usize = 32;
pub const REACH_GAMMA: f64 = 0.99;
pub const REACH_STEP_SCALE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousEnvState {
    pub position: f64,
    pub steps_elapsed: usize,
}

impl ContinuousEnvState {
    /// Observation vector: position and elapsed fraction of the horizon.
    pub fn observe(&self) -> [f64; 2] {
        [
            self.position,
            self.steps_elapsed as f64 / REACH_HORIZON as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousStep {
    pub next: ContinuousEnvState,
    pub reward: f64,
    pub terminal: bool,
}

/// Parameters of the 1-D reaching task. The noise is only paid on the
/// negative half-line, which gives quantile actors different optima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reach1d {
    pub noise_variance: f64,
    pub horizon: usize,
}

impl Default for Reach1d {
    fn default() -> Self {
        Self {
            noise_variance: 0.1,
            horizon: REACH_HORIZON,
        }
    }
}

impl Reach1d {
    pub const OBS_DIM: usize = 2;
    pub const ACTION_DIM: usize = 1;

    pub fn reset(&self, rng: &mut SeededRng) -> ContinuousEnvState {
        ContinuousEnvState {
            position: Uniform::new(-1.0, 1.0).unwrap().sample(rng),
            steps_elapsed: 0,
        }
    }

    pub fn step(&self, state: ContinuousEnvState, action: f64, rng: &mut SeededRng) -> ContinuousStep {
        let a = action.clamp(-1.0, 1.0);
        let position = (state.position + REACH_STEP_SCALE * a).clamp(-1.0, 1.0);
        let mut reward = -position * position;
        if position < 0.0 && self.noise_variance > 0.0 {
            reward += Normal::new(0.0, self.noise_variance.sqrt()).unwrap().sample(rng);
        }
        let steps_elapsed = state.steps_elapsed + 1;
        ContinuousStep {
            next: ContinuousEnvState {
                position,
                steps_elapsed,
            },
            reward,
            terminal: steps_elapsed >= self.horizon,
        }
    }
}

pub fn reach1d_step(state: ContinuousEnvState, action: f64, rng: &mut SeededRng) -> ContinuousStep {
    Reach1d::default().step(state, action, rng)
}

/// Mean undiscounted episodic return of `policy` over `episodes` rollouts.
pub fn reach1d_mean_return<F>(env: &Reach1d, episodes: usize, rng: &mut SeededRng, mut policy: F) -> f64
where
    F: FnMut(&ContinuousEnvState, &mut SeededRng) -> f64,
{
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        loop {
            let a = policy(&s, rng);
            let step = env.step(s, a, rng);
            total += step.reward;
            s = step.next;
            if step.terminal {
                break;
            }
        }
    }
    total / episodes as f64
}

/// Uniform random action in `[-1, 1]`.
pub fn random_action(_s: &ContinuousEnvState, rng: &mut SeededRng) -> f64 {
    rng.random_range(-1.0..=1.0)
}

/// Moves as far toward the origin as one step allows.
pub fn greedy_step_action(s: &ContinuousEnvState, _rng: &mut SeededRng) -> f64 {
    (-s.position / REACH_STEP_SCALE).clamp(-1.0, 1.0)
}
