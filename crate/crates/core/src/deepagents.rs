//! Function-approximation discrete-action agents: QR-DQN and deep QUOTA.
//!
//! Both are trained from synchronous worker rollouts: `W` environments
//! advance in lockstep for up to `n` steps, each worker's segment is turned
//! into n-step quantile targets from a target network, and the whole batch
//! produces one optimizer step. Gradients are reduced in worker-index order
//! so runs are bit-reproducible.
//!
//! Deep QUOTA adds an option-value head on the shared penultimate features.
//! The option head is trained with one-step intra-option targets per
//! transition, from the target network.

use std::collections::VecDeque;

use crate::distcore::{self, HuberConfig, QuantileLevels};
use crate::envs::{ChainAction, ChainConfig, ChainEnv, DiscreteEnv, ChainVariant};
use crate::harness::schedule::Schedule;
use crate::nnkit::{Activation, DenseNet, GradientBuffer, OptimizerState, Trace};
use crate::rng::{mix64, seeded};
use crate::tabular::{epsilon_greedy, select_option, OptionState};
use crate::{Error, Result, SeededRng};

/// First index of the maximum. Network outputs are continuous, so exact
/// ties are not worth a random draw here.
fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Quantile network: a tanh trunk, an affine quantile head producing
/// `|A| * N` values (action-major), and an optional affine option head.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNet {
    pub trunk: DenseNet,
    pub quantile_head: DenseNet,
    pub option_head: Option<DenseNet>,
    pub n_actions: usize,
    pub n_quantiles: usize,
}

#[derive(Debug, Clone)]
pub struct NetTrace {
    trunk: Trace,
    quantiles: Trace,
    options: Option<Trace>,
}

impl NetTrace {
    pub fn quantiles(&self) -> &[f64] {
        self.quantiles.output()
    }

    pub fn option_values(&self) -> Option<&[f64]> {
        self.options.as_ref().map(|t| t.output())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub trunk: GradientBuffer,
    pub quantile_head: GradientBuffer,
    pub option_head: Option<GradientBuffer>,
}

impl NetGrads {
    pub fn zeros_like(net: &QuantileNet) -> Self {
        Self {
            trunk: GradientBuffer::zeros_like(&net.trunk),
            quantile_head: GradientBuffer::zeros_like(&net.quantile_head),
            option_head: net.option_head.as_ref().map(GradientBuffer::zeros_like),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.is_finite()
            && self.quantile_head.is_finite()
            && self.option_head.as_ref().is_none_or(|g| g.is_finite())
    }
}

impl QuantileNet {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        n_quantiles: usize,
        m_options: Option<usize>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("quantile network needs a hidden layer"));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let trunk = DenseNet::random(&sizes, Activation::Tanh, Activation::Tanh, rng)?;
        let features = *hidden.last().unwrap();
        let quantile_head = DenseNet::random(&[features, n_actions * n_quantiles], Activation::Identity, Activation::Identity, rng)?;
        let option_head = m_options
            .map(|m| DenseNet::random(&[features, m], Activation::Identity, Activation::Identity, rng))
            .transpose()?;
        Ok(Self {
            trunk,
            quantile_head,
            option_head,
            n_actions,
            n_quantiles,
        })
    }

    pub fn forward(&self, obs: &[f64]) -> Result<NetTrace> {
        let trunk = self.trunk.trace(obs)?;
        let quantiles = self.quantile_head.trace(trunk.output())?;
        let options = self.option_head.as_ref().map(|h| h.trace(trunk.output())).transpose()?;
        Ok(NetTrace {
            trunk,
            quantiles,
            options,
        })
    }

    /// All quantiles, action-major.
    pub fn quantiles(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(obs)?.quantiles().to_vec())
    }

    pub fn option_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.forward(obs)?
            .option_values()
            .map(|v| v.to_vec())
            .ok_or_else(|| Error::invalid("network has no option head"))
    }

    pub fn action_slice<'a>(&self, all: &'a [f64], action: usize) -> &'a [f64] {
        &all[action * self.n_quantiles..(action + 1) * self.n_quantiles]
    }

    pub fn mean_scores(&self, all: &[f64]) -> Vec<f64> {
        (0..self.n_actions).map(|a| distcore::mean(self.action_slice(all, a))).collect()
    }

    /// Greedy action on the quantile mean.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<usize> {
        let all = self.quantiles(obs)?;
        Ok(argmax_first(&self.mean_scores(&all)))
    }

    /// Backpropagates output gradients of both heads into `grads`.
    pub fn backward_into(
        &self,
        trace: &NetTrace,
        quantile_grad: &[f64],
        option_grad: Option<&[f64]>,
        grads: &mut NetGrads,
    ) -> Result<()> {
        let mut feature_grad = self
            .quantile_head
            .backward_into(&trace.quantiles, quantile_grad, &mut grads.quantile_head)?;
        if let Some(og) = option_grad {
            let (head, t, g) = match (&self.option_head, &trace.options, &mut grads.option_head) {
                (Some(h), Some(t), Some(g)) => (h, t, g),
                _ => return Err(Error::invalid("option gradient without option head")),
            };
            let fg = head.backward_into(t, og, g)?;
            for (a, b) in feature_grad.iter_mut().zip(fg) {
                *a += b;
            }
        }
        self.trunk.backward_into(&trace.trunk, &feature_grad, &mut grads.trunk)?;
        Ok(())
    }
}

/// One optimizer state per parameter group; per-parameter optimizers make
/// this equivalent to a single optimizer over the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOptimizer {
    trunk: OptimizerState,
    quantile_head: OptimizerState,
    option_head: Option<OptimizerState>,
}

impl NetOptimizer {
    pub fn rmsprop(lr: f64, net: &QuantileNet) -> Result<Self> {
        Ok(Self {
            trunk: OptimizerState::rmsprop(lr, &net.trunk)?,
            quantile_head: OptimizerState::rmsprop(lr, &net.quantile_head)?,
            option_head: net.option_head.as_ref().map(|h| OptimizerState::rmsprop(lr, h)).transpose()?,
        })
    }

    pub fn step(&mut self, net: &mut QuantileNet, grads: &NetGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.trunk.step(&mut net.trunk, &grads.trunk)?;
        self.quantile_head.step(&mut net.quantile_head, &grads.quantile_head)?;
        if let (Some(o), Some(h), Some(g)) = (&mut self.option_head, &mut net.option_head, &grads.option_head) {
            o.step(h, g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStep {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
    /// Option active when the action was taken (QUOTA only).
    pub option: Option<usize>,
    pub next_obs: Vec<f64>,
}

/// Up to `n` consecutive transitions of one worker. `bootstrap` is the
/// observation after the last step, absent when the segment ended at a
/// terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSegment {
    pub steps: Vec<SegmentStep>,
    pub bootstrap: Option<Vec<f64>>,
}

/// `W` chain environments stepped in lockstep. Worker `i` draws from the
/// stream seeded with `seed ^ i`.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    envs: Vec<ChainEnv>,
    states: Vec<usize>,
    pub rngs: Vec<SeededRng>,
    pub option_states: Vec<OptionState>,
    running_returns: Vec<f64>,
    completed_returns: VecDeque<f64>,
    pub env_steps: u64,
    pub episodes: u64,
}

const RETURN_WINDOW: usize = 100;

impl WorkerPool {
    pub fn new(chain: ChainConfig, workers: usize, seed: u64) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("worker pool needs at least one worker"));
        }
        let mut rngs: Vec<SeededRng> = (0..workers).map(|i| seeded(seed ^ i as u64)).collect();
        let mut envs: Vec<ChainEnv> = (0..workers).map(|_| ChainEnv::new(chain)).collect();
        let states = envs.iter_mut().zip(&mut rngs).map(|(e, r)| e.reset(r)).collect();
        Ok(Self {
            envs,
            states,
            rngs,
            option_states: vec![OptionState::default(); workers],
            running_returns: vec![0.0; workers],
            completed_returns: VecDeque::new(),
            env_steps: 0,
            episodes: 0,
        })
    }

    pub fn workers(&self) -> usize {
        self.envs.len()
    }

    pub fn observation(&self, worker: usize) -> Vec<f64> {
        self.envs[worker].one_hot(self.states[worker])
    }

    /// Mean return of the last 100 completed episodes.
    pub fn recent_mean_return(&self) -> Option<f64> {
        if self.completed_returns.is_empty() {
            None
        } else {
            Some(self.completed_returns.iter().sum::<f64>() / self.completed_returns.len() as f64)
        }
    }
}

/// Behaviour policy called as `policy(worker, obs, option_state, rng)`,
/// returning the action and the active option, if any.
pub trait BehaviourPolicy {
    fn act(&mut self, worker: usize, obs: &[f64], ostate: &mut OptionState, rng: &mut SeededRng) -> Result<(usize, Option<usize>)>;
}

impl<F> BehaviourPolicy for F
where
    F: FnMut(usize, &[f64], &mut OptionState, &mut SeededRng) -> Result<(usize, Option<usize>)>,
{
    fn act(&mut self, worker: usize, obs: &[f64], ostate: &mut OptionState, rng: &mut SeededRng) -> Result<(usize, Option<usize>)> {
        self(worker, obs, ostate, rng)
    }
}

/// Steps every worker up to `n` times in lockstep. A terminal ends that
/// worker's segment without bootstrap, resets its environment and clears its
/// option.
pub fn collect_segments<P: BehaviourPolicy + ?Sized>(pool: &mut WorkerPool, policy: &mut P, n: usize) -> Result<Vec<RolloutSegment>> {
    let w = pool.workers();
    let mut segments: Vec<RolloutSegment> = (0..w)
        .map(|_| RolloutSegment {
            steps: Vec::with_capacity(n),
            bootstrap: None,
        })
        .collect();
    let mut active = vec![true; w];
    for _ in 0..n {
        for i in 0..w {
            if !active[i] {
                continue;
            }
            let obs = pool.observation(i);
            let (action, option) = policy.act(i, &obs, &mut pool.option_states[i], &mut pool.rngs[i])?;
            let state = pool.states[i];
            let step = pool.envs[i].step(state, action, &mut pool.rngs[i])?;
            pool.env_steps += 1;
            pool.running_returns[i] += step.reward;
            let next_obs = pool.envs[i].one_hot(step.next_state);
            segments[i].steps.push(SegmentStep {
                obs,
                action,
                reward: step.reward,
                terminal: step.terminal,
                option,
                next_obs,
            });
            if step.terminal {
                active[i] = false;
                pool.episodes += 1;
                pool.completed_returns.push_back(pool.running_returns[i]);
                if pool.completed_returns.len() > RETURN_WINDOW {
                    pool.completed_returns.pop_front();
                }
                pool.running_returns[i] = 0.0;
                pool.option_states[i] = OptionState::default();
                let (env, rng) = (&mut pool.envs[i], &mut pool.rngs[i]);
                pool.states[i] = env.reset(rng);
            } else {
                pool.states[i] = step.next_state;
            }
        }
    }
    for (i, seg) in segments.iter_mut().enumerate() {
        if active[i] {
            seg.bootstrap = seg.steps.last().map(|s| s.next_obs.clone());
        }
    }
    Ok(segments)
}

/// n-step quantile targets for every step of `segment`:
/// `y_t = sum_l gamma^l r_{t+l} + gamma^L q(s_boot, a*)`, with the bootstrap
/// dropped when the segment ends at a terminal. `a*` maximises the target
/// network's quantile mean at the bootstrap observation.
pub fn nstep_quantile_targets(segment: &RolloutSegment, target: &QuantileNet, gamma: f64) -> Result<Vec<Vec<f64>>> {
    let n_q = target.n_quantiles;
    let mut running = match &segment.bootstrap {
        Some(obs) => {
            let all = target.quantiles(obs)?;
            let best = argmax_first(&target.mean_scores(&all));
            target.action_slice(&all, best).to_vec()
        }
        None => vec![0.0; n_q],
    };
    let mut out = vec![Vec::new(); segment.steps.len()];
    for (t, step) in segment.steps.iter().enumerate().rev() {
        for y in running.iter_mut() {
            *y = step.reward + gamma * *y;
        }
        out[t] = running.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig {
    pub gamma: f64,
    pub huber: HuberConfig,
    pub levels: QuantileLevels,
    /// Option termination probability used by the intra-option target.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub quantile_loss: f64,
    pub option_loss: f64,
    pub batch: usize,
}

/// Accumulates the batch gradient. With `with_options`, every transition
/// must carry its option and the option head is trained too.
fn batch_gradient(
    net: &QuantileNet,
    target: &QuantileNet,
    segments: &[RolloutSegment],
    cfg: &UpdateConfig,
    with_options: bool,
) -> Result<(NetGrads, UpdateStats)> {
    let batch: usize = segments.iter().map(|s| s.steps.len()).sum();
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if cfg.levels.len() != net.n_quantiles {
        return Err(Error::invalid("quantile levels do not match network"));
    }
    let scale = 1.0 / batch as f64;
    let mut grads = NetGrads::zeros_like(net);
    let mut stats = UpdateStats {
        batch,
        ..Default::default()
    };
    let n_q = net.n_quantiles;
    let mut q_grad = vec![0.0; net.n_actions * n_q];
    let mut slice_grad = vec![0.0; n_q];
    let m = net.option_head.as_ref().map(|h| h.output_dim()).unwrap_or(0);
    let mut o_grad = vec![0.0; m];
    for seg in segments {
        let targets = nstep_quantile_targets(seg, target, cfg.gamma)?;
        for (step, y) in seg.steps.iter().zip(&targets) {
            let trace = net.forward(&step.obs)?;
            let pred = net.action_slice(trace.quantiles(), step.action);
            stats.quantile_loss += distcore::qr_loss_grad_into(pred, y, &cfg.levels, cfg.huber, &mut slice_grad)?;
            q_grad.iter_mut().for_each(|g| *g = 0.0);
            for (g, s) in q_grad[step.action * n_q..(step.action + 1) * n_q].iter_mut().zip(&slice_grad) {
                *g = s * scale;
            }
            if with_options {
                let w = step
                    .option
                    .ok_or_else(|| Error::invalid("transition lacks its option record"))?;
                let current = trace.option_values().ok_or_else(|| Error::invalid("network has no option head"))?;
                if w >= current.len() {
                    return Err(Error::invalid(format!("option {w} out of range")));
                }
                let y_opt = if step.terminal {
                    0.0
                } else {
                    let next = target.option_values(&step.next_obs)?;
                    let best = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    cfg.beta * best + (1.0 - cfg.beta) * next[w]
                };
                let td = step.reward + cfg.gamma * y_opt - current[w];
                stats.option_loss += 0.5 * td * td;
                o_grad.iter_mut().for_each(|g| *g = 0.0);
                o_grad[w] = -td * scale;
                net.backward_into(&trace, &q_grad, Some(&o_grad), &mut grads)?;
            } else {
                net.backward_into(&trace, &q_grad, None, &mut grads)?;
            }
        }
    }
    stats.quantile_loss *= scale;
    stats.option_loss *= scale;
    Ok((grads, stats))
}

fn apply(net: &mut QuantileNet, opt: &mut NetOptimizer, grads: &NetGrads, stats: &UpdateStats) -> Result<()> {
    if !stats.quantile_loss.is_finite() || !stats.option_loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    opt.step(net, grads)
}

/// One QR-DQN step on a batch of segments: batch-averaged QR loss over all
/// `(worker, t)` pairs, one optimizer step.
pub fn qr_dqn_update(
    net: &mut QuantileNet,
    target: &QuantileNet,
    segments: &[RolloutSegment],
    opt: &mut NetOptimizer,
    cfg: &UpdateConfig,
) -> Result<UpdateStats> {
    let (grads, stats) = batch_gradient(net, target, segments, cfg, false)?;
    apply(net, opt, &grads, &stats)?;
    Ok(stats)
}

/// One deep QUOTA step: the QR-DQN quantile loss plus the intra-option loss
/// on the option head, both flowing into the shared trunk.
pub fn quota_deep_update(
    net: &mut QuantileNet,
    target: &QuantileNet,
    segments: &[RolloutSegment],
    opt: &mut NetOptimizer,
    cfg: &UpdateConfig,
) -> Result<UpdateStats> {
    let (grads, stats) = batch_gradient(net, target, segments, cfg, true)?;
    apply(net, opt, &grads, &stats)?;
    Ok(stats)
}

/// Exposes the gradient of a deep update without applying it.
pub fn update_gradient(
    net: &QuantileNet,
    target: &QuantileNet,
    segments: &[RolloutSegment],
    cfg: &UpdateConfig,
    with_options: bool,
) -> Result<(NetGrads, UpdateStats)> {
    batch_gradient(net, target, segments, cfg, with_options)
}

/// QR-DQN behaviour: epsilon-greedy on the quantile mean.
pub fn qr_dqn_act(net: &QuantileNet, obs: &[f64], epsilon: f64, rng: &mut SeededRng) -> Result<usize> {
    let all = net.quantiles(obs)?;
    Ok(epsilon_greedy(&net.mean_scores(&all), epsilon, rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSchedules {
    pub epsilon: f64,
    pub epsilon_omega: f64,
    pub beta: f64,
}

/// Deep QUOTA behaviour: option (re)selection on the option head, then
/// epsilon-greedy on the committed option's window mean. Returns
/// `(action, option)`.
pub fn quota_deep_act(
    net: &QuantileNet,
    obs: &[f64],
    ostate: &mut OptionState,
    window: usize,
    sched: OptionSchedules,
    rng: &mut SeededRng,
) -> Result<(usize, usize)> {
    let trace = net.forward(obs)?;
    let values = trace.option_values().ok_or_else(|| Error::invalid("network has no option head"))?;
    let w = select_option(ostate.current, values, sched.beta, sched.epsilon_omega, rng);
    ostate.current = Some(w);
    let all = trace.quantiles();
    let scores = (0..net.n_actions)
        .map(|a| distcore::window_mean(net.action_slice(all, a), w + 1, window))
        .collect::<Result<Vec<_>>>()?;
    Ok((epsilon_greedy(&scores, sched.epsilon, rng), w))
}

/// Per-bin frequencies of greedy-option events.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionFrequencies {
    /// `freq[option][bin]`; every non-empty column sums to one.
    pub freq: Vec<Vec<f64>>,
    /// Bins that received no events (their column is zero).
    pub empty_bins: Vec<usize>,
}

/// Splits the event stream into `n_bins` equal consecutive bins and
/// normalises option counts per bin.
pub fn option_frequency_tracker(events: &[usize], n_options: usize, n_bins: usize) -> Result<OptionFrequencies> {
    if n_bins == 0 || n_options == 0 {
        return Err(Error::invalid("need at least one bin and one option"));
    }
    let mut counts = vec![vec![0u64; n_bins]; n_options];
    let mut totals = vec![0u64; n_bins];
    let len = events.len();
    for (i, &w) in events.iter().enumerate() {
        if w >= n_options {
            return Err(Error::invalid(format!("option {w} out of range")));
        }
        let bin = i * n_bins / len;
        counts[w][bin] += 1;
        totals[bin] += 1;
    }
    let freq = counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&totals)
                .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
                .collect()
        })
        .collect();
    let empty_bins = totals.iter().enumerate().filter(|(_, &t)| t == 0).map(|(b, _)| b).collect();
    Ok(OptionFrequencies { freq, empty_bins })
}

// ---------------------------------------------------------------------------
// training driver

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepAlgorithm {
    QrDqn,
    Quota,
}

impl DeepAlgorithm {
    pub fn id(self) -> &'static str {
        match self {
            DeepAlgorithm::QrDqn => "qrdqn",
            DeepAlgorithm::Quota => "quota",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepConfig {
    pub algorithm: DeepAlgorithm,
    pub chain: ChainConfig,
    pub workers: usize,
    pub rollout: usize,
    pub n_quantiles: usize,
    pub m_options: usize,
    pub window: usize,
    pub beta: f64,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub target_sync_every: u64,
    pub kappa: f64,
    pub gamma: f64,
    pub step_budget: u64,
    pub epsilon: Schedule,
    pub epsilon_omega: Schedule,
    /// Write a log row every this many updates.
    pub log_every: u64,
    /// Stop as soon as the mean-greedy policy is optimal.
    pub stop_when_optimal: bool,
    pub seed: u64,
}

impl DeepConfig {
    /// Chain-scale defaults; `budget` is the environment-step budget.
    pub fn chain_defaults(algorithm: DeepAlgorithm, length: usize, budget: u64, seed: u64) -> Result<Self> {
        Ok(Self {
            algorithm,
            chain: ChainConfig::new(length, ChainVariant::Chain1)?,
            workers: 8,
            rollout: 5,
            n_quantiles: 5,
            m_options: 5,
            window: 1,
            beta: 0.01,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            target_sync_every: 200,
            kappa: 1.0,
            gamma: 1.0,
            step_budget: budget,
            epsilon: Schedule::linear(1.0, 0.05, (budget / 10).max(1)),
            epsilon_omega: Schedule::linear(1.0, 0.0, budget.max(1)),
            log_every: 10,
            stop_when_optimal: false,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(k, m));
        if self.workers == 0 {
            return bad("workers", "must be positive");
        }
        if self.rollout == 0 {
            return bad("rollout", "must be positive");
        }
        if self.n_quantiles == 0 {
            return bad("n_quantiles", "must be positive");
        }
        if self.algorithm == DeepAlgorithm::Quota && self.m_options * self.window != self.n_quantiles {
            return bad("m_options", "M * K must equal the number of quantiles");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive layer size");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every", "must be positive");
        }
        crate::tabular::unit_interval("beta", self.beta)?;
        crate::tabular::unit_interval("gamma", self.gamma)?;
        HuberConfig::new(self.kappa).map_err(|_| Error::config("kappa", "must be positive"))?;
        self.epsilon.validate().map_err(|e| Error::config("epsilon", e.to_string()))?;
        self.epsilon_omega.validate().map_err(|e| Error::config("epsilon_omega", e.to_string()))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub global_step: u64,
    pub mean_episode_return_last_100: Option<f64>,
    pub loss: f64,
    pub epsilon: f64,
    pub epsilon_omega: f64,
}

#[derive(Debug, Clone)]
pub struct DeepRunResult {
    pub log: Vec<TrainLogRow>,
    /// Greedy option at every collected step (QUOTA only).
    pub option_events: Vec<usize>,
    /// Environment steps when the mean-greedy chain policy first became
    /// optimal.
    pub first_optimal_step: Option<u64>,
    /// Mean-greedy chain policy is optimal for the final network.
    pub final_policy_optimal: bool,
    pub net: QuantileNet,
    pub env_steps: u64,
    pub updates: u64,
    /// Set when training stopped after repeated non-finite updates.
    pub aborted: Option<String>,
}

const MAX_SKIPPED_UPDATES: u32 = 10;

fn chain_policy_is_optimal(net: &QuantileNet, env: &ChainEnv) -> Result<bool> {
    for s in 1..=env.cfg.length {
        let all = net.quantiles(&env.one_hot(s))?;
        let m = net.mean_scores(&all);
        if m[ChainAction::Left as usize] <= m[ChainAction::Up as usize] {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Trains QR-DQN or deep QUOTA on a chain with synchronous workers.
pub fn train(cfg: &DeepConfig) -> Result<DeepRunResult> {
    cfg.validate()?;
    let mut init_rng = seeded(mix64(cfg.seed));
    let options = (cfg.algorithm == DeepAlgorithm::Quota).then_some(cfg.m_options);
    let mut net = QuantileNet::new(cfg.chain.length, &cfg.hidden, 2, cfg.n_quantiles, options, &mut init_rng)?;
    let mut target = net.clone();
    let mut opt = NetOptimizer::rmsprop(cfg.learning_rate, &net)?;
    let mut pool = WorkerPool::new(cfg.chain, cfg.workers, cfg.seed)?;
    let probe_env = ChainEnv::new(cfg.chain);
    let ucfg = UpdateConfig {
        gamma: cfg.gamma,
        huber: HuberConfig::new(cfg.kappa)?,
        levels: QuantileLevels::new(cfg.n_quantiles)?,
        beta: cfg.beta,
    };

    let mut log = Vec::new();
    let mut option_events = Vec::new();
    let mut first_optimal_step = None;
    let mut updates = 0u64;
    let mut skipped = 0u32;
    let mut aborted = None;

    while pool.env_steps < cfg.step_budget {
        let step = pool.env_steps;
        let epsilon = cfg.epsilon.value(step);
        let epsilon_omega = cfg.epsilon_omega.value(step);
        let segments = {
            let net_ref = &net;
            let events = &mut option_events;
            let mut policy = |_w: usize, obs: &[f64], ostate: &mut OptionState, rng: &mut SeededRng| -> Result<(usize, Option<usize>)> {
                match cfg.algorithm {
                    DeepAlgorithm::QrDqn => Ok((qr_dqn_act(net_ref, obs, epsilon, rng)?, None)),
                    DeepAlgorithm::Quota => {
                        let sched = OptionSchedules {
                            epsilon,
                            epsilon_omega,
                            beta: cfg.beta,
                        };
                        let (a, w) = quota_deep_act(net_ref, obs, ostate, cfg.window, sched, rng)?;
                        events.push(argmax_first(&net_ref.option_values(obs)?));
                        Ok((a, Some(w)))
                    }
                }
            };
            collect_segments(&mut pool, &mut policy, cfg.rollout)?
        };
        let result = match cfg.algorithm {
            DeepAlgorithm::QrDqn => qr_dqn_update(&mut net, &target, &segments, &mut opt, &ucfg),
            DeepAlgorithm::Quota => quota_deep_update(&mut net, &target, &segments, &mut opt, &ucfg),
        };
        match result {
            Ok(stats) => {
                skipped = 0;
                updates += 1;
                if updates.is_multiple_of(cfg.target_sync_every) {
                    target.clone_from(&net);
                }
                if updates.is_multiple_of(cfg.log_every) {
                    log.push(TrainLogRow {
                        global_step: pool.env_steps,
                        mean_episode_return_last_100: pool.recent_mean_return(),
                        loss: stats.quantile_loss + stats.option_loss,
                        epsilon,
                        epsilon_omega: if options.is_some() { epsilon_omega } else { 0.0 },
                    });
                }
            }
            Err(Error::NonFinite(what)) => {
                skipped += 1;
                if skipped >= MAX_SKIPPED_UPDATES {
                    aborted = Some(format!("{skipped} consecutive non-finite updates ({what})"));
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        if first_optimal_step.is_none() && chain_policy_is_optimal(&net, &probe_env)? {
            first_optimal_step = Some(pool.env_steps);
            if cfg.stop_when_optimal {
                break;
            }
        }
    }
    let final_policy_optimal = chain_policy_is_optimal(&net, &probe_env)?;
    Ok(DeepRunResult {
        log,
        final_policy_optimal,
        option_events,
        first_optimal_step,
        net,
        env_steps: pool.env_steps,
        updates,
        aborted,
    })
}
