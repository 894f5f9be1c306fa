//! Continuous-action agents on [`Reach1d`]: DDPG, QR-DDPG and continuous
//! QUOTA.
//!
//! All three share a replay buffer, exploration noise, a critic over
//! `(state, action)` and deterministic tanh actors. QR-DDPG's critic emits
//! `N` quantiles. Continuous QUOTA keeps `M` quantile actors plus a mean
//! actor `mu0` (index 0) and a separate option-value network over all
//! `M + 1` actors; quantile actor `j` ascends the critic's `j`-th window
//! mean.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distcore::{self, HuberConfig, QuantileLevels};
use crate::envs::{ContinuousEnvState, Reach1d};
use crate::harness::schedule::Schedule;
use crate::nnkit::{soft_sync, Activation, DenseNet, GradientBuffer, OptimizerState};
use crate::rng::{mix64, seeded};
use crate::tabular::{select_option, OptionState};
use crate::{Error, Result, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct ContTransition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    /// Option active when the action was taken (QUOTA only).
    pub option: Option<usize>,
}

/// FIFO ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<ContTransition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts, evicting the oldest item when full.
    pub fn push(&mut self, t: ContTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&ContTransition> {
        self.items.get(i)
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::invalid(format!(
                "cannot sample {batch} from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, batch: usize, rng: &mut SeededRng) -> Result<Vec<&ContTransition>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    OrnsteinUhlenbeck { theta: f64, sigma: f64, dt: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseKind {
    pub fn ou() -> Self {
        NoiseKind::OrnsteinUhlenbeck {
            theta: 0.15,
            sigma: 0.2,
            dt: 1.0,
        }
    }
}

/// Exploration noise with per-dimension state, reset to zero at episode
/// start.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcess {
    pub kind: NoiseKind,
    pub x: Vec<f64>,
}

impl NoiseProcess {
    pub fn new(kind: NoiseKind, dim: usize) -> Self {
        Self { kind, x: vec![0.0; dim] }
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Advances the process and returns the new sample.
    pub fn sample(&mut self, rng: &mut SeededRng) -> &[f64] {
        for x in self.x.iter_mut() {
            let xi: f64 = StandardNormal.sample(rng);
            *x = match self.kind {
                NoiseKind::OrnsteinUhlenbeck { theta, sigma, dt } => *x + theta * (0.0 - *x) * dt + sigma * dt.sqrt() * xi,
                NoiseKind::Gaussian { sigma } => sigma * xi,
            };
        }
        &self.x
    }
}

/// `x <- x + theta (0 - x) dt + sigma sqrt(dt) xi`.
pub fn ou_step(np: &mut NoiseProcess, rng: &mut SeededRng) -> Vec<f64> {
    np.sample(rng).to_vec()
}

pub fn actor_net(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut SeededRng) -> Result<DenseNet> {
    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(action_dim);
    DenseNet::random(&sizes, Activation::Tanh, Activation::Tanh, rng)
}

/// Critic over the concatenated `(state, action)` input.
pub fn critic_net(obs_dim: usize, action_dim: usize, hidden: &[usize], n_out: usize, rng: &mut SeededRng) -> Result<DenseNet> {
    let mut sizes = vec![obs_dim + action_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(n_out);
    DenseNet::random(&sizes, Activation::Tanh, Activation::Identity, rng)
}

pub fn critic_input(obs: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + action.len());
    v.extend_from_slice(obs);
    v.extend_from_slice(action);
    v
}

/// Actors `mu0..=muM`; index 0 maximises the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSet {
    pub actors: Vec<DenseNet>,
}

impl ActorSet {
    pub fn new(count: usize, obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("actor set needs at least one actor"));
        }
        let actors = (0..count)
            .map(|_| actor_net(obs_dim, hidden, action_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { actors })
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn act(&self, j: usize, obs: &[f64]) -> Result<Vec<f64>> {
        self.actors
            .get(j)
            .ok_or_else(|| Error::invalid(format!("actor {j} out of range")))?
            .predict(obs)
    }
}

/// What an actor ascends on the critic output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorObjective {
    Mean,
    /// 1-based window of `k` quantiles.
    Window { j: usize, k: usize },
}

impl ActorObjective {
    /// d objective / d critic output.
    pub fn output_weights(self, n: usize) -> Result<Vec<f64>> {
        let mut w = vec![0.0; n];
        match self {
            ActorObjective::Mean => w.iter_mut().for_each(|v| *v = 1.0 / n as f64),
            ActorObjective::Window { j, k } => {
                if j == 0 || k == 0 || j * k > n {
                    return Err(Error::invalid(format!("window j={j} k={k} outside {n} quantiles")));
                }
                w[(j - 1) * k..j * k].iter_mut().for_each(|v| *v = 1.0 / k as f64);
            }
        }
        Ok(w)
    }

    pub fn score(self, quantiles: &[f64]) -> Result<f64> {
        match self {
            ActorObjective::Mean => Ok(distcore::mean(quantiles)),
            ActorObjective::Window { j, k } => distcore::window_mean(quantiles, j, k),
        }
    }
}

/// Gradient of an action score with respect to the action.
pub trait ActionScore {
    fn action_grad(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>>;
}

/// A critic network read through an objective.
pub struct CriticScore<'a> {
    pub critic: &'a DenseNet,
    pub objective: ActorObjective,
}

impl ActionScore for CriticScore<'_> {
    fn action_grad(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let trace = self.critic.trace(&critic_input(obs, action))?;
        let w = self.objective.output_weights(self.critic.output_dim())?;
        let g = self.critic.input_grad(&trace, &w)?;
        Ok(g[obs.len()..].to_vec())
    }
}

impl<F> ActionScore for F
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    fn action_grad(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        Ok(self(obs, action))
    }
}

/// Batch-averaged gradient of the negated score, ready for descent.
pub fn actor_gradient<S: ActionScore + ?Sized>(actor: &DenseNet, score: &S, observations: &[&[f64]]) -> Result<GradientBuffer> {
    if observations.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / observations.len() as f64;
    let mut grads = GradientBuffer::zeros_like(actor);
    for obs in observations {
        let trace = actor.trace(obs)?;
        let da = score.action_grad(obs, trace.output())?;
        let out_grad: Vec<f64> = da.iter().map(|g| -g * scale).collect();
        actor.backward_into(&trace, &out_grad, &mut grads)?;
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticLoss {
    /// `0.5 (y - Q)^2`.
    Squared,
    /// Huber of the scalar residual.
    Huber(HuberConfig),
    /// Quantile regression over all critic outputs.
    Quantile(HuberConfig),
}

/// Critic targets for one transition: `r + gamma q_i(s', a*)`, bootstrap
/// dropped on terminal transitions. `a*` comes from the target actor.
pub fn critic_targets(t: &ContTransition, target_actor: &DenseNet, target_critic: &DenseNet, gamma: f64) -> Result<Vec<f64>> {
    if t.terminal {
        return Ok(vec![t.reward; target_critic.output_dim()]);
    }
    let a_star = target_actor.predict(&t.next_obs)?;
    let q = target_critic.predict(&critic_input(&t.next_obs, &a_star))?;
    Ok(q.into_iter().map(|v| t.reward + gamma * v).collect())
}

/// Batch-averaged critic gradient and mean loss.
pub fn critic_gradient(
    critic: &DenseNet,
    target_actor: &DenseNet,
    target_critic: &DenseNet,
    batch: &[&ContTransition],
    gamma: f64,
    loss: CriticLoss,
) -> Result<(GradientBuffer, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = critic.output_dim();
    let levels = match loss {
        CriticLoss::Quantile(_) => Some(QuantileLevels::new(n)?),
        _ if n != 1 => return Err(Error::invalid("scalar critic loss needs one output")),
        _ => None,
    };
    let scale = 1.0 / batch.len() as f64;
    let mut grads = GradientBuffer::zeros_like(critic);
    let mut total = 0.0;
    let mut out_grad = vec![0.0; n];
    for t in batch {
        let y = critic_targets(t, target_actor, target_critic, gamma)?;
        let trace = critic.trace(&critic_input(&t.obs, &t.action))?;
        let pred = trace.output();
        match loss {
            CriticLoss::Squared => {
                let u = y[0] - pred[0];
                total += 0.5 * u * u;
                out_grad[0] = -u;
            }
            CriticLoss::Huber(h) => {
                let u = y[0] - pred[0];
                total += distcore::huber(u, h);
                out_grad[0] = -distcore::huber_derivative(u, h);
            }
            CriticLoss::Quantile(h) => {
                total += distcore::qr_loss_grad_into(pred, &y, levels.as_ref().unwrap(), h, &mut out_grad)?;
            }
        }
        out_grad.iter_mut().for_each(|g| *g *= scale);
        critic.backward_into(&trace, &out_grad, &mut grads)?;
    }
    Ok((grads, total * scale))
}

/// Batch-averaged intra-option TD gradient for the option network.
pub fn option_gradient(
    option_net: &DenseNet,
    option_target: &DenseNet,
    batch: &[&ContTransition],
    gamma: f64,
    beta: f64,
) -> Result<(GradientBuffer, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let m = option_net.output_dim();
    let mut grads = GradientBuffer::zeros_like(option_net);
    let mut total = 0.0;
    let mut out_grad = vec![0.0; m];
    for t in batch {
        let w = t.option.ok_or_else(|| Error::invalid("transition lacks its option record"))?;
        if w >= m {
            return Err(Error::invalid(format!("option {w} out of range")));
        }
        let bootstrap = if t.terminal {
            0.0
        } else {
            let next = option_target.predict(&t.next_obs)?;
            let best = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            beta * best + (1.0 - beta) * next[w]
        };
        let trace = option_net.trace(&t.obs)?;
        let td = t.reward + gamma * bootstrap - trace.output()[w];
        total += 0.5 * td * td;
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        out_grad[w] = -td * scale;
        option_net.backward_into(&trace, &out_grad, &mut grads)?;
    }
    Ok((grads, total * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContAlgorithm {
    Ddpg,
    QrDdpg,
    Quota,
}

impl ContAlgorithm {
    pub const ALL: [ContAlgorithm; 3] = [ContAlgorithm::Ddpg, ContAlgorithm::QrDdpg, ContAlgorithm::Quota];

    pub fn id(self) -> &'static str {
        match self {
            ContAlgorithm::Ddpg => "ddpg",
            ContAlgorithm::QrDdpg => "qrddpg",
            ContAlgorithm::Quota => "quota",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContConfig {
    pub algorithm: ContAlgorithm,
    pub env: Reach1d,
    /// Critic outputs for QR-DDPG and QUOTA; DDPG always uses one.
    pub n_quantiles: usize,
    /// Quantile actors for QUOTA, excluding `mu0`.
    pub m_options: usize,
    pub beta: f64,
    pub epsilon_omega: Schedule,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub option_hidden: Vec<usize>,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub option_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Uniform random actions for this many initial steps; updates start
    /// once the buffer holds this many transitions (and at least a batch).
    pub warmup: u64,
    pub step_budget: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub noise: NoiseKind,
    /// Stop at the first evaluation whose mean return reaches this value.
    pub stop_at_return: Option<f64>,
    pub seed: u64,
}

impl ContConfig {
    pub fn reach_defaults(algorithm: ContAlgorithm, budget: u64, seed: u64) -> Self {
        Self {
            algorithm,
            env: Reach1d::default(),
            n_quantiles: 20,
            m_options: 5,
            beta: 1.0,
            epsilon_omega: Schedule::linear(1.0, 0.0, budget.max(1)),
            actor_hidden: vec![64],
            critic_hidden: vec![64],
            option_hidden: vec![64],
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            option_lr: 1e-3,
            tau: 0.005,
            gamma: crate::envs::REACH_GAMMA,
            kappa: 1.0,
            replay_capacity: 100_000,
            batch: 64,
            warmup: 1_000,
            step_budget: budget,
            eval_every: 5_000,
            eval_episodes: 20,
            noise: NoiseKind::ou(),
            stop_at_return: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(k, m));
        if self.n_quantiles == 0 {
            return bad("n_quantiles", "must be positive");
        }
        if self.algorithm == ContAlgorithm::Quota && (self.m_options == 0 || !self.n_quantiles.is_multiple_of(self.m_options)) {
            return bad("m_options", "must be positive and divide the number of quantiles");
        }
        for (k, h) in [("actor_hidden", &self.actor_hidden), ("critic_hidden", &self.critic_hidden), ("option_hidden", &self.option_hidden)] {
            if h.contains(&0) {
                return bad(k, "layer sizes must be positive");
            }
        }
        for (k, lr) in [("critic_lr", self.critic_lr), ("actor_lr", self.actor_lr), ("option_lr", self.option_lr)] {
            if !(lr > 0.0) {
                return bad(k, "must be positive");
            }
        }
        crate::tabular::unit_interval("tau", self.tau)?;
        crate::tabular::unit_interval("beta", self.beta)?;
        crate::tabular::unit_interval("gamma", self.gamma)?;
        if self.batch == 0 {
            return bad("batch", "must be positive");
        }
        if self.replay_capacity < self.batch {
            return bad("replay_capacity", "must hold at least one batch");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every", "evaluation period and episodes must be positive");
        }
        HuberConfig::new(self.kappa).map_err(|_| Error::config("kappa", "must be positive"))?;
        self.epsilon_omega.validate().map_err(|e| Error::config("epsilon_omega", e.to_string()))
    }

    fn critic_outputs(&self) -> usize {
        match self.algorithm {
            ContAlgorithm::Ddpg => 1,
            _ => self.n_quantiles,
        }
    }

    fn actor_count(&self) -> usize {
        match self.algorithm {
            ContAlgorithm::Quota => self.m_options + 1,
            _ => 1,
        }
    }

    /// Objective of actor `j`: the mean for `mu0`, window `j` otherwise.
    pub fn objective(&self, j: usize) -> ActorObjective {
        if j == 0 {
            ActorObjective::Mean
        } else {
            ActorObjective::Window {
                j,
                k: self.n_quantiles / self.m_options,
            }
        }
    }
}

/// Learner state shared by the three algorithms.
#[derive(Debug, Clone)]
pub struct ContAgent {
    pub cfg: ContConfig,
    pub actors: ActorSet,
    /// Target copy of `mu0`, the only actor used for bootstrapping.
    pub actor_target: DenseNet,
    pub critic: DenseNet,
    pub critic_target: DenseNet,
    pub option_net: Option<DenseNet>,
    pub option_target: Option<DenseNet>,
    actor_opts: Vec<OptimizerState>,
    critic_opt: OptimizerState,
    option_opt: Option<OptimizerState>,
    pub updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContUpdateStats {
    pub critic_loss: f64,
    pub option_loss: f64,
}

impl ContAgent {
    pub fn new(cfg: &ContConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let obs = Reach1d::OBS_DIM;
        let act = Reach1d::ACTION_DIM;
        let actors = ActorSet::new(cfg.actor_count(), obs, &cfg.actor_hidden, act, rng)?;
        let critic = critic_net(obs, act, &cfg.critic_hidden, cfg.critic_outputs(), rng)?;
        let option_net = (cfg.algorithm == ContAlgorithm::Quota)
            .then(|| {
                let mut sizes = vec![obs];
                sizes.extend_from_slice(&cfg.option_hidden);
                sizes.push(cfg.m_options + 1);
                DenseNet::random(&sizes, Activation::Tanh, Activation::Identity, rng)
            })
            .transpose()?;
        let actor_opts = actors
            .actors
            .iter()
            .map(|a| OptimizerState::adam(cfg.actor_lr, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            actor_target: actors.actors[0].clone(),
            critic_target: critic.clone(),
            critic_opt: OptimizerState::adam(cfg.critic_lr, &critic)?,
            option_opt: option_net.as_ref().map(|n| OptimizerState::adam(cfg.option_lr, n)).transpose()?,
            option_target: option_net.clone(),
            option_net,
            actors,
            critic,
            actor_opts,
            updates: 0,
        })
    }

    fn critic_loss(&self) -> Result<CriticLoss> {
        let h = HuberConfig::new(self.cfg.kappa)?;
        Ok(match self.cfg.algorithm {
            ContAlgorithm::Ddpg => CriticLoss::Squared,
            _ => CriticLoss::Quantile(h),
        })
    }

    /// Deterministic evaluation action: `mu0` for DDPG / QR-DDPG, the
    /// greedy option's actor for QUOTA.
    pub fn eval_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let j = match &self.option_net {
            Some(net) => argmax_first(&net.predict(obs)?),
            None => 0,
        };
        self.actors.act(j, obs)
    }

    fn soft_sync_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        soft_sync(&mut self.critic_target, &self.critic, tau)?;
        soft_sync(&mut self.actor_target, &self.actors.actors[0], tau)?;
        if let (Some(t), Some(n)) = (&mut self.option_target, &self.option_net) {
            soft_sync(t, n, tau)?;
        }
        Ok(())
    }
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Critic step, then actor step(s), then option step, then soft sync.
/// Every gradient is computed from the pre-update networks; a non-finite
/// loss or gradient skips the whole update.
fn update(agent: &mut ContAgent, batch: &[&ContTransition]) -> Result<ContUpdateStats> {
    let cfg = &agent.cfg;
    let (critic_grads, critic_loss) = critic_gradient(
        &agent.critic,
        &agent.actor_target,
        &agent.critic_target,
        batch,
        cfg.gamma,
        agent.critic_loss()?,
    )?;
    let observations: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
    let actor_grads = agent
        .actors
        .actors
        .iter()
        .enumerate()
        .map(|(j, actor)| {
            let score = CriticScore {
                critic: &agent.critic,
                objective: cfg.objective(j),
            };
            actor_gradient(actor, &score, &observations)
        })
        .collect::<Result<Vec<_>>>()?;
    let option = match (&agent.option_net, &agent.option_target) {
        (Some(net), Some(target)) => Some(option_gradient(net, target, batch, cfg.gamma, cfg.beta)?),
        _ => None,
    };
    let option_loss = option.as_ref().map(|o| o.1).unwrap_or(0.0);
    let finite = critic_loss.is_finite()
        && option_loss.is_finite()
        && critic_grads.is_finite()
        && actor_grads.iter().all(|g| g.is_finite())
        && option.as_ref().is_none_or(|o| o.0.is_finite());
    if !finite {
        return Err(Error::NonFinite("continuous update".into()));
    }
    agent.critic_opt.step(&mut agent.critic, &critic_grads)?;
    for ((opt, actor), g) in agent.actor_opts.iter_mut().zip(&mut agent.actors.actors).zip(&actor_grads) {
        opt.step(actor, g)?;
    }
    if let (Some((g, _)), Some(opt), Some(net)) = (&option, &mut agent.option_opt, &mut agent.option_net) {
        opt.step(net, g)?;
    }
    agent.soft_sync_targets()?;
    agent.updates += 1;
    Ok(ContUpdateStats { critic_loss, option_loss })
}

fn expect_algorithm(agent: &ContAgent, algo: ContAlgorithm) -> Result<()> {
    if agent.cfg.algorithm != algo {
        return Err(Error::invalid(format!(
            "{} update called on a {} agent",
            algo.id(),
            agent.cfg.algorithm.id()
        )));
    }
    Ok(())
}

/// DDPG: squared one-step critic error against target networks, actor
/// ascends `dQ/da`, soft target sync.
pub fn ddpg_update(agent: &mut ContAgent, batch: &[&ContTransition]) -> Result<ContUpdateStats> {
    expect_algorithm(agent, ContAlgorithm::Ddpg)?;
    update(agent, batch)
}

/// QR-DDPG: quantile-regression critic, actor ascends the quantile mean.
pub fn qr_ddpg_update(agent: &mut ContAgent, batch: &[&ContTransition]) -> Result<ContUpdateStats> {
    expect_algorithm(agent, ContAlgorithm::QrDdpg)?;
    update(agent, batch)
}

/// Continuous QUOTA: QR critic bootstrapped through `mu0`, every actor on
/// its own objective, intra-option learning for the option network.
pub fn quota_continuous_update(agent: &mut ContAgent, batch: &[&ContTransition]) -> Result<ContUpdateStats> {
    expect_algorithm(agent, ContAlgorithm::Quota)?;
    update(agent, batch)
}

/// Option (re)selection over `M + 1` actors, then the chosen actor's action
/// plus exploration noise, clamped to `[-1, 1]`.
pub fn quota_continuous_step(
    agent: &ContAgent,
    obs: &[f64],
    ostate: &mut OptionState,
    epsilon_omega: f64,
    noise: &mut NoiseProcess,
    rng: &mut SeededRng,
) -> Result<(Vec<f64>, usize)> {
    let net = agent
        .option_net
        .as_ref()
        .ok_or_else(|| Error::invalid("agent has no option network"))?;
    let values = net.predict(obs)?;
    let w = select_option(ostate.current, &values, agent.cfg.beta, epsilon_omega, rng);
    ostate.current = Some(w);
    let mut a = agent.actors.act(w, obs)?;
    for (ai, n) in a.iter_mut().zip(noise.sample(rng)) {
        *ai = (*ai + n).clamp(-1.0, 1.0);
    }
    Ok((a, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub train_step: u64,
    pub mean_eval_return: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone)]
pub struct ContRunResult {
    pub eval_log: Vec<EvalRow>,
    pub agent: ContAgent,
    pub env_steps: u64,
    pub aborted: Option<String>,
}

const MAX_SKIPPED_UPDATES: u32 = 10;
const EVAL_SALT: u64 = 0x6576_616c;

/// Deterministic evaluation: `episodes` rollouts on a stream derived from
/// `(seed, train_step)`. Returns (mean, standard error) of the undiscounted
/// return.
pub fn evaluate(agent: &ContAgent, episodes: usize, seed: u64, train_step: u64) -> Result<(f64, f64)> {
    let mut rng = seeded(mix64(seed ^ EVAL_SALT) ^ train_step);
    let env = agent.cfg.env;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            let a = agent.eval_action(&s.observe())?;
            let step = env.step(s, a[0], &mut rng);
            total += step.reward;
            s = step.next;
            if step.terminal {
                break;
            }
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std_err = if returns.len() > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok((mean, std_err))
}

/// Trains one continuous agent on reach1d with replay.
pub fn train(cfg: &ContConfig) -> Result<ContRunResult> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut agent = ContAgent::new(cfg, &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut noise = NoiseProcess::new(cfg.noise, Reach1d::ACTION_DIM);
    let env = cfg.env;
    let mut eval_log = Vec::new();
    let mut skipped = 0u32;
    let mut aborted = None;
    let mut state: ContinuousEnvState = env.reset(&mut rng);
    let mut ostate = OptionState::default();
    let learn_from = (cfg.warmup as usize).max(cfg.batch);

    let mut step = 0u64;
    while step < cfg.step_budget {
        let obs = state.observe().to_vec();
        let (mut action, option) = match cfg.algorithm {
            ContAlgorithm::Quota => {
                let eo = cfg.epsilon_omega.value(step);
                let (a, w) = quota_continuous_step(&agent, &obs, &mut ostate, eo, &mut noise, &mut rng)?;
                (a, Some(w))
            }
            _ => {
                let mut a = agent.actors.act(0, &obs)?;
                for (ai, n) in a.iter_mut().zip(noise.sample(&mut rng)) {
                    *ai = (*ai + n).clamp(-1.0, 1.0);
                }
                (a, None)
            }
        };
        if step < cfg.warmup {
            action = vec![rng.random_range(-1.0..=1.0)];
        }
        let out = env.step(state, action[0], &mut rng);
        buffer.push(ContTransition {
            obs,
            action,
            reward: out.reward,
            next_obs: out.next.observe().to_vec(),
            terminal: out.terminal,
            option,
        });
        step += 1;
        if out.terminal {
            state = env.reset(&mut rng);
            noise.reset();
            ostate = OptionState::default();
        } else {
            state = out.next;
        }

        if buffer.len() >= learn_from {
            let batch = buffer.sample(cfg.batch, &mut rng)?;
            match update(&mut agent, &batch) {
                Ok(_) => skipped = 0,
                Err(Error::NonFinite(what)) => {
                    skipped += 1;
                    if skipped >= MAX_SKIPPED_UPDATES {
                        aborted = Some(format!("{skipped} consecutive non-finite updates ({what})"));
                        break;
                    }
                }
                Err(e) => return Err(e),
            }
        }

        if step.is_multiple_of(cfg.eval_every) || step == cfg.step_budget {
            let (mean, std_err) = evaluate(&agent, cfg.eval_episodes, cfg.seed, step)?;
            eval_log.push(EvalRow {
                train_step: step,
                mean_eval_return: mean,
                std_err,
            });
            if cfg.stop_at_return.is_some_and(|target| mean >= target) {
                break;
            }
        }
    }
    Ok(ContRunResult {
        eval_log,
        agent,
        env_steps: step,
        aborted,
    })
}

/// Largest shortfall, over `states`, between actor `j`'s window score and
/// the best score on a uniform action grid of `grid` points in `[-1, 1]`.
pub fn window_grid_gap(agent: &ContAgent, j: usize, states: &[Vec<f64>], grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let objective = agent.cfg.objective(j);
    let score = |obs: &[f64], a: f64| -> Result<f64> { objective.score(&agent.critic.predict(&critic_input(obs, &[a]))?) };
    let mut worst: f64 = 0.0;
    for obs in states {
        let mut best = f64::NEG_INFINITY;
        for g in 0..grid {
            let a = -1.0 + 2.0 * g as f64 / (grid - 1) as f64;
            best = best.max(score(obs, a)?);
        }
        let own = score(obs, agent.actors.act(j, obs)?[0])?;
        worst = worst.max(best - own);
    }
    Ok(worst)
}

/// Monte-Carlo returns of the uniform-random and one-step greedy policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachBaselines {
    pub random: f64,
    pub oracle: f64,
}

impl ReachBaselines {
    /// Fraction of the random-to-oracle gap closed by `ret`.
    pub fn gap_closed(&self, ret: f64) -> f64 {
        (ret - self.random) / (self.oracle - self.random)
    }
}

pub fn reach_baselines(env: &Reach1d, episodes: usize, seed: u64) -> ReachBaselines {
    use crate::envs::{greedy_step_action, random_action, reach1d_mean_return};
    let random = reach1d_mean_return(env, episodes, &mut seeded(seed), random_action);
    let oracle = reach1d_mean_return(env, episodes, &mut seeded(seed ^ 1), greedy_step_action);
    ReachBaselines { random, oracle }
}
