//! Tabular agents and the steps-to-optimal chain protocol.
//!
//! Five algorithms share one trial loop:
//!
//! | algorithm   | estimator      | behaviour policy scores       |
//! |-------------|----------------|-------------------------------|
//! | `qlearning` | [`QTable`]     | Q(s, a)                       |
//! | `qr`        | [`QuantileTable`] | mean of quantiles          |
//! | `oqr`       | [`QuantileTable`] | highest quantile q_N       |
//! | `pqr`       | [`QuantileTable`] | lowest quantile q_1        |
//! | `quota`     | [`QuantileTable`] + [`OptionValueTable`] | window mean of the committed option |
//!
//! Every argmax (actions and options) breaks ties uniformly at random. Tables
//! start at zero and row [`TERMINAL`](crate::envs::TERMINAL) stays zero.

use rand::Rng;

use crate::distcore::{self, HuberConfig, QuantileLevels};
use crate::envs::{ChainAction, ChainConfig, ChainEnv, DiscreteEnv, StepResult, LEFT};
use crate::rng::{argmax_random_tie, seeded};
use crate::{Error, Result, SeededRng};

pub const DEFAULT_STEP_CAP: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub step_cap: u64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon: 0.1,
            gamma: 1.0,
            kappa: 1.0,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a positive real"));
        }
        unit_interval("epsilon", self.epsilon)?;
        unit_interval("gamma", self.gamma)?;
        HuberConfig::new(self.kappa).map_err(|_| Error::config("kappa", "must be positive"))?;
        if self.step_cap == 0 {
            return Err(Error::config("step_cap", "must be positive"));
        }
        Ok(())
    }

    pub fn huber(&self) -> HuberConfig {
        HuberConfig::new(self.kappa).expect("validated kappa")
    }
}

pub(crate) fn unit_interval(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("must lie in [0, 1], got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionConfig {
    pub m_options: usize,
    pub window: usize,
    pub beta: f64,
    pub epsilon_omega: f64,
}

impl Default for OptionConfig {
    fn default() -> Self {
        Self {
            m_options: 3,
            window: 1,
            beta: 0.0,
            epsilon_omega: 0.1,
        }
    }
}

impl OptionConfig {
    pub fn validate(&self, n_quantiles: usize) -> Result<()> {
        if self.m_options == 0 || self.window == 0 {
            return Err(Error::config("m_options", "M and K must be positive"));
        }
        if self.m_options * self.window != n_quantiles {
            return Err(Error::config(
                "m_options",
                format!(
                    "M * K = {} * {} must equal the number of quantiles {n_quantiles}",
                    self.m_options, self.window
                ),
            ));
        }
        unit_interval("beta", self.beta)?;
        unit_interval("epsilon_omega", self.epsilon_omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

impl Transition {
    pub fn from_step(state: usize, action: usize, step: &StepResult) -> Self {
        Self {
            state,
            action,
            reward: step.reward,
            next_state: step.next_state,
            terminal: step.terminal,
        }
    }
}

fn check_index(what: &str, i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} index {i} out of range 0..{n}")))
    }
}

/// Dense `(state, action)` table of scalar values. Row 0 is the terminal
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    /// `n_states` counts non-terminal states; one extra terminal row is added.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states: n_states + 1,
            n_actions,
            values: vec![0.0; (n_states + 1) * n_actions],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("action", a, self.n_actions)
    }
}

/// One Q-learning step: `Q(s,a) += alpha * (r + gamma * max Q(s') - Q(s,a))`.
pub fn q_learning_update(table: &mut QTable, tr: &Transition, cfg: &LearningConfig) -> Result<()> {
    table.check(tr.state, tr.action)?;
    check_index("state", tr.next_state, table.n_states)?;
    let bootstrap = if tr.terminal { 0.0 } else { table.max(tr.next_state) };
    let q = table.get(tr.state, tr.action);
    table.set(
        tr.state,
        tr.action,
        q + cfg.alpha * (tr.reward + cfg.gamma * bootstrap - q),
    );
    Ok(())
}

/// Dense `(state, action)` table of quantile vectors. Row 0 is the terminal
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    n_states: usize,
    n_actions: usize,
    n_quantiles: usize,
    values: Vec<f64>,
}

impl QuantileTable {
    pub fn zeros(n_states: usize, n_actions: usize, n_quantiles: usize) -> Self {
        Self {
            n_states: n_states + 1,
            n_actions,
            n_quantiles,
            values: vec![0.0; (n_states + 1) * n_actions * n_quantiles],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_quantiles
    }

    pub fn quantiles(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.values[o..o + self.n_quantiles]
    }

    pub fn quantiles_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let o = self.offset(s, a);
        let n = self.n_quantiles;
        &mut self.values[o..o + n]
    }

    pub fn mean(&self, s: usize, a: usize) -> f64 {
        distcore::mean(self.quantiles(s, a))
    }

    pub fn means(&self, s: usize) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.mean(s, a)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("action", a, self.n_actions)
    }
}

/// One tabular QR step on `tr`.
///
/// The bootstrap action maximises the quantile mean at the next state; the
/// gradient step uses the unaveraged-target QR loss.
pub fn qr_update_tabular(
    table: &mut QuantileTable,
    tr: &Transition,
    cfg: &LearningConfig,
    levels: &QuantileLevels,
    rng: &mut SeededRng,
) -> Result<()> {
    table.check(tr.state, tr.action)?;
    check_index("state", tr.next_state, table.n_states)?;
    if levels.len() != table.n_quantiles {
        return Err(Error::invalid("quantile levels do not match table"));
    }
    let targets: Vec<f64> = if tr.terminal {
        vec![tr.reward; table.n_quantiles]
    } else {
        let best = argmax_random_tie(&table.means(tr.next_state), rng);
        table
            .quantiles(tr.next_state, best)
            .iter()
            .map(|q| tr.reward + cfg.gamma * q)
            .collect()
    };
    let mut grad = vec![0.0; table.n_quantiles];
    distcore::qr_loss_grad_into(
        table.quantiles(tr.state, tr.action),
        &targets,
        levels,
        cfg.huber(),
        &mut grad,
    )?;
    for (q, g) in table.quantiles_mut(tr.state, tr.action).iter_mut().zip(&grad) {
        *q -= cfg.alpha * g;
    }
    Ok(())
}

/// How a quantile table scores actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Mean,
    /// Single quantile `q_j`, 1-based.
    QuantileIndex(usize),
    /// Mean of the `j`-th (1-based) window of `k` quantiles.
    Window { j: usize, k: usize },
}

#[derive(Debug, Clone, Copy)]
pub enum TableRef<'a> {
    Q(&'a QTable),
    Quantile(&'a QuantileTable),
}

fn action_scores(table: TableRef<'_>, state: usize, mode: ActionMode) -> Result<Vec<f64>> {
    match (table, mode) {
        (TableRef::Q(t), ActionMode::Mean) => {
            check_index("state", state, t.n_states)?;
            Ok(t.row(state).to_vec())
        }
        (TableRef::Q(_), _) => Err(Error::invalid("scalar table only supports mean mode")),
        (TableRef::Quantile(t), mode) => {
            check_index("state", state, t.n_states)?;
            (0..t.n_actions)
                .map(|a| {
                    let q = t.quantiles(state, a);
                    match mode {
                        ActionMode::Mean => Ok(distcore::mean(q)),
                        ActionMode::QuantileIndex(j) => distcore::window_mean(q, j, 1),
                        ActionMode::Window { j, k } => distcore::window_mean(q, j, k),
                    }
                })
                .collect()
        }
    }
}

/// Epsilon-greedy action selection. One uniform draw decides exploration;
/// exploitation breaks ties uniformly at random.
pub fn select_action(
    table: TableRef<'_>,
    state: usize,
    mode: ActionMode,
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<usize> {
    let scores = action_scores(table, state, mode)?;
    Ok(epsilon_greedy(&scores, epsilon, rng))
}

pub fn epsilon_greedy(scores: &[f64], epsilon: f64, rng: &mut SeededRng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..scores.len())
    } else {
        argmax_random_tie(scores, rng)
    }
}

/// `(state, option)` option values. Row 0 is the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionValueTable {
    inner: QTable,
}

impl OptionValueTable {
    pub fn zeros(n_states: usize, m_options: usize) -> Self {
        Self {
            inner: QTable::zeros(n_states, m_options),
        }
    }

    pub fn get(&self, s: usize, w: usize) -> f64 {
        self.inner.get(s, w)
    }

    pub fn set(&mut self, s: usize, w: usize, v: f64) {
        self.inner.set(s, w, v)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.inner.row(s)
    }

    pub fn as_qtable(&self) -> &QTable {
        &self.inner
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }
}

/// Intra-option Q-learning for a constant termination probability `beta`.
///
/// `tr.action` is ignored; `option` is the option active when the action
/// was taken.
pub fn intra_option_update(
    ovt: &mut OptionValueTable,
    tr: &Transition,
    option: usize,
    beta: f64,
    cfg: &LearningConfig,
) -> Result<()> {
    ovt.inner.check(tr.state, option)?;
    check_index("state", tr.next_state, ovt.inner.n_states)?;
    let y = if tr.terminal {
        0.0
    } else {
        beta * ovt.inner.max(tr.next_state) + (1.0 - beta) * ovt.get(tr.next_state, option)
    };
    let q = ovt.get(tr.state, option);
    ovt.set(tr.state, option, q + cfg.alpha * (tr.reward + cfg.gamma * y - q));
    Ok(())
}

/// Committed option; `None` at the start of an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OptionState {
    pub current: Option<usize>,
}

/// Option (re)selection shared by every QUOTA variant.
///
/// Mid-episode: keep with probability `1 - beta`, otherwise reselect. A
/// reselection is random with probability `epsilon_omega` and greedy on
/// `option_values` otherwise. With no committed option a reselection is
/// forced. A single option is returned without consuming the stream.
pub fn select_option(
    current: Option<usize>,
    option_values: &[f64],
    beta: f64,
    epsilon_omega: f64,
    rng: &mut SeededRng,
) -> usize {
    if option_values.len() == 1 {
        return 0;
    }
    if let Some(w) = current {
        if rng.random::<f64>() >= beta {
            return w;
        }
    }
    if rng.random::<f64>() < epsilon_omega {
        rng.random_range(0..option_values.len())
    } else {
        argmax_random_tie(option_values, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotaTabularConfig {
    pub learning: LearningConfig,
    pub options: OptionConfig,
}

/// Tabular QUOTA agent: quantile table, option values and the committed
/// option.
#[derive(Debug, Clone)]
pub struct QuotaTabular {
    pub quantiles: QuantileTable,
    pub option_values: OptionValueTable,
    pub option_state: OptionState,
    pub levels: QuantileLevels,
    pub cfg: QuotaTabularConfig,
}

impl QuotaTabular {
    pub fn new(n_states: usize, n_actions: usize, n_quantiles: usize, cfg: QuotaTabularConfig) -> Result<Self> {
        cfg.learning.validate()?;
        cfg.options.validate(n_quantiles)?;
        Ok(Self {
            quantiles: QuantileTable::zeros(n_states, n_actions, n_quantiles),
            option_values: OptionValueTable::zeros(n_states, cfg.options.m_options),
            option_state: OptionState::default(),
            levels: QuantileLevels::new(n_quantiles)?,
            cfg,
        })
    }

    /// Chooses the option for `state`, then an epsilon-greedy action on that
    /// option's window mean. Returns `(action, option)`.
    pub fn act(&mut self, state: usize, rng: &mut SeededRng) -> Result<(usize, usize)> {
        let o = self.cfg.options;
        let w = select_option(
            self.option_state.current,
            self.option_values.row(state),
            o.beta,
            o.epsilon_omega,
            rng,
        );
        self.option_state.current = Some(w);
        let a = select_action(
            TableRef::Quantile(&self.quantiles),
            state,
            ActionMode::Window { j: w + 1, k: o.window },
            self.cfg.learning.epsilon,
            rng,
        )?;
        Ok((a, w))
    }

    /// Applies the QR and intra-option updates to one transition and clears
    /// the committed option at episode end.
    pub fn learn(&mut self, tr: &Transition, option: usize, rng: &mut SeededRng) -> Result<()> {
        qr_update_tabular(&mut self.quantiles, tr, &self.cfg.learning, &self.levels, rng)?;
        intra_option_update(&mut self.option_values, tr, option, self.cfg.options.beta, &self.cfg.learning)?;
        if tr.terminal {
            self.option_state.current = None;
        }
        Ok(())
    }
}

/// One full QUOTA interaction step: act, step the environment, learn.
pub fn quota_tabular_step<E: DiscreteEnv>(
    agent: &mut QuotaTabular,
    env: &mut E,
    state: usize,
    rng: &mut SeededRng,
) -> Result<(usize, StepResult)> {
    let (a, w) = agent.act(state, rng)?;
    let step = env.step(state, a, rng)?;
    agent.learn(&Transition::from_step(state, a, &step), w, rng)?;
    Ok((a, step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    QLearning,
    Qr,
    Oqr,
    Pqr,
    Quota,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::QLearning,
        Algorithm::Qr,
        Algorithm::Oqr,
        Algorithm::Pqr,
        Algorithm::Quota,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::QLearning => "qlearning",
            Algorithm::Qr => "qr",
            Algorithm::Oqr => "oqr",
            Algorithm::Pqr => "pqr",
            Algorithm::Quota => "quota",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.id() == s)
    }

    /// Behaviour-policy mode for the quantile-table ablations.
    pub fn behaviour_mode(self, n_quantiles: usize) -> ActionMode {
        match self {
            Algorithm::Oqr => ActionMode::QuantileIndex(n_quantiles),
            Algorithm::Pqr => ActionMode::QuantileIndex(1),
            _ => ActionMode::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub learning: LearningConfig,
    pub n_quantiles: usize,
    pub options: OptionConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            learning: LearningConfig::default(),
            n_quantiles: 3,
            options: OptionConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self, algo: Algorithm) -> Result<()> {
        self.learning.validate()?;
        if self.n_quantiles == 0 {
            return Err(Error::config("n_quantiles", "must be positive"));
        }
        if algo == Algorithm::Quota {
            self.options.validate(self.n_quantiles)?;
        }
        Ok(())
    }
}

/// Greedy chain policy: LEFT at `s` iff its score strictly exceeds UP's.
fn greedy_is_all_left(scores: impl Fn(usize) -> (f64, f64), length: usize) -> bool {
    (1..=length).all(|s| {
        let (left, up) = scores(s);
        left > up
    })
}

enum Learner {
    Q(QTable),
    Qr {
        table: QuantileTable,
        levels: QuantileLevels,
        mode: ActionMode,
    },
    Quota(Box<QuotaTabular>),
}

impl Learner {
    fn optimal(&self, length: usize) -> bool {
        debug_assert_eq!(LEFT, ChainAction::Left as usize);
        match self {
            Learner::Q(t) => greedy_is_all_left(|s| (t.get(s, 0), t.get(s, 1)), length),
            Learner::Qr { table, .. } => greedy_is_all_left(|s| (table.mean(s, 0), table.mean(s, 1)), length),
            Learner::Quota(agent) => {
                let t = &agent.quantiles;
                greedy_is_all_left(|s| (t.mean(s, 0), t.mean(s, 1)), length)
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Learner::Q(t) => t.is_finite(),
            Learner::Qr { table, .. } => table.is_finite(),
            Learner::Quota(a) => a.quantiles.is_finite() && a.option_values.is_finite(),
        }
    }
}

/// Outcome of one chain trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    /// First step after which the greedy policy is LEFT everywhere, or the
    /// step cap.
    pub steps_to_optimal: u64,
    pub reached_optimal: bool,
    pub episodes: u64,
    /// Whether all tables stayed finite.
    pub finite: bool,
}

/// Runs one algorithm on one chain until the mean-greedy policy is optimal
/// or the step cap is hit.
pub fn run_trial(algo: Algorithm, chain: ChainConfig, cfg: &TrialConfig, seed: u64) -> Result<TrialOutcome> {
    cfg.validate(algo)?;
    let mut rng = seeded(seed);
    let mut env = ChainEnv::new(chain);
    let spec = env.spec();
    let learning = cfg.learning;
    let mut learner = match algo {
        Algorithm::QLearning => Learner::Q(QTable::zeros(spec.n_states, spec.n_actions)),
        Algorithm::Qr | Algorithm::Oqr | Algorithm::Pqr => Learner::Qr {
            table: QuantileTable::zeros(spec.n_states, spec.n_actions, cfg.n_quantiles),
            levels: QuantileLevels::new(cfg.n_quantiles)?,
            mode: algo.behaviour_mode(cfg.n_quantiles),
        },
        Algorithm::Quota => Learner::Quota(Box::new(QuotaTabular::new(
            spec.n_states,
            spec.n_actions,
            cfg.n_quantiles,
            QuotaTabularConfig {
                learning,
                options: cfg.options,
            },
        )?)),
    };

    let mut t = 0u64;
    let mut episodes = 0u64;
    while t < learning.step_cap {
        let mut state = env.reset(&mut rng);
        episodes += 1;
        loop {
            let step = match &mut learner {
                Learner::Q(table) => {
                    let a = select_action(TableRef::Q(table), state, ActionMode::Mean, learning.epsilon, &mut rng)?;
                    let step = env.step(state, a, &mut rng)?;
                    q_learning_update(table, &Transition::from_step(state, a, &step), &learning)?;
                    step
                }
                Learner::Qr { table, levels, mode } => {
                    let a = select_action(TableRef::Quantile(table), state, *mode, learning.epsilon, &mut rng)?;
                    let step = env.step(state, a, &mut rng)?;
                    qr_update_tabular(table, &Transition::from_step(state, a, &step), &learning, levels, &mut rng)?;
                    step
                }
                Learner::Quota(agent) => quota_tabular_step(agent, &mut env, state, &mut rng)?.1,
            };
            t += 1;
            if learner.optimal(chain.length) {
                return Ok(TrialOutcome {
                    steps_to_optimal: t,
                    reached_optimal: true,
                    episodes,
                    finite: learner.is_finite(),
                });
            }
            if step.terminal || t >= learning.step_cap {
                break;
            }
            state = step.next_state;
        }
    }
    Ok(TrialOutcome {
        steps_to_optimal: learning.step_cap,
        reached_optimal: false,
        episodes,
        finite: learner.is_finite(),
    })
}
