//! Acceptance criteria 1-9, one PASS/FAIL line each. Exits nonzero if any
//! criterion fails.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use quota_core::contagents::{
    self, actor_gradient, actor_net, critic_gradient, reach_baselines, window_grid_gap, ContAgent, ContAlgorithm, ContConfig,
    ContTransition, CriticLoss,
};
use quota_core::deepagents::{self, DeepAlgorithm, DeepConfig, DeepRunResult};
use quota_core::distcore::{HuberConfig, QuantileLevels};
use quota_core::envs::{ChainVariant, Reach1d, TERMINAL};
use quota_core::harness::gradcheck::full_grad_check;
use quota_core::harness::{self, run_chain_sweep, sweep_records, CellSummary, ExperimentConfig, ExperimentKind, Ini};
use quota_core::nnkit::OptimizerState;
use quota_core::rng::seeded;
use quota_core::tabular::{
    intra_option_update, q_learning_update, qr_update_tabular, select_action, ActionMode, Algorithm, LearningConfig,
    OptionConfig, OptionValueTable, QuantileTable, QuotaTabular, QuotaTabularConfig, TableRef, Transition, DEFAULT_STEP_CAP,
};
use rand::Rng;

const CHAIN_RUNTIME: Duration = Duration::from_secs(300);
const GRAD_RUNTIME: Duration = Duration::from_secs(30);
const BANDIT_RUNTIME: Duration = Duration::from_secs(60);
const BANDIT_TOLERANCE: f64 = 0.15;
const DEEP_BUDGET_QRDQN: u64 = 200_000;
const DEEP_BUDGET_QUOTA: u64 = 300_000;
const CONT_BUDGET: u64 = 50_000;
const GAP_FRACTION: f64 = 0.5;
const DPG_TARGET: f64 = 0.3;
const DPG_TOLERANCE: f64 = 0.01;
const GRID_TOLERANCE: f64 = 0.05;
const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn threads() -> usize {
    harness::threads_from_env().expect("QUOTA_LAB_THREADS")
}

fn chain_config(chain: ChainVariant) -> ExperimentConfig {
    let text = format!("[env]\nchains = {}\nlengths = 6, 10, 14\n[experiment]\ntrials = 10\n", chain.id());
    let cfg = ExperimentConfig::from_ini(&Ini::parse(&text).unwrap(), ExperimentKind::ChainSweep).unwrap();
    assert_eq!(cfg.trial.learning.step_cap, DEFAULT_STEP_CAP);
    cfg
}

fn run_sweep(chain: ChainVariant) -> (Vec<CellSummary>, Duration) {
    let t = Instant::now();
    let (_, summaries) = sweep_records(&chain_config(chain), threads()).unwrap();
    (summaries, t.elapsed())
}

fn median(s: &[CellSummary], length: usize, algo: Algorithm) -> f64 {
    s.iter().find(|c| c.chain_length == length && c.algorithm == algo).unwrap().median_steps
}

/// `best` beats QR and Q-learning, and `other` is at least 5x slower or
/// capped, at every length.
fn ordering(s: &[CellSummary], best: Algorithm, other: Algorithm, elapsed: Duration) -> Verdict {
    let mut pass = elapsed < CHAIN_RUNTIME;
    let mut detail = String::new();
    for length in [6, 10, 14] {
        let m = |a| median(s, length, a);
        let (b, qr, ql, o) = (m(best), m(Algorithm::Qr), m(Algorithm::QLearning), m(other));
        let ok = b < qr && b < ql && (o >= 5.0 * b || o >= DEFAULT_STEP_CAP as f64);
        pass &= ok;
        let _ = write!(
            detail,
            "L={length} {}={b} qr={qr} ql={ql} {}={o}{}; ",
            best.id(),
            other.id(),
            if ok { "" } else { " (violated)" }
        );
    }
    let _ = write!(detail, "{:.0}s", elapsed.as_secs_f64());
    Verdict { pass, detail }
}

fn quota_robust(chains: &[(ChainVariant, &[CellSummary])]) -> Verdict {
    let mut pass = true;
    let mut detail = String::new();
    for (chain, s) in chains {
        for length in [6, 10, 14] {
            let m = |a| median(s, length, a);
            let capped = s.iter().find(|c| c.chain_length == length && c.algorithm == Algorithm::Quota).unwrap().capped;
            let (q, qr, ql) = (m(Algorithm::Quota), m(Algorithm::Qr), m(Algorithm::QLearning));
            let ok = q < qr && q < ql && capped <= 2;
            pass &= ok;
            let _ = write!(
                detail,
                "{} L={length} quota={q} qr={qr} ql={ql} capped={capped}{}; ",
                chain.id(),
                if ok { "" } else { " (violated)" }
            );
        }
    }
    Verdict { pass, detail }
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let reports = full_grad_check(100, 0).unwrap();
    let elapsed = t.elapsed();
    let pass = reports.iter().all(|r| r.passed()) && elapsed < GRAD_RUNTIME;
    let mut detail: Vec<String> = reports.iter().map(|r| format!("{} max {:.2e}", r.name, r.max_rel_error)).collect();
    detail.push(format!("{:.1}s", elapsed.as_secs_f64()));
    Verdict { pass, detail: detail.join(", ") }
}

/// Tabular QR on the single-state Uniform{-1, +1} bandit against the
/// empirical quantiles of 1e6 samples, at the default kappa.
fn bandit() -> Verdict {
    let t = Instant::now();
    let cfg = LearningConfig {
        alpha: 0.05,
        ..Default::default()
    };
    let levels = QuantileLevels::new(2).unwrap();
    let mut rng = seeded(5);
    let draw = |rng: &mut quota_core::SeededRng| if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut table = QuantileTable::zeros(1, 1, 2);
    for _ in 0..100_000 {
        let tr = Transition {
            state: 1,
            action: 0,
            reward: draw(&mut rng),
            next_state: TERMINAL,
            terminal: true,
        };
        qr_update_tabular(&mut table, &tr, &cfg, &levels, &mut rng).unwrap();
    }
    let mut samples: Vec<f64> = (0..1_000_000).map(|_| draw(&mut rng)).collect();
    samples.sort_by(f64::total_cmp);
    let mut pass = true;
    let mut detail = format!("kappa={} ", cfg.kappa);
    for (i, &tau) in levels.midpoints().iter().enumerate() {
        let empirical = samples[((tau * samples.len() as f64).ceil() as usize - 1).min(samples.len() - 1)];
        let q = table.quantiles(1, 0)[i];
        let ok = (q - empirical).abs() < BANDIT_TOLERANCE;
        pass &= ok;
        let _ = write!(detail, "q{}={q:.3} vs {empirical} (err {:.3}); ", i + 1, (q - empirical).abs());
    }
    pass &= t.elapsed() < BANDIT_RUNTIME;
    Verdict { pass, detail }
}

fn deep_run(algo: DeepAlgorithm, seed: u64) -> DeepRunResult {
    let budget = match algo {
        DeepAlgorithm::QrDqn => DEEP_BUDGET_QRDQN,
        DeepAlgorithm::Quota => DEEP_BUDGET_QUOTA,
    };
    let mut cfg = DeepConfig::chain_defaults(algo, 5, budget, seed).unwrap();
    cfg.stop_when_optimal = false;
    deepagents::train(&cfg).unwrap()
}

fn same_bits(a: &DeepRunResult, b: &DeepRunResult) -> bool {
    let bits = |r: &DeepRunResult| -> Vec<u64> {
        let mut v = Vec::new();
        for row in &r.log {
            v.push(row.global_step);
            v.push(row.mean_episode_return_last_100.map_or(u64::MAX, f64::to_bits));
            v.extend([row.loss, row.epsilon, row.epsilon_omega].map(f64::to_bits));
        }
        v.extend(r.option_events.iter().map(|&o| o as u64));
        for net in [Some(&r.net.trunk), Some(&r.net.quantile_head), r.net.option_head.as_ref()].into_iter().flatten() {
            v.extend(net.params().map(|p| p.to_bits()));
        }
        v
    };
    bits(a) == bits(b)
}

fn deep() -> Verdict {
    let mut pass = true;
    let mut detail = String::new();
    for algo in [DeepAlgorithm::QrDqn, DeepAlgorithm::Quota] {
        let runs: Vec<DeepRunResult> = (0..SEEDS).map(|s| deep_run(algo, s)).collect();
        let optimal = runs.iter().filter(|r| r.final_policy_optimal && r.aborted.is_none()).count();
        let identical = same_bits(&runs[0], &deep_run(algo, 0));
        pass &= optimal >= 4 && identical;
        let _ = write!(detail, "{} optimal {optimal}/{SEEDS} rerun identical {identical}; ", algo.id());
    }
    Verdict { pass, detail }
}

fn analytic_dpg() -> (bool, f64) {
    let mut rng = seeded(4);
    let mut actor = actor_net(2, &[8], 1, &mut rng).unwrap();
    let mut opt = OptimizerState::adam(1e-2, &actor).unwrap();
    // d/da of -(a - 0.3)^2
    let score = |_: &[f64], a: &[f64]| vec![-2.0 * (a[0] - DPG_TARGET)];
    let states: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 / 8.0 - 1.0, 0.5]).collect();
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    for _ in 0..2000 {
        let g = actor_gradient(&actor, &score, &refs).unwrap();
        opt.step(&mut actor, &g).unwrap();
    }
    let worst = states
        .iter()
        .map(|s| (actor.predict(s).unwrap()[0] - DPG_TARGET).abs())
        .fold(0.0, f64::max);
    (worst <= DPG_TOLERANCE, worst)
}

fn continuous() -> Verdict {
    let b = reach_baselines(&Reach1d::default(), harness::ORACLE_EPISODES, 0);
    let target = b.random + GAP_FRACTION * (b.oracle - b.random);
    let mut pass = true;
    let mut detail = format!("B_rand={:.3} B_opt={:.3}; ", b.random, b.oracle);
    for algo in ContAlgorithm::ALL {
        let mut closed = 0;
        let mut best = Vec::new();
        for seed in 0..SEEDS {
            let mut cfg = ContConfig::reach_defaults(algo, CONT_BUDGET, seed);
            cfg.stop_at_return = Some(target);
            let run = contagents::train(&cfg).unwrap();
            let g = run.eval_log.iter().map(|e| b.gap_closed(e.mean_eval_return)).fold(f64::NEG_INFINITY, f64::max);
            if g >= GAP_FRACTION {
                closed += 1;
            }
            best.push(format!("{g:.2}@{}", run.env_steps));
        }
        pass &= closed >= 3;
        let _ = write!(detail, "{} {closed}/{SEEDS} [{}]; ", algo.id(), best.join(" "));
    }
    let (dpg, worst) = analytic_dpg();
    pass &= dpg;
    let _ = write!(detail, "analytic DPG max |mu-0.3|={worst:.4}");
    Verdict { pass, detail }
}

/// Window actors of a short QUOTA run against a 201-point action grid on the
/// learned critic.
fn window_grid() -> Verdict {
    let cfg = ContConfig::reach_defaults(ContAlgorithm::Quota, 10_000, 0);
    let run = contagents::train(&cfg).unwrap();
    let states: Vec<Vec<f64>> = (0..11).flat_map(|i| (0..4).map(move |t| vec![-1.0 + 0.2 * i as f64, t as f64 / 4.0])).collect();
    let lo = window_grid_gap(&run.agent, 1, &states, 201).unwrap();
    let hi = window_grid_gap(&run.agent, cfg.m_options, &states, 201).unwrap();
    Verdict {
        pass: lo <= GRID_TOLERANCE && hi <= GRID_TOLERANCE,
        detail: format!("mu^1 gap {lo:.4}, mu^M gap {hi:.4}"),
    }
}

fn quota_m1_is_mean_greedy_qr() -> bool {
    let mut rng = seeded(21);
    let mut table = QuantileTable::zeros(3, 2, 4);
    for s in 1..=3 {
        for a in 0..2 {
            for q in table.quantiles_mut(s, a) {
                // coarse values so that ties occur
                *q = rng.random_range(-2i32..=2) as f64;
            }
        }
    }
    let learning = LearningConfig {
        epsilon: 0.2,
        ..Default::default()
    };
    let options = OptionConfig {
        m_options: 1,
        window: 4,
        beta: 0.3,
        epsilon_omega: 0.5,
    };
    let mut agent = QuotaTabular::new(3, 2, 4, QuotaTabularConfig { learning, options }).unwrap();
    agent.quantiles = table.clone();
    let mut a = seeded(99);
    let mut b = seeded(99);
    (0..5000).all(|step| {
        let s = 1 + step % 3;
        let (x, _) = agent.act(s, &mut a).unwrap();
        x == select_action(TableRef::Quantile(&table), s, ActionMode::Mean, 0.2, &mut b).unwrap()
    }) && a.random::<u64>() == b.random::<u64>()
}

fn beta_one_is_option_q_learning() -> bool {
    let cfg = LearningConfig {
        alpha: 0.3,
        gamma: 0.95,
        ..Default::default()
    };
    let mut rng = seeded(8);
    let mut o = OptionValueTable::zeros(4, 3);
    for s in 0..=4 {
        for w in 0..3 {
            o.set(s, w, rng.random_range(-2.0..2.0));
        }
    }
    let mut q = o.as_qtable().clone();
    (0..5000).all(|_| {
        let s = rng.random_range(1..=4);
        let next_state = rng.random_range(0..=4);
        let w = rng.random_range(0..3);
        let tr = Transition {
            state: s,
            action: w,
            reward: rng.random_range(-1.0..1.0),
            next_state,
            terminal: next_state == TERMINAL,
        };
        intra_option_update(&mut o, &tr, w, 1.0, &cfg).unwrap();
        q_learning_update(&mut q, &tr, &cfg).unwrap();
        o.as_qtable() == &q
    })
}

fn single_quantile_is_scaled_huber() -> bool {
    let mut cfg = ContConfig::reach_defaults(ContAlgorithm::QrDdpg, 1000, 3);
    cfg.n_quantiles = 1;
    let agent = ContAgent::new(&cfg, &mut seeded(3)).unwrap();
    let mut rng = seeded(8);
    let obs = |rng: &mut quota_core::SeededRng| vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)];
    let batch: Vec<ContTransition> = (0..64)
        .map(|_| ContTransition {
            obs: obs(&mut rng),
            action: vec![rng.random_range(-1.0..1.0)],
            reward: rng.random_range(-3.0..3.0),
            next_obs: obs(&mut rng),
            terminal: rng.random_bool(0.2),
            option: None,
        })
        .collect();
    let refs: Vec<&ContTransition> = batch.iter().collect();
    let h = HuberConfig::default();
    let grad = |loss| critic_gradient(&agent.critic, &agent.actor_target, &agent.critic_target, &refs, cfg.gamma, loss).unwrap().0;
    let qr = grad(CriticLoss::Quantile(h));
    let hu = grad(CriticLoss::Huber(h));
    let same = qr.iter().zip(hu.iter()).all(|(x, y)| (x - 0.5 * y).abs() <= 1e-15 * (1.0 + y.abs()));
    same
}

fn degeneracies() -> Verdict {
    let checks = [
        ("M=1 quota = mean-greedy qr", quota_m1_is_mean_greedy_qr()),
        ("beta=1 intra-option = option q-learning", beta_one_is_option_q_learning()),
        ("N=1 qr-ddpg = 0.5 x huber ddpg", single_quantile_is_scaled_huber()),
    ];
    Verdict {
        pass: checks.iter().all(|c| c.1),
        detail: checks.iter().map(|(n, ok)| format!("{n}: {ok}")).collect::<Vec<_>>().join("; "),
    }
}

fn reproducible() -> Verdict {
    let text = "[env]\nchains = chain1, chain2\nlengths = 6\n[experiment]\ntrials = 10\n";
    let cfg = ExperimentConfig::from_ini(&Ini::parse(text).unwrap(), ExperimentKind::ChainSweep).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = std::fs::read(run_chain_sweep(&cfg, a.path(), threads()).unwrap().csv_path).unwrap();
    let y = std::fs::read(run_chain_sweep(&cfg, b.path(), 1).unwrap().csv_path).unwrap();
    Verdict {
        pass: x == y,
        detail: format!("{} bytes, identical {}", x.len(), x == y),
    }
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |id: &str, name: &str, v: Verdict| {
        println!("criterion {id:<3} {:<4} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(id.to_string());
        }
    };

    let (chain1, t1) = run_sweep(ChainVariant::Chain1);
    let (chain2, t2) = run_sweep(ChainVariant::Chain2);
    report("1", "chain 1 ordering", ordering(&chain1, Algorithm::Oqr, Algorithm::Pqr, t1));
    report("2", "chain 2 ordering", ordering(&chain2, Algorithm::Pqr, Algorithm::Oqr, t2));
    report(
        "3",
        "quota robustness",
        quota_robust(&[(ChainVariant::Chain1, &chain1), (ChainVariant::Chain2, &chain2)]),
    );
    report("4", "gradient suite", gradients());
    report("5", "bandit quantile recovery", bandit());
    report("6", "deep agents on chain 1", deep());
    report("7", "continuous agents on reach1d", continuous());
    report("7b", "window actors vs grid search", window_grid());
    report("8", "degeneracy identities", degeneracies());
    report("9", "chain-sweep reproducibility", reproducible());

    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
    println!("all criteria passed");
}
