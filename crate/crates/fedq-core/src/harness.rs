//! Full-run orchestration: the round loop with the step-budget stopping rule,
//! exact regret/switching/round/communication metrics, multi-seed
//! replication with percentile aggregation, and the deterministic
//! round-count and switching-cost bound checks.

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::HoeffdingState;
use crate::eslc::{
    agent_explore_lockstep, single_agent_round, ProtocolError, ServerState, TieBreak,
};
use crate::mdp::{
    draw_initial_state, generate_random_mdp, sample_episode, DeterministicPolicy, InitialStateMode,
    TabularMdp,
};
use crate::oracle::{evaluate_policy, OracleTables};
use crate::rounds::{lockstep_explore, BaselineLedger, CommLedger, ExploreTables};
use crate::schedule::{iota_theory, BonusConstants};
use crate::seeding;

/// Which learner a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// The federated learner (any number of agents).
    FedqEslc,
    /// The single-agent specialization: no broadcast or report objects,
    /// direct server-state access. Requires `m == 1`.
    SingleEslc,
    /// The Hoeffding comparison learner: per-episode updates when `m == 1`,
    /// the round-based federated analogue otherwise.
    HoeffdingBaseline,
}

impl Algorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::FedqEslc => "fedq_eslc",
            Algorithm::SingleEslc => "single_eslc",
            Algorithm::HoeffdingBaseline => "hoeffding_baseline",
        }
    }

    /// Whether the run advances in event-triggered rounds (as opposed to one
    /// update per episode).
    pub fn round_based(&self, m: usize) -> bool {
        match self {
            Algorithm::FedqEslc | Algorithm::SingleEslc => true,
            Algorithm::HoeffdingBaseline => m > 1,
        }
    }
}

/// Choice of the log factor `iota`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IotaMode {
    /// `iota = ln(28 S A T1 / p)` with `T1 = 2 T0 + M H S A`.
    Theory { p: f64 },
    /// A fixed value (the experiments use 1).
    Fixed { value: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("H, S, A and M must all be at least 1")]
    BadDimensions,
    #[error("T0 must be at least H")]
    BadBudget,
    #[error("{0}")]
    BadConstants(String),
    #[error("beta must not exceed H")]
    BetaAboveHorizon,
    #[error("theory mode requires p in (0,1); fixed mode requires iota > 0")]
    BadIota,
    #[error("the single-agent specialization requires m = 1")]
    SingleNeedsOneAgent,
    #[error("fixed initial state {state} is outside 0..{s}")]
    FixedStateOutOfRange { state: usize, s: usize },
    #[error("environment has dimensions (H={mdp_h}, S={mdp_s}, A={mdp_a}), config wants (H={h}, S={s}, A={a})")]
    MdpMismatch {
        mdp_h: usize,
        mdp_s: usize,
        mdp_a: usize,
        h: usize,
        s: usize,
        a: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Everything a run needs: dimensions, the step budget `t0` (the loop runs
/// while the server's total recorded visits stay below it), the master seed,
/// bonus constants, the `iota` mode, the learner, and the initial-state rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub m: usize,
    pub t0: u64,
    pub seed: u64,
    pub constants: BonusConstants,
    pub iota_mode: IotaMode,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub initial_state_mode: InitialStateMode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.h == 0 || self.s == 0 || self.a == 0 || self.m == 0 {
            return Err(ConfigError::BadDimensions);
        }
        if self.t0 < self.h as u64 {
            return Err(ConfigError::BadBudget);
        }
        self.constants
            .validate()
            .map_err(ConfigError::BadConstants)?;
        if self.constants.beta > self.h as f64 {
            return Err(ConfigError::BetaAboveHorizon);
        }
        match self.iota_mode {
            IotaMode::Theory { p } if p <= 0.0 || p >= 1.0 => return Err(ConfigError::BadIota),
            IotaMode::Fixed { value } if value <= 0.0 => return Err(ConfigError::BadIota),
            _ => {}
        }
        if self.algorithm == Algorithm::SingleEslc && self.m != 1 {
            return Err(ConfigError::SingleNeedsOneAgent);
        }
        if let InitialStateMode::Fixed { state } = self.initial_state_mode {
            if state >= self.s {
                return Err(ConfigError::FixedStateOutOfRange { state, s: self.s });
            }
        }
        Ok(())
    }

    /// The known step-count upper bound `T1 = 2 T0 + M H S A`.
    pub fn t1(&self) -> u64 {
        2 * self.t0 + (self.m * self.h * self.s * self.a) as u64
    }

    /// Resolve the log factor for this run.
    pub fn iota(&self) -> f64 {
        match self.iota_mode {
            IotaMode::Theory { p } => iota_theory(self.s, self.a, self.t1(), p),
            IotaMode::Fixed { value } => value,
        }
    }

    fn check_mdp(&self, mdp: &TabularMdp) -> Result<(), ConfigError> {
        if mdp.horizon() != self.h || mdp.num_states() != self.s || mdp.num_actions() != self.a {
            return Err(ConfigError::MdpMismatch {
                mdp_h: mdp.horizon(),
                mdp_s: mdp.num_states(),
                mdp_a: mdp.num_actions(),
                h: self.h,
                s: self.s,
                a: self.a,
            });
        }
        Ok(())
    }
}

/// One per-round (or per-episode, for the episodic baseline) metrics row.
/// Cumulative columns are exact prefix sums of their increments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub episodes_per_agent: usize,
    /// Total episodes across all agents so far.
    pub cumulative_episodes: u64,
    pub regret_increment: f64,
    pub cumulative_regret: f64,
    /// Whether the policy deployed this round differs from the previous
    /// round's (false for round 1); matches the episode-boundary switching
    /// definition because the policy is constant within a round.
    pub policy_changed: bool,
    pub cumulative_switches: u64,
    pub cumulative_scalars: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub total_episodes: u64,
    /// `T`: average steps per agent, `H * total_episodes / M`.
    pub avg_steps_per_agent: f64,
    pub regret: f64,
    pub switching_cost: u64,
    pub communication_scalars: u64,
    pub anomalies: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config: RunConfig,
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

impl RunMetrics {
    /// Per-agent episodes at record `idx` (lockstep makes this exact).
    pub fn per_agent_episodes(&self, idx: usize) -> u64 {
        self.records[idx].cumulative_episodes / self.config.m as u64
    }

    /// `Regret(T) / ln(T/H + 1)` at record `idx`, the figure y-axis.
    pub fn regret_over_log(&self, idx: usize) -> f64 {
        let episodes = self.per_agent_episodes(idx) as f64;
        self.records[idx].cumulative_regret / (episodes + 1.0).ln()
    }
}

/// Optional instrumentation for a run.
pub struct RunOptions<'a> {
    /// Called with the server state after every completed round
    /// (learner-family runs only).
    pub observer: Option<&'a mut dyn FnMut(&ServerState)>,
    /// Testing hook: start from this Q-table instead of the all-H
    /// initialization.
    pub initial_q: Option<&'a Array3<f64>>,
    pub tie_break: TieBreak,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            observer: None,
            initial_q: None,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

/// Self-contained run: the environment is generated from the config seed.
pub fn run(config: &RunConfig) -> Result<RunMetrics, RunError> {
    config.validate()?;
    let mdp = generate_random_mdp(config.h, config.s, config.a, config.seed)
        .expect("validated dimensions");
    let oracle = OracleTables::compute(&mdp);
    run_with(config, &mdp, &oracle, RunOptions::default())
}

/// Run on a provided environment; the config seed drives exploration only.
pub fn run_on(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
) -> Result<RunMetrics, RunError> {
    run_with(config, mdp, oracle, RunOptions::default())
}

/// Run with instrumentation.
pub fn run_with(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
    opts: RunOptions<'_>,
) -> Result<RunMetrics, RunError> {
    config.validate()?;
    config.check_mdp(mdp)?;
    match config.algorithm {
        Algorithm::FedqEslc => run_fed(config, mdp, oracle, opts),
        Algorithm::SingleEslc => run_single(config, mdp, oracle, opts),
        Algorithm::HoeffdingBaseline => {
            if config.m == 1 {
                Ok(run_baseline_episode(config, mdp, oracle))
            } else {
                Ok(run_baseline_fed(config, mdp, oracle))
            }
        }
    }
}

struct MetricsBuilder {
    records: Vec<RoundRecord>,
    cumulative_episodes: u64,
    cumulative_regret: f64,
    switches: u64,
    anomalies: Vec<String>,
    prev_policy: Option<DeterministicPolicy>,
}

impl MetricsBuilder {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            cumulative_episodes: 0,
            cumulative_regret: 0.0,
            switches: 0,
            anomalies: Vec::new(),
            prev_policy: None,
        }
    }

    /// Record the policy deployed for the starting round; returns whether it
    /// differs from the previous round's.
    fn deploy(&mut self, policy: &DeterministicPolicy) -> bool {
        let changed = self.prev_policy.as_ref().is_some_and(|p| p != policy);
        if changed {
            self.switches += 1;
        }
        self.prev_policy = Some(policy.clone());
        changed
    }

    fn push(
        &mut self,
        round: usize,
        episodes_per_agent: usize,
        episodes_total: u64,
        regret_increment: f64,
        policy_changed: bool,
        scalars: u64,
    ) {
        self.cumulative_episodes += episodes_total;
        self.cumulative_regret += regret_increment;
        self.records.push(RoundRecord {
            round,
            episodes_per_agent,
            cumulative_episodes: self.cumulative_episodes,
            regret_increment,
            cumulative_regret: self.cumulative_regret,
            policy_changed,
            cumulative_switches: self.switches,
            cumulative_scalars: scalars,
        });
    }

    fn finish(self, config: &RunConfig) -> RunMetrics {
        let summary = RunSummary {
            rounds: self.records.len(),
            total_episodes: self.cumulative_episodes,
            avg_steps_per_agent: config.h as f64 * self.cumulative_episodes as f64
                / config.m as f64,
            regret: self.cumulative_regret,
            switching_cost: self.switches,
            communication_scalars: self.records.last().map_or(0, |r| r.cumulative_scalars),
            anomalies: self.anomalies,
        };
        RunMetrics {
            config: config.clone(),
            records: self.records,
            summary,
        }
    }
}

/// Regret increment of a batch of episodes: `sum V*_1(s1) - V^pi_1(s1)`.
fn regret_increment(
    oracle: &OracleTables,
    v_pi: &ndarray::Array2<f64>,
    initial_states: &[usize],
) -> f64 {
    initial_states
        .iter()
        .map(|&s1| oracle.v_star[[0, s1]] - v_pi[[0, s1]])
        .sum()
}

fn run_fed(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
    mut opts: RunOptions<'_>,
) -> Result<RunMetrics, RunError> {
    let consts = config.constants;
    let iota = config.iota();
    let mut server = ServerState::new(config.h, config.s, config.a, config.m);
    server.tie_break = opts.tie_break;
    if let Some(q0) = opts.initial_q {
        server.install_q_tables(q0);
    }
    let mut ledger = CommLedger::new(config.m, config.h, config.s);
    let mut metrics = MetricsBuilder::new();

    while metrics.cumulative_episodes * (config.h as u64) < config.t0 {
        let round = server.round;
        let broadcast = server.make_broadcast();
        let changed = metrics.deploy(&broadcast.policy);
        let mut rngs: Vec<ChaCha8Rng> = (0..config.m)
            .map(|agent| seeding::new_rng(seeding::agent_round_seed(config.seed, agent, round)))
            .collect();
        let out = agent_explore_lockstep(
            mdp,
            &broadcast,
            config.m,
            &mut rngs,
            config.initial_state_mode,
            false,
        );
        let v_pi = evaluate_policy(mdp, &broadcast.policy);
        let increment = regret_increment(oracle, &v_pi, &out.initial_states);
        let outcome = server.aggregate_round(&out.reports, &consts, iota)?;
        ledger.record_round();
        metrics.anomalies.extend(outcome.anomalies);
        metrics.push(
            round,
            out.episodes_per_agent,
            (out.episodes_per_agent * config.m) as u64,
            increment,
            changed,
            ledger.total(),
        );
        if let Some(observer) = opts.observer.as_mut() {
            observer(&server);
        }
    }
    Ok(metrics.finish(config))
}

fn run_single(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
    mut opts: RunOptions<'_>,
) -> Result<RunMetrics, RunError> {
    let consts = config.constants;
    let iota = config.iota();
    let mut server = ServerState::new(config.h, config.s, config.a, 1);
    server.tie_break = opts.tie_break;
    if let Some(q0) = opts.initial_q {
        server.install_q_tables(q0);
    }
    let mut metrics = MetricsBuilder::new();

    while metrics.cumulative_episodes * (config.h as u64) < config.t0 {
        let round = server.round;
        let policy = server.policy.clone();
        let changed = metrics.deploy(&policy);
        let mut rng = seeding::new_rng(seeding::agent_round_seed(config.seed, 0, round));
        let v_pi = evaluate_policy(mdp, &policy);
        let result = single_agent_round(
            &mut server,
            mdp,
            &mut rng,
            &consts,
            iota,
            config.initial_state_mode,
        );
        let increment = regret_increment(oracle, &v_pi, &result.initial_states);
        metrics.anomalies.extend(result.outcome.anomalies);
        metrics.push(
            round,
            result.episodes,
            result.episodes as u64,
            increment,
            changed,
            0,
        );
        if let Some(observer) = opts.observer.as_mut() {
            observer(&server);
        }
    }
    Ok(metrics.finish(config))
}

fn run_baseline_episode(config: &RunConfig, mdp: &TabularMdp, oracle: &OracleTables) -> RunMetrics {
    let consts = config.constants;
    let iota = config.iota();
    let mut state = HoeffdingState::new(config.h, config.s, config.a, 1);
    let mut metrics = MetricsBuilder::new();

    while metrics.cumulative_episodes * (config.h as u64) < config.t0 {
        let episode = state.round;
        let policy = state.policy.clone();
        let changed = metrics.deploy(&policy);
        let mut rng = seeding::new_rng(seeding::agent_round_seed(config.seed, 0, episode));
        let s1 = draw_initial_state(config.initial_state_mode, config.s, &mut rng);
        let trajectory = sample_episode(mdp, &policy, s1, &mut rng);
        let v_pi = evaluate_policy(mdp, &policy);
        let increment = oracle.v_star[[0, s1]] - v_pi[[0, s1]];
        state.apply_episode(&trajectory.steps, &consts, iota);
        metrics.push(episode, 1, 1, increment, changed, 0);
    }
    metrics.finish(config)
}

fn run_baseline_fed(config: &RunConfig, mdp: &TabularMdp, oracle: &OracleTables) -> RunMetrics {
    let consts = config.constants;
    let iota = config.iota();
    let mut state = HoeffdingState::new(config.h, config.s, config.a, config.m);
    let zero = ndarray::Array2::<f64>::zeros((config.h, config.s));
    let mut ledger = BaselineLedger::new(config.m, config.h, config.s);
    let mut metrics = MetricsBuilder::new();

    while metrics.cumulative_episodes * (config.h as u64) < config.t0 {
        let round = state.round;
        let policy = state.policy.clone();
        let changed = metrics.deploy(&policy);
        let n_on_policy = state.on_policy_counts();
        let mut rngs: Vec<ChaCha8Rng> = (0..config.m)
            .map(|agent| seeding::new_rng(seeding::agent_round_seed(config.seed, agent, round)))
            .collect();
        let out = {
            let tables = ExploreTables {
                policy: &policy,
                n_on_policy: &n_on_policy,
                v: &state.v,
                v_l: &zero,
                v_r: &zero,
            };
            lockstep_explore(
                mdp,
                &tables,
                config.m,
                &mut rngs,
                config.initial_state_mode,
                false,
            )
        };
        let v_pi = evaluate_policy(mdp, &policy);
        let increment = regret_increment(oracle, &v_pi, &out.initial_states);
        state.aggregate_round(&out.stats, &consts, iota);
        ledger.record_round();
        metrics.push(
            round,
            out.episodes_per_agent,
            (out.episodes_per_agent * config.m) as u64,
            increment,
            changed,
            ledger.total(),
        );
    }
    metrics.finish(config)
}

/// Deterministic bounds from the round structure: with
/// `C = H^2 (H+1) S A` and `T` the realized average steps per agent, the
/// number of rounds of a round-based run is at most
/// `max(2MC + 4MC ln(T/C), 3MC)`, and for single-agent round-based runs the
/// switching cost is at most the same expression with `M = 1`. Violations
/// are hard failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub algorithm: Algorithm,
    pub m: usize,
    pub seed: u64,
    pub c_tilde: f64,
    pub t: f64,
    pub rounds_observed: u64,
    pub rounds_bound: Option<f64>,
    pub rounds_ok: bool,
    pub switching_observed: u64,
    pub switching_bound: Option<f64>,
    pub switching_ok: bool,
    pub pass: bool,
}

/// `max(2MC + 4MC ln(T/C), 3MC)`.
pub fn round_count_bound(m: usize, c_tilde: f64, t: f64) -> f64 {
    let mc = m as f64 * c_tilde;
    (2.0 * mc + 4.0 * mc * (t / c_tilde).ln()).max(3.0 * mc)
}

pub fn theorem_bound_check(metrics: &RunMetrics) -> BoundCheckReport {
    let config = &metrics.config;
    let c_tilde = (config.h * config.h * (config.h + 1) * config.s * config.a) as f64;
    let t = metrics.summary.avg_steps_per_agent;
    let round_based = config.algorithm.round_based(config.m);

    let rounds_bound = round_based.then(|| round_count_bound(config.m, c_tilde, t));
    let rounds_observed = metrics.summary.rounds as u64;
    let rounds_ok = rounds_bound.is_none_or(|b| (rounds_observed as f64) <= b);

    let switching_bound = (round_based && config.m == 1).then(|| round_count_bound(1, c_tilde, t));
    let switching_observed = metrics.summary.switching_cost;
    let switching_ok = switching_bound.is_none_or(|b| (switching_observed as f64) <= b);

    BoundCheckReport {
        algorithm: config.algorithm,
        m: config.m,
        seed: config.seed,
        c_tilde,
        t,
        rounds_observed,
        rounds_bound,
        rounds_ok,
        switching_observed,
        switching_bound,
        switching_ok,
        pass: rounds_ok && switching_ok,
    }
}

/// Summary of one replication inside an ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSummary {
    pub seed: u64,
    pub final_regret: f64,
    pub rounds: usize,
    pub switching_cost: u64,
    pub communication_scalars: u64,
    pub total_episodes: u64,
    pub avg_steps_per_agent: f64,
}

/// Percentile bands of an ensemble, step-evaluated on a shared grid of
/// per-agent episode counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub config: RunConfig,
    pub n_replications: usize,
    /// Per-agent episode counts (geometric grid plus the maximum).
    pub grid: Vec<u64>,
    pub regret_p10: Vec<f64>,
    pub regret_p50: Vec<f64>,
    pub regret_p90: Vec<f64>,
    pub regret_over_log_p10: Vec<f64>,
    pub regret_over_log_p50: Vec<f64>,
    pub regret_over_log_p90: Vec<f64>,
    pub paths: Vec<PathSummary>,
}

/// Linear-interpolation percentile of a sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (sorted.len() as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Geometric grid of episode counts in `[1, max]` with at most `points`
/// entries, always including `max`.
fn episode_grid(max: u64, points: usize) -> Vec<u64> {
    if max <= 1 {
        return vec![1];
    }
    let mut grid = Vec::with_capacity(points);
    let log_max = (max as f64).ln();
    for i in 0..points {
        let x = (log_max * i as f64 / (points - 1) as f64).exp().round() as u64;
        let x = x.clamp(1, max);
        if grid.last() != Some(&x) {
            grid.push(x);
        }
    }
    if grid.last() != Some(&max) {
        grid.push(max);
    }
    grid
}

/// Evaluate a per-round series as a step function at `grid`: the value of the
/// last record with per-agent episodes at most `x` (0 before the first).
fn step_eval(metrics: &RunMetrics, grid: &[u64], value: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut idx = 0usize;
    let mut current = 0.0;
    for &x in grid {
        while idx < metrics.records.len() && metrics.per_agent_episodes(idx) <= x {
            current = value(idx);
            idx += 1;
        }
        out.push(current);
    }
    out
}

/// Run `n` replications with derived seeds on a fixed environment, in
/// parallel when the `parallel` feature is enabled.
pub fn run_replications(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
    n_replications: usize,
) -> Result<Vec<RunMetrics>, RunError> {
    let runs = crate::map_indexed(n_replications, |i| {
        let mut cfg = config.clone();
        cfg.seed = seeding::replication_seed(config.seed, i);
        run_on(&cfg, mdp, oracle)
    });
    let mut metrics = Vec::with_capacity(runs.len());
    for run in runs {
        metrics.push(run?);
    }
    Ok(metrics)
}

/// Run `n` replications with derived seeds on a fixed environment and
/// aggregate percentile bands; replications run in parallel when the
/// `parallel` feature is enabled.
pub fn replicate_on(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
    n_replications: usize,
) -> Result<EnsembleSummary, RunError> {
    let metrics = run_replications(config, mdp, oracle, n_replications)?;
    Ok(summarize_runs(config, &metrics))
}

/// Sequential twin of [`replicate_on`], for benchmarking the two modes.
pub fn replicate_on_sequential(
    config: &RunConfig,
    mdp: &TabularMdp,
    oracle: &OracleTables,
    n_replications: usize,
) -> Result<EnsembleSummary, RunError> {
    let runs = crate::map_indexed_sequential(n_replications, |i| {
        let mut cfg = config.clone();
        cfg.seed = seeding::replication_seed(config.seed, i);
        run_on(&cfg, mdp, oracle)
    });
    summarize(config, runs)
}

/// Self-contained replication: one environment from the config seed, shared
/// by every replication.
pub fn replicate(config: &RunConfig, n_replications: usize) -> Result<EnsembleSummary, RunError> {
    config.validate()?;
    let mdp = generate_random_mdp(config.h, config.s, config.a, config.seed)
        .expect("validated dimensions");
    let oracle = OracleTables::compute(&mdp);
    replicate_on(config, &mdp, &oracle, n_replications)
}

fn summarize(
    config: &RunConfig,
    runs: Vec<Result<RunMetrics, RunError>>,
) -> Result<EnsembleSummary, RunError> {
    let mut metrics = Vec::with_capacity(runs.len());
    for run in runs {
        metrics.push(run?);
    }
    Ok(summarize_runs(config, &metrics))
}

/// Percentile aggregation of already-computed runs.
pub fn summarize_runs(config: &RunConfig, metrics: &[RunMetrics]) -> EnsembleSummary {
    assert!(!metrics.is_empty());
    let max_episodes = metrics
        .iter()
        .map(|m| m.per_agent_episodes(m.records.len() - 1))
        .max()
        .unwrap_or(1);
    let grid = episode_grid(max_episodes, 512);

    let regret_paths: Vec<Vec<f64>> = metrics
        .iter()
        .map(|m| step_eval(m, &grid, |i| m.records[i].cumulative_regret))
        .collect();
    let rol_paths: Vec<Vec<f64>> = metrics
        .iter()
        .map(|m| step_eval(m, &grid, |i| m.regret_over_log(i)))
        .collect();

    let band = |paths: &[Vec<f64>], p: f64| -> Vec<f64> {
        (0..grid.len())
            .map(|g| {
                let mut column: Vec<f64> = paths.iter().map(|path| path[g]).collect();
                column.sort_by(|x, y| x.partial_cmp(y).expect("finite metrics"));
                percentile(&column, p)
            })
            .collect()
    };

    let paths = metrics
        .iter()
        .map(|m| PathSummary {
            seed: m.config.seed,
            final_regret: m.summary.regret,
            rounds: m.summary.rounds,
            switching_cost: m.summary.switching_cost,
            communication_scalars: m.summary.communication_scalars,
            total_episodes: m.summary.total_episodes,
            avg_steps_per_agent: m.summary.avg_steps_per_agent,
        })
        .collect();

    EnsembleSummary {
        config: config.clone(),
        n_replications: metrics.len(),
        regret_p10: band(&regret_paths, 10.0),
        regret_p50: band(&regret_paths, 50.0),
        regret_p90: band(&regret_paths, 90.0),
        regret_over_log_p10: band(&rol_paths, 10.0),
        regret_over_log_p50: band(&rol_paths, 50.0),
        regret_over_log_p90: band(&rol_paths, 90.0),
        grid,
        paths,
    }
}
