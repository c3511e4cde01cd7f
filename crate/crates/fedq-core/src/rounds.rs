//! Event-triggered round machinery shared by the learners: the per-agent
//! visit cap, the lockstep exploration loop that realizes the synchronous
//! abortion signal, and the communication ledger.
//!
//! Lockstep scheduling means every agent finishes episode `j` before any
//! agent starts episode `j + 1`; the trigger is evaluated after each full
//! sweep. Each `(s, a, h)` triple is visited at most once per episode (the
//! step index is part of the triple), so a local count reaches its cap
//! exactly, never beyond it, and all agents run the same number of episodes
//! per round.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{
    draw_initial_state, sample_next_state, DeterministicPolicy, InitialStateMode, TabularMdp,
    Trajectory, TrajectoryStep,
};

/// Per-agent visit cap `max{1, floor(N / (M * H * (H + 1)))}`.
pub fn visit_cap(n_visits: u64, m: usize, h: usize) -> u64 {
    let denom = (m * h * (h + 1)) as u64;
    (n_visits / denom).max(1)
}

/// The tables an agent reads while exploring: the policy, the on-policy visit
/// counts it derives caps from, and the three value functions used to build
/// the local sums. The federated path borrows these from a broadcast
/// snapshot; the single-agent path borrows them straight from server state.
pub struct ExploreTables<'a> {
    pub policy: &'a DeterministicPolicy,
    pub n_on_policy: &'a Array2<u64>,
    pub v: &'a Array2<f64>,
    pub v_l: &'a Array2<f64>,
    pub v_r: &'a Array2<f64>,
}

/// One agent's accumulated statistics for a round, all indexed by `(h, s)`
/// with the action implied by the round policy. The six value sums follow the
/// transmitted quantities: next-state sums of `V`, `V_L`, `V_R`, `V_R^2`,
/// `V_A = V - V_R`, and `V_A^2`, with every function zero past the horizon.
#[derive(Debug, Clone)]
pub struct LocalStats {
    pub counts: Array2<u64>,
    pub rewards: Array2<f64>,
    pub v_sum: Array2<f64>,
    pub v_l_sum: Array2<f64>,
    pub mu_r_sum: Array2<f64>,
    pub sigma_r_sum: Array2<f64>,
    pub mu_a_sum: Array2<f64>,
    pub sigma_a_sum: Array2<f64>,
    pub episodes: usize,
}

impl LocalStats {
    pub fn new(h: usize, s: usize) -> Self {
        Self {
            counts: Array2::zeros((h, s)),
            rewards: Array2::zeros((h, s)),
            v_sum: Array2::zeros((h, s)),
            v_l_sum: Array2::zeros((h, s)),
            mu_r_sum: Array2::zeros((h, s)),
            sigma_r_sum: Array2::zeros((h, s)),
            mu_a_sum: Array2::zeros((h, s)),
            sigma_a_sum: Array2::zeros((h, s)),
            episodes: 0,
        }
    }

    fn observe(&mut self, tables: &ExploreTables, horizon: usize, step: &TrajectoryStep, h: usize) {
        let (s, s_next) = (step.state, step.next_state);
        self.counts[[h, s]] += 1;
        self.rewards[[h, s]] = step.reward;
        let (v, v_l, v_r) = if h + 1 < horizon {
            (
                tables.v[[h + 1, s_next]],
                tables.v_l[[h + 1, s_next]],
                tables.v_r[[h + 1, s_next]],
            )
        } else {
            (0.0, 0.0, 0.0)
        };
        let v_a = v - v_r;
        self.v_sum[[h, s]] += v;
        self.v_l_sum[[h, s]] += v_l;
        self.mu_r_sum[[h, s]] += v_r;
        self.sigma_r_sum[[h, s]] += v_r * v_r;
        self.mu_a_sum[[h, s]] += v_a;
        self.sigma_a_sum[[h, s]] += v_a * v_a;
    }
}

/// Everything a lockstep round produced.
pub struct RoundExploration {
    pub stats: Vec<LocalStats>,
    /// Initial states of every episode, sweep-major then agent order.
    pub initial_states: Vec<usize>,
    /// Episodes run by each agent (equal across agents under lockstep).
    pub episodes_per_agent: usize,
    /// Per-agent trajectories; empty unless recording was requested.
    pub trajectories: Vec<Vec<Trajectory>>,
}

/// Run one lockstep round: every agent rolls one episode per sweep, and the
/// round ends after the first sweep in which some agent's local count at some
/// on-policy `(s, a, h)` reaches its cap.
pub fn lockstep_explore(
    mdp: &TabularMdp,
    tables: &ExploreTables,
    m_agents: usize,
    rngs: &mut [ChaCha8Rng],
    init_mode: InitialStateMode,
    record_trajectories: bool,
) -> RoundExploration {
    assert_eq!(rngs.len(), m_agents);
    let (horizon, states) = (mdp.horizon(), mdp.num_states());
    let caps = Array2::from_shape_fn((horizon, states), |(h, s)| {
        visit_cap(tables.n_on_policy[[h, s]], m_agents, horizon)
    });

    let mut stats: Vec<LocalStats> = (0..m_agents)
        .map(|_| LocalStats::new(horizon, states))
        .collect();
    let mut trajectories: Vec<Vec<Trajectory>> = vec![Vec::new(); m_agents];
    let mut initial_states = Vec::new();
    let mut episodes_per_agent = 0;

    loop {
        let mut triggered = false;
        for (agent, rng) in rngs.iter_mut().enumerate() {
            let s1 = draw_initial_state(init_mode, states, rng);
            initial_states.push(s1);
            let mut steps = Vec::with_capacity(horizon);
            let mut state = s1;
            for h in 0..horizon {
                let action = tables.policy.action(h, state);
                let reward = mdp.reward(h, state, action);
                let next_state = sample_next_state(mdp, h, state, action, rng);
                let step = TrajectoryStep {
                    state,
                    action,
                    reward,
                    next_state,
                };
                stats[agent].observe(tables, horizon, &step, h);
                if stats[agent].counts[[h, state]] == caps[[h, state]] {
                    triggered = true;
                }
                steps.push(step);
                state = next_state;
            }
            stats[agent].episodes += 1;
            if record_trajectories {
                trajectories[agent].push(Trajectory { steps });
            }
        }
        episodes_per_agent += 1;
        if triggered {
            break;
        }
    }

    RoundExploration {
        stats,
        initial_states,
        episodes_per_agent,
        trajectories,
    }
}

/// Exact scalar accounting for the round protocol.
///
/// Per round the ledger counts a downlink of `5 * M * H * S` (policy,
/// on-policy counts and the three value tables to each agent), an uplink of
/// `8 * M * H * S` (reward, count and the six local sums per state-step
/// pair), and `M + 1` abortion-signal scalars (one agent to the server, the
/// server to all `M` agents). The per-round total `13 M H S + M + 1` does not
/// depend on the round's content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommLedger {
    m: usize,
    h: usize,
    s: usize,
    rounds: u64,
    total: u64,
}

impl CommLedger {
    pub fn new(m: usize, h: usize, s: usize) -> Self {
        Self {
            m,
            h,
            s,
            rounds: 0,
            total: 0,
        }
    }

    pub fn downlink_per_round(&self) -> u64 {
        (5 * self.m * self.h * self.s) as u64
    }

    pub fn uplink_per_round(&self) -> u64 {
        (8 * self.m * self.h * self.s) as u64
    }

    pub fn signals_per_round(&self) -> u64 {
        (self.m + 1) as u64
    }

    pub fn per_round(&self) -> u64 {
        self.downlink_per_round() + self.uplink_per_round() + self.signals_per_round()
    }

    pub fn record_round(&mut self) {
        self.rounds += 1;
        self.total += self.per_round();
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Ledger for the round-based Hoeffding baseline, which broadcasts only the
/// policy, counts and `V` (3 scalars per pair down) and reports reward, count
/// and the single value sum (3 per pair up).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineLedger {
    m: usize,
    h: usize,
    s: usize,
    rounds: u64,
    total: u64,
}

impl BaselineLedger {
    pub fn new(m: usize, h: usize, s: usize) -> Self {
        Self {
            m,
            h,
            s,
            rounds: 0,
            total: 0,
        }
    }

    pub fn per_round(&self) -> u64 {
        (6 * self.m * self.h * self.s + self.m + 1) as u64
    }

    pub fn record_round(&mut self) {
        self.rounds += 1;
        self.total += self.per_round();
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}
