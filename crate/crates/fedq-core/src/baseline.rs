//! Hoeffding-style comparison learner: a single-agent variant that updates
//! after every episode, and a round-based federated analogue that reuses the
//! event-triggered round machinery but maintains only the UCB path (no lower
//! bound, no reference function).

use ndarray::{Array2, Array3};

use crate::mdp::TrajectoryStep;
use crate::rounds::LocalStats;
use crate::schedule::{self, BonusConstants, RateWindow};

/// Learner state shared by both baseline modes. `q` starts at `H` and is not
/// clipped; `v` is clipped to `min(H, max_a q)` after every update.
#[derive(Debug, Clone)]
pub struct HoeffdingState {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub m: usize,
    pub round: usize,
    pub q: Array3<f64>,
    pub n: Array3<u64>,
    pub v: Array2<f64>,
    pub policy: crate::mdp::DeterministicPolicy,
}

impl HoeffdingState {
    pub fn new(h: usize, s: usize, a: usize, m: usize) -> Self {
        Self {
            h,
            s,
            a,
            m,
            round: 1,
            q: Array3::from_elem((h, s, a), h as f64),
            n: Array3::zeros((h, s, a)),
            v: Array2::from_elem((h, s), h as f64),
            policy: crate::mdp::DeterministicPolicy::lowest_action(h, s),
        }
    }

    pub fn on_policy_counts(&self) -> Array2<u64> {
        Array2::from_shape_fn((self.h, self.s), |(h, s)| {
            self.n[[h, s, self.policy.action(h, s)]]
        })
    }

    fn refresh_row(&mut self, h: usize, s: usize) {
        let mut best = self.q[[h, s, 0]];
        let mut best_a = 0;
        for a in 1..self.a {
            if self.q[[h, s, a]] > best {
                best = self.q[[h, s, a]];
                best_a = a;
            }
        }
        self.v[[h, s]] = best.min(self.h as f64);
        self.policy.set_action(h, s, best_a);
    }

    /// Single-agent mode: fold one finished episode into the tables, step by
    /// step in `h` order. Each step's target reads `v` at `h + 1` before that
    /// row is touched this episode, so the batch is identical to the online
    /// per-step update.
    pub fn apply_episode(&mut self, steps: &[TrajectoryStep], c: &BonusConstants, iota: f64) {
        let h3iota = (self.h as f64).powi(3) * iota;
        for (h, step) in steps.iter().enumerate() {
            let (s, a) = (step.state, step.action);
            let t = self.n[[h, s, a]] + 1;
            self.n[[h, s, a]] = t;
            let eta = schedule::eta(t, self.h);
            let bonus = c.c_b * (h3iota / t as f64).sqrt();
            let v_next = if h + 1 < self.h {
                self.v[[h + 1, step.next_state]]
            } else {
                0.0
            };
            self.q[[h, s, a]] =
                (1.0 - eta) * self.q[[h, s, a]] + eta * (step.reward + v_next + bonus);
            self.refresh_row(h, s);
        }
        self.round += 1;
    }

    /// Federated mode: merge one round of per-agent statistics (ascending
    /// agent order) with the same two-case weighting the main learner uses,
    /// restricted to the UCB path. Returns whether the policy changed.
    pub fn aggregate_round(&mut self, stats: &[LocalStats], c: &BonusConstants, iota: f64) -> bool {
        debug_assert_eq!(stats.len(), self.m);
        let i0 = (2 * self.m * self.h * (self.h + 1)) as u64;
        let mut per_visit: Vec<f64> = Vec::with_capacity(self.m);
        for h in 0..self.h {
            for s in 0..self.s {
                let mut n_round = 0u64;
                let mut v_sum = 0.0;
                let mut reward = 0.0;
                for agent in stats {
                    let count = agent.counts[[h, s]];
                    if count == 0 {
                        continue;
                    }
                    n_round += count;
                    v_sum += agent.v_sum[[h, s]];
                    reward = agent.rewards[[h, s]];
                }
                if n_round == 0 {
                    continue;
                }
                let a = self.policy.action(h, s);
                let n_lo = self.n[[h, s, a]];
                let n_hi = n_lo + n_round;
                let window = RateWindow::new(self.h, n_lo, n_hi, iota);
                let eta_a = schedule::alpha_rate(&window);
                let bonus = schedule::hoeffding_bonus(&window, c);
                let q_old = self.q[[h, s, a]];
                let q_new = if n_lo < i0 {
                    per_visit.clear();
                    for agent in stats {
                        if agent.counts[[h, s]] == 1 {
                            per_visit.push(agent.v_sum[[h, s]]);
                        }
                    }
                    debug_assert_eq!(per_visit.len() as u64, n_round);
                    let weights = schedule::eta_weights(&window);
                    let mut acc = 0.0;
                    for (t, &value) in per_visit.iter().enumerate() {
                        acc += weights[t] * value;
                    }
                    (1.0 - eta_a) * q_old + eta_a * reward + acc + bonus
                } else {
                    let v_mean = v_sum / n_round as f64;
                    (1.0 - eta_a) * q_old + eta_a * (reward + v_mean) + bonus
                };
                self.n[[h, s, a]] = n_hi;
                self.q[[h, s, a]] = q_new;
            }
        }
        let old_policy = self.policy.clone();
        for h in 0..self.h {
            for s in 0..self.s {
                self.refresh_row(h, s);
            }
        }
        self.round += 1;
        self.policy != old_policy
    }
}
