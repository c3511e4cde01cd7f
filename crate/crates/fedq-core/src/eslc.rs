//! The early-settled low-cost learner: central-server state, round
//! broadcasts, agent reports, the two-case central aggregation, reference
//! settlement, and the single-agent specialization that skips the broadcast
//! and report objects entirely.
//!
//! The server keeps four Q-tables per `(s, a, h)` (UCB-type `q_u`, LCB-type
//! `q_l`, reference-advantage-type `q_r`, and the running minimum `q`),
//! visit counts, the historical reference moments, the weighted advantage
//! moments, and the per-entry reference-bonus scale. Per `(s, h)` it keeps
//! the value `v`, the lower bound `v_l`, the reference `v_r`, the settlement
//! indicator `u_r`, and the greedy policy.
//!
//! Aggregation updates only the entries visited under the round policy; all
//! other entries are copied bit-identically. Case 1 (total prior visits below
//! `i0 = 2MH(H+1)`) weights each agent's single visit individually; case 2
//! folds the round-wise means in with the aggregate rate. The estimated
//! Q-function is the running minimum of the UCB and reference estimates, so
//! it never increases, and the reference function freezes permanently once
//! the value/lower-bound gap first drops to the settlement threshold.

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jsonio;
use crate::mdp::{DeterministicPolicy, InitialStateMode, TabularMdp, Trajectory};
use crate::rounds::{lockstep_explore, visit_cap, ExploreTables, LocalStats};
use crate::schedule::{self, BonusConstants, RateWindow};

/// Argmax tie handling. `LowestIndex` is the production rule; `HighestIndex`
/// exists as test instrumentation for sensitivity checks and is never
/// serialized into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("expected reports from agents 0..{expected} in ascending order")]
    BadAgentSet { expected: usize },
    #[error("agent {agent} reported for round {got}, server is at round {expected}")]
    RoundMismatch {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error("agent {agent} report has {got} entries, expected {expected}")]
    ShapeMismatch {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error("agent {agent} visited (h={h}, s={s}) under action {action}, round policy plays {policy_action}")]
    OffPolicyEntry {
        agent: usize,
        h: usize,
        s: usize,
        action: usize,
        policy_action: usize,
    },
    #[error("agent {agent} reports nonzero sums at unvisited (h={h}, s={s})")]
    NonzeroEmptyEntry { agent: usize, h: usize, s: usize },
    #[error("agent {agent} exceeded the visit cap at (h={h}, s={s}): {count} > {cap}")]
    CapExceeded {
        agent: usize,
        h: usize,
        s: usize,
        count: u64,
        cap: u64,
    },
    #[error("no (s,a,h,m) tuple reached its visit cap; the round should not have ended")]
    MissingTriggerEquality,
}

/// Everything the server pushes to the agents at a round start.
#[derive(Debug, Clone)]
pub struct RoundBroadcast {
    pub round: usize,
    pub policy: DeterministicPolicy,
    /// `N` at `(h, s, policy(h, s))`.
    pub n_on_policy: Array2<u64>,
    pub v: Array2<f64>,
    pub v_l: Array2<f64>,
    pub v_r: Array2<f64>,
}

/// One `(h, s)` row of an agent report. The action echo lets the server check
/// the report against the round policy; it is server-known information and is
/// not counted as a transmitted scalar. The eight counted scalars are the
/// reward, the visit count, and the six local sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub action: usize,
    pub reward: f64,
    pub n: u64,
    pub v: f64,
    pub v_l: f64,
    pub mu_r: f64,
    pub sigma_r: f64,
    pub mu_a: f64,
    pub sigma_a: f64,
}

impl ReportEntry {
    fn zero() -> Self {
        Self {
            action: 0,
            reward: 0.0,
            n: 0,
            v: 0.0,
            v_l: 0.0,
            mu_r: 0.0,
            sigma_r: 0.0,
            mu_a: 0.0,
            sigma_a: 0.0,
        }
    }
}

/// The per-round transmission of one agent: one row per `(h, s)`, with the
/// action fixed to the round policy.
#[derive(Debug, Clone)]
pub struct AgentRoundReport {
    pub agent: usize,
    pub round: usize,
    pub h: usize,
    pub s: usize,
    pub entries: Vec<ReportEntry>,
}

impl AgentRoundReport {
    pub fn from_stats(
        agent: usize,
        round: usize,
        stats: &LocalStats,
        policy: &DeterministicPolicy,
    ) -> Self {
        let (h, s) = stats.counts.dim();
        let mut entries = vec![ReportEntry::zero(); h * s];
        for hh in 0..h {
            for ss in 0..s {
                let e = &mut entries[hh * s + ss];
                e.action = policy.action(hh, ss);
                e.reward = stats.rewards[[hh, ss]];
                e.n = stats.counts[[hh, ss]];
                e.v = stats.v_sum[[hh, ss]];
                e.v_l = stats.v_l_sum[[hh, ss]];
                e.mu_r = stats.mu_r_sum[[hh, ss]];
                e.sigma_r = stats.sigma_r_sum[[hh, ss]];
                e.mu_a = stats.mu_a_sum[[hh, ss]];
                e.sigma_a = stats.sigma_a_sum[[hh, ss]];
            }
        }
        Self {
            agent,
            round,
            h,
            s,
            entries,
        }
    }

    pub fn entry(&self, h: usize, s: usize) -> &ReportEntry {
        &self.entries[h * self.s + s]
    }

    pub fn entry_mut(&mut self, h: usize, s: usize) -> &mut ReportEntry {
        &mut self.entries[h * self.s + s]
    }
}

/// Result of one aggregation.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Whether the new greedy policy differs from the round policy.
    pub policy_changed: bool,
    /// Soft-invariant violations observed while finishing the round
    /// (`v_l > v` or `v < 0`); empty on clean runs.
    pub anomalies: Vec<String>,
}

/// Central-server state at the beginning of round `round`.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub m: usize,
    pub round: usize,
    pub q_u: Array3<f64>,
    pub q_l: Array3<f64>,
    pub q_r: Array3<f64>,
    pub q: Array3<f64>,
    pub n: Array3<u64>,
    pub mu_r: Array3<f64>,
    pub sigma_r: Array3<f64>,
    pub mu_a: Array3<f64>,
    pub sigma_a: Array3<f64>,
    pub beta_r: Array3<f64>,
    pub v: Array2<f64>,
    pub v_l: Array2<f64>,
    pub v_r: Array2<f64>,
    pub u_r: Array2<bool>,
    pub policy: DeterministicPolicy,
    pub tie_break: TieBreak,
}

/// Values a visited entry carries into the per-entry update.
struct EntryInput<'a> {
    reward: f64,
    n_round: u64,
    /// Raw sums over all agents: `v, v_l, mu_r, sigma_r, mu_a, sigma_a`.
    sums: [f64; 6],
    /// Per-visit values in ascending agent index; present only when the
    /// entry is still in case 1 (each agent then has at most one visit, so
    /// its raw sums are single function values).
    per_visit: Option<&'a [[f64; 6]]>,
}

impl ServerState {
    /// Fresh state for round 1: `Q_U = Q_R = Q = V = V_R = H`,
    /// `Q_L = V_L = N = 0`, the settlement indicator raised everywhere, and
    /// the lowest-action policy.
    pub fn new(h: usize, s: usize, a: usize, m: usize) -> Self {
        let hf = h as f64;
        Self {
            h,
            s,
            a,
            m,
            round: 1,
            q_u: Array3::from_elem((h, s, a), hf),
            q_l: Array3::zeros((h, s, a)),
            q_r: Array3::from_elem((h, s, a), hf),
            q: Array3::from_elem((h, s, a), hf),
            n: Array3::zeros((h, s, a)),
            mu_r: Array3::zeros((h, s, a)),
            sigma_r: Array3::zeros((h, s, a)),
            mu_a: Array3::zeros((h, s, a)),
            sigma_a: Array3::zeros((h, s, a)),
            beta_r: Array3::zeros((h, s, a)),
            v: Array2::from_elem((h, s), hf),
            v_l: Array2::zeros((h, s)),
            v_r: Array2::from_elem((h, s), hf),
            u_r: Array2::from_elem((h, s), true),
            policy: DeterministicPolicy::lowest_action(h, s),
            tie_break: TieBreak::LowestIndex,
        }
    }

    /// The threshold `i0 = 2 M H (H + 1)` separating the two update cases.
    pub fn i0(&self) -> u64 {
        (2 * self.m * self.h * (self.h + 1)) as u64
    }

    /// Total recorded visits `sum N` (equals `H` times the episodes run).
    pub fn total_visits(&self) -> u64 {
        self.n.sum()
    }

    /// `N` gathered at the on-policy actions.
    pub fn on_policy_counts(&self) -> Array2<u64> {
        Array2::from_shape_fn((self.h, self.s), |(h, s)| {
            self.n[[h, s, self.policy.action(h, s)]]
        })
    }

    /// Snapshot the five broadcast quantities for the current round.
    pub fn make_broadcast(&self) -> RoundBroadcast {
        RoundBroadcast {
            round: self.round,
            policy: self.policy.clone(),
            n_on_policy: self.on_policy_counts(),
            v: self.v.clone(),
            v_l: self.v_l.clone(),
            v_r: self.v_r.clone(),
        }
    }

    /// Testing hook: install `q` into the UCB, reference and main Q-tables
    /// and make the value tables and policy greedy with respect to it.
    pub fn install_q_tables(&mut self, q: &Array3<f64>) {
        assert_eq!(q.dim(), (self.h, self.s, self.a));
        self.q_u.assign(q);
        self.q_r.assign(q);
        self.q.assign(q);
        for h in 0..self.h {
            for s in 0..self.s {
                let (best, best_a) = self.row_argmax(h, s);
                self.v[[h, s]] = best;
                self.v_r[[h, s]] = best;
                self.policy.set_action(h, s, best_a);
            }
        }
    }

    fn row_argmax(&self, h: usize, s: usize) -> (f64, usize) {
        let mut best = self.q[[h, s, 0]];
        let mut best_a = 0;
        for a in 1..self.a {
            let value = self.q[[h, s, a]];
            let better = match self.tie_break {
                TieBreak::LowestIndex => value > best,
                TieBreak::HighestIndex => value >= best,
            };
            if better {
                best = value;
                best_a = a;
            }
        }
        (best, best_a)
    }

    /// Validate and merge all agent reports for the current round, then run
    /// the central aggregation. Unvisited entries are left bit-identical.
    pub fn aggregate_round(
        &mut self,
        reports: &[AgentRoundReport],
        consts: &BonusConstants,
        iota: f64,
    ) -> Result<RoundOutcome, ProtocolError> {
        self.validate_reports(reports)?;
        let i0 = self.i0();
        let mut per_visit = Vec::with_capacity(self.m);
        for h in 0..self.h {
            for s in 0..self.s {
                let a = self.policy.action(h, s);
                let mut n_round = 0u64;
                let mut sums = [0.0; 6];
                let mut reward = 0.0;
                for report in reports {
                    let e = report.entry(h, s);
                    if e.n == 0 {
                        continue;
                    }
                    n_round += e.n;
                    sums[0] += e.v;
                    sums[1] += e.v_l;
                    sums[2] += e.mu_r;
                    sums[3] += e.sigma_r;
                    sums[4] += e.mu_a;
                    sums[5] += e.sigma_a;
                    reward = e.reward;
                }
                if n_round == 0 {
                    continue;
                }
                let case1 = self.n[[h, s, a]] < i0;
                if case1 {
                    per_visit.clear();
                    for report in reports {
                        let e = report.entry(h, s);
                        if e.n == 1 {
                            per_visit.push([e.v, e.v_l, e.mu_r, e.sigma_r, e.mu_a, e.sigma_a]);
                        }
                    }
                }
                let input = EntryInput {
                    reward,
                    n_round,
                    sums,
                    per_visit: if case1 { Some(&per_visit) } else { None },
                };
                self.update_entry(h, s, a, &input, consts, iota);
            }
        }
        Ok(self.finish_round(consts))
    }

    /// Direct single-agent aggregation: no report objects, the agent's local
    /// statistics feed the same per-entry updates the federated path uses.
    pub fn aggregate_local(
        &mut self,
        stats: &LocalStats,
        consts: &BonusConstants,
        iota: f64,
    ) -> RoundOutcome {
        debug_assert_eq!(self.m, 1, "direct aggregation is the single-agent path");
        let i0 = self.i0();
        for h in 0..self.h {
            for s in 0..self.s {
                let n_round = stats.counts[[h, s]];
                if n_round == 0 {
                    continue;
                }
                let a = self.policy.action(h, s);
                let sums = [
                    stats.v_sum[[h, s]],
                    stats.v_l_sum[[h, s]],
                    stats.mu_r_sum[[h, s]],
                    stats.sigma_r_sum[[h, s]],
                    stats.mu_a_sum[[h, s]],
                    stats.sigma_a_sum[[h, s]],
                ];
                let case1 = self.n[[h, s, a]] < i0;
                let single_visit = [sums];
                let input = EntryInput {
                    reward: stats.rewards[[h, s]],
                    n_round,
                    sums,
                    per_visit: if case1 { Some(&single_visit) } else { None },
                };
                self.update_entry(h, s, a, &input, consts, iota);
            }
        }
        self.finish_round(consts)
    }

    fn validate_reports(&self, reports: &[AgentRoundReport]) -> Result<(), ProtocolError> {
        if reports.len() != self.m || reports.iter().enumerate().any(|(i, r)| r.agent != i) {
            return Err(ProtocolError::BadAgentSet { expected: self.m });
        }
        let mut equality = false;
        for report in reports {
            if report.round != self.round {
                return Err(ProtocolError::RoundMismatch {
                    agent: report.agent,
                    expected: self.round,
                    got: report.round,
                });
            }
            if report.entries.len() != self.h * self.s {
                return Err(ProtocolError::ShapeMismatch {
                    agent: report.agent,
                    expected: self.h * self.s,
                    got: report.entries.len(),
                });
            }
            for h in 0..self.h {
                for s in 0..self.s {
                    let e = report.entry(h, s);
                    if e.n == 0 {
                        if e.v != 0.0
                            || e.v_l != 0.0
                            || e.mu_r != 0.0
                            || e.sigma_r != 0.0
                            || e.mu_a != 0.0
                            || e.sigma_a != 0.0
                        {
                            return Err(ProtocolError::NonzeroEmptyEntry {
                                agent: report.agent,
                                h,
                                s,
                            });
                        }
                        continue;
                    }
                    let policy_action = self.policy.action(h, s);
                    if e.action != policy_action {
                        return Err(ProtocolError::OffPolicyEntry {
                            agent: report.agent,
                            h,
                            s,
                            action: e.action,
                            policy_action,
                        });
                    }
                    let cap = visit_cap(self.n[[h, s, policy_action]], self.m, self.h);
                    if e.n > cap {
                        return Err(ProtocolError::CapExceeded {
                            agent: report.agent,
                            h,
                            s,
                            count: e.n,
                            cap,
                        });
                    }
                    if e.n == cap {
                        equality = true;
                    }
                }
            }
        }
        if !equality {
            return Err(ProtocolError::MissingTriggerEquality);
        }
        Ok(())
    }

    /// The per-entry update shared verbatim by the federated and single-agent
    /// paths: round-wise means, the historical reference moments, the
    /// case-split advantage moments and Q-estimates, both cumulative bonuses,
    /// and the running minimum.
    fn update_entry(
        &mut self,
        h: usize,
        s: usize,
        a: usize,
        input: &EntryInput,
        consts: &BonusConstants,
        iota: f64,
    ) {
        let n_lo = self.n[[h, s, a]];
        let n_round = input.n_round;
        let n_hi = n_lo + n_round;
        let nf = n_round as f64;

        // Round-wise means of the transmitted sums.
        let v_mean = input.sums[0] / nf;
        let vl_mean = input.sums[1] / nf;
        let mur_mean = input.sums[2] / nf;
        let sigr_mean = input.sums[3] / nf;
        let mua_mean = input.sums[4] / nf;
        let siga_mean = input.sums[5] / nf;

        // Historical means of the reference function and its square.
        let mu_r_new = (n_lo as f64 * self.mu_r[[h, s, a]] + nf * mur_mean) / n_hi as f64;
        let sigma_r_new = (n_lo as f64 * self.sigma_r[[h, s, a]] + nf * sigr_mean) / n_hi as f64;

        let window = RateWindow::new(self.h, n_lo, n_hi, iota);
        let eta_a = schedule::alpha_rate(&window);
        let keep = 1.0 - eta_a;
        let bonus = schedule::hoeffding_bonus(&window, consts);
        let r = input.reward;

        let (mu_a_new, sigma_a_new, q_u_new, q_l_new, q_r_base);
        if n_lo < self.i0() {
            let per_visit = input
                .per_visit
                .expect("case-1 update needs per-visit values");
            debug_assert_eq!(per_visit.len() as u64, n_round);
            let weights = schedule::eta_weights(&window);
            let mut acc_v = 0.0;
            let mut acc_vl = 0.0;
            let mut acc_ref = 0.0;
            let mut acc_mu_a = 0.0;
            let mut acc_sigma_a = 0.0;
            for (t, values) in per_visit.iter().enumerate() {
                let w = weights[t];
                acc_v += w * values[0];
                acc_vl += w * values[1];
                acc_ref += w * (values[0] - values[2]);
                acc_mu_a += w * values[4];
                acc_sigma_a += w * values[5];
            }
            mu_a_new = keep * self.mu_a[[h, s, a]] + acc_mu_a;
            sigma_a_new = keep * self.sigma_a[[h, s, a]] + acc_sigma_a;
            q_u_new = keep * self.q_u[[h, s, a]] + eta_a * r + acc_v + bonus;
            q_l_new = keep * self.q_l[[h, s, a]] + eta_a * r + acc_vl - bonus;
            q_r_base = keep * self.q_r[[h, s, a]] + eta_a * (r + mu_r_new) + acc_ref;
        } else {
            mu_a_new = keep * self.mu_a[[h, s, a]] + eta_a * mua_mean;
            sigma_a_new = keep * self.sigma_a[[h, s, a]] + eta_a * siga_mean;
            q_u_new = keep * self.q_u[[h, s, a]] + eta_a * (r + v_mean) + bonus;
            q_l_new = keep * self.q_l[[h, s, a]] + eta_a * (r + vl_mean) - bonus;
            q_r_base = keep * self.q_r[[h, s, a]] + eta_a * (r + mu_r_new + v_mean - mur_mean);
        }

        let beta_new = schedule::beta_r(
            mu_r_new,
            sigma_r_new,
            mu_a_new,
            sigma_a_new,
            n_hi,
            self.h,
            iota,
            consts.c_b_r,
        );
        let ref_bonus =
            schedule::reference_bonus(&window, self.beta_r[[h, s, a]], beta_new, consts);
        let q_r_new = q_r_base + ref_bonus;

        self.mu_r[[h, s, a]] = mu_r_new;
        self.sigma_r[[h, s, a]] = sigma_r_new;
        self.mu_a[[h, s, a]] = mu_a_new;
        self.sigma_a[[h, s, a]] = sigma_a_new;
        self.beta_r[[h, s, a]] = beta_new;
        self.n[[h, s, a]] = n_hi;
        self.q_u[[h, s, a]] = q_u_new;
        self.q_l[[h, s, a]] = q_l_new;
        self.q_r[[h, s, a]] = q_r_new;
        self.q[[h, s, a]] = q_u_new.min(q_r_new).min(self.q[[h, s, a]]);
    }

    /// Value, lower-bound, policy and reference-settlement updates for every
    /// `(s, h)`, then advance the round counter.
    fn finish_round(&mut self, consts: &BonusConstants) -> RoundOutcome {
        let mut policy_changed = false;
        let mut anomalies = Vec::new();
        for h in 0..self.h {
            for s in 0..self.s {
                let (v_new, best_a) = self.row_argmax(h, s);
                let mut best_l = self.q_l[[h, s, 0]];
                for a in 1..self.a {
                    best_l = best_l.max(self.q_l[[h, s, a]]);
                }
                let v_l_new = best_l.max(self.v_l[[h, s]]);

                if v_new - v_l_new > consts.beta {
                    self.v_r[[h, s]] = v_new;
                } else if self.u_r[[h, s]] {
                    self.v_r[[h, s]] = v_new;
                    self.u_r[[h, s]] = false;
                }

                self.v[[h, s]] = v_new;
                self.v_l[[h, s]] = v_l_new;
                if self.policy.action(h, s) != best_a {
                    self.policy.set_action(h, s, best_a);
                    policy_changed = true;
                }
                if v_l_new > v_new {
                    anomalies.push(format!(
                        "round {}: v_l {} exceeds v {} at (h={}, s={})",
                        self.round, v_l_new, v_new, h, s
                    ));
                }
                if v_new < 0.0 {
                    anomalies.push(format!(
                        "round {}: v {} negative at (h={}, s={})",
                        self.round, v_new, h, s
                    ));
                }
            }
        }
        self.round += 1;
        RoundOutcome {
            policy_changed,
            anomalies,
        }
    }

    /// Serialize to the checkpoint document (row-major tables, round index,
    /// master seed). A checkpoint plus the environment file determines the
    /// continuation because agent streams are derived per `(agent, round)`.
    pub fn checkpoint(&self, master_seed: u64) -> Checkpoint {
        Checkpoint {
            master_seed,
            round: self.round,
            m: self.m,
            h: self.h,
            s: self.s,
            a: self.a,
            q_u: self.q_u.iter().copied().collect(),
            q_l: self.q_l.iter().copied().collect(),
            q_r: self.q_r.iter().copied().collect(),
            q: self.q.iter().copied().collect(),
            n: self.n.iter().copied().collect(),
            mu_r: self.mu_r.iter().copied().collect(),
            sigma_r: self.sigma_r.iter().copied().collect(),
            mu_a: self.mu_a.iter().copied().collect(),
            sigma_a: self.sigma_a.iter().copied().collect(),
            beta_r: self.beta_r.iter().copied().collect(),
            v: self.v.iter().copied().collect(),
            v_l: self.v_l.iter().copied().collect(),
            v_r: self.v_r.iter().copied().collect(),
            u_r: self.u_r.iter().copied().collect(),
            policy: self.policy.actions().iter().copied().collect(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Self {
        let (h, s, a) = (cp.h, cp.s, cp.a);
        let shape3 = (h, s, a);
        let arr3 =
            |data: &Vec<f64>| Array3::from_shape_vec(shape3, data.clone()).expect("table shape");
        let arr2 =
            |data: &Vec<f64>| Array2::from_shape_vec((h, s), data.clone()).expect("table shape");
        Self {
            h,
            s,
            a,
            m: cp.m,
            round: cp.round,
            q_u: arr3(&cp.q_u),
            q_l: arr3(&cp.q_l),
            q_r: arr3(&cp.q_r),
            q: arr3(&cp.q),
            n: Array3::from_shape_vec(shape3, cp.n.clone()).expect("table shape"),
            mu_r: arr3(&cp.mu_r),
            sigma_r: arr3(&cp.sigma_r),
            mu_a: arr3(&cp.mu_a),
            sigma_a: arr3(&cp.sigma_a),
            beta_r: arr3(&cp.beta_r),
            v: arr2(&cp.v),
            v_l: arr2(&cp.v_l),
            v_r: arr2(&cp.v_r),
            u_r: Array2::from_shape_vec((h, s), cp.u_r.clone()).expect("table shape"),
            policy: DeterministicPolicy::new(
                Array2::from_shape_vec((h, s), cp.policy.clone()).expect("policy shape"),
            ),
            tie_break: TieBreak::LowestIndex,
        }
    }
}

/// Checkpoint document for [`ServerState`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub master_seed: u64,
    pub round: usize,
    pub m: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub q_u: Vec<f64>,
    pub q_l: Vec<f64>,
    pub q_r: Vec<f64>,
    pub q: Vec<f64>,
    pub n: Vec<u64>,
    pub mu_r: Vec<f64>,
    pub sigma_r: Vec<f64>,
    pub mu_a: Vec<f64>,
    pub sigma_a: Vec<f64>,
    pub beta_r: Vec<f64>,
    pub v: Vec<f64>,
    pub v_l: Vec<f64>,
    pub v_r: Vec<f64>,
    pub u_r: Vec<bool>,
    pub policy: Vec<usize>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        jsonio::to_string_precise(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Bit-level equality of two server states (floats compared by bits, not by
/// numeric value).
pub fn states_bit_identical(a: &ServerState, b: &ServerState) -> bool {
    fn bits3(x: &Array3<f64>, y: &Array3<f64>) -> bool {
        x.iter()
            .zip(y.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits())
    }
    fn bits2(x: &Array2<f64>, y: &Array2<f64>) -> bool {
        x.iter()
            .zip(y.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits())
    }
    a.h == b.h
        && a.s == b.s
        && a.a == b.a
        && a.m == b.m
        && a.round == b.round
        && bits3(&a.q_u, &b.q_u)
        && bits3(&a.q_l, &b.q_l)
        && bits3(&a.q_r, &b.q_r)
        && bits3(&a.q, &b.q)
        && a.n == b.n
        && bits3(&a.mu_r, &b.mu_r)
        && bits3(&a.sigma_r, &b.sigma_r)
        && bits3(&a.mu_a, &b.mu_a)
        && bits3(&a.sigma_a, &b.sigma_a)
        && bits3(&a.beta_r, &b.beta_r)
        && bits2(&a.v, &b.v)
        && bits2(&a.v_l, &b.v_l)
        && bits2(&a.v_r, &b.v_r)
        && a.u_r == b.u_r
        && a.policy == b.policy
}

/// Everything one federated exploration round produced.
pub struct ExploreOutcome {
    pub reports: Vec<AgentRoundReport>,
    pub trajectories: Vec<Vec<Trajectory>>,
    pub episodes_per_agent: usize,
    pub initial_states: Vec<usize>,
}

/// Run all `m` agents in lockstep against a broadcast until the visit cap
/// triggers, and package each agent's sums as a round report.
pub fn agent_explore_lockstep(
    mdp: &TabularMdp,
    broadcast: &RoundBroadcast,
    m: usize,
    rngs: &mut [ChaCha8Rng],
    init_mode: InitialStateMode,
    record_trajectories: bool,
) -> ExploreOutcome {
    let tables = ExploreTables {
        policy: &broadcast.policy,
        n_on_policy: &broadcast.n_on_policy,
        v: &broadcast.v,
        v_l: &broadcast.v_l,
        v_r: &broadcast.v_r,
    };
    let out = lockstep_explore(mdp, &tables, m, rngs, init_mode, record_trajectories);
    let reports = out
        .stats
        .iter()
        .enumerate()
        .map(|(agent, stats)| {
            AgentRoundReport::from_stats(agent, broadcast.round, stats, &broadcast.policy)
        })
        .collect();
    ExploreOutcome {
        reports,
        trajectories: out.trajectories,
        episodes_per_agent: out.episodes_per_agent,
        initial_states: out.initial_states,
    }
}

/// One round of the single-agent specialization: explore by reading the
/// server tables directly, then aggregate the local statistics in place.
pub struct SingleRound {
    pub episodes: usize,
    pub initial_states: Vec<usize>,
    pub outcome: RoundOutcome,
}

pub fn single_agent_round(
    server: &mut ServerState,
    mdp: &TabularMdp,
    rng: &mut ChaCha8Rng,
    consts: &BonusConstants,
    iota: f64,
    init_mode: InitialStateMode,
) -> SingleRound {
    let n_on_policy = server.on_policy_counts();
    let out = {
        let tables = ExploreTables {
            policy: &server.policy,
            n_on_policy: &n_on_policy,
            v: &server.v,
            v_l: &server.v_l,
            v_r: &server.v_r,
        };
        lockstep_explore(mdp, &tables, 1, std::slice::from_mut(rng), init_mode, false)
    };
    let outcome = server.aggregate_local(&out.stats[0], consts, iota);
    SingleRound {
        episodes: out.episodes_per_agent,
        initial_states: out.initial_states,
        outcome,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::generate_random_mdp;
    use crate::seeding;

    const IOTA: f64 = 1.0;

    fn consts() -> BonusConstants {
        BonusConstants::default()
    }

    fn run_fed_round_with(
        server: &mut ServerState,
        mdp: &TabularMdp,
        master: u64,
        c: &BonusConstants,
        iota: f64,
    ) -> ExploreOutcome {
        let bc = server.make_broadcast();
        let mut rngs: Vec<ChaCha8Rng> = (0..server.m)
            .map(|agent| seeding::new_rng(seeding::agent_round_seed(master, agent, bc.round)))
            .collect();
        let out = agent_explore_lockstep(
            mdp,
            &bc,
            server.m,
            &mut rngs,
            InitialStateMode::Uniform,
            true,
        );
        server
            .aggregate_round(&out.reports, c, iota)
            .expect("round aggregates");
        out
    }

    fn run_fed_round(server: &mut ServerState, mdp: &TabularMdp, master: u64) -> ExploreOutcome {
        run_fed_round_with(server, mdp, master, &consts(), IOTA)
    }

    #[test]
    fn initialization_matches_contract() {
        let server = ServerState::new(3, 2, 2, 4);
        assert_eq!(server.round, 1);
        assert!(server.q_u.iter().all(|&x| x == 3.0));
        assert!(server.q_r.iter().all(|&x| x == 3.0));
        assert!(server.q.iter().all(|&x| x == 3.0));
        assert!(server.q_l.iter().all(|&x| x == 0.0));
        assert!(server.n.iter().all(|&x| x == 0));
        assert!(server.v.iter().all(|&x| x == 3.0));
        assert!(server.v_r.iter().all(|&x| x == 3.0));
        assert!(server.v_l.iter().all(|&x| x == 0.0));
        assert!(server.u_r.iter().all(|&x| x));
        assert_eq!(server.i0(), 2 * 4 * 3 * 4);
    }

    #[test]
    fn first_broadcast_contents() {
        let server = ServerState::new(4, 3, 2, 2);
        let bc = server.make_broadcast();
        assert_eq!(bc.round, 1);
        assert!(bc.v.iter().all(|&x| x == 4.0));
        assert!(bc.v_r.iter().all(|&x| x == 4.0));
        assert!(bc.v_l.iter().all(|&x| x == 0.0));
        assert!(bc.n_on_policy.iter().all(|&x| x == 0));
    }

    #[test]
    fn broadcast_counts_are_definitional_after_rounds() {
        let mdp = generate_random_mdp(3, 2, 2, 14).unwrap();
        let mut server = ServerState::new(3, 2, 2, 2);
        for _ in 0..5 {
            run_fed_round(&mut server, &mdp, 50);
        }
        let bc = server.make_broadcast();
        for h in 0..3 {
            for s in 0..2 {
                assert_eq!(
                    bc.n_on_policy[[h, s]],
                    server.n[[h, s, server.policy.action(h, s)]]
                );
            }
        }
    }

    #[test]
    fn single_visit_ucb_update_matches_formula() {
        // Round 1, M = 1: every visited entry has exactly one visit, eta_alpha
        // is 1, the prior H is fully discounted, and
        // Q_U = r + V1_{h+1}(s') + c_b sqrt(H^3 iota).
        let mdp = generate_random_mdp(4, 3, 2, 3).unwrap();
        let mut server = ServerState::new(4, 3, 2, 1);
        let c = consts();
        let out = run_fed_round(&mut server, &mdp, 7);
        assert_eq!(out.episodes_per_agent, 1);
        let traj = &out.trajectories[0][0];
        let b1 = c.c_b * (64.0 * IOTA).sqrt();
        for (h, step) in traj.steps.iter().enumerate() {
            let v_next = if h + 1 < 4 { 4.0 } else { 0.0 };
            let expected = step.reward + v_next + b1;
            let got = server.q_u[[h, step.state, step.action]];
            assert!(
                (got - expected).abs() < 1e-12,
                "q_u {got} vs {expected} at h={h}"
            );
            assert_eq!(server.n[[h, step.state, step.action]], 1);
        }
    }

    #[test]
    fn unvisited_entries_are_bit_identical() {
        let mdp = generate_random_mdp(4, 3, 2, 9).unwrap();
        let mut server = ServerState::new(4, 3, 2, 1);
        for _ in 0..6 {
            let before = server.clone();
            run_fed_round(&mut server, &mdp, 123);
            for h in 0..4 {
                for s in 0..3 {
                    for a in 0..2 {
                        if server.n[[h, s, a]] == before.n[[h, s, a]] {
                            assert_eq!(
                                server.q_u[[h, s, a]].to_bits(),
                                before.q_u[[h, s, a]].to_bits()
                            );
                            assert_eq!(
                                server.q[[h, s, a]].to_bits(),
                                before.q[[h, s, a]].to_bits()
                            );
                            assert_eq!(
                                server.mu_r[[h, s, a]].to_bits(),
                                before.mu_r[[h, s, a]].to_bits()
                            );
                            assert_eq!(
                                server.beta_r[[h, s, a]].to_bits(),
                                before.beta_r[[h, s, a]].to_bits()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn q_never_increases_and_value_is_row_max() {
        let mdp = generate_random_mdp(3, 2, 2, 17).unwrap();
        let mut server = ServerState::new(3, 2, 2, 3);
        for _ in 0..25 {
            let before = server.q.clone();
            run_fed_round(&mut server, &mdp, 4);
            for (idx, &q_new) in server.q.iter().enumerate() {
                assert!(q_new <= before.as_slice().unwrap()[idx]);
            }
            for h in 0..3 {
                for s in 0..2 {
                    let max = (0..2).map(|a| server.q[[h, s, a]]).fold(f64::MIN, f64::max);
                    assert_eq!(server.v[[h, s]], max);
                }
            }
        }
    }

    #[test]
    fn lower_bound_grows_and_gap_shrinks() {
        let mdp = generate_random_mdp(3, 2, 2, 28).unwrap();
        let mut server = ServerState::new(3, 2, 2, 1);
        for _ in 0..40 {
            let v_before = server.v.clone();
            let vl_before = server.v_l.clone();
            run_fed_round(&mut server, &mdp, 91);
            for h in 0..3 {
                for s in 0..2 {
                    assert!(server.v_l[[h, s]] >= vl_before[[h, s]]);
                    let gap_before = v_before[[h, s]] - vl_before[[h, s]];
                    let gap_after = server.v[[h, s]] - server.v_l[[h, s]];
                    assert!(gap_after <= gap_before);
                }
            }
        }
    }

    #[test]
    fn settlement_is_final() {
        // A loose threshold and a small log factor make settlement reachable
        // within a short run; once settled, the reference never moves again.
        let mdp = generate_random_mdp(3, 2, 2, 5).unwrap();
        let mut server = ServerState::new(3, 2, 2, 1);
        let c = BonusConstants {
            beta: 2.0,
            ..BonusConstants::default()
        };
        let iota = 0.01;
        let mut frozen: Array2<Option<f64>> = Array2::from_elem((3, 2), None);
        for _ in 0..200 {
            run_fed_round_with(&mut server, &mdp, 33, &c, iota);
            for h in 0..3 {
                for s in 0..2 {
                    if let Some(value) = frozen[[h, s]] {
                        assert_eq!(server.v_r[[h, s]].to_bits(), value.to_bits());
                    } else if !server.u_r[[h, s]] {
                        frozen[[h, s]] = Some(server.v_r[[h, s]]);
                    }
                }
            }
        }
        assert!(
            frozen.iter().any(|x| x.is_some()),
            "no entry settled in 200 rounds"
        );
    }

    #[test]
    fn report_sums_vanish_without_visits() {
        let mdp = generate_random_mdp(4, 3, 2, 2).unwrap();
        let server = ServerState::new(4, 3, 2, 2);
        let bc = server.make_broadcast();
        let mut rngs: Vec<ChaCha8Rng> = (0..2)
            .map(|agent| seeding::new_rng(seeding::agent_round_seed(6, agent, 1)))
            .collect();
        let out = agent_explore_lockstep(&mdp, &bc, 2, &mut rngs, InitialStateMode::Uniform, false);
        for report in &out.reports {
            for h in 0..4 {
                for s in 0..3 {
                    let e = report.entry(h, s);
                    if e.n == 0 {
                        assert_eq!(
                            (e.v, e.v_l, e.mu_r, e.sigma_r, e.mu_a, e.sigma_a),
                            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
                        );
                    } else {
                        assert!(e.v <= e.n as f64 * 4.0 + 1e-12);
                        assert!(e.sigma_r <= e.n as f64 * 16.0 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn protocol_rejects_stale_round() {
        let mdp = generate_random_mdp(3, 2, 2, 2).unwrap();
        let mut server = ServerState::new(3, 2, 2, 1);
        let bc = server.make_broadcast();
        let mut rngs = vec![seeding::new_rng(seeding::agent_round_seed(1, 0, 1))];
        let mut out =
            agent_explore_lockstep(&mdp, &bc, 1, &mut rngs, InitialStateMode::Uniform, false);
        out.reports[0].round = 7;
        assert!(matches!(
            server.aggregate_round(&out.reports, &consts(), IOTA),
            Err(ProtocolError::RoundMismatch { .. })
        ));
    }

    #[test]
    fn protocol_rejects_off_policy_action() {
        let mdp = generate_random_mdp(3, 2, 2, 2).unwrap();
        let mut server = ServerState::new(3, 2, 2, 1);
        let bc = server.make_broadcast();
        let mut rngs = vec![seeding::new_rng(seeding::agent_round_seed(1, 0, 1))];
        let mut out =
            agent_explore_lockstep(&mdp, &bc, 1, &mut rngs, InitialStateMode::Uniform, false);
        // Flip the action echo on some visited entry.
        let (h, s) = {
            let mut found = (0, 0);
            'outer: for h in 0..3 {
                for s in 0..2 {
                    if out.reports[0].entry(h, s).n > 0 {
                        found = (h, s);
                        break 'outer;
                    }
                }
            }
            found
        };
        out.reports[0].entry_mut(h, s).action = 1 - bc.policy.action(h, s);
        assert!(matches!(
            server.aggregate_round(&out.reports, &consts(), IOTA),
            Err(ProtocolError::OffPolicyEntry { .. })
        ));
    }

    #[test]
    fn protocol_rejects_cap_violation_and_missing_equality() {
        let mdp = generate_random_mdp(3, 2, 2, 2).unwrap();
        let mut server = ServerState::new(3, 2, 2, 1);
        let bc = server.make_broadcast();
        let mut rngs = vec![seeding::new_rng(seeding::agent_round_seed(1, 0, 1))];
        let out = agent_explore_lockstep(&mdp, &bc, 1, &mut rngs, InitialStateMode::Uniform, false);

        let mut over = out.reports.clone();
        let (h, s) = (
            0,
            over[0].entries[0..2]
                .iter()
                .position(|e| e.n > 0)
                .unwrap_or(0),
        );
        over[0].entry_mut(h, s).n = 99;
        assert!(matches!(
            server.aggregate_round(&over, &consts(), IOTA),
            Err(ProtocolError::CapExceeded { .. })
        ));

        let mut empty = out.reports.clone();
        for e in empty[0].entries.iter_mut() {
            *e = ReportEntry::zero();
        }
        assert!(matches!(
            server.aggregate_round(&empty, &consts(), IOTA),
            Err(ProtocolError::MissingTriggerEquality)
        ));
    }

    #[test]
    fn fed_m1_and_single_agent_are_bit_identical() {
        let mdp = generate_random_mdp(3, 2, 2, 44).unwrap();
        let master = 1234;
        let c = consts();

        let mut fed = ServerState::new(3, 2, 2, 1);
        let mut single = ServerState::new(3, 2, 2, 1);
        for _ in 0..50 {
            let round = fed.round;
            let bc = fed.make_broadcast();
            let mut rngs = vec![seeding::new_rng(seeding::agent_round_seed(
                master, 0, round,
            ))];
            let out =
                agent_explore_lockstep(&mdp, &bc, 1, &mut rngs, InitialStateMode::Uniform, false);
            fed.aggregate_round(&out.reports, &c, IOTA).unwrap();

            let mut rng = seeding::new_rng(seeding::agent_round_seed(master, 0, single.round));
            single_agent_round(
                &mut single,
                &mdp,
                &mut rng,
                &c,
                IOTA,
                InitialStateMode::Uniform,
            );

            assert!(
                states_bit_identical(&fed, &single),
                "diverged at round {round}"
            );
        }
    }

    #[test]
    fn checkpoint_round_trips_and_continues_identically() {
        let mdp = generate_random_mdp(3, 2, 2, 10).unwrap();
        let master = 777;
        let mut server = ServerState::new(3, 2, 2, 2);
        for _ in 0..4 {
            run_fed_round(&mut server, &mdp, master);
        }
        let cp = server.checkpoint(master);
        let text = cp.to_json();
        let restored_cp = Checkpoint::from_json(&text).unwrap();
        assert_eq!(cp, restored_cp);
        let mut restored = ServerState::from_checkpoint(&restored_cp);
        assert!(states_bit_identical(&server, &restored));

        for _ in 0..3 {
            run_fed_round(&mut server, &mdp, master);
            run_fed_round(&mut restored, &mdp, restored_cp.master_seed);
        }
        assert!(states_bit_identical(&server, &restored));
    }

    #[test]
    fn tie_break_changes_early_policies() {
        // All Q start equal, so the first argmax is all ties.
        let server_lo = ServerState::new(2, 2, 2, 1);
        let mut server_hi = ServerState::new(2, 2, 2, 1);
        server_hi.tie_break = TieBreak::HighestIndex;
        assert_eq!(server_lo.row_argmax(0, 0).1, 0);
        assert_eq!(server_hi.row_argmax(0, 0).1, 1);
    }
}
