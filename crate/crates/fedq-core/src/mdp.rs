//! Tabular episodic MDPs: construction, seeded random generation and episode
//! sampling under a deterministic policy.
//!
//! States and actions are 1-based in the documentation and contiguous 0-based
//! indices internally. The absorbing state after the final step is implicit:
//! episodes simply end after `H` steps and every value function is zero
//! there.

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonio;

/// Tolerance for transition-row normalization.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum MdpError {
    #[error("H, S and A must all be at least 1 (got H={h}, S={s}, A={a})")]
    ZeroDimension { h: usize, s: usize, a: usize },
    #[error("reward at (h={h}, s={s}, a={a}) is {value}, outside [0,1]")]
    RewardOutOfRange {
        h: usize,
        s: usize,
        a: usize,
        value: f64,
    },
    #[error("transition row at (h={h}, s={s}, a={a}) sums to {sum}, not 1 within {ROW_SUM_TOL}")]
    RowNotNormalized {
        h: usize,
        s: usize,
        a: usize,
        sum: f64,
    },
    #[error("transition entry at (h={h}, s={s}, a={a}) is negative: {value}")]
    NegativeProbability {
        h: usize,
        s: usize,
        a: usize,
        value: f64,
    },
    #[error("table shape does not match (H={h}, S={s}, A={a})")]
    ShapeMismatch { h: usize, s: usize, a: usize },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A finite-horizon tabular MDP with step-indexed kernels and deterministic
/// rewards in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    h: usize,
    s: usize,
    a: usize,
    rewards: Array3<f64>,     // [H, S, A]
    transitions: Array4<f64>, // [H, S, A, S]
}

impl TabularMdp {
    /// Build an MDP from explicit tables, validating every invariant.
    pub fn new(
        h: usize,
        s: usize,
        a: usize,
        rewards: Array3<f64>,
        transitions: Array4<f64>,
    ) -> Result<Self, MdpError> {
        if h == 0 || s == 0 || a == 0 {
            return Err(MdpError::ZeroDimension { h, s, a });
        }
        if rewards.dim() != (h, s, a) || transitions.dim() != (h, s, a, s) {
            return Err(MdpError::ShapeMismatch { h, s, a });
        }
        for ((hh, ss, aa), &r) in rewards.indexed_iter() {
            if !(0.0..=1.0).contains(&r) {
                return Err(MdpError::RewardOutOfRange {
                    h: hh,
                    s: ss,
                    a: aa,
                    value: r,
                });
            }
        }
        for hh in 0..h {
            for ss in 0..s {
                for aa in 0..a {
                    let mut sum = 0.0;
                    for sn in 0..s {
                        let p = transitions[[hh, ss, aa, sn]];
                        if p < 0.0 {
                            return Err(MdpError::NegativeProbability {
                                h: hh,
                                s: ss,
                                a: aa,
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(MdpError::RowNotNormalized {
                            h: hh,
                            s: ss,
                            a: aa,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(Self {
            h,
            s,
            a,
            rewards,
            transitions,
        })
    }

    pub fn horizon(&self) -> usize {
        self.h
    }

    pub fn num_states(&self) -> usize {
        self.s
    }

    pub fn num_actions(&self) -> usize {
        self.a
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[[h, s, a]]
    }

    pub fn rewards(&self) -> &Array3<f64> {
        &self.rewards
    }

    pub fn transitions(&self) -> &Array4<f64> {
        &self.transitions
    }

    /// The probability row over next states for `(h, s, a)`.
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let offset = ((h * self.s + s) * self.a + a) * self.s;
        // Arrays are always in standard layout here.
        &self.transitions.as_slice().expect("standard layout")[offset..offset + self.s]
    }

    /// Serialize to the canonical JSON document (flat row-major tables,
    /// 17-significant-digit floats).
    pub fn to_json(&self) -> String {
        let file = MdpFile {
            h: self.h,
            s: self.s,
            a: self.a,
            rewards: self.rewards.iter().copied().collect(),
            transitions: self.transitions.iter().copied().collect(),
        };
        jsonio::to_string_precise(&file).expect("mdp serialization cannot fail")
    }

    /// Parse the canonical JSON document, re-validating all invariants.
    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let file: MdpFile = serde_json::from_str(text)?;
        let (h, s, a) = (file.h, file.s, file.a);
        if h == 0 || s == 0 || a == 0 {
            return Err(MdpError::ZeroDimension { h, s, a });
        }
        let rewards = Array3::from_shape_vec((h, s, a), file.rewards)
            .map_err(|_| MdpError::ShapeMismatch { h, s, a })?;
        let transitions = Array4::from_shape_vec((h, s, a, s), file.transitions)
            .map_err(|_| MdpError::ShapeMismatch { h, s, a })?;
        Self::new(h, s, a, rewards, transitions)
    }

    /// SHA-256 of the canonical JSON document, used to key oracle caches.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct MdpFile {
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "A")]
    a: usize,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
}

/// A deterministic policy: one action per (step, state).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    actions: Array2<usize>, // [H, S]
}

impl DeterministicPolicy {
    pub fn new(actions: Array2<usize>) -> Self {
        Self { actions }
    }

    /// The policy that always plays action 0.
    pub fn lowest_action(h: usize, s: usize) -> Self {
        Self {
            actions: Array2::zeros((h, s)),
        }
    }

    pub fn from_fn(h: usize, s: usize, f: impl Fn(usize, usize) -> usize) -> Self {
        Self {
            actions: Array2::from_shape_fn((h, s), |(hh, ss)| f(hh, ss)),
        }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[[h, s]]
    }

    pub fn set_action(&mut self, h: usize, s: usize, a: usize) {
        self.actions[[h, s]] = a;
    }

    pub fn actions(&self) -> &Array2<usize> {
        &self.actions
    }
}

/// One environment step of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// An episode of exactly `H` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn initial_state(&self) -> usize {
        self.steps[0].state
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|st| st.reward).sum()
    }
}

/// How episodes choose their initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialStateMode {
    #[default]
    Uniform,
    Fixed {
        state: usize,
    },
}

/// Generate a random MDP: rewards i.i.d. uniform on `[0,1]`, each transition
/// row uniform on the simplex (normalized i.i.d. exponential draws).
///
/// The same `(h, s, a, seed)` always yields a bit-identical MDP.
pub fn generate_random_mdp(
    h: usize,
    s: usize,
    a: usize,
    seed: u64,
) -> Result<TabularMdp, MdpError> {
    if h == 0 || s == 0 || a == 0 {
        return Err(MdpError::ZeroDimension { h, s, a });
    }
    let mut rng = crate::seeding::new_rng(seed);
    let mut rewards = Array3::zeros((h, s, a));
    for hh in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                rewards[[hh, ss, aa]] = rng.gen::<f64>();
            }
        }
    }
    let mut transitions = Array4::zeros((h, s, a, s));
    let mut row = vec![0.0; s];
    for hh in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                if s == 1 {
                    transitions[[hh, ss, aa, 0]] = 1.0;
                    continue;
                }
                loop {
                    let mut sum = 0.0;
                    for e in row.iter_mut() {
                        // Exponential(1) via inverse CDF; 1 - u is in (0, 1].
                        *e = -(1.0 - rng.gen::<f64>()).ln();
                        sum += *e;
                    }
                    if sum > 0.0 {
                        for (sn, e) in row.iter().enumerate() {
                            transitions[[hh, ss, aa, sn]] = e / sum;
                        }
                        break;
                    }
                }
            }
        }
    }
    TabularMdp::new(h, s, a, rewards, transitions)
}

/// Draw an initial state uniformly from `0..s`.
pub fn sample_initial_state(s: usize, rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(s >= 1);
    rng.gen_range(0..s)
}

/// Draw the initial state according to `mode`. Fixed mode consumes no
/// randomness.
pub fn draw_initial_state(mode: InitialStateMode, s: usize, rng: &mut ChaCha8Rng) -> usize {
    match mode {
        InitialStateMode::Uniform => sample_initial_state(s, rng),
        InitialStateMode::Fixed { state } => state,
    }
}

/// Sample the next state from the transition row at `(h, s, a)` with a single
/// uniform draw.
pub fn sample_next_state(
    mdp: &TabularMdp,
    h: usize,
    s: usize,
    a: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let row = mdp.transition_row(h, s, a);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (sn, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return sn;
        }
    }
    row.len() - 1
}

/// Roll one episode from `s1` under `policy`.
pub fn sample_episode(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    s1: usize,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut state = s1;
    for h in 0..mdp.horizon() {
        let action = policy.action(h, state);
        let reward = mdp.reward(h, state, action);
        let next_state = sample_next_state(mdp, h, state, action, rng);
        steps.push(TrajectoryStep {
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;
    }
    Trajectory { steps }
}
