//! Shared helpers for the integration suites: independent brute-force
//! oracles and config builders. Everything here deliberately avoids the
//! library's own computation paths wherever it serves as a check on them.
#![allow(dead_code)] // each test target uses a different subset

use fedq_core::harness::{Algorithm, IotaMode, RunConfig};
use fedq_core::mdp::{DeterministicPolicy, InitialStateMode, TabularMdp};
use fedq_core::schedule::BonusConstants;
use ndarray::Array2;

/// Exact evaluation of one deterministic policy by backward recursion,
/// written independently of the library oracle.
pub fn brute_policy_value(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Array2<f64> {
    let (h, s) = (mdp.horizon(), mdp.num_states());
    let mut v = Array2::<f64>::zeros((h + 1, s));
    for hh in (0..h).rev() {
        for ss in 0..s {
            let aa = policy.action(hh, ss);
            let mut acc = mdp.reward(hh, ss, aa);
            for (sn, &p) in mdp.transition_row(hh, ss, aa).iter().enumerate() {
                acc += p * v[[hh + 1, sn]];
            }
            v[[hh, ss]] = acc;
        }
    }
    v
}

/// Elementwise best value over every deterministic policy of a small MDP.
pub fn enumerate_best_values(mdp: &TabularMdp) -> Array2<f64> {
    let (h, s, a) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let cells = (h * s) as u32;
    let total = (a as u64).pow(cells);
    assert!(total <= 1 << 16, "instance too large to enumerate");
    let mut best = Array2::<f64>::from_elem((h + 1, s), f64::NEG_INFINITY);
    for ss in 0..s {
        best[[h, ss]] = 0.0;
    }
    for code in 0..total {
        let policy = DeterministicPolicy::from_fn(h, s, |hh, sss| {
            ((code / (a as u64).pow((hh * s + sss) as u32)) % a as u64) as usize
        });
        let v = brute_policy_value(mdp, &policy);
        for hh in 0..h {
            for sss in 0..s {
                if v[[hh, sss]] > best[[hh, sss]] {
                    best[[hh, sss]] = v[[hh, sss]];
                }
            }
        }
    }
    best
}

/// A run config with the experimental constants, a fixed-`iota` of 1, and a
/// per-agent episode budget.
pub fn config(
    (h, s, a, m): (usize, usize, usize, usize),
    episodes_per_agent: u64,
    seed: u64,
    algorithm: Algorithm,
) -> RunConfig {
    RunConfig {
        h,
        s,
        a,
        m,
        t0: (h * m) as u64 * episodes_per_agent,
        seed,
        constants: BonusConstants::default(),
        iota_mode: IotaMode::Fixed { value: 1.0 },
        algorithm,
        initial_state_mode: InitialStateMode::Uniform,
    }
}
