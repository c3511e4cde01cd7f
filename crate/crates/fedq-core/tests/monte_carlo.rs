//! Monte Carlo cross-checks of the dynamic-programming oracle: policy values
//! against million-episode return means, and visiting probabilities against
//! empirical visitation frequencies.

mod common;

use fedq_core::mdp::{
    generate_random_mdp, sample_episode, sample_initial_state, DeterministicPolicy,
};
use fedq_core::oracle::{evaluate_policy, OracleTables};
use fedq_core::seeding;
use ndarray::Array2;

#[test]
fn policy_value_matches_million_episode_mean() {
    let mdp = generate_random_mdp(5, 3, 2, 7).unwrap();
    let policy = DeterministicPolicy::from_fn(5, 3, |h, s| (h + s) % 2);
    let v_pi = evaluate_policy(&mdp, &policy);
    let brute = common::brute_policy_value(&mdp, &policy);
    for h in 0..5 {
        for s in 0..3 {
            assert!((v_pi[[h, s]] - brute[[h, s]]).abs() < 1e-12);
        }
    }

    let n = 1_000_000usize;
    let s1 = 1usize;
    let mut rng = seeding::new_rng(2024);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let ret = sample_episode(&mdp, &policy, s1, &mut rng).total_reward();
        sum += ret;
        sum_sq += ret * ret;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt();
    let diff = (mean - v_pi[[0, s1]]).abs();
    assert!(
        diff <= 3.0 * se,
        "MC mean {mean} vs exact {} differs by {diff} > 3 SE = {}",
        v_pi[[0, s1]],
        3.0 * se
    );
}

#[test]
fn visiting_probabilities_match_million_episode_frequencies() {
    let mdp = generate_random_mdp(2, 2, 2, 3).unwrap();
    let oracle = OracleTables::compute(&mdp);
    let policy = &oracle.canonical_policy;

    let n = 1_000_000usize;
    let mut rng = seeding::new_rng(55);
    let mut visits = Array2::<f64>::zeros((2, 2));
    for _ in 0..n {
        let s1 = sample_initial_state(2, &mut rng);
        let traj = sample_episode(&mdp, policy, s1, &mut rng);
        for (h, step) in traj.steps.iter().enumerate() {
            visits[[h, step.state]] += 1.0;
        }
    }
    for h in 0..2 {
        for s in 0..2 {
            let p = oracle.p_star[[h, s]];
            let freq = visits[[h, s]] / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "(h={h},s={s}): freq {freq} vs p* {p} beyond 3 SE"
            );
        }
    }
}
