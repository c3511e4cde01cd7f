//! Simulator and library for federated model-free reinforcement learning on
//! tabular episodic MDPs.
//!
//! The library implements a round-based federated Q-learning scheme in which a
//! central server broadcasts a policy together with value, lower-bound and
//! reference tables, agents explore in lockstep until an event-triggered visit
//! cap fires, and the server merges the reported sufficient statistics into
//! UCB-, LCB- and reference-advantage-type Q-estimates. Regret, policy
//! switches, round counts and communicated scalars are accounted exactly.
//!
//! Crate layout:
//!
//! - [`mdp`]: tabular environments, seeded generation, episode sampling.
//! - [`oracle`]: exact dynamic-programming ground truth (optimal values, gaps,
//!   conditional variance, visiting probabilities).
//! - [`schedule`]: stage-dependent learning rates and cumulative bonuses.
//! - [`rounds`]: visit caps, lockstep exploration, communication ledger.
//! - [`eslc`]: the early-settled low-cost server/agent state machines.
//! - [`baseline`]: a Hoeffding-style comparison learner.
//! - [`harness`]: full runs, multi-seed replication, bound checks.
//! - [`report`]: CSV/JSON emission for runs and ensembles.
//! - [`verify`]: the release-gate property suite.
//!
//! With the default `parallel` feature, replications run on a rayon pool;
//! without it every entry point falls back to sequential execution.

pub mod baseline;
pub mod eslc;
pub mod harness;
pub mod jsonio;
pub mod mdp;
pub mod oracle;
pub mod report;
pub mod rounds;
pub mod schedule;
pub mod seeding;
pub mod verify;

pub use eslc::{AgentRoundReport, ProtocolError, RoundBroadcast, ServerState, TieBreak};
pub use harness::{Algorithm, IotaMode, RunConfig, RunMetrics};
pub use mdp::{DeterministicPolicy, TabularMdp, Trajectory};
pub use oracle::OracleTables;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Map `f` over `0..n` sequentially regardless of features. Exists so that
/// benchmarks can compare the two execution modes side by side.
pub fn map_indexed_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Cap the global worker pool at `n` threads. Returns an error if the pool
/// was already initialized.
#[cfg(feature = "parallel")]
pub fn configure_worker_pool(n: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}
