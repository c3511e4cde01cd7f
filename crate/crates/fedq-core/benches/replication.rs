//! Compares rayon-parallel and sequential execution of a replication
//! ensemble, on a small federated configuration and on the single-agent
//! episodic baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fedq_core::harness::{replicate_on, replicate_on_sequential, Algorithm, IotaMode, RunConfig};
use fedq_core::mdp::{generate_random_mdp, InitialStateMode};
use fedq_core::oracle::OracleTables;
use fedq_core::schedule::BonusConstants;

fn config(algorithm: Algorithm, m: usize, episodes_per_agent: u64) -> RunConfig {
    RunConfig {
        h: 3,
        s: 2,
        a: 2,
        m,
        t0: (3 * m) as u64 * episodes_per_agent,
        seed: 7,
        constants: BonusConstants::default(),
        iota_mode: IotaMode::Fixed { value: 1.0 },
        algorithm,
        initial_state_mode: InitialStateMode::Uniform,
    }
}

fn bench_replication(c: &mut Criterion) {
    let mut group = c.benchmark_group("replication_ensemble");
    group.sample_size(10);

    for (name, cfg, reps) in [
        (
            "fedq_m4_1500ep",
            config(Algorithm::FedqEslc, 4, 1500),
            8usize,
        ),
        (
            "hoeffding_m1_3000ep",
            config(Algorithm::HoeffdingBaseline, 1, 3000),
            8,
        ),
    ] {
        let mdp = generate_random_mdp(cfg.h, cfg.s, cfg.a, cfg.seed).unwrap();
        let oracle = OracleTables::compute(&mdp);
        group.bench_with_input(BenchmarkId::new("parallel", name), &cfg, |b, cfg| {
            b.iter(|| replicate_on(cfg, &mdp, &oracle, reps).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", name), &cfg, |b, cfg| {
            b.iter(|| replicate_on_sequential(cfg, &mdp, &oracle, reps).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replication);
criterion_main!(benches);
