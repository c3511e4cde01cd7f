//! Command-line driver: generate environments, run experiments from a
//! config file, and run the release-gate property suite.
//!
//! Exit codes: 0 on success, 1 on a property or bound failure, 2 on a
//! configuration error. `FEDQ_WORKERS` caps the replication worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fedq_core::harness::{self, Algorithm, BoundCheckReport, RunConfig};
use fedq_core::mdp::{generate_random_mdp, TabularMdp};
use fedq_core::oracle::OracleTables;
use fedq_core::report;
use fedq_core::verify;

#[derive(Parser)]
#[command(
    name = "fedq",
    version,
    about = "Federated tabular Q-learning simulator",
    long_about = "Simulates round-based federated Q-learning with early reference settlement \
                  on tabular episodic MDPs, with exact regret, switching, round and \
                  communication accounting.\n\nSet FEDQ_WORKERS to cap the replication worker pool."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random environment plus its cached ground-truth tables.
    GenMdp(GenMdpArgs),
    /// Run every (algorithm, replication) pair of an experiment file.
    Run(RunArgs),
    /// Run the property suite and print one pass/fail line per property.
    Verify,
}

#[derive(Args)]
struct GenMdpArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    horizon: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    states: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    actions: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the environment JSON; the ground-truth cache lands
    /// next to it with an `.oracle.json` suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (JSON).
    #[arg(long)]
    experiment: PathBuf,
    /// Override the experiment's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// One run configuration plus the experiment-level fields: how many
/// replications, where outputs go, which algorithms to sweep, and an
/// optional pre-generated environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExperimentFile {
    run: RunConfig,
    n_replications: usize,
    output_dir: PathBuf,
    #[serde(default)]
    algorithms: Vec<Algorithm>,
    #[serde(default)]
    mdp_path: Option<PathBuf>,
}

enum CliError {
    /// Configuration problems: unreadable files, invalid dimensions,
    /// mismatched environments. Exit code 2.
    Config(String),
    /// Property or bound violations. Exit code 1.
    Failure(String),
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_workers();
    let result = match cli.command {
        Command::GenMdp(args) => cmd_gen_mdp(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Verify => cmd_verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(msg)) => {
            eprintln!("failure: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_workers() {
    if let Ok(value) = std::env::var("FEDQ_WORKERS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                #[cfg(feature = "parallel")]
                if let Err(e) = fedq_core::configure_worker_pool(n) {
                    eprintln!("warning: could not configure {n} workers: {e}");
                }
                #[cfg(not(feature = "parallel"))]
                eprintln!("warning: FEDQ_WORKERS={n} ignored (built without the parallel feature)");
            }
            _ => eprintln!("warning: ignoring invalid FEDQ_WORKERS={value}"),
        }
    }
}

fn oracle_cache_path(mdp_path: &Path) -> PathBuf {
    let stem = mdp_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mdp");
    mdp_path.with_file_name(format!("{stem}.oracle.json"))
}

fn cmd_gen_mdp(args: &GenMdpArgs) -> Result<(), CliError> {
    let (h, s, a) = (
        args.horizon as usize,
        args.states as usize,
        args.actions as usize,
    );
    let mdp = generate_random_mdp(h, s, a, args.seed).map_err(CliError::config)?;
    let oracle = OracleTables::compute(&mdp);
    let hash = mdp.content_hash();

    report::write_string(&args.out, &mdp.to_json()).map_err(CliError::config)?;
    let cache = oracle_cache_path(&args.out);
    report::write_string(&cache, &oracle.to_json(&hash)).map_err(CliError::config)?;

    // Round-trip check: the written file must reproduce the environment.
    let back = std::fs::read_to_string(&args.out)
        .map_err(CliError::config)
        .and_then(|text| TabularMdp::from_json(&text).map_err(CliError::config))?;
    if back.content_hash() != hash {
        return Err(CliError::Failure(
            "written environment does not round-trip".into(),
        ));
    }

    println!(
        "environment: H={h} S={s} A={a} seed={} -> {}",
        args.seed,
        args.out.display()
    );
    println!("oracle cache: {}", cache.display());
    println!("content hash: {hash}");
    match oracle.delta_min {
        Some(d) => println!("delta_min: {d}"),
        None => println!("delta_min: degenerate (no strictly positive gap)"),
    }
    println!("max conditional variance: {}", oracle.q_var_max);
    match oracle.c_st {
        Some(c) => println!("c_st: {c}"),
        None => println!("c_st: undefined (multiple optimal actions on the support)"),
    }
    let multi = oracle.uniqueness.multiple_optimal.len();
    println!(
        "optimal-action multiplicity: {multi} state-step pair(s){}",
        if oracle.uniqueness.multiplicity_on_support {
            ", some on the support"
        } else {
            ""
        }
    );
    if oracle.delta_min.is_none() {
        eprintln!("warning: degenerate environment; gap-dependent metrics are undefined");
    }
    Ok(())
}

fn load_environment(
    experiment: &ExperimentFile,
    experiment_dir: &Path,
) -> Result<(TabularMdp, OracleTables), CliError> {
    let run = &experiment.run;
    match &experiment.mdp_path {
        Some(path) => {
            let resolved = if path.is_absolute() {
                path.clone()
            } else {
                experiment_dir.join(path)
            };
            let text = std::fs::read_to_string(&resolved).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", resolved.display()))
            })?;
            let mdp = TabularMdp::from_json(&text).map_err(CliError::config)?;
            if mdp.horizon() != run.h || mdp.num_states() != run.s || mdp.num_actions() != run.a {
                return Err(CliError::Config(format!(
                    "environment {} has (H={}, S={}, A={}), experiment wants (H={}, S={}, A={})",
                    resolved.display(),
                    mdp.horizon(),
                    mdp.num_states(),
                    mdp.num_actions(),
                    run.h,
                    run.s,
                    run.a
                )));
            }
            let hash = mdp.content_hash();
            let cache = oracle_cache_path(&resolved);
            let oracle = std::fs::read_to_string(&cache)
                .ok()
                .and_then(|text| OracleTables::from_json(&text, &hash).ok().flatten())
                .unwrap_or_else(|| OracleTables::compute(&mdp));
            Ok((mdp, oracle))
        }
        None => {
            let mdp =
                generate_random_mdp(run.h, run.s, run.a, run.seed).map_err(CliError::config)?;
            let oracle = OracleTables::compute(&mdp);
            Ok((mdp, oracle))
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.experiment)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.experiment.display())))?;
    let experiment: ExperimentFile = serde_json::from_str(&text).map_err(CliError::config)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| experiment.output_dir.clone());
    let experiment_dir = args
        .experiment
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();

    let algorithms = if experiment.algorithms.is_empty() {
        vec![experiment.run.algorithm]
    } else {
        experiment.algorithms.clone()
    };
    if experiment.n_replications == 0 {
        return Err(CliError::Config("n_replications must be at least 1".into()));
    }
    for &algorithm in &algorithms {
        let cfg = RunConfig {
            algorithm,
            ..experiment.run.clone()
        };
        cfg.validate().map_err(CliError::config)?;
    }

    let (mdp, oracle) = load_environment(&experiment, &experiment_dir)?;

    let mut bound_reports: Vec<BoundCheckReport> = Vec::new();
    for &algorithm in &algorithms {
        let cfg = RunConfig {
            algorithm,
            ..experiment.run.clone()
        };
        let metrics = harness::run_replications(&cfg, &mdp, &oracle, experiment.n_replications)
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (i, m) in metrics.iter().enumerate() {
            let path = out_dir.join(format!("{}_rep{:03}.csv", algorithm.tag(), i));
            report::write_string(&path, &report::round_csv(m)).map_err(CliError::config)?;
            bound_reports.push(harness::theorem_bound_check(m));
        }
        let summary = harness::summarize_runs(&cfg, &metrics);
        let ensemble_path = out_dir.join(format!("ensemble_{}.json", algorithm.tag()));
        report::write_string(&ensemble_path, &report::ensemble_json(&summary))
            .map_err(CliError::config)?;
        let figure_path = out_dir.join(format!("figure_{}.csv", algorithm.tag()));
        report::write_string(&figure_path, &report::figure_csv(&summary))
            .map_err(CliError::config)?;
        let final_median = summary.regret_p50.last().copied().unwrap_or(0.0);
        println!(
            "{}: {} replications, median final regret {final_median:.4}",
            algorithm.tag(),
            experiment.n_replications
        );
    }

    let bounds_path = out_dir.join("bounds.json");
    report::write_string(&bounds_path, &report::bound_report_json(&bound_reports))
        .map_err(CliError::config)?;

    let violations: Vec<&BoundCheckReport> = bound_reports.iter().filter(|r| !r.pass).collect();
    if !violations.is_empty() {
        return Err(CliError::Failure(format!(
            "{} run(s) violated a deterministic bound; see {}",
            violations.len(),
            bounds_path.display()
        )));
    }
    println!(
        "bound checks: {} run(s), all within bounds",
        bound_reports.len()
    );
    Ok(())
}

fn cmd_verify() -> Result<(), CliError> {
    let results = verify::run_default_suite();
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {} - {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CliError::Failure(format!("{failed} propert(ies) failed")))
    } else {
        Ok(())
    }
}
