//! File emission for runs and ensembles: per-round CSV, ensemble JSON,
//! figure-data CSV, and the bound-check report. Every file embeds the exact
//! run configuration and the crate version, and contains nothing
//! non-deterministic, so reruns byte-reproduce their outputs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::harness::{BoundCheckReport, EnsembleSummary, RunConfig, RunMetrics};
use crate::jsonio;

fn provenance_line(config: &RunConfig) -> String {
    #[derive(Serialize)]
    struct Provenance<'a> {
        version: &'static str,
        config: &'a RunConfig,
    }
    let p = Provenance {
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    format!(
        "# {}",
        jsonio::to_string_precise(&p).expect("provenance serializes")
    )
}

/// Per-round metrics CSV: one row per round (one per episode for the episodic
/// baseline), preceded by a `#` provenance comment.
pub fn round_csv(metrics: &RunMetrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", provenance_line(&metrics.config));
    let _ = writeln!(
        out,
        "algorithm,round,episodes_per_agent,cumulative_episodes,regret_increment,cumulative_regret,regret_over_log,policy_changed,cumulative_switches,cumulative_scalars"
    );
    let tag = metrics.config.algorithm.tag();
    for (idx, r) in metrics.records.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            tag,
            r.round,
            r.episodes_per_agent,
            r.cumulative_episodes,
            r.regret_increment,
            r.cumulative_regret,
            metrics.regret_over_log(idx),
            u8::from(r.policy_changed),
            r.cumulative_switches,
            r.cumulative_scalars,
        );
    }
    out
}

/// Figure-data CSV over the ensemble grid. `regret_over_log` is the median
/// (it equals `p50`); `p10`/`p50`/`p90` are the percentile bands of
/// `Regret(T) / ln(T/H + 1)` across replications.
pub fn figure_csv(summary: &EnsembleSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", provenance_line(&summary.config));
    let _ = writeln!(out, "# regret_over_log is the median band (equals p50)");
    let _ = writeln!(out, "episodes,regret_over_log,p10,p50,p90");
    for (g, &episodes) in summary.grid.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            episodes,
            summary.regret_over_log_p50[g],
            summary.regret_over_log_p10[g],
            summary.regret_over_log_p50[g],
            summary.regret_over_log_p90[g],
        );
    }
    out
}

/// Ensemble summary JSON (17-significant-digit floats).
pub fn ensemble_json(summary: &EnsembleSummary) -> String {
    #[derive(Serialize)]
    struct Document<'a> {
        version: &'static str,
        #[serde(flatten)]
        summary: &'a EnsembleSummary,
    }
    jsonio::to_string_precise(&Document {
        version: env!("CARGO_PKG_VERSION"),
        summary,
    })
    .expect("ensemble serializes")
}

/// Bound-check report JSON for a batch of runs.
pub fn bound_report_json(reports: &[BoundCheckReport]) -> String {
    #[derive(Serialize)]
    struct Document<'a> {
        version: &'static str,
        all_pass: bool,
        checks: &'a [BoundCheckReport],
    }
    let all_pass = reports.iter().all(|r| r.pass);
    jsonio::to_string_precise(&Document {
        version: env!("CARGO_PKG_VERSION"),
        all_pass,
        checks: reports,
    })
    .expect("bound report serializes")
}

pub fn write_string(path: &Path, content: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)
}
