use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use serde::Serialize;

use clawcoin_core::sim::agents::Regime;
use clawcoin_core::sim::metrics::{fmt_value, MetricsReport};
use clawcoin_core::sim::scenario::{ScenarioConfig, ScenarioError};
use clawcoin_core::sim::{run_experiment, Experiment, ScenarioOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Run a clawcoin scenario and write its metrics and event logs.
#[derive(Debug, Parser)]
#[command(name = "clawcoin", version)]
struct Manifest {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; created if missing. Existing reports are never overwritten.
    #[arg(long)]
    out: PathBuf,
    /// capacity | pricing | market | workflow | survival | sanity | mev | all
    #[arg(long, default_value = "all")]
    experiment: Experiment,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
enum Failure {
    MissingFile { path: String, message: String },
    Parse { message: String },
    SchemaViolation { field: String, message: String },
    Output { message: String },
    #[serde(rename = "invariant_failure")]
    Invariant { invariant: String, detail: String },
}

fn report_failures(failures: &[Failure]) {
    for f in failures {
        eprintln!("{}", serde_json::to_string(f).expect("failure serializes"));
    }
}

/// Run-level outputs written alongside the metrics.
#[derive(Serialize)]
struct RunRecord<'a> {
    scenario: String,
    experiment: String,
    seed: u64,
    format: &'static str,
    trajectory_digest: String,
    invariant_failures: &'a [String],
}

fn main() -> ExitCode {
    let manifest = Manifest::parse();
    let config = match load(&manifest.scenario) {
        Ok(c) => c,
        Err(failures) => {
            report_failures(&failures);
            return ExitCode::from(2);
        }
    };
    let seed = config.effective_seed(manifest.seed);
    let output = match run_experiment(&config, seed, manifest.experiment) {
        Ok(o) => o,
        Err(e) => {
            report_failures(&scenario_failures(e));
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_outputs(&manifest, seed, &output) {
        report_failures(&[Failure::Output { message: format!("{e:#}") }]);
        return ExitCode::from(2);
    }
    print_summary(&manifest, &output.report);
    if output.passed() {
        ExitCode::SUCCESS
    } else {
        let failures: Vec<Failure> = output
            .report
            .invariant_failures
            .iter()
            .map(|f| {
                let (name, detail) = f.split_once(": ").unwrap_or((f.as_str(), ""));
                Failure::Invariant {
                    invariant: name.to_string(),
                    detail: detail.to_string(),
                }
            })
            .collect();
        report_failures(&failures);
        ExitCode::from(1)
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Vec<Failure>> {
    let text = fs::read_to_string(path).map_err(|e| {
        vec![Failure::MissingFile {
            path: path.display().to_string(),
            message: e.to_string(),
        }]
    })?;
    ScenarioConfig::from_json(&text).map_err(scenario_failures)
}

fn scenario_failures(e: ScenarioError) -> Vec<Failure> {
    match e {
        ScenarioError::Parse(e) => vec![Failure::Parse { message: e.to_string() }],
        ScenarioError::Invalid(errors) => errors
            .into_iter()
            .map(|e| Failure::SchemaViolation {
                field: e.path,
                message: e.message,
            })
            .collect(),
    }
}

/// Creates `name` in `dir`, refusing to replace an earlier run's file.
fn create(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = dir.join(name);
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    f.write_all(contents)
        .with_context(|| format!("cannot write {}", path.display()))
}

fn write_outputs(manifest: &Manifest, seed: u64, output: &ScenarioOutput) -> Result<()> {
    let dir = &manifest.out;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let report = &output.report;
    match manifest.format {
        Format::Csv => create(dir, "metrics.csv", report.to_csv().as_bytes())?,
        Format::Json => create(dir, "metrics.json", (serde_json::to_string_pretty(report)? + "\n").as_bytes())?,
    }
    create(dir, "events.jsonl", output.protocol_events.to_jsonl().as_bytes())?;
    create(dir, "settlement_events.jsonl", output.settlement_events.to_jsonl().as_bytes())?;
    let mut epochs = String::new();
    for r in &output.records {
        epochs.push_str(&serde_json::to_string(r)?);
        epochs.push('\n');
    }
    create(dir, "epochs.jsonl", epochs.as_bytes())?;
    let record = RunRecord {
        scenario: manifest.scenario.display().to_string(),
        experiment: manifest.experiment.to_string(),
        seed,
        format: match manifest.format {
            Format::Csv => "csv",
            Format::Json => "json",
        },
        trajectory_digest: report.trajectory_digest.to_hex(),
        invariant_failures: &report.invariant_failures,
    };
    create(dir, "run.json", (serde_json::to_string_pretty(&record)? + "\n").as_bytes())
}

fn print_summary(manifest: &Manifest, report: &MetricsReport) {
    println!(
        "scenario {}  experiment {}  seed {}  epochs {}",
        manifest.scenario.display(),
        manifest.experiment,
        report.seed,
        report.epochs
    );
    let regimes: Vec<Regime> = Regime::ALL
        .into_iter()
        .filter(|r| {
            report.capacity.contains_key(r)
                || report.pricing.contains_key(r)
                || report.market.contains_key(r)
                || report.workflow.contains_key(r)
                || report.survival.contains_key(r)
        })
        .collect();
    if !regimes.is_empty() {
        println!(
            "{:<22}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}",
            "regime", "cap_cov", "dispersion", "accept", "wf_fail", "wf_overrun", "survivors"
        );
        for r in regimes {
            let cell = |v: Option<f64>| v.map_or("-".to_string(), fmt_value);
            let deepest = report
                .workflow
                .get(&r)
                .and_then(|w| w.by_depth.values().next_back().map(|d| d.failure));
            println!(
                "{:<22}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}",
                r.name(),
                cell(report.capacity.get(&r).map(|s| s.cov)),
                cell(report.pricing.get(&r).map(|s| s.dispersion)),
                cell(report.market.get(&r).map(|s| s.acceptance)),
                cell(deepest),
                cell(report.workflow.get(&r).map(|s| s.overrun)),
                cell(report.survival.get(&r).map(|s| s.survivors as f64)),
            );
        }
    }
    if let Some(s) = &report.sanity {
        println!(
            "stale window: {:.0}% of redemptions queued, {} mints executed, recovery lag {}",
            100.0 * s.stale.queued_fraction,
            s.stale.mints_executed,
            s.stale.recovery_lag.map_or("-".into(), |l| l.to_string())
        );
        println!(
            "vendor bias: mean {:.4}  median {:.4}  median+cap {:.4}",
            s.bias.mean, s.bias.median, s.bias.median_cap
        );
        for b in &s.bursts {
            println!(
                "burst {:<10} peak queue {:>3}  honored within 5: {:>5.1}%  paused {}  loss {}",
                b.name,
                b.peak_queue,
                100.0 * b.honored_within_5,
                b.auto_pause,
                fmt_value(b.involuntary_loss)
            );
        }
    }
    if let Some(m) = &report.mev {
        println!(
            "sandwich search: {} placements, max profit / bound {:.4}, violations {}",
            m.placements, m.max_bound_ratio, m.violations
        );
    }
    if report.invariant_failures.is_empty() {
        println!("invariants: ok");
    } else {
        println!("invariants: {} failed", report.invariant_failures.len());
    }
}
