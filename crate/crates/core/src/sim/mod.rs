//! Seeded agent-economy simulator.
//!
//! A scenario fixes the basket, risk parameters, adversaries and agent
//! roster; a seed fixes the trajectory. [`run_scenario`] drives the
//! protocol over that trajectory and evaluates the four pricing regimes
//! against it.

pub mod agents;
pub mod experiments;
pub mod metrics;
pub mod mev;
pub mod sanity;
pub mod scenario;
pub mod trajectory;
pub mod workflow;
pub mod world;

use std::fmt;
use std::str::FromStr;

use crate::events::EventLog;

use agents::Regime;
use experiments::{
    capacity_experiment, market_experiment, normalize_prices, pricing_experiment, survival_experiment, RegimeSetup,
};
use metrics::{mean, MetricsReport, ProtocolSummary};
use scenario::{ScenarioConfig, ScenarioError};
use trajectory::Trajectory;
use world::{run_protocol, EpochRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Experiment {
    Capacity,
    Pricing,
    Market,
    Workflow,
    Survival,
    Sanity,
    Mev,
    All,
}

impl Experiment {
    pub const EACH: [Experiment; 7] = [
        Experiment::Capacity,
        Experiment::Pricing,
        Experiment::Market,
        Experiment::Workflow,
        Experiment::Survival,
        Experiment::Sanity,
        Experiment::Mev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Capacity => "capacity",
            Experiment::Pricing => "pricing",
            Experiment::Market => "market",
            Experiment::Workflow => "workflow",
            Experiment::Survival => "survival",
            Experiment::Sanity => "sanity",
            Experiment::Mev => "mev",
            Experiment::All => "all",
        }
    }

    fn includes(self, other: Experiment) -> bool {
        self == Experiment::All || self == other
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::EACH
            .iter()
            .chain([&Experiment::All])
            .find(|e| e.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

pub struct ScenarioOutput {
    pub report: MetricsReport,
    pub records: Vec<EpochRecord>,
    /// Oracle and vault events from the protocol run.
    pub protocol_events: EventLog,
    /// Escrow and bundle events from the clawcoin workflow ledger.
    pub settlement_events: EventLog,
}

impl ScenarioOutput {
    pub fn passed(&self) -> bool {
        self.report.invariant_failures.is_empty()
    }
}

/// Runs every experiment.
pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<ScenarioOutput, ScenarioError> {
    run_experiment(config, seed, Experiment::All)
}

pub fn run_experiment(config: &ScenarioConfig, seed: u64, which: Experiment) -> Result<ScenarioOutput, ScenarioError> {
    config.validate().map_err(ScenarioError::Invalid)?;
    let traj = Trajectory::generate(config, seed);
    let run = run_protocol(config, &traj);
    let mut report = MetricsReport::new(seed, config.epochs, traj.digest());
    report.invariant_failures.extend(run.invariant_failures.iter().cloned());

    let tracking: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.honest_raw.is_finite() && r.honest_raw > 0.0)
        .map(|r| (r.published - r.honest_raw).abs() / r.honest_raw)
        .collect();
    report.protocol = Some(ProtocolSummary {
        published_updates: run.records.iter().skip(1).filter(|r| r.accepted).count() as u64,
        rejections: run.rejections,
        drift_violations: run.drift_violations,
        pause_epochs: run.pause_epochs,
        tracking_error: mean(&tracking),
        stale: run.stale.clone(),
        sandwich: run.sandwich.clone(),
    });
    report.queue = Some(run.queue.clone());

    let setup = RegimeSetup::new(config, &traj, run.nav());
    for r in Regime::ALL {
        if which.includes(Experiment::Capacity) {
            report.capacity.insert(r, capacity_experiment(&setup, r));
        }
        if which.includes(Experiment::Pricing) {
            report.pricing.insert(r, pricing_experiment(&setup, r));
        }
        if which.includes(Experiment::Market) {
            report
                .market
                .insert(r, market_experiment(&setup, &traj, r, config.market.settlement_tolerance));
        }
        if which.includes(Experiment::Survival) {
            report.survival.insert(r, survival_experiment(&setup, &traj, config, r));
        }
    }
    normalize_prices(&mut report.market);

    let mut settlement_events = EventLog::new();
    if which.includes(Experiment::Workflow) {
        let wf = workflow::run_workflow_experiment(&config.workflow.depths, &Regime::ALL, config, &traj, &setup);
        report.invariant_failures.extend(wf.invariant_failures);
        if let Some(c) = wf.stats.get(&Regime::Clawcoin) {
            if c.overrun != 0.0 || c.partial_settlement != 0.0 {
                report
                    .invariant_failures
                    .push("atomic_settlement: clawcoin workflows overran or settled partially".into());
            }
        }
        report.workflow = wf.stats;
        settlement_events = wf.settlement_log;
    }
    if which.includes(Experiment::Sanity) {
        let s = sanity::run_sanity_checks(config, &traj);
        for b in s.bursts.iter().filter(|b| b.involuntary_loss != 0.0) {
            report
                .invariant_failures
                .push(format!("redeemer_loss: burst `{}` lost {}", b.name, b.involuntary_loss));
        }
        report.sanity = Some(s);
    }
    if which.includes(Experiment::Mev) {
        let m = mev::mev_sandwich_probe(&config.risk);
        if m.violations > 0 {
            report
                .invariant_failures
                .push(format!("mev_bound: {} placements beat delta_max * notional", m.violations));
        }
        report.mev = Some(m);
    }

    Ok(ScenarioOutput {
        report,
        records: run.records,
        protocol_events: run.ledger.log().clone(),
        settlement_events,
    })
}
