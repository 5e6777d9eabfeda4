//! Multi-hop workflows at fixed depths. Nominal regimes pay hop by hop
//! and can stop half way; clawcoin escrows the planned budget and settles
//! the whole chain as one bundle on a ledger.

use std::collections::BTreeMap;

use crate::crypto::{KeyRegistry, MockSigner, SigningKey};
use crate::events::EventLog;
use crate::fixed::Fixed;
use crate::ledger::{Asset, Ledger};
use crate::oracle::OracleOnChainState;
use crate::settlement::{Escrow, EscrowBook, MultiHop};
use crate::vault::Vault;

use super::agents::Regime;
use super::experiments::RegimeSetup;
use super::metrics::{mean, DepthStats, WorkflowStats};
use super::scenario::ScenarioConfig;
use super::trajectory::{to_fixed, Trajectory, WorkflowDraw};
use super::world::SPONSOR;

/// Standardized requests in one unit of hop work.
pub const REQUESTS_PER_WORK: f64 = 1000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Outcome {
    failed: bool,
    overrun: bool,
    partial: bool,
    /// `|settled - planned| / planned` when completed.
    error: Option<f64>,
}

pub struct WorkflowRun {
    pub stats: BTreeMap<Regime, WorkflowStats>,
    /// Settlement ledger events from the clawcoin path.
    pub settlement_log: EventLog,
    pub invariant_failures: Vec<String>,
}

pub fn run_workflow_experiment(
    depths: &[usize],
    regimes: &[Regime],
    config: &ScenarioConfig,
    traj: &Trajectory,
    setup: &RegimeSetup,
) -> WorkflowRun {
    let mut stats = BTreeMap::new();
    let mut failures = Vec::new();
    let mut settlement_log = EventLog::new();
    for &r in regimes {
        let outcomes: BTreeMap<usize, Vec<Outcome>> = if r == Regime::Clawcoin {
            let mut chain = ClawChain::new(config, setup.policies.len());
            let out = depths
                .iter()
                .map(|&d| {
                    let v = traj
                        .workflows
                        .iter()
                        .enumerate()
                        .map(|(w, wf)| chain.settle(w, wf, d, config, setup))
                        .collect();
                    (d, v)
                })
                .collect();
            failures.append(&mut chain.failures);
            settlement_log = chain.ledger.log().clone();
            out
        } else {
            depths
                .iter()
                .map(|&d| (d, traj.workflows.iter().map(|wf| nominal(r, wf, d, config, setup)).collect()))
                .collect()
        };
        stats.insert(r, summarize(&outcomes));
    }
    WorkflowRun {
        stats,
        settlement_log,
        invariant_failures: failures,
    }
}

fn summarize(outcomes: &BTreeMap<usize, Vec<Outcome>>) -> WorkflowStats {
    let rate = |xs: &[Outcome], f: fn(&Outcome) -> bool| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().filter(|o| f(o)).count() as f64 / xs.len() as f64
        }
    };
    let by_depth = outcomes
        .iter()
        .map(|(&d, xs)| {
            let errors: Vec<f64> = xs.iter().filter_map(|o| o.error).collect();
            let s = DepthStats {
                workflows: xs.len() as u64,
                failure: rate(xs, |o| o.failed),
                overrun: rate(xs, |o| o.overrun),
                partial_settlement: rate(xs, |o| o.partial),
                settlement_error: mean(&errors),
            };
            (d, s)
        })
        .collect();
    let all: Vec<Outcome> = outcomes.values().flatten().copied().collect();
    let errors: Vec<f64> = all.iter().filter_map(|o| o.error).collect();
    WorkflowStats {
        by_depth,
        overrun: rate(&all, |o| o.overrun),
        partial_settlement: rate(&all, |o| o.partial),
        settlement_error: mean(&errors),
    }
}

/// Planned and actual charge of hop `j`, in the settlement unit.
fn hop_amounts(r: Regime, wf: &WorkflowDraw, j: usize, setup: &RegimeSetup) -> (f64, f64) {
    let t0 = wf.start as usize;
    let hop = &wf.hops[j];
    let work = hop.work * REQUESTS_PER_WORK;
    let planned = work * setup.settled(r, hop.executor, t0);
    let charge = work * setup.settled(r, hop.executor, t0 + j + 1);
    (planned, charge)
}

fn nominal(r: Regime, wf: &WorkflowDraw, depth: usize, config: &ScenarioConfig, setup: &RegimeSetup) -> Outcome {
    let spec = &config.workflow;
    let t0 = wf.start as usize;
    let (mut planned_total, mut paid) = (0.0, 0.0);
    let mut overrun = false;
    for j in 0..depth {
        let hop = &wf.hops[j];
        let (planned, charge) = hop_amounts(r, wf, j, setup);
        let mut allowance = planned * (1.0 + spec.slack);
        if r == Regime::UsdcInternalIndex {
            // The originator budgets in its own units; the executor bills in
            // its own. Reserve currency bridges the two at execution time.
            let own = &setup.paths[wf.originator].private_index;
            allowance *= own[t0 + j + 1] / own[t0];
        }
        let reconciled = r != Regime::UsdcInternalIndex || hop.reconcile >= spec.reconciliation_failure;
        if hop.fail < spec.hop_failure || !reconciled || charge > allowance * (1.0 + spec.tolerance) {
            return Outcome {
                failed: true,
                overrun,
                partial: j > 0,
                error: None,
            };
        }
        overrun |= charge > allowance;
        planned_total += planned;
        paid += charge;
    }
    Outcome {
        failed: false,
        overrun,
        partial: false,
        error: Some((paid - planned_total).abs() / planned_total),
    }
}

/// A ledger holding agents' token balances, funded once through the vault.
struct ClawChain {
    ledger: Ledger,
    registry: KeyRegistry,
    failures: Vec<String>,
}

fn agent(i: usize) -> String {
    format!("agent-{i}")
}

impl ClawChain {
    fn new(config: &ScenarioConfig, agents: usize) -> Self {
        let funding = Fixed::from_int(1_000_000);
        let mut params = config.risk.clone();
        params.mint_cap_base = funding.mul_int(agents as i128 + 1);
        let mut vault = Vault::new(params).expect("validated risk params");
        let mut oracle = OracleOnChainState::genesis(Fixed::ONE, config.basket.version, Default::default(), config.risk.tau);
        let mut ledger = Ledger::new();
        let buffer = funding.mul_int(agents as i128);
        ledger.credit_external(SPONSOR, Asset::Reserve, buffer, "sponsor buffer").expect("positive");
        vault.deposit_buffer(&mut ledger, SPONSOR, buffer).expect("sponsor funded");
        let mut registry = KeyRegistry::new();
        for i in 0..agents {
            let who = agent(i);
            registry.register(&who, SigningKey::derive(&who));
            ledger.credit_external(&who, Asset::Reserve, funding, "agent funding").expect("positive");
            vault.mint(&mut ledger, &mut oracle, &who, funding).expect("funding mint fits the caps");
        }
        ClawChain {
            ledger,
            registry,
            failures: Vec::new(),
        }
    }

    /// Escrows the planned budget and settles all hops in one bundle that
    /// any failure vetoes; custody is refunded afterwards.
    fn settle(&mut self, w: usize, wf: &WorkflowDraw, depth: usize, config: &ScenarioConfig, setup: &RegimeSetup) -> Outcome {
        let spec = &config.workflow;
        let id = format!("wf{w}-d{depth}");
        let custody = Escrow::custody_address(&id);
        let originator = agent(wf.originator);
        let mut hops = Vec::with_capacity(depth);
        let mut planned_total = 0.0;
        let mut fail: Option<String> = None;
        for j in 0..depth {
            let (planned, charge) = hop_amounts(Regime::Clawcoin, wf, j, setup);
            let allowance = to_fixed(planned * (1.0 + spec.slack));
            let charge = to_fixed(charge);
            if fail.is_none() && wf.hops[j].fail < spec.hop_failure {
                fail = Some(format!("hop {j} failed"));
            }
            if fail.is_none() && charge > allowance {
                fail = Some(format!("hop {j} charge exceeds its allowance"));
            }
            planned_total += planned;
            hops.push((agent(wf.hops[j].executor), allowance, charge));
        }
        let budget: Fixed = hops.iter().map(|h| h.1).sum();
        let before: Vec<Fixed> = hops.iter().map(|h| self.ledger.balance(&h.0, Asset::Claw)).collect();

        let deadline = self.ledger.epoch();
        let mut book = EscrowBook {
            ledger: &mut self.ledger,
            registry: &self.registry,
            signer: &MockSigner,
        };
        if let Err(e) = book.open(&id, &originator, budget, deadline) {
            self.failures.push(format!("escrow_open: {id}: {e}"));
            return Outcome {
                failed: true,
                ..Outcome::default()
            };
        }
        let mut bundle = MultiHop::new(originator.as_str()).with_budget(&id);
        for (j, (payee, _, charge)) in hops.iter().enumerate() {
            bundle = bundle.hop(&custody, payee, *charge, &format!("h{j}"));
        }
        if let Some(reason) = &fail {
            bundle = bundle.veto(reason.clone());
        }
        let committed = bundle.execute(book.ledger).is_ok();
        let paid: Fixed = if committed { hops.iter().map(|h| h.2).sum() } else { Fixed::ZERO };

        let mut delta: BTreeMap<&str, Fixed> = BTreeMap::new();
        for (h, b) in hops.iter().zip(&before) {
            delta.entry(h.0.as_str()).or_insert(*b);
        }
        let moved = delta
            .iter()
            .any(|(who, b)| book.ledger.balance(who, Asset::Claw) != *b);
        let partial = !committed && moved;
        let overrun = paid > budget;
        if committed && fail.is_some() {
            self.failures.push(format!("veto_ignored: {id} committed despite a failed hop"));
        }
        if partial {
            self.failures.push(format!("partial_settlement: {id} moved payee balances on revert"));
        }
        if overrun {
            self.failures.push(format!("escrow_budget: {id} paid {paid} over budget {budget}"));
        }

        book.ledger.advance_epoch();
        if let Err(e) = book.refund(&id) {
            self.failures.push(format!("escrow_refund: {id}: {e}"));
        }
        Outcome {
            failed: !committed,
            overrun,
            partial,
            error: committed.then(|| (paid.to_f64() - planned_total).abs() / planned_total),
        }
    }
}
