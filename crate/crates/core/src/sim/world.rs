//! The running protocol: feeds, index pipeline, committee publication and
//! the vault, with holders and scripted adversaries acting on the ledger.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::crypto::{KeyRegistry, MockSigner, SigningKey};
use crate::fixed::Fixed;
use crate::index::{compute_raw_index, Epoch, IndexPipeline, PriceQuote};
use crate::ledger::{Asset, Ledger};
use crate::oracle::{
    build_commitment, AggregationMode, Attestation, AttestationTuple, Committee, CommitteeConfig,
    OracleOnChainState,
};
use crate::vault::{Nav, RedeemOutcome, Vault};

use super::scenario::ScenarioConfig;
use super::trajectory::{to_fixed, Trajectory};

pub const SPONSOR: &str = "sponsor";
pub const PROBE: &str = "probe";
pub const SANDWICH: &str = "adv:sandwich";

pub fn holder(i: usize) -> String {
    format!("holder:{i}")
}

/// Rounds a simulated amount to 6 decimals before it touches the ledger.
pub fn money(x: f64) -> Fixed {
    to_fixed((x.max(0.0) * 1e6).floor() / 1e6)
}

/// Committee-signed publication of `value` at the ledger's epoch.
pub fn publish_value(
    committee: &Committee,
    oracle: &mut OracleOnChainState,
    ledger: &mut Ledger,
    value: Fixed,
    delta_max: Fixed,
) -> bool {
    let tuple = AttestationTuple {
        index_value: value,
        epoch: ledger.epoch(),
        basket_version: oracle.basket_version,
        commitment_root: oracle.commitment_root,
    };
    let atts: Vec<_> = committee
        .config
        .members
        .iter()
        .map(|n| committee.sign_attestation(tuple, n).expect("member signs"))
        .collect();
    let agg = committee.aggregate_committee(&atts).expect("quorum agrees");
    committee.publish(&agg, oracle, delta_max, ledger).is_ok()
}

pub fn build_committee(members: usize, threshold: usize, mode: AggregationMode) -> Committee {
    let names: Vec<String> = (0..members).map(|i| format!("node-{i}")).collect();
    let mut registry = KeyRegistry::new();
    for n in names.iter().map(String::as_str).chain(["aggregator"]) {
        registry.register(n, SigningKey::derive(n));
    }
    Committee::new(
        CommitteeConfig {
            members: names,
            threshold,
            mode,
            aggregator: "aggregator".into(),
        },
        registry,
        MockSigner,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: Epoch,
    /// Honest raw index, no smoothing and no adversarial quotes.
    pub honest_raw: f64,
    pub offchain: Option<f64>,
    pub published: f64,
    pub published_at: Epoch,
    pub accepted: bool,
    pub rejection: Option<String>,
    pub stale: bool,
    pub paused: bool,
    pub coverage: Option<f64>,
    pub queue_len: usize,
    pub reserves: f64,
    pub supply: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StaleStats {
    pub stale_epochs: u64,
    pub redeems_attempted: u64,
    pub redeems_queued: u64,
    pub mints_attempted: u64,
    pub mints_executed: u64,
    /// First epoch a fresh attestation landed after a stale stretch.
    pub fresh_attestation_at: Option<Epoch>,
    /// First epoch after that in which a mint executed.
    pub recovered_at: Option<Epoch>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SandwichStats {
    pub epochs: u64,
    pub total_profit: f64,
    pub max_profit: f64,
    /// Largest profit / (delta_max * notional) seen; at most 1.
    pub max_bound_ratio: f64,
    pub violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub peak_length: usize,
    pub claims_queued: usize,
    pub honored_within_5: f64,
    pub still_queued: usize,
}

pub struct ProtocolRun {
    pub initial: f64,
    pub records: Vec<EpochRecord>,
    pub stale: StaleStats,
    pub sandwich: SandwichStats,
    pub queue: QueueStats,
    pub drift_violations: u64,
    pub rejections: u64,
    pub pause_epochs: u64,
    pub invariant_failures: Vec<String>,
    pub ledger: Ledger,
    pub vault: Vault,
}

impl ProtocolRun {
    /// Published index per epoch.
    pub fn published(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.published).collect()
    }

    pub fn honest(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.honest_raw).collect()
    }

    pub fn nav(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.published / self.initial).collect()
    }
}

pub fn queue_stats(vault: &Vault) -> QueueStats {
    let drains = vault.drains();
    let still = vault.state().redeem_queue.len();
    let claims = drains.len() + still;
    let within = drains.iter().filter(|d| d.paid_at - d.enqueued_at <= 5).count();
    QueueStats {
        peak_length: vault.peak_queue(),
        claims_queued: claims,
        honored_within_5: if claims == 0 { 1.0 } else { within as f64 / claims as f64 },
        still_queued: still,
    }
}

struct World<'a> {
    config: &'a ScenarioConfig,
    traj: &'a Trajectory,
    ledger: Ledger,
    committee: Committee,
    oracle: OracleOnChainState,
    vault: Vault,
    pipeline: IndexPipeline,
    opened: Vec<bool>,
    stale: StaleStats,
    sandwich: SandwichStats,
    failures: Vec<String>,
}

/// Runs the protocol over the whole trajectory.
pub fn run_protocol(config: &ScenarioConfig, traj: &Trajectory) -> ProtocolRun {
    let mut pipeline = IndexPipeline::new(config.basket.clone());
    let quotes0 = traj.honest_quotes(0);
    let initial = pipeline.bootstrap(0, &quotes0).expect("epoch-0 basket computes").smoothed;
    let oracle = OracleOnChainState::genesis(initial, config.basket.version, build_commitment(&quotes0), config.risk.tau);
    let mut ledger = Ledger::new();
    let mut vault = Vault::new(config.risk.clone()).expect("validated risk params");
    let flows = &config.vault_flows;
    let opening = flows.deposit * flows.holders as f64;
    let buffer = money(opening * flows.buffer);
    if buffer.is_positive() {
        ledger.credit_external(SPONSOR, Asset::Reserve, buffer, "sponsor buffer").expect("positive");
        vault.deposit_buffer(&mut ledger, SPONSOR, buffer).expect("sponsor funded");
    }
    for i in 0..flows.holders {
        ledger
            .credit_external(&holder(i), Asset::Reserve, money(2.0 * flows.deposit), "holder funding")
            .expect("positive");
    }
    ledger
        .credit_external(PROBE, Asset::Reserve, money(flows.deposit), "probe funding")
        .expect("positive");
    if config.adversary.sandwich {
        ledger
            .credit_external(SANDWICH, Asset::Reserve, config.risk.redeem_cap_base.mul_int(4), "adversary funding")
            .expect("positive");
    }
    let committee = build_committee(config.oracle.members, config.oracle.threshold, config.oracle.mode);
    let mut world = World {
        config,
        traj,
        ledger,
        committee,
        oracle,
        vault,
        pipeline,
        opened: vec![false; flows.holders],
        stale: StaleStats::default(),
        sandwich: SandwichStats::default(),
        failures: Vec::new(),
    };
    let mut records = vec![EpochRecord {
        epoch: 0,
        honest_raw: initial.to_f64(),
        offchain: Some(initial.to_f64()),
        published: initial.to_f64(),
        published_at: 0,
        accepted: true,
        rejection: None,
        stale: false,
        paused: false,
        coverage: None,
        queue_len: 0,
        reserves: world.vault.state().reserves.to_f64(),
        supply: 0.0,
    }];
    let (mut drift_violations, mut rejections, mut pause_epochs) = (0, 0, 0);
    let mut was_stale = false;
    for t in 1..traj.epochs {
        let record = world.step(t, &mut was_stale);
        if record.rejection.is_some() {
            rejections += 1;
        }
        if record.paused {
            pause_epochs += 1;
        }
        records.push(record);
    }
    for w in world.ledger.log().of_kind(crate::events::EventKind::IndexUpdated) {
        let (Some(v), Some(p)) = (fixed_field(&w.payload, "value"), fixed_field(&w.payload, "previous")) else {
            continue;
        };
        let diff = (v - p).abs();
        if Fixed::cmp_products(&[diff], &[config.risk.delta_max, p]) == Ordering::Greater {
            drift_violations += 1;
        }
    }
    if drift_violations > 0 {
        world.failures.push(format!("drift_cap: {drift_violations} accepted updates exceed delta_max"));
    }
    let queue = queue_stats(&world.vault);
    ProtocolRun {
        initial: initial.to_f64(),
        records,
        stale: world.stale,
        sandwich: world.sandwich,
        queue,
        drift_violations,
        rejections,
        pause_epochs,
        invariant_failures: world.failures,
        ledger: world.ledger,
        vault: world.vault,
    }
}

fn fixed_field(v: &serde_json::Value, key: &str) -> Option<Fixed> {
    serde_json::from_value(v.get(key)?.clone()).ok()
}

impl World<'_> {
    fn step(&mut self, t: usize, was_stale: &mut bool) -> EpochRecord {
        let epoch = self.ledger.advance_epoch();
        debug_assert_eq!(epoch as usize, t);
        let adv = &self.config.adversary;
        self.vault.begin_epoch(&mut self.ledger, &mut self.oracle);
        if adv.sandwich && epoch == 1 {
            let inventory = self.config.risk.redeem_cap_base.div_int_floor(4);
            let _ = self.vault.mint(&mut self.ledger, &mut self.oracle, SANDWICH, inventory);
        }

        let bias = adv.vendor_bias.as_ref().filter(|b| b.window.contains(epoch));
        let quotes = self.traj.quotes(t, |v| match bias {
            Some(b) if b.vendors.contains(v) => b.bias,
            _ => 0.0,
        });
        let honest_raw = compute_raw_index(&self.traj.honest_quotes(t), &self.config.basket)
            .map(|r| r.value.to_f64())
            .unwrap_or(f64::NAN);
        let prior = self.oracle.published_value;
        let offchain = self.pipeline.step(epoch, &quotes, Some(prior)).ok().map(|s| s.smoothed);

        let frozen = adv.stale_window.is_some_and(|w| w.contains(epoch));
        let mut accepted = false;
        let mut rejection = None;
        if let (Some(value), false) = (offchain, frozen) {
            let candidate = self.attest(epoch, value, &quotes);
            let nav_pre = Nav::from_oracle(&self.oracle);
            let pre = self.sandwich_pre(value, nav_pre);
            match candidate {
                Ok(att) => {
                    let delta = self.config.risk.delta_max;
                    match self.committee.publish(&att, &mut self.oracle, delta, &mut self.ledger) {
                        Ok(()) => accepted = true,
                        Err(r) => rejection = Some(serde_json::to_string(&r).expect("serializes")),
                    }
                }
                Err(e) => rejection = Some(e.to_string()),
            }
            self.sandwich_post(pre);
        }

        self.probe(epoch, was_stale, accepted);
        self.holder_flows(t, epoch);
        if let Some(b) = adv.redemption_burst.filter(|b| b.epoch == epoch) {
            self.burst(b.claims, b.tokens);
        }
        let nav = Nav::from_oracle(&self.oracle);
        let state = self.vault.state();
        let coverage = nav.coverage(state.reserves, state.supply);
        let paused = state.paused;
        if paused && nav.cmp_coverage(state.reserves, state.supply, self.config.risk.gamma_min).is_ge() {
            self.vault.unpause(&mut self.ledger);
        }
        if !self.ledger.is_conserved() {
            self.failures.push(format!("conservation: ledger balances diverge from supply at epoch {epoch}"));
        }
        if !self.vault.consistent_with(&self.ledger) {
            self.failures.push(format!("vault_consistency: vault books diverge from ledger at epoch {epoch}"));
        }
        let state = self.vault.state();
        EpochRecord {
            epoch,
            honest_raw,
            offchain: offchain.map(Fixed::to_f64),
            published: self.oracle.published_value.to_f64(),
            published_at: self.oracle.published_at,
            accepted,
            rejection,
            stale: state.stale_paused,
            paused,
            coverage: coverage.map(Fixed::to_f64),
            queue_len: state.redeem_queue.len(),
            reserves: state.reserves.to_f64(),
            supply: state.supply.to_f64(),
        }
    }

    fn attest(&self, epoch: Epoch, value: Fixed, quotes: &[PriceQuote]) -> Result<Attestation, crate::oracle::OracleError> {
        let root = build_commitment(quotes);
        let honest = AttestationTuple {
            index_value: value,
            epoch,
            basket_version: self.config.basket.version,
            commitment_root: root,
        };
        let colluders = self
            .config
            .adversary
            .collusion
            .filter(|c| c.window.contains(epoch))
            .map_or(0, |c| c.nodes);
        let forged = self.config.adversary.collusion.map(|c| AttestationTuple {
            index_value: money(value.to_f64() * (1.0 + c.bias)).max(Fixed::EPSILON),
            ..honest
        });
        let mut atts = Vec::new();
        for (i, node) in self.committee.config.members.iter().enumerate() {
            let tuple = if i < colluders { forged.expect("collusion configured") } else { honest };
            atts.push(self.committee.sign_attestation(tuple, node)?);
        }
        match self.committee.config.mode {
            AggregationMode::Committee => self.committee.aggregate_committee(&atts),
            AggregationMode::Don => self.committee.aggregate_don(&atts),
        }
    }

    /// Tiny mint and redeem every epoch to observe stale behaviour.
    fn probe(&mut self, epoch: Epoch, was_stale: &mut bool, fresh: bool) {
        self.vault.pre_call_check(&mut self.ledger, &mut self.oracle);
        let stale = self.vault.state().stale_paused;
        if stale {
            self.stale.stale_epochs += 1;
        }
        if *was_stale && !stale && fresh {
            self.stale.fresh_attestation_at.get_or_insert(epoch);
        }
        let minted = self.vault.mint(&mut self.ledger, &mut self.oracle, PROBE, Fixed::ONE);
        if stale {
            self.stale.mints_attempted += 1;
            if minted.is_ok() {
                self.stale.mints_executed += 1;
            }
        }
        if minted.is_ok() && self.stale.fresh_attestation_at.is_some() && self.stale.recovered_at.is_none() {
            self.stale.recovered_at = Some(epoch);
        }
        let tokens = self.ledger.balance(PROBE, Asset::Claw).min(Fixed::ratio(1, 2));
        if tokens.is_positive() {
            let out = self.vault.redeem(&mut self.ledger, &mut self.oracle, PROBE, tokens);
            if stale {
                self.stale.redeems_attempted += 1;
                if matches!(out, Ok(RedeemOutcome::Queued { .. })) {
                    self.stale.redeems_queued += 1;
                }
            }
        }
        *was_stale = stale;
    }

    fn holder_flows(&mut self, t: usize, epoch: Epoch) {
        let flows = &self.config.vault_flows;
        for i in 0..flows.holders {
            let who = holder(i);
            if !self.opened[i] {
                if epoch as usize > i {
                    let x = money(flows.deposit);
                    if self.vault.mint(&mut self.ledger, &mut self.oracle, &who, x).is_ok() {
                        self.opened[i] = true;
                    }
                }
                continue;
            }
            let d = self.traj.flows[t][i];
            if d.act >= flows.activity {
                continue;
            }
            let size = flows.deposit * flows.flow_size * (0.5 + d.size);
            if d.redeem {
                let nav = Nav::from_oracle(&self.oracle).value().to_f64();
                let tokens = money(size / nav).min(self.ledger.balance(&who, Asset::Claw));
                if tokens.is_positive() {
                    let _ = self.vault.redeem(&mut self.ledger, &mut self.oracle, &who, tokens);
                }
            } else {
                let x = money(size).min(self.ledger.balance(&who, Asset::Reserve));
                if x.is_positive() {
                    let _ = self.vault.mint(&mut self.ledger, &mut self.oracle, &who, x);
                }
            }
        }
    }

    fn burst(&mut self, claims: usize, tokens: f64) {
        let holders = self.config.vault_flows.holders;
        for k in 0..claims {
            let who = holder(k % holders);
            let y = money(tokens).min(self.ledger.balance(&who, Asset::Claw));
            if y.is_positive() {
                let _ = self.vault.redeem(&mut self.ledger, &mut self.oracle, &who, y);
            }
        }
    }

    /// Trades placed before the update, given the public off-chain value.
    fn sandwich_pre(&mut self, candidate: Fixed, nav_pre: Nav) -> Option<SandwichLeg> {
        if !self.config.adversary.sandwich {
            return None;
        }
        let rising = candidate > self.oracle.published_value;
        let falling = candidate < self.oracle.published_value;
        let before = self.holdings();
        let notional = self.config.risk.redeem_cap_base.div_int_floor(4);
        let leg = if rising {
            let tokens = self.vault.mint(&mut self.ledger, &mut self.oracle, SANDWICH, notional).ok()?;
            SandwichLeg { rising, before, tokens, notional }
        } else if falling {
            let held = self.ledger.balance(SANDWICH, Asset::Claw);
            let tokens = nav_pre.tokens_for(notional).min(held);
            if !tokens.is_positive() {
                return None;
            }
            match self.vault.redeem(&mut self.ledger, &mut self.oracle, SANDWICH, tokens) {
                Ok(RedeemOutcome::Paid { reserve, .. }) => SandwichLeg { rising, before, tokens, notional: reserve },
                _ => return None,
            }
        } else {
            return None;
        };
        Some(leg)
    }

    fn sandwich_post(&mut self, leg: Option<SandwichLeg>) {
        let Some(leg) = leg else { return };
        if leg.rising {
            let _ = self.vault.redeem(&mut self.ledger, &mut self.oracle, SANDWICH, leg.tokens);
        } else {
            let _ = self.vault.mint(&mut self.ledger, &mut self.oracle, SANDWICH, leg.notional);
        }
        let nav = Nav::from_oracle(&self.oracle);
        let value = |(r, y): (Fixed, Fixed)| r.to_f64() + nav.reserve_for(y).to_f64();
        let profit = value(self.holdings()) - value(leg.before);
        let bound = self.config.risk.delta_max.to_f64() * leg.notional.to_f64();
        let s = &mut self.sandwich;
        s.epochs += 1;
        s.total_profit += profit;
        s.max_profit = s.max_profit.max(profit);
        if bound > 0.0 {
            s.max_bound_ratio = s.max_bound_ratio.max(profit / bound);
        }
        if profit > bound + 1e-9 {
            s.violations += 1;
            self.failures.push(format!("sandwich_bound: profit {profit} exceeds {bound}"));
        }
    }

    /// Adversary reserve and tokens, counting tokens waiting in the queue.
    fn holdings(&self) -> (Fixed, Fixed) {
        let queued: Fixed = self
            .vault
            .state()
            .redeem_queue
            .iter()
            .filter(|c| c.claimant == SANDWICH)
            .map(|c| c.tokens)
            .sum();
        (
            self.ledger.balance(SANDWICH, Asset::Reserve),
            self.ledger.balance(SANDWICH, Asset::Claw) + queued,
        )
    }
}

struct SandwichLeg {
    rising: bool,
    before: (Fixed, Fixed),
    tokens: Fixed,
    notional: Fixed,
}
