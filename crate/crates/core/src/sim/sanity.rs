//! Scripted protocol checks: a frozen oracle, a biased vendor, and
//! redemption bursts against explicit index paths.

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;
use crate::index::{BasketConfig, Epoch, Estimator, IndexPipeline};
use crate::ledger::{Asset, Ledger};
use crate::oracle::{build_commitment, OracleOnChainState};
use crate::vault::{Nav, RedeemOutcome, RiskParams, Vault};

use super::metrics::mean;
use super::scenario::{AdversarySpec, ScenarioConfig, VendorBias, Window};
use super::trajectory::Trajectory;
use super::world::{build_committee, holder, publish_value, run_protocol, SPONSOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaleCheck {
    pub window: Window,
    pub stale_epochs: u64,
    pub redeems_attempted: u64,
    pub queued_fraction: f64,
    pub mints_attempted: u64,
    pub mints_executed: u64,
    /// Epochs from the first fresh attestation to the first executed mint.
    pub recovery_lag: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCheck {
    pub window: Window,
    pub vendor: String,
    pub bias: f64,
    /// Mean per-epoch relative deviation from the honest update.
    pub mean: f64,
    pub median: f64,
    pub median_cap: f64,
}

impl BiasCheck {
    pub fn ordered(&self) -> bool {
        self.mean > self.median && self.median > self.median_cap
    }

    pub fn mean_to_median(&self) -> f64 {
        if self.median == 0.0 {
            f64::INFINITY
        } else {
            self.mean / self.median
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstCheck {
    pub name: String,
    pub requests: usize,
    pub peak_queue: usize,
    /// Requests paid within five epochs of being made.
    pub honored_within_5: f64,
    pub still_queued: usize,
    pub auto_pause: bool,
    /// Reserve owed to redeemers but not paid or held for them.
    pub involuntary_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub stale: StaleCheck,
    pub bias: BiasCheck,
    pub bursts: Vec<BurstCheck>,
}

pub fn run_sanity_checks(config: &ScenarioConfig, traj: &Trajectory) -> SanityReport {
    SanityReport {
        stale: stale_check(config, traj),
        bias: bias_check(config, traj),
        bursts: burst_checks(&config.risk),
    }
}

/// Freezes publication long enough to cross the staleness limit, with the
/// other adversaries switched off.
pub fn stale_check(config: &ScenarioConfig, traj: &Trajectory) -> StaleCheck {
    let tau = config.risk.tau;
    let window = Window {
        start: 10,
        length: tau + 4,
    };
    let mut cfg = config.clone();
    cfg.epochs = cfg.epochs.min(window.end() + 10);
    cfg.adversary = AdversarySpec {
        stale_window: Some(window),
        ..AdversarySpec::default()
    };
    let traj = truncated(traj, cfg.epochs as usize);
    let run = run_protocol(&cfg, &traj);
    let s = run.stale;
    StaleCheck {
        window,
        stale_epochs: s.stale_epochs,
        redeems_attempted: s.redeems_attempted,
        queued_fraction: if s.redeems_attempted == 0 {
            0.0
        } else {
            s.redeems_queued as f64 / s.redeems_attempted as f64
        },
        mints_attempted: s.mints_attempted,
        mints_executed: s.mints_executed,
        recovery_lag: s.fresh_attestation_at.zip(s.recovered_at).map(|(f, r)| r - f),
    }
}

fn truncated(traj: &Trajectory, epochs: usize) -> Trajectory {
    let mut t = traj.clone();
    t.epochs = epochs;
    t
}

/// The same trajectory through three pipelines: a plain mean, a median,
/// and a median with the configured smoothing and cap. Deviation is the
/// mean per-epoch gap between the biased and honest update from a shared
/// honest prior.
pub fn bias_check(config: &ScenarioConfig, traj: &Trajectory) -> BiasCheck {
    // The scenario's own bias spec when it has one, else v0 of the first
    // model at +50% over the middle of the run.
    let spec = config.adversary.vendor_bias.clone().unwrap_or_else(|| {
        let vendor = config.basket.models.first().and_then(|m| config.basket.vendors[m].first()).cloned().expect("basket has vendors");
        let epochs = traj.epochs as Epoch;
        VendorBias {
            vendors: vec![vendor],
            bias: 0.5,
            window: Window {
                start: epochs / 3,
                length: epochs / 4,
            },
        }
    });
    let window = spec.window;
    let epochs = (window.end() as usize).min(traj.epochs);
    let nearly_uncapped = Fixed::ratio(999, 1000);
    let variant = |estimator: Estimator, lambda: Fixed, delta: Fixed| BasketConfig {
        estimator,
        lambda,
        delta_max: delta,
        ..config.basket.clone()
    };
    // Each epoch the biased quotes are stepped from the same prior as the
    // honest ones, so the deviation is what the bias adds in one update.
    let run = |basket: BasketConfig| {
        let (mut biased, mut honest) = (IndexPipeline::new(basket.clone()), IndexPipeline::new(basket));
        let mut deviation = Vec::new();
        let mut prior = None;
        for t in 0..epochs {
            let e = t as Epoch;
            let hq = traj.honest_quotes(t);
            let bq = traj.quotes(t, |v| if window.contains(e) && spec.vendors.contains(v) { spec.bias } else { 0.0 });
            let b = biased.step(e, &bq, prior).expect("biased basket computes").smoothed;
            let h = honest.step(e, &hq, prior).expect("honest basket computes").smoothed;
            if window.contains(e) {
                deviation.push((b - h).abs().to_f64() / h.to_f64());
            }
            prior = Some(h);
        }
        mean(&deviation)
    };
    BiasCheck {
        window,
        vendor: spec.vendors.iter().map(|v| v.0.as_str()).collect::<Vec<_>>().join(","),
        bias: spec.bias,
        mean: run(variant(Estimator::Trimmed { q: Fixed::ZERO }, Fixed::ZERO, nearly_uncapped)),
        median: run(variant(Estimator::Median, Fixed::ZERO, nearly_uncapped)),
        median_cap: run(variant(Estimator::Median, config.basket.lambda, config.basket.delta_max)),
    }
}

/// An explicit index path: multiplicative step per epoch, plus redemption
/// requests per epoch as (count, tokens each).
struct BurstPath {
    name: &'static str,
    epochs: usize,
    step: fn(usize) -> i64,
    requests: fn(usize) -> (usize, i64),
    replenish: Fixed,
}

/// Mild, two-step and sustained bursts. Steps are in whole multiples of
/// `delta_max`, request sizes in hundredths of the redemption cap.
pub fn burst_checks(risk: &RiskParams) -> Vec<BurstCheck> {
    let paths = [
        BurstPath {
            name: "mild",
            epochs: 20,
            step: |t| i64::from(t == 3),
            requests: |t| if t == 3 { (6, 40) } else { (0, 0) },
            replenish: risk.replenish_rate,
        },
        BurstPath {
            name: "two_step",
            epochs: 20,
            step: |t| i64::from(t == 3 || t == 4),
            requests: |t| if t == 3 || t == 4 { (8, 45) } else { (0, 0) },
            replenish: risk.replenish_rate,
        },
        BurstPath {
            name: "sustained",
            epochs: 30,
            step: |t| i64::from(t >= 3),
            requests: |t| match t {
                3 => (4, 45),
                t if t > 3 => (1, 45),
                _ => (0, 0),
            },
            replenish: risk.delta_max.div_int_floor(4),
        },
        BurstPath {
            name: "none",
            epochs: 20,
            step: |_| 0,
            requests: |_| (0, 0),
            replenish: risk.replenish_rate,
        },
    ];
    paths.iter().map(|p| run_burst(risk, p)).collect()
}

fn run_burst(risk: &RiskParams, path: &BurstPath) -> BurstCheck {
    let mut params = risk.clone();
    params.replenish_rate = path.replenish;
    let cap = params.redeem_cap_base;
    // Opening supply of 20 redemption caps at NAV 1, covered at 1.6.
    let supply = cap.mul_int(20);
    params.mint_cap_base = supply;
    let mut vault = Vault::new(params.clone()).expect("valid burst params");
    let mut ledger = Ledger::new();
    let initial = Fixed::ONE;
    let mut oracle = OracleOnChainState::genesis(initial, 1, build_commitment(&[]), params.tau);
    let committee = build_committee(5, 3, crate::oracle::AggregationMode::Committee);
    let buffer = supply.mul_floor(Fixed::ratio(6, 10));
    ledger.credit_external(SPONSOR, Asset::Reserve, buffer, "sponsor buffer").expect("positive");
    vault.deposit_buffer(&mut ledger, SPONSOR, buffer).expect("funded");
    let holders = 8;
    let each = supply.div_int_floor(holders as i128);
    for i in 0..holders {
        ledger.credit_external(&holder(i), Asset::Reserve, each, "holder funding").expect("positive");
        vault.mint(&mut ledger, &mut oracle, &holder(i), each).expect("opening mint");
    }

    let mut requested: Vec<(u64, Fixed, Epoch)> = Vec::new();
    let mut paid_now: Vec<(Fixed, Fixed)> = Vec::new();
    let mut auto_pause = false;
    let mut next = 0usize;
    for t in 1..path.epochs {
        let epoch = ledger.advance_epoch();
        let prev = oracle.published_value;
        let value = prev + params.delta_max.mul_floor(prev).mul_int(i128::from((path.step)(t)));
        assert!(
            publish_value(&committee, &mut oracle, &mut ledger, value, params.delta_max),
            "path steps stay within the cap"
        );
        vault.begin_epoch(&mut ledger, &mut oracle);
        let (count, size) = (path.requests)(t);
        let tokens = Nav::from_oracle(&oracle).tokens_for(cap.mul_floor(Fixed::ratio(size, 100)));
        for _ in 0..count {
            let who = holder(next % holders);
            next += 1;
            match vault.redeem(&mut ledger, &mut oracle, &who, tokens) {
                Ok(RedeemOutcome::Paid { tokens, reserve }) => paid_now.push((tokens, reserve)),
                Ok(RedeemOutcome::Queued { claim_id, .. }) => requested.push((claim_id, tokens, epoch)),
                Err(e) => panic!("burst redemption failed: {e}"),
            }
        }
        auto_pause |= vault.state().paused;
    }

    // Every queued token is either paid at the NAV of its paying epoch or
    // still held in the queue.
    let index_at = |e: Epoch| -> Fixed {
        let mut v = initial;
        for t in 1..=e as usize {
            v = v + params.delta_max.mul_floor(v).mul_int(i128::from((path.step)(t)));
        }
        v
    };
    let mut loss = Fixed::ZERO;
    for d in vault.drains() {
        let owed = Nav {
            index: index_at(d.paid_at),
            initial,
        }
        .reserve_for(d.tokens);
        loss += owed.saturating_sub_zero(d.reserve);
    }
    let queued_tokens: Fixed = requested.iter().map(|r| r.1).sum();
    let drained_tokens: Fixed = vault.drains().iter().map(|d| d.tokens).sum();
    if drained_tokens + vault.queued_tokens() != queued_tokens {
        loss += (queued_tokens - drained_tokens - vault.queued_tokens()).abs();
    }
    for (tokens, reserve) in &paid_now {
        if !reserve.is_positive() && tokens.is_positive() {
            loss += *tokens;
        }
    }
    let total = paid_now.len() + requested.len();
    let within = paid_now.len() + vault.drains().iter().filter(|d| d.paid_at - d.enqueued_at <= 5).count();
    BurstCheck {
        name: path.name.to_string(),
        requests: total,
        peak_queue: vault.peak_queue(),
        honored_within_5: if total == 0 { 1.0 } else { within as f64 / total as f64 },
        still_queued: vault.state().redeem_queue.len(),
        auto_pause,
        involuntary_loss: loss.to_f64(),
    }
}
