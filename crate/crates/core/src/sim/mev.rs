//! Exhaustive sandwich search around a single index update.

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;
use crate::ledger::{Asset, Ledger};
use crate::oracle::{build_commitment, AggregationMode, Committee, OracleOnChainState};
use crate::vault::{Nav, RiskParams, Vault};

use super::world::{build_committee, holder, publish_value, SPONSOR};

const ADVERSARY: &str = "adv:mev";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Pre,
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Deposit of reserve currency.
    Mint(Slot),
    /// Redemption of tokens worth the amount at the pre-update NAV.
    Redeem(Slot),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveResult {
    /// Update size in multiples of `delta_max`.
    pub step: i64,
    pub accepted: bool,
    pub max_profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MevReport {
    pub placements: usize,
    pub notional_cap: f64,
    pub max_profit: f64,
    /// Largest profit / (delta_max * notional) over placements with notional.
    pub max_bound_ratio: f64,
    pub violations: usize,
    /// Largest profit when the adversary does nothing.
    pub idle_profit: f64,
    pub by_move: Vec<MoveResult>,
}

struct Base {
    ledger: Ledger,
    vault: Vault,
    oracle: OracleOnChainState,
}

/// Every ordering of at most one mint and one redeem, each before or after
/// the update, over an amount grid, for update moves of 0, ±delta and
/// ±2·delta (the last two are rejected on chain). Profit is valued at the
/// post-update NAV, counting tokens left in the redemption queue.
pub fn mev_sandwich_probe(risk: &RiskParams) -> MevReport {
    let committee = build_committee(5, 3, AggregationMode::Committee);
    let base = base_world(risk, &committee);
    let nav_pre = Nav::from_oracle(&base.oracle);
    // Notional stays inside both per-epoch caps.
    let cap = risk.redeem_cap_base.min(nav_pre.reserve_for(risk.mint_cap_base));
    let grid: Vec<Fixed> = [1, 2, 3, 4].iter().map(|k| cap.mul_floor(Fixed::ratio(*k, 4))).collect();

    let mut plans: Vec<Vec<Action>> = vec![Vec::new()];
    for a in [Action::Mint(Slot::Pre), Action::Mint(Slot::Post), Action::Redeem(Slot::Pre), Action::Redeem(Slot::Post)] {
        plans.push(vec![a]);
    }
    for m in [Slot::Pre, Slot::Post] {
        for r in [Slot::Pre, Slot::Post] {
            plans.push(vec![Action::Mint(m), Action::Redeem(r)]);
            plans.push(vec![Action::Redeem(r), Action::Mint(m)]);
        }
    }

    let mut report = MevReport {
        placements: 0,
        notional_cap: cap.to_f64(),
        max_profit: f64::MIN,
        max_bound_ratio: 0.0,
        violations: 0,
        idle_profit: 0.0,
        by_move: Vec::new(),
    };
    for step in [0i64, 1, -1, 2, -2] {
        let mut mv = MoveResult {
            step,
            accepted: false,
            max_profit: f64::MIN,
        };
        for plan in &plans {
            let amounts: Vec<(Fixed, Fixed)> = match plan.len() {
                0 => vec![(Fixed::ZERO, Fixed::ZERO)],
                _ => grid.iter().flat_map(|&x| grid.iter().map(move |&y| (x, y))).collect(),
            };
            for &(x, y) in &amounts {
                let (profit, notional, accepted) = play(&base, &committee, risk, step, plan, x, y);
                report.placements += 1;
                mv.accepted |= accepted;
                mv.max_profit = mv.max_profit.max(profit.to_f64());
                report.max_profit = report.max_profit.max(profit.to_f64());
                if plan.is_empty() {
                    report.idle_profit = report.idle_profit.max(profit.to_f64());
                }
                let bound = risk.delta_max.mul_ceil(notional);
                if profit > bound {
                    report.violations += 1;
                }
                if notional.is_positive() {
                    report.max_bound_ratio = report.max_bound_ratio.max(profit.to_f64() / bound.to_f64());
                }
            }
        }
        report.by_move.push(mv);
    }
    report
}

fn base_world(risk: &RiskParams, committee: &Committee) -> Base {
    let mut vault = Vault::new(risk.clone()).expect("valid risk params");
    let mut ledger = Ledger::new();
    let mut oracle = OracleOnChainState::genesis(Fixed::ONE, 1, build_commitment(&[]), risk.tau);
    let cap = risk.redeem_cap_base;
    let buffer = cap.mul_int(12);
    ledger.credit_external(SPONSOR, Asset::Reserve, buffer, "sponsor buffer").expect("positive");
    vault.deposit_buffer(&mut ledger, SPONSOR, buffer).expect("funded");
    // Holders bring coverage to about 1.6 over a few epochs of mint caps.
    let target = cap.mul_int(20);
    let mut minted = Fixed::ZERO;
    let mut i = 0;
    while minted < target {
        ledger.advance_epoch();
        let same = oracle.published_value;
        publish_value(committee, &mut oracle, &mut ledger, same, risk.delta_max);
        vault.begin_epoch(&mut ledger, &mut oracle);
        let x = risk.mint_cap_base.min(target - minted);
        ledger.credit_external(&holder(i), Asset::Reserve, x, "holder funding").expect("positive");
        minted += vault.mint(&mut ledger, &mut oracle, &holder(i), x).expect("opening mint fits");
        i += 1;
    }
    ledger.credit_external(ADVERSARY, Asset::Reserve, cap.mul_int(4), "adversary funding").expect("positive");
    for fund in [true, false] {
        ledger.advance_epoch();
        let same = oracle.published_value;
        publish_value(committee, &mut oracle, &mut ledger, same, risk.delta_max);
        vault.begin_epoch(&mut ledger, &mut oracle);
        if fund {
            vault.mint(&mut ledger, &mut oracle, ADVERSARY, cap).expect("adversary inventory");
        }
    }
    Base { ledger, vault, oracle }
}

fn holdings(ledger: &Ledger, vault: &Vault) -> (Fixed, Fixed) {
    let queued: Fixed = vault
        .state()
        .redeem_queue
        .iter()
        .filter(|c| c.claimant == ADVERSARY)
        .map(|c| c.tokens)
        .sum();
    (ledger.balance(ADVERSARY, Asset::Reserve), ledger.balance(ADVERSARY, Asset::Claw) + queued)
}

/// Returns profit, notional traded and whether the update was accepted.
fn play(
    base: &Base,
    committee: &Committee,
    risk: &RiskParams,
    step: i64,
    plan: &[Action],
    mint_amount: Fixed,
    redeem_amount: Fixed,
) -> (Fixed, Fixed, bool) {
    let mut ledger = base.ledger.clone();
    let mut vault = base.vault.clone();
    let mut oracle = base.oracle.clone();
    let nav_pre = Nav::from_oracle(&oracle);
    let before = holdings(&ledger, &vault);
    let mut notional = Fixed::ZERO;

    let mut act = |a: Action, ledger: &mut Ledger, vault: &mut Vault, oracle: &mut OracleOnChainState| match a {
        Action::Mint(_) => {
            if vault.mint(ledger, oracle, ADVERSARY, mint_amount).is_ok() {
                notional = notional.max(mint_amount);
            }
        }
        Action::Redeem(_) => {
            let tokens = nav_pre.tokens_for(redeem_amount).min(ledger.balance(ADVERSARY, Asset::Claw));
            if tokens.is_positive() && vault.redeem(ledger, oracle, ADVERSARY, tokens).is_ok() {
                notional = notional.max(nav_pre.reserve_for(tokens));
            }
        }
    };
    let slot = |a: &Action| match a {
        Action::Mint(s) | Action::Redeem(s) => *s,
    };
    for a in plan.iter().filter(|a| slot(a) == Slot::Pre) {
        act(*a, &mut ledger, &mut vault, &mut oracle);
    }

    // The update lands in the next epoch.
    ledger.advance_epoch();
    let prev = oracle.published_value;
    let value = prev + risk.delta_max.mul_floor(prev).mul_int(i128::from(step));
    let accepted = publish_value(committee, &mut oracle, &mut ledger, value, risk.delta_max);
    vault.begin_epoch(&mut ledger, &mut oracle);

    for a in plan.iter().filter(|a| slot(a) == Slot::Post) {
        act(*a, &mut ledger, &mut vault, &mut oracle);
    }
    let nav_post = Nav::from_oracle(&oracle);
    let value = |(r, y): (Fixed, Fixed)| r + nav_post.reserve_for(y);
    let after = holdings(&ledger, &vault);
    (value(after) - value(before), notional, accepted)
}
