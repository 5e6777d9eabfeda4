//! NAV-based mint/redeem vault with coverage gating, an adaptive mint
//! throttle, a constant redeem cap, a FIFO redeem queue and pause flags.
//!
//! Prices are carried as the pair `(I_on, I_0)` rather than a rounded NAV,
//! so coverage comparisons are exact and amounts round once, toward the
//! vault.

use std::cmp::Ordering;
use std::collections::VecDeque;

use num_bigint::BigInt;
use num_integer::Integer;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::events::EventKind;
use crate::fixed::{Fixed, SCALE};
use crate::index::Epoch;
use crate::ledger::{Address, Asset, Ledger, RevertReason};
use crate::oracle::{check_staleness, OracleOnChainState};
use crate::validate::{ConfigError, Validator};

/// Ledger account holding reserve collateral.
pub const VAULT_RESERVE: &str = "vault:reserve";
/// Ledger account holding tokens of queued redemption claims.
pub const VAULT_QUEUE: &str = "vault:queue";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    pub gamma_min: Fixed,
    pub gamma_pause: Fixed,
    pub delta_max: Fixed,
    /// Maximum oracle age in epochs.
    pub tau: Epoch,
    /// Tokens per epoch.
    pub mint_cap_base: Fixed,
    /// Reserve currency per epoch.
    pub redeem_cap_base: Fixed,
    pub headroom_ref: Fixed,
    pub replenish_rate: Fixed,
}

impl RiskParams {
    pub fn validate_into(&self, v: &mut Validator) {
        v.check(self.gamma_min > Fixed::ONE, "gamma_min", "gamma_min must exceed 1");
        v.check(self.gamma_pause.is_positive(), "gamma_pause", "gamma_pause must be positive");
        v.check(self.gamma_pause <= self.gamma_min, "gamma_pause", "gamma_pause must not exceed gamma_min");
        v.check(
            self.delta_max.is_positive() && self.delta_max < Fixed::ONE,
            "delta_max",
            "delta_max must lie in (0, 1)",
        );
        v.check(self.mint_cap_base.is_positive(), "mint_cap_base", "caps must be positive");
        v.check(self.redeem_cap_base.is_positive(), "redeem_cap_base", "caps must be positive");
        v.check(self.headroom_ref.is_positive(), "headroom_ref", "h* must be positive");
        v.check(!self.replenish_rate.is_negative(), "replenish_rate", "rho must be non-negative");
    }

    pub fn validate(&self) -> Result<(), Vec<ConfigError>> {
        let mut v = Validator::new();
        self.validate_into(&mut v);
        v.finish()
    }
}

/// `NAV = index / initial`, kept unrounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nav {
    pub index: Fixed,
    pub initial: Fixed,
}

impl Nav {
    pub fn from_oracle(state: &OracleOnChainState) -> Self {
        Nav {
            index: state.published_value,
            initial: state.initial_value,
        }
    }

    /// Rounded down; for display and agents.
    pub fn value(&self) -> Fixed {
        self.index.div_floor(self.initial)
    }

    /// `floor(x / NAV)`.
    pub fn tokens_for(&self, reserve: Fixed) -> Fixed {
        reserve.mul_div_floor(self.initial, self.index)
    }

    /// `floor(y * NAV)`.
    pub fn reserve_for(&self, tokens: Fixed) -> Fixed {
        tokens.mul_div_floor(self.index, self.initial)
    }

    /// Exact `A / (S * NAV) <=> gamma`. Zero supply is infinite coverage.
    pub fn cmp_coverage(&self, reserves: Fixed, supply: Fixed, gamma: Fixed) -> Ordering {
        if supply.is_zero() {
            return Ordering::Greater;
        }
        Fixed::cmp_products(&[reserves, self.initial], &[gamma, supply, self.index])
    }

    /// `A / (S * NAV)` rounded down, `None` at zero supply.
    pub fn coverage(&self, reserves: Fixed, supply: Fixed) -> Option<Fixed> {
        if supply.is_zero() {
            return None;
        }
        let num = BigInt::from(reserves.raw()) * BigInt::from(self.initial.raw()) * BigInt::from(SCALE);
        let den = BigInt::from(supply.raw()) * BigInt::from(self.index.raw());
        let q = Integer::div_floor(&num, &den);
        Some(Fixed::from_raw(i128::try_from(q).unwrap_or(i128::MAX)))
    }
}

pub fn nav(oracle: &OracleOnChainState) -> Fixed {
    Nav::from_oracle(oracle).value()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedeemClaim {
    pub id: u64,
    pub claimant: Address,
    pub tokens: Fixed,
    pub enqueued_at: Epoch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultState {
    pub reserves: Fixed,
    pub supply: Fixed,
    pub mint_used: Fixed,
    pub redeem_used: Fixed,
    pub mint_cap: Fixed,
    pub redeem_cap: Fixed,
    pub redeem_queue: VecDeque<RedeemClaim>,
    pub paused: bool,
    pub stale_paused: bool,
    pub epoch: Epoch,
    next_claim: u64,
}

/// A queued claim paid at drain time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainRecord {
    pub claim_id: u64,
    pub claimant: Address,
    pub tokens: Fixed,
    pub reserve: Fixed,
    pub enqueued_at: Epoch,
    pub paid_at: Epoch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub stale: bool,
    pub paused: bool,
    pub coverage: Option<Fixed>,
    pub mint_cap: Fixed,
    pub redeem_cap: Fixed,
    pub drained: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum MintRejection {
    #[error("amount must be positive")]
    NonPositive,
    #[error("vault paused on coverage")]
    Paused,
    #[error("oracle stale")]
    StalePaused,
    #[error("mint of {requested} exceeds remaining cap {remaining}")]
    RateLimited { requested: Fixed, remaining: Fixed },
    #[error("post-mint coverage below gamma_min")]
    CoverageBreach,
    #[error("deposit rounds to zero tokens")]
    DustDeposit,
    #[error("caller holds {available} reserve, needs {needed}")]
    InsufficientFunds { needed: Fixed, available: Fixed },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueReason {
    Paused,
    StalePaused,
    RateLimited,
    Coverage,
    /// Earlier claims are still waiting.
    QueueNotEmpty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RedeemOutcome {
    Paid { tokens: Fixed, reserve: Fixed },
    Queued { claim_id: u64, reason: QueueReason },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VaultError {
    #[error("amount must be positive")]
    NonPositive,
    #[error("caller holds {available} tokens, needs {needed}")]
    InsufficientTokens { needed: Fixed, available: Fixed },
}

#[derive(Clone, Debug)]
pub struct Vault {
    pub params: RiskParams,
    state: VaultState,
    drains: Vec<DrainRecord>,
    peak_queue: usize,
}

impl Vault {
    pub fn new(params: RiskParams) -> Result<Self, Vec<ConfigError>> {
        params.validate()?;
        Ok(Self {
            state: VaultState {
                reserves: Fixed::ZERO,
                supply: Fixed::ZERO,
                mint_used: Fixed::ZERO,
                redeem_used: Fixed::ZERO,
                mint_cap: params.mint_cap_base,
                redeem_cap: params.redeem_cap_base,
                redeem_queue: VecDeque::new(),
                paused: false,
                stale_paused: false,
                epoch: 0,
                next_claim: 0,
            },
            params,
            drains: Vec::new(),
            peak_queue: 0,
        })
    }

    pub fn state(&self) -> &VaultState {
        &self.state
    }

    pub fn drains(&self) -> &[DrainRecord] {
        &self.drains
    }

    pub fn peak_queue(&self) -> usize {
        self.peak_queue
    }

    pub fn queued_tokens(&self) -> Fixed {
        self.state.redeem_queue.iter().map(|c| c.tokens).sum()
    }

    /// `C0 * min(1, h / h*)` with `h = max(0, coverage - gamma_min)`.
    pub fn mint_cap_for(&self, coverage: Option<Fixed>) -> Fixed {
        let Some(gamma) = coverage else {
            return self.params.mint_cap_base;
        };
        let h = gamma.saturating_sub_zero(self.params.gamma_min);
        if h >= self.params.headroom_ref {
            self.params.mint_cap_base
        } else {
            self.params.mint_cap_base.mul_div_floor(h, self.params.headroom_ref)
        }
    }

    /// Governance command clearing the sticky coverage pause.
    pub fn unpause(&mut self, ledger: &mut Ledger) {
        if self.state.paused {
            self.state.paused = false;
            ledger.emit(EventKind::Unpaused, json!({}));
        }
    }

    /// Grows reserves by `ceil(A * rho)` from outside the system.
    pub fn replenish(&mut self, ledger: &mut Ledger) -> Fixed {
        let add = self.state.reserves.mul_ceil(self.params.replenish_rate);
        if add.is_positive() {
            ledger
                .credit_external(VAULT_RESERVE, Asset::Reserve, add, "replenish")
                .expect("positive reserve credit");
            self.state.reserves += add;
            ledger.emit(
                EventKind::Replenished,
                json!({"amount": add, "reserves": self.state.reserves}),
            );
        }
        add
    }

    /// Sponsor capital: reserves moved into the vault without minting.
    pub fn deposit_buffer(&mut self, ledger: &mut Ledger, from: &str, amount: Fixed) -> Result<(), RevertReason> {
        ledger.transfer(from, VAULT_RESERVE, Asset::Reserve, amount)?;
        self.state.reserves += amount;
        Ok(())
    }

    /// Epoch boundary: replenish, then run the pre-call step.
    pub fn begin_epoch(&mut self, ledger: &mut Ledger, oracle: &mut OracleOnChainState) -> CheckReport {
        self.replenish(ledger);
        self.pre_call_check(ledger, oracle)
    }

    /// Risk-control step run before every state-changing call.
    pub fn pre_call_check(&mut self, ledger: &mut Ledger, oracle: &mut OracleOnChainState) -> CheckReport {
        let now = ledger.epoch();
        let was_stale = self.state.stale_paused;
        self.state.stale_paused = check_staleness(oracle, now);
        if self.state.stale_paused && !was_stale {
            ledger.emit(
                EventKind::StalePause,
                json!({"published_at": oracle.published_at, "tau": oracle.max_staleness}),
            );
        }
        let nav = Nav::from_oracle(oracle);
        if nav.cmp_coverage(self.state.reserves, self.state.supply, self.params.gamma_pause).is_lt()
            && !self.state.paused
        {
            self.state.paused = true;
            ledger.emit(
                EventKind::CoverageBreach,
                json!({"coverage": nav.coverage(self.state.reserves, self.state.supply), "gamma_pause": self.params.gamma_pause}),
            );
        }
        if now != self.state.epoch {
            self.state.epoch = now;
            self.state.mint_used = Fixed::ZERO;
            self.state.redeem_used = Fixed::ZERO;
        }
        self.state.redeem_cap = self.params.redeem_cap_base;
        let drained = self.drain(ledger, nav);
        let coverage = nav.coverage(self.state.reserves, self.state.supply);
        self.state.mint_cap = self.mint_cap_for(coverage);
        CheckReport {
            stale: self.state.stale_paused,
            paused: self.state.paused,
            coverage,
            mint_cap: self.state.mint_cap,
            redeem_cap: self.state.redeem_cap,
            drained,
        }
    }

    fn halted(&self) -> Option<QueueReason> {
        if self.state.paused {
            Some(QueueReason::Paused)
        } else if self.state.stale_paused {
            Some(QueueReason::StalePaused)
        } else {
            None
        }
    }

    /// Why paying `tokens` now is not allowed, if it is not.
    fn redeem_block(&self, nav: Nav, tokens: Fixed) -> Option<QueueReason> {
        if let Some(r) = self.halted() {
            return Some(r);
        }
        let pay = nav.reserve_for(tokens);
        if self.state.redeem_used + pay > self.state.redeem_cap {
            return Some(QueueReason::RateLimited);
        }
        if pay > self.state.reserves {
            return Some(QueueReason::Coverage);
        }
        let rest = self.state.supply - tokens;
        if rest.is_positive() && nav.cmp_coverage(self.state.reserves - pay, rest, self.params.gamma_min).is_lt() {
            return Some(QueueReason::Coverage);
        }
        None
    }

    /// Pays whole claims from the front of the queue while allowed.
    fn drain(&mut self, ledger: &mut Ledger, nav: Nav) -> usize {
        let mut count = 0;
        while let Some(front) = self.state.redeem_queue.front() {
            if self.redeem_block(nav, front.tokens).is_some() {
                break;
            }
            let claim = self.state.redeem_queue.pop_front().expect("front exists");
            let pay = self.settle(ledger, VAULT_QUEUE, &claim.claimant, claim.tokens, nav);
            let record = DrainRecord {
                claim_id: claim.id,
                claimant: claim.claimant,
                tokens: claim.tokens,
                reserve: pay,
                enqueued_at: claim.enqueued_at,
                paid_at: ledger.epoch(),
            };
            ledger.emit(
                EventKind::Redeemed,
                json!({"claimant": record.claimant, "tokens": record.tokens, "reserve": pay, "claim": record.claim_id, "queued_since": record.enqueued_at}),
            );
            self.drains.push(record);
            count += 1;
        }
        count
    }

    /// Burns `tokens` held at `from` and pays `payee` at `nav`.
    fn settle(&mut self, ledger: &mut Ledger, from: &str, payee: &str, tokens: Fixed, nav: Nav) -> Fixed {
        let pay = nav.reserve_for(tokens);
        ledger.burn_claw(from, tokens).expect("burn checked by caller");
        if pay.is_positive() {
            ledger
                .transfer(VAULT_RESERVE, payee, Asset::Reserve, pay)
                .expect("reserve covers payout");
        }
        self.state.reserves -= pay;
        self.state.supply -= tokens;
        self.state.redeem_used += pay;
        pay
    }

    pub fn mint(
        &mut self,
        ledger: &mut Ledger,
        oracle: &mut OracleOnChainState,
        caller: &str,
        deposit: Fixed,
    ) -> Result<Fixed, MintRejection> {
        self.pre_call_check(ledger, oracle);
        let nav = Nav::from_oracle(oracle);
        let result = self.try_mint(ledger, nav, caller, deposit);
        match &result {
            Ok(tokens) => ledger.emit(
                EventKind::Minted,
                json!({"caller": caller, "deposit": deposit, "tokens": tokens, "nav_index": nav.index}),
            ),
            Err(reason) => ledger.emit(
                EventKind::MintRejected,
                json!({"caller": caller, "deposit": deposit, "rejection": reason}),
            ),
        }
        result
    }

    fn try_mint(&mut self, ledger: &mut Ledger, nav: Nav, caller: &str, x: Fixed) -> Result<Fixed, MintRejection> {
        if !x.is_positive() {
            return Err(MintRejection::NonPositive);
        }
        if self.state.paused {
            return Err(MintRejection::Paused);
        }
        if self.state.stale_paused {
            return Err(MintRejection::StalePaused);
        }
        let tokens = nav.tokens_for(x);
        if !tokens.is_positive() {
            return Err(MintRejection::DustDeposit);
        }
        if self.state.mint_used + tokens > self.state.mint_cap {
            return Err(MintRejection::RateLimited {
                requested: tokens,
                remaining: self.state.mint_cap - self.state.mint_used,
            });
        }
        if nav
            .cmp_coverage(self.state.reserves + x, self.state.supply + tokens, self.params.gamma_min)
            .is_lt()
        {
            return Err(MintRejection::CoverageBreach);
        }
        let available = ledger.balance(caller, Asset::Reserve);
        if available < x {
            return Err(MintRejection::InsufficientFunds { needed: x, available });
        }
        ledger
            .transfer(caller, VAULT_RESERVE, Asset::Reserve, x)
            .expect("balance checked");
        ledger.mint_claw(caller, tokens).expect("positive mint");
        self.state.reserves += x;
        self.state.supply += tokens;
        self.state.mint_used += tokens;
        Ok(tokens)
    }

    pub fn redeem(
        &mut self,
        ledger: &mut Ledger,
        oracle: &mut OracleOnChainState,
        caller: &str,
        tokens: Fixed,
    ) -> Result<RedeemOutcome, VaultError> {
        if !tokens.is_positive() {
            return Err(VaultError::NonPositive);
        }
        let available = ledger.balance(caller, Asset::Claw);
        if available < tokens {
            return Err(VaultError::InsufficientTokens { needed: tokens, available });
        }
        self.pre_call_check(ledger, oracle);
        let nav = Nav::from_oracle(oracle);
        let block = if self.state.redeem_queue.is_empty() {
            self.redeem_block(nav, tokens)
        } else {
            Some(QueueReason::QueueNotEmpty)
        };
        if let Some(reason) = block {
            ledger
                .transfer(caller, VAULT_QUEUE, Asset::Claw, tokens)
                .expect("balance checked");
            let id = self.state.next_claim;
            self.state.next_claim += 1;
            self.state.redeem_queue.push_back(RedeemClaim {
                id,
                claimant: caller.to_string(),
                tokens,
                enqueued_at: ledger.epoch(),
            });
            self.peak_queue = self.peak_queue.max(self.state.redeem_queue.len());
            ledger.emit(
                EventKind::RedeemQueued,
                json!({"claimant": caller, "tokens": tokens, "claim": id, "reason": reason}),
            );
            return Ok(RedeemOutcome::Queued { claim_id: id, reason });
        }
        let pay = self.settle(ledger, caller, caller, tokens, nav);
        ledger.emit(
            EventKind::Redeemed,
            json!({"claimant": caller, "tokens": tokens, "reserve": pay}),
        );
        Ok(RedeemOutcome::Paid { tokens, reserve: pay })
    }

    /// Vault bookkeeping agrees with the ledger.
    pub fn consistent_with(&self, ledger: &Ledger) -> bool {
        self.state.reserves == ledger.balance(VAULT_RESERVE, Asset::Reserve)
            && self.state.supply == ledger.supply(Asset::Claw)
            && self.queued_tokens() == ledger.balance(VAULT_QUEUE, Asset::Claw)
    }
}

/// Coverage floor under capped index growth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolvencyBound {
    pub gamma0: Fixed,
    pub horizon: u32,
    /// `gamma0 * ((1 + rho) / (1 + delta_max))^T`, rounded down.
    pub lower_bound: Fixed,
    /// Smallest `rho` (to 1e-18) with `lower_bound >= gamma_min`; `None`
    /// for a zero horizon.
    pub required_rho: Option<Fixed>,
}

fn big(x: Fixed) -> BigInt {
    BigInt::from(x.raw())
}

/// `gamma0 * R^T >= gamma * D^T` on raw values, exactly.
fn holds_after(gamma0: Fixed, rho: Fixed, delta: Fixed, horizon: u32, gamma: Fixed) -> bool {
    let r = big(Fixed::ONE + rho).pow(horizon);
    let d = big(Fixed::ONE + delta).pow(horizon);
    big(gamma0) * r >= big(gamma) * d
}

pub fn solvency_bound(gamma0: Fixed, params: &RiskParams, horizon: u32) -> SolvencyBound {
    let r = big(Fixed::ONE + params.replenish_rate).pow(horizon);
    let d = big(Fixed::ONE + params.delta_max).pow(horizon);
    let lb = Integer::div_floor(&(big(gamma0) * r), &d);
    let lower_bound = Fixed::from_raw(i128::try_from(lb).expect("bound fits"));
    let required_rho = (horizon > 0).then(|| {
        let (mut lo, mut hi) = (-SCALE + 1, params.delta_max.raw().max(0));
        // Grow hi until it satisfies the bound (only needed when gamma0 < gamma_min).
        while !holds_after(gamma0, Fixed::from_raw(hi), params.delta_max, horizon, params.gamma_min) {
            hi = hi.saturating_mul(2).max(SCALE);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if holds_after(gamma0, Fixed::from_raw(mid), params.delta_max, horizon, params.gamma_min) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Fixed::from_raw(hi)
    });
    SolvencyBound {
        gamma0,
        horizon,
        lower_bound,
        required_rho,
    }
}

/// Checks `Gamma_t >= Gamma_0 * ((1 + rho) / (1 + delta))^t` exactly at
/// every observed epoch, on raw integers:
/// `A_t * S_0 * I_0 * D^t >= A_0 * S_t * I_t * R^t`.
#[derive(Clone, Debug)]
pub struct SolvencyTracker {
    a0: BigInt,
    s0: BigInt,
    i0: BigInt,
    r: BigInt,
    d: BigInt,
    r_pow: BigInt,
    d_pow: BigInt,
    pub epochs: u32,
    pub violations: u32,
}

impl SolvencyTracker {
    pub fn new(reserves: Fixed, supply: Fixed, index: Fixed, rho: Fixed, delta: Fixed) -> Self {
        Self {
            a0: big(reserves),
            s0: big(supply),
            i0: big(index),
            r: big(Fixed::ONE + rho),
            d: big(Fixed::ONE + delta),
            r_pow: BigInt::from(1),
            d_pow: BigInt::from(1),
            epochs: 0,
            violations: 0,
        }
    }

    /// Record the state after one more epoch. Returns whether the bound held.
    pub fn observe(&mut self, reserves: Fixed, supply: Fixed, index: Fixed) -> bool {
        self.epochs += 1;
        self.r_pow *= &self.r;
        self.d_pow *= &self.d;
        let ok = supply.is_zero()
            || big(reserves) * &self.s0 * &self.i0 * &self.d_pow >= &self.a0 * big(supply) * big(index) * &self.r_pow;
        if !ok {
            self.violations += 1;
        }
        ok
    }
}
