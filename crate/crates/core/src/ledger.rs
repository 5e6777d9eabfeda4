//! In-process ledger: two-asset accounts, all-or-nothing bundles, an epoch
//! clock and the event log.
//!
//! Bundles are validated against a staged overlay and applied only when
//! every effect passes, so a revert never touches committed state.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::events::{EventKind, EventLog};
use crate::fixed::Fixed;
use crate::index::Epoch;
use crate::settlement::{Escrow, EscrowId};

pub type Address = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Asset {
    Reserve,
    Claw,
}

impl fmt::Display for Asset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Asset::Reserve => "reserve",
            Asset::Claw => "claw",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub address: Address,
    pub reserve_balance: Fixed,
    pub claw_balance: Fixed,
}

impl Account {
    pub fn balance(&self, asset: Asset) -> Fixed {
        match asset {
            Asset::Reserve => self.reserve_balance,
            Asset::Claw => self.claw_balance,
        }
    }

    fn balance_mut(&mut self, asset: Asset) -> &mut Fixed {
        match asset {
            Asset::Reserve => &mut self.reserve_balance,
            Asset::Claw => &mut self.claw_balance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    Transfer {
        from: Address,
        to: Address,
        asset: Asset,
        amount: Fixed,
    },
    /// Charges `amount` against an escrow's budget; rejects when
    /// `released + locked + amount > budget_max`.
    BudgetGate { escrow: EscrowId, amount: Fixed },
    /// Downstream failure signal; always reverts the bundle.
    Veto { reason: String },
}

impl Effect {
    pub fn transfer(from: impl Into<Address>, to: impl Into<Address>, asset: Asset, amount: Fixed) -> Self {
        Effect::Transfer {
            from: from.into(),
            to: to.into(),
            asset,
            amount,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionBundle {
    pub effects: Vec<Effect>,
    pub origin: Address,
    pub epoch: Epoch,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RevertReason {
    #[error("effect {index}: amount must be positive")]
    NonPositiveAmount { index: usize },
    #[error("effect {index}: {account} holds {available} {asset}, needs {needed}")]
    InsufficientBalance {
        index: usize,
        account: Address,
        asset: Asset,
        needed: Fixed,
        available: Fixed,
    },
    #[error("effect {index}: unknown escrow {escrow}")]
    UnknownEscrow { index: usize, escrow: EscrowId },
    #[error("effect {index}: escrow {escrow} is closed or past its deadline")]
    EscrowClosed { index: usize, escrow: EscrowId },
    #[error("effect {index}: budget of escrow {escrow} exceeded ({requested} requested, {remaining} remaining)")]
    BudgetExceeded {
        index: usize,
        escrow: EscrowId,
        requested: Fixed,
        remaining: Fixed,
    },
    #[error("effect {index}: vetoed: {reason}")]
    Vetoed { index: usize, reason: String },
    #[error("bundle epoch {bundle} does not match ledger epoch {ledger}")]
    WrongEpoch { bundle: Epoch, ledger: Epoch },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(usize),
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("{account} holds {available} {asset}, needs {needed}")]
    InsufficientBalance {
        account: Address,
        asset: Asset,
        needed: Fixed,
        available: Fixed,
    },
    #[error("claw supply changes only through vault hooks")]
    ClawNotExternal,
}

/// Full mutable state apart from the append-only log.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    pub epoch: Epoch,
    pub accounts: BTreeMap<Address, Account>,
    pub escrows: BTreeMap<EscrowId, Escrow>,
    pub supply: BTreeMap<Asset, Fixed>,
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    state: LedgerState,
    log: EventLog,
    snapshots: Vec<LedgerState>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn epoch(&self) -> Epoch {
        self.state.epoch
    }

    pub fn advance_epoch(&mut self) -> Epoch {
        self.state.epoch += 1;
        self.state.epoch
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn emit(&mut self, kind: EventKind, payload: serde_json::Value) {
        let epoch = self.state.epoch;
        self.log.append(epoch, kind, payload);
    }

    pub fn balance(&self, address: &str, asset: Asset) -> Fixed {
        self.state
            .accounts
            .get(address)
            .map(|a| a.balance(asset))
            .unwrap_or_default()
    }

    pub fn account(&self, address: &str) -> Option<&Account> {
        self.state.accounts.get(address)
    }

    pub fn supply(&self, asset: Asset) -> Fixed {
        self.state.supply.get(&asset).copied().unwrap_or_default()
    }

    /// Sum of balances held across all accounts.
    pub fn total_held(&self, asset: Asset) -> Fixed {
        self.state.accounts.values().map(|a| a.balance(asset)).sum()
    }

    /// Per-asset balances add up to the tracked supply.
    pub fn is_conserved(&self) -> bool {
        [Asset::Reserve, Asset::Claw]
            .into_iter()
            .all(|a| self.total_held(a) == self.supply(a))
    }

    pub fn escrow(&self, id: &str) -> Option<&Escrow> {
        self.state.escrows.get(id)
    }

    pub(crate) fn escrows_mut(&mut self) -> &mut BTreeMap<EscrowId, Escrow> {
        &mut self.state.escrows
    }

    fn account_mut(&mut self, address: &str) -> &mut Account {
        self.state
            .accounts
            .entry(address.to_string())
            .or_insert_with(|| Account {
                address: address.to_string(),
                ..Account::default()
            })
    }

    fn adjust_supply(&mut self, asset: Asset, delta: Fixed) {
        *self.state.supply.entry(asset).or_default() += delta;
    }

    /// Reserve currency entering from outside the ledger (funding, yield).
    pub fn credit_external(&mut self, address: &str, asset: Asset, amount: Fixed, memo: &str) -> Result<(), LedgerError> {
        if asset == Asset::Claw {
            return Err(LedgerError::ClawNotExternal);
        }
        if !amount.is_positive() {
            return Err(LedgerError::NonPositiveAmount);
        }
        *self.account_mut(address).balance_mut(asset) += amount;
        self.adjust_supply(asset, amount);
        self.emit(
            EventKind::ExternalCredit,
            json!({"account": address, "asset": asset, "amount": amount, "memo": memo}),
        );
        Ok(())
    }

    /// Reserve currency leaving the ledger (off-chain spending).
    pub fn debit_external(&mut self, address: &str, asset: Asset, amount: Fixed, memo: &str) -> Result<(), LedgerError> {
        if asset == Asset::Claw {
            return Err(LedgerError::ClawNotExternal);
        }
        self.debit(address, asset, amount)?;
        self.adjust_supply(asset, -amount);
        self.emit(
            EventKind::ExternalDebit,
            json!({"account": address, "asset": asset, "amount": amount, "memo": memo}),
        );
        Ok(())
    }

    fn debit(&mut self, address: &str, asset: Asset, amount: Fixed) -> Result<(), LedgerError> {
        if !amount.is_positive() {
            return Err(LedgerError::NonPositiveAmount);
        }
        let available = self.balance(address, asset);
        if available < amount {
            return Err(LedgerError::InsufficientBalance {
                account: address.to_string(),
                asset,
                needed: amount,
                available,
            });
        }
        *self.account_mut(address).balance_mut(asset) -= amount;
        Ok(())
    }

    /// Vault issuance hook: the only way claw supply grows.
    pub(crate) fn mint_claw(&mut self, address: &str, amount: Fixed) -> Result<(), LedgerError> {
        if !amount.is_positive() {
            return Err(LedgerError::NonPositiveAmount);
        }
        *self.account_mut(address).balance_mut(Asset::Claw) += amount;
        self.adjust_supply(Asset::Claw, amount);
        Ok(())
    }

    /// Vault burn hook: the only way claw supply shrinks.
    pub(crate) fn burn_claw(&mut self, address: &str, amount: Fixed) -> Result<(), LedgerError> {
        self.debit(address, Asset::Claw, amount)?;
        self.adjust_supply(Asset::Claw, -amount);
        Ok(())
    }

    /// Applies every effect or none. Logs `BundleCommitted` or
    /// `BundleReverted` with the first failing effect's reason.
    pub fn execute_atomic(&mut self, bundle: &TransactionBundle) -> Result<(), RevertReason> {
        match self.stage(bundle) {
            Ok(staged) => {
                for ((address, asset), value) in staged.balances {
                    *self.account_mut(&address).balance_mut(asset) = value;
                }
                for (id, charged) in staged.gates {
                    let escrow = self.state.escrows.get_mut(&id).expect("checked in stage");
                    escrow.released += charged;
                }
                self.emit(
                    EventKind::BundleCommitted,
                    json!({"origin": bundle.origin, "effects": bundle.effects}),
                );
                Ok(())
            }
            Err(reason) => {
                self.emit(
                    EventKind::BundleReverted,
                    json!({"origin": bundle.origin, "effects": bundle.effects, "reason": reason}),
                );
                Err(reason)
            }
        }
    }

    fn stage(&self, bundle: &TransactionBundle) -> Result<Staged, RevertReason> {
        if bundle.epoch != self.state.epoch {
            return Err(RevertReason::WrongEpoch {
                bundle: bundle.epoch,
                ledger: self.state.epoch,
            });
        }
        let mut staged = Staged::default();
        for (index, effect) in bundle.effects.iter().enumerate() {
            match effect {
                Effect::Transfer { from, to, asset, amount } => {
                    if !amount.is_positive() {
                        return Err(RevertReason::NonPositiveAmount { index });
                    }
                    let available = staged.balance(self, from, *asset);
                    if available < *amount {
                        return Err(RevertReason::InsufficientBalance {
                            index,
                            account: from.clone(),
                            asset: *asset,
                            needed: *amount,
                            available,
                        });
                    }
                    staged.balances.insert((from.clone(), *asset), available - *amount);
                    let credited = staged.balance(self, to, *asset) + *amount;
                    staged.balances.insert((to.clone(), *asset), credited);
                }
                Effect::BudgetGate { escrow, amount } => {
                    if !amount.is_positive() {
                        return Err(RevertReason::NonPositiveAmount { index });
                    }
                    let Some(e) = self.state.escrows.get(escrow) else {
                        return Err(RevertReason::UnknownEscrow {
                            index,
                            escrow: escrow.clone(),
                        });
                    };
                    if e.closed || self.state.epoch > e.deadline {
                        return Err(RevertReason::EscrowClosed {
                            index,
                            escrow: escrow.clone(),
                        });
                    }
                    let charged = staged.gates.get(escrow).copied().unwrap_or_default();
                    let remaining = e.budget_max - e.released - e.locked - charged;
                    if *amount > remaining {
                        return Err(RevertReason::BudgetExceeded {
                            index,
                            escrow: escrow.clone(),
                            requested: *amount,
                            remaining,
                        });
                    }
                    staged.gates.insert(escrow.clone(), charged + *amount);
                }
                Effect::Veto { reason } => {
                    return Err(RevertReason::Vetoed {
                        index,
                        reason: reason.clone(),
                    })
                }
            }
        }
        Ok(staged)
    }

    /// Single transfer as a one-effect bundle at the current epoch.
    pub fn transfer(&mut self, from: &str, to: &str, asset: Asset, amount: Fixed) -> Result<(), RevertReason> {
        let bundle = TransactionBundle {
            effects: vec![Effect::transfer(from, to, asset, amount)],
            origin: from.to_string(),
            epoch: self.state.epoch,
        };
        self.execute_atomic(&bundle)
    }

    /// Capture the state (not the log). Returns a handle for [`restore`].
    ///
    /// [`restore`]: Ledger::restore
    pub fn snapshot(&mut self) -> usize {
        self.snapshots.push(self.state.clone());
        self.snapshots.len() - 1
    }

    pub fn restore(&mut self, id: usize) -> Result<(), LedgerError> {
        let state = self
            .snapshots
            .get(id)
            .cloned()
            .ok_or(LedgerError::UnknownSnapshot(id))?;
        self.state = state;
        Ok(())
    }

    /// Canonical JSON of the state, for byte-level comparisons.
    pub fn state_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.state).expect("state serializes")
    }
}

#[derive(Default)]
struct Staged {
    balances: BTreeMap<(Address, Asset), Fixed>,
    gates: BTreeMap<EscrowId, Fixed>,
}

impl Staged {
    fn balance(&self, ledger: &Ledger, address: &str, asset: Asset) -> Fixed {
        self.balances
            .get(&(address.to_string(), asset))
            .copied()
            .unwrap_or_else(|| ledger.balance(address, asset))
    }
}
