//! Atomic multi-hop payments and budget-gated escrow.
//!
//! An escrow holds its whole budget `B*` in a custody account from the moment
//! it opens. Entries are locked against the budget, released on a receipt
//! signed by the payee, and whatever custody still holds after the deadline
//! goes back to the originator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crypto::{Digest, KeyRegistry, Signature, Signer, SigningKey};
use crate::events::EventKind;
use crate::fixed::Fixed;
use crate::index::Epoch;
use crate::ledger::{Address, Asset, Effect, Ledger, RevertReason, TransactionBundle};

pub type EscrowId = String;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopPayment {
    pub payer: Address,
    pub payee: Address,
    /// ClawCoin tokens.
    pub amount: Fixed,
    pub subtask_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Locked,
    Released,
    Refunded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowEntry {
    pub payee: Address,
    pub amount: Fixed,
    pub status: EntryStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escrow {
    pub escrow_id: EscrowId,
    pub originator: Address,
    pub budget_max: Fixed,
    pub locked: Fixed,
    pub released: Fixed,
    pub deadline: Epoch,
    pub entries: BTreeMap<String, EscrowEntry>,
    pub closed: bool,
}

impl Escrow {
    pub fn custody_address(id: &str) -> Address {
        format!("escrow:{id}")
    }

    pub fn custody(&self) -> Address {
        Self::custody_address(&self.escrow_id)
    }

    /// Budget neither locked nor released.
    pub fn available(&self) -> Fixed {
        self.budget_max - self.locked - self.released
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedReceipt {
    pub escrow_id: EscrowId,
    pub subtask_id: String,
    pub executor: Address,
    pub artifact: Digest,
    pub signature: Signature,
}

impl SignedReceipt {
    pub fn payload(escrow_id: &str, subtask_id: &str, executor: &str, artifact: &Digest) -> Vec<u8> {
        let mut out = Vec::new();
        for part in [escrow_id, subtask_id, executor] {
            out.extend_from_slice(part.as_bytes());
            out.push(0);
        }
        out.extend_from_slice(artifact.as_bytes());
        out
    }

    pub fn sign(
        escrow_id: &str,
        subtask_id: &str,
        executor: &str,
        artifact: Digest,
        key: &SigningKey,
        signer: &dyn Signer,
    ) -> Self {
        let signature = signer.sign(key, &Self::payload(escrow_id, subtask_id, executor, &artifact));
        SignedReceipt {
            escrow_id: escrow_id.to_string(),
            subtask_id: subtask_id.to_string(),
            executor: executor.to_string(),
            artifact,
            signature,
        }
    }

    pub fn verify(&self, registry: &KeyRegistry, signer: &dyn Signer) -> bool {
        registry.key(&self.executor).is_some_and(|key| {
            signer.verify(
                key,
                &Self::payload(&self.escrow_id, &self.subtask_id, &self.executor, &self.artifact),
                &self.signature,
            )
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SettlementError {
    #[error("escrow {0} already exists")]
    DuplicateEscrow(EscrowId),
    #[error("unknown escrow {0}")]
    UnknownEscrow(EscrowId),
    #[error("budget must be positive")]
    NonPositiveBudget,
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("escrow {0} is closed")]
    Closed(EscrowId),
    #[error("escrow {escrow} deadline {deadline} has passed")]
    PastDeadline { escrow: EscrowId, deadline: Epoch },
    #[error("escrow {escrow} deadline {deadline} not reached")]
    BeforeDeadline { escrow: EscrowId, deadline: Epoch },
    #[error("lock of {requested} exceeds available budget {available}")]
    BudgetExceeded { requested: Fixed, available: Fixed },
    #[error("subtask {0} already has an entry")]
    DuplicateSubtask(String),
    #[error("no locked entry for subtask {0}")]
    NotLocked(String),
    #[error("receipt executor {executor} does not match payee {payee}")]
    ExecutorMismatch { executor: Address, payee: Address },
    #[error("receipt signature does not verify")]
    BadSignature,
    #[error("bundle reverted: {0}")]
    Reverted(#[from] RevertReason),
}

/// Escrow operations over one ledger.
pub struct EscrowBook<'a> {
    pub ledger: &'a mut Ledger,
    pub registry: &'a KeyRegistry,
    pub signer: &'a dyn Signer,
}

impl EscrowBook<'_> {
    /// Moves `budget` tokens from the originator into custody.
    pub fn open(&mut self, id: &str, originator: &str, budget: Fixed, deadline: Epoch) -> Result<(), SettlementError> {
        if self.ledger.escrow(id).is_some() {
            return Err(SettlementError::DuplicateEscrow(id.to_string()));
        }
        if !budget.is_positive() {
            return Err(SettlementError::NonPositiveBudget);
        }
        let custody = Escrow::custody_address(id);
        self.ledger.transfer(originator, &custody, Asset::Claw, budget)?;
        self.ledger.escrows_mut().insert(
            id.to_string(),
            Escrow {
                escrow_id: id.to_string(),
                originator: originator.to_string(),
                budget_max: budget,
                locked: Fixed::ZERO,
                released: Fixed::ZERO,
                deadline,
                entries: BTreeMap::new(),
                closed: false,
            },
        );
        self.ledger.emit(
            EventKind::EscrowOpened,
            json!({"escrow": id, "originator": originator, "budget": budget, "deadline": deadline}),
        );
        Ok(())
    }

    fn live(&self, id: &str) -> Result<&Escrow, SettlementError> {
        let e = self
            .ledger
            .escrow(id)
            .ok_or_else(|| SettlementError::UnknownEscrow(id.to_string()))?;
        if e.closed {
            return Err(SettlementError::Closed(id.to_string()));
        }
        if self.ledger.epoch() > e.deadline {
            return Err(SettlementError::PastDeadline {
                escrow: id.to_string(),
                deadline: e.deadline,
            });
        }
        Ok(e)
    }

    pub fn lock(&mut self, id: &str, subtask: &str, payee: &str, amount: Fixed) -> Result<(), SettlementError> {
        if !amount.is_positive() {
            return Err(SettlementError::NonPositiveAmount);
        }
        let e = self.live(id)?;
        if e.entries.contains_key(subtask) {
            return Err(SettlementError::DuplicateSubtask(subtask.to_string()));
        }
        if amount > e.available() {
            return Err(SettlementError::BudgetExceeded {
                requested: amount,
                available: e.available(),
            });
        }
        let e = self.ledger.escrows_mut().get_mut(id).expect("checked");
        e.locked += amount;
        e.entries.insert(
            subtask.to_string(),
            EscrowEntry {
                payee: payee.to_string(),
                amount,
                status: EntryStatus::Locked,
            },
        );
        self.ledger.emit(
            EventKind::EscrowLocked,
            json!({"escrow": id, "subtask": subtask, "payee": payee, "amount": amount}),
        );
        Ok(())
    }

    /// Pays the locked entry named by the receipt to its payee.
    pub fn release(&mut self, receipt: &SignedReceipt) -> Result<Fixed, SettlementError> {
        let id = receipt.escrow_id.as_str();
        let e = self.live(id)?;
        let entry = e
            .entries
            .get(&receipt.subtask_id)
            .filter(|en| en.status == EntryStatus::Locked)
            .ok_or_else(|| SettlementError::NotLocked(receipt.subtask_id.clone()))?;
        if entry.payee != receipt.executor {
            return Err(SettlementError::ExecutorMismatch {
                executor: receipt.executor.clone(),
                payee: entry.payee.clone(),
            });
        }
        if !receipt.verify(self.registry, self.signer) {
            return Err(SettlementError::BadSignature);
        }
        let (payee, amount, custody) = (entry.payee.clone(), entry.amount, e.custody());
        self.ledger.transfer(&custody, &payee, Asset::Claw, amount)?;
        let e = self.ledger.escrows_mut().get_mut(id).expect("checked");
        e.locked -= amount;
        e.released += amount;
        e.entries.get_mut(&receipt.subtask_id).expect("checked").status = EntryStatus::Released;
        self.ledger.emit(
            EventKind::EscrowReleased,
            json!({"escrow": id, "subtask": receipt.subtask_id, "payee": payee, "amount": amount, "artifact": receipt.artifact}),
        );
        Ok(amount)
    }

    /// After the deadline, returns everything custody still holds to the
    /// originator. Released payments are final.
    pub fn refund(&mut self, id: &str) -> Result<Fixed, SettlementError> {
        let e = self
            .ledger
            .escrow(id)
            .ok_or_else(|| SettlementError::UnknownEscrow(id.to_string()))?;
        if e.closed {
            return Err(SettlementError::Closed(id.to_string()));
        }
        if self.ledger.epoch() <= e.deadline {
            return Err(SettlementError::BeforeDeadline {
                escrow: id.to_string(),
                deadline: e.deadline,
            });
        }
        let (custody, originator) = (e.custody(), e.originator.clone());
        let amount = self.ledger.balance(&custody, Asset::Claw);
        if amount.is_positive() {
            self.ledger.transfer(&custody, &originator, Asset::Claw, amount)?;
        }
        let e = self.ledger.escrows_mut().get_mut(id).expect("checked");
        e.locked = Fixed::ZERO;
        e.closed = true;
        for entry in e.entries.values_mut() {
            if entry.status == EntryStatus::Locked {
                entry.status = EntryStatus::Refunded;
            }
        }
        self.ledger.emit(
            EventKind::EscrowRefunded,
            json!({"escrow": id, "originator": originator, "amount": amount}),
        );
        Ok(amount)
    }
}

/// Builder for an all-or-nothing list of token payments.
#[derive(Clone, Debug, Default)]
pub struct MultiHop {
    origin: Address,
    hops: Vec<HopPayment>,
    budget: Option<EscrowId>,
    vetoes: Vec<String>,
}

impl MultiHop {
    pub fn new(origin: impl Into<Address>) -> Self {
        Self {
            origin: origin.into(),
            ..Self::default()
        }
    }

    pub fn hop(mut self, payer: &str, payee: &str, amount: Fixed, subtask: &str) -> Self {
        self.hops.push(HopPayment {
            payer: payer.to_string(),
            payee: payee.to_string(),
            amount,
            subtask_id: subtask.to_string(),
        });
        self
    }

    pub fn hops(mut self, hops: impl IntoIterator<Item = HopPayment>) -> Self {
        self.hops.extend(hops);
        self
    }

    /// Pay from the escrow's custody, gated by its remaining budget.
    pub fn with_budget(mut self, escrow: &str) -> Self {
        self.budget = Some(escrow.to_string());
        self
    }

    /// Downstream failure signal.
    pub fn veto(mut self, reason: impl Into<String>) -> Self {
        self.vetoes.push(reason.into());
        self
    }

    pub fn to_bundle(&self, epoch: Epoch) -> TransactionBundle {
        let mut effects = Vec::with_capacity(self.hops.len() + 1);
        if let Some(id) = &self.budget {
            let custody = Escrow::custody_address(id);
            if let Some(h) = self.hops.iter().find(|h| h.payer != custody) {
                effects.push(Effect::Veto {
                    reason: format!("hop {} is not paid from escrow custody", h.subtask_id),
                });
            }
            let total: Fixed = self.hops.iter().map(|h| h.amount).sum();
            if total.is_positive() {
                effects.push(Effect::BudgetGate {
                    escrow: id.clone(),
                    amount: total,
                });
            }
        }
        effects.extend(
            self.hops
                .iter()
                .map(|h| Effect::transfer(h.payer.clone(), h.payee.clone(), Asset::Claw, h.amount)),
        );
        effects.extend(self.vetoes.iter().map(|r| Effect::Veto { reason: r.clone() }));
        TransactionBundle {
            effects,
            origin: self.origin.clone(),
            epoch,
        }
    }

    pub fn execute(&self, ledger: &mut Ledger) -> Result<(), RevertReason> {
        let bundle = self.to_bundle(ledger.epoch());
        ledger.execute_atomic(&bundle)
    }
}

pub fn atomic_multihop(
    ledger: &mut Ledger,
    origin: &str,
    hops: &[HopPayment],
    budget: Option<&str>,
) -> Result<(), RevertReason> {
    let mut mh = MultiHop::new(origin).hops(hops.iter().cloned());
    if let Some(id) = budget {
        mh = mh.with_budget(id);
    }
    mh.execute(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{sha256, MockSigner};
    use crate::fixed::fx;

    fn setup(holders: &[(&str, &str)]) -> (Ledger, KeyRegistry) {
        let mut l = Ledger::new();
        let mut reg = KeyRegistry::new();
        for (a, amt) in holders {
            l.mint_claw(a, fx(amt)).unwrap();
        }
        for who in ["alice", "bob", "carol", "dave"] {
            reg.register(who, SigningKey::derive(who));
        }
        (l, reg)
    }

    fn receipt(escrow: &str, subtask: &str, executor: &str) -> SignedReceipt {
        SignedReceipt::sign(escrow, subtask, executor, sha256(subtask.as_bytes()), &SigningKey::derive(executor), &MockSigner)
    }

    #[test]
    fn four_hops_commit_and_underfunded_revert() {
        let (mut l, _) = setup(&[("a", "100")]);
        let ok = MultiHop::new("a")
            .hop("a", "b", fx("40"), "s1")
            .hop("b", "c", fx("30"), "s2")
            .hop("c", "d", fx("20"), "s3")
            .hop("d", "e", fx("10"), "s4");
        ok.execute(&mut l).unwrap();
        assert_eq!(l.balance("e", Asset::Claw), fx("10"));
        assert_eq!(l.balance("a", Asset::Claw), fx("60"));

        let before = l.state_bytes();
        let bad = MultiHop::new("a")
            .hop("a", "b", fx("10"), "s1")
            .hop("b", "c", fx("10"), "s2")
            .hop("c", "z", fx("999"), "s3")
            .hop("d", "e", fx("1"), "s4");
        assert!(matches!(bad.execute(&mut l), Err(RevertReason::InsufficientBalance { index: 2, .. })));
        assert_eq!(l.state_bytes(), before);
    }

    /// Independent oracle: the gate admits iff prior released plus the new
    /// total stays within the budget.
    fn gate_oracle(budget: i64, released: i64, locked: i64, new_total: i64) -> bool {
        released + locked + new_total <= budget
    }

    #[test]
    fn budget_gate_example() {
        let (mut l, reg) = setup(&[("alice", "100")]);
        let mut book = EscrowBook { ledger: &mut l, registry: &reg, signer: &MockSigner };
        book.open("e1", "alice", fx("100"), 10).unwrap();
        let custody = Escrow::custody_address("e1");
        MultiHop::new("alice")
            .hop(&custody, "bob", fx("60"), "s1")
            .with_budget("e1")
            .execute(&mut l)
            .unwrap();
        assert_eq!(l.escrow("e1").unwrap().released, fx("60"));
        let before = l.state_bytes();
        let r = MultiHop::new("alice")
            .hop(&custody, "carol", fx("30"), "s2")
            .hop(&custody, "dave", fx("20"), "s3")
            .with_budget("e1")
            .execute(&mut l);
        assert!(!gate_oracle(100, 60, 0, 50));
        assert!(matches!(r, Err(RevertReason::BudgetExceeded { .. })));
        assert_eq!(l.state_bytes(), before);
    }

    #[test]
    fn budget_requires_custody_payer() {
        let (mut l, reg) = setup(&[("alice", "100"), ("bob", "10")]);
        EscrowBook { ledger: &mut l, registry: &reg, signer: &MockSigner }
            .open("e1", "alice", fx("50"), 10)
            .unwrap();
        let r = MultiHop::new("bob").hop("bob", "carol", fx("5"), "s").with_budget("e1").execute(&mut l);
        assert!(matches!(r, Err(RevertReason::Vetoed { .. })));
    }

    #[test]
    fn escrow_lifecycle() {
        let (mut l, reg) = setup(&[("alice", "100")]);
        let mut book = EscrowBook { ledger: &mut l, registry: &reg, signer: &MockSigner };
        book.open("e1", "alice", fx("100"), 5).unwrap();
        book.lock("e1", "s1", "bob", fx("40")).unwrap();
        assert_eq!(book.release(&receipt("e1", "s1", "bob")).unwrap(), fx("40"));
        assert_eq!(book.ledger.balance("bob", Asset::Claw), fx("40"));
        assert_eq!(book.ledger.escrow("e1").unwrap().released, fx("40"));
        assert_eq!(book.release(&receipt("e1", "s1", "bob")), Err(SettlementError::NotLocked("s1".into())));

        book.lock("e1", "s2", "carol", fx("50")).unwrap();
        assert!(matches!(book.lock("e1", "s3", "dave", fx("20")), Err(SettlementError::BudgetExceeded { .. })));

        let mut forged = receipt("e1", "s2", "carol");
        forged.signature = receipt("e1", "s2", "dave").signature;
        assert_eq!(book.release(&forged), Err(SettlementError::BadSignature));
        // A receipt for s1 cannot release s2.
        let mut swapped = receipt("e1", "s1", "carol");
        swapped.subtask_id = "s2".into();
        assert_eq!(book.release(&swapped), Err(SettlementError::BadSignature));

        assert!(matches!(book.refund("e1"), Err(SettlementError::BeforeDeadline { .. })));
        for _ in 0..6 {
            book.ledger.advance_epoch();
        }
        assert!(matches!(book.lock("e1", "s9", "dave", fx("1")), Err(SettlementError::PastDeadline { .. })));
        assert!(matches!(book.release(&receipt("e1", "s2", "carol")), Err(SettlementError::PastDeadline { .. })));
        assert_eq!(book.refund("e1").unwrap(), fx("60"));
        // Originator debit = payee credits + refund.
        assert_eq!(book.ledger.balance("alice", Asset::Claw), fx("60"));
        assert_eq!(fx("100"), fx("40") + fx("60"));
        assert!(book.ledger.is_conserved());
    }

    #[test]
    fn open_requires_funds() {
        let (mut l, reg) = setup(&[("alice", "10")]);
        let mut book = EscrowBook { ledger: &mut l, registry: &reg, signer: &MockSigner };
        assert!(matches!(book.open("e1", "alice", fx("11"), 3), Err(SettlementError::Reverted(_))));
        assert!(book.ledger.escrow("e1").is_none());
    }
}
