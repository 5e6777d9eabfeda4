//! Append-only, totally ordered event log with JSON-lines export.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::crypto::{sha256, Digest};
use crate::index::Epoch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    IndexUpdated,
    IndexRejected,
    StalePause,
    Minted,
    MintRejected,
    Redeemed,
    RedeemQueued,
    CoverageBreach,
    Unpaused,
    Replenished,
    ExternalCredit,
    ExternalDebit,
    BundleCommitted,
    BundleReverted,
    EscrowOpened,
    EscrowLocked,
    EscrowReleased,
    EscrowRefunded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub epoch: Epoch,
    pub kind: EventKind,
    /// Object keys serialize sorted, so the line is stable.
    pub payload: Value,
    /// SHA-256 of the compact payload JSON.
    pub digest: Digest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, epoch: Epoch, kind: EventKind, payload: Value) -> &Event {
        let bytes = serde_json::to_vec(&payload).expect("json value serializes");
        let event = Event {
            seq: self.events.len() as u64,
            epoch,
            kind,
            digest: sha256(&bytes),
            payload,
        };
        self.events.push(event);
        self.events.last().expect("just pushed")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}
