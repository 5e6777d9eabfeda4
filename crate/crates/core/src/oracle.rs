//! Observation commitments, signed attestations, committee and DON
//! aggregation, and the on-chain publication checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::crypto::{merkle_root, sha256, Digest, KeyRegistry, MockSigner, Signature, Signer};
use crate::events::{EventKind, EventLog};
use crate::fixed::Fixed;
use crate::index::{median, Epoch, PriceQuote};
use crate::ledger::Ledger;
use crate::validate::{ConfigError, Validator};

pub type NodeId = String;

/// Writer id carried by combined committee attestations.
pub const COMMITTEE_WRITER: &str = "committee";

/// `model || 0x00 || vendor || 0x00 || price_in || price_out || epoch`,
/// prices as big-endian i128 raw fixed-point, epoch as big-endian u64.
pub fn encode_quote(q: &PriceQuote) -> Vec<u8> {
    let mut out = Vec::with_capacity(q.model.0.len() + q.vendor.0.len() + 42);
    out.extend_from_slice(q.model.0.as_bytes());
    out.push(0);
    out.extend_from_slice(q.vendor.0.as_bytes());
    out.push(0);
    out.extend_from_slice(&q.price_in.to_be_bytes());
    out.extend_from_slice(&q.price_out.to_be_bytes());
    out.extend_from_slice(&q.observed_at.to_be_bytes());
    out
}

/// Merkle root over the canonically sorted observation set.
pub fn build_commitment(quotes: &[PriceQuote]) -> Digest {
    let mut sorted: Vec<&PriceQuote> = quotes.iter().collect();
    sorted.sort_by(|a, b| (&a.model, &a.vendor).cmp(&(&b.model, &b.vendor)));
    let leaves: Vec<Digest> = sorted.iter().map(|q| sha256(&encode_quote(q))).collect();
    merkle_root(&leaves)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttestationTuple {
    pub index_value: Fixed,
    pub epoch: Epoch,
    pub basket_version: u64,
    pub commitment_root: Digest,
}

impl AttestationTuple {
    /// Signed bytes. The node id is excluded so member signatures over the
    /// same tuple can be combined.
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 + 8 + 32);
        out.extend_from_slice(&self.index_value.to_be_bytes());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.basket_version.to_be_bytes());
        out.extend_from_slice(self.commitment_root.as_bytes());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub index_value: Fixed,
    pub epoch: Epoch,
    pub basket_version: u64,
    pub commitment_root: Digest,
    pub node_id: NodeId,
    pub signature: Signature,
}

impl Attestation {
    pub fn tuple(&self) -> AttestationTuple {
        AttestationTuple {
            index_value: self.index_value,
            epoch: self.epoch,
            basket_version: self.basket_version,
            commitment_root: self.commitment_root,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Committee,
    Don,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeConfig {
    pub members: Vec<NodeId>,
    pub threshold: usize,
    pub mode: AggregationMode,
    /// Signs DON combinations; must have a registered key.
    pub aggregator: NodeId,
}

impl CommitteeConfig {
    pub fn validate_into(&self, v: &mut Validator) {
        let n = self.members.len();
        v.check(n >= 1, "members", "at least one member is required");
        let uniq: BTreeSet<_> = self.members.iter().collect();
        v.check(uniq.len() == n, "members", "duplicate member id");
        v.check(
            self.threshold >= 1 && self.threshold <= n,
            "threshold",
            format!("threshold must lie in [1, {n}]"),
        );
        v.check(
            !self.members.iter().any(|m| m == COMMITTEE_WRITER),
            "members",
            format!("'{COMMITTEE_WRITER}' is reserved"),
        );
    }

    pub fn validate(&self) -> Result<(), Vec<ConfigError>> {
        let mut v = Validator::new();
        self.validate_into(&mut v);
        v.finish()
    }

    fn member_index(&self, node: &str) -> Option<usize> {
        self.members.iter().position(|m| m == node)
    }

    /// Identity whose signature `publish` accepts.
    pub fn writer(&self) -> &str {
        match self.mode {
            AggregationMode::Committee => COMMITTEE_WRITER,
            AggregationMode::Don => &self.aggregator,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("node {0} is not an authorized oracle signer")]
    Unauthorized(NodeId),
    #[error("attestation epoch must be positive")]
    ZeroEpoch,
    #[error("quorum failure: best agreement {agreeing} of required {threshold}")]
    QuorumFailure { agreeing: usize, threshold: usize },
    #[error("reports disagree on epoch or basket version")]
    MixedReports,
    #[error("aggregation mode mismatch")]
    WrongMode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    Unauthorized { writer: NodeId },
    StaleEpoch { epoch: Epoch, published_at: Epoch },
    BasketVersionRegressed { version: u64, current: u64 },
    DriftExceeded { value: Fixed, published: Fixed },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOnChainState {
    pub published_value: Fixed,
    pub published_at: Epoch,
    pub basket_version: u64,
    pub commitment_root: Digest,
    pub max_staleness: Epoch,
    pub stale_pause: bool,
    /// `I_0`, fixed at genesis.
    pub initial_value: Fixed,
}

impl OracleOnChainState {
    pub fn genesis(initial_value: Fixed, basket_version: u64, commitment_root: Digest, max_staleness: Epoch) -> Self {
        Self {
            published_value: initial_value,
            published_at: 0,
            basket_version,
            commitment_root,
            max_staleness,
            stale_pause: false,
            initial_value,
        }
    }

    pub fn nav(&self) -> Fixed {
        self.published_value.div_floor(self.initial_value)
    }
}

/// Receives protocol events. The ledger stamps its own epoch.
pub trait EventSink {
    fn record(&mut self, kind: EventKind, payload: Value);
}

impl EventSink for Ledger {
    fn record(&mut self, kind: EventKind, payload: Value) {
        self.emit(kind, payload);
    }
}

/// Standalone log stamped with the attestation epoch.
impl EventSink for EventLog {
    fn record(&mut self, kind: EventKind, payload: Value) {
        let epoch = payload.get("epoch").and_then(Value::as_u64).unwrap_or(0);
        self.append(epoch, kind, payload);
    }
}

/// Stale iff `now - published_at > tau`. Records the flag.
pub fn check_staleness(state: &mut OracleOnChainState, now: Epoch) -> bool {
    state.stale_pause = now.saturating_sub(state.published_at) > state.max_staleness;
    state.stale_pause
}

/// An oracle committee with its registered keys.
#[derive(Clone, Debug)]
pub struct Committee<S: Signer = MockSigner> {
    pub config: CommitteeConfig,
    pub registry: KeyRegistry,
    pub signer: S,
}

impl<S: Signer> Committee<S> {
    pub fn new(config: CommitteeConfig, registry: KeyRegistry, signer: S) -> Self {
        Self {
            config,
            registry,
            signer,
        }
    }

    pub fn sign_attestation(&self, tuple: AttestationTuple, node: &str) -> Result<Attestation, OracleError> {
        if tuple.epoch == 0 {
            return Err(OracleError::ZeroEpoch);
        }
        let authorized = self.config.member_index(node).is_some() || node == self.config.aggregator;
        let key = self
            .registry
            .key(node)
            .filter(|_| authorized)
            .ok_or_else(|| OracleError::Unauthorized(node.to_string()))?;
        Ok(Attestation {
            index_value: tuple.index_value,
            epoch: tuple.epoch,
            basket_version: tuple.basket_version,
            commitment_root: tuple.commitment_root,
            node_id: node.to_string(),
            signature: self.signer.sign(key, &tuple.payload()),
        })
    }

    /// Single-signer check against `node_id`'s registered key.
    pub fn verify_member(&self, att: &Attestation) -> bool {
        self.registry
            .key(&att.node_id)
            .is_some_and(|k| self.signer.verify(k, &att.tuple().payload(), &att.signature))
    }

    /// Verifies member, aggregator or combined committee signatures.
    pub fn verify(&self, att: &Attestation) -> bool {
        if att.node_id == COMMITTEE_WRITER {
            self.combined_signers(att)
                .is_some_and(|s| s.len() >= self.config.threshold)
        } else {
            let known = self.config.member_index(&att.node_id).is_some() || att.node_id == self.config.aggregator;
            known && self.verify_member(att)
        }
    }

    /// Distinct members whose signatures inside a combined attestation
    /// verify. `None` when the encoding is malformed.
    fn combined_signers(&self, att: &Attestation) -> Option<BTreeSet<usize>> {
        let payload = att.tuple().payload();
        let mut bytes = att.signature.0.as_slice();
        let mut valid = BTreeSet::new();
        while !bytes.is_empty() {
            if bytes.len() < 4 {
                return None;
            }
            let idx = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
            let len = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
            let sig = bytes.get(4..4 + len)?;
            bytes = &bytes[4 + len..];
            let member = self.config.members.get(idx)?;
            let key = self.registry.key(member)?;
            if self.signer.verify(key, &payload, &Signature(sig.to_vec())) {
                valid.insert(idx);
            }
        }
        Some(valid)
    }

    /// Emits a combined attestation for a tuple at least `k` members signed
    /// bit-for-bit. Invalid or non-member attestations are ignored.
    pub fn aggregate_committee(&self, atts: &[Attestation]) -> Result<Attestation, OracleError> {
        if self.config.mode != AggregationMode::Committee {
            return Err(OracleError::WrongMode);
        }
        let mut groups: BTreeMap<AttestationTuple, BTreeMap<usize, &Signature>> = BTreeMap::new();
        for a in atts {
            if let Some(idx) = self.config.member_index(&a.node_id) {
                if self.verify_member(a) {
                    groups.entry(a.tuple()).or_default().entry(idx).or_insert(&a.signature);
                }
            }
        }
        let k = self.config.threshold;
        let best = groups
            .iter()
            .max_by(|(ta, a), (tb, b)| a.len().cmp(&b.len()).then(tb.cmp(ta)));
        let Some((tuple, sigs)) = best.filter(|(_, s)| s.len() >= k) else {
            return Err(OracleError::QuorumFailure {
                agreeing: best.map_or(0, |(_, s)| s.len()),
                threshold: k,
            });
        };
        let mut combined = Vec::new();
        for (idx, sig) in sigs {
            combined.extend_from_slice(&(*idx as u16).to_be_bytes());
            combined.extend_from_slice(&(sig.0.len() as u16).to_be_bytes());
            combined.extend_from_slice(&sig.0);
        }
        Ok(Attestation {
            index_value: tuple.index_value,
            epoch: tuple.epoch,
            basket_version: tuple.basket_version,
            commitment_root: tuple.commitment_root,
            node_id: COMMITTEE_WRITER.to_string(),
            signature: Signature(combined),
        })
    }

    /// Median of verified member reports (one per member), committed to the
    /// Merkle root of the sorted reporter roots and signed by the aggregator.
    pub fn aggregate_don(&self, atts: &[Attestation]) -> Result<Attestation, OracleError> {
        if self.config.mode != AggregationMode::Don {
            return Err(OracleError::WrongMode);
        }
        let mut by_member: BTreeMap<usize, &Attestation> = BTreeMap::new();
        for a in atts {
            if let Some(idx) = self.config.member_index(&a.node_id) {
                if self.verify_member(a) {
                    by_member.entry(idx).or_insert(a);
                }
            }
        }
        let reports: Vec<&Attestation> = by_member.into_values().collect();
        let k = self.config.threshold;
        if reports.is_empty() || reports.len() < k {
            return Err(OracleError::QuorumFailure {
                agreeing: reports.len(),
                threshold: k,
            });
        }
        let (epoch, version) = (reports[0].epoch, reports[0].basket_version);
        if reports.iter().any(|r| r.epoch != epoch || r.basket_version != version) {
            return Err(OracleError::MixedReports);
        }
        let values: Vec<Fixed> = reports.iter().map(|r| r.index_value).collect();
        let mut roots: Vec<Digest> = reports.iter().map(|r| r.commitment_root).collect();
        roots.sort();
        let tuple = AttestationTuple {
            index_value: median(&values).expect("non-empty"),
            epoch,
            basket_version: version,
            commitment_root: merkle_root(&roots),
        };
        self.sign_attestation(tuple, &self.config.aggregator.clone())
    }

    /// On-chain acceptance: writer authorization, strictly newer epoch, no
    /// basket version regression, and `|value - I_on| <= delta_max * I_on`.
    /// Rejections leave `state` unchanged.
    pub fn publish(
        &self,
        candidate: &Attestation,
        state: &mut OracleOnChainState,
        delta_max: Fixed,
        sink: &mut dyn EventSink,
    ) -> Result<(), Rejection> {
        let verdict = self.check_candidate(candidate, state, delta_max);
        match &verdict {
            Ok(()) => {
                let prev = state.published_value;
                state.published_value = candidate.index_value;
                state.published_at = candidate.epoch;
                state.basket_version = candidate.basket_version;
                state.commitment_root = candidate.commitment_root;
                state.stale_pause = false;
                sink.record(
                    EventKind::IndexUpdated,
                    json!({
                        "epoch": candidate.epoch,
                        "value": candidate.index_value,
                        "previous": prev,
                        "basket_version": candidate.basket_version,
                        "root": candidate.commitment_root,
                        "writer": candidate.node_id,
                    }),
                );
            }
            Err(reason) => sink.record(
                EventKind::IndexRejected,
                json!({"epoch": candidate.epoch, "value": candidate.index_value, "rejection": reason}),
            ),
        }
        verdict
    }

    fn check_candidate(&self, c: &Attestation, state: &OracleOnChainState, delta_max: Fixed) -> Result<(), Rejection> {
        if c.node_id != self.config.writer() || !self.verify(c) {
            return Err(Rejection::Unauthorized {
                writer: c.node_id.clone(),
            });
        }
        if c.epoch <= state.published_at {
            return Err(Rejection::StaleEpoch {
                epoch: c.epoch,
                published_at: state.published_at,
            });
        }
        if c.basket_version < state.basket_version {
            return Err(Rejection::BasketVersionRegressed {
                version: c.basket_version,
                current: state.basket_version,
            });
        }
        let diff = (c.index_value - state.published_value).abs();
        if Fixed::cmp_products(&[diff], &[delta_max, state.published_value]).is_gt() {
            return Err(Rejection::DriftExceeded {
                value: c.index_value,
                published: state.published_value,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SigningKey;
    use crate::fixed::fx;
    use crate::index::{ModelId, VendorId};

    fn committee(n: usize, k: usize, mode: AggregationMode) -> Committee {
        let members: Vec<NodeId> = (0..n).map(|i| format!("node-{i}")).collect();
        let mut reg = KeyRegistry::new();
        for m in members.iter().chain(std::iter::once(&"agg".to_string())) {
            reg.register(m.clone(), SigningKey::derive(m));
        }
        Committee::new(
            CommitteeConfig {
                members,
                threshold: k,
                mode,
                aggregator: "agg".into(),
            },
            reg,
            MockSigner,
        )
    }

    fn tuple(value: &str, epoch: Epoch) -> AttestationTuple {
        AttestationTuple {
            index_value: fx(value),
            epoch,
            basket_version: 1,
            commitment_root: sha256(value.as_bytes()),
        }
    }

    fn q(model: &str, vendor: &str, pin: &str) -> PriceQuote {
        PriceQuote {
            model: ModelId::from(model),
            vendor: VendorId::from(vendor),
            price_in: fx(pin),
            price_out: fx("0.000002"),
            observed_at: 4,
            valid: true,
        }
    }

    #[test]
    fn commitment_shapes() {
        let a = q("m1", "v1", "0.000001");
        assert_eq!(build_commitment(std::slice::from_ref(&a)), sha256(&encode_quote(&a)));
        let b = q("m1", "v2", "0.000003");
        let c = q("m2", "v1", "0.000005");
        assert_eq!(
            build_commitment(&[a.clone(), b.clone(), c.clone()]),
            build_commitment(&[c.clone(), a.clone(), b.clone()])
        );
        let mut b2 = b.clone();
        b2.price_in += Fixed::EPSILON;
        let changed = build_commitment(&[a.clone(), b2, c.clone()]);
        assert_ne!(changed, build_commitment(&[a, b, c]));
        assert_eq!(build_commitment(&[]), Digest::ZERO);
    }

    #[test]
    fn encoding_layout() {
        let e = encode_quote(&q("m", "v", "1"));
        assert_eq!(e.len(), 1 + 1 + 1 + 1 + 16 + 16 + 8);
        assert_eq!(&e[..4], b"m\0v\0");
        assert_eq!(&e[4..20], &fx("1").raw().to_be_bytes());
        assert_eq!(&e[36..], &4u64.to_be_bytes());
    }

    #[test]
    fn sign_and_verify() {
        let c = committee(3, 2, AggregationMode::Committee);
        let att = c.sign_attestation(tuple("100", 1), "node-0").unwrap();
        assert!(c.verify(&att));
        let mut tampered = att.clone();
        tampered.index_value = fx("100.000000000000000001");
        assert!(!c.verify(&tampered));
        assert_eq!(
            c.sign_attestation(tuple("100", 1), "mallory"),
            Err(OracleError::Unauthorized("mallory".into()))
        );
    }

    #[test]
    fn committee_quorum() {
        let c = committee(5, 3, AggregationMode::Committee);
        let atts: Vec<_> = (0..5)
            .map(|i| {
                let t = if i < 3 { tuple("100", 2) } else { tuple("999", 2) };
                c.sign_attestation(t, &format!("node-{i}")).unwrap()
            })
            .collect();
        let combined = c.aggregate_committee(&atts).unwrap();
        assert_eq!(combined.tuple(), tuple("100", 2));
        assert!(c.verify(&combined));

        let split: Vec<_> = ["100", "100", "101", "101", "102"]
            .iter()
            .enumerate()
            .map(|(i, v)| c.sign_attestation(tuple(v, 2), &format!("node-{i}")).unwrap())
            .collect();
        assert_eq!(
            c.aggregate_committee(&split),
            Err(OracleError::QuorumFailure { agreeing: 2, threshold: 3 })
        );

        let solo = committee(1, 1, AggregationMode::Committee);
        let a = solo.sign_attestation(tuple("7", 1), "node-0").unwrap();
        assert_eq!(solo.aggregate_committee(&[a]).unwrap().tuple(), tuple("7", 1));
    }

    #[test]
    fn duplicate_member_counts_once() {
        let c = committee(5, 3, AggregationMode::Committee);
        let a = c.sign_attestation(tuple("100", 2), "node-0").unwrap();
        let b = c.sign_attestation(tuple("100", 2), "node-1").unwrap();
        assert!(matches!(
            c.aggregate_committee(&[a.clone(), a.clone(), a, b]),
            Err(OracleError::QuorumFailure { agreeing: 2, .. })
        ));
    }

    fn don_oracle_median(values: &[&str]) -> Fixed {
        // Smallest value with at least half the multiset on each side.
        let vs: Vec<Fixed> = values.iter().map(|v| fx(v)).collect();
        let n = vs.len();
        *vs.iter()
            .filter(|c| {
                vs.iter().filter(|x| x <= c).count() * 2 >= n && vs.iter().filter(|x| x >= c).count() * 2 >= n
            })
            .min()
            .unwrap()
    }

    #[test]
    fn don_median() {
        let c = committee(3, 1, AggregationMode::Don);
        let run = |vals: &[&str]| {
            let atts: Vec<_> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut t = tuple(v, 3);
                    t.commitment_root = sha256(&[i as u8]);
                    c.sign_attestation(t, &format!("node-{i}")).unwrap()
                })
                .collect();
            c.aggregate_don(&atts).unwrap()
        };
        assert_eq!(run(&["100", "101", "103"]).index_value, fx("101"));
        let out = run(&["100", "100", "1000000000"]);
        assert_eq!(out.index_value, fx("100"));
        assert_eq!(out.index_value, don_oracle_median(&["100", "100", "1000000000"]));
        assert!(c.verify(&out));
        let mut roots: Vec<Digest> = (0..3u8).map(|i| sha256(&[i])).collect();
        roots.sort();
        assert_eq!(out.commitment_root, merkle_root(&roots));
        assert_eq!(run(&["42"]).index_value, fx("42"));
        assert!(matches!(c.aggregate_don(&[]), Err(OracleError::QuorumFailure { .. })));
    }

    #[test]
    fn publish_checks() {
        let c = committee(3, 2, AggregationMode::Committee);
        let mut state = OracleOnChainState::genesis(fx("100"), 1, Digest::ZERO, 4);
        let mut log = EventLog::new();
        let quorum = |t: AttestationTuple| {
            let atts: Vec<_> = (0..2).map(|i| c.sign_attestation(t, &format!("node-{i}")).unwrap()).collect();
            c.aggregate_committee(&atts).unwrap()
        };
        c.publish(&quorum(tuple("101", 1)), &mut state, fx("0.02"), &mut log).unwrap();
        assert_eq!(state.published_at, 1);
        assert_eq!(state.published_value, fx("101"));

        let before = state.clone();
        // 2 * delta_max jump with a valid quorum.
        let jump = quorum(tuple("105.04", 2));
        assert!(matches!(
            c.publish(&jump, &mut state, fx("0.02"), &mut log),
            Err(Rejection::DriftExceeded { .. })
        ));
        assert_eq!(state, before);
        // Exactly at the cap is accepted.
        let edge = quorum(tuple("103.02", 2));
        c.publish(&edge, &mut state, fx("0.02"), &mut log).unwrap();

        let back = quorum(tuple("103", 2));
        assert!(matches!(c.publish(&back, &mut state, fx("0.02"), &mut log), Err(Rejection::StaleEpoch { .. })));

        let single = c.sign_attestation(tuple("103", 3), "node-0").unwrap();
        assert!(matches!(
            c.publish(&single, &mut state, fx("0.02"), &mut log),
            Err(Rejection::Unauthorized { .. })
        ));
        assert_eq!(log.count(EventKind::IndexUpdated), 2);
        assert_eq!(log.count(EventKind::IndexRejected), 3);
    }

    #[test]
    fn staleness_boundary() {
        let mut s = OracleOnChainState::genesis(fx("1"), 1, Digest::ZERO, 3);
        s.published_at = 10;
        assert!(!check_staleness(&mut s, 13));
        assert!(check_staleness(&mut s, 14));
        assert!(s.stale_pause);
        assert!(!check_staleness(&mut s, 10));
    }

    #[test]
    fn nav_ratios() {
        let mut s = OracleOnChainState::genesis(fx("100"), 1, Digest::ZERO, 3);
        assert_eq!(s.nav(), Fixed::ONE);
        s.published_value = fx("105");
        assert_eq!(s.nav(), fx("1.05"));
        s.published_value = fx("87.3");
        assert_eq!(s.nav(), fx("0.873"));
    }
}
