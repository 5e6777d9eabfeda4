//! Hashing, Merkle commitments and the pluggable signing interface.
//!
//! The hash is SHA-256 throughout. Signatures go through [`Signer`]; the
//! in-tree [`MockSigner`] is a keyed digest, `sha256(key || payload)`, which
//! exercises the same verify-before-trust paths a threshold BLS or Schnorr
//! backend would.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// 256-bit digest, hex-encoded in JSON.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

pub fn sha256_concat(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Binary Merkle root. Odd levels duplicate their last node; an empty leaf
/// set commits to a single all-zero leaf, so the root is [`Digest::ZERO`].
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            let last = *level.last().expect("non-empty");
            level.push(last);
        }
        level = level
            .chunks_exact(2)
            .map(|pair| sha256_concat(&[&pair[0].0, &pair[1].0]))
            .collect();
    }
    level[0]
}

/// Secret signing key for the mock scheme.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigningKey(pub [u8; 32]);

impl SigningKey {
    /// Deterministic key derived from a label; simulated identities use this.
    pub fn derive(label: &str) -> Self {
        SigningKey(sha256_concat(&[b"clawcoin.key.v1", label.as_bytes()]).0)
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

/// Opaque signature bytes.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} bytes)", self.0.len())
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map(Signature).map_err(serde::de::Error::custom)
    }
}

pub trait Signer {
    fn sign(&self, key: &SigningKey, message: &[u8]) -> Signature;
    fn verify(&self, key: &SigningKey, message: &[u8], signature: &Signature) -> bool;
}

/// `sign = sha256(key || payload)`. Not a real signature scheme.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSigner;

impl Signer for MockSigner {
    fn sign(&self, key: &SigningKey, message: &[u8]) -> Signature {
        Signature(sha256_concat(&[&key.0, message]).0.to_vec())
    }

    fn verify(&self, key: &SigningKey, message: &[u8], signature: &Signature) -> bool {
        self.sign(key, message) == *signature
    }
}

/// Registered verification keys by identity (oracle node ids and agent
/// addresses share one namespace).
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<String, SigningKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, identity: impl Into<String>, key: SigningKey) {
        self.keys.insert(identity.into(), key);
    }

    pub fn key(&self, identity: &str) -> Option<&SigningKey> {
        self.keys.get(identity)
    }

    pub fn contains(&self, identity: &str) -> bool {
        self.keys.contains_key(identity)
    }
}
