//! Attestations.
//!
//! Validators sign behind the [`AuthoritySigner`] / [`AuthorityVerifier`]
//! pair so a real signature scheme can replace the default. The default,
//! [`MacKeyring`], is a deterministic keyed-hash stand-in: each validator
//! holds a secret derived from a keyring seed and the keyring verifies by
//! recomputing the tag. Aggregates are the map of per-validator attestations.
//!
//! User authenticators use the same stand-in idea: the address is the digest
//! of the public key and the signature tag is a hash over the public key and
//! the message.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, Encode};
use crate::object::Address;

#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ValidatorId(pub u16);

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl Encode for ValidatorId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

/// One validator's attestation over a message.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthoritySignature(pub Digest);

impl fmt::Debug for AuthoritySignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", self.0.short())
    }
}

impl Encode for AuthoritySignature {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

/// Signer → attestation. Two aggregates over the same message with different
/// signer sets certify the same thing.
pub type AggregateSignature = BTreeMap<ValidatorId, AuthoritySignature>;

pub trait AuthoritySigner: Send + Sync {
    fn id(&self) -> ValidatorId;
    fn sign(&self, message: &[u8]) -> AuthoritySignature;
}

pub trait AuthorityVerifier: Send + Sync {
    fn verify(&self, signer: ValidatorId, message: &[u8], sig: &AuthoritySignature) -> bool;
}

/// Deterministic keyed-hash keyring.
#[derive(Clone, Debug)]
pub struct MacKeyring {
    seed: Digest,
}

impl MacKeyring {
    pub fn new(seed: u64) -> Self {
        MacKeyring {
            seed: Digest::of(b"keyring\0", &seed),
        }
    }

    fn secret(&self, id: ValidatorId) -> Digest {
        Digest::of(b"validator-secret\0", &(self.seed, id))
    }

    pub fn signer(&self, id: ValidatorId) -> MacSigner {
        MacSigner {
            id,
            secret: self.secret(id),
        }
    }
}

fn mac(secret: &Digest, message: &[u8]) -> AuthoritySignature {
    let mut buf = Vec::with_capacity(36 + message.len());
    buf.extend_from_slice(b"mac\0");
    buf.extend_from_slice(secret.as_bytes());
    buf.extend_from_slice(message);
    AuthoritySignature(Digest::hash(&buf))
}

impl AuthorityVerifier for MacKeyring {
    fn verify(&self, signer: ValidatorId, message: &[u8], sig: &AuthoritySignature) -> bool {
        mac(&self.secret(signer), message) == *sig
    }
}

#[derive(Clone)]
pub struct MacSigner {
    id: ValidatorId,
    secret: Digest,
}

impl fmt::Debug for MacSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MacSigner").field("id", &self.id).finish()
    }
}

impl AuthoritySigner for MacSigner {
    fn id(&self) -> ValidatorId {
        self.id
    }

    fn sign(&self, message: &[u8]) -> AuthoritySignature {
        mac(&self.secret, message)
    }
}

/// User authenticator (single default scheme).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserSignature {
    pub public_key: Digest,
    pub tag: Digest,
}

impl fmt::Debug for UserSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "usig:{}", self.tag.short())
    }
}

impl UserSignature {
    pub fn verify(&self, sender: &Address, message: &Digest) -> bool {
        address_of(&self.public_key) == *sender && self.tag == user_tag(&self.public_key, message)
    }
}

fn user_tag(public_key: &Digest, message: &Digest) -> Digest {
    Digest::of(b"user-sig\0", &(*public_key, *message))
}

pub fn address_of(public_key: &Digest) -> Address {
    Address(Digest::of(b"address\0", public_key))
}

#[derive(Clone, Debug)]
pub struct UserKeypair {
    public_key: Digest,
}

impl UserKeypair {
    pub fn from_seed(seed: u64) -> Self {
        UserKeypair {
            public_key: Digest::of(b"user-pk\0", &seed),
        }
    }

    pub fn address(&self) -> Address {
        address_of(&self.public_key)
    }

    pub fn sign(&self, message: &Digest) -> UserSignature {
        UserSignature {
            public_key: self.public_key,
            tag: user_tag(&self.public_key, message),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_round_trip() {
        let ring = MacKeyring::new(7);
        let s = ring.signer(ValidatorId(2));
        let sig = s.sign(b"hello");
        assert!(ring.verify(ValidatorId(2), b"hello", &sig));
        assert!(!ring.verify(ValidatorId(3), b"hello", &sig));
        assert!(!ring.verify(ValidatorId(2), b"hellp", &sig));
        assert!(!MacKeyring::new(8).verify(ValidatorId(2), b"hello", &sig));
    }

    #[test]
    fn user_signature_binds_sender() {
        let k = UserKeypair::from_seed(1);
        let m = Digest::hash(b"m");
        let sig = k.sign(&m);
        assert!(sig.verify(&k.address(), &m));
        assert!(!sig.verify(&UserKeypair::from_seed(2).address(), &m));
        assert!(!sig.verify(&k.address(), &Digest::hash(b"n")));
    }
}
