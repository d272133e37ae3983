//! Objects, their identity and versioning.
//!
//! Every object is identified by an [`ObjID`] derived from the transaction
//! that created it and carries a [`Version`] assigned by the Lamport rule
//! in [`lamport_version`]. The pair ([`ObjKey`]) is the single-use unit that
//! owned-object locks are taken on.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, Encode};
use crate::error::ObjectError;

macro_rules! digest_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Digest);

        impl $name {
            pub const ZERO: $name = $name(Digest::ZERO);

            pub fn as_bytes(&self) -> &[u8; 32] {
                self.0.as_bytes()
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0.short())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }

        impl Encode for $name {
            fn encode(&self, out: &mut Vec<u8>) {
                self.0.encode(out);
            }
        }
    };
}

digest_newtype!(
    /// Globally unique object identifier.
    ObjID
);
digest_newtype!(
    /// Digest of a transaction's canonical encoding (signature excluded).
    TxDigest
);
digest_newtype!(
    /// Account address: digest of an authenticator public key.
    Address
);

/// Digest of the transaction that produced the genesis objects.
pub const GENESIS_TX: TxDigest = TxDigest::ZERO;

/// Object version. `0` is reserved for tombstones.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Version(pub u64);

impl Version {
    pub const TOMBSTONE: Version = Version(0);
    pub const INITIAL: Version = Version(1);

    pub fn is_tombstone(self) -> bool {
        self.0 == 0
    }

    pub fn next(self) -> Version {
        Version(self.0 + 1)
    }
}

impl fmt::Debug for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Encode for Version {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
}

/// `(ObjID, Version)`, the unit of owned-object locking.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjKey {
    pub id: ObjID,
    pub version: Version,
}

impl ObjKey {
    pub fn new(id: ObjID, version: Version) -> Self {
        ObjKey { id, version }
    }
}

impl fmt::Debug for ObjKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id.0.short(), self.version.0)
    }
}

impl Encode for ObjKey {
    fn encode(&self, out: &mut Vec<u8>) {
        self.id.encode(out);
        self.version.encode(out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ownership {
    OwnedByAddress(Address),
    OwnedByObject(ObjID),
    SharedMutable,
    SharedImmutable,
}

impl Ownership {
    /// True for objects processed on the consensusless path (address- or
    /// object-owned).
    pub fn is_owned(&self) -> bool {
        matches!(self, Ownership::OwnedByAddress(_) | Ownership::OwnedByObject(_))
    }

    pub fn is_shared_mutable(&self) -> bool {
        matches!(self, Ownership::SharedMutable)
    }
}

impl Encode for Ownership {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Ownership::OwnedByAddress(a) => {
                out.push(0);
                a.encode(out);
            }
            Ownership::OwnedByObject(p) => {
                out.push(1);
                p.encode(out);
            }
            Ownership::SharedMutable => out.push(2),
            Ownership::SharedImmutable => out.push(3),
        }
    }
}

/// Built-in object contents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Value {
    U64(u64),
    Bytes(Vec<u8>),
    Record(BTreeMap<String, Value>),
    Wrapped(Box<Obj>),
}

pub const COIN_FIELD: &str = "coin";
pub const COUNTER_FIELD: &str = "counter";
pub const WRAPPED_FIELD: &str = "wrapped";

impl Value {
    pub fn record<I, K>(fields: I) -> Value
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        Value::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn coin(balance: u64) -> Value {
        Value::record([(COIN_FIELD, Value::U64(balance))])
    }

    pub fn counter(count: u64) -> Value {
        Value::record([(COUNTER_FIELD, Value::U64(count))])
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        match self {
            Value::Record(fields) => fields.get(name),
            _ => None,
        }
    }

    pub fn field_u64(&self, name: &str) -> Option<u64> {
        match self.field(name) {
            Some(Value::U64(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn coin_balance(&self) -> Option<u64> {
        self.field_u64(COIN_FIELD)
    }

    pub fn counter_value(&self) -> Option<u64> {
        self.field_u64(COUNTER_FIELD)
    }

    pub fn depth(&self) -> usize {
        match self {
            Value::U64(_) | Value::Bytes(_) => 1,
            Value::Record(fields) => 1 + fields.values().map(Value::depth).max().unwrap_or(0),
            Value::Wrapped(obj) => 1 + obj.contents.depth(),
        }
    }

    /// True if a wrapped object appears anywhere inside.
    pub fn contains_wrapped(&self) -> bool {
        match self {
            Value::U64(_) | Value::Bytes(_) => false,
            Value::Record(fields) => fields.values().any(Value::contains_wrapped),
            Value::Wrapped(_) => true,
        }
    }
}

/// Maximum nesting accepted for object contents.
pub const MAX_VALUE_DEPTH: usize = 32;

impl Encode for Value {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Value::U64(v) => {
                out.push(0);
                v.encode(out);
            }
            Value::Bytes(b) => {
                out.push(1);
                b.as_slice().encode(out);
            }
            Value::Record(fields) => {
                out.push(2);
                fields.encode(out);
            }
            Value::Wrapped(obj) => {
                out.push(3);
                obj.encode(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Obj {
    pub id: ObjID,
    pub version: Version,
    pub initial_version: Version,
    pub ownership: Ownership,
    pub contents: Value,
    /// Transaction that created or last mutated this object.
    pub parent_tx: TxDigest,
}

impl Obj {
    pub fn key(&self) -> ObjKey {
        ObjKey::new(self.id, self.version)
    }

    pub fn digest(&self) -> Digest {
        Digest::of(b"object\0", self)
    }

    pub fn reference(&self) -> ObjRef {
        ObjRef {
            id: self.id,
            version: self.version,
            digest: self.digest(),
        }
    }

    pub fn owner_address(&self) -> Option<Address> {
        match self.ownership {
            Ownership::OwnedByAddress(a) => Some(a),
            _ => None,
        }
    }

    pub fn parent_object(&self) -> Option<ObjID> {
        match self.ownership {
            Ownership::OwnedByObject(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        !self.version.is_tombstone()
            && self.initial_version <= self.version
            && self.contents.depth() <= MAX_VALUE_DEPTH
    }
}

impl Encode for Obj {
    fn encode(&self, out: &mut Vec<u8>) {
        self.id.encode(out);
        self.version.encode(out);
        self.initial_version.encode(out);
        self.ownership.encode(out);
        self.contents.encode(out);
        self.parent_tx.encode(out);
    }
}

/// `ObjID × Version × digest(Obj)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjRef {
    pub id: ObjID,
    pub version: Version,
    pub digest: Digest,
}

impl ObjRef {
    pub fn key(&self) -> ObjKey {
        ObjKey::new(self.id, self.version)
    }
}

impl fmt::Debug for ObjRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}#{}", self.id.0.short(), self.version.0, self.digest.short())
    }
}

impl Encode for ObjRef {
    fn encode(&self, out: &mut Vec<u8>) {
        self.id.encode(out);
        self.version.encode(out);
        self.digest.encode(out);
    }
}

/// `H(tx_digest ‖ u64_le(counter))`.
pub fn derive_object_id(tx_digest: &TxDigest, counter: u64) -> ObjID {
    let mut buf = Vec::with_capacity(40);
    tx_digest.encode(&mut buf);
    counter.encode(&mut buf);
    ObjID(Digest::hash(&buf))
}

/// The `index`-th object created at genesis.
pub fn genesis_object(index: u64, ownership: Ownership, contents: Value) -> Obj {
    Obj {
        id: derive_object_id(&GENESIS_TX, index),
        version: Version::INITIAL,
        initial_version: Version::INITIAL,
        ownership,
        contents,
        parent_tx: GENESIS_TX,
    }
}

/// One more than the highest input version.
///
/// Panics on an empty slice or on a tombstone input: both are caller bugs.
pub fn lamport_version(input_versions: &[Version]) -> Version {
    let max = input_versions
        .iter()
        .copied()
        .max()
        .expect("lamport_version needs at least one input");
    assert!(!max.is_tombstone(), "tombstones are never transaction inputs");
    debug_assert!(input_versions.iter().all(|v| !v.is_tombstone()));
    max.next()
}

/// Source of the latest live version of an object.
pub trait LatestObjects {
    fn latest_object(&self, id: &ObjID) -> Option<Obj>;
}

impl LatestObjects for BTreeMap<ObjID, Obj> {
    fn latest_object(&self, id: &ObjID) -> Option<Obj> {
        self.get(id).cloned()
    }
}

/// Owner at the top of a parent-child chain, plus the chain walked to get
/// there (starting object first, root object last).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootResolution {
    pub root: Ownership,
    pub chain: Vec<ObjID>,
}

pub fn resolve_root(
    id: &ObjID,
    store: &impl LatestObjects,
) -> Result<RootResolution, ObjectError> {
    let mut chain = Vec::new();
    let mut current = *id;
    loop {
        if chain.contains(&current) {
            return Err(ObjectError::OwnershipCycle(current));
        }
        let obj = store
            .latest_object(&current)
            .ok_or(ObjectError::UnknownObject(current))?;
        chain.push(current);
        match obj.ownership {
            Ownership::OwnedByObject(parent) => current = parent,
            root => return Ok(RootResolution { root, chain }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn addr(b: u8) -> Address {
        Address(Digest([b; 32]))
    }

    fn obj(id: ObjID, ownership: Ownership) -> Obj {
        Obj {
            id,
            version: Version(1),
            initial_version: Version(1),
            ownership,
            contents: Value::U64(0),
            parent_tx: GENESIS_TX,
        }
    }

    #[test]
    fn object_ids_are_deterministic_and_distinct() {
        let d = TxDigest(Digest::hash(b"tx"));
        assert_eq!(derive_object_id(&d, 0), derive_object_id(&d, 0));
        assert_ne!(derive_object_id(&d, 0), derive_object_id(&d, 1));
    }

    #[test]
    fn object_id_golden_vector() {
        // sha256(32 zero bytes ‖ 8 zero bytes), computed with Python hashlib.
        assert_eq!(
            derive_object_id(&TxDigest::ZERO, 0).to_string(),
            "2c34ce1df23b838c5abf2a7f6437cca3d3067ed509ff25f11df6b11b582b51eb"
        );
    }

    #[test]
    fn object_ids_do_not_collide_over_test_universe() {
        let mut seen = BTreeSet::new();
        for t in 0u32..100 {
            let d = TxDigest(Digest::hash(&t.to_le_bytes()));
            for c in 0..100 {
                assert!(seen.insert(derive_object_id(&d, c)));
            }
        }
        assert_eq!(seen.len(), 10_000);
    }

    #[test]
    fn lamport_examples() {
        assert_eq!(lamport_version(&[Version(3), Version(5)]), Version(6));
        assert_eq!(lamport_version(&[Version(1)]), Version(2));
        assert_eq!(lamport_version(&[Version(7), Version(7), Version(2)]), Version(8));
    }

    #[test]
    #[should_panic]
    fn lamport_rejects_empty_input() {
        lamport_version(&[]);
    }

    #[test]
    fn resolve_root_direct_owner() {
        let a = ObjID(Digest::hash(b"a"));
        let store: BTreeMap<_, _> = [(a, obj(a, Ownership::OwnedByAddress(addr(1))))].into();
        let r = resolve_root(&a, &store).unwrap();
        assert_eq!(r.root, Ownership::OwnedByAddress(addr(1)));
        assert_eq!(r.chain, vec![a]);
    }

    #[test]
    fn resolve_root_walks_parent_links() {
        let child = ObjID(Digest::hash(b"child"));
        let parent = ObjID(Digest::hash(b"parent"));
        let store: BTreeMap<_, _> = [
            (child, obj(child, Ownership::OwnedByObject(parent))),
            (parent, obj(parent, Ownership::OwnedByAddress(addr(1)))),
        ]
        .into();
        let r = resolve_root(&child, &store).unwrap();
        assert_eq!(r.root, Ownership::OwnedByAddress(addr(1)));
        assert_eq!(r.chain, vec![child, parent]);
    }

    #[test]
    fn resolve_root_missing_parent() {
        let child = ObjID(Digest::hash(b"child"));
        let parent = ObjID(Digest::hash(b"parent"));
        let store: BTreeMap<_, _> = [(child, obj(child, Ownership::OwnedByObject(parent)))].into();
        assert_eq!(
            resolve_root(&child, &store),
            Err(ObjectError::UnknownObject(parent))
        );
    }

    #[test]
    fn resolve_root_detects_cycles() {
        let a = ObjID(Digest::hash(b"a"));
        let b = ObjID(Digest::hash(b"b"));
        let store: BTreeMap<_, _> = [
            (a, obj(a, Ownership::OwnedByObject(b))),
            (b, obj(b, Ownership::OwnedByObject(a))),
        ]
        .into();
        assert_eq!(resolve_root(&a, &store), Err(ObjectError::OwnershipCycle(a)));
    }

    #[test]
    fn obj_digest_commits_to_every_field() {
        let a = ObjID(Digest::hash(b"a"));
        let base = obj(a, Ownership::SharedMutable);
        let mut other = base.clone();
        other.contents = Value::U64(1);
        assert_ne!(base.digest(), other.digest());
        let mut other = base.clone();
        other.parent_tx = TxDigest(Digest::hash(b"p"));
        assert_ne!(base.digest(), other.digest());
    }
}
