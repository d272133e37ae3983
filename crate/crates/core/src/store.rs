//! Validator persistent state.
//!
//! Multi-key updates go through [`WriteBatch`]: the batch is logged before
//! it is applied, so a crash part-way through is completed by [`Store::recover`].
//! A crash before logging leaves nothing behind. A [`Failpoint`] injects
//! either crash.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointBuilder;
use crate::committee::{Committee, EpochId};
use crate::digest::Digest;
use crate::messages::{EffSign, Effects, TxCert, TxSign};
use crate::object::{LatestObjects, Obj, ObjID, ObjKey, TxDigest, Version};
use crate::reconfig::{ReconfigContract, ReconfigParams};

/// A certificate this validator executed, with its signed effects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Executed {
    pub cert: TxCert,
    pub sign: EffSign,
}

impl Executed {
    pub fn effects(&self) -> &Effects {
        &self.sign.effects
    }
}

/// Pre-images needed to roll an execution back at epoch change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndoRecord {
    pub digest: TxDigest,
    pub prior_latest: Vec<(ObjID, Option<Version>)>,
    pub prior_tombstones: Vec<(ObjID, Option<Version>)>,
    pub written: Vec<ObjKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WriteOp {
    PutObject(Obj),
    /// Raises the latest pointer; never lowers it or overwrites a tombstone.
    SetLatest(ObjID, Version),
    /// Marks the object deleted by the transaction that produced `Version`.
    SetTombstone(ObjID, Version),
    RemoveLatest(ObjID),
    PutOwnedLock(ObjKey, Option<TxSign>),
    RemoveOwnedLock(ObjKey),
    PutExecuted(Box<Executed>),
    AddPending(TxDigest),
    PushUndo(UndoRecord),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteBatch(pub Vec<WriteOp>);

impl WriteBatch {
    pub fn push(&mut self, op: WriteOp) {
        self.0.push(op);
    }
}

/// Where the next batch write crashes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Failpoint {
    BeforeLog,
    AfterOps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("crashed during a batch write")]
pub struct Crashed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Store {
    pub epoch: EpochId,
    pub committee: Committee,
    pub committees: BTreeMap<EpochId, Committee>,
    pub owned_lock: BTreeMap<ObjKey, Option<TxSign>>,
    pub shared_lock: BTreeMap<(TxDigest, ObjID), Version>,
    pub next_shared_lock: BTreeMap<ObjID, Version>,
    pub ct: BTreeMap<TxDigest, Executed>,
    /// Every object version seen this validator's lifetime.
    pub objects: BTreeMap<ObjKey, Obj>,
    /// Latest version per object; `0` marks a tombstone.
    pub latest: BTreeMap<ObjID, Version>,
    /// Version at which each tombstoned object was deleted.
    pub tombstones: BTreeMap<ObjID, Version>,
    pub pending_checkpoint: BTreeSet<TxDigest>,
    pub paused: bool,
    pub undo: Vec<UndoRecord>,

    /// Next commit to consume, as `(epoch, seq)`.
    pub cursor: (EpochId, u64),
    /// Certificates already sequenced this epoch; later copies are ignored.
    pub sequenced: BTreeSet<TxDigest>,
    pub exec_queue: VecDeque<TxCert>,
    /// Shared-input certificates accepted from clients and not yet
    /// checkpointed. They count as pending, like executed ones.
    pub forwarded: BTreeMap<TxDigest, TxCert>,
    pub builder: CheckpointBuilder,
    pub contract: ReconfigContract,
    /// Set once the handover commit is consumed, until the epoch changes.
    pub next_committee: Option<Committee>,

    wal: Option<Vec<WriteOp>>,
    failpoint: Option<Failpoint>,
}

impl Store {
    pub fn genesis(committee: Committee, objects: &[Obj], params: ReconfigParams) -> Self {
        let mut store = Store {
            epoch: committee.epoch,
            committees: [(committee.epoch, committee.clone())].into(),
            contract: ReconfigContract::new(params, committee.clone()),
            cursor: (committee.epoch, 0),
            committee,
            owned_lock: BTreeMap::new(),
            shared_lock: BTreeMap::new(),
            next_shared_lock: BTreeMap::new(),
            ct: BTreeMap::new(),
            objects: BTreeMap::new(),
            latest: BTreeMap::new(),
            tombstones: BTreeMap::new(),
            pending_checkpoint: BTreeSet::new(),
            paused: false,
            undo: Vec::new(),
            sequenced: BTreeSet::new(),
            exec_queue: VecDeque::new(),
            forwarded: BTreeMap::new(),
            builder: CheckpointBuilder::default(),
            next_committee: None,
            wal: None,
            failpoint: None,
        };
        for o in objects {
            assert!(o.is_well_formed(), "malformed genesis object");
            store.objects.insert(o.key(), o.clone());
            store.latest.insert(o.id, o.version);
            if o.ownership.is_owned() {
                store.owned_lock.insert(o.key(), None);
            }
        }
        store
    }

    pub fn arm_failpoint(&mut self, failpoint: Failpoint) {
        self.failpoint = Some(failpoint);
    }

    pub fn has_logged_batch(&self) -> bool {
        self.wal.is_some()
    }

    /// Logs and applies `batch` atomically with respect to crashes.
    pub fn write(&mut self, batch: WriteBatch) -> Result<(), Crashed> {
        let failpoint = self.failpoint.take();
        if failpoint == Some(Failpoint::BeforeLog) {
            return Err(Crashed);
        }
        self.wal = Some(batch.0.clone());
        for (i, op) in batch.0.into_iter().enumerate() {
            if failpoint == Some(Failpoint::AfterOps(i)) {
                return Err(Crashed);
            }
            self.apply(op);
        }
        // A short batch still crashes, after its last op.
        if matches!(failpoint, Some(Failpoint::AfterOps(_))) {
            return Err(Crashed);
        }
        self.wal = None;
        Ok(())
    }

    /// Completes a batch interrupted by a crash. Ops are idempotent.
    pub fn recover(&mut self) {
        self.failpoint = None;
        if let Some(ops) = self.wal.take() {
            for op in ops {
                self.apply(op);
            }
        }
    }

    fn apply(&mut self, op: WriteOp) {
        match op {
            WriteOp::PutObject(o) => {
                self.objects.insert(o.key(), o);
            }
            WriteOp::SetLatest(id, v) => {
                let current = self.latest.get(&id).copied();
                if current.is_none_or(|c| !c.is_tombstone() && c < v) {
                    self.latest.insert(id, v);
                }
            }
            WriteOp::SetTombstone(id, v) => {
                self.latest.insert(id, Version::TOMBSTONE);
                self.tombstones.insert(id, v);
            }
            WriteOp::RemoveLatest(id) => {
                self.latest.remove(&id);
            }
            WriteOp::PutOwnedLock(key, sign) => {
                self.owned_lock.insert(key, sign);
            }
            WriteOp::RemoveOwnedLock(key) => {
                self.owned_lock.remove(&key);
            }
            WriteOp::PutExecuted(e) => {
                self.ct.insert(e.sign.effects.tx_digest, *e);
            }
            WriteOp::AddPending(d) => {
                self.pending_checkpoint.insert(d);
            }
            WriteOp::PushUndo(record) => {
                if self.undo.last().map(|u| u.digest) != Some(record.digest) {
                    self.undo.push(record);
                }
            }
        }
    }

    /// Live latest version of `id`.
    pub fn latest_live(&self, id: &ObjID) -> Option<&Obj> {
        match self.latest.get(id) {
            Some(v) if !v.is_tombstone() => self.objects.get(&ObjKey::new(*id, *v)),
            _ => None,
        }
    }

    pub fn is_tombstoned(&self, id: &ObjID) -> bool {
        self.latest.get(id).is_some_and(|v| v.is_tombstone())
    }

    pub fn committee_for(&self, epoch: EpochId) -> Option<&Committee> {
        self.committees.get(&epoch)
    }

    /// Digest over the latest-object map: `(id, version, object digest)`
    /// per entry, tombstones included.
    pub fn state_digest(&self) -> Digest {
        let entries: BTreeMap<ObjID, (Version, Digest)> = self
            .latest
            .iter()
            .map(|(id, v)| {
                let d = self
                    .objects
                    .get(&ObjKey::new(*id, *v))
                    .map_or(Digest::ZERO, Obj::digest);
                (*id, (*v, d))
            })
            .collect();
        Digest::of(b"state\0", &entries)
    }

    /// Undoes every execution not in `keep`, newest first. Returns the rolled
    /// back digests in undo order.
    pub fn roll_back_except(&mut self, keep: &BTreeSet<TxDigest>) -> Vec<TxDigest> {
        let mut rolled = Vec::new();
        for record in std::mem::take(&mut self.undo).into_iter().rev() {
            if keep.contains(&record.digest) {
                continue;
            }
            for (id, v) in &record.prior_latest {
                match v {
                    Some(v) => self.latest.insert(*id, *v),
                    None => self.latest.remove(id),
                };
            }
            for (id, v) in &record.prior_tombstones {
                match v {
                    Some(v) => self.tombstones.insert(*id, *v),
                    None => self.tombstones.remove(id),
                };
            }
            for key in &record.written {
                self.objects.remove(key);
            }
            self.ct.remove(&record.digest);
            self.pending_checkpoint.remove(&record.digest);
            rolled.push(record.digest);
        }
        rolled
    }
}

impl LatestObjects for Store {
    fn latest_object(&self, id: &ObjID) -> Option<Obj> {
        self.latest_live(id).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object::{Ownership, Value, GENESIS_TX};

    fn obj(name: &str, version: u64) -> Obj {
        Obj {
            id: ObjID(Digest::hash(name.as_bytes())),
            version: Version(version),
            initial_version: Version(1),
            ownership: Ownership::SharedMutable,
            contents: Value::U64(version),
            parent_tx: GENESIS_TX,
        }
    }

    fn batch() -> WriteBatch {
        let a = obj("a", 2);
        let b = obj("b", 2);
        WriteBatch(vec![
            WriteOp::PutObject(a.clone()),
            WriteOp::SetLatest(a.id, a.version),
            WriteOp::PutObject(b.clone()),
            WriteOp::SetLatest(b.id, b.version),
        ])
    }

    fn store() -> Store {
        Store::genesis(
            Committee::equal(0, 4),
            &[obj("a", 1), obj("b", 1)],
            ReconfigParams::default(),
        )
    }

    #[test]
    fn crash_before_log_leaves_nothing() {
        let mut s = store();
        let before = s.clone();
        s.arm_failpoint(Failpoint::BeforeLog);
        assert_eq!(s.write(batch()), Err(Crashed));
        s.recover();
        assert_eq!(s, before);
    }

    #[test]
    fn crash_mid_batch_is_completed_on_recovery() {
        for k in 0..8 {
            let mut s = store();
            s.arm_failpoint(Failpoint::AfterOps(k));
            assert_eq!(s.write(batch()), Err(Crashed));
            assert!(s.has_logged_batch());
            s.recover();
            let mut reference = store();
            reference.write(batch()).unwrap();
            assert_eq!(s, reference, "crash after {k} ops");
        }
    }

    #[test]
    fn latest_pointer_is_monotone() {
        let mut s = store();
        let a = obj("a", 1).id;
        s.write(WriteBatch(vec![WriteOp::SetLatest(a, Version(5))]))
            .unwrap();
        s.write(WriteBatch(vec![WriteOp::SetLatest(a, Version(3))]))
            .unwrap();
        assert_eq!(s.latest[&a], Version(5));
        s.write(WriteBatch(vec![WriteOp::SetTombstone(a, Version(6))]))
            .unwrap();
        s.write(WriteBatch(vec![WriteOp::SetLatest(a, Version(7))]))
            .unwrap();
        assert!(s.is_tombstoned(&a));
        assert!(s.latest_live(&a).is_none());
    }
}
