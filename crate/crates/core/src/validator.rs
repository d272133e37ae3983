//! The validator state machine.
//!
//! Handlers: [`Validator::handle_tx`] signs a transaction after locking its
//! owned inputs, [`Validator::handle_cert`] executes owned-only certificates
//! immediately, and [`Validator::handle_commit`] consumes the consensus stream:
//! it assigns shared-object versions, executes what became ready, builds
//! checkpoints and drives reconfiguration.
//!
//! Messages the validator wants sequenced, and notifications for observers,
//! accumulate in an outbox drained with [`Validator::take_outputs`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard, RwLock};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointCert, CheckpointSig, PendingCommit};
use crate::committee::{Committee, EpochId, Stake};
use crate::consensus::{Commit, ConsensusItem};
use crate::crypto::{AuthoritySigner, AuthorityVerifier, ValidatorId};
use crate::digest::Digest;
use crate::error::ValidatorError;
use crate::execution::{exec, tx_valid, ExecOutput, GasSchedule, InputObjects, SharedInput};
use crate::messages::{EffSign, Tx, TxCert, TxSign};
use crate::object::{Obj, ObjID, ObjKey, TxDigest, Version};
use crate::reconfig::{ContractEvent, Phase, SystemCall};
use crate::store::{Executed, Failpoint, Store, UndoRecord, WriteBatch, WriteOp};

#[derive(Clone, Debug)]
pub struct ValidatorConfig {
    pub gas: GasSchedule,
    /// Stake offered when registering for a later epoch.
    pub stake: Stake,
    /// Epochs this validator registers to join.
    pub join_epochs: BTreeSet<EpochId>,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            gas: GasSchedule::default(),
            stake: 1,
            join_epochs: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertResponse {
    Executed(EffSign),
    /// Has shared inputs and is waiting for its sequence position.
    Forwarded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedLock {
    pub tx: TxDigest,
    pub id: ObjID,
    pub version: Version,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochChange {
    pub epoch: EpochId,
    pub committee: Committee,
    pub state_digest: Digest,
    pub rolled_back: Vec<TxDigest>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Outputs {
    pub executed: Vec<EffSign>,
    pub shared_locks: Vec<SharedLock>,
    pub checkpoints: Vec<Checkpoint>,
    pub certified: Vec<CheckpointCert>,
    pub to_consensus: Vec<ConsensusItem>,
    pub epoch_changes: Vec<EpochChange>,
}

const LOCK_STRIPES: usize = 64;

/// Striped per-object guards, always taken in stripe order.
struct LockTable {
    stripes: Vec<Mutex<()>>,
}

impl LockTable {
    fn new() -> Self {
        LockTable {
            stripes: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
        }
    }

    fn acquire(&self, keys: &[ObjKey]) -> Vec<MutexGuard<'_, ()>> {
        let stripes: BTreeSet<usize> = keys
            .iter()
            .map(|k| k.id.as_bytes()[0] as usize % LOCK_STRIPES)
            .collect();
        stripes.into_iter().map(|i| self.stripes[i].lock()).collect()
    }
}

pub struct Validator {
    id: ValidatorId,
    signer: Box<dyn AuthoritySigner>,
    verifier: Arc<dyn AuthorityVerifier>,
    config: ValidatorConfig,
    guards: LockTable,
    store: RwLock<Store>,
    inbox: Mutex<BTreeMap<(EpochId, u64), Commit>>,
    outbox: Mutex<Outputs>,
    crashed: AtomicBool,
}

impl Validator {
    /// Starts (or restarts) a validator over `store`, completing any batch
    /// interrupted by a crash and resuming queued work.
    pub fn new(
        signer: Box<dyn AuthoritySigner>,
        verifier: Arc<dyn AuthorityVerifier>,
        config: ValidatorConfig,
        mut store: Store,
    ) -> Self {
        store.recover();
        let v = Validator {
            id: signer.id(),
            signer,
            verifier,
            config,
            guards: LockTable::new(),
            store: RwLock::new(store),
            inbox: Mutex::new(BTreeMap::new()),
            outbox: Mutex::new(Outputs::default()),
            crashed: AtomicBool::new(false),
        };
        let mut store = v.store.write();
        if v.drain(&mut store).and_then(|()| v.build(&mut store)).is_err() {
            v.crashed.store(true, Ordering::SeqCst);
        }
        drop(store);
        v
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    /// Hands back the persistent state; volatile state is lost.
    pub fn into_store(self) -> Store {
        self.store.into_inner()
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    pub fn arm_failpoint(&self, failpoint: Failpoint) {
        self.store.write().arm_failpoint(failpoint);
    }

    pub fn with_store<R>(&self, f: impl FnOnce(&Store) -> R) -> R {
        f(&self.store.read())
    }

    pub fn epoch(&self) -> EpochId {
        self.store.read().epoch
    }

    pub fn take_outputs(&self) -> Outputs {
        std::mem::take(&mut self.outbox.lock())
    }

    pub fn get_object(&self, key: &ObjKey) -> Option<Obj> {
        self.store.read().objects.get(key).cloned()
    }

    pub fn latest_object(&self, id: &ObjID) -> Option<Obj> {
        self.store.read().latest_live(id).cloned()
    }

    fn check_alive(&self) -> Result<(), ValidatorError> {
        if self.is_crashed() {
            return Err(ValidatorError::Crashed);
        }
        Ok(())
    }

    fn check_accepting(&self, store: &Store, epoch: EpochId) -> Result<(), ValidatorError> {
        // An ended epoch is reported even by validators that left the committee.
        if epoch < store.epoch {
            return Err(ValidatorError::WrongEpoch {
                current: store.epoch,
                got: epoch,
            });
        }
        if !store.committee.contains(&self.id) {
            return Err(ValidatorError::NotInCommittee(self.id));
        }
        if store.paused {
            return Err(ValidatorError::Paused { epoch: store.epoch });
        }
        if epoch != store.epoch {
            return Err(ValidatorError::WrongEpoch {
                current: store.epoch,
                got: epoch,
            });
        }
        Ok(())
    }

    fn persist(&self, store: &mut Store, batch: WriteBatch) -> Result<(), ValidatorError> {
        store.write(batch).map_err(|_| {
            self.crashed.store(true, Ordering::SeqCst);
            ValidatorError::Crashed
        })
    }

    /// Validates `tx` and locks its owned inputs to it.
    pub fn handle_tx(&self, tx: &Tx) -> Result<TxSign, ValidatorError> {
        self.check_alive()?;
        let digest = tx.digest();
        {
            let store = self.store.read();
            self.check_accepting(&store, tx.epoch())?;
            let inputs = load_for_signing(&store, tx)?;
            tx_valid(tx, &inputs, &self.config.gas)?;
        }

        let keys: Vec<ObjKey> = tx.owned_keys().collect();
        let _guards = self.guards.acquire(&keys);
        let mut store = self.store.write();
        self.check_accepting(&store, tx.epoch())?;
        let sign = TxSign::new(digest, store.epoch, &*self.signer);
        let mut batch = WriteBatch::default();
        for key in &keys {
            match store.owned_lock.get(key) {
                None => return Err(ValidatorError::StaleInput(*key)),
                Some(Some(held)) if held.tx_digest != digest => {
                    return Err(ValidatorError::ConflictingLock {
                        key: *key,
                        holder: held.tx_digest,
                    })
                }
                Some(Some(_)) => {}
                Some(None) => batch.push(WriteOp::PutOwnedLock(*key, Some(sign.clone()))),
            }
        }
        if !batch.0.is_empty() {
            self.persist(&mut store, batch)?;
        }
        Ok(sign)
    }

    /// Executes an owned-only certificate, or forwards a shared one to
    /// consensus. Either way the certificate is submitted for sequencing.
    pub fn handle_cert(&self, cert: &TxCert) -> Result<CertResponse, ValidatorError> {
        self.check_alive()?;
        let digest = cert.digest();
        let keys: Vec<ObjKey> = cert.tx.owned_keys().collect();
        let _guards = self.guards.acquire(&keys);
        let mut store = self.store.write();
        if let Some(done) = store.ct.get(&digest) {
            return Ok(CertResponse::Executed(done.sign.clone()));
        }
        self.check_accepting(&store, cert.epoch())?;
        cert.verify(&store.committee, &*self.verifier)?;

        if cert.tx.has_shared_inputs() && !locks_assigned(&store, cert) {
            if !store.sequenced.contains(&digest) {
                store.forwarded.insert(digest, cert.clone());
                store.pending_checkpoint.insert(digest);
                self.submit(ConsensusItem::Cert(cert.clone()));
            }
            return Ok(CertResponse::Forwarded);
        }
        let inputs = load_for_exec(&store, cert)?;
        let sign = self.execute(&mut store, cert, inputs)?;
        if !store.sequenced.contains(&digest) {
            self.submit(ConsensusItem::Cert(cert.clone()));
        }
        self.drain(&mut store)?;
        self.build(&mut store)?;
        Ok(CertResponse::Executed(sign))
    }

    fn submit(&self, item: ConsensusItem) {
        self.outbox.lock().to_consensus.push(item);
    }

    /// Accepts a commit from the sequencer. Commits may arrive out of order
    /// or repeatedly; they are consumed strictly in sequence.
    pub fn handle_commit(&self, commit: Commit) -> Result<(), ValidatorError> {
        self.check_alive()?;
        self.inbox.lock().insert((commit.epoch, commit.seq), commit);
        self.pump()
    }

    /// The next commit this validator expects.
    pub fn cursor(&self) -> (EpochId, u64) {
        self.store.read().cursor
    }

    fn pump(&self) -> Result<(), ValidatorError> {
        loop {
            let mut store = self.store.write();
            if store.next_committee.is_some() {
                return Ok(());
            }
            let next = {
                let mut inbox = self.inbox.lock();
                let cursor = store.cursor;
                inbox.retain(|k, _| *k >= cursor);
                inbox.remove(&cursor)
            };
            let Some(commit) = next else {
                return Ok(());
            };
            self.consume(&mut store, commit)?;
        }
    }

    fn consume(&self, store: &mut Store, commit: Commit) -> Result<(), ValidatorError> {
        debug_assert_eq!((commit.epoch, commit.seq), store.cursor);
        let seq = commit.seq;
        let mut fresh = Vec::new();
        let mut sigs = Vec::new();
        let mut closes = false;
        for item in commit.items {
            match item {
                ConsensusItem::Cert(cert) => {
                    if cert.epoch() == store.epoch && store.sequenced.insert(cert.digest()) {
                        fresh.push(cert);
                    }
                }
                ConsensusItem::CheckpointSig(sig) => sigs.push(sig),
                // Calls after a handover in the same commit belong to the old epoch.
                ConsensusItem::System { epoch, .. } if epoch != store.contract.epoch() => {}
                ConsensusItem::System { call, .. } => match store.contract.apply(&call, seq) {
                    Some(ContractEvent::PauseTxLocking) => store.paused = true,
                    Some(ContractEvent::Handover(next)) => {
                        store.next_committee = Some(next);
                        closes = true;
                    }
                    Some(ContractEvent::EpochEdge(_)) | None => {}
                },
            }
        }

        // Read-only transactions see the version before this commit's writers.
        let mut locks = Vec::new();
        for read_only in [true, false] {
            for cert in &fresh {
                if cert.tx.has_shared_inputs() && cert.tx.is_shared_read_only() == read_only {
                    locks.extend(assign_shared_locks(store, cert));
                }
            }
        }
        self.outbox.lock().shared_locks.extend(locks);

        let digests = fresh.iter().map(TxCert::digest).collect();
        for cert in fresh {
            if !store.ct.contains_key(&cert.digest()) {
                store.exec_queue.push_back(cert);
            }
        }
        store.builder.enqueue(PendingCommit {
            epoch: commit.epoch,
            seq,
            certs: digests,
            closes_epoch: closes,
        });
        store.cursor.1 += 1;

        for sig in sigs {
            let Some(committee) = store.committee_for(sig.epoch).cloned() else {
                continue;
            };
            if let Some(cert) = store.builder.add_signature(sig, &committee, &*self.verifier) {
                self.outbox.lock().certified.push(cert);
            }
        }

        self.drain(store)?;
        self.build(store)?;
        if store.next_committee.is_none() && store.epoch == commit.epoch {
            self.drive_reconfig(store, seq);
        }
        Ok(())
    }

    /// Executes queued certificates until none is ready.
    fn drain(&self, store: &mut Store) -> Result<(), ValidatorError> {
        loop {
            let mut progressed = false;
            let mut i = 0;
            while i < store.exec_queue.len() {
                let cert = store.exec_queue[i].clone();
                if store.ct.contains_key(&cert.digest()) {
                    store.exec_queue.remove(i);
                    continue;
                }
                match load_for_exec(store, &cert) {
                    Ok(inputs) => {
                        self.execute(store, &cert, inputs)?;
                        store.exec_queue.remove(i);
                        progressed = true;
                    }
                    Err(_) => i += 1,
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    fn execute(
        &self,
        store: &mut Store,
        cert: &TxCert,
        inputs: InputObjects,
    ) -> Result<EffSign, ValidatorError> {
        let out = exec(&cert.tx, &inputs, &*store, &self.config.gas);
        let sign = EffSign::new(out.effects.clone(), store.epoch, &*self.signer);
        let batch = persist_batch(store, cert, &out, &sign);
        self.persist(store, batch)?;
        self.outbox.lock().executed.push(sign.clone());
        Ok(sign)
    }

    /// Builds every checkpoint whose commit is fully executed locally.
    fn build(&self, store: &mut Store) -> Result<(), ValidatorError> {
        loop {
            let ct = &store.ct;
            let built = store.builder.try_build(|d| {
                ct.get(d).map(|e| {
                    let effects = e.effects();
                    (effects.digest(), effects.distinct_dependencies())
                })
            });
            let Some((checkpoint, closes)) = built else {
                return Ok(());
            };
            for (d, _) in &checkpoint.contents {
                store.pending_checkpoint.remove(d);
                store.forwarded.remove(d);
            }
            let committee = store
                .committee_for(checkpoint.epoch)
                .cloned()
                .expect("committee of a consumed commit");
            let mut out = self.outbox.lock();
            if committee.contains(&self.id) {
                let sig = CheckpointSig::new(&checkpoint, &*self.signer);
                out.to_consensus.push(ConsensusItem::CheckpointSig(sig));
            }
            if let Some(cert) = store.builder.recheck(checkpoint.epoch, checkpoint.seq, &committee) {
                out.certified.push(cert);
            }
            out.checkpoints.push(checkpoint);
            drop(out);
            if closes {
                self.change_epoch(store);
            }
        }
    }

    /// Rolls back executions left out of the final checkpoint, drops locks
    /// and tombstones, and switches to the next committee.
    fn change_epoch(&self, store: &mut Store) {
        let next = store.next_committee.take().expect("handover recorded");
        let keep = store.builder.included.clone();
        let rolled_back = store.roll_back_except(&keep);
        store.exec_queue.clear();
        store.forwarded.clear();
        store.sequenced.clear();
        store.builder.deferred.clear();
        store.pending_checkpoint.clear();
        store.shared_lock.clear();
        store.next_shared_lock.clear();
        store.tombstones.clear();
        store.latest.retain(|_, v| !v.is_tombstone());
        let owned: BTreeMap<ObjKey, Option<TxSign>> = store
            .latest
            .iter()
            .filter_map(|(id, v)| store.objects.get(&ObjKey::new(*id, *v)))
            .filter(|o| o.ownership.is_owned())
            .map(|o| (o.key(), None))
            .collect();
        store.owned_lock = owned;
        store.epoch = next.epoch;
        store.committees.insert(next.epoch, next.clone());
        store.committee = next;
        store.paused = false;
        store.cursor = (store.epoch, 0);
        let change = EpochChange {
            epoch: store.epoch,
            committee: store.committee.clone(),
            state_digest: store.state_digest(),
            rolled_back,
        };
        self.outbox.lock().epoch_changes.push(change);
    }

    /// Submits whatever reconfiguration call this validator owes after
    /// consuming commit `seq`. Calls are repeated until counted; the
    /// contract ignores duplicates.
    fn drive_reconfig(&self, store: &Store, seq: u64) {
        let contract = &store.contract;
        let me = self.id;
        let member = store.committee.contains(&me);
        let mut calls = Vec::new();
        match contract.phase() {
            Phase::Register | Phase::Ready => {
                let joining = self.config.join_epochs.contains(&(store.epoch + 1));
                if joining && contract.phase() == Phase::Register && !contract.is_registered(&me) {
                    calls.push(SystemCall::Register {
                        validator: me,
                        stake: self.config.stake,
                    });
                }
                if contract.is_registered(&me)
                    && !contract.has_counted(&me)
                    && seq + 1 >= contract.params().checkpoints_before_change
                {
                    calls.push(SystemCall::Ready { validator: me });
                }
            }
            Phase::EndOfEpoch => {
                if member && store.pending_checkpoint.is_empty() && !contract.has_counted(&me) {
                    calls.push(SystemCall::EndOfEpoch { validator: me });
                }
            }
            Phase::Handover => {
                if member && seq >= contract.epoch_edge() {
                    calls.push(SystemCall::Handover { validator: me });
                }
            }
        }
        let mut out = self.outbox.lock();
        out.to_consensus
            .extend(calls.into_iter().map(|call| ConsensusItem::System {
                epoch: store.epoch,
                call,
            }));
    }

    /// Certificates accepted here but not yet sequenced, for resubmission.
    pub fn unsequenced_certs(&self) -> Vec<TxCert> {
        let store = self.store.read();
        if !store.committee.contains(&self.id) {
            return Vec::new();
        }
        store
            .pending_checkpoint
            .iter()
            .filter(|d| !store.sequenced.contains(*d))
            .filter_map(|d| {
                store
                    .ct
                    .get(d)
                    .map(|e| e.cert.clone())
                    .or_else(|| store.forwarded.get(d).cloned())
            })
            .collect()
    }
}

fn locks_assigned(store: &Store, cert: &TxCert) -> bool {
    let digest = cert.digest();
    cert.tx
        .data
        .shared_inputs
        .iter()
        .all(|(id, _)| store.shared_lock.contains_key(&(digest, *id)))
}

/// Version the next sequenced transaction on `id` must read.
fn current_shared_version(store: &Store, id: &ObjID, initial: Version) -> Version {
    if let Some(v) = store.next_shared_lock.get(id) {
        return *v;
    }
    if let Some(o) = store.latest_live(id) {
        return o.version;
    }
    if let Some(v) = store.tombstones.get(id) {
        return *v;
    }
    initial
}

/// Fixes the version of every shared input of a newly sequenced certificate
/// and advances the next version of those it may write.
fn assign_shared_locks(store: &mut Store, cert: &TxCert) -> Vec<SharedLock> {
    let digest = cert.digest();
    let tx = &cert.tx;
    if locks_assigned(store, cert) {
        return Vec::new();
    }
    let assigned: Vec<(ObjID, Version)> = tx
        .data
        .shared_inputs
        .iter()
        .map(|(id, initial)| (*id, current_shared_version(store, id, *initial)))
        .collect();
    let v_max = tx
        .data
        .owned_inputs
        .iter()
        .map(|r| r.version)
        .chain(assigned.iter().map(|(_, v)| *v))
        .max()
        .unwrap_or(Version::TOMBSTONE);
    let mut out = Vec::with_capacity(assigned.len());
    for (id, version) in assigned {
        store.shared_lock.insert((digest, id), version);
        if tx.shared_input_is_mutable(&id) {
            store.next_shared_lock.insert(id, v_max.next());
        }
        out.push(SharedLock {
            tx: digest,
            id,
            version,
        });
    }
    out
}

fn load_for_signing(store: &Store, tx: &Tx) -> Result<InputObjects, ValidatorError> {
    let d = &tx.data;
    let mut missing = Vec::new();
    let mut inputs = InputObjects::default();
    for r in &d.owned_inputs {
        match store.objects.get(&r.key()) {
            Some(o) => inputs.owned.push(o.clone()),
            None => missing.push(r.key()),
        }
    }
    for id in &d.readonly_inputs {
        match store.latest_live(id) {
            Some(o) => inputs.readonly.push(o.clone()),
            None if store.is_tombstoned(id) => {
                return Err(crate::error::InvalidTx::TombstoneInput(*id).into())
            }
            None => missing.push(ObjKey::new(*id, Version::TOMBSTONE)),
        }
    }
    for (id, initial) in &d.shared_inputs {
        match store.latest_live(id) {
            Some(o) => {
                if o.ownership.is_shared_mutable() && o.initial_version != *initial {
                    return Err(ValidatorError::InitialVersionMismatch {
                        id: *id,
                        declared: *initial,
                        actual: o.initial_version,
                    });
                }
                inputs.shared.push(SharedInput {
                    id: *id,
                    version: o.version,
                    object: Some(o.clone()),
                });
            }
            None if store.is_tombstoned(id) => {
                return Err(crate::error::InvalidTx::TombstoneInput(*id).into())
            }
            None => missing.push(ObjKey::new(*id, *initial)),
        }
    }
    if !missing.is_empty() {
        return Err(ValidatorError::MissingObjects(missing));
    }
    Ok(inputs)
}

/// Inputs for executing `cert`: owned inputs at their exact versions, shared
/// inputs at their assigned versions once every earlier writer has run.
fn load_for_exec(store: &Store, cert: &TxCert) -> Result<InputObjects, ValidatorError> {
    let d = &cert.tx.data;
    let digest = cert.digest();
    let mut missing = Vec::new();
    let mut inputs = InputObjects::default();
    for r in &d.owned_inputs {
        match store.objects.get(&r.key()) {
            Some(o) => inputs.owned.push(o.clone()),
            None => missing.push(r.key()),
        }
    }
    for id in &d.readonly_inputs {
        match store.latest_live(id) {
            Some(o) => inputs.readonly.push(o.clone()),
            None => missing.push(ObjKey::new(*id, Version::TOMBSTONE)),
        }
    }
    if !missing.is_empty() {
        return Err(ValidatorError::MissingObjects(missing));
    }
    for (id, _) in &d.shared_inputs {
        let version = *store
            .shared_lock
            .get(&(digest, *id))
            .ok_or(ValidatorError::NotScheduled(digest))?;
        let mutable = cert.tx.shared_input_is_mutable(id);
        let object = match store.objects.get(&ObjKey::new(*id, version)) {
            Some(_) if mutable && store.latest.get(id) != Some(&version) => {
                return Err(ValidatorError::NotScheduled(digest));
            }
            Some(o) => Some(o.clone()),
            None if store.tombstones.get(id).is_some_and(|t| *t <= version) => None,
            None => return Err(ValidatorError::NotScheduled(digest)),
        };
        inputs.shared.push(SharedInput {
            id: *id,
            version,
            object,
        });
    }
    Ok(inputs)
}

/// The batch that persists one execution atomically: objects, latest
/// pointers, lock updates, the executed-certificate record and its undo
/// record.
fn persist_batch(store: &Store, cert: &TxCert, out: &ExecOutput, sign: &EffSign) -> WriteBatch {
    let digest = cert.digest();
    let mut batch = WriteBatch::default();
    let touched: BTreeSet<ObjID> = out
        .written
        .iter()
        .map(|o| o.id)
        .chain(out.deleted.iter().copied())
        .chain(out.wrapped.iter().copied())
        .collect();

    let mut prior_latest = Vec::new();
    for id in &touched {
        let prior = store.latest.get(id).copied();
        prior_latest.push((*id, prior));
        if let Some(v) = prior.filter(|v| !v.is_tombstone()) {
            let key = ObjKey::new(*id, v);
            if store.owned_lock.contains_key(&key) {
                batch.push(WriteOp::RemoveOwnedLock(key));
            }
        }
    }
    // An abort leaves non-gas owned inputs in place; release them.
    if !out.is_success() {
        for key in cert.tx.owned_keys().filter(|k| !touched.contains(&k.id)) {
            if matches!(store.owned_lock.get(&key), Some(Some(s)) if s.tx_digest == digest) {
                batch.push(WriteOp::PutOwnedLock(key, None));
            }
        }
    }

    for o in &out.written {
        batch.push(WriteOp::PutObject(o.clone()));
        batch.push(WriteOp::SetLatest(o.id, o.version));
        if o.ownership.is_owned() && !store.owned_lock.contains_key(&o.key()) {
            batch.push(WriteOp::PutOwnedLock(o.key(), None));
        }
    }
    let mut prior_tombstones = Vec::new();
    for key in &out.effects.deleted {
        prior_tombstones.push((key.id, store.tombstones.get(&key.id).copied()));
        batch.push(WriteOp::SetTombstone(key.id, key.version));
    }
    for id in &out.wrapped {
        batch.push(WriteOp::RemoveLatest(*id));
    }

    batch.push(WriteOp::PutExecuted(Box::new(Executed {
        cert: cert.clone(),
        sign: sign.clone(),
    })));
    batch.push(WriteOp::AddPending(digest));
    batch.push(WriteOp::PushUndo(UndoRecord {
        digest,
        prior_latest,
        prior_tombstones,
        written: out.written.iter().map(Obj::key).collect(),
    }));
    batch
}
