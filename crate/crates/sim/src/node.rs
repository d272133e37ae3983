//! A simulated validator: the core state machine plus crash/recover
//! handling, effect delivery to waiting clients, and Byzantine plugins.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use objledger_core::consensus::{Commit, ConsensusItem};
use objledger_core::crypto::{AuthoritySignature, AuthoritySigner, MacKeyring, ValidatorId};
use objledger_core::error::ValidatorError;
use objledger_core::messages::{EffSign, Tx, TxCert, TxSign};
use objledger_core::store::{Failpoint, Store};
use objledger_core::validator::{CertResponse, Validator, ValidatorConfig};
use objledger_core::{Digest, EpochId, ObjID, TxDigest};

use crate::scenario::Byzantine;
use crate::trace::TraceEvent;
use crate::wire::Msg;

#[derive(Debug)]
pub enum NodeAction {
    ToClient(usize, Msg),
    ToSequencer(ConsensusItem),
    Trace(TraceEvent),
}

pub struct Node {
    pub id: ValidatorId,
    keyring: Arc<MacKeyring>,
    config: ValidatorConfig,
    validator: Option<Validator>,
    parked: Option<Store>,
    pub byzantine: Option<Byzantine>,
    /// Clients told `Forwarded` or `NotScheduled`, awaiting effects.
    waiters: BTreeMap<TxDigest, BTreeSet<usize>>,
    /// Last time each certificate was handed to consensus.
    submitted: BTreeMap<TxDigest, u64>,
}

fn garbage() -> AuthoritySignature {
    AuthoritySignature(Digest::hash(b"garbage"))
}

impl Node {
    pub fn new(
        id: ValidatorId,
        keyring: Arc<MacKeyring>,
        config: ValidatorConfig,
        store: Store,
        byzantine: Option<Byzantine>,
    ) -> Self {
        let mut node = Node {
            id,
            keyring,
            config,
            validator: None,
            parked: Some(store),
            byzantine,
            waiters: BTreeMap::new(),
            submitted: BTreeMap::new(),
        };
        node.start();
        node
    }

    fn start(&mut self) {
        let store = self.parked.take().expect("parked store");
        self.validator = Some(Validator::new(
            Box::new(self.keyring.signer(self.id)),
            self.keyring.clone(),
            self.config.clone(),
            store,
        ));
    }

    pub fn is_alive(&self) -> bool {
        self.validator.is_some()
    }

    pub fn validator(&self) -> Option<&Validator> {
        self.validator.as_ref()
    }

    pub fn arm_failpoint(&self, failpoint: Failpoint) {
        if let Some(v) = &self.validator {
            v.arm_failpoint(failpoint);
        }
    }

    /// Stops the node, keeping only what its store persisted.
    pub fn crash(&mut self, now: u64, reason: &str, out: &mut Vec<NodeAction>) {
        if let Some(v) = self.validator.take() {
            self.parked = Some(v.into_store());
            self.waiters.clear();
            self.submitted.clear();
            out.push(NodeAction::Trace(TraceEvent::Crash {
                t: now,
                validator: self.id.0,
                reason: reason.into(),
            }));
        }
    }

    pub fn recover(&mut self, now: u64, out: &mut Vec<NodeAction>) {
        if self.parked.is_none() {
            return;
        }
        self.start();
        out.push(NodeAction::Trace(TraceEvent::Recover {
            t: now,
            validator: self.id.0,
        }));
        self.flush(now, out);
    }

    pub fn on_tx(&mut self, client: usize, tx: &Tx, now: u64, out: &mut Vec<NodeAction>) {
        let Some(v) = &self.validator else { return };
        let digest = tx.digest();
        let result = match self.byzantine {
            Some(Byzantine::Silent) => return,
            Some(Byzantine::Garbage) => Ok(TxSign {
                tx_digest: digest,
                validator: self.id,
                epoch: tx.epoch(),
                sig: garbage(),
            }),
            Some(Byzantine::SignBoth) => match v.handle_tx(tx) {
                Err(ValidatorError::ConflictingLock { .. }) => {
                    let signer = self.keyring.signer(self.id);
                    Ok(TxSign::new(digest, tx.epoch(), &signer as &dyn AuthoritySigner))
                }
                other => other,
            },
            None => v.handle_tx(tx),
        };
        out.push(NodeAction::ToClient(client, Msg::TxReply { tx: digest, result }));
        self.flush(now, out);
    }

    pub fn on_cert(&mut self, client: usize, cert: &TxCert, now: u64, out: &mut Vec<NodeAction>) {
        let Some(v) = &self.validator else { return };
        if self.byzantine == Some(Byzantine::Silent) {
            return;
        }
        let digest = cert.digest();
        let mut result = v.handle_cert(cert);
        if matches!(
            result,
            Ok(CertResponse::Forwarded) | Err(ValidatorError::NotScheduled(_))
        ) {
            self.waiters.entry(digest).or_default().insert(client);
        }
        if let Ok(CertResponse::Executed(sign)) = &mut result {
            self.corrupt(sign);
        }
        out.push(NodeAction::ToClient(client, Msg::CertReply { tx: digest, result }));
        self.flush(now, out);
    }

    pub fn on_commit(&mut self, commit: Commit, now: u64, out: &mut Vec<NodeAction>) {
        let Some(v) = &self.validator else { return };
        let _ = v.handle_commit(commit);
        self.flush(now, out);
    }

    fn corrupt(&self, sign: &mut EffSign) {
        if self.byzantine == Some(Byzantine::Garbage) {
            sign.sig = garbage();
        }
    }

    /// Hands certificates accepted here but still unsequenced back to
    /// consensus once they are at least `min_age` old.
    pub fn resubmit(&mut self, now: u64, min_age: u64, out: &mut Vec<NodeAction>) {
        let Some(v) = &self.validator else { return };
        for cert in v.unsequenced_certs() {
            let d = cert.digest();
            let last = self.submitted.get(&d).copied().unwrap_or(0);
            if now.saturating_sub(last) >= min_age {
                self.submitted.insert(d, now);
                out.push(NodeAction::ToSequencer(ConsensusItem::Cert(cert)));
            }
        }
    }

    fn flush(&mut self, now: u64, out: &mut Vec<NodeAction>) {
        let Some(v) = &self.validator else { return };
        let outputs = v.take_outputs();
        let me = self.id.0;
        for mut sign in outputs.executed {
            let tx = sign.effects.tx_digest;
            out.push(NodeAction::Trace(TraceEvent::Executed {
                t: now,
                validator: me,
                tx,
                epoch: sign.epoch,
                effects: sign.effects.digest(),
            }));
            self.corrupt(&mut sign);
            for client in self.waiters.remove(&tx).unwrap_or_default() {
                out.push(NodeAction::ToClient(client, Msg::EffSign(sign.clone())));
            }
        }
        for lock in outputs.shared_locks {
            out.push(NodeAction::Trace(TraceEvent::SharedLock {
                t: now,
                validator: me,
                tx: lock.tx,
                object: lock.id,
                version: lock.version.0,
            }));
        }
        for cp in outputs.checkpoints {
            out.push(NodeAction::Trace(TraceEvent::Checkpoint {
                t: now,
                validator: me,
                epoch: cp.epoch,
                seq: cp.seq,
                digest: cp.digest(),
                prev: cp.prev_digest,
                txs: cp.contents.clone(),
            }));
        }
        for cert in outputs.certified {
            out.push(NodeAction::Trace(TraceEvent::CheckpointCert {
                t: now,
                validator: me,
                epoch: cert.epoch,
                seq: cert.seq,
                digest: cert.digest,
            }));
        }
        for change in outputs.epoch_changes {
            out.push(NodeAction::Trace(TraceEvent::EpochChange {
                t: now,
                validator: me,
                epoch: change.epoch,
                committee: change.committee.ids().map(|v| v.0).collect(),
                state: change.state_digest,
                rolled_back: change.rolled_back,
            }));
        }
        for item in outputs.to_consensus {
            if let ConsensusItem::Cert(c) = &item {
                self.submitted.insert(c.digest(), now);
            }
            out.push(NodeAction::ToSequencer(item));
        }
        if v.is_crashed() {
            self.crash(now, "failpoint", out);
        }
    }

    /// Nothing left to do locally for the commits delivered so far.
    pub fn is_idle(&self) -> bool {
        self.validator.as_ref().is_some_and(|v| {
            v.with_store(|s| {
                s.exec_queue.is_empty()
                    && s.builder.queue.is_empty()
                    && s.next_committee.is_none()
                    && s.pending_checkpoint.is_empty()
            })
        })
    }

    pub fn cursor(&self) -> Option<(EpochId, u64)> {
        self.validator.as_ref().map(Validator::cursor)
    }

    pub fn epoch(&self) -> Option<EpochId> {
        self.validator.as_ref().map(Validator::epoch)
    }

    pub fn state_digest(&self) -> Option<Digest> {
        self.validator
            .as_ref()
            .map(|v| v.with_store(Store::state_digest))
    }

    pub fn counter(&self, id: &ObjID) -> Option<u64> {
        self.validator
            .as_ref()?
            .latest_object(id)?
            .contents
            .counter_value()
    }
}
