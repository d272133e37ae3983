//! Total-order sequencer for certificates, checkpoint signatures and
//! reconfiguration calls.
//!
//! The sequencer is a trusted single-leader stand-in: it validates
//! submissions against the current committee, cuts batches into commits
//! numbered per epoch, and keeps the full log so recovering nodes can catch
//! up. It runs its own replica of the reconfiguration contract to know when
//! an epoch ends.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointSig;
use crate::committee::{Committee, EpochId};
use crate::crypto::AuthorityVerifier;
use crate::error::CertError;
use crate::messages::TxCert;
use crate::object::TxDigest;
use crate::reconfig::{ContractEvent, ReconfigContract, ReconfigParams, SystemCall};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusItem {
    Cert(TxCert),
    CheckpointSig(CheckpointSig),
    /// A reconfiguration call, valid only in the epoch it names.
    System { epoch: EpochId, call: SystemCall },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub epoch: EpochId,
    pub seq: u64,
    pub items: Vec<ConsensusItem>,
}

impl Commit {
    pub fn certs(&self) -> impl Iterator<Item = &TxCert> {
        self.items.iter().filter_map(|i| match i {
            ConsensusItem::Cert(c) => Some(c),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("invalid certificate: {0}")]
    InvalidCert(CertError),
    #[error("checkpoint signature rejected")]
    InvalidCheckpointSig,
    #[error("system call for epoch {got}, current is {current}")]
    WrongEpoch { current: EpochId, got: EpochId },
}

pub struct Sequencer {
    committee: Committee,
    committees: BTreeMap<EpochId, Committee>,
    verifier: Box<dyn AuthorityVerifier>,
    contract: ReconfigContract,
    pending: Vec<ConsensusItem>,
    next_seq: u64,
    log: Vec<Commit>,
}

impl Sequencer {
    pub fn new(
        committee: Committee,
        params: ReconfigParams,
        verifier: Box<dyn AuthorityVerifier>,
    ) -> Self {
        Sequencer {
            contract: ReconfigContract::new(params, committee.clone()),
            committees: [(committee.epoch, committee.clone())].into(),
            committee,
            verifier,
            pending: Vec::new(),
            next_seq: 0,
            log: Vec::new(),
        }
    }

    pub fn epoch(&self) -> EpochId {
        self.committee.epoch
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Accepts an item for the next batch. Certificates must carry a quorum
    /// of the current committee. Checkpoint signatures may be for an earlier
    /// epoch, since the last checkpoint of an epoch is signed after handover.
    pub fn submit(&mut self, item: ConsensusItem) -> Result<(), SubmitError> {
        match &item {
            ConsensusItem::Cert(cert) => cert
                .verify(&self.committee, &*self.verifier)
                .map_err(SubmitError::InvalidCert)?,
            ConsensusItem::CheckpointSig(sig) => {
                let known = self
                    .committees
                    .get(&sig.epoch)
                    .is_some_and(|c| c.contains(&sig.validator));
                if !known || !sig.verify(&*self.verifier)
                {
                    return Err(SubmitError::InvalidCheckpointSig);
                }
            }
            ConsensusItem::System { epoch, .. } => {
                if *epoch != self.committee.epoch {
                    return Err(SubmitError::WrongEpoch {
                        current: self.committee.epoch,
                        got: *epoch,
                    });
                }
            }
        }
        self.pending.push(item);
        Ok(())
    }

    /// Cuts the pending batch into the next commit. Repeats within the batch
    /// are dropped; repeats across commits are left to the consumer.
    pub fn cut(&mut self) -> Commit {
        let mut seen_certs: BTreeSet<TxDigest> = BTreeSet::new();
        let mut items: Vec<ConsensusItem> = Vec::with_capacity(self.pending.len());
        for item in std::mem::take(&mut self.pending) {
            let fresh = match &item {
                ConsensusItem::Cert(c) => seen_certs.insert(c.digest()),
                other => !items.contains(other),
            };
            if fresh {
                items.push(item);
            }
        }
        let commit = Commit {
            epoch: self.committee.epoch,
            seq: self.next_seq,
            items,
        };
        self.next_seq += 1;
        let mut handover = None;
        for item in &commit.items {
            if let ConsensusItem::System { epoch, call } = item {
                if *epoch != self.contract.epoch() {
                    continue;
                }
                if let Some(ContractEvent::Handover(next)) = self.contract.apply(call, commit.seq) {
                    handover = Some(next);
                }
            }
        }
        if let Some(next) = handover {
            self.committees.insert(next.epoch, next.clone());
            self.committee = next;
            self.next_seq = 0;
        }
        self.log.push(commit.clone());
        commit
    }

    /// Commits at or after position `(epoch, seq)`.
    pub fn from(&self, pos: (EpochId, u64)) -> &[Commit] {
        let start = self
            .log
            .iter()
            .position(|c| (c.epoch, c.seq) >= pos)
            .unwrap_or(self.log.len());
        &self.log[start..]
    }

    /// Position of the next commit to be cut.
    pub fn next_position(&self) -> (EpochId, u64) {
        (self.committee.epoch, self.next_seq)
    }

    pub fn log(&self) -> &[Commit] {
        &self.log
    }
}
