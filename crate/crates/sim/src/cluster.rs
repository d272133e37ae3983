//! A synchronous in-process cluster: every call reaches every validator
//! immediately. Useful for property tests that don't need timing.

use std::sync::Arc;

use objledger_core::consensus::{Commit, Sequencer};
use objledger_core::crypto::MacKeyring;
use objledger_core::error::{CertError, ValidatorError};
use objledger_core::messages::{aggregate_eff_cert, aggregate_tx_cert, EffCert, EffSign, Tx, TxCert};
use objledger_core::reconfig::ReconfigParams;
use objledger_core::store::Store;
use objledger_core::validator::{CertResponse, Validator, ValidatorConfig};
use objledger_core::{Committee, Obj, ObjID, ValidatorId};

const KEYRING_SEED: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("rejected: {0}")]
    Rejected(#[from] ValidatorError),
    #[error("no certificate: {0}")]
    Cert(#[from] CertError),
}

pub struct Cluster {
    pub ring: Arc<MacKeyring>,
    pub committee: Committee,
    pub validators: Vec<Validator>,
    pub sequencer: Sequencer,
}

impl Cluster {
    pub fn new(n: u16, genesis: &[Obj]) -> Cluster {
        let ring = Arc::new(MacKeyring::new(KEYRING_SEED));
        let committee = Committee::equal(0, n);
        let params = ReconfigParams::default();
        let validators = (0..n)
            .map(|i| {
                Validator::new(
                    Box::new(ring.signer(ValidatorId(i))),
                    ring.clone(),
                    ValidatorConfig::default(),
                    Store::genesis(committee.clone(), genesis, params),
                )
            })
            .collect();
        Cluster {
            sequencer: Sequencer::new(committee.clone(), params, Box::new((*ring).clone())),
            ring,
            committee,
            validators,
        }
    }

    /// Collects signatures from every validator; fails with the first
    /// rejection if no quorum signed.
    pub fn certify(&self, tx: &Tx) -> Result<TxCert, ClusterError> {
        let mut signs = Vec::new();
        let mut first_err = None;
        for v in &self.validators {
            match v.handle_tx(tx) {
                Ok(s) => signs.push(s),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        aggregate_tx_cert(tx.clone(), &signs, &self.committee, &*self.ring)
            .map_err(|e| first_err.map_or(ClusterError::Cert(e), ClusterError::Rejected))
    }

    /// Hands the certificate to every validator, sequencing it if needed,
    /// and aggregates the effects.
    pub fn execute(&mut self, cert: &TxCert) -> Result<EffCert, ClusterError> {
        let mut signs: Vec<EffSign> = Vec::new();
        let mut pending = Vec::new();
        for (i, v) in self.validators.iter().enumerate() {
            match v.handle_cert(cert)? {
                CertResponse::Executed(s) => signs.push(s),
                CertResponse::Forwarded => pending.push(i),
            }
        }
        if !pending.is_empty() {
            self.round();
            let d = cert.digest();
            for i in pending {
                match self.validators[i].handle_cert(cert)? {
                    CertResponse::Executed(s) if s.effects.tx_digest == d => signs.push(s),
                    _ => return Err(ValidatorError::NotScheduled(d).into()),
                }
            }
        }
        let effects = signs[0].effects.clone();
        Ok(aggregate_eff_cert(effects, &signs, &self.committee, &*self.ring)?)
    }

    pub fn submit(&mut self, tx: &Tx) -> Result<EffCert, ClusterError> {
        let cert = self.certify(tx)?;
        self.execute(&cert)
    }

    /// Drains every outbox into the sequencer and delivers one commit.
    pub fn round(&mut self) -> Commit {
        for v in &self.validators {
            for item in v.take_outputs().to_consensus {
                let _ = self.sequencer.submit(item);
            }
        }
        let commit = self.sequencer.cut();
        for v in &self.validators {
            let _ = v.handle_commit(commit.clone());
        }
        commit
    }

    pub fn latest(&self, i: usize, id: &ObjID) -> Option<Obj> {
        self.validators[i].latest_object(id)
    }
}
