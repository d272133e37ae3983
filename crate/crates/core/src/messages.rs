//! Transactions, certificates and effects: the four-stage lifecycle
//! `Tx → TxCert → Effects → EffCert`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::committee::{Committee, EpochId};
use crate::crypto::{
    AggregateSignature, AuthoritySignature, AuthoritySigner, AuthorityVerifier, UserKeypair,
    UserSignature, ValidatorId,
};
use crate::digest::{Digest, Encode};
use crate::error::CertError;
use crate::execution::TxKind;
use crate::object::{Address, ObjID, ObjKey, ObjRef, TxDigest, Version};

/// Everything a transaction commits to except its signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxData {
    pub epoch: EpochId,
    pub sender: Address,
    pub kind: TxKind,
    pub owned_inputs: Vec<ObjRef>,
    pub readonly_inputs: Vec<ObjID>,
    /// `(id, initial version)` of every shared input.
    pub shared_inputs: Vec<(ObjID, Version)>,
    pub gas_ref: ObjRef,
    pub gas_budget: u64,
    pub tip: u64,
}

impl Encode for TxData {
    fn encode(&self, out: &mut Vec<u8>) {
        self.epoch.encode(out);
        self.sender.encode(out);
        self.kind.encode(out);
        self.owned_inputs.encode(out);
        self.readonly_inputs.encode(out);
        self.shared_inputs.encode(out);
        self.gas_ref.encode(out);
        self.gas_budget.encode(out);
        self.tip.encode(out);
    }
}

impl TxData {
    pub fn digest(&self) -> TxDigest {
        TxDigest(Digest::of(b"tx\0", self))
    }

    pub fn sign(self, key: &UserKeypair) -> Tx {
        let user_sig = key.sign(&self.digest().0);
        Tx {
            data: self,
            user_sig,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tx {
    pub data: TxData,
    pub user_sig: UserSignature,
}

impl Tx {
    pub fn digest(&self) -> TxDigest {
        self.data.digest()
    }

    pub fn epoch(&self) -> EpochId {
        self.data.epoch
    }

    pub fn owned_keys(&self) -> impl Iterator<Item = ObjKey> + '_ {
        self.data.owned_inputs.iter().map(ObjRef::key)
    }

    pub fn has_shared_inputs(&self) -> bool {
        !self.data.shared_inputs.is_empty()
    }

    /// A shared input is mutable unless every command touching it only reads.
    pub fn shared_input_is_mutable(&self, id: &ObjID) -> bool {
        self.data.kind.mutates_shared(id)
    }

    /// True when every shared input is only read.
    pub fn is_shared_read_only(&self) -> bool {
        self.has_shared_inputs()
            && self
                .data
                .shared_inputs
                .iter()
                .all(|(id, _)| !self.shared_input_is_mutable(id))
    }

    pub fn verify_user_signature(&self) -> bool {
        self.user_sig.verify(&self.data.sender, &self.digest().0)
    }

    /// Every input id, in declaration order.
    pub fn input_ids(&self) -> Vec<ObjID> {
        let d = &self.data;
        d.owned_inputs
            .iter()
            .map(|r| r.id)
            .chain(d.readonly_inputs.iter().copied())
            .chain(d.shared_inputs.iter().map(|(id, _)| *id))
            .collect()
    }
}

fn tx_sign_message(digest: &TxDigest, epoch: EpochId) -> Vec<u8> {
    let mut m = b"tx-sign\0".to_vec();
    digest.encode(&mut m);
    epoch.encode(&mut m);
    m
}

/// A single validator's vote for a transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSign {
    pub tx_digest: TxDigest,
    pub validator: ValidatorId,
    pub epoch: EpochId,
    pub sig: AuthoritySignature,
}

impl TxSign {
    pub fn new(tx_digest: TxDigest, epoch: EpochId, signer: &dyn AuthoritySigner) -> Self {
        TxSign {
            tx_digest,
            validator: signer.id(),
            epoch,
            sig: signer.sign(&tx_sign_message(&tx_digest, epoch)),
        }
    }

    pub fn verify(&self, verifier: &dyn AuthorityVerifier) -> bool {
        verifier.verify(
            self.validator,
            &tx_sign_message(&self.tx_digest, self.epoch),
            &self.sig,
        )
    }
}

impl Encode for TxSign {
    fn encode(&self, out: &mut Vec<u8>) {
        self.tx_digest.encode(out);
        self.validator.encode(out);
        self.epoch.encode(out);
        self.sig.encode(out);
    }
}

/// A transaction with attestations from a stake quorum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TxCert {
    pub tx: Tx,
    pub signatures: AggregateSignature,
}

/// Certificates over the same transaction are the same certificate whatever
/// the signer set.
impl PartialEq for TxCert {
    fn eq(&self, other: &Self) -> bool {
        self.tx == other.tx
    }
}

impl Eq for TxCert {}

impl TxCert {
    pub fn digest(&self) -> TxDigest {
        self.tx.digest()
    }

    pub fn epoch(&self) -> EpochId {
        self.tx.epoch()
    }

    pub fn signers(&self) -> impl Iterator<Item = &ValidatorId> {
        self.signatures.keys()
    }

    pub fn verify(
        &self,
        committee: &Committee,
        verifier: &dyn AuthorityVerifier,
    ) -> Result<(), CertError> {
        check_epoch(committee, self.epoch())?;
        let msg = tx_sign_message(&self.digest(), self.epoch());
        verify_aggregate(&self.signatures, &msg, committee, verifier)
    }
}

fn check_epoch(committee: &Committee, epoch: EpochId) -> Result<(), CertError> {
    if committee.epoch != epoch {
        return Err(CertError::EpochMismatch {
            expected: committee.epoch,
            got: epoch,
        });
    }
    Ok(())
}

fn verify_aggregate(
    sigs: &AggregateSignature,
    msg: &[u8],
    committee: &Committee,
    verifier: &dyn AuthorityVerifier,
) -> Result<(), CertError> {
    for (id, sig) in sigs {
        if !committee.contains(id) {
            return Err(CertError::UnknownSigner(*id));
        }
        if !verifier.verify(*id, msg, sig) {
            return Err(CertError::InvalidSignature(*id));
        }
    }
    let have = committee.stake_of(sigs.keys());
    let need = committee.quorum_threshold();
    if have < need {
        return Err(CertError::InsufficientStake { have, need });
    }
    Ok(())
}

/// Combines partial signatures into a certificate. Duplicate signers count
/// once.
pub fn aggregate_tx_cert(
    tx: Tx,
    signs: &[TxSign],
    committee: &Committee,
    verifier: &dyn AuthorityVerifier,
) -> Result<TxCert, CertError> {
    check_epoch(committee, tx.epoch())?;
    let digest = tx.digest();
    let mut signatures = AggregateSignature::new();
    for s in signs {
        if s.tx_digest != digest {
            return Err(CertError::DigestMismatch);
        }
        check_epoch(committee, s.epoch)?;
        if !committee.contains(&s.validator) {
            return Err(CertError::UnknownSigner(s.validator));
        }
        if !s.verify(verifier) {
            return Err(CertError::InvalidSignature(s.validator));
        }
        signatures.insert(s.validator, s.sig);
    }
    let have = committee.stake_of(signatures.keys());
    let need = committee.quorum_threshold();
    if have < need {
        return Err(CertError::InsufficientStake { have, need });
    }
    Ok(TxCert { tx, signatures })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionStatus {
    Success,
    Abort { code: u64, location: String },
}

impl ExecutionStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, ExecutionStatus::Success)
    }
}

impl Encode for ExecutionStatus {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            ExecutionStatus::Success => out.push(0),
            ExecutionStatus::Abort { code, location } => {
                out.push(1);
                code.encode(out);
                location.encode(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub type_name: String,
    pub payload: Vec<u8>,
}

impl Encode for Event {
    fn encode(&self, out: &mut Vec<u8>) {
        self.type_name.encode(out);
        self.payload.as_slice().encode(out);
    }
}

/// Outcome of executing a certificate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effects {
    pub tx_digest: TxDigest,
    pub status: ExecutionStatus,
    pub gas_used: u64,
    pub created: Vec<ObjRef>,
    pub mutated: Vec<ObjRef>,
    pub unwrapped: Vec<ObjRef>,
    pub wrapped: Vec<ObjKey>,
    pub deleted: Vec<ObjKey>,
    pub events: Vec<Event>,
    /// Creating transaction of every distinct input object.
    pub dependencies: Vec<TxDigest>,
}

impl Encode for Effects {
    fn encode(&self, out: &mut Vec<u8>) {
        self.tx_digest.encode(out);
        self.status.encode(out);
        self.gas_used.encode(out);
        self.created.encode(out);
        self.mutated.encode(out);
        self.unwrapped.encode(out);
        self.wrapped.encode(out);
        self.deleted.encode(out);
        self.events.encode(out);
        self.dependencies.encode(out);
    }
}

impl Effects {
    pub fn digest(&self) -> Digest {
        Digest::of(b"effects\0", self)
    }

    /// Every live object reference the transaction produced.
    pub fn written(&self) -> impl Iterator<Item = &ObjRef> {
        self.created
            .iter()
            .chain(self.mutated.iter())
            .chain(self.unwrapped.iter())
    }

    pub fn distinct_dependencies(&self) -> BTreeSet<TxDigest> {
        self.dependencies.iter().copied().collect()
    }
}

fn eff_sign_message(digest: &Digest, epoch: EpochId) -> Vec<u8> {
    let mut m = b"effects-sign\0".to_vec();
    digest.encode(&mut m);
    epoch.encode(&mut m);
    m
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffSign {
    pub effects: Effects,
    pub validator: ValidatorId,
    pub epoch: EpochId,
    pub sig: AuthoritySignature,
}

impl EffSign {
    pub fn new(effects: Effects, epoch: EpochId, signer: &dyn AuthoritySigner) -> Self {
        let sig = signer.sign(&eff_sign_message(&effects.digest(), epoch));
        EffSign {
            effects,
            validator: signer.id(),
            epoch,
            sig,
        }
    }

    pub fn verify(&self, verifier: &dyn AuthorityVerifier) -> bool {
        verifier.verify(
            self.validator,
            &eff_sign_message(&self.effects.digest(), self.epoch),
            &self.sig,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffCert {
    pub effects: Effects,
    pub epoch: EpochId,
    pub signatures: AggregateSignature,
}

impl PartialEq for EffCert {
    fn eq(&self, other: &Self) -> bool {
        self.effects == other.effects && self.epoch == other.epoch
    }
}

impl Eq for EffCert {}

impl EffCert {
    pub fn verify(
        &self,
        committee: &Committee,
        verifier: &dyn AuthorityVerifier,
    ) -> Result<(), CertError> {
        check_epoch(committee, self.epoch)?;
        let msg = eff_sign_message(&self.effects.digest(), self.epoch);
        verify_aggregate(&self.signatures, &msg, committee, verifier)
    }
}

pub fn aggregate_eff_cert(
    effects: Effects,
    signs: &[EffSign],
    committee: &Committee,
    verifier: &dyn AuthorityVerifier,
) -> Result<EffCert, CertError> {
    let digest = effects.digest();
    let mut signatures = AggregateSignature::new();
    for s in signs {
        if s.effects.digest() != digest {
            return Err(CertError::DigestMismatch);
        }
        check_epoch(committee, s.epoch)?;
        if !committee.contains(&s.validator) {
            return Err(CertError::UnknownSigner(s.validator));
        }
        if !s.verify(verifier) {
            return Err(CertError::InvalidSignature(s.validator));
        }
        signatures.insert(s.validator, s.sig);
    }
    let have = committee.stake_of(signatures.keys());
    let need = committee.quorum_threshold();
    if have < need {
        return Err(CertError::InsufficientStake { have, need });
    }
    Ok(EffCert {
        effects,
        epoch: committee.epoch,
        signatures,
    })
}
