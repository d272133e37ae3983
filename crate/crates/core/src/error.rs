use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::committee::{EpochId, Stake};
use crate::crypto::ValidatorId;
use crate::object::{ObjID, ObjKey, TxDigest, Version};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error("unknown object {0:?}")]
    UnknownObject(ObjID),
    #[error("ownership cycle through {0:?}")]
    OwnershipCycle(ObjID),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum CertError {
    #[error("insufficient stake: have {have}, need {need}")]
    InsufficientStake { have: Stake, need: Stake },
    #[error("epoch mismatch: expected {expected}, got {got}")]
    EpochMismatch { expected: EpochId, got: EpochId },
    #[error("attestation is over a different digest")]
    DigestMismatch,
    #[error("invalid signature from {0}")]
    InvalidSignature(ValidatorId),
    #[error("{0} is not a committee member")]
    UnknownSigner(ValidatorId),
}

/// Why `tx_valid` rejected a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum InvalidTx {
    #[error("bad user signature")]
    BadUserSignature,
    #[error("sender is not authorized to use {0:?}")]
    Unauthorized(ObjID),
    #[error("insufficient gas")]
    InsufficientGas,
    #[error("gas object is not a coin")]
    GasNotCoin,
    #[error("gas object missing from owned inputs")]
    GasNotInInputs,
    #[error("input {0:?} is a tombstone")]
    TombstoneInput(ObjID),
    #[error("duplicate input {0:?}")]
    DuplicateInput(ObjID),
    #[error("input {0:?} does not match its reference")]
    InputMismatch(ObjID),
    #[error("malformed transaction: {0}")]
    Malformed(String),
}

/// Errors returned by validator message handlers.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ValidatorError {
    #[error("missing objects {0:?}")]
    MissingObjects(Vec<ObjKey>),
    #[error("shared object {id:?} has initial version {actual}, tx declared {declared}")]
    InitialVersionMismatch {
        id: ObjID,
        declared: Version,
        actual: Version,
    },
    #[error("invalid transaction: {0}")]
    InvalidTx(InvalidTx),
    #[error("{0:?} is no longer the live version")]
    StaleInput(ObjKey),
    #[error("{key:?} is locked by {holder:?}")]
    ConflictingLock { key: ObjKey, holder: TxDigest },
    #[error("validator is paused for reconfiguration in epoch {epoch}")]
    Paused { epoch: EpochId },
    #[error("wrong epoch: validator is in {current}, message is for {got}")]
    WrongEpoch { current: EpochId, got: EpochId },
    #[error("certificate {0:?} is not yet scheduled")]
    NotScheduled(TxDigest),
    #[error("invalid certificate: {0}")]
    InvalidCert(CertError),
    #[error("{0} is not in the current committee")]
    NotInCommittee(ValidatorId),
    #[error("validator crashed")]
    Crashed,
}

impl From<InvalidTx> for ValidatorError {
    fn from(e: InvalidTx) -> Self {
        ValidatorError::InvalidTx(e)
    }
}

impl From<CertError> for ValidatorError {
    fn from(e: CertError) -> Self {
        ValidatorError::InvalidCert(e)
    }
}
