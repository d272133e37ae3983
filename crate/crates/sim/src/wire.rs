//! Messages exchanged between simulated actors.

use objledger_core::consensus::{Commit, ConsensusItem};
use objledger_core::error::ValidatorError;
use objledger_core::messages::{EffSign, Tx, TxCert, TxSign};
use objledger_core::validator::CertResponse;
use objledger_core::TxDigest;

#[derive(Clone, Debug)]
pub enum Msg {
    Tx(Tx),
    Cert(TxCert),
    TxReply {
        tx: TxDigest,
        result: Result<TxSign, ValidatorError>,
    },
    CertReply {
        tx: TxDigest,
        result: Result<CertResponse, ValidatorError>,
    },
    /// Effects pushed to a client whose certificate was answered before it
    /// could execute.
    EffSign(EffSign),
    Submit(ConsensusItem),
    Commit(Commit),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Actor {
    Validator(u16),
    Client(usize),
    Sequencer,
}

impl std::fmt::Display for Actor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Actor::Validator(v) => write!(f, "v{v}"),
            Actor::Client(c) => write!(f, "c{c}"),
            Actor::Sequencer => f.write_str("seq"),
        }
    }
}

pub fn error_label(e: &ValidatorError) -> &'static str {
    match e {
        ValidatorError::MissingObjects(_) => "missing",
        ValidatorError::InitialVersionMismatch { .. } => "initial_version",
        ValidatorError::InvalidTx(_) => "invalid_tx",
        ValidatorError::StaleInput(_) => "stale",
        ValidatorError::ConflictingLock { .. } => "conflict",
        ValidatorError::Paused { .. } => "paused",
        ValidatorError::WrongEpoch { .. } => "wrong_epoch",
        ValidatorError::NotScheduled(_) => "not_scheduled",
        ValidatorError::InvalidCert(_) => "invalid_cert",
        ValidatorError::NotInCommittee(_) => "not_in_committee",
        ValidatorError::Crashed => "crashed",
    }
}

impl Msg {
    pub fn label(&self) -> String {
        match self {
            Msg::Tx(_) => "tx".into(),
            Msg::Cert(_) => "cert".into(),
            Msg::TxReply { result, .. } => match result {
                Ok(_) => "tx_reply:ok".into(),
                Err(e) => format!("tx_reply:{}", error_label(e)),
            },
            Msg::CertReply { result, .. } => match result {
                Ok(CertResponse::Executed(_)) => "cert_reply:executed".into(),
                Ok(CertResponse::Forwarded) => "cert_reply:forwarded".into(),
                Err(e) => format!("cert_reply:{}", error_label(e)),
            },
            Msg::EffSign(_) => "eff_sign".into(),
            Msg::Submit(ConsensusItem::Cert(_)) => "submit:cert".into(),
            Msg::Submit(ConsensusItem::CheckpointSig(_)) => "submit:checkpoint_sig".into(),
            Msg::Submit(ConsensusItem::System { .. }) => "submit:system".into(),
            Msg::Commit(_) => "commit".into(),
        }
    }

    pub fn tx(&self) -> Option<TxDigest> {
        match self {
            Msg::Tx(tx) => Some(tx.digest()),
            Msg::Cert(c) | Msg::Submit(ConsensusItem::Cert(c)) => Some(c.digest()),
            Msg::TxReply { tx, .. } | Msg::CertReply { tx, .. } => Some(*tx),
            Msg::EffSign(s) => Some(s.effects.tx_digest),
            Msg::Submit(_) | Msg::Commit(_) => None,
        }
    }
}

/// Replies that count towards finality: the validator holds the certificate.
pub fn is_acceptance(label: &str) -> bool {
    matches!(
        label,
        "cert_reply:executed" | "cert_reply:forwarded" | "cert_reply:not_scheduled"
    )
}
