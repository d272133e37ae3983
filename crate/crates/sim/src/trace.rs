//! Newline-delimited JSON trace of a run.
//!
//! The first record is a header describing the run, the last a footer with
//! the record count and the final validator states. A file without a
//! matching footer is corrupt.

use std::io::{BufRead, Write};

use objledger_core::{Digest, ObjID, ObjKey, TxDigest};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Header(Header),
    /// A message put on the network. `deliver` is its arrival time.
    Msg {
        t: u64,
        deliver: u64,
        from: String,
        to: String,
        msg: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tx: Option<TxDigest>,
        #[serde(default, skip_serializing_if = "is_zero")]
        drops: u32,
    },
    TxSubmitted {
        t: u64,
        client: usize,
        op: usize,
        tx: TxDigest,
        epoch: u64,
        op_kind: String,
        keys: Vec<ObjKey>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        shared: Vec<ObjID>,
        commands: usize,
    },
    CertFormed {
        t: u64,
        client: usize,
        tx: TxDigest,
        epoch: u64,
        keys: Vec<ObjKey>,
        signers: Vec<u16>,
    },
    /// The certificate was accepted by a quorum.
    Final {
        t: u64,
        client: usize,
        op: usize,
        tx: TxDigest,
        epoch: u64,
    },
    /// The client assembled an effects certificate.
    Settled {
        t: u64,
        client: usize,
        op: usize,
        tx: TxDigest,
        epoch: u64,
        effects: Digest,
        success: bool,
        gas_used: u64,
    },
    /// Conflicting locks make a quorum impossible this epoch.
    Stalled {
        t: u64,
        client: usize,
        tx: TxDigest,
        epoch: u64,
    },
    Renewed {
        t: u64,
        client: usize,
        op: usize,
        old: TxDigest,
        new: TxDigest,
        epoch: u64,
    },
    OpFailed {
        t: u64,
        client: usize,
        op: usize,
        tx: TxDigest,
        reason: String,
    },
    ClientCrash {
        t: u64,
        client: usize,
    },
    Executed {
        t: u64,
        validator: u16,
        tx: TxDigest,
        epoch: u64,
        effects: Digest,
    },
    SharedLock {
        t: u64,
        validator: u16,
        tx: TxDigest,
        object: ObjID,
        version: u64,
    },
    Checkpoint {
        t: u64,
        validator: u16,
        epoch: u64,
        seq: u64,
        digest: Digest,
        prev: Digest,
        txs: Vec<(TxDigest, Digest)>,
    },
    CheckpointCert {
        t: u64,
        validator: u16,
        epoch: u64,
        seq: u64,
        digest: Digest,
    },
    EpochChange {
        t: u64,
        validator: u16,
        epoch: u64,
        committee: Vec<u16>,
        state: Digest,
        rolled_back: Vec<TxDigest>,
    },
    Commit {
        t: u64,
        epoch: u64,
        seq: u64,
        certs: Vec<TxDigest>,
        system: Vec<String>,
    },
    Crash {
        t: u64,
        validator: u16,
        reason: String,
    },
    Recover {
        t: u64,
        validator: u16,
    },
    Footer(Footer),
}

fn is_zero(x: &u32) -> bool {
    *x == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub scenario: String,
    pub seed: u64,
    pub stakes: Vec<u64>,
    pub byzantine: Vec<u16>,
    /// Validators scheduled to crash at some point.
    pub crash_faults: Vec<u16>,
    pub faulty_clients: Vec<usize>,
    pub commit_interval: u64,
    pub checkpoints_before_change: u64,
    pub epoch_changes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub t: u64,
    /// Records between header and footer.
    pub events: u64,
    /// The run reached quiescence before its deadline.
    pub complete: bool,
    pub finals: Vec<FinalState>,
}

/// A live validator's state at the end of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub validator: u16,
    pub epoch: u64,
    pub state: Digest,
    pub counters: Vec<(ObjID, u64)>,
}

impl TraceEvent {
    pub fn time(&self) -> u64 {
        use TraceEvent::*;
        match self {
            Header(_) => 0,
            Footer(f) => f.t,
            Msg { t, .. }
            | TxSubmitted { t, .. }
            | CertFormed { t, .. }
            | Final { t, .. }
            | Settled { t, .. }
            | Stalled { t, .. }
            | Renewed { t, .. }
            | OpFailed { t, .. }
            | ClientCrash { t, .. }
            | Executed { t, .. }
            | SharedLock { t, .. }
            | Checkpoint { t, .. }
            | CheckpointCert { t, .. }
            | EpochChange { t, .. }
            | Commit { t, .. }
            | Crash { t, .. }
            | Recover { t, .. } => *t,
        }
    }
}

/// A complete, well-formed trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: Header,
    pub events: Vec<TraceEvent>,
    pub footer: Footer,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("corrupt trace: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Trace {
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let line = |out: &mut dyn Write, e: &TraceEvent| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, e)?;
            out.write_all(b"\n")
        };
        line(&mut out, &TraceEvent::Header(self.header.clone()))?;
        for e in &self.events {
            line(&mut out, e)?;
        }
        line(&mut out, &TraceEvent::Footer(self.footer.clone()))?;
        out.flush()
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn digest(&self) -> Digest {
        Digest::hash(&self.to_ndjson())
    }

    pub fn read_from(input: impl BufRead) -> Result<Trace, TraceError> {
        let corrupt = |m: String| TraceError::Corrupt(m);
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(&line)
                .map_err(|err| corrupt(format!("line {}: {err}", i + 1)))?;
            records.push(e);
        }
        let Some(TraceEvent::Header(header)) = records.first().cloned() else {
            return Err(corrupt("missing header".into()));
        };
        let Some(TraceEvent::Footer(footer)) = records.last().cloned() else {
            return Err(corrupt("missing footer (truncated?)".into()));
        };
        let events: Vec<TraceEvent> = records[1..records.len() - 1].to_vec();
        if footer.events != events.len() as u64 {
            return Err(corrupt(format!(
                "footer counts {} records, found {}",
                footer.events,
                events.len()
            )));
        }
        if events
            .iter()
            .any(|e| matches!(e, TraceEvent::Header(_) | TraceEvent::Footer(_)))
        {
            return Err(corrupt("header or footer in the body".into()));
        }
        if events.windows(2).any(|w| w[0].time() > w[1].time()) {
            return Err(corrupt("records out of time order".into()));
        }
        Ok(Trace {
            header,
            events,
            footer,
        })
    }
}
