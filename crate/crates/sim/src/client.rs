//! Client (gateway) logic: certificate assembly, settlement collection,
//! renewal across epochs and relayer synchronization, plus the faulty
//! client behaviors.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use objledger_core::committee::EpochId;
use objledger_core::crypto::{AuthorityVerifier, UserKeypair, ValidatorId};
use objledger_core::error::ValidatorError;
use objledger_core::execution::{Command, TxKind};
use objledger_core::messages::{
    aggregate_eff_cert, aggregate_tx_cert, EffCert, EffSign, Tx, TxCert, TxData, TxSign,
};
use objledger_core::validator::{CertResponse, Validator};
use objledger_core::{Committee, ObjID, ObjKey, ObjRef, TxDigest, Value, Version};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scenario::{ClientBehavior, WorkloadSpec};
use crate::trace::TraceEvent;
use crate::wire::Msg;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PtbError {
    #[error("empty command list")]
    Empty,
    #[error("object {0:?} is used by more than one command")]
    DuplicateObject(ObjID),
}

/// Bundles `commands` into one transaction with a single gas object.
#[allow(clippy::too_many_arguments)]
pub fn make_ptb(
    key: &UserKeypair,
    commands: Vec<Command>,
    owned_inputs: Vec<ObjRef>,
    shared_inputs: Vec<(ObjID, Version)>,
    gas: ObjRef,
    gas_budget: u64,
    epoch: EpochId,
) -> Result<Tx, PtbError> {
    if commands.is_empty() {
        return Err(PtbError::Empty);
    }
    let mut seen = BTreeSet::new();
    for id in commands.iter().flat_map(Command::objects) {
        if !seen.insert(id) {
            return Err(PtbError::DuplicateObject(id));
        }
    }
    let mut owned_inputs = owned_inputs;
    if !owned_inputs.contains(&gas) {
        owned_inputs.push(gas);
    }
    Ok(TxData {
        epoch,
        sender: key.address(),
        kind: TxKind::Ptb(commands),
        owned_inputs,
        readonly_inputs: vec![],
        shared_inputs,
        gas_ref: gas,
        gas_budget,
        tip: 0,
    }
    .sign(key))
}

/// The same transaction for another epoch. Kind and inputs are unchanged.
pub fn renew(tx: &Tx, key: &UserKeypair, epoch: EpochId) -> Tx {
    TxData {
        epoch,
        ..tx.data.clone()
    }
    .sign(key)
}

/// Something a certificate can be handed to synchronously.
pub trait CertTarget {
    fn process_cert(&mut self, cert: &TxCert) -> Result<CertResponse, ValidatorError>;
}

impl CertTarget for &Validator {
    fn process_cert(&mut self, cert: &TxCert) -> Result<CertResponse, ValidatorError> {
        self.handle_cert(cert)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyncError {
    #[error("no certificate known for missing object {0:?}")]
    HistoryGap(ObjKey),
    #[error("target rejected a certificate: {0}")]
    Rejected(ValidatorError),
}

/// Brings `target` up to date for `cert`, uploading missing ancestors from
/// `local` (certificates keyed by the object versions they created).
/// Returns the digests the target accepted, in submission order.
pub fn sync_validator(
    target: &mut impl CertTarget,
    cert: &TxCert,
    local: &BTreeMap<ObjKey, TxCert>,
) -> Result<Vec<TxDigest>, SyncError> {
    let mut stack = vec![cert.clone()];
    let mut accepted = Vec::new();
    while let Some(top) = stack.last() {
        match target.process_cert(top) {
            Ok(_) => {
                accepted.push(top.digest());
                stack.pop();
            }
            Err(ValidatorError::MissingObjects(keys)) => {
                let before = stack.len();
                for key in keys {
                    let creator = local.get(&key).ok_or(SyncError::HistoryGap(key))?;
                    if !stack.iter().any(|c| c.digest() == creator.digest()) {
                        stack.push(creator.clone());
                    }
                }
                if stack.len() == before {
                    return Err(SyncError::Rejected(ValidatorError::MissingObjects(vec![])));
                }
            }
            Err(e) => return Err(SyncError::Rejected(e)),
        }
    }
    Ok(accepted)
}

/// What a client asks the simulator to do.
#[derive(Debug)]
pub enum ClientAction {
    Send(ValidatorId, Msg),
    Wake { at: u64, token: u64 },
    Trace(TraceEvent),
}

/// Read-only view of the world handed to client handlers.
pub struct Ctx<'a> {
    pub now: u64,
    pub committees: &'a BTreeMap<EpochId, Committee>,
    pub verifier: &'a dyn AuthorityVerifier,
    pub out: Vec<ClientAction>,
}

impl Ctx<'_> {
    fn current_epoch(&self) -> EpochId {
        *self.committees.keys().next_back().expect("genesis committee")
    }

    fn committee(&self, epoch: EpochId) -> &Committee {
        &self.committees[&epoch]
    }

    fn trace(&mut self, e: TraceEvent) {
        self.out.push(ClientAction::Trace(e));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Owned,
    Shared,
    Ptb,
    /// Fresh transaction on an object left locked by an equivocation.
    Renewal,
}

impl OpKind {
    fn label(self) -> &'static str {
        match self {
            OpKind::Owned => "owned",
            OpKind::Shared => "shared",
            OpKind::Ptb => "ptb",
            OpKind::Renewal => "renewal",
        }
    }
}

enum Stage {
    Signing {
        signs: BTreeMap<ValidatorId, TxSign>,
        conflicts: BTreeSet<ValidatorId>,
        moved_on: BTreeSet<ValidatorId>,
    },
    Certifying {
        cert: TxCert,
        accepted: BTreeSet<ValidatorId>,
        effsigns: BTreeMap<ValidatorId, EffSign>,
        moved_on: BTreeSet<ValidatorId>,
        is_final: bool,
    },
    /// No quorum is possible this epoch; wait for the next one.
    Stalled,
}

struct Op {
    n: usize,
    kind: OpKind,
    tx: Tx,
    stage: Stage,
}

/// The equivocation attempt: two conflicting transactions, each validator
/// receiving its own sequence of them.
struct Equivocation {
    txs: [Tx; 2],
    queues: BTreeMap<ValidatorId, VecDeque<u8>>,
    outstanding: BTreeMap<ValidatorId, u8>,
    signs: [BTreeMap<ValidatorId, TxSign>; 2],
    certified: [bool; 2],
}

/// Objects a client starts with.
pub struct Holdings {
    pub gas: ObjRef,
    pub owned: Vec<ObjRef>,
    pub shared: Vec<(ObjID, Version)>,
}

pub struct Client {
    pub id: usize,
    key: UserKeypair,
    rng: ChaCha8Rng,
    spec: WorkloadSpec,
    behavior: Option<ClientBehavior>,
    gas: ObjRef,
    owned: Vec<ObjRef>,
    shared: Vec<(ObjID, Version)>,
    ops_started: usize,
    op: Option<Op>,
    equivocation: Option<Equivocation>,
    /// Certificates that created each object version this client produced.
    history: BTreeMap<ObjKey, TxCert>,
    /// Requests held back at a validator until an uploaded ancestor lands.
    blocked: BTreeMap<(ValidatorId, TxDigest), TxDigest>,
    token: u64,
    /// Epoch the client waits to leave before renewing.
    awaiting_epoch: Option<EpochId>,
    done: bool,
    crashed: bool,
}

const GAS_BUDGET: u64 = 10_000;

impl Client {
    pub fn new(
        id: usize,
        key: UserKeypair,
        rng: ChaCha8Rng,
        spec: WorkloadSpec,
        behavior: Option<ClientBehavior>,
        holdings: Holdings,
    ) -> Self {
        Client {
            id,
            key,
            rng,
            spec,
            behavior,
            gas: holdings.gas,
            owned: holdings.owned,
            shared: holdings.shared,
            ops_started: 0,
            op: None,
            equivocation: None,
            history: BTreeMap::new(),
            blocked: BTreeMap::new(),
            token: 0,
            awaiting_epoch: None,
            done: false,
            crashed: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done || self.crashed
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn history(&self) -> &BTreeMap<ObjKey, TxCert> {
        &self.history
    }

    fn send(&self, ctx: &mut Ctx, to: ValidatorId, msg: Msg) {
        if matches!(self.behavior, Some(ClientBehavior::Resubmitter)) {
            ctx.out.push(ClientAction::Send(to, msg.clone()));
        }
        ctx.out.push(ClientAction::Send(to, msg));
    }

    fn arm_timer(&mut self, ctx: &mut Ctx) {
        self.token += 1;
        ctx.out.push(ClientAction::Wake {
            at: ctx.now + self.spec.retry_timeout,
            token: self.token,
        });
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        if let Some(ClientBehavior::Equivocator { orders, .. }) = self.behavior.clone() {
            self.equivocate(orders, ctx);
        } else {
            self.next_op(ctx);
        }
    }

    fn wants_more(&self, ctx: &Ctx) -> bool {
        if matches!(self.behavior, Some(ClientBehavior::Equivocator { .. })) {
            return false;
        }
        match self.spec.until_epoch {
            Some(e) => ctx.current_epoch() < e,
            None => self.ops_started < self.spec.ops_per_client,
        }
    }

    fn next_op(&mut self, ctx: &mut Ctx) {
        if !self.wants_more(ctx) {
            self.done = true;
            return;
        }
        let kind = self.pick_kind();
        let epoch = ctx.current_epoch();
        let n = self.ops_started;
        self.ops_started += 1;
        let tx = self.build(kind, n, epoch);
        self.submit(Op { n, kind, tx, stage: signing() }, ctx);
    }

    fn pick_kind(&mut self) -> OpKind {
        let w = &self.spec;
        let total = w.owned_weight + w.shared_weight + w.ptb_weight;
        let r = self.rng.gen_range(0..total);
        if r < w.owned_weight {
            OpKind::Owned
        } else if r < w.owned_weight + w.shared_weight {
            OpKind::Shared
        } else {
            OpKind::Ptb
        }
    }

    fn build(&mut self, kind: OpKind, n: usize, epoch: EpochId) -> Tx {
        let contents = Value::counter(n as u64 + 1);
        let (tx_kind, owned_inputs, shared_inputs) = match kind {
            OpKind::Owned | OpKind::Renewal => (
                TxKind::Command(Command::MutateOwned {
                    obj: self.owned[0].id,
                    new_contents: contents,
                }),
                vec![self.owned[0], self.gas],
                vec![],
            ),
            OpKind::Shared => {
                let (id, initial) = self.shared[self.rng.gen_range(0..self.shared.len())];
                (
                    TxKind::Command(Command::IncrementSharedCounter { obj: id }),
                    vec![self.gas],
                    vec![(id, initial)],
                )
            }
            OpKind::Ptb => {
                let k = self.spec.ptb_size.min(self.owned.len());
                let commands = self.owned[..k]
                    .iter()
                    .map(|r| Command::MutateOwned {
                        obj: r.id,
                        new_contents: contents.clone(),
                    })
                    .collect();
                return make_ptb(
                    &self.key,
                    commands,
                    self.owned[..k].to_vec(),
                    vec![],
                    self.gas,
                    GAS_BUDGET,
                    epoch,
                )
                .expect("workload commands name distinct objects");
            }
        };
        TxData {
            epoch,
            sender: self.key.address(),
            kind: tx_kind,
            owned_inputs,
            readonly_inputs: vec![],
            shared_inputs,
            gas_ref: self.gas,
            gas_budget: GAS_BUDGET,
            tip: 0,
        }
        .sign(&self.key)
    }

    fn submit(&mut self, op: Op, ctx: &mut Ctx) {
        let tx = &op.tx;
        ctx.trace(TraceEvent::TxSubmitted {
            t: ctx.now,
            client: self.id,
            op: op.n,
            tx: tx.digest(),
            epoch: tx.epoch(),
            op_kind: op.kind.label().into(),
            keys: tx.owned_keys().collect(),
            shared: tx.data.shared_inputs.iter().map(|(id, _)| *id).collect(),
            commands: tx.data.kind.commands().len(),
        });
        let members: Vec<_> = ctx.committee(tx.epoch()).ids().collect();
        for v in members {
            self.send(ctx, v, Msg::Tx(tx.clone()));
        }
        self.op = Some(op);
        self.arm_timer(ctx);
    }

    pub fn on_wake(&mut self, token: u64, ctx: &mut Ctx) {
        if token != self.token || self.is_done() {
            return;
        }
        if let Some(e) = self.awaiting_epoch {
            if ctx.current_epoch() > e {
                self.awaiting_epoch = None;
                self.after_epoch_change(ctx);
            } else {
                self.arm_timer(ctx);
            }
            return;
        }
        if let Some(eq) = &self.equivocation {
            let resend: Vec<(ValidatorId, Tx)> = eq
                .outstanding
                .iter()
                .map(|(v, i)| (*v, eq.txs[*i as usize - 1].clone()))
                .collect();
            for (v, tx) in resend {
                self.send(ctx, v, Msg::Tx(tx));
            }
            self.arm_timer(ctx);
            return;
        }
        let Some(op) = &self.op else {
            self.next_op(ctx);
            return;
        };
        let members: Vec<_> = ctx.committee(op.tx.epoch()).ids().collect();
        let mut resend = Vec::new();
        match &op.stage {
            Stage::Signing {
                signs, moved_on, ..
            } => {
                // Once the epoch may have ended, signers are asked again so
                // they can report it too.
                let ask_all = !moved_on.is_empty();
                for v in members
                    .iter()
                    .filter(|v| !moved_on.contains(v) && (ask_all || !signs.contains_key(v)))
                {
                    resend.push((*v, Msg::Tx(op.tx.clone())));
                }
            }
            Stage::Certifying { cert, effsigns, .. } => {
                for v in members.iter().filter(|v| !effsigns.contains_key(v)) {
                    resend.push((*v, Msg::Cert(cert.clone())));
                }
            }
            Stage::Stalled => {}
        }
        for (v, m) in resend {
            self.send(ctx, v, m);
        }
        self.arm_timer(ctx);
    }

    pub fn on_message(&mut self, from: ValidatorId, msg: Msg, ctx: &mut Ctx) {
        if self.is_done() {
            return;
        }
        match msg {
            Msg::TxReply { tx, result } => {
                if self.equivocation.is_some() {
                    self.on_equivocation_reply(from, tx, result, ctx);
                } else if self.op.as_ref().is_some_and(|o| o.tx.digest() == tx) {
                    self.on_tx_reply(from, result, ctx);
                }
            }
            Msg::CertReply { tx, result } => {
                if let Some(waiting) = self.blocked.remove(&(from, tx)) {
                    self.on_sync_reply(from, waiting, result, ctx);
                } else if self.op.as_ref().is_some_and(|o| o.tx.digest() == tx) {
                    self.on_cert_reply(from, result, ctx);
                }
            }
            Msg::EffSign(sign) => {
                if self
                    .op
                    .as_ref()
                    .is_some_and(|o| o.tx.digest() == sign.effects.tx_digest)
                {
                    self.on_effsign(from, sign, ctx);
                }
            }
            Msg::Tx(_) | Msg::Cert(_) | Msg::Submit(_) | Msg::Commit(_) => {}
        }
    }

    fn on_tx_reply(
        &mut self,
        from: ValidatorId,
        result: Result<TxSign, ValidatorError>,
        ctx: &mut Ctx,
    ) {
        let op = self.op.as_mut().expect("checked by caller");
        let epoch = op.tx.epoch();
        let digest = op.tx.digest();
        let Stage::Signing {
            signs,
            conflicts,
            moved_on,
        } = &mut op.stage
        else {
            return;
        };
        let committee = ctx.committee(epoch).clone();
        let next = match result {
            Ok(sign) => {
                let genuine = sign.tx_digest == digest
                    && sign.epoch == epoch
                    && sign.validator == from
                    && committee.contains(&from)
                    && sign.verify(ctx.verifier);
                if genuine {
                    signs.insert(from, sign);
                }
                if genuine && committee.reaches_quorum(signs.keys()) {
                    let signs: Vec<TxSign> = signs.values().cloned().collect();
                    let cert = aggregate_tx_cert(op.tx.clone(), &signs, &committee, ctx.verifier)
                        .expect("verified quorum aggregates");
                    Next::Certify(cert)
                } else {
                    Next::Wait
                }
            }
            Err(ValidatorError::ConflictingLock { .. }) => {
                conflicts.insert(from);
                let blocked = committee.stake_of(conflicts.iter());
                if committee.total_stake() - blocked < committee.quorum_threshold() {
                    Next::Stall
                } else {
                    Next::Wait
                }
            }
            Err(ValidatorError::WrongEpoch { current, got }) if current > got => {
                moved_on.insert(from);
                if committee.stake_of(moved_on.iter()) >= committee.validity_threshold() {
                    Next::Renew
                } else {
                    Next::Wait
                }
            }
            Err(ValidatorError::MissingObjects(keys)) => Next::Upload(keys),
            Err(
                e @ (ValidatorError::StaleInput(_)
                | ValidatorError::InvalidTx(_)
                | ValidatorError::InitialVersionMismatch { .. }),
            ) => Next::Fail(e.to_string()),
            Err(_) => Next::Wait,
        };
        match next {
            Next::Wait => {}
            Next::Certify(cert) => self.certified(cert, ctx),
            Next::Stall => {
                ctx.trace(TraceEvent::Stalled {
                    t: ctx.now,
                    client: self.id,
                    tx: digest,
                    epoch,
                });
                if let Some(op) = self.op.as_mut() {
                    op.stage = Stage::Stalled;
                }
                self.awaiting_epoch = Some(epoch);
                self.arm_timer(ctx);
            }
            Next::Renew => self.renew_op(ctx),
            Next::Upload(keys) => self.upload(from, keys, digest, ctx),
            Next::Fail(reason) => self.fail(reason, ctx),
        }
    }

    fn certified(&mut self, cert: TxCert, ctx: &mut Ctx) {
        let op = self.op.as_mut().expect("certifying an operation");
        ctx.trace(TraceEvent::CertFormed {
            t: ctx.now,
            client: self.id,
            tx: cert.digest(),
            epoch: cert.epoch(),
            keys: cert.tx.owned_keys().collect(),
            signers: cert.signers().map(|v| v.0).collect(),
        });
        op.stage = Stage::Certifying {
            cert: cert.clone(),
            accepted: BTreeSet::new(),
            effsigns: BTreeMap::new(),
            moved_on: BTreeSet::new(),
            is_final: false,
        };
        let crash_now = matches!(
            &self.behavior,
            Some(ClientBehavior::Crasher { after_ops, .. }) if op.n == *after_ops
        );
        let targets: Vec<ValidatorId> = match (&self.behavior, crash_now) {
            (Some(ClientBehavior::Crasher { deliver_to, .. }), true) => {
                deliver_to.iter().map(|v| ValidatorId(*v)).collect()
            }
            _ => ctx.committee(cert.epoch()).ids().collect(),
        };
        for v in targets {
            self.send(ctx, v, Msg::Cert(cert.clone()));
        }
        if crash_now {
            self.crashed = true;
            ctx.trace(TraceEvent::ClientCrash {
                t: ctx.now,
                client: self.id,
            });
            return;
        }
        self.arm_timer(ctx);
    }

    fn on_cert_reply(
        &mut self,
        from: ValidatorId,
        result: Result<CertResponse, ValidatorError>,
        ctx: &mut Ctx,
    ) {
        match result {
            Ok(CertResponse::Executed(sign)) => {
                self.accept(from, ctx);
                self.on_effsign(from, sign, ctx);
            }
            Ok(CertResponse::Forwarded) | Err(ValidatorError::NotScheduled(_)) => {
                self.accept(from, ctx)
            }
            Err(ValidatorError::MissingObjects(keys)) => {
                let digest = self.op.as_ref().expect("checked by caller").tx.digest();
                self.upload(from, keys, digest, ctx);
            }
            Err(ValidatorError::WrongEpoch { current, got }) if current > got => {
                let op = self.op.as_mut().expect("checked by caller");
                let committee = ctx.committee(op.tx.epoch());
                let Stage::Certifying { moved_on, .. } = &mut op.stage else {
                    return;
                };
                moved_on.insert(from);
                // A validator in a later epoch that has not executed the
                // certificate proves it was not checkpointed in its epoch.
                if committee.stake_of(moved_on.iter()) >= committee.validity_threshold() {
                    self.renew_op(ctx);
                }
            }
            Err(_) => {}
        }
    }

    fn accept(&mut self, from: ValidatorId, ctx: &mut Ctx) {
        let op = self.op.as_mut().expect("checked by caller");
        let committee = ctx.committee(op.tx.epoch());
        let Stage::Certifying {
            accepted, is_final, ..
        } = &mut op.stage
        else {
            return;
        };
        if !committee.contains(&from) {
            return;
        }
        accepted.insert(from);
        if !*is_final && committee.reaches_quorum(accepted.iter()) {
            *is_final = true;
            ctx.trace(TraceEvent::Final {
                t: ctx.now,
                client: self.id,
                op: op.n,
                tx: op.tx.digest(),
                epoch: op.tx.epoch(),
            });
        }
    }

    fn on_effsign(&mut self, from: ValidatorId, sign: EffSign, ctx: &mut Ctx) {
        let op = self.op.as_mut().expect("checked by caller");
        let Stage::Certifying { effsigns, .. } = &mut op.stage else {
            return;
        };
        let Some(committee) = ctx.committees.get(&sign.epoch) else {
            return;
        };
        if sign.validator != from || !committee.contains(&from) || !sign.verify(ctx.verifier) {
            return;
        }
        let key = (sign.epoch, sign.effects.digest());
        effsigns.insert(from, sign);
        let matching: Vec<EffSign> = effsigns
            .values()
            .filter(|s| (s.epoch, s.effects.digest()) == key)
            .cloned()
            .collect();
        if !committee.reaches_quorum(matching.iter().map(|s| &s.validator)) {
            return;
        }
        let effects = matching[0].effects.clone();
        let eff_cert = aggregate_eff_cert(effects, &matching, committee, ctx.verifier)
            .expect("verified quorum aggregates");
        self.settled(eff_cert, ctx);
    }

    fn settled(&mut self, eff_cert: EffCert, ctx: &mut Ctx) {
        let op = self.op.take().expect("settling an operation");
        let Stage::Certifying { cert, .. } = op.stage else {
            unreachable!("settlement follows certification");
        };
        let effects = &eff_cert.effects;
        ctx.trace(TraceEvent::Settled {
            t: ctx.now,
            client: self.id,
            op: op.n,
            tx: cert.digest(),
            epoch: eff_cert.epoch,
            effects: effects.digest(),
            success: effects.status.is_success(),
            gas_used: effects.gas_used,
        });
        for r in effects.written() {
            if r.id == self.gas.id {
                self.gas = *r;
            }
            for o in self.owned.iter_mut().filter(|o| o.id == r.id) {
                *o = *r;
            }
            self.history.insert(r.key(), cert.clone());
        }
        self.blocked.retain(|_, d| *d != cert.digest());
        self.after_op(ctx);
    }

    fn after_op(&mut self, ctx: &mut Ctx) {
        if self.spec.think_time == 0 {
            self.next_op(ctx);
        } else {
            self.token += 1;
            ctx.out.push(ClientAction::Wake {
                at: ctx.now + self.spec.think_time,
                token: self.token,
            });
        }
    }

    fn fail(&mut self, reason: String, ctx: &mut Ctx) {
        let op = self.op.take().expect("failing an operation");
        ctx.trace(TraceEvent::OpFailed {
            t: ctx.now,
            client: self.id,
            op: op.n,
            tx: op.tx.digest(),
            reason,
        });
        self.after_op(ctx);
    }

    fn renew_op(&mut self, ctx: &mut Ctx) {
        let op = self.op.take().expect("renewing an operation");
        let epoch = ctx.current_epoch();
        if epoch <= op.tx.epoch() {
            self.op = Some(op);
            return;
        }
        let tx = renew(&op.tx, &self.key, epoch);
        ctx.trace(TraceEvent::Renewed {
            t: ctx.now,
            client: self.id,
            op: op.n,
            old: op.tx.digest(),
            new: tx.digest(),
            epoch,
        });
        self.submit(
            Op {
                tx,
                stage: signing(),
                ..op
            },
            ctx,
        );
    }

    fn after_epoch_change(&mut self, ctx: &mut Ctx) {
        if self.op.is_some() {
            self.renew_op(ctx);
            return;
        }
        // The equivocator's fresh transaction on the object it left locked.
        let n = self.ops_started;
        self.ops_started += 1;
        let tx = self.build(OpKind::Renewal, n, ctx.current_epoch());
        self.submit(
            Op {
                n,
                kind: OpKind::Renewal,
                tx,
                stage: signing(),
            },
            ctx,
        );
    }

    /// Relayer step: hands `to` the certificates that created the objects
    /// it is missing, then retries `waiting` once they are accepted.
    fn upload(&mut self, to: ValidatorId, keys: Vec<ObjKey>, waiting: TxDigest, ctx: &mut Ctx) {
        for key in keys {
            if let Some(creator) = self.history.get(&key).cloned() {
                self.blocked.insert((to, creator.digest()), waiting);
                self.send(ctx, to, Msg::Cert(creator));
            }
        }
    }

    fn on_sync_reply(
        &mut self,
        from: ValidatorId,
        waiting: TxDigest,
        result: Result<CertResponse, ValidatorError>,
        ctx: &mut Ctx,
    ) {
        match result {
            Ok(_) => {
                let Some(op) = &self.op else { return };
                if op.tx.digest() != waiting {
                    return;
                }
                let msg = match &op.stage {
                    Stage::Signing { .. } => Msg::Tx(op.tx.clone()),
                    Stage::Certifying { cert, .. } => Msg::Cert(cert.clone()),
                    Stage::Stalled => return,
                };
                self.send(ctx, from, msg);
            }
            Err(ValidatorError::MissingObjects(keys)) => self.upload(from, keys, waiting, ctx),
            Err(_) => {}
        }
    }

    fn equivocate(&mut self, orders: Vec<Vec<u8>>, ctx: &mut Ctx) {
        let epoch = ctx.current_epoch();
        let members: Vec<ValidatorId> = ctx.committee(epoch).ids().collect();
        let orders = if orders.is_empty() {
            let half = members.len() / 2;
            (0..members.len())
                .map(|i| vec![if i < half { 1 } else { 2 }])
                .collect()
        } else {
            orders
        };
        let conflicting = |marker: u64| {
            TxData {
                epoch,
                sender: self.key.address(),
                kind: TxKind::Command(Command::MutateOwned {
                    obj: self.owned[0].id,
                    new_contents: Value::counter(marker),
                }),
                owned_inputs: vec![self.owned[0], self.gas],
                readonly_inputs: vec![],
                shared_inputs: vec![],
                gas_ref: self.gas,
                gas_budget: GAS_BUDGET,
                tip: 0,
            }
            .sign(&self.key)
        };
        let txs = [conflicting(1_000_001), conflicting(1_000_002)];
        for (i, tx) in txs.iter().enumerate() {
            ctx.trace(TraceEvent::TxSubmitted {
                t: ctx.now,
                client: self.id,
                op: usize::MAX - i,
                tx: tx.digest(),
                epoch,
                op_kind: "equivocation".into(),
                keys: tx.owned_keys().collect(),
                shared: vec![],
                commands: 1,
            });
        }
        self.equivocation = Some(Equivocation {
            txs,
            queues: members
                .iter()
                .copied()
                .zip(orders.into_iter().map(VecDeque::from))
                .collect(),
            outstanding: BTreeMap::new(),
            signs: [BTreeMap::new(), BTreeMap::new()],
            certified: [false, false],
        });
        for v in members {
            self.equivocation_next(v, ctx);
        }
        self.equivocation_maybe_done(ctx);
    }

    fn equivocation_next(&mut self, v: ValidatorId, ctx: &mut Ctx) {
        let eq = self.equivocation.as_mut().expect("equivocating");
        if let Some(i) = eq.queues.get_mut(&v).and_then(VecDeque::pop_front) {
            eq.outstanding.insert(v, i);
            let tx = eq.txs[i as usize - 1].clone();
            self.send(ctx, v, Msg::Tx(tx));
        }
    }

    fn on_equivocation_reply(
        &mut self,
        from: ValidatorId,
        digest: TxDigest,
        result: Result<TxSign, ValidatorError>,
        ctx: &mut Ctx,
    ) {
        let eq = self.equivocation.as_mut().expect("equivocating");
        let Some(i) = eq.outstanding.get(&from).copied() else {
            return;
        };
        let idx = i as usize - 1;
        if eq.txs[idx].digest() != digest {
            return;
        }
        match result {
            Ok(sign) if sign.tx_digest == digest && sign.verify(ctx.verifier) => {
                eq.signs[idx].insert(from, sign);
            }
            Ok(_) | Err(ValidatorError::ConflictingLock { .. }) => {}
            Err(_) => return,
        }
        eq.outstanding.remove(&from);
        let committee = ctx.committee(eq.txs[idx].epoch()).clone();
        if !eq.certified[idx] && committee.reaches_quorum(eq.signs[idx].keys()) {
            eq.certified[idx] = true;
            let signs: Vec<TxSign> = eq.signs[idx].values().cloned().collect();
            let cert = aggregate_tx_cert(eq.txs[idx].clone(), &signs, &committee, ctx.verifier)
                .expect("verified quorum aggregates");
            ctx.trace(TraceEvent::CertFormed {
                t: ctx.now,
                client: self.id,
                tx: digest,
                epoch: cert.epoch(),
                keys: cert.tx.owned_keys().collect(),
                signers: cert.signers().map(|v| v.0).collect(),
            });
        }
        self.equivocation_next(from, ctx);
        self.equivocation_maybe_done(ctx);
    }

    fn equivocation_maybe_done(&mut self, ctx: &mut Ctx) {
        let eq = self.equivocation.as_ref().expect("equivocating");
        if !eq.outstanding.is_empty() {
            self.arm_timer(ctx);
            return;
        }
        let epoch = eq.txs[0].epoch();
        if !eq.certified.iter().any(|c| *c) {
            ctx.trace(TraceEvent::Stalled {
                t: ctx.now,
                client: self.id,
                tx: eq.txs[0].digest(),
                epoch,
            });
        }
        self.equivocation = None;
        if matches!(self.behavior, Some(ClientBehavior::Equivocator { renew: true, .. })) {
            self.awaiting_epoch = Some(epoch);
            self.arm_timer(ctx);
        } else {
            self.done = true;
        }
    }
}

enum Next {
    Wait,
    Certify(TxCert),
    Stall,
    Renew,
    Upload(Vec<ObjKey>),
    Fail(String),
}

fn signing() -> Stage {
    Stage::Signing {
        signs: BTreeMap::new(),
        conflicts: BTreeSet::new(),
        moved_on: BTreeSet::new(),
    }
}
