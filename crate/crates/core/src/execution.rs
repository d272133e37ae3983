//! The execution engine: a fixed built-in command set with gas metering,
//! wrapping, parent-child authorization and tombstone deletion.
//!
//! [`tx_valid`] is the static check run before signing. [`exec`] is a pure
//! function of the transaction and its loaded inputs; it never fails, it
//! aborts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::digest::Encode;
use crate::error::InvalidTx;
use crate::messages::{Effects, Event, ExecutionStatus, Tx};
use crate::object::{
    derive_object_id, lamport_version, Address, LatestObjects, ObjID, ObjKey, Obj, Ownership,
    TxDigest, Value, Version, COUNTER_FIELD, MAX_VALUE_DEPTH, WRAPPED_FIELD,
};

pub const ABORT_GAS: u64 = 1;
pub const ABORT_TYPE: u64 = 2;
pub const ABORT_AUTH: u64 = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    TransferOwned { obj: ObjID, recipient: Address },
    TransferToObject { child: ObjID, parent: ObjID },
    CreateOwned { contents: Value, recipient: Address },
    CreateShared { contents: Value },
    MutateOwned { obj: ObjID, new_contents: Value },
    Wrap { inner: ObjID, outer: ObjID },
    Unwrap { outer: ObjID },
    DeleteObj { obj: ObjID },
    IncrementSharedCounter { obj: ObjID },
    ReadShared { obj: ObjID },
    AbortWith { code: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    TransferOwned,
    TransferToObject,
    CreateOwned,
    CreateShared,
    MutateOwned,
    Wrap,
    Unwrap,
    DeleteObj,
    IncrementSharedCounter,
    ReadShared,
    AbortWith,
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::TransferOwned { .. } => CommandKind::TransferOwned,
            Command::TransferToObject { .. } => CommandKind::TransferToObject,
            Command::CreateOwned { .. } => CommandKind::CreateOwned,
            Command::CreateShared { .. } => CommandKind::CreateShared,
            Command::MutateOwned { .. } => CommandKind::MutateOwned,
            Command::Wrap { .. } => CommandKind::Wrap,
            Command::Unwrap { .. } => CommandKind::Unwrap,
            Command::DeleteObj { .. } => CommandKind::DeleteObj,
            Command::IncrementSharedCounter { .. } => CommandKind::IncrementSharedCounter,
            Command::ReadShared { .. } => CommandKind::ReadShared,
            Command::AbortWith { .. } => CommandKind::AbortWith,
        }
    }

    /// Existing objects the command names.
    pub fn objects(&self) -> Vec<ObjID> {
        match self {
            Command::TransferOwned { obj, .. }
            | Command::MutateOwned { obj, .. }
            | Command::DeleteObj { obj }
            | Command::IncrementSharedCounter { obj }
            | Command::ReadShared { obj } => vec![*obj],
            Command::TransferToObject { child, parent } => vec![*child, *parent],
            Command::Wrap { inner, outer } => vec![*inner, *outer],
            Command::Unwrap { outer } => vec![*outer],
            Command::CreateOwned { .. } | Command::CreateShared { .. } | Command::AbortWith { .. } => {
                vec![]
            }
        }
    }

    fn contents(&self) -> Option<&Value> {
        match self {
            Command::CreateOwned { contents, .. } | Command::CreateShared { contents } => {
                Some(contents)
            }
            Command::MutateOwned { new_contents, .. } => Some(new_contents),
            _ => None,
        }
    }
}

impl Encode for Command {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.kind() as u8).encode(out);
        match self {
            Command::TransferOwned { obj, recipient } => {
                obj.encode(out);
                recipient.encode(out);
            }
            Command::TransferToObject { child, parent } => {
                child.encode(out);
                parent.encode(out);
            }
            Command::CreateOwned {
                contents,
                recipient,
            } => {
                contents.encode(out);
                recipient.encode(out);
            }
            Command::CreateShared { contents } => contents.encode(out),
            Command::MutateOwned { obj, new_contents } => {
                obj.encode(out);
                new_contents.encode(out);
            }
            Command::Wrap { inner, outer } => {
                inner.encode(out);
                outer.encode(out);
            }
            Command::Unwrap { outer } => outer.encode(out),
            Command::DeleteObj { obj }
            | Command::IncrementSharedCounter { obj }
            | Command::ReadShared { obj } => obj.encode(out),
            Command::AbortWith { code } => code.encode(out),
        }
    }
}

/// A single command or a programmable transaction block. Blocks hold plain
/// commands, so nesting is unrepresentable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxKind {
    Command(Command),
    Ptb(Vec<Command>),
}

impl TxKind {
    pub fn commands(&self) -> &[Command] {
        match self {
            TxKind::Command(c) => std::slice::from_ref(c),
            TxKind::Ptb(cs) => cs,
        }
    }

    /// True if some command other than `ReadShared` names `id`.
    pub fn mutates_shared(&self, id: &ObjID) -> bool {
        self.commands()
            .iter()
            .any(|c| !matches!(c, Command::ReadShared { .. }) && c.objects().contains(id))
    }
}

impl Encode for TxKind {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            TxKind::Command(c) => {
                out.push(0);
                c.encode(out);
            }
            TxKind::Ptb(cs) => {
                out.push(1);
                cs.encode(out);
            }
        }
    }
}

/// Static fee schedule. A block costs the sum of its commands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub base_fee: u64,
    pub min_cost: u64,
    pub costs: BTreeMap<CommandKind, u64>,
}

impl Default for GasSchedule {
    fn default() -> Self {
        use CommandKind::*;
        GasSchedule {
            base_fee: 1,
            min_cost: 10,
            costs: [
                (TransferOwned, 10),
                (TransferToObject, 12),
                (CreateOwned, 15),
                (CreateShared, 20),
                (MutateOwned, 10),
                (Wrap, 15),
                (Unwrap, 15),
                (DeleteObj, 5),
                (IncrementSharedCounter, 10),
                (ReadShared, 5),
                (AbortWith, 5),
            ]
            .into(),
        }
    }
}

impl GasSchedule {
    pub fn cost(&self, command: &Command) -> u64 {
        self.costs
            .get(&command.kind())
            .copied()
            .unwrap_or(self.min_cost)
    }

    /// Smallest gas coin balance a transaction with this tip can pass
    /// validity with.
    pub fn min_balance(&self, tip: u64) -> Option<u64> {
        self.min_cost.checked_mul(self.base_fee)?.checked_add(tip)
    }
}

/// A shared input at the version the transaction was scheduled against.
/// `object` is `None` when the object has been deleted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedInput {
    pub id: ObjID,
    pub version: Version,
    pub object: Option<Obj>,
}

/// Input objects in the order the transaction declares them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InputObjects {
    pub owned: Vec<Obj>,
    pub readonly: Vec<Obj>,
    pub shared: Vec<SharedInput>,
}

/// Static validity: authorization, gas sufficiency and shape. Runs no
/// command.
pub fn tx_valid(tx: &Tx, inputs: &InputObjects, gas: &GasSchedule) -> Result<(), InvalidTx> {
    let d = &tx.data;
    if !tx.verify_user_signature() {
        return Err(InvalidTx::BadUserSignature);
    }
    let commands = d.kind.commands();
    if commands.is_empty() {
        return Err(InvalidTx::Malformed("empty command block".into()));
    }

    let mut seen = BTreeSet::new();
    for id in tx.input_ids() {
        if !seen.insert(id) {
            return Err(InvalidTx::DuplicateInput(id));
        }
    }
    if !d.owned_inputs.contains(&d.gas_ref) {
        return Err(InvalidTx::GasNotInInputs);
    }
    for r in &d.owned_inputs {
        if r.version.is_tombstone() {
            return Err(InvalidTx::TombstoneInput(r.id));
        }
    }

    if inputs.owned.len() != d.owned_inputs.len()
        || inputs.readonly.len() != d.readonly_inputs.len()
        || inputs.shared.len() != d.shared_inputs.len()
    {
        return Err(InvalidTx::Malformed("loaded inputs do not match declaration".into()));
    }
    for (r, o) in d.owned_inputs.iter().zip(&inputs.owned) {
        if o.reference() != *r || !o.ownership.is_owned() {
            return Err(InvalidTx::InputMismatch(r.id));
        }
    }
    for (id, o) in d.readonly_inputs.iter().zip(&inputs.readonly) {
        if o.id != *id || o.ownership != Ownership::SharedImmutable {
            return Err(InvalidTx::InputMismatch(*id));
        }
    }
    for ((id, initial), s) in d.shared_inputs.iter().zip(&inputs.shared) {
        match &s.object {
            None => return Err(InvalidTx::TombstoneInput(*id)),
            Some(o) => {
                if o.id != *id || !o.ownership.is_shared_mutable() || o.initial_version != *initial
                {
                    return Err(InvalidTx::InputMismatch(*id));
                }
            }
        }
    }

    let owned: BTreeMap<ObjID, &Obj> = inputs.owned.iter().map(|o| (o.id, o)).collect();
    let shared: BTreeSet<ObjID> = d.shared_inputs.iter().map(|(id, _)| *id).collect();
    let readonly: BTreeSet<ObjID> = d.readonly_inputs.iter().copied().collect();
    for o in &inputs.owned {
        authorize(o, &d.sender, &owned, &shared)?;
    }

    let gas_obj = owned[&d.gas_ref.id];
    let balance = gas_obj
        .contents
        .coin_balance()
        .ok_or(InvalidTx::GasNotCoin)?;
    if gas_obj.owner_address() != Some(d.sender) {
        return Err(InvalidTx::Unauthorized(gas_obj.id));
    }
    let need = gas.min_balance(d.tip).ok_or(InvalidTx::InsufficientGas)?;
    if balance < need || d.gas_budget < gas.min_cost {
        return Err(InvalidTx::InsufficientGas);
    }

    for c in commands {
        let named = c.objects();
        if named.contains(&d.gas_ref.id) {
            return Err(InvalidTx::Malformed("gas object used by a command".into()));
        }
        match c {
            Command::IncrementSharedCounter { obj } if !shared.contains(obj) => {
                return Err(InvalidTx::Malformed("counter is not a shared input".into()));
            }
            Command::ReadShared { obj } if !shared.contains(obj) && !readonly.contains(obj) => {
                return Err(InvalidTx::Malformed("read target is not a declared input".into()));
            }
            Command::ReadShared { .. } => {}
            _ => {
                if let Some(id) = named.iter().find(|id| readonly.contains(id)) {
                    return Err(InvalidTx::Malformed(format!(
                        "read-only input {id:?} used mutably"
                    )));
                }
            }
        }
        if let Some(v) = c.contents() {
            if v.contains_wrapped() || v.depth() > MAX_VALUE_DEPTH {
                return Err(InvalidTx::Malformed("invalid object contents".into()));
            }
        }
    }
    Ok(())
}

/// Owned inputs must trace, through other inputs, to the sender or to a
/// shared input.
fn authorize(
    obj: &Obj,
    sender: &Address,
    owned: &BTreeMap<ObjID, &Obj>,
    shared: &BTreeSet<ObjID>,
) -> Result<(), InvalidTx> {
    let mut current = obj;
    for _ in 0..=owned.len() {
        match &current.ownership {
            Ownership::OwnedByAddress(a) if a == sender => return Ok(()),
            Ownership::OwnedByObject(p) if shared.contains(p) => return Ok(()),
            Ownership::OwnedByObject(p) => match owned.get(p) {
                Some(parent) => current = parent,
                None => return Err(InvalidTx::Unauthorized(obj.id)),
            },
            _ => return Err(InvalidTx::Unauthorized(obj.id)),
        }
    }
    Err(InvalidTx::Malformed("ownership cycle among inputs".into()))
}

/// Result of [`exec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecOutput {
    pub effects: Effects,
    /// New versions of every created, mutated and unwrapped object.
    pub written: Vec<Obj>,
    pub deleted: Vec<ObjID>,
    pub wrapped: Vec<ObjID>,
}

impl ExecOutput {
    pub fn is_success(&self) -> bool {
        self.effects.status.is_success()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Input,
    Loaded,
    Created,
    Unwrapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Gone {
    Deleted,
    Wrapped,
}

struct Session<'a> {
    digest: TxDigest,
    sender: Address,
    v_new: Version,
    live: BTreeMap<ObjID, Obj>,
    origin: BTreeMap<ObjID, Origin>,
    gone: BTreeMap<ObjID, Gone>,
    frozen: BTreeSet<ObjID>,
    /// Dynamically loaded objects with the transaction that last wrote them.
    loaded: Vec<(ObjID, TxDigest)>,
    created: u64,
    events: Vec<Event>,
    children: &'a dyn LatestObjects,
}

type Step = Result<(), u64>;

impl Session<'_> {
    fn get_mut(&mut self, id: &ObjID) -> Result<&mut Obj, u64> {
        if self.frozen.contains(id) {
            return Err(ABORT_TYPE);
        }
        if !self.live.contains_key(id) {
            if self.gone.contains_key(id) {
                return Err(ABORT_TYPE);
            }
            self.load_child(id)?;
        }
        Ok(self.live.get_mut(id).expect("loaded above"))
    }

    /// Loads `id` and every missing link up to an object already in the
    /// session.
    fn load_child(&mut self, id: &ObjID) -> Step {
        let mut chain = Vec::new();
        let mut current = *id;
        while !self.live.contains_key(&current) {
            if self.gone.contains_key(&current) || chain.len() > MAX_VALUE_DEPTH {
                return Err(ABORT_AUTH);
            }
            let obj = self.children.latest_object(&current).ok_or(ABORT_AUTH)?;
            match obj.ownership {
                Ownership::OwnedByObject(parent) => {
                    current = parent;
                    chain.push(obj);
                }
                _ => return Err(ABORT_AUTH),
            }
        }
        if self.frozen.contains(&current) {
            return Err(ABORT_AUTH);
        }
        for obj in chain {
            debug_assert!(obj.version < self.v_new);
            self.origin.insert(obj.id, Origin::Loaded);
            self.loaded.push((obj.id, obj.parent_tx));
            self.live.insert(obj.id, obj);
        }
        Ok(())
    }

    /// True if `ancestor` appears on `id`'s parent chain within the session.
    fn has_ancestor(&self, id: &ObjID, ancestor: &ObjID) -> bool {
        let mut current = *id;
        for _ in 0..=self.live.len() {
            if current == *ancestor {
                return true;
            }
            match self.live.get(&current).map(|o| &o.ownership) {
                Some(Ownership::OwnedByObject(p)) => current = *p,
                _ => return false,
            }
        }
        true
    }

    fn create(&mut self, contents: &Value, ownership: Ownership) {
        let id = derive_object_id(&self.digest, self.created);
        self.created += 1;
        self.origin.insert(id, Origin::Created);
        self.live.insert(
            id,
            Obj {
                id,
                version: self.v_new,
                initial_version: self.v_new,
                ownership,
                contents: contents.clone(),
                parent_tx: self.digest,
            },
        );
    }

    fn apply(&mut self, command: &Command) -> Step {
        match command {
            Command::TransferOwned { obj, recipient } => {
                let o = self.get_mut(obj)?;
                if !o.ownership.is_owned() {
                    return Err(ABORT_TYPE);
                }
                o.ownership = Ownership::OwnedByAddress(*recipient);
            }
            Command::TransferToObject { child, parent } => {
                if child == parent {
                    return Err(ABORT_TYPE);
                }
                self.get_mut(parent)?;
                if self.has_ancestor(parent, child) {
                    return Err(ABORT_TYPE);
                }
                let c = self.get_mut(child)?;
                if !c.ownership.is_owned() {
                    return Err(ABORT_TYPE);
                }
                c.ownership = Ownership::OwnedByObject(*parent);
            }
            Command::CreateOwned {
                contents,
                recipient,
            } => self.create(contents, Ownership::OwnedByAddress(*recipient)),
            Command::CreateShared { contents } => self.create(contents, Ownership::SharedMutable),
            Command::MutateOwned { obj, new_contents } => {
                let o = self.get_mut(obj)?;
                if !o.ownership.is_owned() || o.contents.field(WRAPPED_FIELD).is_some() {
                    return Err(ABORT_TYPE);
                }
                o.contents = new_contents.clone();
            }
            Command::Wrap { inner, outer } => {
                if inner == outer {
                    return Err(ABORT_TYPE);
                }
                self.get_mut(inner)?;
                let o = self.get_mut(outer)?;
                match &o.contents {
                    Value::Record(fields) if !fields.contains_key(WRAPPED_FIELD) => {}
                    _ => return Err(ABORT_TYPE),
                }
                if !self.live[inner].ownership.is_owned() || self.has_ancestor(outer, inner) {
                    return Err(ABORT_TYPE);
                }
                let inner_obj = self.live.remove(inner).expect("loaded above");
                self.gone.insert(*inner, Gone::Wrapped);
                if let Value::Record(fields) = &mut self.live.get_mut(outer).unwrap().contents {
                    fields.insert(WRAPPED_FIELD.into(), Value::Wrapped(Box::new(inner_obj)));
                }
            }
            Command::Unwrap { outer } => {
                let sender = self.sender;
                let o = self.get_mut(outer)?;
                let mut inner = match &mut o.contents {
                    Value::Record(fields) => match fields.remove(WRAPPED_FIELD) {
                        Some(Value::Wrapped(inner)) => *inner,
                        Some(other) => {
                            fields.insert(WRAPPED_FIELD.into(), other);
                            return Err(ABORT_TYPE);
                        }
                        None => return Err(ABORT_TYPE),
                    },
                    _ => return Err(ABORT_TYPE),
                };
                if self.live.contains_key(&inner.id) {
                    return Err(ABORT_TYPE);
                }
                inner.ownership = Ownership::OwnedByAddress(sender);
                self.gone.remove(&inner.id);
                self.origin.entry(inner.id).or_insert(Origin::Unwrapped);
                self.live.insert(inner.id, inner);
            }
            Command::DeleteObj { obj } => {
                let o = self.get_mut(obj)?;
                if o.ownership == Ownership::SharedImmutable {
                    return Err(ABORT_TYPE);
                }
                self.live.remove(obj);
                self.gone.insert(*obj, Gone::Deleted);
            }
            Command::IncrementSharedCounter { obj } => {
                let o = self.get_mut(obj)?;
                if !o.ownership.is_shared_mutable() {
                    return Err(ABORT_TYPE);
                }
                let next = o
                    .contents
                    .counter_value()
                    .and_then(|v| v.checked_add(1))
                    .ok_or(ABORT_TYPE)?;
                if let Value::Record(fields) = &mut o.contents {
                    fields.insert(COUNTER_FIELD.into(), Value::U64(next));
                }
                self.events.push(Event {
                    type_name: "counter".into(),
                    payload: next.to_le_bytes().to_vec(),
                });
            }
            Command::ReadShared { obj } => {
                if !self.live.contains_key(obj) {
                    return Err(if self.gone.contains_key(obj) {
                        ABORT_TYPE
                    } else {
                        ABORT_AUTH
                    });
                }
            }
            Command::AbortWith { code } => return Err(*code),
        }
        Ok(())
    }
}

/// Executes a certified transaction. Panics if `inputs` do not match the
/// transaction's declared references: that is a caller bug, not an abort.
pub fn exec(
    tx: &Tx,
    inputs: &InputObjects,
    children: &dyn LatestObjects,
    gas: &GasSchedule,
) -> ExecOutput {
    let d = &tx.data;
    let digest = tx.digest();
    assert_eq!(inputs.owned.len(), d.owned_inputs.len(), "owned inputs");
    for (r, o) in d.owned_inputs.iter().zip(&inputs.owned) {
        assert_eq!(o.reference(), *r, "owned input does not match its reference");
    }
    assert_eq!(inputs.shared.len(), d.shared_inputs.len(), "shared inputs");

    let versions: Vec<Version> = inputs
        .owned
        .iter()
        .map(|o| o.version)
        .chain(inputs.shared.iter().map(|s| s.version))
        .collect();
    let v_new = lamport_version(&versions);

    let gas_id = d.gas_ref.id;
    let balance = inputs
        .owned
        .iter()
        .find(|o| o.id == gas_id)
        .and_then(|o| o.contents.coin_balance())
        .expect("gas coin checked by tx_valid");
    assert!(gas.base_fee > 0, "base fee must be positive");
    let effective_budget = d
        .gas_budget
        .min(balance.saturating_sub(d.tip) / gas.base_fee);

    let mutable_shared: BTreeSet<ObjID> = d
        .shared_inputs
        .iter()
        .map(|(id, _)| *id)
        .filter(|id| tx.shared_input_is_mutable(id))
        .collect();
    let mut session = Session {
        digest,
        sender: d.sender,
        v_new,
        live: BTreeMap::new(),
        origin: BTreeMap::new(),
        gone: BTreeMap::new(),
        frozen: BTreeSet::new(),
        loaded: Vec::new(),
        created: 0,
        events: Vec::new(),
        children,
    };
    let mut dependencies = Vec::new();
    for o in inputs.owned.iter().chain(&inputs.readonly) {
        dependencies.push(o.parent_tx);
        session.origin.insert(o.id, Origin::Input);
        session.live.insert(o.id, o.clone());
    }
    for o in &inputs.readonly {
        session.frozen.insert(o.id);
    }
    // Commands never touch the gas coin; freezing it keeps it out of
    // dynamic loading too.
    session.frozen.insert(gas_id);
    let mut missing_shared = false;
    for s in &inputs.shared {
        match &s.object {
            Some(o) => {
                assert_eq!(o.key(), ObjKey::new(s.id, s.version), "shared input version");
                dependencies.push(o.parent_tx);
                session.origin.insert(o.id, Origin::Input);
                session.live.insert(o.id, o.clone());
                if !mutable_shared.contains(&o.id) {
                    session.frozen.insert(o.id);
                }
            }
            None => missing_shared = true,
        }
    }

    let mut running = 0u64;
    let mut outcome: Result<(), (u64, String)> = Ok(());
    if missing_shared {
        outcome = Err((ABORT_AUTH, "deleted shared input".into()));
    } else {
        for (i, command) in d.kind.commands().iter().enumerate() {
            running = running.saturating_add(gas.cost(command));
            if running > effective_budget {
                running = effective_budget;
                outcome = Err((ABORT_GAS, "gas".into()));
                break;
            }
            if let Err(code) = session.apply(command) {
                outcome = Err((code, format!("command {i}")));
                break;
            }
        }
    }
    let gas_used = running.max(gas.min_cost);
    let charge = gas_used * gas.base_fee + d.tip;
    dependencies.extend(session.loaded.iter().map(|(_, parent)| *parent));

    let bump = |mut o: Obj| {
        o.version = v_new;
        o.parent_tx = digest;
        if o.id == gas_id {
            if let Value::Record(fields) = &mut o.contents {
                fields.insert(
                    crate::object::COIN_FIELD.into(),
                    Value::U64(balance - charge),
                );
            }
        }
        o
    };

    let mut written = Vec::new();
    let mut effects = Effects {
        tx_digest: digest,
        status: ExecutionStatus::Success,
        gas_used,
        created: vec![],
        mutated: vec![],
        unwrapped: vec![],
        wrapped: vec![],
        deleted: vec![],
        events: vec![],
        dependencies,
    };
    let mut deleted = Vec::new();
    let mut wrapped = Vec::new();

    match outcome {
        Err((code, location)) => {
            effects.status = ExecutionStatus::Abort { code, location };
            let gas_obj = inputs.owned.iter().find(|o| o.id == gas_id).unwrap();
            let mut out = vec![bump(gas_obj.clone())];
            for s in &inputs.shared {
                if let (Some(o), true) = (&s.object, mutable_shared.contains(&s.id)) {
                    out.push(bump(o.clone()));
                }
            }
            out.sort_by_key(|o| o.id);
            effects.mutated = out.iter().map(Obj::reference).collect();
            written = out;
        }
        Ok(()) => {
            effects.events = std::mem::take(&mut session.events);
            for (id, origin) in &session.origin {
                if session.frozen.contains(id) && *id != gas_id {
                    continue;
                }
                if let Some(o) = session.live.get(id) {
                    let o = bump(o.clone());
                    let r = o.reference();
                    match origin {
                        Origin::Input | Origin::Loaded => effects.mutated.push(r),
                        Origin::Created => effects.created.push(r),
                        Origin::Unwrapped => effects.unwrapped.push(r),
                    }
                    written.push(o);
                } else {
                    match (session.gone[id], origin) {
                        (Gone::Deleted, Origin::Created) => {}
                        (Gone::Deleted, _) => {
                            effects.deleted.push(ObjKey::new(*id, v_new));
                            deleted.push(*id);
                        }
                        (Gone::Wrapped, Origin::Input | Origin::Loaded) => {
                            effects.wrapped.push(ObjKey::new(*id, v_new));
                            wrapped.push(*id);
                        }
                        (Gone::Wrapped, _) => {}
                    }
                }
            }
        }
    }

    ExecOutput {
        effects,
        written,
        deleted,
        wrapped,
    }
}
