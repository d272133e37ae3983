//! The discrete-event run loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use objledger_core::consensus::Sequencer;
use objledger_core::crypto::{MacKeyring, UserKeypair, ValidatorId};
use objledger_core::object::genesis_object;
use objledger_core::reconfig::ReconfigParams;
use objledger_core::store::{Failpoint, Store};
use objledger_core::validator::ValidatorConfig;
use objledger_core::{Committee, EpochId, Obj, ObjID, Ownership, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::client::{Client, ClientAction, Ctx, Holdings};
use crate::net::{EventQueue, Links};
use crate::node::{Node, NodeAction};
use crate::scenario::{Scenario, ScenarioError};
use crate::trace::{FinalState, Footer, Header, Trace, TraceEvent};
use crate::wire::{Actor, Msg};

/// Seed of the validator keyring. Fixed so traces of one scenario differ
/// only through the scenario seed.
const KEYRING_SEED: u64 = 7;
const COIN_BALANCE: u64 = 1_000_000_000;

enum Event {
    Deliver { from: Actor, to: Actor, msg: Msg },
    Tick,
    Start(usize),
    Wake { client: usize, token: u64 },
    Crash(u16),
    Recover(u16),
}

/// Runs `scenario` to quiescence or its deadline.
pub fn run(scenario: &Scenario) -> Result<Trace, ScenarioError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario);
    sim.run();
    Ok(sim.finish())
}

/// The committee a scenario starts with.
pub fn genesis_committee(scenario: &Scenario) -> Committee {
    let n = scenario.committee.size;
    match &scenario.committee.stakes {
        Some(stakes) => Committee::new(0, (0..n).map(|i| (ValidatorId(i), stakes[i as usize]))),
        None => Committee::equal(0, n),
    }
}

pub fn client_key(client: usize) -> UserKeypair {
    UserKeypair::from_seed(1_000 + client as u64)
}

/// Genesis objects: for each client a gas coin and its owned counters, then
/// the shared counters.
pub fn genesis(scenario: &Scenario) -> (Vec<Obj>, Vec<Holdings>, Vec<ObjID>) {
    let w = &scenario.workload;
    let owned_per_client = if w.ptb_weight > 0 { w.ptb_size.max(1) } else { 1 };
    let mut objects = Vec::new();
    let mut index = 0u64;
    let mut next = |ownership: Ownership, contents: Value, objects: &mut Vec<Obj>| {
        let o = genesis_object(index, ownership, contents);
        index += 1;
        objects.push(o.clone());
        o
    };
    let mut owned_sets = Vec::new();
    for c in 0..w.clients {
        let owner = Ownership::OwnedByAddress(client_key(c).address());
        let gas = next(owner.clone(), Value::coin(COIN_BALANCE), &mut objects);
        let owned = (0..owned_per_client)
            .map(|_| next(owner.clone(), Value::counter(0), &mut objects).reference())
            .collect();
        owned_sets.push((gas.reference(), owned));
    }
    let shared: Vec<Obj> = (0..w.shared_objects)
        .map(|_| next(Ownership::SharedMutable, Value::counter(0), &mut objects))
        .collect();
    let shared_inputs: Vec<_> = shared.iter().map(|o| (o.id, o.initial_version)).collect();
    let holdings = owned_sets
        .into_iter()
        .map(|(gas, owned)| Holdings {
            gas,
            owned,
            shared: shared_inputs.clone(),
        })
        .collect();
    (objects, holdings, shared.iter().map(|o| o.id).collect())
}

struct Sim<'s> {
    sc: &'s Scenario,
    now: u64,
    queue: EventQueue<Event>,
    links: Links,
    keyring: Arc<MacKeyring>,
    nodes: Vec<Node>,
    sequencer: Sequencer,
    committees: BTreeMap<EpochId, Committee>,
    clients: Vec<Client>,
    events: Vec<TraceEvent>,
    shared_ids: Vec<ObjID>,
    /// Validators armed to crash inside a write, with their downtime.
    armed: BTreeMap<u16, Option<u64>>,
    /// Scheduled recoveries not yet performed.
    recoveries_due: usize,
    complete: bool,
}

impl<'s> Sim<'s> {
    fn new(sc: &'s Scenario) -> Self {
        let keyring = Arc::new(MacKeyring::new(KEYRING_SEED));
        let committee = genesis_committee(sc);
        let params = ReconfigParams {
            checkpoints_before_change: sc.epochs.checkpoints_before_change,
            min_stake: sc.epochs.min_stake,
        };
        let (objects, holdings, shared_ids) = genesis(sc);
        let join: BTreeSet<EpochId> = (1..=sc.epochs.changes).collect();
        let nodes = committee
            .members()
            .iter()
            .map(|(id, stake)| {
                let config = ValidatorConfig {
                    stake: *stake,
                    join_epochs: join.clone(),
                    ..ValidatorConfig::default()
                };
                Node::new(
                    *id,
                    keyring.clone(),
                    config,
                    Store::genesis(committee.clone(), &objects, params),
                    sc.byzantine(id.0),
                )
            })
            .collect();
        let clients = holdings
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                let rng = ChaCha8Rng::seed_from_u64(
                    sc.seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(i as u64 + 1),
                );
                Client::new(
                    i,
                    client_key(i),
                    rng,
                    sc.workload.clone(),
                    sc.client_behavior(i).cloned(),
                    h,
                )
            })
            .collect();
        let mut sim = Sim {
            sc,
            now: 0,
            queue: EventQueue::default(),
            links: Links::new(sc.network.clone(), ChaCha8Rng::seed_from_u64(sc.seed)),
            sequencer: Sequencer::new(committee.clone(), params, Box::new((*keyring).clone())),
            keyring,
            nodes,
            committees: [(0, committee)].into(),
            clients,
            events: Vec::new(),
            shared_ids,
            armed: BTreeMap::new(),
            recoveries_due: 0,
            complete: false,
        };
        sim.queue.push(sc.consensus.commit_interval, Event::Tick);
        for c in 0..sim.clients.len() {
            sim.queue.push(sc.workload.start_at, Event::Start(c));
        }
        for f in &sc.faults.validators {
            if let Some(at) = f.crash_at {
                sim.queue.push(at, Event::Crash(f.validator));
                if let (Some(r), None) = (f.recover_at, f.mid_write) {
                    sim.recoveries_due += 1;
                    sim.queue.push(r, Event::Recover(f.validator));
                }
            }
        }
        sim
    }

    fn run(&mut self) {
        while let Some(t) = self.queue.peek_time() {
            if t > self.sc.duration {
                break;
            }
            let (t, event) = self.queue.pop().expect("peeked");
            self.now = t;
            self.dispatch(event);
            if self.complete {
                break;
            }
        }
        // Without clients there is nothing to wait for: the run idles to its
        // deadline, and is complete once the scheduled epochs are done.
        if self.clients.is_empty() {
            self.complete =
                self.recoveries_due == 0 && self.sequencer.epoch() == self.sc.epochs.changes;
        }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver { from, to, msg } => self.deliver(from, to, msg),
            Event::Tick => self.tick(),
            Event::Start(c) => self.client(c, |client, ctx| client.start(ctx)),
            Event::Wake { client, token } => {
                self.client(client, |client, ctx| client.on_wake(token, ctx))
            }
            Event::Crash(v) => self.crash(v),
            Event::Recover(v) => self.recover(v),
        }
    }

    fn send(&mut self, from: Actor, to: Actor, msg: Msg) {
        let transit = self.links.transit();
        let deliver = self.now + transit.delay;
        self.events.push(TraceEvent::Msg {
            t: self.now,
            deliver,
            from: from.to_string(),
            to: to.to_string(),
            msg: msg.label(),
            tx: msg.tx(),
            drops: transit.drops,
        });
        self.queue.push(deliver, Event::Deliver { from, to, msg });
    }

    fn deliver(&mut self, from: Actor, to: Actor, msg: Msg) {
        match to {
            Actor::Validator(v) => {
                let mut out = Vec::new();
                let node = &mut self.nodes[v as usize];
                match (from, msg) {
                    (Actor::Client(c), Msg::Tx(tx)) => node.on_tx(c, &tx, self.now, &mut out),
                    (Actor::Client(c), Msg::Cert(cert)) => {
                        node.on_cert(c, &cert, self.now, &mut out)
                    }
                    (Actor::Sequencer, Msg::Commit(commit)) => {
                        node.on_commit(commit, self.now, &mut out)
                    }
                    _ => {}
                }
                self.apply_node(v, out);
            }
            Actor::Sequencer => {
                if let Msg::Submit(item) = msg {
                    let _ = self.sequencer.submit(item);
                }
            }
            Actor::Client(c) => {
                if let Actor::Validator(v) = from {
                    self.client(c, |client, ctx| client.on_message(ValidatorId(v), msg, ctx));
                }
            }
        }
    }

    fn client(&mut self, c: usize, f: impl FnOnce(&mut Client, &mut Ctx)) {
        let mut ctx = Ctx {
            now: self.now,
            committees: &self.committees,
            verifier: &*self.keyring,
            out: Vec::new(),
        };
        f(&mut self.clients[c], &mut ctx);
        for action in ctx.out {
            match action {
                ClientAction::Send(v, msg) => {
                    self.send(Actor::Client(c), Actor::Validator(v.0), msg)
                }
                ClientAction::Wake { at, token } => {
                    self.queue.push(at, Event::Wake { client: c, token })
                }
                ClientAction::Trace(e) => self.events.push(e),
            }
        }
    }

    fn apply_node(&mut self, v: u16, actions: Vec<NodeAction>) {
        for action in actions {
            match action {
                NodeAction::ToClient(c, msg) => {
                    self.send(Actor::Validator(v), Actor::Client(c), msg)
                }
                NodeAction::ToSequencer(item) => {
                    self.send(Actor::Validator(v), Actor::Sequencer, Msg::Submit(item))
                }
                NodeAction::Trace(e) => {
                    if matches!(e, TraceEvent::Crash { .. }) {
                        if let Some(Some(downtime)) = self.armed.remove(&v) {
                            self.recoveries_due += 1;
                            self.queue.push(self.now + downtime, Event::Recover(v));
                        }
                    }
                    self.events.push(e);
                }
            }
        }
    }

    fn tick(&mut self) {
        if self.quiescent() {
            self.complete = true;
            return;
        }
        let commit = self.sequencer.cut();
        let epoch = self.sequencer.epoch();
        self.committees
            .entry(epoch)
            .or_insert_with(|| self.sequencer.committee().clone());
        self.events.push(TraceEvent::Commit {
            t: self.now,
            epoch: commit.epoch,
            seq: commit.seq,
            certs: commit.certs().map(|c| c.digest()).collect(),
            system: commit
                .items
                .iter()
                .filter_map(|i| match i {
                    objledger_core::consensus::ConsensusItem::System { call, .. } => {
                        Some(format!("{call:?}"))
                    }
                    _ => None,
                })
                .collect(),
        });
        for v in 0..self.nodes.len() as u16 {
            self.send(Actor::Sequencer, Actor::Validator(v), Msg::Commit(commit.clone()));
        }
        let interval = self.sc.consensus.commit_interval;
        for v in 0..self.nodes.len() {
            let mut out = Vec::new();
            self.nodes[v].resubmit(self.now, 3 * interval, &mut out);
            self.apply_node(v as u16, out);
        }
        self.queue.push(self.now + interval, Event::Tick);
    }

    fn quiescent(&self) -> bool {
        let target = self.sc.epochs.changes;
        let position = self.sequencer.next_position();
        !self.clients.is_empty()
            && self.recoveries_due == 0
            && self.sequencer.epoch() == target
            && self.clients.iter().all(Client::is_done)
            && self
                .nodes
                .iter()
                .filter(|n| n.is_alive())
                .all(|n| n.is_idle() && n.cursor() == Some(position) && n.epoch() == Some(target))
    }

    fn crash(&mut self, v: u16) {
        let fault = self
            .sc
            .faults
            .validators
            .iter()
            .find(|f| f.validator == v && f.crash_at == Some(self.now))
            .cloned()
            .unwrap_or_default();
        let mut out = Vec::new();
        match fault.mid_write {
            Some(k) => {
                let downtime = fault.recover_at.map(|r| r - self.now);
                self.armed.insert(v, downtime);
                self.nodes[v as usize].arm_failpoint(Failpoint::AfterOps(k));
            }
            None => self.nodes[v as usize].crash(self.now, "scheduled", &mut out),
        }
        self.apply_node(v, out);
    }

    fn recover(&mut self, v: u16) {
        self.recoveries_due = self.recoveries_due.saturating_sub(1);
        let mut out = Vec::new();
        let node = &mut self.nodes[v as usize];
        node.recover(self.now, &mut out);
        let catch_up = node
            .cursor()
            .map(|pos| self.sequencer.from(pos).to_vec())
            .unwrap_or_default();
        self.apply_node(v, out);
        for commit in catch_up {
            self.send(Actor::Sequencer, Actor::Validator(v), Msg::Commit(commit));
        }
    }

    fn finish(self) -> Trace {
        let sc = self.sc;
        let finals = self
            .nodes
            .iter()
            .filter(|n| n.is_alive())
            .map(|n| FinalState {
                validator: n.id.0,
                epoch: n.epoch().expect("alive"),
                state: n.state_digest().expect("alive"),
                counters: self
                    .shared_ids
                    .iter()
                    .filter_map(|id| n.counter(id).map(|c| (*id, c)))
                    .collect(),
            })
            .collect();
        let mut crash_faults: Vec<u16> = sc
            .faults
            .validators
            .iter()
            .filter(|f| f.crash_at.is_some())
            .map(|f| f.validator)
            .collect();
        crash_faults.dedup();
        Trace {
            header: Header {
                scenario: sc.name.clone(),
                seed: sc.seed,
                stakes: genesis_committee(sc).members().values().copied().collect(),
                byzantine: (0..sc.committee.size)
                    .filter(|v| sc.byzantine(*v).is_some())
                    .collect(),
                crash_faults,
                faulty_clients: sc.faults.clients.iter().map(|f| f.client).collect(),
                commit_interval: sc.consensus.commit_interval,
                checkpoints_before_change: sc.epochs.checkpoints_before_change,
                epoch_changes: sc.epochs.changes,
            },
            footer: Footer {
                t: self.now,
                events: self.events.len() as u64,
                complete: self.complete,
                finals,
            },
            events: self.events,
        }
    }
}
