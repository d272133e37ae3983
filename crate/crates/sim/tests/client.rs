use std::collections::BTreeMap;

use objledger_core::error::ValidatorError;
use objledger_core::execution::{Command, TxKind};
use objledger_core::messages::{aggregate_tx_cert, Tx, TxCert, TxData, TxSign};
use objledger_core::object::genesis_object;
use objledger_core::{Address, Digest, Obj, ObjKey, ObjRef, Ownership, Value, Version};
use objledger_sim::client::{make_ptb, renew, sync_validator, PtbError};
use objledger_sim::cluster::Cluster;
use objledger_sim::sim::client_key;

fn owned(index: u64, value: Value) -> Obj {
    genesis_object(
        index,
        Ownership::OwnedByAddress(client_key(0).address()),
        value,
    )
}

fn mutate(obj: ObjRef, gas: ObjRef, n: u64) -> Tx {
    TxData {
        epoch: 0,
        sender: client_key(0).address(),
        kind: TxKind::Command(Command::MutateOwned {
            obj: obj.id,
            new_contents: Value::counter(n),
        }),
        owned_inputs: vec![obj, gas],
        readonly_inputs: vec![],
        shared_inputs: vec![],
        gas_ref: gas,
        gas_budget: 1_000,
        tip: 0,
    }
    .sign(&client_key(0))
}

/// Certifies and executes `tx` on validators 0..3 only, leaving v3 behind.
fn run_without_v3(cluster: &Cluster, tx: &Tx) -> TxCert {
    let signs: Vec<TxSign> = cluster.validators[..3]
        .iter()
        .map(|v| v.handle_tx(tx).unwrap())
        .collect();
    let cert = aggregate_tx_cert(tx.clone(), &signs, &cluster.committee, &*cluster.ring).unwrap();
    for v in &cluster.validators[..3] {
        v.handle_cert(&cert).unwrap();
    }
    cert
}

/// A chain of `len` transactions on one counter, returning the certificates
/// and the local history keyed by the object versions each created.
fn chain(cluster: &Cluster, len: usize) -> (Vec<TxCert>, BTreeMap<ObjKey, TxCert>) {
    let (mut obj, mut gas) = (owned(0, Value::counter(0)), owned(1, Value::coin(10_000)));
    let mut certs = Vec::new();
    let mut local = BTreeMap::new();
    for n in 0..len {
        let cert = run_without_v3(cluster, &mutate(obj.reference(), gas.reference(), n as u64));
        obj = cluster.latest(0, &obj.id).unwrap();
        gas = cluster.latest(0, &gas.id).unwrap();
        local.insert(obj.key(), cert.clone());
        local.insert(gas.key(), cert.clone());
        certs.push(cert);
    }
    (certs, local)
}

fn genesis() -> Vec<Obj> {
    vec![owned(0, Value::counter(0)), owned(1, Value::coin(10_000))]
}

#[test]
fn sync_submits_missing_ancestor_first() {
    let cluster = Cluster::new(4, &genesis());
    let (certs, local) = chain(&cluster, 2);
    let accepted = sync_validator(&mut &cluster.validators[3], &certs[1], &local).unwrap();
    assert_eq!(accepted, vec![certs[0].digest(), certs[1].digest()]);
}

#[test]
fn sync_of_an_up_to_date_validator_is_one_submission() {
    let cluster = Cluster::new(4, &genesis());
    let (certs, local) = chain(&cluster, 1);
    let accepted = sync_validator(&mut &cluster.validators[0], &certs[0], &local).unwrap();
    assert_eq!(accepted, vec![certs[0].digest()]);
}

#[test]
fn sync_walks_a_chain_of_five_ancestors_in_causal_order() {
    let cluster = Cluster::new(4, &genesis());
    let (certs, local) = chain(&cluster, 6);
    let accepted = sync_validator(&mut &cluster.validators[3], &certs[5], &local).unwrap();
    let expected: Vec<_> = certs.iter().map(TxCert::digest).collect();
    assert_eq!(accepted, expected);
    assert_eq!(
        cluster.latest(3, &genesis()[0].id),
        cluster.latest(0, &genesis()[0].id)
    );
}

#[test]
fn sync_reports_a_history_gap() {
    let cluster = Cluster::new(4, &genesis());
    let (certs, mut local) = chain(&cluster, 3);
    local.retain(|_, c| c.digest() != certs[0].digest());
    let err = sync_validator(&mut &cluster.validators[3], &certs[2], &local).unwrap_err();
    assert!(matches!(err, objledger_sim::client::SyncError::HistoryGap(_)));
}

#[test]
fn ptb_of_one_hundred_transfers_is_one_certificate() {
    let gas = owned(0, Value::coin(1_000_000));
    let coins: Vec<Obj> = (1..=100).map(|i| owned(i, Value::coin(1))).collect();
    let mut all = vec![gas.clone()];
    all.extend(coins.iter().cloned());
    let mut cluster = Cluster::new(4, &all);
    let recipient = Address(Digest::hash(b"recipient"));
    let commands = coins
        .iter()
        .map(|c| Command::TransferOwned {
            obj: c.id,
            recipient,
        })
        .collect();
    let tx = make_ptb(
        &client_key(0),
        commands,
        coins.iter().map(Obj::reference).collect(),
        vec![],
        gas.reference(),
        100_000,
        0,
    )
    .unwrap();
    let cert = cluster.submit(&tx).unwrap();
    assert!(cert.effects.status.is_success());
    assert_eq!(cert.effects.mutated.len(), 101);
    for c in &coins {
        assert_eq!(cluster.latest(2, &c.id).unwrap().owner_address(), Some(recipient));
    }
}

#[test]
fn ptb_rejects_empty_and_duplicate_commands() {
    let gas = owned(0, Value::coin(100));
    let obj = owned(1, Value::counter(0));
    let build = |commands| {
        make_ptb(&client_key(0), commands, vec![obj.reference()], vec![], gas.reference(), 100, 0)
    };
    assert_eq!(build(vec![]).unwrap_err(), PtbError::Empty);
    let twice = Command::MutateOwned {
        obj: obj.id,
        new_contents: Value::counter(1),
    };
    assert_eq!(
        build(vec![twice.clone(), twice]).unwrap_err(),
        PtbError::DuplicateObject(obj.id)
    );
}

#[test]
fn aborting_ptb_mutates_only_gas() {
    let gas = owned(0, Value::coin(10_000));
    let a = owned(1, Value::counter(0));
    let b = owned(2, Value::counter(0));
    let mut cluster = Cluster::new(4, &[gas.clone(), a.clone(), b.clone()]);
    let commands = vec![
        Command::MutateOwned {
            obj: a.id,
            new_contents: Value::counter(5),
        },
        Command::AbortWith { code: 3 },
        Command::MutateOwned {
            obj: b.id,
            new_contents: Value::counter(5),
        },
    ];
    let tx = make_ptb(
        &client_key(0),
        commands,
        vec![a.reference(), b.reference()],
        vec![],
        gas.reference(),
        1_000,
        0,
    )
    .unwrap();
    let cert = cluster.submit(&tx).unwrap();
    assert!(!cert.effects.status.is_success());
    assert_eq!(cert.effects.mutated.len(), 1);
    assert_eq!(cert.effects.mutated[0].id, gas.id);
    assert_eq!(cluster.latest(0, &a.id).unwrap(), a);
}

#[test]
fn renewal_keeps_kind_and_inputs() {
    let tx = mutate(genesis()[0].reference(), genesis()[1].reference(), 1);
    let renewed = renew(&tx, &client_key(0), 3);
    assert_eq!(renewed.epoch(), 3);
    assert_eq!(renewed.data.kind, tx.data.kind);
    assert_eq!(renewed.data.owned_inputs, tx.data.owned_inputs);
    assert_ne!(renewed.digest(), tx.digest());
}

#[test]
fn renewal_within_the_epoch_keeps_the_conflict() {
    let cluster = Cluster::new(4, &genesis());
    let (obj, gas) = (genesis()[0].reference(), genesis()[1].reference());
    let first = mutate(obj, gas, 1);
    let second = mutate(obj, gas, 2);
    for v in &cluster.validators[..2] {
        v.handle_tx(&first).unwrap();
    }
    for v in &cluster.validators[2..] {
        v.handle_tx(&second).unwrap();
    }
    let again = renew(&first, &client_key(0), 0);
    assert!(matches!(
        cluster.validators[2].handle_tx(&again),
        Err(ValidatorError::ConflictingLock { .. })
    ));
    assert!(cluster.certify(&again).is_err());
}

#[test]
fn spent_input_is_rejected_everywhere() {
    let mut cluster = Cluster::new(4, &genesis());
    let (obj, gas) = (genesis()[0].reference(), genesis()[1].reference());
    cluster.submit(&mutate(obj, gas, 1)).unwrap();
    let late = mutate(obj, gas, 2);
    for v in &cluster.validators {
        assert!(matches!(v.handle_tx(&late), Err(ValidatorError::StaleInput(_))));
    }
}

fn increment(counter: &Obj, gas: ObjRef, client: usize) -> Tx {
    let key = client_key(client);
    TxData {
        epoch: 0,
        sender: key.address(),
        kind: TxKind::Command(Command::IncrementSharedCounter { obj: counter.id }),
        owned_inputs: vec![gas],
        readonly_inputs: vec![],
        shared_inputs: vec![(counter.id, counter.initial_version)],
        gas_ref: gas,
        gas_budget: 1_000,
        tip: 0,
    }
    .sign(&key)
}

#[test]
fn concurrent_shared_increments_both_settle() {
    let gas: Vec<Obj> = (0..2)
        .map(|c| {
            genesis_object(
                c,
                Ownership::OwnedByAddress(client_key(c as usize).address()),
                Value::coin(10_000),
            )
        })
        .collect();
    let counter = genesis_object(9, Ownership::SharedMutable, Value::counter(0));
    let mut all = gas.clone();
    all.push(counter.clone());
    let mut cluster = Cluster::new(4, &all);
    let a = cluster.certify(&increment(&counter, gas[0].reference(), 0)).unwrap();
    let b = cluster.certify(&increment(&counter, gas[1].reference(), 1)).unwrap();
    let ea = cluster.execute(&a).unwrap();
    let eb = cluster.execute(&b).unwrap();
    let payloads: Vec<u64> = [&ea, &eb]
        .iter()
        .map(|c| u64::from_le_bytes(c.effects.events[0].payload[..8].try_into().unwrap()))
        .collect();
    assert_eq!(payloads, vec![1, 2]);
    for i in 0..4 {
        let value = cluster.latest(i, &counter.id).unwrap().contents.counter_value();
        assert_eq!(value, Some(2));
        assert!(cluster.latest(i, &counter.id).unwrap().version > Version(1));
    }
}
