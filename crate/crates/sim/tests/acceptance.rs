//! Acceptance criteria. Runs with its own harness and prints one line per
//! criterion; any failure makes the process exit non-zero.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use objledger_core::execution::{Command, GasSchedule, TxKind};
use objledger_core::messages::TxData;
use objledger_core::object::genesis_object;
use objledger_core::{Obj, ObjKey, Ownership, Value};
use objledger_sim::checks::{self, two_wave_count, Report, Verdict, View};
use objledger_sim::cluster::Cluster;
use objledger_sim::metrics::{latencies, mean};
use objledger_sim::scenario::{
    Byzantine, ClientBehavior, ClientFault, Scenario, ValidatorFault,
};
use objledger_sim::sim::client_key;
use objledger_sim::trace::{Trace, TraceEvent};
use objledger_sim::run;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const AC1_BUDGET: Duration = Duration::from_secs(5);
const AC2_BUDGET: Duration = Duration::from_secs(60);
const AC8_RATIO: f64 = 1.25;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("AC1  two-wave finality", ac1_two_wave_finality),
        ("AC2  conflicting certificates", ac2_bcb_enumeration),
        ("AC3  shared counter under loss", ac3_shared_counter),
        ("AC4  deterministic replay", ac4_determinism),
        ("AC5  crashed client inclusion", ac5_crashed_client),
        ("AC6  starvation freedom", ac6_starvation_freedom),
        ("AC7  handover state equality", ac7_handover_equality),
        ("AC8  owned path under faults", ac8_fault_insensitivity),
        ("AC9  abort semantics", ac9_abort_semantics),
        ("AC10 reconfiguration continuity", ac10_reconfiguration),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<34} {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<34} {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn base(name: &str, seed: u64) -> Scenario {
    Scenario {
        name: name.into(),
        seed,
        ..Scenario::default()
    }
}

/// Runs every scenario, spreading them over the available cores.
fn run_all(scenarios: Vec<Scenario>) -> Vec<Trace> {
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let chunk = scenarios.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|sc| run(sc).expect("valid scenario"))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker"))
            .collect()
    })
}

fn safety(trace: &Trace, report: &Report) -> Result<(), String> {
    if report.safety_ok() {
        Ok(())
    } else {
        Err(format!(
            "{} seed {}: {}",
            trace.header.scenario,
            trace.header.seed,
            report.failures().join("; ")
        ))
    }
}

fn require(trace: &Trace, report: &Report, check: &str) -> Result<(), String> {
    match report.get(check) {
        Some(Verdict::Pass) => Ok(()),
        other => Err(format!(
            "{} seed {}: {check} {other:?}",
            trace.header.scenario, trace.header.seed
        )),
    }
}

fn ac1_two_wave_finality() -> Outcome {
    let t0 = Instant::now();
    let mut sc = base("two-wave", 1);
    sc.workload.clients = 4;
    sc.workload.ops_per_client = 10;
    let trace = run(&sc).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let report = checks::verify(&trace);
    safety(&trace, &report)?;
    let finals = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::Final { .. }))
        .count();
    let checked = two_wave_count(&trace)?;
    if finals != 40 || checked != finals {
        return Err(format!("{checked} of {finals} final transactions checked, expected 40"));
    }
    if elapsed > AC1_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{checked}/{finals} owned transactions final after exactly two waves"))
}

/// Equivocator orders for the enumeration: the honest validators each see
/// nothing, one transaction, or both in either order.
fn orders() -> [Vec<u8>; 5] {
    [vec![], vec![1], vec![2], vec![1, 2], vec![2, 1]]
}

fn ac2_bcb_enumeration() -> Outcome {
    let t0 = Instant::now();
    let mut scenarios = Vec::new();
    for byz in 0..4u16 {
        for a in orders() {
            for b in orders() {
                for c in orders() {
                    let mut honest = vec![a.clone(), b.clone(), c.clone()].into_iter();
                    let per_validator: Vec<Vec<u8>> = (0..4)
                        .map(|v| {
                            if v == byz {
                                vec![1, 2]
                            } else {
                                honest.next().unwrap()
                            }
                        })
                        .collect();
                    let mut sc = base("bcb-enumeration", scenarios.len() as u64);
                    sc.workload.clients = 2;
                    sc.workload.ops_per_client = 1;
                    sc.faults.validators.push(ValidatorFault {
                        validator: byz,
                        byzantine: Some(Byzantine::SignBoth),
                        ..ValidatorFault::default()
                    });
                    sc.faults.clients.push(ClientFault {
                        client: 0,
                        behavior: ClientBehavior::Equivocator {
                            orders: per_validator,
                            renew: false,
                        },
                    });
                    scenarios.push(sc);
                }
            }
        }
    }
    let n = scenarios.len();
    let traces = run_all(scenarios);
    let mut certified = 0;
    for trace in &traces {
        let report = checks::verify(trace);
        require(trace, &report, "bcb_consistency")?;
        safety(trace, &report)?;
        certified += trace
            .events
            .iter()
            .any(|e| matches!(e, TraceEvent::CertFormed { client: 0, .. }))
            as usize;
    }
    let elapsed = t0.elapsed();
    if elapsed > AC2_BUDGET {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{n} splits, 0 double certificates, {certified} certified one side"
    ))
}

fn ac3_shared_counter() -> Outcome {
    let scenarios = (0..500)
        .map(|seed| {
            let mut sc = base("shared-counter", seed);
            sc.network.drop_probability = 0.2;
            sc.workload.clients = 8;
            sc.workload.ops_per_client = 3;
            sc.workload.owned_weight = 0;
            sc.workload.shared_weight = 1;
            sc
        })
        .collect();
    let traces = run_all(scenarios);
    let mut increments = 0;
    for trace in &traces {
        let report = checks::verify(trace);
        safety(trace, &report)?;
        require(trace, &report, "counter_consistency")?;
        require(trace, &report, "shared_lock_consistency")?;
        increments += trace
            .events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Settled { success: true, .. }))
            .count();
    }
    Ok(format!("500 seeds, {increments} settled increments all counted"))
}

/// Owned traffic plus a single shared-object client: the final state does
/// not depend on message timing.
fn twin(seed: u64) -> Scenario {
    let mut sc = base("twin", seed);
    sc.workload.clients = 4;
    sc.workload.ops_per_client = 8;
    sc.workload.shared_weight = 0;
    sc
}

fn final_states(trace: &Trace) -> BTreeSet<(u64, objledger_core::Digest)> {
    trace.footer.finals.iter().map(|f| (f.epoch, f.state)).collect()
}

fn ac4_determinism() -> Outcome {
    let mut replays = 0;
    let mut twins = 0;
    for seed in 0..20 {
        let mut sc = twin(seed);
        sc.workload.shared_weight = 1;
        sc.network.drop_probability = 0.1;
        let a = run(&sc).map_err(|e| e.to_string())?;
        let b = run(&sc).map_err(|e| e.to_string())?;
        if a.to_ndjson() != b.to_ndjson() {
            return Err(format!("seed {seed}: traces differ between identical runs"));
        }
        let report = checks::verify(&a);
        require(&a, &report, "checkpoint_agreement")?;
        replays += 1;

        let clean = run(&twin(seed)).map_err(|e| e.to_string())?;
        for (victim, mid_write) in [(1u16, None), (2, Some(2)), (3, Some(0))] {
            let mut crashed = twin(seed);
            crashed.faults.validators.push(ValidatorFault {
                validator: victim,
                crash_at: Some(150 + 40 * seed),
                recover_at: Some(900 + 40 * seed),
                mid_write,
                byzantine: None,
            });
            let c = run(&crashed).map_err(|e| e.to_string())?;
            let report = checks::verify(&c);
            safety(&c, &report)?;
            if !c.events.iter().any(|e| matches!(e, TraceEvent::Crash { .. })) {
                return Err(format!("seed {seed}: v{victim} never crashed"));
            }
            let (sa, sb) = (final_states(&clean), final_states(&c));
            if sa.len() != 1 || sa != sb {
                return Err(format!(
                    "seed {seed}: crash of v{victim} ({mid_write:?}) ends in {sb:?}, clean run {sa:?}"
                ));
            }
            twins += 1;
        }
    }
    Ok(format!(
        "{replays} byte-identical replays, {twins} crash twins converged"
    ))
}

fn ac5_crashed_client() -> Outcome {
    let scenarios = (0..200)
        .map(|seed| {
            let mut sc = base("crashed-client", seed);
            sc.epochs.changes = 1;
            sc.workload.clients = 3;
            sc.workload.ops_per_client = 3;
            sc.faults.clients.push(ClientFault {
                client: 0,
                behavior: ClientBehavior::Crasher {
                    after_ops: (seed % 3) as usize,
                    deliver_to: vec![(seed % 4) as u16],
                },
            });
            sc
        })
        .collect();
    let traces = run_all(scenarios);
    for trace in &traces {
        let report = checks::verify(trace);
        safety(trace, &report)?;
        require(trace, &report, "settlement_durability")?;
        let view = View::new(trace);
        let abandoned = trace
            .events
            .iter()
            .rev()
            .find_map(|e| match e {
                TraceEvent::CertFormed { client: 0, tx, .. } => Some(*tx),
                _ => None,
            })
            .ok_or(format!("seed {}: crasher formed no certificate", trace.header.seed))?;
        if view.checkpoint_epoch(&abandoned) != Some(0) {
            return Err(format!(
                "seed {}: abandoned certificate not in an epoch-0 checkpoint",
                trace.header.seed
            ));
        }
        if view.rolled_back.contains(&abandoned) {
            return Err(format!("seed {}: abandoned certificate rolled back", trace.header.seed));
        }
    }
    Ok("200 seeds, every abandoned certificate checkpointed, 0 reverted".into())
}

fn ac6_starvation_freedom() -> Outcome {
    let scenarios = (0..100)
        .map(|seed| {
            let mut sc = base("equivocation", seed);
            sc.epochs.changes = 1;
            sc.workload.clients = 2;
            sc.workload.ops_per_client = 3;
            sc.faults.clients.push(ClientFault {
                client: 0,
                behavior: ClientBehavior::Equivocator {
                    orders: vec![vec![1], vec![1], vec![2], vec![2]],
                    renew: true,
                },
            });
            sc
        })
        .collect();
    let traces = run_all(scenarios);
    for trace in &traces {
        let seed = trace.header.seed;
        let report = checks::verify(trace);
        safety(trace, &report)?;
        let mut contested: BTreeSet<ObjKey> = BTreeSet::new();
        let mut renewal = None;
        let mut settled = BTreeSet::new();
        for e in &trace.events {
            match e {
                TraceEvent::TxSubmitted { client: 0, op_kind, keys, tx, .. } => {
                    if op_kind == "equivocation" {
                        contested.extend(keys.iter().copied());
                    } else if op_kind == "renewal" {
                        renewal = Some((*tx, keys.clone()));
                    }
                }
                TraceEvent::CertFormed { client: 0, epoch: 0, .. } => {
                    return Err(format!("seed {seed}: the 2/2 split certified in epoch 0"));
                }
                TraceEvent::Settled { client: 0, tx, epoch: 1, .. } => {
                    settled.insert(*tx);
                }
                _ => {}
            }
        }
        let (tx, keys) = renewal.ok_or(format!("seed {seed}: no fresh transaction"))?;
        if !keys.iter().any(|k| contested.contains(k)) {
            return Err(format!("seed {seed}: fresh transaction uses another key"));
        }
        if !settled.contains(&tx) {
            return Err(format!("seed {seed}: fresh transaction not settled in epoch 1"));
        }
    }
    Ok("100 seeds, deadlocked key settled in the next epoch".into())
}

/// One scenario of each kind that crosses an epoch boundary.
fn handover_suite() -> Vec<Scenario> {
    let mut out = Vec::new();
    for seed in 0..10 {
        let mut mixed = base("mixed-epochs", seed);
        mixed.epochs.changes = 2;
        mixed.epochs.checkpoints_before_change = 4;
        mixed.network.drop_probability = 0.1;
        mixed.workload.ops_per_client = 1000;
        mixed.workload.until_epoch = Some(2);
        mixed.workload.shared_weight = 1;
        mixed.workload.ptb_weight = 1;
        mixed.workload.ptb_size = 4;
        out.push(mixed.clone());

        let mut crash = mixed.clone();
        crash.name = "crash-epochs".into();
        crash.faults.validators.push(ValidatorFault {
            validator: (seed % 4) as u16,
            crash_at: Some(300 + 50 * seed),
            recover_at: Some(1200 + 50 * seed),
            mid_write: (seed % 2 == 0).then_some(1),
            byzantine: None,
        });
        out.push(crash);

        let mut byz = mixed.clone();
        byz.name = "byzantine-epochs".into();
        byz.faults.validators.push(ValidatorFault {
            validator: (seed % 4) as u16,
            byzantine: Some([Byzantine::SignBoth, Byzantine::Silent, Byzantine::Garbage][seed as usize % 3]),
            ..ValidatorFault::default()
        });
        out.push(byz);

        let mut equiv = base("equivocation-epochs", seed);
        equiv.epochs.changes = 1;
        equiv.faults.clients.push(ClientFault {
            client: 0,
            behavior: ClientBehavior::Equivocator {
                orders: vec![vec![1], vec![2], vec![1, 2], vec![2, 1]],
                renew: true,
            },
        });
        out.push(equiv);
    }
    out
}

fn ac7_handover_equality() -> Outcome {
    let traces = run_all(handover_suite());
    let mut handovers = 0;
    for trace in &traces {
        let report = checks::verify(trace);
        safety(trace, &report)?;
        require(trace, &report, "epoch_state_equality")?;
        let epochs: BTreeSet<u64> = trace
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::EpochChange { epoch, .. } => Some(*epoch),
                _ => None,
            })
            .collect();
        if epochs.len() as u64 != trace.header.epoch_changes {
            return Err(format!(
                "{} seed {}: {} of {} handovers happened",
                trace.header.scenario,
                trace.header.seed,
                epochs.len(),
                trace.header.epoch_changes
            ));
        }
        handovers += epochs.len();
    }
    Ok(format!("{} runs, {handovers} handovers, states identical", traces.len()))
}

fn latency_of(traces: &[Trace], kind: &str) -> (f64, f64) {
    let mut settle = Vec::new();
    let mut rtt = Vec::new();
    for t in traces {
        settle.extend(latencies(t).settlement.get(kind).cloned().unwrap_or_default());
        let delays: Vec<u64> = t
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Msg { t, deliver, .. } => Some(deliver - t),
                _ => None,
            })
            .collect();
        rtt.push((2.0 * mean(&delays)) as u64);
    }
    (mean(&settle), mean(&rtt))
}

fn ac8_fault_insensitivity() -> Outcome {
    let load = |name: &str, seed: u64, shared: bool| {
        let mut sc = base(name, seed);
        sc.workload.clients = 4;
        sc.workload.ops_per_client = 10;
        if shared {
            sc.workload.owned_weight = 0;
            sc.workload.shared_weight = 1;
        }
        sc
    };
    let seeds = 0..30u64;
    let clean = run_all(seeds.clone().map(|s| load("owned", s, false)).collect());
    let crashed = run_all(
        seeds
            .clone()
            .map(|s| {
                let mut sc = load("owned-crashed", s, false);
                sc.faults.validators.push(ValidatorFault {
                    validator: (s % 4) as u16,
                    crash_at: Some(0),
                    ..ValidatorFault::default()
                });
                sc
            })
            .collect(),
    );
    let shared = run_all(seeds.map(|s| load("shared", s, true)).collect());
    for t in clean.iter().chain(&crashed).chain(&shared) {
        safety(t, &checks::verify(t))?;
    }
    let (owned, wave) = latency_of(&clean, "owned");
    let (owned_faulty, _) = latency_of(&crashed, "owned");
    let (shared_lat, _) = latency_of(&shared, "shared");
    let ratio = owned_faulty / owned;
    let interval = 120.0;
    let gap = shared_lat - owned;
    let detail = format!(
        "owned {owned:.1}, with f crashed {owned_faulty:.1} (x{ratio:.3}), shared-owned {gap:.1} vs {interval}±{wave:.1}"
    );
    if ratio > AC8_RATIO {
        return Err(detail);
    }
    if (gap - interval).abs() > wave {
        return Err(detail);
    }
    Ok(detail)
}

fn ac9_abort_semantics() -> Outcome {
    let schedule = GasSchedule::default();
    let strategy = (1usize..8, 0usize..8, 0u64..4, any::<u64>());
    let mut runner = TestRunner::new(Config {
        cases: 64,
        failure_persistence: None,
        ..Config::default()
    });
    let cases = std::cell::Cell::new(0);
    let result = runner.run(&strategy, |(len, abort_at, tip, code)| {
        let abort_at = abort_at % len;
        let key = client_key(0);
        let owner = Ownership::OwnedByAddress(key.address());
        let gas = genesis_object(0, owner.clone(), Value::coin(10_000));
        let counters: Vec<Obj> = (0..len as u64)
            .map(|i| genesis_object(1 + i, owner.clone(), Value::counter(i)))
            .collect();
        let mut genesis = vec![gas.clone()];
        genesis.extend(counters.iter().cloned());
        let mut cluster = Cluster::new(4, &genesis);

        let commands: Vec<Command> = counters
            .iter()
            .enumerate()
            .map(|(i, o)| {
                if i == abort_at {
                    Command::AbortWith { code }
                } else {
                    Command::MutateOwned {
                        obj: o.id,
                        new_contents: Value::counter(99),
                    }
                }
            })
            .collect();
        let mut owned_inputs: Vec<_> = counters.iter().map(Obj::reference).collect();
        owned_inputs.push(gas.reference());
        let tx = TxData {
            epoch: 0,
            sender: key.address(),
            kind: TxKind::Ptb(commands),
            owned_inputs,
            readonly_inputs: vec![],
            shared_inputs: vec![],
            gas_ref: gas.reference(),
            gas_budget: 1_000,
            tip,
        }
        .sign(&key);
        let cert = cluster.submit(&tx).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let effects = &cert.effects;
        prop_assert!(!effects.status.is_success());
        let mutated: Vec<_> = effects.mutated.iter().map(|r| r.id).collect();
        prop_assert_eq!(mutated, vec![gas.id]);
        prop_assert!(effects.created.is_empty() && effects.deleted.is_empty());
        prop_assert!(effects.wrapped.is_empty() && effects.unwrapped.is_empty());
        for i in 0..4 {
            let g = cluster.latest(i, &gas.id).unwrap();
            let spent = 10_000 - g.contents.coin_balance().unwrap();
            prop_assert_eq!(spent, effects.gas_used * schedule.base_fee + tip);
            for c in &counters {
                prop_assert_eq!(cluster.latest(i, &c.id).unwrap(), c.clone());
            }
        }
        // The untouched inputs are free again at their old versions.
        let g = cluster.latest(0, &gas.id).unwrap();
        let retry = TxData {
            epoch: 0,
            sender: key.address(),
            kind: TxKind::Command(Command::MutateOwned {
                obj: counters[0].id,
                new_contents: Value::counter(7),
            }),
            owned_inputs: vec![counters[0].reference(), g.reference()],
            readonly_inputs: vec![],
            shared_inputs: vec![],
            gas_ref: g.reference(),
            gas_budget: 1_000,
            tip: 0,
        }
        .sign(&key);
        let again = cluster.submit(&retry).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(again.effects.status.is_success());
        cases.set(cases.get() + 1);
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!("{} randomized abort points, fee and unlock exact", cases.get())),
        Err(e) => Err(e.to_string()),
    }
}

fn ac10_reconfiguration() -> Outcome {
    let scenarios = (0..50)
        .map(|seed| {
            let mut sc = base("three-epochs", seed);
            sc.epochs.changes = 2;
            sc.epochs.checkpoints_before_change = 6;
            sc.workload.clients = 4;
            sc.workload.ops_per_client = 10_000;
            sc.workload.until_epoch = Some(2);
            sc.workload.shared_weight = 1;
            sc.workload.think_time = 10;
            sc
        })
        .collect();
    let traces = run_all(scenarios);
    let mut settled = 0;
    let mut per_epoch: BTreeMap<u64, usize> = BTreeMap::new();
    for trace in &traces {
        let report = checks::verify(trace);
        safety(trace, &report)?;
        require(trace, &report, "finality_inclusion")?;
        require(trace, &report, "correct_clients_settle")?;
        for e in &trace.events {
            if let TraceEvent::Settled { epoch, .. } = e {
                settled += 1;
                *per_epoch.entry(*epoch).or_default() += 1;
            }
        }
    }
    if per_epoch.len() < 3 {
        return Err(format!("load did not span three epochs: {per_epoch:?}"));
    }
    Ok(format!(
        "50 seeds, {settled} transactions settled across epochs {:?}",
        per_epoch.keys().collect::<Vec<_>>()
    ))
}
