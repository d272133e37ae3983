//! Latency and throughput figures derived from a trace.

use std::collections::BTreeMap;

use crate::trace::{Trace, TraceEvent};

pub type Metrics = BTreeMap<String, f64>;

pub fn mean(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<u64>() as f64 / xs.len() as f64
}

/// Nearest-rank percentile.
pub fn percentile(xs: &[u64], p: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1] as f64
}

/// Per-operation latencies, keyed by operation kind.
#[derive(Clone, Debug, Default)]
pub struct Latencies {
    pub finality: BTreeMap<String, Vec<u64>>,
    pub settlement: BTreeMap<String, Vec<u64>>,
}

pub fn latencies(trace: &Trace) -> Latencies {
    let mut started: BTreeMap<(usize, usize), (u64, String)> = BTreeMap::new();
    let mut out = Latencies::default();
    for e in &trace.events {
        match e {
            TraceEvent::TxSubmitted {
                t,
                client,
                op,
                op_kind,
                ..
            } => {
                started
                    .entry((*client, *op))
                    .or_insert_with(|| (*t, op_kind.clone()));
            }
            TraceEvent::Final { t, client, op, .. } => {
                if let Some((t0, kind)) = started.get(&(*client, *op)) {
                    out.finality.entry(kind.clone()).or_default().push(t - t0);
                }
            }
            TraceEvent::Settled { t, client, op, .. } => {
                if let Some((t0, kind)) = started.get(&(*client, *op)) {
                    out.settlement.entry(kind.clone()).or_default().push(t - t0);
                }
            }
            _ => {}
        }
    }
    out
}

pub fn compute(trace: &Trace) -> Metrics {
    let mut m = Metrics::new();
    let lat = latencies(trace);
    for (stage, by_kind) in [("finality", &lat.finality), ("settlement", &lat.settlement)] {
        for (kind, xs) in by_kind {
            m.insert(format!("{stage}.{kind}.count"), xs.len() as f64);
            m.insert(format!("{stage}.{kind}.mean"), mean(xs));
            m.insert(format!("{stage}.{kind}.p50"), percentile(xs, 50.0));
            m.insert(format!("{stage}.{kind}.p95"), percentile(xs, 95.0));
        }
    }

    let mut first_submit = None;
    let mut last_settle = 0;
    let mut settled = 0u64;
    let mut commands = 0u64;
    let mut command_count = BTreeMap::new();
    let mut certs = 0u64;
    let mut delays = Vec::new();
    let mut checkpoints = std::collections::BTreeSet::new();
    let mut checkpoint_times = Vec::new();
    let mut epoch_start: BTreeMap<u64, u64> = BTreeMap::new();
    for e in &trace.events {
        match e {
            TraceEvent::TxSubmitted { t, tx, commands: c, .. } => {
                first_submit.get_or_insert(*t);
                command_count.insert(*tx, *c as u64);
            }
            TraceEvent::CertFormed { .. } => certs += 1,
            TraceEvent::Settled { t, tx, .. } => {
                settled += 1;
                commands += command_count.get(tx).copied().unwrap_or(1);
                last_settle = last_settle.max(*t);
            }
            TraceEvent::Msg { t, deliver, .. } => delays.push(deliver - t),
            TraceEvent::Checkpoint { t, epoch, seq, .. } => {
                if checkpoints.insert((*epoch, *seq)) {
                    checkpoint_times.push(*t);
                }
            }
            TraceEvent::EpochChange { t, epoch, .. } => {
                epoch_start.entry(*epoch).or_insert(*t);
            }
            _ => {}
        }
    }
    let span = first_submit
        .map(|t0| last_settle.saturating_sub(t0))
        .unwrap_or(0)
        .max(1) as f64;
    m.insert("certificates".into(), certs as f64);
    m.insert("settled".into(), settled as f64);
    m.insert("goodput_per_1000".into(), settled as f64 * 1000.0 / span);
    m.insert("ops_per_1000".into(), commands as f64 * 1000.0 / span);
    m.insert("checkpoints".into(), checkpoints.len() as f64);
    let gaps: Vec<u64> = checkpoint_times.windows(2).map(|w| w[1] - w[0]).collect();
    m.insert("checkpoint_interval.mean".into(), mean(&gaps));
    for (epoch, t) in epoch_start {
        m.insert(format!("epoch.{epoch}.start"), t as f64);
    }
    let one_way = mean(&delays);
    m.insert("delay.mean".into(), one_way);
    m.insert("rtt.mean".into(), 2.0 * one_way);
    m.insert("end_time".into(), trace.footer.t as f64);
    m
}
