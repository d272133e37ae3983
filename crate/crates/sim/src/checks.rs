//! Safety and liveness assertions evaluated over a trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use objledger_core::committee::quorum_threshold;
use objledger_core::{Digest, ObjID, ObjKey, TxDigest};
use serde::Serialize;

use crate::trace::{Trace, TraceEvent};
use crate::wire::is_acceptance;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail(String),
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub safety: bool,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn get(&self, name: &str) -> Option<&Verdict> {
        self.checks.iter().find(|c| c.name == name).map(|c| &c.verdict)
    }

    pub fn safety_ok(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| c.safety)
            .all(|c| !matches!(c.verdict, Verdict::Fail(_)))
    }

    pub fn all_ok(&self) -> bool {
        self.checks
            .iter()
            .all(|c| !matches!(c.verdict, Verdict::Fail(_)))
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter_map(|c| match &c.verdict {
                Verdict::Fail(why) => Some(format!("{}: {why}", c.name)),
                _ => None,
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let kind = if c.safety { "safety" } else { "liveness" };
            let _ = match &c.verdict {
                Verdict::Pass => writeln!(s, "PASS {:<28} [{kind}]", c.name),
                Verdict::Fail(why) => writeln!(s, "FAIL {:<28} [{kind}] {why}", c.name),
                Verdict::Skipped(why) => writeln!(s, "SKIP {:<28} [{kind}] {why}", c.name),
            };
        }
        s
    }
}

/// Runs every check over `trace`.
pub fn verify(trace: &Trace) -> Report {
    let v = View::new(trace);
    let safety: [(&'static str, fn(&View) -> Verdict); 10] = [
        ("bcb_consistency", bcb_consistency),
        ("effects_agreement", effects_agreement),
        ("shared_lock_consistency", shared_lock_consistency),
        ("checkpoint_agreement", checkpoint_agreement),
        ("checkpoint_uniqueness", checkpoint_uniqueness),
        ("epoch_state_equality", epoch_state_equality),
        ("final_state_agreement", final_state_agreement),
        ("settlement_durability", settlement_durability),
        ("finality_inclusion", finality_inclusion),
        ("counter_consistency", counter_consistency),
    ];
    let liveness: [(&'static str, fn(&View) -> Verdict); 2] = [
        ("two_wave_finality", two_wave_finality),
        ("correct_clients_settle", correct_clients_settle),
    ];
    let mut checks: Vec<Check> = safety
        .iter()
        .map(|(name, f)| Check {
            name,
            safety: true,
            verdict: f(&v),
        })
        .collect();
    checks.extend(liveness.iter().map(|(name, f)| Check {
        name,
        safety: false,
        verdict: f(&v),
    }));
    Report { checks }
}

/// Indexes over a trace shared by the checks.
pub struct View<'a> {
    pub trace: &'a Trace,
    pub correct: BTreeSet<u16>,
    /// Canonical checkpoint contents, by (epoch, seq).
    pub checkpoints: BTreeMap<(u64, u64), Vec<TxDigest>>,
    pub rolled_back: BTreeSet<TxDigest>,
    /// Members of each epoch's committee.
    pub committees: BTreeMap<u64, Vec<u16>>,
}

impl<'a> View<'a> {
    pub fn new(trace: &'a Trace) -> Self {
        let n = trace.header.stakes.len() as u16;
        let correct = (0..n)
            .filter(|v| !trace.header.byzantine.contains(v))
            .collect::<BTreeSet<_>>();
        let mut checkpoints = BTreeMap::new();
        let mut rolled_back = BTreeSet::new();
        let mut committees = BTreeMap::from([(0, (0..n).collect())]);
        for e in &trace.events {
            match e {
                TraceEvent::Checkpoint {
                    validator,
                    epoch,
                    seq,
                    txs,
                    ..
                } if correct.contains(validator) => {
                    checkpoints
                        .entry((*epoch, *seq))
                        .or_insert_with(|| txs.iter().map(|(d, _)| *d).collect());
                }
                TraceEvent::EpochChange {
                    validator,
                    epoch,
                    committee,
                    rolled_back: r,
                    ..
                } => {
                    committees.entry(*epoch).or_insert_with(|| committee.clone());
                    if correct.contains(validator) {
                        rolled_back.extend(r.iter().copied());
                    }
                }
                _ => {}
            }
        }
        View {
            trace,
            correct,
            checkpoints,
            rolled_back,
            committees,
        }
    }

    fn complete(&self) -> bool {
        self.trace.footer.complete
    }

    /// Epoch whose checkpoints contain `tx`, if any.
    pub fn checkpoint_epoch(&self, tx: &TxDigest) -> Option<u64> {
        self.checkpoints
            .iter()
            .find(|(_, txs)| txs.contains(tx))
            .map(|((e, _), _)| *e)
    }

    /// Stake `validator` holds in the committee of `epoch`.
    pub fn stake_in(&self, epoch: u64, validator: u16) -> u64 {
        match self.committees.get(&epoch) {
            Some(members) if members.contains(&validator) => {
                self.trace.header.stakes[validator as usize]
            }
            _ => 0,
        }
    }

    pub fn quorum_in(&self, epoch: u64) -> u64 {
        let members = self.committees.get(&epoch).map_or(&[][..], Vec::as_slice);
        quorum_threshold(members.iter().map(|v| self.stake_in(epoch, *v)).sum())
    }

    /// First epoch whose committee lacks a quorum of correct stake.
    fn overloaded_epoch(&self) -> Option<u64> {
        let h = &self.trace.header;
        let faulty: BTreeSet<u16> = h.byzantine.iter().chain(&h.crash_faults).copied().collect();
        self.committees.iter().find_map(|(epoch, members)| {
            let correct: u64 = members
                .iter()
                .filter(|v| !faulty.contains(v))
                .map(|v| self.stake_in(*epoch, *v))
                .sum();
            (correct < self.quorum_in(*epoch)).then_some(*epoch)
        })
    }
}

fn fail(msg: String) -> Verdict {
    Verdict::Fail(msg)
}

fn bcb_consistency(v: &View) -> Verdict {
    let mut certs: BTreeMap<(u64, ObjKey), BTreeSet<TxDigest>> = BTreeMap::new();
    for e in &v.trace.events {
        if let TraceEvent::CertFormed { tx, epoch, keys, .. } = e {
            for k in keys {
                certs.entry((*epoch, *k)).or_default().insert(*tx);
            }
        }
    }
    match certs.iter().find(|(_, txs)| txs.len() > 1) {
        Some(((epoch, key), txs)) => fail(format!(
            "{} certificates on {key:?} in epoch {epoch}",
            txs.len()
        )),
        None => Verdict::Pass,
    }
}

fn effects_agreement(v: &View) -> Verdict {
    let mut effects: BTreeMap<TxDigest, BTreeSet<Digest>> = BTreeMap::new();
    for e in &v.trace.events {
        match e {
            TraceEvent::Executed {
                validator,
                tx,
                effects: d,
                ..
            } if v.correct.contains(validator) => {
                effects.entry(*tx).or_default().insert(*d);
            }
            TraceEvent::Settled { tx, effects: d, .. } => {
                effects.entry(*tx).or_default().insert(*d);
            }
            _ => {}
        }
    }
    match effects.iter().find(|(_, d)| d.len() > 1) {
        Some((tx, _)) => fail(format!("divergent effects for {tx:?}")),
        None => Verdict::Pass,
    }
}

fn shared_lock_consistency(v: &View) -> Verdict {
    let mut seqs: BTreeMap<ObjID, BTreeMap<u16, Vec<(TxDigest, u64)>>> = BTreeMap::new();
    for e in &v.trace.events {
        if let TraceEvent::SharedLock {
            validator,
            tx,
            object,
            version,
            ..
        } = e
        {
            if !v.correct.contains(validator) {
                continue;
            }
            let seq = seqs.entry(*object).or_default().entry(*validator).or_default();
            // A commit re-consumed after a crash re-announces its locks.
            if !seq.contains(&(*tx, *version)) {
                seq.push((*tx, *version));
            }
        }
    }
    for (object, per_validator) in &seqs {
        let all: Vec<_> = per_validator.iter().collect();
        for (i, (a, sa)) in all.iter().enumerate() {
            for (b, sb) in &all[i + 1..] {
                let n = sa.len().min(sb.len());
                if sa[..n] != sb[..n] {
                    return fail(format!(
                        "lock sequences of v{a} and v{b} diverge on {object:?}"
                    ));
                }
            }
        }
    }
    Verdict::Pass
}

fn checkpoint_agreement(v: &View) -> Verdict {
    let mut digests: BTreeMap<(u64, u64), BTreeSet<Digest>> = BTreeMap::new();
    let mut chains: BTreeMap<u16, Vec<(Digest, Digest)>> = BTreeMap::new();
    for e in &v.trace.events {
        if let TraceEvent::Checkpoint {
            validator,
            epoch,
            seq,
            digest,
            prev,
            ..
        } = e
        {
            if !v.correct.contains(validator) {
                continue;
            }
            digests.entry((*epoch, *seq)).or_default().insert(*digest);
            let chain = chains.entry(*validator).or_default();
            if chain.last().map(|(d, _)| d) != Some(digest) {
                chain.push((*digest, *prev));
            }
        }
    }
    if let Some(((e, s), _)) = digests.iter().find(|(_, d)| d.len() > 1) {
        return fail(format!("validators disagree on checkpoint ({e}, {s})"));
    }
    for (validator, chain) in &chains {
        for w in chain.windows(2) {
            if w[1].1 != w[0].0 {
                return fail(format!("v{validator} checkpoint chain breaks"));
            }
        }
    }
    Verdict::Pass
}

fn checkpoint_uniqueness(v: &View) -> Verdict {
    let mut seen = BTreeSet::new();
    for txs in v.checkpoints.values() {
        for tx in txs {
            if !seen.insert(*tx) {
                return fail(format!("{tx:?} checkpointed twice"));
            }
        }
    }
    Verdict::Pass
}

fn epoch_state_equality(v: &View) -> Verdict {
    let mut states: BTreeMap<u64, BTreeSet<Digest>> = BTreeMap::new();
    for e in &v.trace.events {
        if let TraceEvent::EpochChange {
            validator,
            epoch,
            state,
            ..
        } = e
        {
            if v.correct.contains(validator) {
                states.entry(*epoch).or_default().insert(*state);
            }
        }
    }
    match states.iter().find(|(_, s)| s.len() > 1) {
        Some((epoch, _)) => fail(format!("states differ entering epoch {epoch}")),
        None => Verdict::Pass,
    }
}

fn final_state_agreement(v: &View) -> Verdict {
    if !v.complete() {
        return Verdict::Skipped("run did not reach quiescence".into());
    }
    let states: BTreeSet<_> = v
        .trace
        .footer
        .finals
        .iter()
        .filter(|f| v.correct.contains(&f.validator))
        .map(|f| (f.epoch, f.state))
        .collect();
    if states.len() > 1 {
        return fail("live validators end in different states".into());
    }
    Verdict::Pass
}

fn settlement_durability(v: &View) -> Verdict {
    for e in &v.trace.events {
        if let TraceEvent::Settled { tx, epoch, .. } = e {
            if v.rolled_back.contains(tx) {
                return fail(format!("settled {tx:?} was rolled back"));
            }
            if v.complete() && v.checkpoint_epoch(tx) != Some(*epoch) {
                return fail(format!("settled {tx:?} is not in an epoch-{epoch} checkpoint"));
            }
        }
    }
    Verdict::Pass
}

fn finality_inclusion(v: &View) -> Verdict {
    for e in &v.trace.events {
        if let TraceEvent::Final { tx, epoch, .. } = e {
            if v.rolled_back.contains(tx) {
                return fail(format!("final {tx:?} was rolled back"));
            }
            if v.complete() && v.checkpoint_epoch(tx) != Some(*epoch) {
                return fail(format!("final {tx:?} is not in an epoch-{epoch} checkpoint"));
            }
        }
    }
    Verdict::Pass
}

fn counter_consistency(v: &View) -> Verdict {
    let mut shared_of: BTreeMap<TxDigest, Vec<ObjID>> = BTreeMap::new();
    for e in &v.trace.events {
        if let TraceEvent::TxSubmitted { tx, shared, .. } = e {
            if !shared.is_empty() {
                shared_of.insert(*tx, shared.clone());
            }
        }
    }
    let mut settled: BTreeMap<ObjID, u64> = BTreeMap::new();
    let mut settled_txs = BTreeSet::new();
    for e in &v.trace.events {
        if let TraceEvent::Settled { tx, success, .. } = e {
            settled_txs.insert(*tx);
            if *success {
                for id in shared_of.get(tx).into_iter().flatten() {
                    *settled.entry(*id).or_default() += 1;
                }
            }
        }
    }
    // Increments only a crashed client knows of are not counted anywhere,
    // so the equality is checked only when every one of them settled.
    let renewed: BTreeSet<TxDigest> = v
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Renewed { old, .. } => Some(*old),
            _ => None,
        })
        .collect();
    let unsettled = shared_of
        .keys()
        .any(|tx| !settled_txs.contains(tx) && !renewed.contains(tx));
    if !v.complete() || unsettled {
        return Verdict::Skipped("not every shared transaction settled".into());
    }
    for f in &v.trace.footer.finals {
        if !v.correct.contains(&f.validator) {
            continue;
        }
        for (id, value) in &f.counters {
            let expected = settled.get(id).copied().unwrap_or(0);
            if *value != expected {
                return fail(format!(
                    "v{} counter {id:?} is {value}, {expected} increments settled",
                    f.validator
                ));
            }
        }
    }
    Verdict::Pass
}

/// Finality of every transaction that needed no retry lands exactly two
/// request/response waves after submission: the certificate forms on the
/// quorum-th signature reply, and finality on the quorum-th acceptance of
/// the certificate sent at that instant.
fn two_wave_finality(v: &View) -> Verdict {
    if !v.trace.header.byzantine.is_empty() {
        return Verdict::Skipped("Byzantine validators may send unusable replies".into());
    }
    match two_wave_count(v.trace) {
        Err(why) => fail(why),
        Ok(0) => Verdict::Skipped("no transaction completed without retries".into()),
        Ok(_) => Verdict::Pass,
    }
}

/// Number of final transactions whose timing was checked against the
/// two-wave rule; those that needed a retry are not counted.
pub fn two_wave_count(trace: &Trace) -> Result<usize, String> {
    let v = View::new(trace);
    let stake_of = |epoch: u64, actor: &str| -> u64 {
        actor[1..].parse::<u16>().map_or(0, |i| v.stake_in(epoch, i))
    };
    // Arrival time at which replies accumulate quorum stake.
    let quorum_arrival = |epoch: u64, mut replies: Vec<(u64, &str)>| -> Option<u64> {
        replies.sort();
        let mut acc = 0;
        let mut seen = BTreeSet::new();
        for (t, from) in replies {
            if seen.insert(from) {
                acc += stake_of(epoch, from);
            }
            if acc >= v.quorum_in(epoch) {
                return Some(t);
            }
        }
        None
    };
    struct Waves<'e> {
        epoch: u64,
        submitted: u64,
        requests: Vec<(&'e str, u64, &'e str)>,
        replies: Vec<(&'e str, u64, &'e str)>,
        formed: Option<u64>,
        fin: Option<u64>,
    }
    let mut by_tx: BTreeMap<TxDigest, Waves> = BTreeMap::new();
    for e in &v.trace.events {
        match e {
            TraceEvent::TxSubmitted {
                t,
                tx,
                epoch,
                op_kind,
                ..
            } if op_kind != "equivocation" => {
                by_tx.insert(
                    *tx,
                    Waves {
                        epoch: *epoch,
                        submitted: *t,
                        requests: vec![],
                        replies: vec![],
                        formed: None,
                        fin: None,
                    },
                );
            }
            TraceEvent::Msg {
                t,
                deliver,
                from,
                to,
                msg,
                tx: Some(tx),
                ..
            } => {
                if let Some(w) = by_tx.get_mut(tx) {
                    if from.starts_with('c') {
                        w.requests.push((msg.as_str(), *t, to.as_str()));
                    } else if to.starts_with('c') {
                        w.replies.push((msg.as_str(), *deliver, from.as_str()));
                    }
                }
            }
            TraceEvent::CertFormed { t, tx, .. } => {
                if let Some(w) = by_tx.get_mut(tx) {
                    w.formed = Some(*t);
                }
            }
            TraceEvent::Final { t, tx, .. } => {
                if let Some(w) = by_tx.get_mut(tx) {
                    w.fin = Some(*t);
                }
            }
            _ => {}
        }
    }
    let mut checked = 0;
    for (tx, w) in &by_tx {
        let (Some(formed), Some(fin)) = (w.formed, w.fin) else {
            continue;
        };
        let sends = |kind: &str| -> Vec<(u64, &str)> {
            w.requests
                .iter()
                .filter(|(m, _, _)| *m == kind)
                .map(|(_, t, to)| (*t, *to))
                .collect()
        };
        let (tx_sends, cert_sends) = (sends("tx"), sends("cert"));
        let targets: BTreeSet<&str> = tx_sends.iter().map(|(_, to)| *to).collect();
        let retried = tx_sends.len() != targets.len()
            || tx_sends.iter().any(|(t, _)| *t != w.submitted)
            || cert_sends.iter().any(|(t, _)| *t != formed)
            || w.replies.iter().any(|(m, _, _)| m.ends_with(":missing"));
        if retried {
            continue;
        }
        let wave1: Vec<(u64, &str)> = w
            .replies
            .iter()
            .filter(|(m, _, _)| *m == "tx_reply:ok")
            .map(|(_, t, from)| (*t, *from))
            .collect();
        let wave2: Vec<(u64, &str)> = w
            .replies
            .iter()
            .filter(|(m, t, _)| is_acceptance(m) && *t >= formed)
            .map(|(_, t, from)| (*t, *from))
            .collect();
        if quorum_arrival(w.epoch, wave1) != Some(formed) {
            return Err(format!(
                "{tx:?}: certificate did not form on the quorum-th signature reply"
            ));
        }
        if quorum_arrival(w.epoch, wave2) != Some(fin) {
            return Err(format!(
                "{tx:?}: finality was not the quorum-th acceptance of the certificate"
            ));
        }
        checked += 1;
    }
    Ok(checked)
}

fn correct_clients_settle(v: &View) -> Verdict {
    if let Some(epoch) = v.overloaded_epoch() {
        return Verdict::Skipped(format!("no correct quorum in epoch {epoch}"));
    }
    let crashed: BTreeSet<usize> = v
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::ClientCrash { client, .. } => Some(*client),
            _ => None,
        })
        .collect();
    let mut open: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for e in &v.trace.events {
        match e {
            TraceEvent::TxSubmitted {
                client, op, op_kind, ..
            } if op_kind != "equivocation" && !crashed.contains(client) => {
                open.entry((*client, *op)).or_insert(true);
            }
            TraceEvent::Settled { client, op, .. } => {
                open.insert((*client, *op), false);
            }
            TraceEvent::OpFailed {
                client, op, reason, ..
            } => {
                return fail(format!("client {client} operation {op} failed: {reason}"));
            }
            _ => {}
        }
    }
    let pending: Vec<_> = open.iter().filter(|(_, o)| **o).map(|(k, _)| *k).collect();
    if !pending.is_empty() {
        return fail(format!(
            "{} operations never settled, first {:?}",
            pending.len(),
            pending[0]
        ));
    }
    if !v.complete() {
        return fail("run hit its deadline before quiescence".into());
    }
    Verdict::Pass
}
