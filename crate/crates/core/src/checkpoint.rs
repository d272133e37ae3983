//! Per-commit checkpoints.
//!
//! Each consensus commit yields exactly one checkpoint with the same sequence
//! number. Certificates whose dependencies are not yet checkpointed are
//! deferred to a later commit, so every checkpoint is causally complete. The
//! included set is ordered topologically, ties broken by ascending digest.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::committee::{Committee, EpochId};
use crate::crypto::{AggregateSignature, AuthoritySignature, AuthoritySigner, AuthorityVerifier, ValidatorId};
use crate::digest::{Digest, Encode};
use crate::object::{TxDigest, GENESIS_TX};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: EpochId,
    pub seq: u64,
    pub prev_digest: Digest,
    /// `(transaction digest, effects digest)` in canonical order.
    pub contents: Vec<(TxDigest, Digest)>,
}

impl Encode for Checkpoint {
    fn encode(&self, out: &mut Vec<u8>) {
        self.epoch.encode(out);
        self.seq.encode(out);
        self.prev_digest.encode(out);
        self.contents.encode(out);
    }
}

impl Checkpoint {
    pub fn digest(&self) -> Digest {
        Digest::of(b"checkpoint\0", self)
    }
}

fn checkpoint_sign_message(epoch: EpochId, seq: u64, digest: &Digest) -> Vec<u8> {
    let mut m = b"checkpoint-sign\0".to_vec();
    epoch.encode(&mut m);
    seq.encode(&mut m);
    digest.encode(&mut m);
    m
}

/// One validator's signature over a checkpoint header, sequenced through
/// consensus.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointSig {
    pub epoch: EpochId,
    pub seq: u64,
    pub digest: Digest,
    pub validator: ValidatorId,
    pub sig: AuthoritySignature,
}

impl CheckpointSig {
    pub fn new(checkpoint: &Checkpoint, signer: &dyn AuthoritySigner) -> Self {
        let digest = checkpoint.digest();
        CheckpointSig {
            epoch: checkpoint.epoch,
            seq: checkpoint.seq,
            digest,
            validator: signer.id(),
            sig: signer.sign(&checkpoint_sign_message(checkpoint.epoch, checkpoint.seq, &digest)),
        }
    }

    pub fn verify(&self, verifier: &dyn AuthorityVerifier) -> bool {
        verifier.verify(
            self.validator,
            &checkpoint_sign_message(self.epoch, self.seq, &self.digest),
            &self.sig,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointCert {
    pub epoch: EpochId,
    pub seq: u64,
    pub digest: Digest,
    pub signatures: AggregateSignature,
}

/// A candidate for inclusion: its effects digest and dependencies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub digest: TxDigest,
    pub effects_digest: Digest,
    pub dependencies: BTreeSet<TxDigest>,
}

/// Splits `candidates` into a canonically ordered includable list and the
/// deferred remainder. A dependency is satisfied by genesis, by `included`
/// (earlier checkpoints), or by another includable candidate.
pub fn order_candidates(
    candidates: &[Candidate],
    included: &BTreeSet<TxDigest>,
) -> (Vec<Candidate>, Vec<TxDigest>) {
    let by_digest: BTreeMap<TxDigest, &Candidate> =
        candidates.iter().map(|c| (c.digest, c)).collect();
    let mut includable: BTreeSet<TxDigest> = by_digest.keys().copied().collect();
    loop {
        let blocked: Vec<TxDigest> = includable
            .iter()
            .filter(|d| {
                by_digest[*d].dependencies.iter().any(|dep| {
                    *dep != GENESIS_TX
                        && *dep != **d
                        && !included.contains(dep)
                        && !includable.contains(dep)
                })
            })
            .copied()
            .collect();
        if blocked.is_empty() {
            break;
        }
        for d in blocked {
            includable.remove(&d);
        }
    }

    // Kahn's algorithm over dependencies internal to the includable set.
    let mut indegree: BTreeMap<TxDigest, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<TxDigest, Vec<TxDigest>> = BTreeMap::new();
    for d in &includable {
        let internal: Vec<TxDigest> = by_digest[d]
            .dependencies
            .iter()
            .filter(|dep| *dep != d && includable.contains(*dep))
            .copied()
            .collect();
        indegree.insert(*d, internal.len());
        for dep in internal {
            dependents.entry(dep).or_default().push(*d);
        }
    }
    let mut ready: BTreeSet<TxDigest> = indegree
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(d, _)| *d)
        .collect();
    let mut ordered = Vec::with_capacity(includable.len());
    while let Some(d) = ready.pop_first() {
        ordered.push(by_digest[&d].clone());
        for next in dependents.get(&d).into_iter().flatten() {
            let n = indegree.get_mut(next).expect("tracked");
            *n -= 1;
            if *n == 0 {
                ready.insert(*next);
            }
        }
    }
    assert_eq!(
        ordered.len(),
        includable.len(),
        "dependency cycle among certificates"
    );

    let deferred = candidates
        .iter()
        .map(|c| c.digest)
        .filter(|d| !includable.contains(d))
        .collect();
    (ordered, deferred)
}

/// Sequenced work waiting to be checkpointed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCommit {
    pub epoch: EpochId,
    pub seq: u64,
    /// Certificates first sequenced in this commit.
    pub certs: Vec<TxDigest>,
    /// The commit that ends its epoch.
    pub closes_epoch: bool,
}

/// Builder state, fed by the commit stream in order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointBuilder {
    pub queue: VecDeque<PendingCommit>,
    pub deferred: Vec<TxDigest>,
    /// Every digest in any checkpoint so far, across epochs.
    pub included: BTreeSet<TxDigest>,
    pub chain: Vec<Checkpoint>,
    pub sigs: BTreeMap<(EpochId, u64), BTreeMap<ValidatorId, CheckpointSig>>,
    pub certified: BTreeMap<(EpochId, u64), CheckpointCert>,
}

impl CheckpointBuilder {
    pub fn last_digest(&self) -> Digest {
        self.chain.last().map_or(Digest::ZERO, Checkpoint::digest)
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.chain.last()
    }

    pub fn enqueue(&mut self, commit: PendingCommit) {
        self.queue.push_back(commit);
    }

    /// Builds the checkpoint for the oldest queued commit, provided every
    /// candidate has been executed locally (`lookup` returns its effects
    /// digest and dependencies). Returns `None` while blocked.
    pub fn try_build(
        &mut self,
        lookup: impl Fn(&TxDigest) -> Option<(Digest, BTreeSet<TxDigest>)>,
    ) -> Option<(Checkpoint, bool)> {
        let front = self.queue.front()?;
        let mut seen = BTreeSet::new();
        let mut candidates = Vec::new();
        for d in self.deferred.iter().chain(&front.certs) {
            if self.included.contains(d) || !seen.insert(*d) {
                continue;
            }
            let (effects_digest, dependencies) = lookup(d)?;
            candidates.push(Candidate {
                digest: *d,
                effects_digest,
                dependencies,
            });
        }
        let front = self.queue.pop_front().expect("checked");
        let (ordered, deferred) = order_candidates(&candidates, &self.included);
        let checkpoint = Checkpoint {
            epoch: front.epoch,
            seq: front.seq,
            prev_digest: self.last_digest(),
            contents: ordered
                .iter()
                .map(|c| (c.digest, c.effects_digest))
                .collect(),
        };
        self.included.extend(ordered.iter().map(|c| c.digest));
        self.deferred = deferred;
        self.chain.push(checkpoint.clone());
        Some((checkpoint, front.closes_epoch))
    }

    /// The local checkpoint at `(epoch, seq)`.
    pub fn get(&self, epoch: EpochId, seq: u64) -> Option<&Checkpoint> {
        self.chain
            .iter()
            .rev()
            .find(|c| c.epoch == epoch && c.seq == seq)
    }

    /// Records a sequenced signature. Forms a certificate once signatures over
    /// the locally built digest reach a quorum of `committee`; signatures over
    /// any other digest are ignored.
    pub fn add_signature(
        &mut self,
        sig: CheckpointSig,
        committee: &Committee,
        verifier: &dyn AuthorityVerifier,
    ) -> Option<CheckpointCert> {
        let key = (sig.epoch, sig.seq);
        if self.certified.contains_key(&key)
            || committee.epoch != sig.epoch
            || !committee.contains(&sig.validator)
            || !sig.verify(verifier)
        {
            return None;
        }
        self.sigs
            .entry(key)
            .or_default()
            .entry(sig.validator)
            .or_insert(sig);
        self.recheck(key.0, key.1, committee)
    }

    /// Retries certification for checkpoints whose signatures arrived before
    /// the local build.
    pub fn recheck(&mut self, epoch: EpochId, seq: u64, committee: &Committee) -> Option<CheckpointCert> {
        let key = (epoch, seq);
        let local = self.get(epoch, seq)?.digest();
        let sigs = self.sigs.get(&key)?;
        let matching: AggregateSignature = sigs
            .values()
            .filter(|s| s.digest == local)
            .map(|s| (s.validator, s.sig))
            .collect();
        if self.certified.contains_key(&key) || !committee.reaches_quorum(matching.keys()) {
            return None;
        }
        let cert = CheckpointCert {
            epoch,
            seq,
            digest: local,
            signatures: matching,
        };
        self.sigs.remove(&key);
        self.certified.insert(key, cert.clone());
        Some(cert)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MacKeyring;

    fn d(name: &str) -> TxDigest {
        TxDigest(Digest::hash(name.as_bytes()))
    }

    fn cand(digest: TxDigest, deps: &[TxDigest]) -> Candidate {
        Candidate {
            digest,
            effects_digest: Digest::of(b"fx\0", &digest),
            dependencies: deps.iter().copied().collect(),
        }
    }

    fn lookup_from(
        cands: Vec<Candidate>,
    ) -> impl Fn(&TxDigest) -> Option<(Digest, BTreeSet<TxDigest>)> {
        let map: BTreeMap<_, _> = cands.into_iter().map(|c| (c.digest, c)).collect();
        move |t| {
            map.get(t)
                .map(|c| (c.effects_digest, c.dependencies.clone()))
        }
    }

    fn commit(seq: u64, certs: &[TxDigest]) -> PendingCommit {
        PendingCommit {
            epoch: 0,
            seq,
            certs: certs.to_vec(),
            closes_epoch: false,
        }
    }

    #[test]
    fn gap_is_deferred_until_dependency_arrives() {
        let (a, b) = (d("a"), d("b"));
        let lookup = lookup_from(vec![cand(a, &[GENESIS_TX]), cand(b, &[a])]);
        let mut builder = CheckpointBuilder::default();
        builder.enqueue(commit(0, &[b]));
        builder.enqueue(commit(1, &[a]));
        let (c0, _) = builder.try_build(&lookup).unwrap();
        assert!(c0.contents.is_empty());
        assert_eq!(builder.deferred, vec![b]);
        let (c1, _) = builder.try_build(&lookup).unwrap();
        let order: Vec<_> = c1.contents.iter().map(|(t, _)| *t).collect();
        assert_eq!(order, vec![a, b]);
        assert_eq!(c1.prev_digest, c0.digest());
        assert_eq!(c0.prev_digest, Digest::ZERO);
    }

    #[test]
    fn independent_certs_ordered_by_digest() {
        let (x, y) = (d("x"), d("y"));
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        let (ordered, deferred) =
            order_candidates(&[cand(hi, &[]), cand(lo, &[])], &BTreeSet::new());
        assert_eq!(
            ordered.iter().map(|c| c.digest).collect::<Vec<_>>(),
            vec![lo, hi]
        );
        assert!(deferred.is_empty());
    }

    #[test]
    fn dependency_order_overrides_digest_order() {
        let (x, y) = (d("x"), d("y"));
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        let (ordered, _) = order_candidates(&[cand(lo, &[hi]), cand(hi, &[])], &BTreeSet::new());
        assert_eq!(
            ordered.iter().map(|c| c.digest).collect::<Vec<_>>(),
            vec![hi, lo]
        );
    }

    #[test]
    fn empty_commit_advances_sequence() {
        let mut builder = CheckpointBuilder::default();
        builder.enqueue(commit(0, &[]));
        builder.enqueue(commit(1, &[]));
        let lookup = lookup_from(vec![]);
        assert_eq!(builder.try_build(&lookup).unwrap().0.seq, 0);
        assert_eq!(builder.try_build(&lookup).unwrap().0.seq, 1);
        assert!(builder.try_build(&lookup).is_none());
    }

    #[test]
    fn blocked_until_executed_locally() {
        let a = d("a");
        let mut builder = CheckpointBuilder::default();
        builder.enqueue(commit(0, &[a]));
        assert!(builder.try_build(lookup_from(vec![])).is_none());
        assert_eq!(builder.queue.len(), 1);
        let (c, _) = builder.try_build(lookup_from(vec![cand(a, &[])])).unwrap();
        assert_eq!(c.contents.len(), 1);
    }

    #[test]
    fn duplicates_are_included_once() {
        let a = d("a");
        let lookup = lookup_from(vec![cand(a, &[])]);
        let mut builder = CheckpointBuilder::default();
        builder.enqueue(commit(0, &[a, a]));
        builder.enqueue(commit(1, &[a]));
        assert_eq!(builder.try_build(&lookup).unwrap().0.contents.len(), 1);
        assert!(builder.try_build(&lookup).unwrap().0.contents.is_empty());
    }

    fn built(n: u64) -> CheckpointBuilder {
        let mut builder = CheckpointBuilder::default();
        for seq in 0..n {
            builder.enqueue(commit(seq, &[]));
            builder.try_build(lookup_from(vec![])).unwrap();
        }
        builder
    }

    #[test]
    fn certificate_forms_at_quorum_and_ignores_divergent_digests() {
        let ring = MacKeyring::new(4);
        let committee = Committee::equal(0, 4);
        let mut builder = built(1);
        let local = builder.get(0, 0).unwrap().clone();
        let mut bogus = local.clone();
        bogus.contents.push((d("forged"), Digest::ZERO));

        assert!(builder
            .add_signature(CheckpointSig::new(&bogus, &ring.signer(ValidatorId(3))), &committee, &ring)
            .is_none());
        assert!(builder
            .add_signature(CheckpointSig::new(&local, &ring.signer(ValidatorId(0))), &committee, &ring)
            .is_none());
        assert!(builder
            .add_signature(CheckpointSig::new(&local, &ring.signer(ValidatorId(1))), &committee, &ring)
            .is_none());
        let cert = builder
            .add_signature(CheckpointSig::new(&local, &ring.signer(ValidatorId(2))), &committee, &ring)
            .unwrap();
        assert_eq!(cert.digest, local.digest());
        assert_eq!(cert.signatures.len(), 3);
    }

    #[test]
    fn signatures_before_local_build_are_rechecked() {
        let ring = MacKeyring::new(4);
        let committee = Committee::equal(0, 4);
        let reference = built(1).get(0, 0).unwrap().clone();
        let mut builder = CheckpointBuilder::default();
        for i in 0..3 {
            let s = CheckpointSig::new(&reference, &ring.signer(ValidatorId(i)));
            assert!(builder.add_signature(s, &committee, &ring).is_none());
        }
        builder.enqueue(commit(0, &[]));
        builder.try_build(lookup_from(vec![])).unwrap();
        assert!(builder.recheck(0, 0, &committee).is_some());
    }
}
