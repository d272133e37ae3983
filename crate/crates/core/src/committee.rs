use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::ValidatorId;
use crate::digest::Encode;

pub type EpochId = u64;
pub type Stake = u64;

/// Stake-weighted membership for one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    pub epoch: EpochId,
    members: BTreeMap<ValidatorId, Stake>,
    total_stake: Stake,
}

impl Committee {
    /// Zero-stake members are dropped. Panics if no stake remains.
    pub fn new(epoch: EpochId, members: impl IntoIterator<Item = (ValidatorId, Stake)>) -> Self {
        let members: BTreeMap<_, _> = members.into_iter().filter(|(_, s)| *s > 0).collect();
        let total_stake = members.values().sum();
        assert!(total_stake > 0, "committee needs positive total stake");
        Committee {
            epoch,
            members,
            total_stake,
        }
    }

    /// `n` members with one unit of stake each, ids `0..n`.
    pub fn equal(epoch: EpochId, n: u16) -> Self {
        Committee::new(epoch, (0..n).map(|i| (ValidatorId(i), 1)))
    }

    pub fn total_stake(&self) -> Stake {
        self.total_stake
    }

    pub fn members(&self) -> &BTreeMap<ValidatorId, Stake> {
        &self.members
    }

    pub fn ids(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.members.keys().copied()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, id: &ValidatorId) -> bool {
        self.members.contains_key(id)
    }

    pub fn stake(&self, id: &ValidatorId) -> Stake {
        self.members.get(id).copied().unwrap_or(0)
    }

    /// `⌊2·total/3⌋ + 1`.
    pub fn quorum_threshold(&self) -> Stake {
        quorum_threshold(self.total_stake)
    }

    /// `⌊total/3⌋ + 1`.
    pub fn validity_threshold(&self) -> Stake {
        validity_threshold(self.total_stake)
    }

    /// Stake of the distinct members in `signers`; non-members count zero.
    pub fn stake_of<'a>(&self, signers: impl IntoIterator<Item = &'a ValidatorId>) -> Stake {
        let mut seen = std::collections::BTreeSet::new();
        signers
            .into_iter()
            .filter(|id| seen.insert(**id))
            .map(|id| self.stake(id))
            .sum()
    }

    pub fn reaches_quorum<'a>(&self, signers: impl IntoIterator<Item = &'a ValidatorId>) -> bool {
        self.stake_of(signers) >= self.quorum_threshold()
    }

    pub fn with_epoch(&self, epoch: EpochId) -> Committee {
        Committee {
            epoch,
            ..self.clone()
        }
    }
}

impl Encode for Committee {
    fn encode(&self, out: &mut Vec<u8>) {
        self.epoch.encode(out);
        self.members.encode(out);
    }
}

pub fn quorum_threshold(total_stake: Stake) -> Stake {
    2 * total_stake / 3 + 1
}

pub fn validity_threshold(total_stake: Stake) -> Stake {
    total_stake / 3 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thresholds() {
        assert_eq!(Committee::equal(0, 4).quorum_threshold(), 3);
        assert_eq!(Committee::equal(0, 10).quorum_threshold(), 7);
        assert_eq!(quorum_threshold(100), 67);
        assert_eq!(Committee::equal(0, 4).validity_threshold(), 2);
        assert_eq!(validity_threshold(100), 34);
        assert_eq!(validity_threshold(1), 1);
    }

    #[test]
    fn duplicate_signers_count_once() {
        let c = Committee::equal(0, 4);
        let ids = [ValidatorId(0), ValidatorId(0), ValidatorId(1)];
        assert_eq!(c.stake_of(ids.iter()), 2);
        assert!(!c.reaches_quorum(ids.iter()));
    }

    proptest! {
        // Any two quorums overlap in at least validity-threshold stake.
        #[test]
        fn quorum_intersection(
            stakes in prop::collection::vec(1u64..20, 1..9),
            mask_a in any::<u16>(),
            mask_b in any::<u16>(),
        ) {
            let c = Committee::new(0, stakes.iter().enumerate().map(|(i, s)| (ValidatorId(i as u16), *s)));
            let pick = |mask: u16| -> Vec<ValidatorId> {
                c.ids().filter(|id| mask & (1 << id.0) != 0).collect()
            };
            let (a, b) = (pick(mask_a), pick(mask_b));
            if c.reaches_quorum(a.iter()) && c.reaches_quorum(b.iter()) {
                let both: Vec<_> = a.iter().filter(|id| b.contains(id)).copied().collect();
                prop_assert!(c.stake_of(both.iter()) >= c.validity_threshold());
            }
        }
    }
}
