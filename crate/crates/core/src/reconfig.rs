//! The epoch-change contract: Register → Ready → End-of-Epoch → Handover.
//!
//! Every node and the sequencer run a replica fed by the system calls found
//! in consensus commits, so all of them agree on the contract state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::committee::{quorum_threshold, Committee, EpochId, Stake};
use crate::crypto::ValidatorId;
use crate::digest::Encode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigParams {
    /// Checkpoints that must exist before new validators may signal ready.
    pub checkpoints_before_change: u64,
    /// Minimum stake to join the next committee.
    pub min_stake: Stake,
}

impl Default for ReconfigParams {
    fn default() -> Self {
        ReconfigParams {
            checkpoints_before_change: 8,
            min_stake: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemCall {
    Register { validator: ValidatorId, stake: Stake },
    Ready { validator: ValidatorId },
    EndOfEpoch { validator: ValidatorId },
    Handover { validator: ValidatorId },
}

impl SystemCall {
    pub fn sender(&self) -> ValidatorId {
        match self {
            SystemCall::Register { validator, .. }
            | SystemCall::Ready { validator }
            | SystemCall::EndOfEpoch { validator }
            | SystemCall::Handover { validator } => *validator,
        }
    }
}

impl Encode for SystemCall {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            SystemCall::Register { validator, stake } => {
                out.push(0);
                validator.encode(out);
                stake.encode(out);
            }
            SystemCall::Ready { validator } => {
                out.push(1);
                validator.encode(out);
            }
            SystemCall::EndOfEpoch { validator } => {
                out.push(2);
                validator.encode(out);
            }
            SystemCall::Handover { validator } => {
                out.push(3);
                validator.encode(out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Register,
    Ready,
    EndOfEpoch,
    Handover,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractEvent {
    /// A quorum of the next committee is ready: the current committee stops
    /// signing transactions and accepting certificates.
    PauseTxLocking,
    /// A quorum of the current committee has voted to end the epoch.
    EpochEdge(u64),
    /// The epoch is over; the next committee takes over.
    Handover(Committee),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigContract {
    params: ReconfigParams,
    old: Committee,
    new_keys: BTreeMap<ValidatorId, Stake>,
    total_new_stake: Stake,
    epoch_edge: u64,
    phase: Phase,
    stake: Stake,
    counted: BTreeSet<ValidatorId>,
}

impl ReconfigContract {
    pub fn new(params: ReconfigParams, committee: Committee) -> Self {
        ReconfigContract {
            params,
            old: committee,
            new_keys: BTreeMap::new(),
            total_new_stake: 0,
            epoch_edge: 0,
            phase: Phase::Register,
            stake: 0,
            counted: BTreeSet::new(),
        }
    }

    pub fn params(&self) -> &ReconfigParams {
        &self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn epoch(&self) -> EpochId {
        self.old.epoch
    }

    pub fn committee(&self) -> &Committee {
        &self.old
    }

    pub fn epoch_edge(&self) -> u64 {
        self.epoch_edge
    }

    pub fn is_registered(&self, id: &ValidatorId) -> bool {
        self.new_keys.contains_key(id)
    }

    /// True if `id`'s vote has been counted in the current phase.
    pub fn has_counted(&self, id: &ValidatorId) -> bool {
        self.counted.contains(id)
    }

    fn advance(&mut self, phase: Phase) {
        self.phase = phase;
        self.stake = 0;
        self.counted.clear();
    }

    pub fn register(&mut self, sender: ValidatorId, stake: Stake) {
        if self.phase != Phase::Register || stake < self.params.min_stake {
            return;
        }
        if self.new_keys.insert(sender, stake).is_none() {
            self.total_new_stake += stake;
        } else {
            self.total_new_stake = self.new_keys.values().sum();
        }
    }

    pub fn ready(&mut self, sender: ValidatorId, seq: u64) -> Option<ContractEvent> {
        if self.phase == Phase::Register && seq >= self.params.checkpoints_before_change {
            self.advance(Phase::Ready);
        }
        if self.phase != Phase::Ready {
            return None;
        }
        if let Some(stake) = self.new_keys.get(&sender) {
            if self.counted.insert(sender) {
                self.stake += stake;
            }
        }
        if self.stake >= quorum_threshold(self.total_new_stake) {
            self.advance(Phase::EndOfEpoch);
            return Some(ContractEvent::PauseTxLocking);
        }
        None
    }

    pub fn end_of_epoch(&mut self, sender: ValidatorId, seq: u64) -> Option<ContractEvent> {
        if self.phase != Phase::EndOfEpoch {
            return None;
        }
        if self.old.contains(&sender) && self.counted.insert(sender) {
            self.stake += self.old.stake(&sender);
        }
        if self.stake >= self.old.quorum_threshold() {
            self.advance(Phase::Handover);
            self.epoch_edge = seq;
            return Some(ContractEvent::EpochEdge(seq));
        }
        None
    }

    pub fn handover(&mut self, seq: u64) -> Option<ContractEvent> {
        if self.phase != Phase::Handover || seq < self.epoch_edge + 1 {
            return None;
        }
        let next = Committee::new(self.old.epoch + 1, std::mem::take(&mut self.new_keys));
        self.old = next.clone();
        self.total_new_stake = 0;
        self.epoch_edge = 0;
        self.advance(Phase::Register);
        Some(ContractEvent::Handover(next))
    }

    /// Applies a sequenced call found in the commit with sequence `seq`.
    pub fn apply(&mut self, call: &SystemCall, seq: u64) -> Option<ContractEvent> {
        match call {
            SystemCall::Register { validator, stake } => {
                self.register(*validator, *stake);
                None
            }
            SystemCall::Ready { validator } => self.ready(*validator, seq),
            SystemCall::EndOfEpoch { validator } => self.end_of_epoch(*validator, seq),
            SystemCall::Handover { .. } => self.handover(seq),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(i: u16) -> ValidatorId {
        ValidatorId(i)
    }

    fn contract(s: u64, t: Stake) -> ReconfigContract {
        ReconfigContract::new(
            ReconfigParams {
                checkpoints_before_change: s,
                min_stake: t,
            },
            Committee::equal(0, 4),
        )
    }

    fn register_all(c: &mut ReconfigContract) {
        for i in 0..4 {
            c.register(v(i), 5);
        }
    }

    #[test]
    fn registration_threshold() {
        let mut c = contract(8, 5);
        c.register(v(0), 5);
        c.register(v(1), 4);
        assert!(c.is_registered(&v(0)));
        assert!(!c.is_registered(&v(1)));
        c.ready(v(0), 8);
        c.register(v(2), 5);
        assert!(!c.is_registered(&v(2)));
    }

    #[test]
    fn ready_waits_for_checkpoint_s() {
        let mut c = contract(8, 1);
        register_all(&mut c);
        assert_eq!(c.ready(v(0), 7), None);
        assert_eq!(c.phase(), Phase::Register);
        assert_eq!(c.ready(v(0), 8), None);
        assert_eq!(c.phase(), Phase::Ready);
        assert_eq!(c.ready(v(9), 8), None);
        assert_eq!(c.ready(v(0), 9), None);
        assert_eq!(c.ready(v(1), 9), None);
        assert_eq!(c.ready(v(2), 9), Some(ContractEvent::PauseTxLocking));
        assert_eq!(c.phase(), Phase::EndOfEpoch);
    }

    #[test]
    fn end_of_epoch_counts_each_old_validator_once() {
        let mut c = contract(0, 1);
        register_all(&mut c);
        for i in 0..3 {
            c.ready(v(i), 0);
        }
        assert_eq!(c.end_of_epoch(v(0), 10), None);
        assert_eq!(c.end_of_epoch(v(0), 10), None);
        assert_eq!(c.end_of_epoch(v(1), 11), None);
        assert_eq!(c.phase(), Phase::EndOfEpoch);
        assert_eq!(c.end_of_epoch(v(2), 12), Some(ContractEvent::EpochEdge(12)));
        assert_eq!(c.epoch_edge(), 12);
    }

    #[test]
    fn handover_needs_one_more_checkpoint() {
        let mut c = contract(0, 1);
        register_all(&mut c);
        for i in 0..3 {
            c.ready(v(i), 0);
        }
        for i in 0..3 {
            c.end_of_epoch(v(i), 12);
        }
        assert_eq!(c.handover(12), None);
        let Some(ContractEvent::Handover(next)) = c.handover(13) else {
            panic!("expected handover");
        };
        assert_eq!(next.epoch, 1);
        assert_eq!(next.total_stake(), 20);
        assert_eq!(c.phase(), Phase::Register);
        assert_eq!(c.epoch(), 1);
        assert_eq!(c.handover(14), None);
    }

    #[test]
    fn phases_only_move_forward_in_order() {
        let mut c = contract(0, 1);
        assert_eq!(c.end_of_epoch(v(0), 1), None);
        assert_eq!(c.handover(5), None);
        assert_eq!(c.phase(), Phase::Register);
    }
}
