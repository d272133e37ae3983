//! Declarative scenario description, loaded from TOML.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Hard stop in ticks; runs normally end earlier, at quiescence.
    pub duration: u64,
    pub committee: CommitteeSpec,
    pub network: NetworkSpec,
    pub consensus: ConsensusSpec,
    pub epochs: EpochSpec,
    pub workload: WorkloadSpec,
    pub faults: FaultSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "unnamed".into(),
            seed: 0,
            duration: 100_000,
            committee: CommitteeSpec::default(),
            network: NetworkSpec::default(),
            consensus: ConsensusSpec::default(),
            epochs: EpochSpec::default(),
            workload: WorkloadSpec::default(),
            faults: FaultSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeSpec {
    pub size: u16,
    /// Per-validator stake; equal stake when absent.
    pub stakes: Option<Vec<u64>>,
}

impl Default for CommitteeSpec {
    fn default() -> Self {
        CommitteeSpec {
            size: 4,
            stakes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub min_delay: u64,
    pub max_delay: u64,
    pub drop_probability: f64,
    /// Drops allowed per message before delivery is forced.
    pub max_retransmissions: u32,
    /// Added to a message's delay for each drop.
    pub retransmit_timeout: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            min_delay: 10,
            max_delay: 50,
            drop_probability: 0.0,
            max_retransmissions: 3,
            retransmit_timeout: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusSpec {
    /// Ticks between commits.
    pub commit_interval: u64,
}

impl Default for ConsensusSpec {
    fn default() -> Self {
        ConsensusSpec {
            commit_interval: 120,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochSpec {
    pub checkpoints_before_change: u64,
    pub min_stake: u64,
    /// Epoch changes to perform; every validator registers for each.
    pub changes: u64,
}

impl Default for EpochSpec {
    fn default() -> Self {
        EpochSpec {
            checkpoints_before_change: 8,
            min_stake: 1,
            changes: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub clients: usize,
    pub ops_per_client: usize,
    /// Keep issuing operations until this epoch starts (overrides
    /// `ops_per_client` as the stopping rule).
    pub until_epoch: Option<u64>,
    pub owned_weight: u32,
    pub shared_weight: u32,
    pub ptb_weight: u32,
    pub ptb_size: usize,
    pub shared_objects: usize,
    /// Ticks between one operation settling and the next starting.
    pub think_time: u64,
    pub start_at: u64,
    /// Ticks before a client re-sends to validators that have not answered.
    pub retry_timeout: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            clients: 4,
            ops_per_client: 5,
            until_epoch: None,
            owned_weight: 1,
            shared_weight: 0,
            ptb_weight: 0,
            ptb_size: 10,
            shared_objects: 1,
            think_time: 0,
            start_at: 0,
            retry_timeout: 400,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    pub validators: Vec<ValidatorFault>,
    pub clients: Vec<ClientFault>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorFault {
    pub validator: u16,
    pub crash_at: Option<u64>,
    pub recover_at: Option<u64>,
    /// Crash inside the next batch write after `crash_at`, once this many
    /// ops of it are applied, instead of crashing immediately.
    pub mid_write: Option<usize>,
    pub byzantine: Option<Byzantine>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Byzantine {
    /// Signs every valid transaction, ignoring its own locks.
    SignBoth,
    /// Never answers clients.
    Silent,
    /// Answers clients with invalid signatures.
    Garbage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientFault {
    pub client: usize,
    pub behavior: ClientBehavior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClientBehavior {
    /// Sends two conflicting transactions on the same object. `orders[i]`
    /// lists which of them (1 or 2) validator `i` receives, in order; each
    /// is sent after the previous one is answered. With `renew`, a fresh
    /// transaction on the same object is issued once the epoch changes.
    Equivocator {
        #[serde(default)]
        orders: Vec<Vec<u8>>,
        #[serde(default)]
        renew: bool,
    },
    /// After `after_ops` operations, assembles a certificate, hands it only
    /// to `deliver_to`, and stops.
    Crasher {
        after_ops: usize,
        #[serde(default)]
        deliver_to: Vec<u16>,
    },
    /// Sends every message twice.
    Resubmitter,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if i64::try_from(self.seed).is_err() {
            return bad("seed must fit a TOML integer (at most i64::MAX)".into());
        }
        let n = self.committee.size;
        if n == 0 {
            return bad("committee.size must be positive".into());
        }
        if let Some(stakes) = &self.committee.stakes {
            if stakes.len() != n as usize || stakes.contains(&0) {
                return bad("committee.stakes needs one positive stake per validator".into());
            }
        }
        let net = &self.network;
        if net.min_delay > net.max_delay {
            return bad("network.min_delay exceeds network.max_delay".into());
        }
        if !(0.0..1.0).contains(&net.drop_probability) {
            return bad("network.drop_probability must be in [0, 1)".into());
        }
        if self.consensus.commit_interval == 0 {
            return bad("consensus.commit_interval must be positive".into());
        }
        let w = &self.workload;
        if w.owned_weight + w.shared_weight + w.ptb_weight == 0 && w.clients > 0 {
            return bad("workload needs a positive operation weight".into());
        }
        if w.shared_weight > 0 && w.shared_objects == 0 {
            return bad("shared operations need workload.shared_objects > 0".into());
        }
        if w.ptb_weight > 0 && w.ptb_size == 0 {
            return bad("workload.ptb_size must be positive".into());
        }
        if w.retry_timeout == 0 {
            return bad("workload.retry_timeout must be positive".into());
        }
        for f in &self.faults.validators {
            if f.validator >= n {
                return bad(format!("fault for unknown validator {}", f.validator));
            }
            if let (Some(c), Some(r)) = (f.crash_at, f.recover_at) {
                if r <= c {
                    return bad(format!("validator {} recovers before it crashes", f.validator));
                }
            }
            if f.recover_at.is_some() && f.crash_at.is_none() {
                return bad(format!("validator {} recovers without crashing", f.validator));
            }
        }
        for f in &self.faults.clients {
            if f.client >= w.clients {
                return bad(format!("fault for unknown client {}", f.client));
            }
            match &f.behavior {
                ClientBehavior::Equivocator { orders, .. } => {
                    if !orders.is_empty() && orders.len() != n as usize {
                        return bad("equivocator orders need one entry per validator".into());
                    }
                    if orders.iter().flatten().any(|t| *t != 1 && *t != 2) {
                        return bad("equivocator orders may only name transactions 1 and 2".into());
                    }
                }
                ClientBehavior::Crasher { deliver_to, .. } => {
                    if deliver_to.iter().any(|v| *v >= n) {
                        return bad("crasher delivers to an unknown validator".into());
                    }
                }
                ClientBehavior::Resubmitter => {}
            }
        }
        Ok(())
    }

    pub fn byzantine(&self, validator: u16) -> Option<Byzantine> {
        self.faults
            .validators
            .iter()
            .filter(|f| f.validator == validator)
            .find_map(|f| f.byzantine)
    }

    pub fn client_behavior(&self, client: usize) -> Option<&ClientBehavior> {
        self.faults
            .clients
            .iter()
            .find(|f| f.client == client)
            .map(|f| &f.behavior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let s = Scenario::from_toml(
            r#"
            name = "x"
            [network]
            drop_probability = 0.25
            [[faults.clients]]
            client = 1
            behavior = { kind = "crasher", after_ops = 2, deliver_to = [0] }
            "#,
        )
        .unwrap();
        assert_eq!(s.network.max_delay, 50);
        assert_eq!(s.network.drop_probability, 0.25);
        assert_eq!(
            s.client_behavior(1),
            Some(&ClientBehavior::Crasher {
                after_ops: 2,
                deliver_to: vec![0]
            })
        );
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[committee]\nsize = 0",
            "[network]\nmin_delay = 60",
            "[network]\ndrop_probability = 1.0",
            "[[faults.validators]]\nvalidator = 9",
            "[[faults.validators]]\nvalidator = 0\ncrash_at = 5\nrecover_at = 5",
            "unknown_key = 1",
        ] {
            assert!(Scenario::from_toml(text).is_err(), "{text}");
        }
    }
}
