//! Declarative network configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::faults::Fault;
use crate::agreement::{AgreementPolicy, AgreementPredicate};
use crate::consensus::ConsensusPolicy;
use crate::recovery::{CheckpointSchedule, RecoveryStrategy, DEFAULT_CHECKPOINT_CAPACITY};
use crate::sql::engine::QuirkConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSpec {
    pub table: String,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrgSpec {
    pub id: String,
    #[serde(default)]
    pub quirks: QuirkConfig,
    /// Ticks added to every block this organization executes.
    #[serde(default)]
    pub extra_delay: u64,
    /// Conditions this organization checks before agreeing to a transaction.
    #[serde(default)]
    pub predicates: Vec<PredicateSpec>,
}

impl OrgSpec {
    pub fn new(id: impl Into<String>) -> Self {
        OrgSpec { id: id.into(), quirks: QuirkConfig::default(), extra_delay: 0, predicates: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub seed: u64,
    pub organizations: Vec<OrgSpec>,
    /// Organizations that must hold an equal hash; defaults to a majority.
    pub consensus_threshold: Option<usize>,
    pub blocksize: usize,
    /// Ticks after the oldest queued transaction at which a partial block is cut.
    pub block_timeout: u64,
    pub checkpoint: CheckpointSchedule,
    pub checkpoint_capacity: usize,
    pub recovery: RecoveryStrategy,
    pub agreement: Vec<AgreementPolicy>,
    pub clients: usize,
    /// Transactions proposed per tick, across all clients.
    pub submit_rate: usize,
    /// Transactions an organization executes per tick.
    pub exec_rate: usize,
    /// Sessions of the staged executor.
    pub sessions: usize,
    /// Ticks an undecided organization waits on a conflicting vote before
    /// checking its own state.
    pub vote_timeout: u64,
    /// Ticks excluded from throughput.
    pub ramp_up: u64,
    pub max_ticks: u64,
    pub faults: Vec<Fault>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            seed: 1,
            organizations: ["O1", "O2", "O3"].into_iter().map(OrgSpec::new).collect(),
            consensus_threshold: None,
            blocksize: 4096,
            block_timeout: 2,
            checkpoint: CheckpointSchedule::default(),
            checkpoint_capacity: DEFAULT_CHECKPOINT_CAPACITY,
            recovery: RecoveryStrategy::default(),
            agreement: Vec::new(),
            clients: 3,
            submit_rate: 4096,
            exec_rate: 4096,
            sessions: 4,
            vote_timeout: 3,
            ramp_up: 5,
            max_ticks: 100_000,
            faults: Vec::new(),
        }
    }
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: NetworkConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn org_ids(&self) -> Vec<String> {
        self.organizations.iter().map(|o| o.id.clone()).collect()
    }

    pub fn policy(&self) -> Result<ConsensusPolicy, ConfigError> {
        let n = self.organizations.len();
        match self.consensus_threshold {
            Some(c) => ConsensusPolicy::new(c, n).map_err(|e| invalid(e.to_string())),
            None if n > 0 => Ok(ConsensusPolicy::majority(n)),
            None => Err(invalid("no organizations")),
        }
    }

    pub fn client_ids(&self) -> Vec<String> {
        (1..=self.clients).map(|i| format!("C{i}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy()?;
        let mut ids = BTreeSet::new();
        for org in &self.organizations {
            if org.id.is_empty() || !ids.insert(org.id.as_str()) {
                return Err(invalid(format!("organization id `{}` is empty or repeated", org.id)));
            }
            for p in &org.predicates {
                AgreementPredicate::parse(&p.table, &p.predicate)
                    .map_err(|e| invalid(format!("predicate of {}: {e}", org.id)))?;
            }
        }
        for client in self.client_ids() {
            if ids.contains(client.as_str()) {
                return Err(invalid(format!("client id `{client}` clashes with an organization")));
            }
        }
        if self.blocksize == 0 || self.clients == 0 || self.submit_rate == 0 || self.exec_rate == 0 {
            return Err(invalid("blocksize, clients, submit_rate and exec_rate must be positive"));
        }
        for policy in &self.agreement {
            if let Some(org) = policy.required_orgs.iter().find(|o| !ids.contains(o.as_str())) {
                return Err(invalid(format!("agreement policy on `{}` names unknown organization `{org}`", policy.table)));
            }
        }
        for fault in &self.faults {
            if let Some(org) = fault.orgs().into_iter().find(|o| !ids.contains(o)) {
                return Err(invalid(format!("fault names unknown organization `{org}`")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
consensus_threshold = 2
blocksize = 256
block_timeout = 3
recovery = "full-replay"
clients = 2

[checkpoint]
interval = 3

[[organizations]]
id = "O1"

[[organizations]]
id = "O2"
extra_delay = 4
quirks = { decimal_rounding = "truncate" }

[[organizations]]
id = "O3"
predicates = [{ table = "fund", predicate = "fund.availablemoney[id = 1] >= 0" }]

[[agreement]]
table = "fund"
required_orgs = ["O3"]

[[faults]]
kind = "kill-org"
org = "O3"
tick = 40
"#;

    #[test]
    fn sample_parses() {
        let cfg = NetworkConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.policy().unwrap().threshold(), 2);
        assert_eq!(cfg.organizations[1].extra_delay, 4);
        assert_eq!(cfg.recovery, RecoveryStrategy::FullReplay);
        assert_eq!(cfg.checkpoint, CheckpointSchedule::every(3));
        assert_eq!(cfg.client_ids(), vec!["C1", "C2"]);
        assert_eq!(NetworkConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(NetworkConfig::from_toml("blocksize = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(NetworkConfig::from_toml("consensus_threshold = 4"), Err(ConfigError::Invalid(_))));
        assert!(matches!(NetworkConfig::from_toml("bogus = 1"), Err(ConfigError::Syntax(_))));
        let dup = "[[organizations]]\nid = \"A\"\n[[organizations]]\nid = \"A\"";
        assert!(matches!(NetworkConfig::from_toml(dup), Err(ConfigError::Invalid(_))));
        let unknown = "[[faults]]\nkind = \"kill-org\"\norg = \"O9\"\ntick = 1";
        assert!(matches!(NetworkConfig::from_toml(unknown), Err(ConfigError::Invalid(_))));
    }
}
