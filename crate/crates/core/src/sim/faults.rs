//! Scripted faults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ConfigError;
use crate::ledger::RoundIndex;

/// A primary key value as written in a fault script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeyLiteral {
    Int(i64),
    Text(String),
}

impl KeyLiteral {
    pub fn to_sql(&self) -> String {
        match self {
            KeyLiteral::Int(v) => v.to_string(),
            KeyLiteral::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }
}

/// One row change applied outside the protocol. `set` maps column names to
/// SQL expressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowChange {
    pub table: String,
    /// Value of the table's single primary key column.
    pub key: KeyLiteral,
    pub set: BTreeMap<String, String>,
}

impl RowChange {
    pub fn to_sql(&self, pk_column: &str) -> String {
        let sets: Vec<String> = self.set.iter().map(|(c, v)| format!("{c} = {v}")).collect();
        format!("UPDATE {} SET {} WHERE {pk_column} = {}", self.table, sets.join(", "), self.key.to_sql())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fault {
    /// Tamper with a live table of `org` at the start of `tick`.
    CorruptRow {
        org: String,
        tick: u64,
        #[serde(flatten)]
        change: RowChange,
    },
    /// Tamper with the newest checkpoint of `org`.
    CorruptCheckpoint {
        org: String,
        tick: u64,
        #[serde(flatten)]
        change: RowChange,
    },
    /// `org` stops answering and executing from `tick` on.
    KillOrg { org: String, tick: u64 },
    /// The orderer hands `org` a different block `block`: its last transaction is dropped.
    EquivocateOrderer { org: String, block: RoundIndex },
    /// Vote requests from `to` for votes of `from` on blocks `first..=last` go unanswered.
    DropVotes { from: String, to: String, first: RoundIndex, last: RoundIndex },
    /// Votes of `org` for `block` are altered in transit and fail verification.
    TamperVote { org: String, block: RoundIndex },
}

impl Fault {
    pub fn orgs(&self) -> Vec<&str> {
        match self {
            Fault::CorruptRow { org, .. }
            | Fault::CorruptCheckpoint { org, .. }
            | Fault::KillOrg { org, .. }
            | Fault::EquivocateOrderer { org, .. }
            | Fault::TamperVote { org, .. } => vec![org],
            Fault::DropVotes { from, to, .. } => vec![from, to],
        }
    }

    /// Tick at which a timed fault fires.
    pub fn tick(&self) -> Option<u64> {
        match self {
            Fault::CorruptRow { tick, .. } | Fault::CorruptCheckpoint { tick, .. } | Fault::KillOrg { tick, .. } => {
                Some(*tick)
            }
            _ => None,
        }
    }
}

/// A fault list as stored in its own file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScript {
    #[serde(default)]
    pub faults: Vec<Fault>,
}

impl FaultScript {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fault script serializes")
    }
}
