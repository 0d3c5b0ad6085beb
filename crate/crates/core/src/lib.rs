//! Execute-then-agree replication of relational state across organizations.

pub mod agreement;
pub mod bench;
pub mod consensus;
pub mod crypto;
pub mod digest;
pub mod hash;
pub mod ledger;
pub mod org;
pub mod parallel;
pub mod recovery;
pub mod sim;
pub mod smallbank;
pub mod sql;

pub use hash::EffectHash;
