//! Local checkpoints and recovery strategies.
//!
//! Checkpoints are logical snapshots of every table taken at committed block
//! boundaries. They never enter the ledger: everything in them can be
//! recomputed from the ledger's transaction lists.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ledger::{Ledger, LedgerBlock, RoundIndex};
use crate::parallel::{execute_block, PreparedTxn};
use crate::sql::engine::{DatabaseSnapshot, Engine, EngineFailure};
use crate::sql::parser::parse_transaction;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// State as of the commit of this block.
    pub block_id: RoundIndex,
    pub tables: DatabaseSnapshot,
}

impl Checkpoint {
    /// Labels in the form `{table}_block_{id}`.
    pub fn labels(&self) -> Vec<String> {
        self.tables.keys().map(|t| format!("{t}_block_{}", self.block_id)).collect()
    }
}

pub const DEFAULT_CHECKPOINT_CAPACITY: usize = 3;

/// Most recent checkpoints, newest first.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    capacity: usize,
    checkpoints: VecDeque<Checkpoint>,
}

impl Default for CheckpointStore {
    fn default() -> Self {
        CheckpointStore::new(DEFAULT_CHECKPOINT_CAPACITY)
    }
}

impl CheckpointStore {
    pub fn new(capacity: usize) -> Self {
        CheckpointStore { capacity: capacity.max(1), checkpoints: VecDeque::new() }
    }

    /// Adds a checkpoint; the oldest is evicted beyond capacity.
    pub fn push(&mut self, checkpoint: Checkpoint) {
        debug_assert!(self.newest().is_none_or(|n| n.block_id < checkpoint.block_id));
        self.checkpoints.push_front(checkpoint);
        self.checkpoints.truncate(self.capacity);
    }

    pub fn newest(&self) -> Option<&Checkpoint> {
        self.checkpoints.front()
    }

    pub fn get(&self, block_id: RoundIndex) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.block_id == block_id)
    }

    /// Checkpointed block ids, newest first.
    pub fn block_ids(&self) -> Vec<RoundIndex> {
        self.checkpoints.iter().map(|c| c.block_id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Checkpoint> {
        self.checkpoints.iter()
    }

    pub fn remove(&mut self, block_id: RoundIndex) -> Option<Checkpoint> {
        let pos = self.checkpoints.iter().position(|c| c.block_id == block_id)?;
        self.checkpoints.remove(pos)
    }

    /// Drops checkpoints taken after `block_id`.
    pub fn discard_after(&mut self, block_id: RoundIndex) {
        self.checkpoints.retain(|c| c.block_id <= block_id);
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// Mutable access to the newest checkpoint. Fault injection only.
    pub fn newest_mut(&mut self) -> Option<&mut Checkpoint> {
        self.checkpoints.front_mut()
    }
}

/// A checkpoint is due after committing block `id` when `id % interval == phase`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSchedule {
    pub interval: u64,
    #[serde(default)]
    pub phase: u64,
}

impl Default for CheckpointSchedule {
    fn default() -> Self {
        CheckpointSchedule { interval: 5, phase: 0 }
    }
}

impl CheckpointSchedule {
    pub fn every(interval: u64) -> Self {
        CheckpointSchedule { interval, phase: 0 }
    }

    pub fn is_due(&self, block_id: RoundIndex) -> bool {
        self.interval > 0 && block_id % self.interval == self.phase % self.interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryStrategy {
    /// Neither state nor history is used; a deviating organization is excluded.
    NoRecovery,
    /// Copy the committed state and ledger of a consenting peer.
    RestoreFromPeerState,
    /// Replay the whole history from the empty state.
    FullReplay,
    /// Restore checkpoints newest to oldest, replaying serially.
    PartialReplay,
    /// Like partial replay, with replayed blocks run by the parallel scheduler.
    #[default]
    OptimizedPartialReplay,
}

impl fmt::Display for RecoveryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecoveryStrategy::NoRecovery => "no-recovery",
            RecoveryStrategy::RestoreFromPeerState => "restore-from-peer-state",
            RecoveryStrategy::FullReplay => "full-replay",
            RecoveryStrategy::PartialReplay => "partial-replay",
            RecoveryStrategy::OptimizedPartialReplay => "optimized-partial-replay",
        })
    }
}

/// A starting point for rebuilding the failing block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    Checkpoint(RoundIndex),
    /// The empty state before block 1.
    Genesis,
    Peer,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::Checkpoint(id) => write!(f, "checkpoint@{id}"),
            Candidate::Genesis => f.write_str("genesis"),
            Candidate::Peer => f.write_str("peer-state"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateResult {
    /// An intermediate block replayed to a hash different from the committed one.
    ReplayMismatch(RoundIndex),
    /// The rebuilt failing block was outvoted.
    NonConsenting,
    /// No peer offered a usable state.
    Unavailable,
    Consenting,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateReport {
    pub candidate: Candidate,
    pub replayed_blocks: u64,
    pub result: CandidateResult,
}

/// Progress of an ongoing recovery for one failing block.
#[derive(Debug, Clone)]
pub struct RecoverySession {
    pub block_id: RoundIndex,
    pub strategy: RecoveryStrategy,
    pub(crate) candidates: VecDeque<Candidate>,
    /// Candidate whose rebuilt block is waiting for enough votes.
    pub(crate) awaiting: Option<(Candidate, u64)>,
    pub reports: Vec<CandidateReport>,
}

impl RecoverySession {
    pub fn new(block_id: RoundIndex, strategy: RecoveryStrategy, checkpoints: &CheckpointStore) -> Self {
        let candidates: VecDeque<Candidate> = match strategy {
            RecoveryStrategy::NoRecovery => VecDeque::new(),
            RecoveryStrategy::RestoreFromPeerState => [Candidate::Peer].into(),
            RecoveryStrategy::FullReplay => [Candidate::Genesis].into(),
            RecoveryStrategy::PartialReplay | RecoveryStrategy::OptimizedPartialReplay => checkpoints
                .block_ids()
                .into_iter()
                .filter(|id| *id < block_id)
                .map(Candidate::Checkpoint)
                .chain([Candidate::Genesis])
                .collect(),
        };
        RecoverySession { block_id, strategy, candidates, awaiting: None, reports: Vec::new() }
    }

    pub fn remaining(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter()
    }

    pub fn is_awaiting(&self) -> bool {
        self.awaiting.is_some()
    }

    /// Number of candidates tried so far, including one awaiting votes.
    pub fn iterations(&self) -> usize {
        self.reports.len() + self.awaiting.is_some() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryOutcome {
    /// The rebuilt block reached consensus and was committed.
    Recovered,
    /// A rebuilt block is published but the votes are not yet conclusive.
    AwaitingConsensus,
    /// A candidate was rejected; more remain.
    InProgress,
    /// Every candidate failed; the organization is excluded.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecoveryError {
    #[error("history for block {0} is unavailable")]
    HistoryUnavailable(RoundIndex),
    #[error("no recovery in progress")]
    NotRecovering,
    #[error(transparent)]
    Engine(#[from] EngineFailure),
}

/// Where a recovering organization can fetch a consenting peer's committed state.
pub trait PeerStateSource {
    /// Committed state and ledger of some peer whose ledger contains `block_id`.
    fn committed_state(&self, block_id: RoundIndex) -> Option<(DatabaseSnapshot, Ledger)>;
}

/// A source with no peers.
pub struct NoPeers;

impl PeerStateSource for NoPeers {
    fn committed_state(&self, _: RoundIndex) -> Option<(DatabaseSnapshot, Ledger)> {
        None
    }
}

/// Replays ledger blocks `from + 1..=head` on `engine`, which must hold the
/// state as of block `from`. Stops at the first block whose rebuilt hash
/// differs from the recorded one.
pub fn replay_ledger(
    ledger: &Ledger,
    engine: &Engine,
    from: RoundIndex,
    sessions: usize,
) -> Result<RoundIndex, ReplayError> {
    for block in ledger.blocks().iter().filter(|b| b.block_id > from) {
        engine.begin_block();
        let prepared: Vec<PreparedTxn> =
            block.ta_list.iter().map(|r| if r.admitted { parse_transaction(&r.sql).ok() } else { None }).collect();
        let (bits, _) = execute_block(&prepared, &engine.catalog(), engine, sessions)?;
        let rebuilt = LedgerBlock {
            block_id: block.block_id,
            ta_list: block.ta_list.clone(),
            ta_successful: bits,
            hash_digest: engine.take_digest().hash_digest(),
            hash_previous: block.hash_previous,
        };
        if rebuilt.hash() != block.hash() {
            return Err(ReplayError::Mismatch(block.block_id));
        }
    }
    Ok(ledger.head_id())
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("replayed block {0} does not match the ledger")]
    Mismatch(RoundIndex),
    #[error(transparent)]
    Engine(#[from] EngineFailure),
}
