//! One organization: executes blocks, votes on their hashes, commits, and recovers.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::agreement::{verify_chained_transaction, Agreement, AgreementEvaluator, ChainedTransaction, PolicySet, Proposal};
use crate::consensus::{run_consensus, ConsensusPolicy, ConsensusResult, ConsensusTranscript, HashVote, RoundStatus, VoteStore, VoteTransport};
use crate::crypto::{KeyPair, KeyRegistry, OrgId};
use crate::ledger::{BitList, Ledger, LedgerBlock, LedgerError, RoundIndex, TxnRecord};
use crate::parallel::{execute_block, execute_serial, PreparedTxn};
use crate::recovery::{
    Candidate, CandidateReport, CandidateResult, Checkpoint, CheckpointSchedule, CheckpointStore, PeerStateSource,
    RecoveryError, RecoveryOutcome, RecoverySession, RecoveryStrategy, DEFAULT_CHECKPOINT_CAPACITY,
};
use crate::sql::engine::{DatabaseSnapshot, Engine, EngineError, EngineFailure, QuirkConfig, StatementResult};
use crate::sql::parser::{parse_statement, parse_transaction};
use crate::EffectHash;

/// The input of one round: an ordered block of chained transactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub round: RoundIndex,
    pub transactions: Vec<ChainedTransaction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome {
    pub status: RoundStatus,
    pub consensus_hash: Option<EffectHash>,
    pub local_hash: EffectHash,
    /// False while missing votes could still change the status.
    pub is_final: bool,
    pub transcript: ConsensusTranscript,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoundError {
    #[error("action for round {got} arrived, expected round {expected}")]
    OutOfOrderAction { expected: RoundIndex, got: RoundIndex },
    #[error("round {0} is already committed")]
    DuplicateRound(RoundIndex),
    #[error("no executed block awaits consensus")]
    NothingPending,
    #[error("organization is excluded")]
    Excluded,
    #[error("organization is recovering")]
    Recovering,
    #[error(transparent)]
    Engine(#[from] EngineFailure),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Static configuration of an organization.
#[derive(Debug, Clone)]
pub struct OrgConfig {
    pub quirks: QuirkConfig,
    pub strategy: RecoveryStrategy,
    pub schedule: CheckpointSchedule,
    pub checkpoint_capacity: usize,
    /// Sessions used by the staged executor.
    pub sessions: usize,
    pub policies: PolicySet,
    pub evaluator: AgreementEvaluator,
}

impl Default for OrgConfig {
    fn default() -> Self {
        OrgConfig {
            quirks: QuirkConfig::default(),
            strategy: RecoveryStrategy::default(),
            schedule: CheckpointSchedule::default(),
            checkpoint_capacity: DEFAULT_CHECKPOINT_CAPACITY,
            sessions: 1,
            policies: PolicySet::default(),
            evaluator: AgreementEvaluator::default(),
        }
    }
}

/// Everything needed to run one consensus exchange.
pub struct ConsensusEnv<'a> {
    /// All organizations, the local one included.
    pub orgs: &'a [OrgId],
    pub policy: ConsensusPolicy,
    pub transport: &'a dyn VoteTransport,
    pub retries: u32,
}

/// An executed block that has not been committed.
#[derive(Debug, Clone)]
pub struct PendingBlock {
    pub block: LedgerBlock,
    pub hash: EffectHash,
}

pub struct Organization {
    id: OrgId,
    key: KeyPair,
    registry: Arc<KeyRegistry>,
    config: OrgConfig,
    engine: Engine,
    ledger: Ledger,
    /// State as of the ledger head.
    committed_state: DatabaseSnapshot,
    checkpoints: CheckpointStore,
    votes: Arc<VoteStore>,
    pending: Option<PendingBlock>,
    recovery: Option<RecoverySession>,
    finished_recoveries: Vec<RecoverySession>,
    /// Transactions executed by the last recovery step.
    recovery_work: usize,
    transcripts: BTreeMap<RoundIndex, ConsensusTranscript>,
    excluded: bool,
}

impl Organization {
    pub fn new(id: impl Into<OrgId>, key: KeyPair, registry: Arc<KeyRegistry>, config: OrgConfig) -> Self {
        let engine = Engine::new(config.quirks);
        Organization {
            id: id.into(),
            key,
            registry,
            checkpoints: CheckpointStore::new(config.checkpoint_capacity),
            config,
            engine,
            ledger: Ledger::new(),
            committed_state: DatabaseSnapshot::new(),
            votes: Arc::new(VoteStore::new()),
            pending: None,
            recovery: None,
            finished_recoveries: Vec::new(),
            recovery_work: 0,
            transcripts: BTreeMap::new(),
            excluded: false,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn config(&self) -> &OrgConfig {
        &self.config
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn committed_state(&self) -> &DatabaseSnapshot {
        &self.committed_state
    }

    pub fn checkpoints(&self) -> &CheckpointStore {
        &self.checkpoints
    }

    pub fn checkpoints_mut(&mut self) -> &mut CheckpointStore {
        &mut self.checkpoints
    }

    /// Shared handle to the votes this organization serves.
    pub fn vote_store(&self) -> Arc<VoteStore> {
        self.votes.clone()
    }

    pub fn pending(&self) -> Option<&PendingBlock> {
        self.pending.as_ref()
    }

    pub fn recovery(&self) -> Option<&RecoverySession> {
        self.recovery.as_ref()
    }

    /// Completed recovery sessions, oldest first.
    pub fn finished_recoveries(&self) -> &[RecoverySession] {
        &self.finished_recoveries
    }

    /// Transactions executed by the most recent recovery step.
    pub fn recovery_work(&self) -> usize {
        self.recovery_work
    }

    pub fn is_excluded(&self) -> bool {
        self.excluded
    }

    pub fn is_recovering(&self) -> bool {
        self.recovery.is_some()
    }

    /// Latest final consensus record per block; committed blocks always have one.
    pub fn transcripts(&self) -> &BTreeMap<RoundIndex, ConsensusTranscript> {
        &self.transcripts
    }

    pub fn exclude(&mut self) {
        self.excluded = true;
        self.finish_recovery();
    }

    fn finish_recovery(&mut self) {
        if let Some(session) = self.recovery.take() {
            self.finished_recoveries.push(session);
        }
    }

    /// Answers a client's agreement request against the committed state.
    pub fn agree(&self, proposal: &Proposal) -> Agreement {
        let view = Engine::new(self.config.quirks);
        view.restore_all(&self.committed_state);
        self.config.evaluator.respond(&self.id, &self.key, proposal, &view)
    }

    /// Runs `sql` outside any block: no digest tuples, no ledger entry.
    ///
    /// Models tampering with the database behind the system's back. The
    /// committed state seen by agreement and peers is changed as well.
    pub fn inject_external(&mut self, sql: &str) -> Result<StatementResult, EngineError> {
        let stmt = parse_statement(sql)?;
        let result = self.engine.execute_external(&stmt)?;
        if self.pending.is_none() {
            self.committed_state = self.engine.snapshot_all();
        } else {
            let view = Engine::new(self.config.quirks);
            view.restore_all(&self.committed_state);
            view.execute_external(&stmt)?;
            self.committed_state = view.snapshot_all();
        }
        Ok(result)
    }

    /// Applies `sql` to the newest checkpoint and returns its block id.
    pub fn corrupt_newest_checkpoint(&mut self, sql: &str) -> Result<Option<RoundIndex>, EngineError> {
        let stmt = parse_statement(sql)?;
        let Some(cp) = self.checkpoints.newest_mut() else { return Ok(None) };
        let view = Engine::new(self.config.quirks);
        view.restore_all(&cp.tables);
        view.execute_external(&stmt)?;
        cp.tables = view.snapshot_all();
        Ok(Some(cp.block_id))
    }

    /// Executes `action` on the committed state and records the resulting block
    /// as pending. The vote is not published.
    pub fn execute_action(&mut self, action: &Action) -> Result<EffectHash, RoundError> {
        if self.excluded {
            return Err(RoundError::Excluded);
        }
        if self.recovery.is_some() {
            return Err(RoundError::Recovering);
        }
        let head = self.ledger.head_id();
        if action.round <= head {
            return Err(RoundError::DuplicateRound(action.round));
        }
        if action.round != head + 1 || self.pending.is_some() {
            let expected = if self.pending.is_some() { head + 2 } else { head + 1 };
            return Err(RoundError::OutOfOrderAction { expected, got: action.round });
        }
        let records = self.admit(&action.transactions);
        let block = self.run_block(action.round, records, true, self.ledger.head_hash())?;
        let hash = block.hash();
        self.pending = Some(PendingBlock { block, hash });
        Ok(hash)
    }

    /// Verifies signatures on up to `sessions` threads; order is preserved.
    fn admit(&self, transactions: &[ChainedTransaction]) -> Vec<TxnRecord> {
        let record = |ct: &ChainedTransaction| TxnRecord {
            client: ct.proposal.client.clone(),
            signers: ct.signers(),
            admitted: verify_chained_transaction(ct, &self.config.policies, &self.registry),
            sql: ct.proposal.sql.clone(),
        };
        let threads = self.config.sessions.max(1);
        if threads == 1 || transactions.len() < 2 * threads {
            return transactions.iter().map(record).collect();
        }
        let chunk = transactions.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = transactions
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(record).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("verification thread")).collect()
        })
    }

    fn run_block(
        &self,
        round: RoundIndex,
        ta_list: Vec<TxnRecord>,
        parallel: bool,
        hash_previous: EffectHash,
    ) -> Result<LedgerBlock, EngineFailure> {
        self.engine.begin_block();
        let prepared: Vec<PreparedTxn> =
            ta_list.iter().map(|r| if r.admitted { parse_transaction(&r.sql).ok() } else { None }).collect();
        let ta_successful: BitList = if parallel {
            execute_block(&prepared, &self.engine.catalog(), &self.engine, self.config.sessions)?.0
        } else {
            execute_serial(&prepared, &self.engine)?
        };
        let hash_digest = self.engine.take_digest().hash_digest();
        Ok(LedgerBlock { block_id: round, ta_list, ta_successful, hash_digest, hash_previous })
    }

    /// Publishes the signed hash of the pending block.
    pub fn publish_vote(&self) -> Result<HashVote, RoundError> {
        let pending = self.pending.as_ref().ok_or(RoundError::NothingPending)?;
        let vote = HashVote::sign(&self.key, self.id.clone(), pending.block.block_id, pending.hash);
        self.votes.publish(vote.clone());
        Ok(vote)
    }

    fn exchange(&self, env: &ConsensusEnv) -> Result<ConsensusResult, RoundError> {
        let pending = self.pending.as_ref().ok_or(RoundError::NothingPending)?;
        let own = match self.votes.get(pending.block.block_id) {
            Some(v) if v.hash == pending.hash => v,
            _ => HashVote::sign(&self.key, self.id.clone(), pending.block.block_id, pending.hash),
        };
        Ok(run_consensus(&own, env.orgs, &env.policy, &self.registry, env.transport, env.retries))
    }

    /// Collects votes for the pending block and commits it on consent.
    pub fn try_commit(&mut self, env: &ConsensusEnv) -> Result<RoundOutcome, RoundError> {
        if self.recovery.is_some() {
            return Err(RoundError::Recovering);
        }
        let result = self.exchange(env)?;
        let local_hash = self.pending.as_ref().map(|p| p.hash).unwrap_or_default();
        let is_final = result.is_final(&env.policy);
        if result.consenting {
            self.commit(result.transcript.clone())?;
        } else if is_final {
            let id = result.transcript.block_id;
            self.transcripts.insert(id, result.transcript.clone());
        }
        Ok(RoundOutcome {
            status: result.transcript.status,
            consensus_hash: result.decided_hash,
            local_hash,
            is_final,
            transcript: result.transcript,
        })
    }

    /// Execute, vote and decide one round.
    ///
    /// On anything but consent the block stays pending and the state stays
    /// uncommitted; the caller decides whether to poll again or recover.
    pub fn advance_round(&mut self, action: &Action, env: &ConsensusEnv) -> Result<RoundOutcome, RoundError> {
        self.execute_action(action)?;
        self.publish_vote()?;
        self.try_commit(env)
    }

    fn commit(&mut self, transcript: ConsensusTranscript) -> Result<(), RoundError> {
        let pending = self.pending.take().ok_or(RoundError::NothingPending)?;
        let id = pending.block.block_id;
        self.ledger.append(pending.block)?;
        self.committed_state = self.engine.snapshot_all();
        self.transcripts.insert(id, transcript);
        if self.config.schedule.is_due(id) {
            self.checkpoints.push(Checkpoint { block_id: id, tables: self.committed_state.clone() });
        }
        Ok(())
    }

    /// Withdraws the vote for the pending block and prepares the candidates.
    pub fn begin_recovery(&mut self) -> Result<&RecoverySession, RecoveryError> {
        let pending = self.pending.as_ref().ok_or(RecoveryError::NotRecovering)?;
        let block_id = pending.block.block_id;
        self.votes.retract(block_id);
        let session = RecoverySession::new(block_id, self.config.strategy, &self.checkpoints);
        log::debug!("{} recovering block {block_id} with {}", self.id, self.config.strategy);
        Ok(self.recovery.insert(session))
    }

    /// Advances recovery by at most one candidate.
    ///
    /// A candidate is restored, the committed blocks after it are replayed and
    /// checked against the local ledger, and the failing block is rebuilt and
    /// put to consensus again.
    pub fn recovery_step(
        &mut self,
        env: &ConsensusEnv,
        peers: &dyn PeerStateSource,
    ) -> Result<RecoveryOutcome, RecoveryError> {
        let session = self.recovery.as_mut().ok_or(RecoveryError::NotRecovering)?;
        self.recovery_work = 0;
        if let Some((candidate, replayed)) = session.awaiting.take() {
            return self.settle(candidate, replayed, env);
        }
        let Some(candidate) = session.candidates.pop_front() else {
            self.exclude();
            return Ok(RecoveryOutcome::Failed);
        };
        if candidate == Candidate::Peer {
            return self.adopt_peer_state(peers);
        }
        match self.rebuild_from(candidate)? {
            Ok(replayed) => {
                self.publish_vote().map_err(|_| RecoveryError::NotRecovering)?;
                self.settle(candidate, replayed, env)
            }
            Err((replayed, result)) => Ok(self.reject(candidate, replayed, result)),
        }
    }

    /// Runs recovery steps until the outcome is no longer `InProgress`.
    pub fn recover(&mut self, env: &ConsensusEnv, peers: &dyn PeerStateSource) -> Result<RecoveryOutcome, RecoveryError> {
        if self.recovery.is_none() {
            self.begin_recovery()?;
        }
        loop {
            match self.recovery_step(env, peers)? {
                RecoveryOutcome::InProgress => continue,
                other => return Ok(other),
            }
        }
    }

    /// Restores `candidate` and replays up to and including the pending block.
    /// `Err` carries the number of replayed blocks and why the candidate failed.
    #[allow(clippy::type_complexity)]
    fn rebuild_from(&mut self, candidate: Candidate) -> Result<Result<u64, (u64, CandidateResult)>, RecoveryError> {
        let session = self.recovery.as_ref().ok_or(RecoveryError::NotRecovering)?;
        let parallel = session.strategy == RecoveryStrategy::OptimizedPartialReplay;
        let start = match candidate {
            Candidate::Checkpoint(id) => {
                let cp = self.checkpoints.get(id).ok_or(RecoveryError::HistoryUnavailable(id))?;
                self.engine.restore_all(&cp.tables);
                id
            }
            Candidate::Genesis => {
                self.engine.reset();
                0
            }
            Candidate::Peer => unreachable!("peer state is adopted, not replayed"),
        };
        let head = self.ledger.head_id();
        let mut txns = 0;
        let mut replayed = 0;
        for id in start + 1..=head {
            let committed = self.ledger.get(id).ok_or(RecoveryError::HistoryUnavailable(id))?;
            let previous = self.ledger.block_hash(id - 1).unwrap_or_else(EffectHash::genesis);
            txns += committed.ta_list.len();
            let rebuilt = self.run_block(id, committed.ta_list.clone(), parallel, previous)?;
            replayed += 1;
            if rebuilt.hash() != self.ledger.block_hash(id).unwrap_or_default() {
                self.record_txns(txns);
                return Ok(Err((replayed, CandidateResult::ReplayMismatch(id))));
            }
        }
        let pending = self.pending.as_ref().ok_or(RecoveryError::NotRecovering)?;
        let (block_id, ta_list) = (pending.block.block_id, pending.block.ta_list.clone());
        txns += ta_list.len();
        let block = self.run_block(block_id, ta_list, parallel, self.ledger.head_hash())?;
        replayed += 1;
        self.record_txns(txns);
        let hash = block.hash();
        self.pending = Some(PendingBlock { block, hash });
        Ok(Ok(replayed))
    }

    fn record_txns(&mut self, txns: usize) {
        self.recovery_work += txns;
    }

    fn settle(&mut self, candidate: Candidate, replayed: u64, env: &ConsensusEnv) -> Result<RecoveryOutcome, RecoveryError> {
        let result = self.exchange(env).map_err(|_| RecoveryError::NotRecovering)?;
        let session = self.recovery.as_mut().ok_or(RecoveryError::NotRecovering)?;
        if result.consenting {
            session.reports.push(CandidateReport { candidate, replayed_blocks: replayed, result: CandidateResult::Consenting });
            self.finish_recovery();
            self.commit(result.transcript).map_err(|_| RecoveryError::NotRecovering)?;
            return Ok(RecoveryOutcome::Recovered);
        }
        if !result.is_final(&env.policy) {
            session.awaiting = Some((candidate, replayed));
            return Ok(RecoveryOutcome::AwaitingConsensus);
        }
        if let Some(p) = &self.pending {
            self.votes.retract(p.block.block_id);
        }
        Ok(self.reject(candidate, replayed, CandidateResult::NonConsenting))
    }

    fn reject(&mut self, candidate: Candidate, replayed: u64, result: CandidateResult) -> RecoveryOutcome {
        log::debug!("{} candidate {candidate} rejected: {result:?}", self.id);
        if let Candidate::Checkpoint(id) = candidate {
            self.checkpoints.remove(id);
        }
        let Some(session) = self.recovery.as_mut() else { return RecoveryOutcome::Failed };
        session.reports.push(CandidateReport { candidate, replayed_blocks: replayed, result });
        if session.candidates.is_empty() {
            self.exclude();
            RecoveryOutcome::Failed
        } else {
            RecoveryOutcome::InProgress
        }
    }

    /// Copies a peer's committed state and ledger. The copy is trusted as is.
    fn adopt_peer_state(&mut self, peers: &dyn PeerStateSource) -> Result<RecoveryOutcome, RecoveryError> {
        let block_id = self.recovery.as_ref().map(|s| s.block_id).ok_or(RecoveryError::NotRecovering)?;
        let Some((state, ledger)) = peers.committed_state(block_id).filter(|(_, l)| l.head_id() >= block_id) else {
            return Ok(self.reject(Candidate::Peer, 0, CandidateResult::Unavailable));
        };
        let old_head = self.ledger.head_id();
        self.engine.restore_all(&state);
        self.committed_state = state;
        self.votes.truncate_after(old_head);
        for block in &ledger.blocks()[old_head as usize..] {
            self.votes.publish(HashVote::sign(&self.key, self.id.clone(), block.block_id, block.hash()));
        }
        self.ledger = ledger;
        self.pending = None;
        if let Some(session) = self.recovery.as_mut() {
            session.reports.push(CandidateReport {
                candidate: Candidate::Peer,
                replayed_blocks: 0,
                result: CandidateResult::Consenting,
            });
        }
        self.finish_recovery();
        Ok(RecoveryOutcome::Recovered)
    }
}
