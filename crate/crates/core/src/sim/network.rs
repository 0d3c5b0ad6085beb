//! Deterministic tick-driven network of organizations, clients and an orderer.
//!
//! Each tick applies due faults, lets clients propose, cuts blocks, and steps
//! every organization once in configuration order. Work takes simulated time:
//! an organization's vote becomes visible only after its execution (or
//! recovery replay) cost in ticks has elapsed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use super::config::{ConfigError, NetworkConfig};
use super::faults::{Fault, FaultScript, RowChange};
use super::report::{Event, EventKind, SimulationReport};
use super::transport::SimNet;
use crate::agreement::{
    collect_agreements, Agreement, AgreementEvaluator, AgreementOutcome, AgreementPredicate, AgreementService,
    ChainedTransaction, PolicySet, Proposal,
};
use crate::consensus::{ConsensusPolicy, RoundStatus};
use crate::crypto::{KeyPair, KeyRegistry, OrgId};
use crate::ledger::{Ledger, RoundIndex};
use crate::org::{Action, ConsensusEnv, OrgConfig, Organization};
use crate::recovery::{PeerStateSource, RecoveryOutcome};
use crate::sql::engine::DatabaseSnapshot;
use crate::EffectHash;

/// Untrusted FIFO ordering service.
#[derive(Debug)]
pub struct Orderer {
    blocksize: usize,
    timeout: u64,
    queue: VecDeque<(u64, ChainedTransaction)>,
    next_block: RoundIndex,
}

impl Orderer {
    pub fn new(blocksize: usize, timeout: u64) -> Self {
        assert!(blocksize > 0, "blocksize must be positive");
        Orderer { blocksize, timeout, queue: VecDeque::new(), next_block: 1 }
    }

    pub fn submit(&mut self, ct: ChainedTransaction, tick: u64) {
        self.queue.push_back((tick, ct));
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Id of the last block cut, 0 before the first.
    pub fn last_block(&self) -> RoundIndex {
        self.next_block - 1
    }

    fn take(&mut self, n: usize) -> Action {
        let transactions = self.queue.drain(..n).map(|(_, ct)| ct).collect();
        let action = Action { round: self.next_block, transactions };
        self.next_block += 1;
        action
    }

    /// Cuts every full block, then a partial one if its oldest transaction
    /// has waited `timeout` ticks.
    pub fn cut(&mut self, tick: u64) -> Vec<Action> {
        let mut out = Vec::new();
        while self.queue.len() >= self.blocksize {
            out.push(self.take(self.blocksize));
        }
        if self.queue.front().is_some_and(|(t, _)| tick >= t + self.timeout) {
            out.push(self.take(self.queue.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Executing { until: u64 },
    Voting { since: u64 },
    /// `fresh_vote`: the step that set `until` published a rebuilt vote.
    Recovering { until: u64, last: RecoveryOutcome, fresh_vote: bool },
    Excluded,
    Killed,
}

struct Node {
    org: Organization,
    phase: Phase,
    inbox: VecDeque<Action>,
    extra_delay: u64,
    /// Votes seen at the last self-check.
    checked_votes: Option<Vec<(OrgId, EffectHash)>>,
    /// Candidate reports of the current recovery already logged.
    reported: usize,
    /// Highest block whose commit was logged.
    recorded_head: RoundIndex,
}

impl Node {
    fn is_live(&self) -> bool {
        !matches!(self.phase, Phase::Killed | Phase::Excluded)
    }
}

struct Peers<'a> {
    others: Vec<&'a Organization>,
}

impl PeerStateSource for Peers<'_> {
    fn committed_state(&self, block_id: RoundIndex) -> Option<(DatabaseSnapshot, Ledger)> {
        self.others
            .iter()
            .find(|o| o.ledger().head_id() >= block_id)
            .map(|o| (o.committed_state().clone(), o.ledger().clone()))
    }
}

struct Agreements<'a> {
    nodes: &'a [Node],
}

impl AgreementService for Agreements<'_> {
    fn request_agreement(&self, org: &str, proposal: &Proposal) -> Option<Agreement> {
        let node = self.nodes.iter().find(|n| n.org.id() == org)?;
        node.is_live().then(|| node.org.agree(proposal))
    }
}

/// Mutable simulation state an organization step may touch.
struct Ctx<'a> {
    tick: u64,
    cfg: &'a NetworkConfig,
    orgs: &'a [OrgId],
    policy: ConsensusPolicy,
    net: &'a mut SimNet,
    events: &'a mut Vec<Event>,
    commits: &'a mut BTreeMap<OrgId, Vec<(RoundIndex, u64)>>,
}

impl Ctx<'_> {
    fn event(&mut self, org: &str, kind: EventKind, block: Option<RoundIndex>, detail: impl Into<String>) {
        self.events.push(Event { tick: self.tick, org: org.to_string(), kind, block, detail: detail.into() });
    }

    /// Ticks needed to run `txns` transactions.
    fn cost(&self, txns: usize, extra_delay: u64) -> u64 {
        (txns.div_ceil(self.cfg.exec_rate) as u64).max(1) + extra_delay
    }

    fn record_commits(&mut self, node: &mut Node) {
        let id = node.org.id().to_string();
        for block in node.recorded_head + 1..=node.org.ledger().head_id() {
            let hash = node.org.ledger().block_hash(block).unwrap_or_default();
            self.commits.entry(id.clone()).or_default().push((block, self.tick));
            self.event(&id, EventKind::Commit, Some(block), hash.short());
        }
        node.recorded_head = node.org.ledger().head_id();
    }
}

pub struct Network {
    cfg: NetworkConfig,
    policy: ConsensusPolicy,
    org_ids: Vec<OrgId>,
    nodes: Vec<Node>,
    clients: Vec<(OrgId, KeyPair)>,
    registry: Arc<KeyRegistry>,
    policies: PolicySet,
    net: SimNet,
    orderer: Orderer,
    workload: VecDeque<String>,
    submitted: usize,
    tick: u64,
    events: Vec<Event>,
    commits: BTreeMap<OrgId, Vec<(RoundIndex, u64)>>,
    timed_faults: Vec<Fault>,
    equivocations: BTreeSet<(OrgId, RoundIndex)>,
}

impl Network {
    /// Builds the network; `faults` are added to those in the configuration.
    pub fn new(cfg: NetworkConfig, workload: Vec<String>, faults: &FaultScript) -> Result<Self, ConfigError> {
        let mut cfg = cfg;
        cfg.faults.extend(faults.faults.iter().cloned());
        cfg.validate()?;
        let policy = cfg.policy()?;
        let org_ids = cfg.org_ids();
        let mut registry = KeyRegistry::new();
        let org_keys: Vec<KeyPair> = org_ids.iter().map(|id| KeyPair::derive(cfg.seed, id)).collect();
        for (id, key) in org_ids.iter().zip(&org_keys) {
            registry.register(id.clone(), key.public());
        }
        let clients: Vec<(OrgId, KeyPair)> =
            cfg.client_ids().into_iter().map(|id| (id.clone(), KeyPair::derive(cfg.seed, &id))).collect();
        for (id, key) in &clients {
            registry.register(id.clone(), key.public());
        }
        let registry = Arc::new(registry);
        let policies = PolicySet::new(cfg.agreement.iter().cloned());
        let mut net = SimNet::new();
        let mut nodes = Vec::new();
        for (spec, key) in cfg.organizations.iter().zip(org_keys) {
            let predicates = spec
                .predicates
                .iter()
                .map(|p| AgreementPredicate::parse(&p.table, &p.predicate))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let org_cfg = OrgConfig {
                quirks: spec.quirks,
                strategy: cfg.recovery,
                schedule: cfg.checkpoint,
                checkpoint_capacity: cfg.checkpoint_capacity,
                sessions: cfg.sessions,
                policies: policies.clone(),
                evaluator: AgreementEvaluator::new(predicates),
            };
            let org = Organization::new(spec.id.clone(), key, registry.clone(), org_cfg);
            net.attach(spec.id.clone(), org.vote_store());
            nodes.push(Node {
                org,
                phase: Phase::Idle,
                inbox: VecDeque::new(),
                extra_delay: spec.extra_delay,
                checked_votes: None,
                reported: 0,
                recorded_head: 0,
            });
        }
        let mut timed_faults = Vec::new();
        let mut equivocations = BTreeSet::new();
        for fault in &cfg.faults {
            match fault {
                Fault::EquivocateOrderer { org, block } => {
                    equivocations.insert((org.clone(), *block));
                }
                Fault::DropVotes { from, to, first, last } => net.drop_votes(from, to, *first, *last),
                Fault::TamperVote { org, block } => net.tamper(org, *block),
                timed => timed_faults.push(timed.clone()),
            }
        }
        Ok(Network {
            orderer: Orderer::new(cfg.blocksize, cfg.block_timeout),
            cfg,
            policy,
            org_ids,
            nodes,
            clients,
            registry,
            policies,
            net,
            workload: workload.into(),
            submitted: 0,
            tick: 0,
            events: Vec::new(),
            commits: BTreeMap::new(),
            timed_faults,
            equivocations,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn org(&self, id: &str) -> Option<&Organization> {
        self.nodes.iter().map(|n| &n.org).find(|o| o.id() == id)
    }

    pub fn orgs(&self) -> impl Iterator<Item = &Organization> {
        self.nodes.iter().map(|n| &n.org)
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    /// Whether every transaction was ordered and every live organization
    /// has committed every block.
    pub fn is_done(&self) -> bool {
        self.workload.is_empty()
            && self.orderer.queued() == 0
            && self.nodes.iter().all(|n| {
                !n.is_live()
                    || (n.phase == Phase::Idle
                        && n.inbox.is_empty()
                        && n.org.ledger().head_id() == self.orderer.last_block())
            })
    }

    /// Steps until done or until the tick budget is spent.
    pub fn run(mut self) -> SimulationReport {
        while !self.is_done() && self.tick < self.cfg.max_ticks {
            self.step();
        }
        self.report()
    }

    pub fn step(&mut self) {
        let tick = self.tick;
        self.net.set_tick(tick);
        self.apply_faults(tick);
        self.submit(tick);
        for action in self.orderer.cut(tick) {
            self.deliver(action);
        }
        for i in 0..self.nodes.len() {
            self.step_node(i);
        }
        self.tick += 1;
    }

    fn event(&mut self, org: &str, kind: EventKind, block: Option<RoundIndex>, detail: impl Into<String>) {
        self.events.push(Event { tick: self.tick, org: org.to_string(), kind, block, detail: detail.into() });
    }

    fn apply_faults(&mut self, tick: u64) {
        let due: Vec<Fault> = self.timed_faults.iter().filter(|f| f.tick() == Some(tick)).cloned().collect();
        for fault in due {
            match fault {
                Fault::CorruptRow { org, change, .. } => {
                    let result = self.node_mut(&org).and_then(|n| {
                        let sql = corruption_sql(&n.org, &change)?;
                        n.org.inject_external(&sql).map(|_| sql).map_err(|e| e.to_string())
                    });
                    let detail = result.unwrap_or_else(|e| format!("failed: {e}"));
                    self.event(&org, EventKind::CorruptRow, None, detail);
                }
                Fault::CorruptCheckpoint { org, change, .. } => {
                    let result = self.node_mut(&org).and_then(|n| {
                        let sql = corruption_sql(&n.org, &change)?;
                        n.org.corrupt_newest_checkpoint(&sql).map_err(|e| e.to_string())
                    });
                    let (block, detail) = match result {
                        Ok(Some(b)) => (Some(b), "newest checkpoint".to_string()),
                        Ok(None) => (None, "no checkpoint".to_string()),
                        Err(e) => (None, format!("failed: {e}")),
                    };
                    self.event(&org, EventKind::CorruptCheckpoint, block, detail);
                }
                Fault::KillOrg { org, .. } => {
                    if let Ok(node) = self.node_mut(&org) {
                        node.phase = Phase::Killed;
                    }
                    self.net.kill(&org);
                    self.event(&org, EventKind::Killed, None, "");
                }
                _ => {}
            }
        }
    }

    fn node_mut(&mut self, org: &str) -> Result<&mut Node, String> {
        self.nodes.iter_mut().find(|n| n.org.id() == org).ok_or_else(|| format!("unknown organization {org}"))
    }

    fn submit(&mut self, tick: u64) {
        for _ in 0..self.cfg.submit_rate {
            let Some(sql) = self.workload.pop_front() else { break };
            let (client, key) = &self.clients[self.submitted % self.clients.len()];
            self.submitted += 1;
            let proposal = Proposal::sign(key, client.clone(), sql);
            let service = Agreements { nodes: &self.nodes };
            match collect_agreements(proposal, &self.policies, &self.registry, &service) {
                AgreementOutcome::Chained(ct) => self.orderer.submit(ct, tick),
                AgreementOutcome::Rejected { dissenting, timed_out } => {
                    let detail = format!("dissenting={} timed_out={}", dissenting.join(","), timed_out.join(","));
                    let client = client.clone();
                    self.event(&client, EventKind::Rejected, None, detail);
                }
            }
        }
    }

    fn deliver(&mut self, action: Action) {
        let detail = format!("{} txns", action.transactions.len());
        self.event("orderer", EventKind::Cut, Some(action.round), detail);
        for i in 0..self.nodes.len() {
            if self.nodes[i].phase == Phase::Killed {
                continue;
            }
            let id = self.nodes[i].org.id().to_string();
            let mut copy = action.clone();
            if self.equivocations.contains(&(id.clone(), action.round)) {
                copy.transactions.pop();
                self.event(&id, EventKind::Equivocate, Some(action.round), format!("{} txns", copy.transactions.len()));
            }
            self.nodes[i].inbox.push_back(copy);
        }
    }

    fn step_node(&mut self, i: usize) {
        let (left, rest) = self.nodes.split_at_mut(i);
        let (node, right) = rest.split_first_mut().expect("index in range");
        let peers = Peers { others: left.iter().chain(right.iter()).filter(|n| n.is_live()).map(|n| &n.org).collect() };
        let mut ctx = Ctx {
            tick: self.tick,
            cfg: &self.cfg,
            orgs: &self.org_ids,
            policy: self.policy,
            net: &mut self.net,
            events: &mut self.events,
            commits: &mut self.commits,
        };
        step_node(node, &peers, &mut ctx);
    }

    fn report(self) -> SimulationReport {
        let completed = self.is_done();
        let mut transcripts = BTreeMap::new();
        let mut ledgers = BTreeMap::new();
        let mut states = BTreeMap::new();
        let mut recoveries = BTreeMap::new();
        let mut excluded = BTreeSet::new();
        let mut killed = BTreeSet::new();
        for node in &self.nodes {
            let id = node.org.id().to_string();
            for (block, t) in node.org.transcripts() {
                transcripts.insert((id.clone(), *block), t.clone());
            }
            ledgers.insert(id.clone(), node.org.ledger().clone());
            states.insert(id.clone(), node.org.committed_state().clone());
            let mut sessions = node.org.finished_recoveries().to_vec();
            sessions.extend(node.org.recovery().cloned());
            recoveries.insert(id.clone(), sessions);
            match node.phase {
                Phase::Excluded => {
                    excluded.insert(id);
                }
                Phase::Killed => {
                    killed.insert(id);
                }
                _ => {}
            }
        }
        SimulationReport {
            policy: self.policy,
            events: self.events,
            commits: self.commits,
            transcripts,
            ledgers,
            states,
            recoveries,
            excluded,
            killed,
            blocks_cut: self.orderer.last_block(),
            final_tick: self.tick,
            ramp_up: self.cfg.ramp_up,
            completed,
        }
    }
}

fn corruption_sql(org: &Organization, change: &RowChange) -> Result<String, String> {
    let schema = org.engine().schema(&change.table).ok_or_else(|| format!("no table {}", change.table))?;
    match schema.primary_key.as_slice() {
        [pk] => Ok(change.to_sql(pk)),
        _ => Err(format!("table {} needs a single-column primary key", change.table)),
    }
}

const MAX_TRANSITIONS_PER_TICK: usize = 16;

fn step_node(node: &mut Node, peers: &Peers, ctx: &mut Ctx) {
    let id = node.org.id().to_string();
    for _ in 0..MAX_TRANSITIONS_PER_TICK {
        match node.phase {
            Phase::Killed | Phase::Excluded => return,
            Phase::Idle => {
                let head = node.org.ledger().head_id();
                while node.inbox.front().is_some_and(|a| a.round <= head) {
                    node.inbox.pop_front();
                }
                if node.inbox.front().is_none_or(|a| a.round != head + 1) {
                    return;
                }
                let action = node.inbox.pop_front().expect("checked above");
                let executed = node.org.execute_action(&action).and_then(|_| node.org.publish_vote());
                match executed {
                    Ok(_) => {
                        let until = ctx.tick + ctx.cost(action.transactions.len(), node.extra_delay);
                        ctx.net.hide(&id, action.round, until);
                        ctx.event(&id, EventKind::Execute, Some(action.round), format!("{} txns", action.transactions.len()));
                        node.phase = Phase::Executing { until };
                    }
                    Err(e) => return fail(node, ctx, &e.to_string()),
                }
                return;
            }
            Phase::Executing { until } => {
                if ctx.tick < until {
                    return;
                }
                let pending = node.org.pending().expect("executed block is pending");
                let (block, hash) = (pending.block.block_id, pending.hash);
                ctx.event(&id, EventKind::Vote, Some(block), hash.short());
                node.phase = Phase::Voting { since: ctx.tick };
                node.checked_votes = None;
            }
            Phase::Voting { since } => {
                let outcome = {
                    let view = ctx.net.view(&id);
                    let env = ConsensusEnv { orgs: ctx.orgs, policy: ctx.policy, transport: &view, retries: 0 };
                    node.org.try_commit(&env)
                };
                let outcome = match outcome {
                    Ok(o) => o,
                    Err(e) => return fail(node, ctx, &e.to_string()),
                };
                let block = outcome.transcript.block_id;
                let versus = |h: Option<EffectHash>| {
                    format!("local={} decided={}", outcome.local_hash.short(), h.map_or("-".into(), |h| h.short()))
                };
                match (outcome.status, outcome.is_final) {
                    (RoundStatus::ConsentingCommitted, _) => {
                        ctx.record_commits(node);
                        node.phase = Phase::Idle;
                    }
                    (RoundStatus::NonConsentingLocal, true) => {
                        ctx.event(&id, EventKind::NonConsenting, Some(block), versus(outcome.consensus_hash));
                        start_recovery(node, ctx, "non-consenting");
                    }
                    (RoundStatus::NoGlobalConsensus, true) => {
                        ctx.event(&id, EventKind::NoConsensus, Some(block), versus(None));
                        start_recovery(node, ctx, "no-consensus");
                    }
                    _ => {
                        let votes: Vec<(OrgId, EffectHash)> =
                            outcome.transcript.votes.iter().map(|v| (v.org.clone(), v.hash)).collect();
                        let conflicting = votes.iter().any(|(_, h)| *h != outcome.local_hash);
                        let waited = ctx.tick >= since + ctx.cfg.vote_timeout;
                        if !(conflicting && waited && node.checked_votes.as_ref() != Some(&votes)) {
                            return;
                        }
                        node.checked_votes = Some(votes);
                        ctx.event(&id, EventKind::SelfCheck, Some(block), versus(None));
                        start_recovery(node, ctx, "self-check");
                    }
                }
            }
            Phase::Recovering { until, last, fresh_vote } => {
                if ctx.tick < until {
                    return;
                }
                if fresh_vote {
                    let block = node.org.recovery().map_or(node.org.ledger().head_id(), |s| s.block_id);
                    let hash = node.org.pending().map_or_else(|| node.org.ledger().head_hash(), |p| p.hash);
                    ctx.event(&id, EventKind::Vote, Some(block), format!("{} rebuilt", hash.short()));
                }
                match last {
                    RecoveryOutcome::Recovered => {
                        let block = node.org.finished_recoveries().last().map(|s| s.block_id);
                        ctx.event(&id, EventKind::Recovered, block, "");
                        ctx.record_commits(node);
                        node.phase = Phase::Idle;
                    }
                    RecoveryOutcome::Failed => {
                        let block = node.org.finished_recoveries().last().map(|s| s.block_id);
                        ctx.event(&id, EventKind::Excluded, block, "every recovery candidate failed");
                        node.phase = Phase::Excluded;
                        return;
                    }
                    RecoveryOutcome::InProgress | RecoveryOutcome::AwaitingConsensus => {
                        let out = {
                            let view = ctx.net.view(&id);
                            let env = ConsensusEnv { orgs: ctx.orgs, policy: ctx.policy, transport: &view, retries: 0 };
                            node.org.recovery_step(&env, peers)
                        };
                        let out = match out {
                            Ok(o) => o,
                            Err(e) => return fail(node, ctx, &e.to_string()),
                        };
                        log_candidates(node, ctx);
                        let work = node.org.recovery_work();
                        let rebuilt = matches!(out, RecoveryOutcome::AwaitingConsensus | RecoveryOutcome::Recovered);
                        if work > 0 {
                            let until = ctx.tick + ctx.cost(work, node.extra_delay);
                            let block = node.org.recovery().map_or(node.org.ledger().head_id(), |s| s.block_id);
                            ctx.net.hide(&id, block, until);
                            node.phase = Phase::Recovering { until, last: out, fresh_vote: rebuilt };
                            return;
                        }
                        let until = if out == RecoveryOutcome::AwaitingConsensus { ctx.tick + 1 } else { ctx.tick };
                        node.phase = Phase::Recovering { until, last: out, fresh_vote: false };
                        if until > ctx.tick {
                            return;
                        }
                    }
                }
            }
        }
    }
}

fn start_recovery(node: &mut Node, ctx: &mut Ctx, reason: &str) {
    let id = node.org.id().to_string();
    match node.org.begin_recovery() {
        Ok(session) => {
            let detail = format!("{reason} strategy={}", session.strategy);
            let block = session.block_id;
            ctx.event(&id, EventKind::RecoveryStart, Some(block), detail);
            node.reported = 0;
            node.phase = Phase::Recovering { until: ctx.tick, last: RecoveryOutcome::InProgress, fresh_vote: false };
        }
        Err(e) => fail(node, ctx, &e.to_string()),
    }
}

fn log_candidates(node: &mut Node, ctx: &mut Ctx) {
    let id = node.org.id().to_string();
    let Some(session) = node.org.recovery().or(node.org.finished_recoveries().last()) else { return };
    let block = session.block_id;
    let fresh: Vec<String> = session.reports[node.reported.min(session.reports.len())..]
        .iter()
        .map(|r| format!("{} {:?} replayed={}", r.candidate, r.result, r.replayed_blocks))
        .collect();
    node.reported = session.reports.len();
    for detail in fresh {
        ctx.event(&id, EventKind::Candidate, Some(block), detail);
    }
}

fn fail(node: &mut Node, ctx: &mut Ctx, reason: &str) {
    let id = node.org.id().to_string();
    ctx.event(&id, EventKind::EngineFailure, None, reason);
    node.org.exclude();
    node.phase = Phase::Excluded;
}

/// Runs `workload` through a network built from `cfg` and `faults`.
pub fn run_network(cfg: NetworkConfig, workload: Vec<String>, faults: &FaultScript) -> Result<SimulationReport, ConfigError> {
    Ok(Network::new(cfg, workload, faults)?.run())
}
