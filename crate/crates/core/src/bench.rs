//! Wall-clock throughput runs: client threads, an orderer thread and one
//! thread per organization, connected by channels.
//!
//! A published vote reaches peers only after a fixed simulated network
//! latency, so every block pays one message delay. Clients sign their
//! proposals before the clock starts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::agreement::{ChainedTransaction, Proposal};
use crate::consensus::{ConsensusPolicy, RoundStatus, VoteReply, VoteStore, VoteTransport};
use crate::crypto::{KeyPair, KeyRegistry, OrgId};
use crate::ledger::RoundIndex;
use crate::org::{Action, ConsensusEnv, OrgConfig, Organization};
use crate::smallbank::{AccountDistribution, SmallbankConfig, SmallbankGenerator, SmallbankError};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub orgs: usize,
    /// Defaults to a majority.
    pub threshold: Option<usize>,
    pub blocksize: usize,
    pub clients: usize,
    /// Transactions fired after bootstrap.
    pub txns: usize,
    pub sessions: usize,
    /// Delay before a published vote is visible to peers.
    pub latency: Duration,
    pub users: u32,
    pub distribution: AccountDistribution,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            orgs: 3,
            threshold: None,
            blocksize: 1024,
            clients: 3,
            txns: 16_384,
            sessions: 4,
            latency: Duration::from_millis(50),
            users: 10_000,
            distribution: AccountDistribution::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub blocksize: usize,
    pub clients: usize,
    pub txns: usize,
    pub successful: usize,
    pub blocks: RoundIndex,
    pub elapsed: Duration,
}

impl BenchResult {
    /// Successful transactions per second.
    pub fn throughput(&self) -> f64 {
        self.successful as f64 / self.elapsed.as_secs_f64().max(f64::EPSILON)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Workload(#[from] SmallbankError),
    #[error("invalid bench configuration: {0}")]
    Config(String),
    #[error("organization {org} failed on block {block}: {reason}")]
    Round { org: OrgId, block: RoundIndex, reason: String },
}

/// Publication times of votes, keyed by organization and block.
type Sent = parking_lot::Mutex<HashMap<(OrgId, RoundIndex), Instant>>;

struct Polling<'a> {
    stores: &'a BTreeMap<OrgId, Arc<VoteStore>>,
    sent: &'a Sent,
    latency: Duration,
}

impl VoteTransport for Polling<'_> {
    fn request(&self, peer: &str, block_id: RoundIndex) -> VoteReply {
        let Some(store) = self.stores.get(peer) else {
            return VoteReply::Unreachable;
        };
        let arrived = self.sent.lock().get(&(peer.to_string(), block_id)).is_some_and(|t| t.elapsed() >= self.latency);
        if arrived {
            store.serve_hash_request(block_id)
        } else {
            VoteReply::NotReady
        }
    }

    fn backoff(&self) {
        std::thread::sleep(Duration::from_micros(200));
    }
}

const POLL_RETRIES: u32 = 1_000_000;

/// Executes, votes and waits for consensus on one block.
fn drive(org: &mut Organization, action: &Action, env: &ConsensusEnv, sent: &Sent) -> Result<(), BenchError> {
    let id = org.id().to_string();
    let fail = |reason: String| BenchError::Round { org: id.clone(), block: action.round, reason };
    org.execute_action(action).map_err(|e| fail(e.to_string()))?;
    org.publish_vote().map_err(|e| fail(e.to_string()))?;
    sent.lock().insert((id.clone(), action.round), Instant::now());
    let outcome = org.try_commit(env).map_err(|e| fail(e.to_string()))?;
    if outcome.status != RoundStatus::ConsentingCommitted {
        return Err(fail(format!("{} after polling", outcome.status)));
    }
    Ok(())
}

/// Bootstraps Smallbank at every organization, then measures the time to
/// agree on and commit `cfg.txns` further transactions.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult, BenchError> {
    if cfg.orgs == 0 || cfg.blocksize == 0 || cfg.clients == 0 {
        return Err(BenchError::Config("orgs, blocksize and clients must be positive".into()));
    }
    let policy = match cfg.threshold {
        Some(c) => ConsensusPolicy::new(c, cfg.orgs).map_err(|e| BenchError::Config(e.to_string()))?,
        None => ConsensusPolicy::majority(cfg.orgs),
    };
    let ids: Vec<OrgId> = (1..=cfg.orgs).map(|i| format!("O{i}")).collect();
    let client_ids: Vec<OrgId> = (1..=cfg.clients).map(|i| format!("C{i}")).collect();
    let mut registry = KeyRegistry::new();
    let org_keys: Vec<KeyPair> = ids.iter().map(|id| KeyPair::derive(cfg.seed, id)).collect();
    let client_keys: Vec<KeyPair> = client_ids.iter().map(|id| KeyPair::derive(cfg.seed, id)).collect();
    for (id, key) in ids.iter().zip(&org_keys).chain(client_ids.iter().zip(&client_keys)) {
        registry.register(id.clone(), key.public());
    }
    let registry = Arc::new(registry);
    let org_cfg = OrgConfig { sessions: cfg.sessions, ..OrgConfig::default() };
    let mut orgs: Vec<Organization> = ids
        .iter()
        .zip(org_keys)
        .map(|(id, key)| Organization::new(id.clone(), key, registry.clone(), org_cfg.clone()))
        .collect();
    let stores: BTreeMap<OrgId, Arc<VoteStore>> = orgs.iter().map(|o| (o.id().to_string(), o.vote_store())).collect();
    let sent = Sent::default();

    let sb = SmallbankConfig { num_users: cfg.users, distribution: cfg.distribution, clients: cfg.clients, ..Default::default() };
    let mut generator = SmallbankGenerator::new(sb, cfg.seed)?;
    let bootstrap = Action {
        round: 1,
        transactions: generator
            .bootstrap()
            .into_iter()
            .map(|sql| ChainedTransaction::unchained(Proposal::sign(&client_keys[0], client_ids[0].clone(), sql)))
            .collect(),
    };
    let signed: Vec<ChainedTransaction> = generator
        .take_sql(cfg.txns)
        .into_iter()
        .enumerate()
        .map(|(i, sql)| {
            let c = i % cfg.clients;
            ChainedTransaction::unchained(Proposal::sign(&client_keys[c], client_ids[c].clone(), sql))
        })
        .collect();
    std::thread::scope(|s| -> Result<(), BenchError> {
        let handles: Vec<_> = orgs
            .iter_mut()
            .map(|org| {
                let transport = Polling { stores: &stores, sent: &sent, latency: Duration::ZERO };
                let (ids, bootstrap, sent) = (&ids, &bootstrap, &sent);
                s.spawn(move || {
                    let env = ConsensusEnv { orgs: ids, policy, transport: &transport, retries: POLL_RETRIES };
                    drive(org, bootstrap, &env, sent)
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("bootstrap thread"))
    })?;

    let start = Instant::now();
    let (submit_tx, submit_rx) = mpsc::channel::<ChainedTransaction>();
    let (org_txs, org_rxs): (Vec<_>, Vec<_>) = ids.iter().map(|_| mpsc::channel::<Action>()).unzip();
    std::thread::scope(|s| -> Result<(), BenchError> {
        for c in 0..cfg.clients {
            let tx = submit_tx.clone();
            let (signed, clients) = (&signed, cfg.clients);
            s.spawn(move || {
                for ct in signed.iter().skip(c).step_by(clients) {
                    if tx.send(ct.clone()).is_err() {
                        break;
                    }
                }
            });
        }
        drop(submit_tx);
        let blocksize = cfg.blocksize;
        s.spawn(move || {
            let mut round = 2;
            let mut queue = Vec::with_capacity(blocksize);
            let broadcast = |queue: &mut Vec<ChainedTransaction>, round: &mut RoundIndex| {
                let action = Action { round: *round, transactions: std::mem::take(queue) };
                *round += 1;
                for tx in &org_txs {
                    let _ = tx.send(action.clone());
                }
            };
            for ct in submit_rx {
                queue.push(ct);
                if queue.len() == blocksize {
                    broadcast(&mut queue, &mut round);
                }
            }
            if !queue.is_empty() {
                broadcast(&mut queue, &mut round);
            }
        });
        let handles: Vec<_> = orgs
            .iter_mut()
            .zip(org_rxs)
            .map(|(org, rx)| {
                let transport = Polling { stores: &stores, sent: &sent, latency: cfg.latency };
                let (ids, sent) = (&ids, &sent);
                s.spawn(move || {
                    let env = ConsensusEnv { orgs: ids, policy, transport: &transport, retries: POLL_RETRIES };
                    rx.into_iter().try_for_each(|action| drive(org, &action, &env, sent))
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("organization thread"))
    })?;
    let elapsed = start.elapsed();
    let ledger = orgs[0].ledger();
    let successful = ledger.blocks()[1..].iter().map(|b| b.successful_count()).sum();
    Ok(BenchResult {
        blocksize: cfg.blocksize,
        clients: cfg.clients,
        txns: cfg.txns,
        successful,
        blocks: ledger.head_id() - 1,
        elapsed,
    })
}

/// Runs every combination; each point is the best of `repeats` runs.
pub fn sweep(
    base: &BenchConfig,
    blocksizes: &[usize],
    clients: &[usize],
    repeats: usize,
) -> Result<Vec<BenchResult>, BenchError> {
    let mut out = Vec::new();
    for &c in clients {
        for &b in blocksizes {
            let cfg = BenchConfig { blocksize: b, clients: c, ..base.clone() };
            let mut best: Option<BenchResult> = None;
            for _ in 0..repeats.max(1) {
                let r = run_bench(&cfg)?;
                if best.as_ref().is_none_or(|b| r.throughput() > b.throughput()) {
                    best = Some(r);
                }
            }
            out.extend(best);
        }
    }
    Ok(out)
}

/// Tab-separated table with a header row.
pub fn format_table(results: &[BenchResult]) -> String {
    let mut out = String::from("blocksize\tclients\ttxns\tsuccessful\tblocks\tseconds\ttps\n");
    for r in results {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.0}",
            r.blocksize,
            r.clients,
            r.txns,
            r.successful,
            r.blocks,
            r.elapsed.as_secs_f64(),
            r.throughput()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_commits_every_transaction() {
        let cfg = BenchConfig {
            blocksize: 100,
            txns: 450,
            users: 200,
            latency: Duration::ZERO,
            ..BenchConfig::default()
        };
        let r = run_bench(&cfg).unwrap();
        assert_eq!(r.blocks, 5);
        assert!(r.successful > 400 && r.successful <= 450);
        assert!(r.throughput() > 0.0);
        let table = format_table(&[r]);
        assert!(table.starts_with("blocksize\tclients"));
        assert_eq!(table.lines().count(), 2);
    }

    #[test]
    fn rejects_zero_blocksize() {
        let cfg = BenchConfig { blocksize: 0, ..BenchConfig::default() };
        assert!(matches!(run_bench(&cfg), Err(BenchError::Config(_))));
    }
}
