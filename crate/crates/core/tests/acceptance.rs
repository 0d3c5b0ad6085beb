//! Acceptance criteria, run in order with one PASS/FAIL line each.
//!
//! Pass criterion numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestCaseError, TestRunner};

use wlc::agreement::AgreementPolicy;
use wlc::bench::{format_table, run_bench, BenchConfig, BenchResult};
use wlc::consensus::{run_consensus, ConsensusPolicy, HashVote, RoundStatus, VoteReply, VoteStore, VoteTransport};
use wlc::crypto::{KeyPair, KeyRegistry, OrgId};
use wlc::ledger::{build_ledger_block, read_frames, verify_frames, BitList, Ledger, LedgerVerdict, TxnRecord, LEDGER_MAGIC};
use wlc::parallel::{analyze_sql, build_graph, execute_block, execute_serial, PreparedTxn};
use wlc::recovery::{replay_ledger, Candidate, CandidateResult, CheckpointSchedule, ReplayError};
use wlc::sim::{run_network, EventKind, Fault, FaultScript, KeyLiteral, NetworkConfig, OrgSpec, PredicateSpec, RowChange, SimulationReport};
use wlc::smallbank::{generate_workload, AccountDistribution, SmallbankConfig, SmallbankGenerator};
use wlc::sql::engine::{Engine, QuirkConfig};
use wlc::sql::parser::{parse_statement, parse_transaction};
use wlc::sql::value::RoundingMode;
use wlc::EffectHash;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn small_net() -> NetworkConfig {
    NetworkConfig {
        seed: 21,
        consensus_threshold: Some(2),
        blocksize: 64,
        block_timeout: 1,
        submit_rate: 64,
        exec_rate: 64,
        sessions: 2,
        max_ticks: 3_000,
        ..NetworkConfig::default()
    }
}

fn small_workload(seed: u64, txns: usize) -> Vec<String> {
    let cfg = SmallbankConfig { num_users: 300, ..SmallbankConfig::default() };
    generate_workload(&cfg, seed, txns).expect("workload")
}

fn run(cfg: NetworkConfig, workload: Vec<String>, faults: Vec<Fault>) -> SimulationReport {
    run_network(cfg, workload, &FaultScript { faults }).expect("valid configuration")
}

fn hot_row(table: &str, bal: &str) -> RowChange {
    RowChange {
        table: table.into(),
        key: KeyLiteral::Int(1),
        set: BTreeMap::from([("bal".to_string(), bal.to_string())]),
    }
}

fn ledger_bytes(ledger: &Ledger) -> Vec<u8> {
    let mut out = Vec::new();
    ledger.write_to(&mut out).expect("in-memory write");
    out
}

fn c1_determinism() -> Outcome {
    let cfg = NetworkConfig {
        seed: 7,
        consensus_threshold: Some(2),
        blocksize: 256,
        submit_rate: 256,
        exec_rate: 256,
        block_timeout: 1,
        max_ticks: 5_000,
        ..NetworkConfig::default()
    };
    let sb = SmallbankConfig { num_users: 10_000, ..SmallbankConfig::default() };
    let bootstrap = SmallbankGenerator::new(sb.clone(), 7).map_err(|e| e.to_string())?.bootstrap().len();
    let workload = generate_workload(&sb, 7, 50 * 256 - bootstrap).map_err(|e| e.to_string())?;
    let report = run(cfg, workload, vec![]);
    check!(report.completed, "run did not complete");
    check!(report.blocks_cut == 50, "expected 50 blocks, got {}", report.blocks_cut);
    let bytes: Vec<Vec<u8>> = report.ledgers.values().map(ledger_bytes).collect();
    check!(report.ledgers.values().all(|l| l.head_id() == 50), "not every organization reached block 50");
    check!(bytes.windows(2).all(|w| w[0] == w[1]), "ledger files differ");
    Ok(format!("3 ledgers of 50 blocks, {} bytes each, identical", bytes[0].len()))
}

fn c2_heterogeneity() -> Outcome {
    // Two blocks of updates exact at two decimals, then unrestricted amounts.
    let sb = SmallbankConfig { num_users: 300, ..SmallbankConfig::default() };
    let mut generator = SmallbankGenerator::new(sb, 5).map_err(|e| e.to_string())?;
    let mut workload = generator.bootstrap();
    while workload.len() < 3 * 64 {
        let txn = generator.next_txn();
        if txn.to_sql().split_whitespace().all(|w| !w.contains('.') || w.ends_with('0')) {
            workload.push(txn.to_sql());
        }
    }
    workload.extend(generator.take_sql(7 * 64));
    let control = run(small_net(), workload.clone(), vec![]);
    check!(control.completed && control.excluded.is_empty(), "control run failed");
    // First block whose outcome differs under truncating arithmetic.
    let oracle = Engine::new(QuirkConfig { decimal_rounding: RoundingMode::Truncate, ..QuirkConfig::default() });
    let first = match replay_ledger(&control.ledgers["O1"], &oracle, 0, 1) {
        Err(ReplayError::Mismatch(b)) => b,
        other => return Err(format!("workload never exercises the quirk: {other:?}")),
    };
    let mut cfg = small_net();
    cfg.organizations[2].quirks.decimal_rounding = RoundingMode::Truncate;
    let report = run(cfg, workload, vec![]);
    let detected = report.events_of("O3", EventKind::NonConsenting).next().and_then(|e| e.block);
    check!(detected == Some(first), "O3 deviated at {detected:?}, oracle says block {first}");
    let status = |org: &str| report.transcripts.get(&(org.to_string(), first)).map(|t| t.status);
    check!(status("O3") == Some(RoundStatus::NonConsentingLocal), "O3 status {:?}", status("O3"));
    for org in ["O1", "O2"] {
        check!(status(org) == Some(RoundStatus::ConsentingCommitted), "{org} status {:?}", status(org));
        check!(report.head(org) == report.blocks_cut, "{org} stopped at {}", report.head(org));
    }
    check!(report.head("O3") == first - 1, "O3 committed past the deviating block");
    Ok(format!("O3 non-consenting at block {first}, the first block affected by the quirk; O1 and O2 commit"))
}

/// Tick right after `org` commits `block` in a fault-free run.
fn tick_after_commit(cfg: &NetworkConfig, workload: &[String], org: &str, block: u64) -> Result<u64, String> {
    let control = run(cfg.clone(), workload.to_vec(), vec![]);
    control.commit_tick(org, block).map(|t| t + 1).ok_or_else(|| format!("{org} never committed block {block}"))
}

fn c3_recovery() -> Outcome {
    let mut cfg = small_net();
    cfg.checkpoint = CheckpointSchedule::every(3);
    let workload = small_workload(9, 20 * 64);
    let tick = tick_after_commit(&cfg, &workload, "O2", 9)?;

    let single = vec![Fault::CorruptRow { org: "O2".into(), tick, change: hot_row("checking", "123456.78") }];
    let report = run(cfg.clone(), workload.clone(), single);
    let sessions = &report.recoveries["O2"];
    check!(sessions.len() == 1, "expected one recovery, got {}", sessions.len());
    let reports = &sessions[0].reports;
    check!(reports.len() == 1, "single corruption took {} iterations", reports.len());
    check!(reports[0].candidate == Candidate::Checkpoint(9), "started from {:?}", reports[0].candidate);
    check!(reports[0].result == CandidateResult::Consenting, "result {:?}", reports[0].result);
    let failing = sessions[0].block_id;
    check!(equal_ledgers(&report), "ledgers differ after single recovery");

    let double = vec![
        Fault::CorruptRow { org: "O2".into(), tick, change: hot_row("checking", "123456.78") },
        Fault::CorruptCheckpoint { org: "O2".into(), tick, change: hot_row("checking", "654321.98") },
    ];
    let report = run(cfg, workload, double);
    let sessions = &report.recoveries["O2"];
    check!(sessions.len() == 1, "expected one recovery, got {}", sessions.len());
    let reports = &sessions[0].reports;
    check!(reports.len() == 2, "double corruption took {} iterations", reports.len());
    check!(reports[0].candidate == Candidate::Checkpoint(9), "first candidate {:?}", reports[0].candidate);
    check!(reports[0].result != CandidateResult::Consenting, "corrupted checkpoint consented");
    check!(reports[1].candidate == Candidate::Checkpoint(6), "second candidate {:?}", reports[1].candidate);
    check!(reports[1].result == CandidateResult::Consenting, "second candidate {:?}", reports[1].result);
    check!(equal_ledgers(&report), "ledgers differ after double recovery");
    Ok(format!(
        "block {failing}: 1 iteration from checkpoint 9; with the checkpoint corrupted, 2 iterations (9: {:?}, then 6)",
        reports[0].result
    ))
}

fn equal_ledgers(report: &SimulationReport) -> bool {
    let bytes: Vec<Vec<u8>> = report.ledgers.values().map(ledger_bytes).collect();
    report.completed && report.excluded.is_empty() && bytes.windows(2).all(|w| w[0] == w[1])
}

fn slow_o2() -> NetworkConfig {
    let mut cfg = small_net();
    cfg.organizations[1].extra_delay = 6;
    cfg.vote_timeout = 2;
    cfg.max_ticks = 6_000;
    cfg
}

fn c4_robustness() -> Outcome {
    let workload = small_workload(13, 16 * 64);
    let faults = vec![Fault::CorruptRow { org: "O1".into(), tick: 12, change: hot_row("checking", "99999.99") }];
    let a = run(slow_o2(), workload.clone(), faults);
    check!(a.completed, "corruption run did not complete");
    let b = a.recoveries["O1"].first().map(|s| s.block_id).ok_or("O1 never recovered")?;
    let recovered = a.events_of("O1", EventKind::Recovered).next().map(|e| e.tick).ok_or("no recovered event")?;
    let o1_vote = a.vote_tick("O1", b).ok_or("O1 never voted on the failing block")?;
    let o3_commit = a.commit_tick("O3", b).ok_or("O3 never committed the failing block")?;
    let o2_vote = a.vote_tick("O2", b).ok_or("O2 never voted on the failing block")?;
    check!(o3_commit >= o1_vote && o3_commit >= recovered, "O3 committed {b} at {o3_commit} before O1 recovered at {recovered}");
    check!(o2_vote > o3_commit, "scenario: O2 voted on {b} at {o2_vote}, before O3 committed");
    check!(a.commit_tick("O3", b - 1).is_some_and(|t| t < o3_commit), "O3 made no progress before block {b}");

    let kill = 15;
    let k = run(slow_o2(), workload, vec![Fault::KillOrg { org: "O3".into(), tick: kill }]);
    check!(k.completed, "kill run did not complete");
    for org in ["O1", "O2"] {
        check!(k.head(org) == k.blocks_cut, "{org} stopped at {}", k.head(org));
    }
    let after: Vec<(u64, u64)> = k.commits["O1"].iter().filter(|(_, t)| *t > kill).copied().collect();
    check!(!after.is_empty(), "O1 committed nothing after the kill");
    for (block, t) in &after {
        let v = k.vote_tick("O2", *block).ok_or(format!("O2 never voted on {block}"))?;
        check!(*t >= v, "O1 committed {block} at {t} before O2's vote at {v}");
    }
    let waited = after.iter().filter(|(blk, t)| k.vote_tick("O1", *blk).is_some_and(|v| v < *t)).count();
    check!(waited > 0, "O1 never waited for O2");
    check!(a.commits_are_safe() && k.commits_are_safe(), "a committed block lacks 2 matching votes");
    Ok(format!(
        "O3 held block {b} until O1 recovered (tick {recovered}, O2 voted at {o2_vote}); after the kill O1 waited on O2 for {waited} of {} blocks; all commits backed by 2 votes",
        after.len()
    ))
}

fn smallbank_engine(users: u32) -> Engine {
    let sb = SmallbankConfig { num_users: users, ..SmallbankConfig::default() };
    let engine = Engine::new(QuirkConfig::default());
    for sql in SmallbankGenerator::new(sb, 0).expect("generator").bootstrap() {
        assert!(engine.execute_sql(&sql), "bootstrap failed: {sql}");
    }
    engine
}

fn c5_serial_equivalence() -> Outcome {
    let base = smallbank_engine(200);
    let snapshot = base.snapshot_all();
    let catalog = base.catalog();
    let mut runner = TestRunner::new(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() });
    let strategy = (any::<u64>(), 16usize..=256, prop::sample::select(vec![1usize, 2, 8]), 20u32..=200, any::<bool>());
    let stats = std::cell::Cell::new((0usize, 0usize));
    let result = runner.run(&strategy, |(seed, size, k, users, uniform)| {
        let distribution = if uniform { AccountDistribution::Uniform } else { AccountDistribution::default() };
        let cfg = SmallbankConfig { num_users: users, distribution, ..SmallbankConfig::default() };
        let txns: Vec<PreparedTxn> = SmallbankGenerator::new(cfg, seed)
            .expect("generator")
            .take_sql(size)
            .iter()
            .map(|s| parse_transaction(s).ok())
            .collect();
        let serial = Engine::new(QuirkConfig::default());
        let staged = Engine::new(QuirkConfig::default());
        serial.restore_all(&snapshot);
        staged.restore_all(&snapshot);
        serial.begin_block();
        staged.begin_block();
        let serial_bits = execute_serial(&txns, &serial).map_err(|e| TestCaseError::fail(e.0))?;
        let (staged_bits, graph) = execute_block(&txns, &catalog, &staged, k).map_err(|e| TestCaseError::fail(e.0))?;
        prop_assert_eq!(&staged_bits, &serial_bits);
        prop_assert_eq!(staged.take_digest().hash_digest(), serial.take_digest().hash_digest());
        prop_assert!(staged.dump() == serial.dump(), "final states differ");
        let (cases, stages) = stats.get();
        stats.set((cases + 1, stages + graph.stages().len()));
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let (cases, stages) = stats.get();
    Ok(format!("{cases} cases equal to serial execution (mean {:.1} stages)", stages as f64 / cases as f64))
}

const NINE: [&str; 9] = [
    "UPDATE foo SET a = a + 1 WHERE pk = 1",
    "UPDATE foo SET a = a + 1 WHERE pk = 2",
    "UPDATE foo SET a = a + 1 WHERE pk = 3",
    "UPDATE foo SET a = a - 1 WHERE pk BETWEEN 1 AND 2",
    "SELECT a FROM foo WHERE pk = 3",
    "UPDATE foo SET a = 0 WHERE pk = 4",
    "UPDATE foo SET a = a + 2 WHERE pk >= 2 AND pk <= 3",
    "SELECT * FROM foo WHERE pk = 4",
    "DELETE FROM foo WHERE pk > 2",
];

fn c6_stages() -> Outcome {
    let engine = Engine::new(QuirkConfig::default());
    engine.execute_external(&parse_statement("CREATE TABLE foo (pk INT PRIMARY KEY, a INT)").unwrap()).unwrap();
    let catalog = engine.catalog();
    let sets: Vec<_> = NINE.iter().enumerate().map(|(i, s)| analyze_sql(i, s, &catalog).ok()).collect();
    let stages = build_graph(&sets).stages();
    let expected = vec![vec![0, 1, 2, 5], vec![3, 4, 7], vec![6], vec![8]];
    check!(stages == expected, "stages {stages:?}");
    Ok("4 stages: {T1,T2,T3,T6} {T4,T5,T8} {T7} {T9}".into())
}

struct Stores(BTreeMap<OrgId, Arc<VoteStore>>);

impl VoteTransport for Stores {
    fn request(&self, peer: &str, block_id: u64) -> VoteReply {
        self.0.get(peer).map_or(VoteReply::Unreachable, |s| s.serve_hash_request(block_id))
    }
}

/// Expected status of an organization holding `labels[me]`.
fn brute_force(labels: &[u8; 3], me: usize) -> RoundStatus {
    let holders = |l: u8| labels.iter().filter(|x| **x == l).count();
    let quorum: Vec<u8> = (0..3).filter(|l| holders(*l) >= 2).collect();
    match quorum.as_slice() {
        [l] if *l == labels[me] => RoundStatus::ConsentingCommitted,
        [_] => RoundStatus::NonConsentingLocal,
        _ => RoundStatus::NoGlobalConsensus,
    }
}

fn c7_consensus() -> Outcome {
    let ids: Vec<OrgId> = ["O1", "O2", "O3"].map(String::from).to_vec();
    let keys: Vec<KeyPair> = ids.iter().map(|id| KeyPair::derive(77, id)).collect();
    let mut registry = KeyRegistry::new();
    for (id, key) in ids.iter().zip(&keys) {
        registry.register(id.clone(), key.public());
    }
    let policy = ConsensusPolicy::new(2, 3).map_err(|e| e.to_string())?;
    let mut cases = 0;
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for code in 0..27u32 {
        let labels = [(code % 3) as u8, (code / 3 % 3) as u8, (code / 9) as u8];
        let block = u64::from(code) + 1;
        let votes: Vec<HashVote> = (0..3)
            .map(|i| HashVote::sign(&keys[i], ids[i].clone(), block, EffectHash::of(&[labels[i]])))
            .collect();
        let transport = Stores(
            ids.iter()
                .zip(&votes)
                .map(|(id, v)| {
                    let store = Arc::new(VoteStore::new());
                    store.publish(v.clone());
                    (id.clone(), store)
                })
                .collect(),
        );
        let mut committed = Vec::new();
        for i in 0..3 {
            let result = run_consensus(&votes[i], &ids, &policy, &registry, &transport, 0);
            let expected = brute_force(&labels, i);
            check!(result.transcript.status == expected, "labels {labels:?} at O{}: {:?} vs {expected:?}", i + 1, result.transcript.status);
            if expected == RoundStatus::ConsentingCommitted {
                committed.push(result.decided_hash);
            }
            *tally.entry(format!("{expected}")).or_default() += 1;
        }
        committed.dedup();
        check!(committed.len() <= 1, "labels {labels:?} commit two different blocks");
        cases += 1;
    }
    let summary: Vec<String> = tally.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Ok(format!("{cases} assignments match the oracle ({})", summary.join(", ")))
}

fn ten_block_ledger() -> Ledger {
    let mut ledger = Ledger::new();
    for id in 1..=10u64 {
        let ta_list: Vec<TxnRecord> = (0..3)
            .map(|j| TxnRecord::new(format!("C{}", j + 1), format!("UPDATE checking SET bal = bal + {j} WHERE custid = {id}")))
            .collect();
        let bits: BitList = (0..3).map(|j| (id + j) % 4 != 0).collect();
        let block = build_ledger_block(id, ta_list, bits, EffectHash::of(&id.to_be_bytes()), &ledger).unwrap();
        ledger.append(block).unwrap();
    }
    ledger
}

fn c8_tamper() -> Outcome {
    let ledger = ten_block_ledger();
    let bytes = ledger_bytes(&ledger);
    check!(verify_frames(&read_frames(&bytes[..]).unwrap()).is_ok(), "untouched ledger rejected");
    // Byte ranges of frames: length prefix, block bytes, link hash.
    let mut ends = Vec::new();
    let mut at = LEDGER_MAGIC.len();
    while at < bytes.len() {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 4 + len + 32;
        ends.push(at);
    }
    check!(ends.len() == 10, "expected 10 frames, found {}", ends.len());
    let affected = |pos: usize| ends.iter().position(|e| pos < *e).map_or(10, |i| i as u64 + 1);
    let step = (bytes.len() / 400).max(1);
    let positions: Vec<usize> = (0..bytes.len()).step_by(step).collect();
    check!(positions.len() >= 200, "only {} positions", positions.len());
    for &pos in &positions {
        for flip in [0x01u8, 0xFF] {
            let mut copy = bytes.clone();
            copy[pos] ^= flip;
            match read_frames(&copy[..]).map(|f| verify_frames(&f)) {
                Err(_) => {}
                Ok(LedgerVerdict::FirstBadBlock(b)) if b <= affected(pos) => {}
                Ok(v) => return Err(format!("byte {pos} ^ {flip:#x} (block {}): {v:?}", affected(pos))),
            }
        }
    }
    Ok(format!("{} positions x 2 mutations of a {}-byte file all detected in time", positions.len(), bytes.len()))
}

fn c9_blocksize_trend() -> Outcome {
    // Best of two, with repeats interleaved so drift hits every blocksize alike.
    let mut results: Vec<BenchResult> = Vec::new();
    for _ in 0..2 {
        for blocksize in [256, 1024, 4096] {
            let r = run_bench(&BenchConfig { txns: 8192, blocksize, ..BenchConfig::default() }).map_err(|e| e.to_string())?;
            match results.iter_mut().find(|b| b.blocksize == blocksize) {
                Some(best) if best.throughput() >= r.throughput() => {}
                Some(best) => *best = r,
                None => results.push(r),
            }
        }
    }
    print!("{}", format_table(&results));
    let tput = |b: usize| results.iter().find(|r| r.blocksize == b).map(|r| r.throughput()).unwrap_or(0.0);
    let (small, large) = (tput(256), tput(4096));
    check!(results.iter().all(|r| r.successful == r.txns), "not every transaction succeeded");
    check!(large > small, "throughput(4096) = {large:.0} <= throughput(256) = {small:.0}");
    Ok(format!("{small:.0} -> {:.0} -> {large:.0} txn/s for blocksize 256 -> 1024 -> 4096", tput(1024)))
}

fn c10_agreement() -> Outcome {
    let mut cfg = NetworkConfig {
        seed: 3,
        consensus_threshold: Some(2),
        blocksize: 1,
        block_timeout: 1,
        submit_rate: 1,
        exec_rate: 1,
        max_ticks: 500,
        ..NetworkConfig::default()
    };
    cfg.organizations = vec![
        OrgSpec {
            predicates: vec![PredicateSpec {
                table: "trades".into(),
                predicate: "txn.amount <= stocks.amount[product = txn.product]".into(),
            }],
            ..OrgSpec::new("Seller")
        },
        OrgSpec {
            predicates: vec![PredicateSpec {
                table: "trades".into(),
                predicate: "txn.totalprice <= fund.availablemoney".into(),
            }],
            ..OrgSpec::new("Buyer")
        },
        OrgSpec::new("Auditor"),
    ];
    cfg.agreement = vec![AgreementPolicy {
        table: "trades".into(),
        required_orgs: ["Seller".to_string(), "Buyer".to_string()].into(),
    }];
    const IN_BUDGET: &str = "INSERT INTO trades (tid, product, amount, totalprice) VALUES (42, 'Gearbox', 5, 60000)";
    const OVERDRAFT: &str = "INSERT INTO trades (tid, product, amount, totalprice) VALUES (43, 'Gearbox', 2, 90000)";
    let mut workload = vec![
        "CREATE TABLE stocks (product TEXT PRIMARY KEY, amount INT); \
         CREATE TABLE fund (owner TEXT PRIMARY KEY, availablemoney INT); \
         CREATE TABLE trades (tid INT PRIMARY KEY, product TEXT, amount INT, totalprice INT)"
            .to_string(),
        "INSERT INTO stocks (product, amount) VALUES ('Gearbox', 10); \
         INSERT INTO fund (owner, availablemoney) VALUES ('Buyer', 75000)"
            .to_string(),
    ];
    // Let the setup commit before the trades are proposed.
    workload.extend((0..6).map(|_| "SELECT * FROM stocks".to_string()));
    workload.extend([IN_BUDGET.to_string(), OVERDRAFT.to_string()]);
    let report = run(cfg, workload, vec![]);
    check!(report.completed, "run did not complete");
    let rejected: Vec<_> = report.events.iter().filter(|e| e.kind == EventKind::Rejected).collect();
    check!(rejected.len() == 1, "expected one rejection, got {}", rejected.len());
    check!(rejected[0].detail == "dissenting=Buyer timed_out=", "rejection detail `{}`", rejected[0].detail);
    for (org, ledger) in &report.ledgers {
        let records: Vec<(&TxnRecord, bool)> = ledger
            .blocks()
            .iter()
            .flat_map(|b| b.ta_list.iter().zip(b.ta_successful.iter()))
            .collect();
        let trade = records.iter().find(|(r, _)| r.sql == IN_BUDGET);
        check!(
            trade.is_some_and(|(r, ok)| *ok && r.admitted && r.signers == ["Buyer", "Seller"]),
            "{org}: in-budget trade not committed with both agreements: {trade:?}"
        );
        check!(records.iter().all(|(r, _)| r.sql != OVERDRAFT), "{org}: overdraft reached the ledger");
        check!(report.states[org]["trades"].len() == 1, "{org}: trades table holds {} rows", report.states[org]["trades"].len());
    }
    check!(equal_ledgers(&report), "ledgers differ");
    Ok("overdraft rejected by Buyer; in-budget trade chained and committed at Seller, Buyer and Auditor".into())
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "end-to-end determinism", c1_determinism),
        (2, "heterogeneity detection", c2_heterogeneity),
        (3, "checkpoint recovery", c3_recovery),
        (4, "robustness timeline", c4_robustness),
        (5, "parallel serial-equivalence", c5_serial_equivalence),
        (6, "dependency stages", c6_stages),
        (7, "consensus brute force", c7_consensus),
        (8, "ledger tamper detection", c8_tamper),
        (9, "blocksize trend", c9_blocksize_trend),
        (10, "agreement enforcement", c10_agreement),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, criterion) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = Duration::as_secs_f64(&start.elapsed());
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
