use std::collections::BTreeMap;

use wlc::consensus::RoundStatus;
use wlc::recovery::{Candidate, CandidateResult, RecoveryStrategy};
use wlc::sim::{
    run_network, EventKind, Fault, FaultScript, KeyLiteral, NetworkConfig, OrgSpec, RowChange, SimulationReport,
    METRICS_HEADER,
};
use wlc::smallbank::{generate_workload, SmallbankConfig};
use wlc::sql::engine::QuirkConfig;
use wlc::sql::value::RoundingMode;

fn config() -> NetworkConfig {
    NetworkConfig {
        seed: 11,
        consensus_threshold: Some(2),
        blocksize: 64,
        block_timeout: 1,
        submit_rate: 64,
        exec_rate: 64,
        sessions: 2,
        max_ticks: 2_000,
        ..NetworkConfig::default()
    }
}

fn workload(blocks: usize) -> Vec<String> {
    let cfg = SmallbankConfig { num_users: 300, ..SmallbankConfig::default() };
    generate_workload(&cfg, 5, blocks * 64).unwrap()
}

fn hot_row(bal: &str) -> RowChange {
    RowChange {
        table: "checking".into(),
        key: KeyLiteral::Int(1),
        set: BTreeMap::from([("bal".to_string(), bal.to_string())]),
    }
}

fn run(cfg: NetworkConfig, faults: Vec<Fault>, blocks: usize) -> SimulationReport {
    run_network(cfg, workload(blocks), &FaultScript { faults }).unwrap()
}

#[test]
fn fault_free_run_commits_everywhere() {
    let report = run(config(), vec![], 12);
    assert!(report.completed);
    assert!(report.blocks_cut >= 12);
    for org in ["O1", "O2", "O3"] {
        assert_eq!(report.head(org), report.blocks_cut, "{org}");
    }
    assert!(report.ledgers_agree());
    assert!(report.commits_are_safe());
    assert!(report.excluded.is_empty());
    assert!(report.throughput("O1") > 0.0);
    assert!(report.to_tsv().starts_with(METRICS_HEADER));
}

#[test]
fn runs_are_deterministic() {
    let faults = vec![Fault::CorruptRow { org: "O1".into(), tick: 6, change: hot_row("777.77") }];
    let a = run(config(), faults.clone(), 10);
    let b = run(config(), faults, 10);
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.ledgers, b.ledgers);
}

#[test]
fn corruption_is_detected_and_repaired() {
    let mut cfg = config();
    cfg.checkpoint = wlc::recovery::CheckpointSchedule::every(3);
    let faults = vec![Fault::CorruptRow { org: "O2".into(), tick: 8, change: hot_row("123456.78") }];
    let report = run(cfg, faults, 16);
    assert!(report.completed);
    assert_eq!(report.events_of("O2", EventKind::NonConsenting).count(), 1);
    assert_eq!(report.events_of("O2", EventKind::Recovered).count(), 1);
    assert!(report.ledgers_agree());
    assert!(report.commits_are_safe());
    for org in ["O1", "O2", "O3"] {
        assert_eq!(report.head(org), report.blocks_cut);
    }
    let session = &report.recoveries["O2"][0];
    assert_eq!(session.reports.len(), 1);
    assert!(matches!(session.reports[0].candidate, Candidate::Checkpoint(_)));
    // Other organizations never deviate.
    assert!(report.recoveries["O1"].is_empty() && report.recoveries["O3"].is_empty());
}

#[test]
fn every_strategy_repairs_a_corrupted_row() {
    for strategy in [
        RecoveryStrategy::OptimizedPartialReplay,
        RecoveryStrategy::PartialReplay,
        RecoveryStrategy::FullReplay,
        RecoveryStrategy::RestoreFromPeerState,
    ] {
        let mut cfg = config();
        cfg.recovery = strategy;
        let faults = vec![Fault::CorruptRow { org: "O3".into(), tick: 8, change: hot_row("5.00") }];
        let report = run(cfg, faults, 14);
        assert!(report.completed, "{strategy}");
        assert!(report.excluded.is_empty(), "{strategy}");
        assert!(report.ledgers_agree(), "{strategy}");
        assert_eq!(report.events_of("O3", EventKind::Recovered).count(), 1, "{strategy}");
    }
}

#[test]
fn no_recovery_excludes_deviating_org() {
    let mut cfg = config();
    cfg.recovery = RecoveryStrategy::NoRecovery;
    let faults = vec![Fault::CorruptRow { org: "O3".into(), tick: 8, change: hot_row("5.00") }];
    let report = run(cfg, faults, 12);
    assert!(report.excluded.contains("O3"));
    assert!(report.completed);
    assert_eq!(report.head("O1"), report.blocks_cut);
}

#[test]
fn equivocation_excludes_the_victim() {
    let faults = vec![Fault::EquivocateOrderer { org: "O1".into(), block: 5 }];
    let report = run(config(), faults, 10);
    let first = report.events_of("O1", EventKind::NonConsenting).next().unwrap();
    assert_eq!(first.block, Some(5));
    assert!(report.excluded.contains("O1"));
    assert_eq!(report.head("O1"), 4);
    assert_eq!(report.head("O2"), report.blocks_cut);
    assert!(report.ledgers_agree());
    let session = report.recoveries["O1"].last().unwrap();
    assert!(session.reports.iter().all(|r| r.result != CandidateResult::Consenting));
    assert_eq!(session.reports.last().unwrap().candidate, Candidate::Genesis);
}

#[test]
fn killed_org_stalls_unanimous_policy() {
    let mut cfg = config();
    cfg.consensus_threshold = Some(3);
    cfg.max_ticks = 200;
    let faults = vec![Fault::KillOrg { org: "O3".into(), tick: 5 }];
    let report = run(cfg, faults, 10);
    assert!(!report.completed);
    assert!(report.head("O1") < report.blocks_cut);
    assert!(report.commits_are_safe());
}

#[test]
fn tampered_and_dropped_votes_are_ignored() {
    let faults = vec![
        Fault::TamperVote { org: "O1".into(), block: 3 },
        Fault::DropVotes { from: "O2".into(), to: "O3".into(), first: 5, last: 100 },
    ];
    let report = run(config(), faults, 8);
    assert!(report.completed);
    assert!(report.ledgers_agree());
    let t = &report.transcripts[&("O2".to_string(), 3)];
    assert!(t.discarded.iter().any(|v| v.org == "O1"));
    assert!(report.transcripts[&("O3".to_string(), 6)].votes.iter().all(|v| v.org != "O2"));
}

#[test]
fn quirk_makes_org_non_consenting() {
    let mut cfg = config();
    cfg.organizations[2] = OrgSpec {
        quirks: QuirkConfig { decimal_rounding: RoundingMode::Truncate, ..QuirkConfig::default() },
        ..OrgSpec::new("O3")
    };
    let report = run(cfg, vec![], 8);
    let ev = report.events_of("O3", EventKind::NonConsenting).next().expect("quirk detected");
    let block = ev.block.unwrap();
    assert!(report.transcripts[&("O1".to_string(), block)].status == RoundStatus::ConsentingCommitted);
    assert!(report.excluded.contains("O3"));
    assert_eq!(report.head("O1"), report.blocks_cut);
}
