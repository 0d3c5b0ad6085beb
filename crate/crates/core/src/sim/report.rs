//! Simulation results and their line-oriented metrics file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use crate::consensus::{ConsensusPolicy, ConsensusTranscript};
use crate::crypto::OrgId;
use crate::ledger::{Ledger, RoundIndex};
use crate::recovery::RecoverySession;
use crate::sql::engine::DatabaseSnapshot;

/// Column header of the metrics file. Fields are tab separated.
pub const METRICS_HEADER: &str = "tick\torg\tevent\tblock\tdetail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    /// The orderer cut a block.
    Cut,
    /// An organization started executing a block.
    Execute,
    /// An organization's vote for a block became visible.
    Vote,
    Commit,
    NonConsenting,
    NoConsensus,
    /// An undecided organization facing a conflicting vote checks itself.
    SelfCheck,
    RecoveryStart,
    /// One recovery candidate finished; the detail names it and its result.
    Candidate,
    Recovered,
    Excluded,
    Killed,
    CorruptRow,
    CorruptCheckpoint,
    Equivocate,
    /// A client transaction failed the agreement phase.
    Rejected,
    EngineFailure,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Cut => "cut",
            EventKind::Execute => "execute",
            EventKind::Vote => "vote",
            EventKind::Commit => "commit",
            EventKind::NonConsenting => "non-consenting",
            EventKind::NoConsensus => "no-consensus",
            EventKind::SelfCheck => "self-check",
            EventKind::RecoveryStart => "recovery-start",
            EventKind::Candidate => "candidate",
            EventKind::Recovered => "recovered",
            EventKind::Excluded => "excluded",
            EventKind::Killed => "killed",
            EventKind::CorruptRow => "corrupt-row",
            EventKind::CorruptCheckpoint => "corrupt-checkpoint",
            EventKind::Equivocate => "equivocate",
            EventKind::Rejected => "rejected",
            EventKind::EngineFailure => "engine-failure",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub tick: u64,
    pub org: String,
    pub kind: EventKind,
    pub block: Option<RoundIndex>,
    pub detail: String,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let block = self.block.map_or_else(|| "-".to_string(), |b| b.to_string());
        let detail = self.detail.replace(['\t', '\n'], " ");
        write!(f, "{}\t{}\t{}\t{}\t{}", self.tick, self.org, self.kind, block, detail)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub policy: ConsensusPolicy,
    pub events: Vec<Event>,
    /// Per organization: (block id, commit tick) in commit order.
    pub commits: BTreeMap<OrgId, Vec<(RoundIndex, u64)>>,
    pub transcripts: BTreeMap<(OrgId, RoundIndex), ConsensusTranscript>,
    pub ledgers: BTreeMap<OrgId, Ledger>,
    /// Committed database state of each organization at the end of the run.
    pub states: BTreeMap<OrgId, DatabaseSnapshot>,
    pub recoveries: BTreeMap<OrgId, Vec<RecoverySession>>,
    pub excluded: BTreeSet<OrgId>,
    pub killed: BTreeSet<OrgId>,
    pub blocks_cut: RoundIndex,
    pub final_tick: u64,
    pub ramp_up: u64,
    /// Whether the run ended because every live organization was done.
    pub completed: bool,
}

impl SimulationReport {
    pub fn write_tsv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for e in &self.events {
            writeln!(out, "{e}")?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("events are UTF-8")
    }

    pub fn events_of<'a>(&'a self, org: &'a str, kind: EventKind) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.org == org && e.kind == kind)
    }

    pub fn commit_tick(&self, org: &str, block: RoundIndex) -> Option<u64> {
        self.commits.get(org)?.iter().find(|(b, _)| *b == block).map(|(_, t)| *t)
    }

    /// Tick at which the vote of `org` for `block` became visible, last one if repeated.
    pub fn vote_tick(&self, org: &str, block: RoundIndex) -> Option<u64> {
        self.events_of(org, EventKind::Vote).filter(|e| e.block == Some(block)).map(|e| e.tick).last()
    }

    pub fn head(&self, org: &str) -> RoundIndex {
        self.ledgers.get(org).map_or(0, Ledger::head_id)
    }

    /// Successful transactions in blocks `org` committed after the ramp-up window.
    pub fn successful_after_ramp_up(&self, org: &str) -> usize {
        let Some(ledger) = self.ledgers.get(org) else { return 0 };
        self.commits
            .get(org)
            .into_iter()
            .flatten()
            .filter(|(_, tick)| *tick >= self.ramp_up)
            .filter_map(|(b, _)| ledger.get(*b))
            .map(|b| b.successful_count())
            .sum()
    }

    /// Successful transactions per tick past the ramp-up window.
    pub fn throughput(&self, org: &str) -> f64 {
        let span = self.final_tick.saturating_sub(self.ramp_up).max(1);
        self.successful_after_ramp_up(org) as f64 / span as f64
    }

    /// Whether all organizations that were neither excluded nor killed hold
    /// byte-identical ledgers up to the lowest head among them.
    pub fn ledgers_agree(&self) -> bool {
        let live: Vec<&Ledger> = self
            .ledgers
            .iter()
            .filter(|(id, _)| !self.excluded.contains(*id) && !self.killed.contains(*id))
            .map(|(_, l)| l)
            .collect();
        let height = live.iter().map(|l| l.len()).min().unwrap_or(0);
        live.windows(2).all(|w| w[0].blocks()[..height] == w[1].blocks()[..height])
    }

    /// Every committed block has at least `c` valid votes for its hash.
    pub fn commits_are_safe(&self) -> bool {
        self.ledgers.iter().all(|(org, ledger)| {
            ledger.blocks().iter().all(|block| {
                let Some(t) = self.transcripts.get(&(org.clone(), block.block_id)) else {
                    // Blocks adopted from a peer carry no local transcript.
                    return self.recoveries.get(org).is_some_and(|r| !r.is_empty());
                };
                let hash = block.hash();
                t.audit(&self.policy)
                    && t.decided_hash == Some(hash)
                    && t.votes.iter().filter(|v| v.hash == hash).count() >= self.policy.threshold()
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_stable() {
        assert_eq!(METRICS_HEADER, "tick\torg\tevent\tblock\tdetail");
        let e = Event { tick: 3, org: "O1".into(), kind: EventKind::NonConsenting, block: Some(7), detail: "a\tb".into() };
        assert_eq!(e.to_string(), "3\tO1\tnon-consenting\t7\ta b");
        let e = Event { tick: 0, org: "C1".into(), kind: EventKind::Rejected, block: None, detail: String::new() };
        assert_eq!(e.to_string(), "0\tC1\trejected\t-\t");
    }
}
