//! Hash voting on ledger blocks.
//!
//! Every organization signs the hash of its locally built block and asks its
//! peers for theirs. A block is committed when some hash is backed by at least
//! `c` organizations and that hash is the local one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use parking_lot::RwLock;

use crate::crypto::{KeyPair, KeyRegistry, OrgId, SignatureBytes};
use crate::hash::EffectHash;
use crate::ledger::RoundIndex;

pub const DEFAULT_VOTE_RETRIES: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConsensusPolicy {
    c: usize,
    n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("consensus threshold {c} is not within 1..={n}")]
pub struct InvalidPolicy {
    pub c: usize,
    pub n: usize,
}

impl ConsensusPolicy {
    pub fn new(c: usize, n: usize) -> Result<Self, InvalidPolicy> {
        if c == 0 || c > n {
            return Err(InvalidPolicy { c, n });
        }
        Ok(ConsensusPolicy { c, n })
    }

    /// Smallest strict majority of `n`.
    pub fn majority(n: usize) -> Self {
        ConsensusPolicy { c: n / 2 + 1, n }
    }

    pub fn threshold(&self) -> usize {
        self.c
    }

    pub fn orgs(&self) -> usize {
        self.n
    }

    /// With a strict-majority threshold at most one hash can ever reach it.
    pub fn is_majority(&self) -> bool {
        2 * self.c > self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoundStatus {
    ConsentingCommitted,
    NonConsentingLocal,
    NoGlobalConsensus,
}

impl fmt::Display for RoundStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundStatus::ConsentingCommitted => "consenting",
            RoundStatus::NonConsentingLocal => "non-consenting",
            RoundStatus::NoGlobalConsensus => "no-consensus",
        })
    }
}

/// A signed statement "organization `org` computed `hash` for block `block_id`".
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct HashVote {
    pub org: OrgId,
    pub block_id: RoundIndex,
    pub hash: EffectHash,
    pub signature: SignatureBytes,
}

impl fmt::Debug for HashVote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashVote({} #{} {})", self.org, self.block_id, self.hash.short())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed vote message")]
pub struct VoteDecodeError;

impl HashVote {
    /// Bytes covered by the signature: org id, block id, hash.
    pub fn signed_bytes(org: &str, block_id: RoundIndex, hash: &EffectHash) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + org.len() + 8 + 32 + 8);
        out.extend_from_slice(b"wlc-vote");
        out.extend_from_slice(&(org.len() as u32).to_be_bytes());
        out.extend_from_slice(org.as_bytes());
        out.extend_from_slice(&block_id.to_be_bytes());
        out.extend_from_slice(hash.as_bytes());
        out
    }

    pub fn sign(key: &KeyPair, org: impl Into<OrgId>, block_id: RoundIndex, hash: EffectHash) -> Self {
        let org = org.into();
        let signature = key.sign(&Self::signed_bytes(&org, block_id, &hash));
        HashVote { org, block_id, hash, signature }
    }

    pub fn verify(&self, registry: &KeyRegistry) -> bool {
        registry.verify(&self.org, &Self::signed_bytes(&self.org, self.block_id, &self.hash), &self.signature)
    }

    /// Wire encoding: u32 org length, org, u64 block id, [32] hash, [64] signature.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.org.len() + 8 + 32 + 64);
        out.extend_from_slice(&(self.org.len() as u32).to_be_bytes());
        out.extend_from_slice(self.org.as_bytes());
        out.extend_from_slice(&self.block_id.to_be_bytes());
        out.extend_from_slice(self.hash.as_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, VoteDecodeError> {
        let len = u32::from_be_bytes(bytes.get(..4).ok_or(VoteDecodeError)?.try_into().unwrap()) as usize;
        let rest = &bytes[4..];
        if rest.len() != len + 8 + 32 + 64 {
            return Err(VoteDecodeError);
        }
        let org = String::from_utf8(rest[..len].to_vec()).map_err(|_| VoteDecodeError)?;
        let rest = &rest[len..];
        Ok(HashVote {
            org,
            block_id: u64::from_be_bytes(rest[..8].try_into().unwrap()),
            hash: EffectHash(rest[8..40].try_into().unwrap()),
            signature: rest[40..104].try_into().unwrap(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteReply {
    Vote(HashVote),
    /// The peer has not (yet) finished the block.
    NotReady,
    Unreachable,
}

/// An organization's own published votes, served to peers.
///
/// A vote is normally written once. An organization that starts recovering
/// withdraws its vote for the failing block and publishes a new one only if
/// recovery produced a different hash.
#[derive(Debug, Default)]
pub struct VoteStore {
    votes: RwLock<BTreeMap<RoundIndex, HashVote>>,
}

impl VoteStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, vote: HashVote) {
        self.votes.write().insert(vote.block_id, vote);
    }

    pub fn retract(&self, block_id: RoundIndex) {
        self.votes.write().remove(&block_id);
    }

    pub fn get(&self, block_id: RoundIndex) -> Option<HashVote> {
        self.votes.read().get(&block_id).cloned()
    }

    pub fn serve_hash_request(&self, block_id: RoundIndex) -> VoteReply {
        match self.get(block_id) {
            Some(v) => VoteReply::Vote(v),
            None => VoteReply::NotReady,
        }
    }

    /// Drops every vote above `block_id`; used when adopting a peer's history.
    pub fn truncate_after(&self, block_id: RoundIndex) {
        self.votes.write().split_off(&(block_id + 1));
    }
}

/// How an organization reaches its peers' vote stores.
pub trait VoteTransport {
    fn request(&self, peer: &str, block_id: RoundIndex) -> VoteReply;

    /// Called between polling rounds.
    fn backoff(&self) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusTranscript {
    pub block_id: RoundIndex,
    /// Valid votes, own vote included, ordered by organization.
    pub votes: Vec<HashVote>,
    /// Votes dropped for a bad signature or a mismatched org or block.
    pub discarded: Vec<HashVote>,
    /// Peers that contributed no valid vote.
    pub missing: Vec<OrgId>,
    pub local_hash: EffectHash,
    pub status: RoundStatus,
    pub decided_hash: Option<EffectHash>,
}

impl ConsensusTranscript {
    /// Recomputes the decision from the recorded votes.
    pub fn audit(&self, policy: &ConsensusPolicy) -> bool {
        let hashes: Vec<EffectHash> = self.votes.iter().map(|v| v.hash).collect();
        decide(&hashes, &self.local_hash, policy) == (self.decided_hash, self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusResult {
    pub decided_hash: Option<EffectHash>,
    pub consenting: bool,
    pub transcript: ConsensusTranscript,
}

impl ConsensusResult {
    /// Whether more votes could still change the outcome.
    pub fn is_final(&self, policy: &ConsensusPolicy) -> bool {
        outcome_is_final(&self.transcript, policy)
    }
}

fn tally(hashes: &[EffectHash]) -> BTreeMap<EffectHash, usize> {
    let mut counts = BTreeMap::new();
    for h in hashes {
        *counts.entry(*h).or_insert(0) += 1;
    }
    counts
}

/// Decision over a multiset of voted hashes, one per organization.
///
/// Some hash reaching `c` and equal to the local hash commits. A hash reaching
/// `c` that differs from the local hash makes the local organization
/// non-consenting. No hash reaching `c`, or two distinct hashes reaching it,
/// is no global consensus.
pub fn decide(hashes: &[EffectHash], local: &EffectHash, policy: &ConsensusPolicy) -> (Option<EffectHash>, RoundStatus) {
    let reached: Vec<EffectHash> =
        tally(hashes).into_iter().filter(|(_, n)| *n >= policy.c).map(|(h, _)| h).collect();
    match reached.as_slice() {
        [h] if h == local => (Some(*h), RoundStatus::ConsentingCommitted),
        [h] => (Some(*h), RoundStatus::NonConsentingLocal),
        _ => (None, RoundStatus::NoGlobalConsensus),
    }
}

fn outcome_is_final(t: &ConsensusTranscript, policy: &ConsensusPolicy) -> bool {
    let pending = t.missing.len();
    if pending == 0 {
        return true;
    }
    let counts = tally(&t.votes.iter().map(|v| v.hash).collect::<Vec<_>>());
    let reached = counts.values().filter(|n| **n >= policy.c).count();
    match reached {
        // Another hash (existing or new) could still reach the threshold.
        1 => counts.values().all(|n| *n >= policy.c || n + pending < policy.c) && pending < policy.c,
        0 => counts.values().all(|n| n + pending < policy.c) && pending < policy.c,
        _ => true,
    }
}

/// Polls `peers` for their votes on `own.block_id` and decides.
///
/// Polling stops once the outcome can no longer change or after `retries`
/// additional rounds; peers that never delivered a valid vote are listed as
/// missing.
pub fn run_consensus(
    own: &HashVote,
    peers: &[OrgId],
    policy: &ConsensusPolicy,
    registry: &KeyRegistry,
    transport: &dyn VoteTransport,
    retries: u32,
) -> ConsensusResult {
    let block_id = own.block_id;
    let mut votes: BTreeMap<OrgId, HashVote> = BTreeMap::new();
    votes.insert(own.org.clone(), own.clone());
    let mut discarded = Vec::new();
    let mut pending: BTreeSet<OrgId> = peers.iter().filter(|p| **p != own.org).cloned().collect();
    let mut transcript = ConsensusTranscript {
        block_id,
        votes: Vec::new(),
        discarded: Vec::new(),
        missing: Vec::new(),
        local_hash: own.hash,
        status: RoundStatus::NoGlobalConsensus,
        decided_hash: None,
    };
    for attempt in 0..=retries {
        if attempt > 0 {
            transport.backoff();
        }
        for peer in pending.clone() {
            if let VoteReply::Vote(v) = transport.request(&peer, block_id) {
                if v.org == peer && v.block_id == block_id && v.verify(registry) {
                    pending.remove(&peer);
                    votes.insert(peer, v);
                } else {
                    discarded.push(v);
                }
            }
        }
        transcript.votes = votes.values().cloned().collect();
        transcript.missing = pending.iter().cloned().collect();
        if outcome_is_final(&transcript, policy) {
            break;
        }
    }
    let hashes: Vec<EffectHash> = transcript.votes.iter().map(|v| v.hash).collect();
    let (decided_hash, status) = decide(&hashes, &own.hash, policy);
    transcript.discarded = discarded;
    transcript.status = status;
    transcript.decided_hash = decided_hash;
    ConsensusResult { decided_hash, consenting: status == RoundStatus::ConsentingCommitted, transcript }
}
