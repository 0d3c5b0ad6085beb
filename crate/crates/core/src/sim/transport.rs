//! In-process vote delivery with fault hooks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::consensus::{VoteReply, VoteStore, VoteTransport};
use crate::crypto::OrgId;
use crate::ledger::RoundIndex;

#[derive(Debug, Clone, PartialEq, Eq)]
struct DropRule {
    from: OrgId,
    to: OrgId,
    first: RoundIndex,
    last: RoundIndex,
}

/// Shared view of every organization's vote store.
///
/// An organization that is still working on a block keeps its votes from
/// that block on hidden until the simulated work is done.
#[derive(Debug, Default)]
pub struct SimNet {
    stores: BTreeMap<OrgId, Arc<VoteStore>>,
    killed: BTreeSet<OrgId>,
    hidden: BTreeMap<OrgId, (RoundIndex, u64)>,
    drops: Vec<DropRule>,
    tampered: BTreeSet<(OrgId, RoundIndex)>,
    tick: u64,
}

impl SimNet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach(&mut self, org: impl Into<OrgId>, store: Arc<VoteStore>) {
        self.stores.insert(org.into(), store);
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn kill(&mut self, org: &str) {
        self.killed.insert(org.to_string());
    }

    pub fn is_killed(&self, org: &str) -> bool {
        self.killed.contains(org)
    }

    /// Votes of `org` on blocks from `block` on stay invisible before `until`.
    pub fn hide(&mut self, org: &str, block: RoundIndex, until: u64) {
        self.hidden.insert(org.to_string(), (block, until));
    }

    pub fn drop_votes(&mut self, from: &str, to: &str, first: RoundIndex, last: RoundIndex) {
        self.drops.push(DropRule { from: from.into(), to: to.into(), first, last });
    }

    pub fn tamper(&mut self, org: &str, block: RoundIndex) {
        self.tampered.insert((org.to_string(), block));
    }

    /// Transport as seen by `me`.
    pub fn view<'a>(&'a self, me: &'a str) -> NetView<'a> {
        NetView { net: self, me }
    }

    fn request(&self, me: &str, peer: &str, block: RoundIndex) -> VoteReply {
        if self.killed.contains(peer) {
            return VoteReply::Unreachable;
        }
        if self.drops.iter().any(|d| d.from == peer && d.to == me && (d.first..=d.last).contains(&block)) {
            return VoteReply::Unreachable;
        }
        if let Some((from, until)) = self.hidden.get(peer) {
            if block >= *from && self.tick < *until {
                return VoteReply::NotReady;
            }
        }
        let Some(store) = self.stores.get(peer) else {
            return VoteReply::Unreachable;
        };
        match store.serve_hash_request(block) {
            VoteReply::Vote(mut vote) if self.tampered.contains(&(peer.to_string(), block)) => {
                vote.hash.0[0] ^= 0x01;
                VoteReply::Vote(vote)
            }
            reply => reply,
        }
    }
}

pub struct NetView<'a> {
    net: &'a SimNet,
    me: &'a str,
}

impl VoteTransport for NetView<'_> {
    fn request(&self, peer: &str, block_id: RoundIndex) -> VoteReply {
        self.net.request(self.me, peer, block_id)
    }
}
