//! Per-block digest tables.
//!
//! Every row-level change made by a block is recorded as a digest tuple
//! `(pk, serial, hash, change_type)`; the block's `hash_digest` is SHA-256 over
//! the tuple hashes sorted by `(table, pk bytes, serial)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::hash::EffectHash;
use crate::sql::value::Value;

/// Separator placed between canonical values in the tuple encoding.
pub const FIELD_SEPARATOR: u8 = 0x1F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChangeType {
    Insert,
    Update,
    Delete,
}

impl ChangeType {
    pub fn code(self) -> char {
        match self {
            ChangeType::Insert => 'I',
            ChangeType::Update => 'U',
            ChangeType::Delete => 'D',
        }
    }
}

impl fmt::Display for ChangeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Canonical tuple encoding: big-endian u32 value count, then the canonical
/// values joined with 0x1F.
pub fn encode_tuple<'a>(values: impl IntoIterator<Item = &'a Value>) -> Vec<u8> {
    let values: Vec<&Value> = values.into_iter().collect();
    let mut out = Vec::with_capacity(4 + values.len() * 8);
    out.extend_from_slice(&(values.len() as u32).to_be_bytes());
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(FIELD_SEPARATOR);
        }
        out.extend_from_slice(v.canonical().as_bytes());
    }
    out
}

pub fn hash_row(values: &[Value]) -> EffectHash {
    EffectHash::of(&encode_tuple(values))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestTuple {
    /// Canonical encoding of the primary-key values.
    pub pk: Vec<u8>,
    pub serial: u64,
    pub hash: EffectHash,
    pub change_type: ChangeType,
}

/// Digest tuples for one base table, accumulated during a single block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DigestTable {
    base_table: String,
    tuples: Vec<DigestTuple>,
    serials: HashMap<Vec<u8>, u64>,
}

impl DigestTable {
    pub fn new(base_table: impl Into<String>) -> Self {
        DigestTable { base_table: base_table.into(), tuples: Vec::new(), serials: HashMap::new() }
    }

    pub fn base_table(&self) -> &str {
        &self.base_table
    }

    pub fn tuples(&self) -> &[DigestTuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Appends a tuple whose serial is the number of earlier tuples for `pk` in this block.
    pub fn emit_digest_tuple(&mut self, pk: Vec<u8>, hash: EffectHash, change_type: ChangeType) {
        let counter = self.serials.entry(pk.clone()).or_insert(0);
        let serial = *counter;
        *counter += 1;
        self.tuples.push(DigestTuple { pk, serial, hash, change_type });
    }

    pub fn clear(&mut self) {
        self.tuples.clear();
        self.serials.clear();
    }
}

/// A single captured change, before it is assigned a serial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedChange {
    pub table: String,
    pub pk: Vec<u8>,
    pub hash: EffectHash,
    pub change_type: ChangeType,
}

/// All digest tables touched by one block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockDigest {
    tables: BTreeMap<String, DigestTable>,
}

impl BlockDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, change: CapturedChange) {
        self.tables
            .entry(change.table.clone())
            .or_insert_with(|| DigestTable::new(change.table))
            .emit_digest_tuple(change.pk, change.hash, change.change_type);
    }

    pub fn tables(&self) -> impl Iterator<Item = &DigestTable> {
        self.tables.values()
    }

    pub fn table(&self, name: &str) -> Option<&DigestTable> {
        self.tables.get(name)
    }

    pub fn tuple_count(&self) -> usize {
        self.tables.values().map(DigestTable::len).sum()
    }

    pub fn hash_digest(&self) -> EffectHash {
        compute_hash_digest(self.tables.values())
    }
}

/// SHA-256 over the tuple hashes of every table, ordered by
/// `(base table name, pk bytes, serial)`. Arrival order is irrelevant.
pub fn compute_hash_digest<'a>(tables: impl IntoIterator<Item = &'a DigestTable>) -> EffectHash {
    let mut entries: Vec<(&str, &[u8], u64, &EffectHash)> = tables
        .into_iter()
        .flat_map(|t| t.tuples.iter().map(move |d| (t.base_table.as_str(), d.pk.as_slice(), d.serial, &d.hash)))
        .collect();
    entries.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let mut hasher = Sha256::new();
    for (_, _, _, h) in entries {
        hasher.update(h.as_bytes());
    }
    EffectHash(hasher.finalize().into())
}
