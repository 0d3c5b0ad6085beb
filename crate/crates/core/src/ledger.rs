//! Ledger blocks, their canonical encoding and the hash-chained ledger.
//!
//! Canonical block bytes, all integers big-endian:
//!
//! ```text
//! u64 block_id
//! u32 n, then n transaction records:
//!     str client, u32 m, m x str signer, u8 admitted, str sql
//! u32 bit count, ceil(bits/8) bytes (MSB first)
//! [32] hash_digest
//! [32] hash_previous
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.
//!
//! Ledger file: the magic `WLCLEDG1`, then one frame per block:
//! `u32 length, block bytes, [32] SHA-256 of the block bytes`.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::crypto::OrgId;
use crate::hash::EffectHash;

pub type RoundIndex = u64;

pub const LEDGER_MAGIC: &[u8; 8] = b"WLCLEDG1";

/// A transaction as recorded in a block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxnRecord {
    pub client: OrgId,
    /// Organizations whose agreement signatures accompanied the transaction.
    pub signers: Vec<OrgId>,
    /// False when the agreement signatures failed verification; such a
    /// transaction is never executed, on first run or on replay.
    pub admitted: bool,
    pub sql: String,
}

impl TxnRecord {
    pub fn new(client: impl Into<OrgId>, sql: impl Into<String>) -> Self {
        TxnRecord { client: client.into(), signers: Vec::new(), admitted: true, sql: sql.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BitList {
    len: usize,
    bytes: Vec<u8>,
}

impl BitList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index out of range");
        let mask = 0x80 >> (i % 8);
        if bit {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i).unwrap())
    }
}

impl FromIterator<bool> for BitList {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut bits = BitList::new();
        for b in iter {
            bits.push(b);
        }
        bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LedgerBlock {
    pub block_id: RoundIndex,
    pub ta_list: Vec<TxnRecord>,
    pub ta_successful: BitList,
    pub hash_digest: EffectHash,
    pub hash_previous: EffectHash,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("chain gap: expected block {expected}, got {got}")]
    ChainGap { expected: RoundIndex, got: RoundIndex },
    #[error("block {0} does not link to the ledger head")]
    BrokenLink(RoundIndex),
    #[error("success bitlist has {bits} bits for {txns} transactions")]
    BitCount { bits: usize, txns: usize },
    #[error("malformed block encoding: {0}")]
    Decode(String),
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a ledger file")]
    BadMagic,
    #[error("ledger verification failed at block {0}")]
    Corrupt(RoundIndex),
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Decoder<'a> {
    bytes: &'a [u8],
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LedgerError> {
        if self.bytes.len() < n {
            return Err(LedgerError::Decode("truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, LedgerError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LedgerError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<EffectHash, LedgerError> {
        Ok(EffectHash(self.take(32)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, LedgerError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| LedgerError::Decode("invalid UTF-8".into()))
    }
}

impl LedgerBlock {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(96 + self.ta_list.iter().map(|t| t.sql.len() + 16).sum::<usize>());
        out.extend_from_slice(&self.block_id.to_be_bytes());
        out.extend_from_slice(&(self.ta_list.len() as u32).to_be_bytes());
        for t in &self.ta_list {
            put_str(&mut out, &t.client);
            out.extend_from_slice(&(t.signers.len() as u32).to_be_bytes());
            for s in &t.signers {
                put_str(&mut out, s);
            }
            out.push(t.admitted as u8);
            put_str(&mut out, &t.sql);
        }
        out.extend_from_slice(&(self.ta_successful.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ta_successful.bytes);
        out.extend_from_slice(self.hash_digest.as_bytes());
        out.extend_from_slice(self.hash_previous.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut d = Decoder { bytes };
        let block_id = d.u64()?;
        let n = d.u32()? as usize;
        let mut ta_list = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let client = d.string()?;
            let m = d.u32()? as usize;
            let signers = (0..m).map(|_| d.string()).collect::<Result<Vec<_>, _>>()?;
            let admitted = match d.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(LedgerError::Decode(format!("bad admitted flag {b}"))),
            };
            let sql = d.string()?;
            ta_list.push(TxnRecord { client, signers, admitted, sql });
        }
        let bits = d.u32()? as usize;
        let raw = d.take(bits.div_ceil(8))?.to_vec();
        if bits % 8 != 0 && raw.last().is_some_and(|b| b & (0xFF >> (bits % 8)) != 0) {
            return Err(LedgerError::Decode("padding bits set".into()));
        }
        let ta_successful = BitList { len: bits, bytes: raw };
        let hash_digest = d.hash()?;
        let hash_previous = d.hash()?;
        if !d.bytes.is_empty() {
            return Err(LedgerError::Decode("trailing bytes".into()));
        }
        if bits != ta_list.len() {
            return Err(LedgerError::BitCount { bits, txns: ta_list.len() });
        }
        Ok(LedgerBlock { block_id, ta_list, ta_successful, hash_digest, hash_previous })
    }

    /// SHA-256 of the canonical bytes; this is the hash exchanged during consensus.
    pub fn hash(&self) -> EffectHash {
        EffectHash::of(&self.to_bytes())
    }

    pub fn successful_count(&self) -> usize {
        self.ta_successful.count_ones()
    }
}

/// Builds the block for `round` on top of `ledger`.
pub fn build_ledger_block(
    round: RoundIndex,
    ta_list: Vec<TxnRecord>,
    ta_successful: BitList,
    hash_digest: EffectHash,
    ledger: &Ledger,
) -> Result<LedgerBlock, LedgerError> {
    let expected = ledger.next_block_id();
    if round != expected {
        return Err(LedgerError::ChainGap { expected, got: round });
    }
    if ta_successful.len() != ta_list.len() {
        return Err(LedgerError::BitCount { bits: ta_successful.len(), txns: ta_list.len() });
    }
    Ok(LedgerBlock { block_id: round, ta_list, ta_successful, hash_digest, hash_previous: ledger.head_hash() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerVerdict {
    Ok,
    FirstBadBlock(RoundIndex),
}

impl LedgerVerdict {
    pub fn is_ok(self) -> bool {
        self == LedgerVerdict::Ok
    }
}

/// Single pass over the chain: ids must run 1..n and each block must carry
/// the hash of its predecessor. Transactions are not re-executed.
pub fn verify_ledger(blocks: &[LedgerBlock]) -> LedgerVerdict {
    let mut previous = EffectHash::genesis();
    for (i, block) in blocks.iter().enumerate() {
        let position = i as RoundIndex + 1;
        if block.block_id != position || block.hash_previous != previous {
            return LedgerVerdict::FirstBadBlock(position);
        }
        previous = block.hash();
    }
    LedgerVerdict::Ok
}

/// Append-only hash-chained list of committed blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<LedgerBlock>,
    hashes: Vec<EffectHash>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    /// Block by id (1-based).
    pub fn get(&self, block_id: RoundIndex) -> Option<&LedgerBlock> {
        block_id.checked_sub(1).and_then(|i| self.blocks.get(i as usize))
    }

    pub fn block_hash(&self, block_id: RoundIndex) -> Option<EffectHash> {
        block_id.checked_sub(1).and_then(|i| self.hashes.get(i as usize)).copied()
    }

    pub fn head(&self) -> Option<&LedgerBlock> {
        self.blocks.last()
    }

    pub fn head_id(&self) -> RoundIndex {
        self.blocks.len() as RoundIndex
    }

    pub fn next_block_id(&self) -> RoundIndex {
        self.head_id() + 1
    }

    /// Hash of the head block, or the genesis constant for an empty ledger.
    pub fn head_hash(&self) -> EffectHash {
        self.hashes.last().copied().unwrap_or_else(EffectHash::genesis)
    }

    pub fn append(&mut self, block: LedgerBlock) -> Result<EffectHash, LedgerError> {
        let expected = self.next_block_id();
        if block.block_id != expected {
            return Err(LedgerError::ChainGap { expected, got: block.block_id });
        }
        if block.hash_previous != self.head_hash() {
            return Err(LedgerError::BrokenLink(block.block_id));
        }
        let h = block.hash();
        self.blocks.push(block);
        self.hashes.push(h);
        Ok(h)
    }

    pub fn from_blocks(blocks: Vec<LedgerBlock>) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::new();
        for b in blocks {
            ledger.append(b)?;
        }
        Ok(ledger)
    }

    pub fn verify(&self) -> LedgerVerdict {
        verify_ledger(&self.blocks)
    }

    pub fn write_to(&self, out: impl Write) -> io::Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(LEDGER_MAGIC)?;
        for block in &self.blocks {
            write_frame(&mut out, block)?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.write_to(File::create(path)?)
    }

    /// Reads and verifies a ledger file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LedgerFileError> {
        let frames = read_frames(BufReader::new(File::open(path)?))?;
        if let LedgerVerdict::FirstBadBlock(id) = verify_frames(&frames) {
            return Err(LedgerFileError::Corrupt(id));
        }
        let blocks = frames.into_iter().map(|f| LedgerBlock::from_bytes(&f.bytes).unwrap()).collect();
        Ledger::from_blocks(blocks).map_err(|_| LedgerFileError::Corrupt(0))
    }
}

/// Appends one block frame to a ledger file, creating it when absent.
pub fn append_to_file(path: impl AsRef<Path>, block: &LedgerBlock) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if file.metadata()?.len() == 0 {
        file.write_all(LEDGER_MAGIC)?;
    }
    write_frame(&mut file, block)
}

fn write_frame(out: &mut impl Write, block: &LedgerBlock) -> io::Result<()> {
    let bytes = block.to_bytes();
    out.write_all(&(bytes.len() as u32).to_be_bytes())?;
    out.write_all(&bytes)?;
    out.write_all(EffectHash::of(&bytes).as_bytes())
}

/// One stored block: its bytes and the link hash written after them.
#[derive(Debug, Clone)]
pub struct Frame {
    pub bytes: Vec<u8>,
    pub link: EffectHash,
}

pub fn read_frames(mut input: impl Read) -> Result<Vec<Frame>, LedgerFileError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| LedgerFileError::BadMagic)?;
    if &magic != LEDGER_MAGIC {
        return Err(LedgerFileError::BadMagic);
    }
    let mut frames = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut bytes = vec![0u8; u32::from_be_bytes(len) as usize];
        let mut link = [0u8; 32];
        // A truncated trailing frame decodes as an empty, invalid block.
        if input.read_exact(&mut bytes).is_err() || input.read_exact(&mut link).is_err() {
            frames.push(Frame { bytes: Vec::new(), link: EffectHash::default() });
            break;
        }
        frames.push(Frame { bytes, link: EffectHash(link) });
    }
    Ok(frames)
}

/// Linear verification of stored frames. Each frame's link must be the hash
/// of its bytes and each block must carry the hash of its predecessor, so a
/// changed block is reported at itself.
pub fn verify_frames(frames: &[Frame]) -> LedgerVerdict {
    let mut previous = EffectHash::genesis();
    for (i, frame) in frames.iter().enumerate() {
        let position = i as RoundIndex + 1;
        let Ok(block) = LedgerBlock::from_bytes(&frame.bytes) else {
            return LedgerVerdict::FirstBadBlock(position);
        };
        let hash = EffectHash::of(&frame.bytes);
        if block.block_id != position || block.hash_previous != previous || hash != frame.link {
            return LedgerVerdict::FirstBadBlock(position);
        }
        previous = hash;
    }
    LedgerVerdict::Ok
}

pub fn verify_ledger_file(path: impl AsRef<Path>) -> Result<LedgerVerdict, LedgerFileError> {
    let frames = read_frames(BufReader::new(File::open(path)?))?;
    Ok(verify_frames(&frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_block(ledger: &Ledger, n: usize) -> LedgerBlock {
        let id = ledger.next_block_id();
        let ta_list: Vec<TxnRecord> = (0..n)
            .map(|i| TxnRecord {
                client: format!("client{i}"),
                signers: vec!["O1".into(), "O2".into()],
                admitted: i % 5 != 4,
                sql: format!("UPDATE t SET v = v + {i} WHERE id = {id}"),
            })
            .collect();
        let bits = (0..n).map(|i| i % 3 != 0).collect();
        build_ledger_block(id, ta_list, bits, EffectHash::of(&id.to_be_bytes()), ledger).unwrap()
    }

    pub(crate) fn ledger_of(n: usize) -> Ledger {
        let mut ledger = Ledger::new();
        for i in 0..n {
            let b = sample_block(&ledger, i % 4 + 1);
            ledger.append(b).unwrap();
        }
        ledger
    }

    #[test]
    fn first_block_links_to_genesis() {
        let ledger = Ledger::new();
        let b = sample_block(&ledger, 2);
        assert_eq!(b.block_id, 1);
        assert_eq!(b.hash_previous, EffectHash::genesis());
    }

    #[test]
    fn chain_gap_is_rejected() {
        let ledger = ledger_of(2);
        let err = build_ledger_block(5, vec![], BitList::new(), EffectHash::genesis(), &ledger).unwrap_err();
        assert_eq!(err, LedgerError::ChainGap { expected: 3, got: 5 });
        let mut l = ledger.clone();
        let mut b = sample_block(&ledger, 1);
        b.hash_previous = EffectHash::genesis();
        assert_eq!(l.append(b), Err(LedgerError::BrokenLink(3)));
    }

    #[test]
    fn flipping_a_success_bit_changes_block_hash() {
        let ledger = Ledger::new();
        let b = sample_block(&ledger, 5);
        let mut flipped = b.clone();
        let bit = flipped.ta_successful.get(2).unwrap();
        flipped.ta_successful.set(2, !bit);
        assert_ne!(b.hash(), flipped.hash());
    }

    #[test]
    fn bitlist_is_msb_first() {
        let bits: BitList = [true, false, false, false, false, false, false, false, true].into_iter().collect();
        assert_eq!(bits.bytes, vec![0x80, 0x80]);
        assert_eq!(bits.count_ones(), 2);
        assert_eq!(bits.iter().collect::<Vec<_>>().len(), 9);
    }

    #[test]
    fn verification_of_fresh_and_empty_ledgers() {
        assert_eq!(verify_ledger(&[]), LedgerVerdict::Ok);
        assert_eq!(ledger_of(10).verify(), LedgerVerdict::Ok);
    }

    #[test]
    fn in_memory_tamper_is_found_at_successor() {
        let ledger = ledger_of(10);
        let mut blocks = ledger.blocks().to_vec();
        blocks[4].ta_list[0].sql.push(' ');
        assert_eq!(verify_ledger(&blocks), LedgerVerdict::FirstBadBlock(6));
    }

    #[test]
    fn file_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let ledger = ledger_of(10);
        ledger.save(&path).unwrap();
        assert_eq!(Ledger::load(&path).unwrap(), ledger);
        assert_eq!(verify_ledger_file(&path).unwrap(), LedgerVerdict::Ok);

        // Flip one byte inside block 5's SQL text.
        let mut raw = std::fs::read(&path).unwrap();
        let offset = frame_offset(&raw, 5) + 4;
        let sql_at = find(&raw[offset..], b"UPDATE").unwrap() + offset;
        raw[sql_at] ^= 0x20;
        std::fs::write(&path, &raw).unwrap();
        assert_eq!(verify_ledger_file(&path).unwrap(), LedgerVerdict::FirstBadBlock(5));
        assert!(matches!(Ledger::load(&path), Err(LedgerFileError::Corrupt(5))));
    }

    #[test]
    fn head_tamper_is_found_at_head() {
        let mut buf = Vec::new();
        ledger_of(3).write_to(&mut buf).unwrap();
        let offset = frame_offset(&buf, 3) + 4;
        let sql_at = find(&buf[offset..], b"UPDATE").unwrap() + offset;
        buf[sql_at] ^= 0x20;
        let frames = read_frames(buf.as_slice()).unwrap();
        assert_eq!(verify_frames(&frames), LedgerVerdict::FirstBadBlock(3));
    }

    #[test]
    fn truncated_file_is_bad_at_last_frame() {
        let mut buf = Vec::new();
        ledger_of(3).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 10);
        let frames = read_frames(buf.as_slice()).unwrap();
        assert_eq!(verify_frames(&frames), LedgerVerdict::FirstBadBlock(3));
        assert!(matches!(read_frames(&b"nope"[..]), Err(LedgerFileError::BadMagic)));
    }

    #[test]
    fn append_to_file_matches_save() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let ledger = ledger_of(4);
        ledger.save(&a).unwrap();
        for block in ledger.blocks() {
            append_to_file(&b, block).unwrap();
        }
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    fn frame_offset(raw: &[u8], block: usize) -> usize {
        let mut pos = LEDGER_MAGIC.len();
        for _ in 1..block {
            let len = u32::from_be_bytes(raw[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4 + len + 32;
        }
        pos
    }

    fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
        hay.windows(needle.len()).position(|w| w == needle)
    }

    proptest! {
        #[test]
        fn block_encoding_round_trips(
            id in 1u64..1000,
            txns in prop::collection::vec(("[a-z]{0,6}", prop::collection::vec("[A-Z0-9]{1,3}", 0..3), any::<bool>(), ".{0,40}", any::<bool>()), 0..12),
            digest in any::<[u8; 32]>(),
            prev in any::<[u8; 32]>(),
        ) {
            let block = LedgerBlock {
                block_id: id,
                ta_list: txns.iter().map(|(c, s, a, q, _)| TxnRecord { client: c.clone(), signers: s.clone(), admitted: *a, sql: q.clone() }).collect(),
                ta_successful: txns.iter().map(|t| t.4).collect(),
                hash_digest: EffectHash(digest),
                hash_previous: EffectHash(prev),
            };
            prop_assert_eq!(LedgerBlock::from_bytes(&block.to_bytes()).unwrap(), block);
        }

        // Any single-bit change of any stored block is detected.
        #[test]
        fn single_bit_tamper_is_detected(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
            let mut buf = Vec::new();
            ledger_of(6).write_to(&mut buf).unwrap();
            let i = LEDGER_MAGIC.len() + pos.index(buf.len() - LEDGER_MAGIC.len());
            buf[i] ^= 1 << bit;
            let frames = read_frames(buf.as_slice()).unwrap();
            prop_assert!(!verify_frames(&frames).is_ok());
        }
    }
}
