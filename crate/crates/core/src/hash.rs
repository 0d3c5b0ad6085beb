use std::fmt;

use sha2::{Digest, Sha256};

/// A 32-byte SHA-256 output. Used for row hashes, digest hashes, block hashes
/// and the effect hash exchanged during consensus.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct EffectHash(pub [u8; 32]);

impl EffectHash {
    pub fn of(bytes: &[u8]) -> Self {
        EffectHash(Sha256::digest(bytes).into())
    }

    /// Anchor used as `hash_previous` of the first block: SHA-256 of the empty string.
    pub fn genesis() -> Self {
        Self::of(&[])
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(EffectHash(bytes.try_into().ok()?))
    }

    /// Short prefix for logs and reports.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for EffectHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EffectHash({})", self.short())
    }
}

impl fmt::Display for EffectHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
