//! ECDSA P-256 signing with deterministic nonces.

use std::collections::BTreeMap;
use std::fmt;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};

/// Identity of a participant (organization or client).
pub type OrgId = String;

/// Raw `r || s` signature encoding.
pub type SignatureBytes = [u8; 64];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("invalid key material")]
    InvalidKey,
    #[error("no key registered for `{0}`")]
    UnknownSigner(String),
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", hex::encode(&self.public_bytes()[..6]))
    }
}

impl KeyPair {
    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        SigningKey::from_bytes(bytes.into()).map(|signing| KeyPair { signing }).map_err(|_| CryptoError::InvalidKey)
    }

    /// Derives a key from a seed and a label, so a run's keys depend only on its seed.
    pub fn derive(seed: u64, label: &str) -> Self {
        for counter in 0u32.. {
            let mut h = Sha256::new();
            h.update(b"wlc-key");
            h.update(seed.to_be_bytes());
            h.update(counter.to_be_bytes());
            h.update(label.as_bytes());
            let bytes: [u8; 32] = h.finalize().into();
            if let Ok(kp) = Self::from_secret_bytes(&bytes) {
                return kp;
            }
        }
        unreachable!("a valid scalar is found with overwhelming probability")
    }

    pub fn public(&self) -> VerifyingKey {
        *self.signing.verifying_key()
    }

    /// SEC1 compressed public key.
    pub fn public_bytes(&self) -> Vec<u8> {
        self.public().to_encoded_point(true).as_bytes().to_vec()
    }

    /// RFC 6979 deterministic signature over `msg`.
    pub fn sign(&self, msg: &[u8]) -> SignatureBytes {
        let sig: Signature = self.signing.sign(msg);
        sig.to_bytes().into()
    }
}

pub fn verify(key: &VerifyingKey, msg: &[u8], sig: &SignatureBytes) -> bool {
    match Signature::from_slice(sig) {
        Ok(sig) => key.verify(msg, &sig).is_ok(),
        Err(_) => false,
    }
}

/// Public keys of every known participant.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<OrgId, VerifyingKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<OrgId>, key: VerifyingKey) {
        self.keys.insert(id.into(), key);
    }

    pub fn register_sec1(&mut self, id: impl Into<OrgId>, bytes: &[u8]) -> Result<(), CryptoError> {
        let key = VerifyingKey::from_sec1_bytes(bytes).map_err(|_| CryptoError::InvalidKey)?;
        self.register(id, key);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&VerifyingKey> {
        self.keys.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.keys.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &OrgId> {
        self.keys.keys()
    }

    /// True iff `signer` is registered and `sig` is its valid signature over `msg`.
    pub fn verify(&self, signer: &str, msg: &[u8], sig: &SignatureBytes) -> bool {
        self.keys.get(signer).is_some_and(|k| verify(k, msg, sig))
    }

    pub fn check(&self, signer: &str, msg: &[u8], sig: &SignatureBytes) -> Result<bool, CryptoError> {
        let key = self.keys.get(signer).ok_or_else(|| CryptoError::UnknownSigner(signer.into()))?;
        Ok(verify(key, msg, sig))
    }
}
