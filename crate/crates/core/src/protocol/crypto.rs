//! Digest, keys, addresses and signatures.
//!
//! The digest is SHA-256 throughout. Signatures are Ed25519. Addresses are
//! the last 20 bytes of `SHA-256(tag || public_key)` with tag `0x01` for ETH
//! and `0x02` for BTC; they are not compatible with mainnet addresses.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::types::{Address, Currency, Hash256};

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SECRET_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key: expected {expected} bytes, got {found}")]
    MalformedKey { expected: usize, found: usize },
    #[error("public key is not a valid curve point")]
    InvalidPoint,
    #[error("malformed signature: expected {SIGNATURE_LEN} bytes, got {0}")]
    MalformedSignature(usize),
}

pub fn digest(data: &[u8]) -> Hash256 {
    Hash256(Sha256::digest(data).into())
}

/// Ed25519 public key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] =
            bytes.try_into().map_err(|_| CryptoError::MalformedKey {
                expected: PUBLIC_KEY_LEN,
                found: bytes.len(),
            })?;
        Ok(PublicKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    /// Point decompression costs about a third of a verification and
    /// channels reuse two keys, so decoded keys are memoized per thread.
    pub(crate) fn verifying_key(&self) -> Result<VerifyingKey, CryptoError> {
        thread_local! {
            static DECODED: RefCell<HashMap<[u8; PUBLIC_KEY_LEN], VerifyingKey>> = RefCell::new(HashMap::new());
        }
        DECODED.with(|cell| {
            let mut map = cell.borrow_mut();
            if let Some(vk) = map.get(&self.0) {
                return Ok(*vk);
            }
            let vk = VerifyingKey::from_bytes(&self.0).map_err(|_| CryptoError::InvalidPoint)?;
            if map.len() >= 1024 {
                map.clear();
            }
            map.insert(self.0, vk);
            Ok(vk)
        })
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNATURE_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::MalformedSignature(bytes.len()))?;
        Ok(Signature(arr))
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

/// A signing key together with its public half.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_secret(secret: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SECRET_KEY_LEN] =
            secret.try_into().map_err(|_| CryptoError::MalformedKey {
                expected: SECRET_KEY_LEN,
                found: secret.len(),
            })?;
        Ok(KeyPair {
            signing: SigningKey::from_bytes(&arr),
        })
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut secret = [0u8; SECRET_KEY_LEN];
        rng.fill_bytes(&mut secret);
        KeyPair {
            signing: SigningKey::from_bytes(&secret),
        }
    }

    /// Deterministic key for a named party, used by the simulator and tests.
    pub fn from_label(seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"parsec-party-key");
        h.update(seed.to_be_bytes());
        h.update(label.as_bytes());
        KeyPair {
            signing: SigningKey::from_bytes(&h.finalize().into()),
        }
    }

    pub fn secret_bytes(&self) -> [u8; SECRET_KEY_LEN] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn address(&self, currency: Currency) -> Address {
        derive_address(&self.public_key(), currency)
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public_key())
            .finish_non_exhaustive()
    }
}

pub fn sign(keys: &KeyPair, message: &[u8]) -> Signature {
    keys.sign(message)
}

/// True iff `signature` was produced over exactly `message` by the private
/// key matching `public_key`. Keys that are not valid curve points never
/// verify.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = public_key.verifying_key() else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify(message, &sig).is_ok()
}

/// Verify many signatures at once. Returns `false` if any one is invalid;
/// callers fall back to [`verify`] to locate the offender.
pub fn verify_batch(items: &[(&PublicKey, &[u8], &Signature)]) -> bool {
    if items.is_empty() {
        return true;
    }
    let mut keys = Vec::with_capacity(items.len());
    for (pk, _, _) in items {
        match pk.verifying_key() {
            Ok(vk) => keys.push(vk),
            Err(_) => return false,
        }
    }
    let messages: Vec<&[u8]> = items.iter().map(|(_, m, _)| *m).collect();
    let sigs: Vec<ed25519_dalek::Signature> = items
        .iter()
        .map(|(_, _, s)| ed25519_dalek::Signature::from_bytes(&s.0))
        .collect();
    ed25519_dalek::verify_batch(&messages, &sigs, &keys).is_ok()
}

pub fn derive_address(public_key: &PublicKey, currency: Currency) -> Address {
    let mut h = Sha256::new();
    h.update([currency.address_tag()]);
    h.update(public_key.0);
    let full: [u8; 32] = h.finalize().into();
    let mut bytes = [0u8; 20];
    bytes.copy_from_slice(&full[12..]);
    Address { bytes, currency }
}

/// [`derive_address`] over raw bytes, rejecting keys of the wrong length.
pub fn derive_address_from_slice(public_key: &[u8], currency: Currency) -> Result<Address, CryptoError> {
    Ok(derive_address(&PublicKey::from_slice(public_key)?, currency))
}
