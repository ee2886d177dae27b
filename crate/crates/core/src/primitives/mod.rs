//! Hashing, HMAC, the TLS 1.2 PRF, CBC record protection and the randomness contract.
//!
//! Everything above this module is built from these pieces, so the hash choice is fixed
//! here once: [`HashId::H256`] is SHA-256 and [`HashId::H512`] is SHA-512.

mod record;
mod rng;

pub use record::{open_record, open_stream, seal_record, seal_stream, SymmetricKeys};
pub use record::{AES_BLOCK_LEN, ENC_KEY_LEN, IV_SEED_LEN, MAX_FRAGMENT_LEN};
pub use rng::{random_bytes, uniform_below, DeterministicRandom, RandomSource, SystemRandom};

use hmac::{Hmac, KeyInit, Mac};
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

use crate::codec::MalformedEncoding;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("bad record MAC")]
    BadMac,
    #[error("bad record padding")]
    BadPadding,
    #[error("record overflow: {0} bytes")]
    RecordOverflow(usize),
    #[error("entropy source failure: {0}")]
    Entropy(String),
    #[error(transparent)]
    Malformed(#[from] MalformedEncoding),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HashId {
    H256,
    H512,
}

impl HashId {
    pub const fn output_len(self) -> usize {
        match self {
            HashId::H256 => 32,
            HashId::H512 => 64,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            HashId::H256 => "H256",
            HashId::H512 => "H512",
        }
    }
}

pub fn hash(id: HashId, data: &[u8]) -> Vec<u8> {
    hash_parts(id, &[data])
}

/// Digest of the concatenation of `parts`, without materializing it.
pub fn hash_parts(id: HashId, parts: &[&[u8]]) -> Vec<u8> {
    match id {
        HashId::H256 => {
            let mut h = Sha256::new();
            for p in parts {
                h.update(p);
            }
            h.finalize().to_vec()
        }
        HashId::H512 => {
            let mut h = Sha512::new();
            for p in parts {
                h.update(p);
            }
            h.finalize().to_vec()
        }
    }
}

/// HMAC over the selected hash. An empty key is rejected.
pub fn hmac(id: HashId, key: &[u8], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::Parameter("HMAC key must not be empty".into()));
    }
    Ok(hmac_parts(id, key, &[data]))
}

/// Constant-time tag comparison.
pub fn hmac_verify(id: HashId, key: &[u8], data: &[u8], tag: &[u8]) -> Result<(), CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::Parameter("HMAC key must not be empty".into()));
    }
    verify_parts(id, key, &[data], tag)
}

pub(crate) fn hmac_parts(id: HashId, key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
    match id {
        HashId::H256 => {
            let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("any key length");
            for p in parts {
                m.update(p);
            }
            m.finalize().into_bytes().to_vec()
        }
        HashId::H512 => {
            let mut m = <Hmac<Sha512> as KeyInit>::new_from_slice(key).expect("any key length");
            for p in parts {
                m.update(p);
            }
            m.finalize().into_bytes().to_vec()
        }
    }
}

pub(crate) fn verify_parts(
    id: HashId,
    key: &[u8],
    parts: &[&[u8]],
    tag: &[u8],
) -> Result<(), CryptoError> {
    let ok = match id {
        HashId::H256 => {
            let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("any key length");
            for p in parts {
                m.update(p);
            }
            m.verify_slice(tag).is_ok()
        }
        HashId::H512 => {
            let mut m = <Hmac<Sha512> as KeyInit>::new_from_slice(key).expect("any key length");
            for p in parts {
                m.update(p);
            }
            m.verify_slice(tag).is_ok()
        }
    };
    if ok {
        Ok(())
    } else {
        Err(CryptoError::BadMac)
    }
}

/// TLS 1.2 `PRF(secret, label, seed)` = `P_hash(secret, label || seed)` truncated to `out_len`.
///
/// The secret may be empty here (P_hash permits it); only [`hmac`] enforces a non-empty key.
pub fn prf(id: HashId, secret: &[u8], label: &str, seed: &[u8], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len + id.output_len());
    // A(1) = HMAC(secret, label || seed)
    let mut a = hmac_parts(id, secret, &[label.as_bytes(), seed]);
    while out.len() < out_len {
        out.extend_from_slice(&hmac_parts(id, secret, &[&a, label.as_bytes(), seed]));
        a = hmac_parts(id, secret, &[&a]);
    }
    out.truncate(out_len);
    out
}
