//! MAC-then-encrypt AES-256-CBC record protection, TLS 1.2 style.
//!
//! Record fragment = `explicit_iv(16) || CBC(plaintext || mac || padding)` with
//! `mac = HMAC(mac_key, seq(8) || header || len(2) || plaintext)`. Padding is the TLS
//! scheme: `p + 1` bytes all equal to `p`.

use aes::cipher::{BlockCipherDecrypt, BlockCipherEncrypt, KeyInit};
use aes::Aes256;
use zeroize::Zeroize;

use super::{hmac_parts, verify_parts, CryptoError, HashId};
use crate::codec::{put_u32, Reader};

pub const AES_BLOCK_LEN: usize = 16;
pub const ENC_KEY_LEN: usize = 32;
pub const IV_SEED_LEN: usize = 16;
/// Largest plaintext a single record may carry (2^14).
pub const MAX_FRAGMENT_LEN: usize = 1 << 14;

/// Key material for one direction of record protection. Wiped on drop.
#[derive(Clone)]
pub struct SymmetricKeys {
    pub mac_hash: HashId,
    pub enc_key: [u8; ENC_KEY_LEN],
    pub mac_key: Vec<u8>,
    pub iv_seed: [u8; IV_SEED_LEN],
}

impl SymmetricKeys {
    /// Bytes consumed by [`SymmetricKeys::from_key_block`] for the given MAC hash.
    pub const fn key_block_len(mac_hash: HashId) -> usize {
        ENC_KEY_LEN + mac_hash.output_len() + IV_SEED_LEN
    }

    /// Splits `enc_key || mac_key || iv_seed`.
    pub fn from_key_block(mac_hash: HashId, block: &[u8]) -> Result<Self, CryptoError> {
        if block.len() != Self::key_block_len(mac_hash) {
            return Err(CryptoError::Parameter(format!(
                "key block must be {} bytes, got {}",
                Self::key_block_len(mac_hash),
                block.len()
            )));
        }
        let mac_len = mac_hash.output_len();
        let mut enc_key = [0u8; ENC_KEY_LEN];
        enc_key.copy_from_slice(&block[..ENC_KEY_LEN]);
        let mac_key = block[ENC_KEY_LEN..ENC_KEY_LEN + mac_len].to_vec();
        let mut iv_seed = [0u8; IV_SEED_LEN];
        iv_seed.copy_from_slice(&block[ENC_KEY_LEN + mac_len..]);
        Ok(Self {
            mac_hash,
            enc_key,
            mac_key,
            iv_seed,
        })
    }

    fn cipher(&self) -> Aes256 {
        Aes256::new(&self.enc_key.into())
    }

    fn explicit_iv(&self, cipher: &Aes256, seq: u64) -> [u8; AES_BLOCK_LEN] {
        let mut block = self.iv_seed;
        for (b, s) in block[8..].iter_mut().zip(seq.to_be_bytes()) {
            *b ^= s;
        }
        let mut b = block.into();
        cipher.encrypt_block(&mut b);
        b.into()
    }
}

impl std::fmt::Debug for SymmetricKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricKeys")
            .field("mac_hash", &self.mac_hash)
            .finish_non_exhaustive()
    }
}

impl Drop for SymmetricKeys {
    fn drop(&mut self) {
        self.enc_key.zeroize();
        self.mac_key.zeroize();
        self.iv_seed.zeroize();
    }
}

fn record_mac(keys: &SymmetricKeys, seq: u64, header: &[u8], plaintext: &[u8]) -> Vec<u8> {
    hmac_parts(
        keys.mac_hash,
        &keys.mac_key,
        &[
            &seq.to_be_bytes(),
            header,
            &(plaintext.len() as u16).to_be_bytes(),
            plaintext,
        ],
    )
}

pub fn seal_record(
    keys: &SymmetricKeys,
    seq: u64,
    header: &[u8],
    plaintext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if plaintext.len() > MAX_FRAGMENT_LEN {
        return Err(CryptoError::RecordOverflow(plaintext.len()));
    }
    let mac = record_mac(keys, seq, header, plaintext);
    let body_len = plaintext.len() + mac.len();
    let pad = AES_BLOCK_LEN - 1 - body_len % AES_BLOCK_LEN;

    let mut out = Vec::with_capacity(AES_BLOCK_LEN + body_len + pad + 1);
    let cipher = keys.cipher();
    let iv = keys.explicit_iv(&cipher, seq);
    out.extend_from_slice(&iv);
    out.extend_from_slice(plaintext);
    out.extend_from_slice(&mac);
    out.resize(out.len() + pad + 1, pad as u8);

    let mut prev = iv;
    for chunk in out[AES_BLOCK_LEN..].chunks_exact_mut(AES_BLOCK_LEN) {
        for (c, p) in chunk.iter_mut().zip(prev) {
            *c ^= p;
        }
        let mut b: [u8; AES_BLOCK_LEN] = (&*chunk).try_into().expect("block sized");
        let mut block = b.into();
        cipher.encrypt_block(&mut block);
        b = block.into();
        chunk.copy_from_slice(&b);
        prev = b;
    }
    Ok(out)
}

/// Inverse of [`seal_record`]. Never returns plaintext unless padding and MAC both check.
pub fn open_record(
    keys: &SymmetricKeys,
    seq: u64,
    header: &[u8],
    record: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let mac_len = keys.mac_hash.output_len();
    let max_len = AES_BLOCK_LEN + MAX_FRAGMENT_LEN + mac_len + 256;
    if record.len() > max_len {
        return Err(CryptoError::RecordOverflow(record.len()));
    }
    let body_len = record.len().saturating_sub(AES_BLOCK_LEN);
    if record.len() < AES_BLOCK_LEN || body_len < mac_len + 1 || !body_len.is_multiple_of(AES_BLOCK_LEN) {
        return Err(CryptoError::BadPadding);
    }

    let cipher = keys.cipher();
    let mut prev: [u8; AES_BLOCK_LEN] = record[..AES_BLOCK_LEN].try_into().expect("iv");
    let mut body = record[AES_BLOCK_LEN..].to_vec();
    for chunk in body.chunks_exact_mut(AES_BLOCK_LEN) {
        let ct: [u8; AES_BLOCK_LEN] = (&*chunk).try_into().expect("block sized");
        let mut block = ct.into();
        cipher.decrypt_block(&mut block);
        let pt: [u8; AES_BLOCK_LEN] = block.into();
        for ((c, p), v) in chunk.iter_mut().zip(prev).zip(pt) {
            *c = v ^ p;
        }
        prev = ct;
    }

    let pad = *body.last().expect("non-empty") as usize;
    if pad + 1 + mac_len > body.len() || body[body.len() - 1 - pad..].iter().any(|&b| b as usize != pad) {
        body.zeroize();
        return Err(CryptoError::BadPadding);
    }
    let pt_len = body.len() - 1 - pad - mac_len;
    let (plaintext, mac) = body[..body.len() - 1 - pad].split_at(pt_len);
    let checked = verify_parts(
        keys.mac_hash,
        &keys.mac_key,
        &[
            &seq.to_be_bytes(),
            header,
            &(plaintext.len() as u16).to_be_bytes(),
            plaintext,
        ],
        mac,
    );
    if checked.is_err() {
        body.zeroize();
        return Err(CryptoError::BadMac);
    }
    body.truncate(pt_len);
    Ok(body)
}

/// Seals an arbitrarily long payload as `count(4) || (len(4) || record)*`.
///
/// Chunk `i` is sealed with sequence number `i` under `header || count`, which binds
/// both order and total length. An empty payload still yields one (empty) record.
pub fn seal_stream(keys: &SymmetricKeys, header: &[u8], plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let chunks: Vec<&[u8]> = if plaintext.is_empty() {
        vec![&[][..]]
    } else {
        plaintext.chunks(MAX_FRAGMENT_LEN).collect()
    };
    let count = u32::try_from(chunks.len())
        .map_err(|_| CryptoError::Parameter("payload too long".into()))?;
    let mut bound_header = header.to_vec();
    put_u32(&mut bound_header, count);

    let overhead = AES_BLOCK_LEN + keys.mac_hash.output_len() + AES_BLOCK_LEN + 4;
    let mut out = Vec::with_capacity(4 + plaintext.len() + chunks.len() * overhead);
    put_u32(&mut out, count);
    for (seq, chunk) in chunks.iter().enumerate() {
        let rec = seal_record(keys, seq as u64, &bound_header, chunk)?;
        put_u32(&mut out, rec.len() as u32);
        out.extend_from_slice(&rec);
    }
    Ok(out)
}

/// Opens a [`seal_stream`] payload. The framing is covered by the record MACs, so any
/// framing damage reports [`CryptoError::BadMac`] like a failed MAC would.
pub fn open_stream(keys: &SymmetricKeys, header: &[u8], sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut r = Reader::new(sealed);
    let count = r.u32("record count").map_err(|_| CryptoError::BadMac)?;
    let min_record = 4 + 2 * AES_BLOCK_LEN;
    if count == 0 || (count as usize).saturating_mul(min_record) > r.remaining() {
        return Err(CryptoError::BadMac);
    }
    let mut bound_header = header.to_vec();
    put_u32(&mut bound_header, count);

    let mut out = Vec::with_capacity(r.remaining());
    for seq in 0..count {
        let rec = r.vec_u32("sealed record").map_err(|_| {
            out.zeroize();
            CryptoError::BadMac
        })?;
        let mut pt = open_record(keys, seq as u64, &bound_header, rec).inspect_err(|_| out.zeroize())?;
        out.append(&mut pt);
    }
    if r.finish().is_err() {
        out.zeroize();
        return Err(CryptoError::BadMac);
    }
    Ok(out)
}
