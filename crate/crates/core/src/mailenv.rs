//! Sign-then-encrypt message envelopes.
//!
//! The sender signs header and message with a hash-based key, then encrypts message and
//! signature to the recipient's KEM key. The header travels in clear and is bound to the
//! ciphertext as MAC header bytes.
//!
//! ```text
//! envelope     : "AGEV" | format u8 = 1 | header | kem_ciphertext u32-bytes | sealed_body u32-bytes
//! header       : sender_id u16-str | recipient_id u16-str | sig_algorithm_id u8-str |
//!                enc_algorithm_id u8-str | registry_version u32
//! header_bytes : "AGEV" | format | header
//! keys         : prf(H512, shared_secret, "mailenv seal", header_bytes | kem_ciphertext, 112)
//!                split as enc_key[32] | mac_key[64] | iv_seed[16]
//! sealed_body  : seal_stream(keys, header_bytes, message u32-bytes | signature u32-bytes)
//! signed data  : "AGEV-SIG" | header_bytes u16-bytes | message
//! ```
//!
//! Key identifiers have the form `<algorithm id>:<first 8 bytes of SHA-256(key), hex>`.

use thiserror::Error;
use zeroize::Zeroizing;

use crate::cbkem::{self, KemCiphertext, KemError};
use crate::codec::{put_u32, put_vec_u16, put_vec_u32, put_vec_u8, MalformedEncoding, Reader};
use crate::easyapi::{EasyEncrypter, EasyError, EasySigner, PublicKeyInfo};
use crate::hbs::{self, HbsSignature};
use crate::primitives::{hash, open_stream, prf, seal_stream, CryptoError, HashId, RandomSource, SymmetricKeys};

pub const ENVELOPE_MAGIC: &[u8; 4] = b"AGEV";
pub const ENVELOPE_FORMAT: u8 = 1;
pub const FILE_EXTENSION: &str = "agenv";
const KEY_LABEL: &str = "mailenv seal";
const SIGNATURE_CONTEXT: &[u8] = b"AGEV-SIG";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MailError {
    #[error("bad_mac: envelope body failed authentication")]
    BadMac,
    #[error("bad_signature: sender signature rejected")]
    BadSignature,
    #[error("algorithm_mismatch: expected {expected}, found {found}")]
    AlgorithmMismatch { expected: String, found: String },
    #[error("envelope is addressed to {found}, not {expected}")]
    RecipientMismatch { expected: String, found: String },
    #[error("envelope claims sender {found}, expected {expected}")]
    SenderMismatch { expected: String, found: String },
    #[error(transparent)]
    Malformed(#[from] MalformedEncoding),
    #[error(transparent)]
    Easy(EasyError),
}

impl MailError {
    /// Stable short name for diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            MailError::BadMac => "bad_mac",
            MailError::BadSignature => "bad_signature",
            MailError::AlgorithmMismatch { .. } => "algorithm_mismatch",
            MailError::RecipientMismatch { .. } => "recipient_mismatch",
            MailError::SenderMismatch { .. } => "sender_mismatch",
            MailError::Malformed(_) => "malformed_encoding",
            MailError::Easy(_) => "error",
        }
    }
}

impl From<EasyError> for MailError {
    fn from(e: EasyError) -> Self {
        match e {
            EasyError::BadMac => MailError::BadMac,
            EasyError::BadSignature => MailError::BadSignature,
            EasyError::AlgorithmMismatch { expected, found } => MailError::AlgorithmMismatch { expected, found },
            EasyError::Malformed(m) => MailError::Malformed(m),
            other => MailError::Easy(other),
        }
    }
}

impl From<KemError> for MailError {
    fn from(e: KemError) -> Self {
        EasyError::from(e).into()
    }
}

impl From<CryptoError> for MailError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::BadMac | CryptoError::BadPadding => MailError::BadMac,
            other => MailError::Easy(other.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvelopeHeader {
    pub sender_id: String,
    pub recipient_id: String,
    pub sig_algorithm_id: String,
    pub enc_algorithm_id: String,
    pub registry_version: u32,
}

impl EnvelopeHeader {
    /// Magic, format byte and header fields: the bytes authenticated by the body MAC.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.push(ENVELOPE_FORMAT);
        put_vec_u16(&mut out, self.sender_id.as_bytes());
        put_vec_u16(&mut out, self.recipient_id.as_bytes());
        put_vec_u8(&mut out, self.sig_algorithm_id.as_bytes());
        put_vec_u8(&mut out, self.enc_algorithm_id.as_bytes());
        put_u32(&mut out, self.registry_version);
        out
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MalformedEncoding> {
        if r.take(4, "envelope magic")? != ENVELOPE_MAGIC {
            return Err(MalformedEncoding::new(0, "bad envelope magic"));
        }
        let format = r.u8("envelope format")?;
        if format != ENVELOPE_FORMAT {
            return Err(MalformedEncoding::new(4, format!("unsupported envelope format {format}")));
        }
        Ok(Self {
            sender_id: r.string_u16("sender id")?,
            recipient_id: r.string_u16("recipient id")?,
            sig_algorithm_id: r.string_u8("signature algorithm id")?,
            enc_algorithm_id: r.string_u8("encryption algorithm id")?,
            registry_version: r.u32("registry version")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub header: EnvelopeHeader,
    pub kem_ciphertext: Vec<u8>,
    pub sealed_body: Vec<u8>,
}

impl Envelope {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes();
        put_vec_u32(&mut out, &self.kem_ciphertext);
        put_vec_u32(&mut out, &self.sealed_body);
        out
    }

    /// Parses an encoded envelope; trailing bytes are rejected.
    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedEncoding> {
        let mut r = Reader::new(bytes);
        let header = EnvelopeHeader::read(&mut r)?;
        let kem_ciphertext = r.vec_u32("kem ciphertext")?.to_vec();
        let sealed_body = r.vec_u32("sealed body")?.to_vec();
        r.finish()?;
        Ok(Self {
            header,
            kem_ciphertext,
            sealed_body,
        })
    }
}

/// `<algorithm id>:<hex of the first 8 bytes of SHA-256(key)>`.
pub fn key_id(key: &PublicKeyInfo) -> String {
    let digest = hash(HashId::H256, &key.key);
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}:{hex}", key.algorithm_id)
}

/// Body keys bound to the header and the KEM ciphertext.
pub fn envelope_keys(shared_secret: &[u8], header_bytes: &[u8], kem_ciphertext: &[u8]) -> SymmetricKeys {
    let seed = [header_bytes, kem_ciphertext].concat();
    let block = Zeroizing::new(prf(
        HashId::H512,
        shared_secret,
        KEY_LABEL,
        &seed,
        SymmetricKeys::key_block_len(HashId::H512),
    ));
    SymmetricKeys::from_key_block(HashId::H512, &block).expect("sized key block")
}

/// The bytes the sender signs.
pub fn signed_data(header_bytes: &[u8], message: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SIGNATURE_CONTEXT.len() + 2 + header_bytes.len() + message.len());
    out.extend_from_slice(SIGNATURE_CONTEXT);
    put_vec_u16(&mut out, header_bytes);
    out.extend_from_slice(message);
    out
}

/// Plaintext carried inside the sealed body.
pub fn encode_inner(message: &[u8], signature: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + message.len() + signature.len());
    put_vec_u32(&mut out, message);
    put_vec_u32(&mut out, signature);
    out
}

fn decode_inner(inner: &[u8]) -> Result<(&[u8], &[u8]), MalformedEncoding> {
    let mut r = Reader::new(inner);
    let message = r.vec_u32("message")?;
    let signature = r.vec_u32("signature")?;
    r.finish()?;
    Ok((message, signature))
}

/// Signs `message` with the sender key, then encrypts message and signature to `recipient`.
pub fn envelope_seal<R: RandomSource + ?Sized>(
    sender: &mut EasySigner,
    recipient: &PublicKeyInfo,
    message: &[u8],
    rng: &mut R,
) -> Result<Envelope, MailError> {
    let pk = recipient.kem()?;
    let header = EnvelopeHeader {
        sender_id: key_id(&sender.public_key()),
        recipient_id: key_id(recipient),
        sig_algorithm_id: sender.parameters().algorithm_id.clone(),
        enc_algorithm_id: recipient.algorithm_id.clone(),
        registry_version: sender.parameters().registry_version,
    };
    let header_bytes = header.to_bytes();
    let signature = sender.sign_raw(&signed_data(&header_bytes, message))?;
    let (ct, ss) = cbkem::encapsulate(&pk, rng)?;
    let ss = Zeroizing::new(ss);
    let kem_ciphertext = ct.to_bytes(pk.params());
    let keys = envelope_keys(ss.as_slice(), &header_bytes, &kem_ciphertext);
    let inner = Zeroizing::new(encode_inner(message, &signature.to_bytes()));
    let sealed_body = seal_stream(&keys, &header_bytes, &inner)?;
    Ok(Envelope {
        header,
        kem_ciphertext,
        sealed_body,
    })
}

/// Authenticates and decrypts the body, then verifies the sender signature. The message is
/// returned only when every check passes.
pub fn envelope_open(
    recipient: &EasyEncrypter,
    sender: &PublicKeyInfo,
    envelope: &Envelope,
) -> Result<Vec<u8>, MailError> {
    let h = &envelope.header;
    let own = recipient.public_key();
    if h.enc_algorithm_id != own.algorithm_id {
        return Err(MailError::AlgorithmMismatch {
            expected: own.algorithm_id,
            found: h.enc_algorithm_id.clone(),
        });
    }
    if h.sig_algorithm_id != sender.algorithm_id {
        return Err(MailError::AlgorithmMismatch {
            expected: sender.algorithm_id.clone(),
            found: h.sig_algorithm_id.clone(),
        });
    }
    let own_id = key_id(&own);
    if h.recipient_id != own_id {
        return Err(MailError::RecipientMismatch {
            expected: own_id,
            found: h.recipient_id.clone(),
        });
    }
    let sender_id = key_id(sender);
    if h.sender_id != sender_id {
        return Err(MailError::SenderMismatch {
            expected: sender_id,
            found: h.sender_id.clone(),
        });
    }
    let sender_key = sender.hbs()?;

    let kem = recipient.key_pair();
    let ct = KemCiphertext::from_bytes(kem.public.params(), &envelope.kem_ciphertext)?;
    let ss = Zeroizing::new(cbkem::decapsulate(&kem.secret, &ct)?);
    let header_bytes = h.to_bytes();
    let keys = envelope_keys(ss.as_slice(), &header_bytes, &envelope.kem_ciphertext);
    let inner = Zeroizing::new(open_stream(&keys, &header_bytes, &envelope.sealed_body)?);

    let (message, signature) = decode_inner(&inner).map_err(|_| MailError::BadSignature)?;
    let signature = HbsSignature::from_bytes(&sender_key.params, signature).map_err(|_| MailError::BadSignature)?;
    if !hbs::verify(&sender_key.root, &sender_key.params, &signed_data(&header_bytes, message), &signature) {
        return Err(MailError::BadSignature);
    }
    Ok(message.to_vec())
}
