//! Server certificate: a KEM public key bound to a subject by a hash-based signature.
//!
//! ```text
//! to_be_signed : "AGC1" | subject u16-str | kem_algorithm_id u8-str | kem_public_key u32-bytes |
//!                hbs_algorithm_id u8-str | issuer_root u8-bytes
//! certificate  : to_be_signed | issuer_signature u32-bytes
//! ```

use crate::codec::{put_vec_u16, put_vec_u32, put_vec_u8, MalformedEncoding, Reader};
use crate::easyapi::{EasyError, EasySigner, PublicKeyInfo};
use crate::hbs::{self, HbsKeyPair, HbsParams, HbsSignature};
use crate::primitives::RandomSource;
use crate::cbkem::{KemParams, KemPublicKey};

pub const CERTIFICATE_MAGIC: &[u8; 4] = b"AGC1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub kem_algorithm_id: String,
    pub kem_public_key: Vec<u8>,
    pub hbs_algorithm_id: String,
    pub issuer_root: Vec<u8>,
    pub issuer_signature: Vec<u8>,
}

impl Certificate {
    /// Canonical encoding of every field except the signature.
    pub fn to_be_signed(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.kem_public_key.len());
        out.extend_from_slice(CERTIFICATE_MAGIC);
        put_vec_u16(&mut out, self.subject.as_bytes());
        put_vec_u8(&mut out, self.kem_algorithm_id.as_bytes());
        put_vec_u32(&mut out, &self.kem_public_key);
        put_vec_u8(&mut out, self.hbs_algorithm_id.as_bytes());
        put_vec_u8(&mut out, &self.issuer_root);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.to_be_signed();
        put_vec_u32(&mut out, &self.issuer_signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MalformedEncoding> {
        let mut r = Reader::new(bytes);
        if r.take(4, "certificate magic")? != CERTIFICATE_MAGIC {
            return Err(MalformedEncoding::new(0, "bad certificate magic"));
        }
        let subject = r.string_u16("subject")?;
        let kem_algorithm_id = r.string_u8("kem algorithm id")?;
        let kem_public_key = r.vec_u32("kem public key")?.to_vec();
        let hbs_algorithm_id = r.string_u8("hbs algorithm id")?;
        let issuer_root = r.vec_u8("issuer root")?.to_vec();
        let issuer_signature = r.vec_u32("issuer signature")?.to_vec();
        r.finish()?;
        Ok(Self {
            subject,
            kem_algorithm_id,
            kem_public_key,
            hbs_algorithm_id,
            issuer_root,
            issuer_signature,
        })
    }

    /// Issues a certificate for `kem_public` signed by `issuer`.
    pub fn issue(issuer: &mut EasySigner, subject: &str, kem_public: &PublicKeyInfo) -> Result<Self, EasyError> {
        let issuer_public = issuer.public_key();
        let mut cert = Self {
            subject: subject.to_string(),
            kem_algorithm_id: kem_public.algorithm_id.clone(),
            kem_public_key: kem_public.key.clone(),
            hbs_algorithm_id: issuer_public.algorithm_id,
            issuer_root: issuer_public.key,
            issuer_signature: Vec::new(),
        };
        kem_public.kem()?;
        cert.issuer_signature = issuer.sign_raw(&cert.to_be_signed())?.to_bytes();
        Ok(cert)
    }

    /// Issues a certificate with a bare key pair, advancing its leaf counter.
    pub fn issue_with_key_pair<R: RandomSource + ?Sized>(
        issuer: &mut HbsKeyPair,
        rng: &mut R,
        subject: &str,
        kem_public: &PublicKeyInfo,
    ) -> Result<Self, EasyError> {
        kem_public.kem()?;
        let mut cert = Self {
            subject: subject.to_string(),
            kem_algorithm_id: kem_public.algorithm_id.clone(),
            kem_public_key: kem_public.key.clone(),
            hbs_algorithm_id: issuer.params().algorithm_id(),
            issuer_root: issuer.root().to_vec(),
            issuer_signature: Vec::new(),
        };
        cert.issuer_signature = issuer.sign(&cert.to_be_signed(), rng)?.to_bytes();
        Ok(cert)
    }

    pub fn issuer(&self) -> PublicKeyInfo {
        PublicKeyInfo {
            algorithm_id: self.hbs_algorithm_id.clone(),
            key: self.issuer_root.clone(),
        }
    }

    /// Checks the issuer signature. Does not decide whether the issuer is trusted.
    pub fn signature_valid(&self) -> bool {
        let Ok(params) = HbsParams::from_algorithm_id(&self.hbs_algorithm_id) else {
            return false;
        };
        let Ok(sig) = HbsSignature::from_bytes(&params, &self.issuer_signature) else {
            return false;
        };
        self.issuer_root.len() == params.n && hbs::verify(&self.issuer_root, &params, &self.to_be_signed(), &sig)
    }

    /// Parses and validates the carried KEM public key.
    pub fn kem_public(&self) -> Result<KemPublicKey, EasyError> {
        let params = KemParams::from_algorithm_id(&self.kem_algorithm_id)?;
        Ok(KemPublicKey::from_bytes(params, &self.kem_public_key)?)
    }

    pub fn kem_public_info(&self) -> PublicKeyInfo {
        PublicKeyInfo {
            algorithm_id: self.kem_algorithm_id.clone(),
            key: self.kem_public_key.clone(),
        }
    }
}
