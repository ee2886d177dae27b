//! Security-level templates and the `EasySigner` / `EasyEncrypter` facade.
//!
//! A [`TemplateRegistry`] maps (kind, level) to a concrete algorithm id. Registries are
//! versioned text files; two peers can compare them by digest, and every blob produced
//! here carries the algorithm id and registry version it was made under.
//!
//! Registry text format (one `key = value` per line, `#` comments, blank lines ignored):
//!
//! ```text
//! version = 1
//! issued = 2021-06-01
//! signature.low = SPX-TOY-16-16-8-S
//! ... one line for each of signature/encryption x low/medium/high
//! ```
//!
//! Blob layouts (integers big-endian):
//!
//! ```text
//! public key : "AGPK" | algorithm_id u8-str | key u32-bytes
//! signature  : algorithm_id u8-str | registry_version u32 | raw signature
//! ciphertext : algorithm_id u8-str | registry_version u32 | kem_ct u32-bytes | sealed stream
//! ```
//!
//! Ciphertext record keys are `prf(H512, shared_secret, "easyapi encrypt", prefix, 112)`
//! where `prefix` is everything before the sealed stream; the prefix is also the MAC header.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cbkem::{self, KemCiphertext, KemError, KemKeyPair, KemParams, KemPublicKey};
use crate::codec::{put_u32, put_vec_u32, put_vec_u8, MalformedEncoding, Reader};
use crate::hbs::{self, HbsError, HbsKeyPair, HbsParams, HbsPublicKey, HbsSignature, LeafMode};
use crate::keystore::{KeyManager, Keystore, KeystoreEntry, KeystoreError, KeystoreParameters};
use crate::primitives::{
    hash, open_stream, prf, seal_stream, CryptoError, HashId, RandomSource, SymmetricKeys, SystemRandom,
};

/// Registry version 1 as shipped.
pub const REGISTRY_V1: &str = include_str!("../registries/v1.registry");
/// Registry version 2: identical except for a taller HIGH signature tree.
pub const REGISTRY_V2: &str = include_str!("../registries/v2.registry");
/// Leaves reserved per keystore write by stateful signers.
pub const DEFAULT_RESERVATION_BATCH: u64 = 16;
const PUBLIC_KEY_MAGIC: &[u8; 4] = b"AGPK";
const ENCRYPT_LABEL: &str = "easyapi encrypt";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EasyError {
    #[error("registry error: {0}")]
    Registry(String),
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("provider registration rejected: {0}")]
    AmbiguousProvider(String),
    #[error("algorithm mismatch: expected {expected}, found {found}")]
    AlgorithmMismatch { expected: String, found: String },
    #[error("invalid ciphertext: {0}")]
    InvalidCiphertext(String),
    #[error("bad record MAC")]
    BadMac,
    #[error("signature rejected")]
    BadSignature,
    #[error(transparent)]
    Keystore(#[from] KeystoreError),
    #[error(transparent)]
    Malformed(#[from] MalformedEncoding),
    #[error(transparent)]
    Hbs(HbsError),
    #[error(transparent)]
    Kem(KemError),
    #[error(transparent)]
    Crypto(CryptoError),
}

impl From<CryptoError> for EasyError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::BadMac | CryptoError::BadPadding => EasyError::BadMac,
            CryptoError::Malformed(m) => EasyError::Malformed(m),
            other => EasyError::Crypto(other),
        }
    }
}

impl From<HbsError> for EasyError {
    fn from(e: HbsError) -> Self {
        match e {
            HbsError::Malformed(m) => EasyError::Malformed(m),
            HbsError::UnknownAlgorithm(id) => EasyError::UnknownAlgorithm(id),
            other => EasyError::Hbs(other),
        }
    }
}

impl From<KemError> for EasyError {
    fn from(e: KemError) -> Self {
        match e {
            KemError::InvalidCiphertext(s) => EasyError::InvalidCiphertext(s),
            KemError::Malformed(m) => EasyError::Malformed(m),
            KemError::UnknownAlgorithm(id) => EasyError::UnknownAlgorithm(id),
            other => EasyError::Kem(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SecurityLevel {
    Low,
    Medium,
    High,
}

impl SecurityLevel {
    pub const ALL: [SecurityLevel; 3] = [SecurityLevel::Low, SecurityLevel::Medium, SecurityLevel::High];

    pub fn name(self) -> &'static str {
        match self {
            SecurityLevel::Low => "low",
            SecurityLevel::Medium => "medium",
            SecurityLevel::High => "high",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SecurityLevel {
    type Err = EasyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EasyError::Registry(format!("unknown security level {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Signature,
    Encryption,
}

impl Kind {
    pub const ALL: [Kind; 2] = [Kind::Signature, Kind::Encryption];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Signature => "signature",
            Kind::Encryption => "encryption",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = EasyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EasyError::Registry(format!("unknown kind {s:?}")))
    }
}

/// Algorithm-specific parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmSpec {
    Hbs(HbsParams),
    Kem(KemParams),
}

impl AlgorithmSpec {
    pub fn kind(&self) -> Kind {
        match self {
            AlgorithmSpec::Hbs(_) => Kind::Signature,
            AlgorithmSpec::Kem(_) => Kind::Encryption,
        }
    }

    pub fn algorithm_id(&self) -> String {
        match self {
            AlgorithmSpec::Hbs(p) => p.algorithm_id(),
            AlgorithmSpec::Kem(p) => p.algorithm_id(),
        }
    }
}

/// One provider: the algorithm-id prefixes it claims and how it parses them.
#[derive(Clone)]
pub struct Provider {
    pub name: String,
    pub priority: u32,
    pub prefixes: Vec<String>,
    pub parse: fn(&str) -> Result<AlgorithmSpec, EasyError>,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("name", &self.name)
            .field("priority", &self.priority)
            .field("prefixes", &self.prefixes)
            .finish()
    }
}

fn parse_hbs(id: &str) -> Result<AlgorithmSpec, EasyError> {
    Ok(AlgorithmSpec::Hbs(HbsParams::from_algorithm_id(id)?))
}

fn parse_kem(id: &str) -> Result<AlgorithmSpec, EasyError> {
    Ok(AlgorithmSpec::Kem(KemParams::from_algorithm_id(id)?))
}

/// Providers in explicit priority order (lower number first). Registration fails when a
/// new provider would tie with an existing one: equal priority with overlapping
/// prefixes, or an identical prefix at any priority.
#[derive(Debug, Clone, Default)]
pub struct ProviderRegistry {
    providers: Vec<Provider>,
}

impl ProviderRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The in-tree `hbs` and `cbkem` providers.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Provider {
            name: "hbs".into(),
            priority: 100,
            prefixes: vec!["SPX-TOY-".into()],
            parse: parse_hbs,
        })
        .expect("builtin providers are disjoint");
        reg.register(Provider {
            name: "cbkem".into(),
            priority: 100,
            prefixes: vec!["CME-TOY-".into()],
            parse: parse_kem,
        })
        .expect("builtin providers are disjoint");
        reg
    }

    pub fn register(&mut self, provider: Provider) -> Result<(), EasyError> {
        if provider.prefixes.is_empty() || provider.prefixes.iter().any(String::is_empty) {
            return Err(EasyError::AmbiguousProvider(format!(
                "{} must claim non-empty prefixes",
                provider.name
            )));
        }
        for existing in &self.providers {
            if existing.name == provider.name {
                return Err(EasyError::AmbiguousProvider(format!("duplicate provider {}", provider.name)));
            }
            for a in &existing.prefixes {
                for b in &provider.prefixes {
                    let identical = a == b;
                    let overlap = a.starts_with(b.as_str()) || b.starts_with(a.as_str());
                    if identical || (overlap && existing.priority == provider.priority) {
                        return Err(EasyError::AmbiguousProvider(format!(
                            "{} prefix {b:?} collides with {} prefix {a:?}",
                            provider.name, existing.name
                        )));
                    }
                }
            }
        }
        let at = self.providers.partition_point(|p| p.priority <= provider.priority);
        self.providers.insert(at, provider);
        Ok(())
    }

    pub fn providers(&self) -> &[Provider] {
        &self.providers
    }

    /// The provider that owns `algorithm_id`: first match in priority order.
    pub fn provider_for(&self, algorithm_id: &str) -> Option<&Provider> {
        self.providers
            .iter()
            .find(|p| p.prefixes.iter().any(|pre| algorithm_id.starts_with(pre.as_str())))
    }

    pub fn resolve(&self, algorithm_id: &str) -> Result<AlgorithmSpec, EasyError> {
        let provider = self
            .provider_for(algorithm_id)
            .ok_or_else(|| EasyError::UnknownAlgorithm(algorithm_id.to_string()))?;
        (provider.parse)(algorithm_id)
    }
}

/// A resolved algorithm choice together with the registry version it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmParameters {
    pub algorithm_id: String,
    pub spec: AlgorithmSpec,
    pub registry_version: u32,
}

impl AlgorithmParameters {
    /// Parameters for an explicit algorithm id, outside any template.
    pub fn from_algorithm_id(algorithm_id: &str, registry_version: u32) -> Result<Self, EasyError> {
        let spec = ProviderRegistry::builtin().resolve(algorithm_id)?;
        Ok(Self {
            algorithm_id: algorithm_id.to_string(),
            spec,
            registry_version,
        })
    }

    pub fn kind(&self) -> Kind {
        self.spec.kind()
    }

    fn hbs(&self) -> Result<HbsParams, EasyError> {
        match self.spec {
            AlgorithmSpec::Hbs(p) => Ok(p),
            AlgorithmSpec::Kem(_) => Err(EasyError::AlgorithmMismatch {
                expected: "a signature algorithm".into(),
                found: self.algorithm_id.clone(),
            }),
        }
    }

    fn kem(&self) -> Result<KemParams, EasyError> {
        match self.spec {
            AlgorithmSpec::Kem(p) => Ok(p),
            AlgorithmSpec::Hbs(_) => Err(EasyError::AlgorithmMismatch {
                expected: "a KEM".into(),
                found: self.algorithm_id.clone(),
            }),
        }
    }
}

/// Versioned map from (kind, level) to algorithm id. Every pair is always mapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    version: u32,
    issued: String,
    entries: BTreeMap<(Kind, SecurityLevel), AlgorithmParameters>,
}

impl TemplateRegistry {
    pub fn builtin_v1() -> Self {
        Self::parse(REGISTRY_V1).expect("shipped registry v1 parses")
    }

    pub fn builtin_v2() -> Self {
        Self::parse(REGISTRY_V2).expect("shipped registry v2 parses")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, EasyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EasyError::Registry(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, EasyError> {
        Self::parse_with(text, &ProviderRegistry::builtin())
    }

    pub fn parse_with(text: &str, providers: &ProviderRegistry) -> Result<Self, EasyError> {
        let err = |line: usize, msg: String| EasyError::Registry(format!("line {line}: {msg}"));
        let mut version = None;
        let mut issued = None;
        let mut ids: BTreeMap<(Kind, SecurityLevel), String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(line_no, "expected key = value".into()))?;
            if value.is_empty() {
                return Err(err(line_no, format!("empty value for {key}")));
            }
            match key {
                "version" => {
                    let v = value
                        .parse::<u32>()
                        .map_err(|_| err(line_no, format!("bad version {value:?}")))?;
                    if version.replace(v).is_some() {
                        return Err(err(line_no, "duplicate version".into()));
                    }
                }
                "issued" => {
                    if !is_iso_date(value) {
                        return Err(err(line_no, format!("issued must be YYYY-MM-DD, got {value:?}")));
                    }
                    if issued.replace(value.to_string()).is_some() {
                        return Err(err(line_no, "duplicate issued".into()));
                    }
                }
                _ => {
                    let (kind, level) = key
                        .split_once('.')
                        .ok_or_else(|| err(line_no, format!("unknown key {key:?}")))?;
                    let kind: Kind = kind.parse().map_err(|_| err(line_no, format!("unknown kind in {key:?}")))?;
                    let level: SecurityLevel =
                        level.parse().map_err(|_| err(line_no, format!("unknown level in {key:?}")))?;
                    if ids.insert((kind, level), value.to_string()).is_some() {
                        return Err(err(line_no, format!("duplicate entry {key}")));
                    }
                }
            }
        }
        let version = version.ok_or_else(|| EasyError::Registry("missing version".into()))?;
        let issued = issued.ok_or_else(|| EasyError::Registry("missing issued".into()))?;
        let mut entries = BTreeMap::new();
        for kind in Kind::ALL {
            for level in SecurityLevel::ALL {
                let id = ids
                    .remove(&(kind, level))
                    .ok_or_else(|| EasyError::Registry(format!("missing {kind}.{level}")))?;
                let spec = providers.resolve(&id)?;
                if spec.kind() != kind {
                    return Err(EasyError::Registry(format!("{kind}.{level} maps to {id}, a {}", spec.kind())));
                }
                entries.insert(
                    (kind, level),
                    AlgorithmParameters {
                        algorithm_id: id,
                        spec,
                        registry_version: version,
                    },
                );
            }
        }
        Ok(Self {
            version,
            issued,
            entries,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn issued(&self) -> &str {
        &self.issued
    }

    /// Canonical text: fixed key order, no comments, `key=value` lines.
    pub fn canonical(&self) -> String {
        let mut out = format!("version={}\nissued={}\n", self.version, self.issued);
        for ((kind, level), ap) in &self.entries {
            out.push_str(&format!("{kind}.{level}={}\n", ap.algorithm_id));
        }
        out
    }

    /// H256 of the canonical text; equal digests mean identical resolution.
    pub fn digest(&self) -> [u8; 32] {
        hash(HashId::H256, self.canonical().as_bytes())
            .try_into()
            .expect("H256 output")
    }

    pub fn resolve(&self, kind: Kind, level: SecurityLevel) -> AlgorithmParameters {
        template_resolve(self, kind, level)
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin_v1()
    }
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

/// The algorithm a template names for (kind, level). Total: every pair is mapped.
pub fn template_resolve(reg: &TemplateRegistry, kind: Kind, level: SecurityLevel) -> AlgorithmParameters {
    reg.entries
        .get(&(kind, level))
        .cloned()
        .expect("registry maps every (kind, level)")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compatibility {
    Compatible,
    TemplateMismatch,
    VersionMismatch,
}

/// Compares a local resolution with what a peer resolved for the same level.
pub fn compatibility_check(
    local: &AlgorithmParameters,
    remote_algorithm_id: &str,
    remote_registry_version: u32,
) -> Compatibility {
    if local.algorithm_id == remote_algorithm_id {
        Compatibility::Compatible
    } else if local.registry_version != remote_registry_version {
        Compatibility::VersionMismatch
    } else {
        Compatibility::TemplateMismatch
    }
}

/// An exported public key with its algorithm id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKeyInfo {
    pub algorithm_id: String,
    pub key: Vec<u8>,
}

impl PublicKeyInfo {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 1 + self.algorithm_id.len() + 4 + self.key.len());
        out.extend_from_slice(PUBLIC_KEY_MAGIC);
        put_vec_u8(&mut out, self.algorithm_id.as_bytes());
        put_vec_u32(&mut out, &self.key);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EasyError> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != PUBLIC_KEY_MAGIC {
            return Err(r.error("bad public key magic").into());
        }
        let algorithm_id = r.string_u8("algorithm id")?;
        let key = r.vec_u32("key")?.to_vec();
        r.finish()?;
        Ok(Self { algorithm_id, key })
    }

    pub fn from_entry(entry: &KeystoreEntry) -> Self {
        Self {
            algorithm_id: entry.algorithm_id.clone(),
            key: entry.public_material.clone(),
        }
    }

    pub fn hbs(&self) -> Result<HbsPublicKey, EasyError> {
        let params = AlgorithmParameters::from_algorithm_id(&self.algorithm_id, 0)?.hbs()?;
        Ok(HbsPublicKey::from_bytes(params, &self.key)?)
    }

    pub fn kem(&self) -> Result<KemPublicKey, EasyError> {
        let params = AlgorithmParameters::from_algorithm_id(&self.algorithm_id, 0)?.kem()?;
        Ok(KemPublicKey::from_bytes(params, &self.key)?)
    }
}

/// Decoded signature blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureBlob {
    pub algorithm_id: String,
    pub registry_version: u32,
    pub signature: Vec<u8>,
}

impl SignatureBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.algorithm_id.len() + 4 + self.signature.len());
        put_vec_u8(&mut out, self.algorithm_id.as_bytes());
        put_u32(&mut out, self.registry_version);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EasyError> {
        let mut r = Reader::new(bytes);
        let algorithm_id = r.string_u8("algorithm id")?;
        let registry_version = r.u32("registry version")?;
        let signature = r.take(r.remaining(), "signature")?.to_vec();
        Ok(Self {
            algorithm_id,
            registry_version,
            signature,
        })
    }
}

/// Decoded ciphertext blob; `prefix_len` bytes of the original form the MAC header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextBlob<'a> {
    pub algorithm_id: String,
    pub registry_version: u32,
    pub kem_ciphertext: &'a [u8],
    pub prefix: &'a [u8],
    pub sealed: &'a [u8],
}

impl<'a> CiphertextBlob<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, EasyError> {
        let mut r = Reader::new(bytes);
        let algorithm_id = r.string_u8("algorithm id")?;
        let registry_version = r.u32("registry version")?;
        let kem_ciphertext = r.vec_u32("kem ciphertext")?;
        let split = r.offset();
        Ok(Self {
            algorithm_id,
            registry_version,
            kem_ciphertext,
            prefix: &bytes[..split],
            sealed: &bytes[split..],
        })
    }
}

/// Record keys for a hybrid ciphertext.
pub fn hybrid_keys(shared_secret: &[u8], prefix: &[u8]) -> SymmetricKeys {
    let block = zeroize::Zeroizing::new(prf(
        HashId::H512,
        shared_secret,
        ENCRYPT_LABEL,
        prefix,
        SymmetricKeys::key_block_len(HashId::H512),
    ));
    SymmetricKeys::from_key_block(HashId::H512, &block).expect("sized key block")
}

/// Derived alias for a freshly generated key.
fn derived_alias(algorithm_id: &str, public: &[u8]) -> String {
    let tag = hash(HashId::H256, public);
    let hex: String = tag[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", algorithm_id.to_ascii_lowercase())
}

fn entry_seed(entry: &KeystoreEntry) -> Result<[u8; 32], EasyError> {
    entry
        .secret_material
        .as_slice()
        .try_into()
        .map_err(|_| EasyError::Keystore(KeystoreError::InvalidEntry(format!("{}: bad seed length", entry.alias))))
}

/// Signing handle. Stateful keys take leaf indices only from persisted reservations.
pub struct EasySigner {
    manager: KeyManager,
    key: HbsKeyPair,
    params: AlgorithmParameters,
    rng: Box<dyn RandomSource>,
}

impl fmt::Debug for EasySigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EasySigner")
            .field("alias", &self.manager.alias())
            .field("algorithm_id", &self.params.algorithm_id)
            .finish()
    }
}

impl EasySigner {
    /// Generates a key, stores it under a derived alias and returns the signer.
    pub fn with_new_key(ap: AlgorithmParameters, ksp: KeystoreParameters) -> Result<Self, EasyError> {
        Self::with_new_key_rng(ap, ksp, Box::new(SystemRandom))
    }

    pub fn with_new_key_rng(
        ap: AlgorithmParameters,
        ksp: KeystoreParameters,
        mut rng: Box<dyn RandomSource>,
    ) -> Result<Self, EasyError> {
        let params = ap.hbs()?;
        let key = HbsKeyPair::generate(params, &mut rng)?;
        let mut ks = Keystore::open_or_create(ksp)?;
        let alias = derived_alias(&ap.algorithm_id, key.root());
        ks.put_entry(KeystoreEntry::new(
            alias.clone(),
            ap.algorithm_id.clone(),
            key.seed().to_vec(),
            key.root().to_vec(),
        ))?;
        let manager = KeyManager::new(ks, &alias, DEFAULT_RESERVATION_BATCH)?;
        Ok(Self {
            manager,
            key,
            params: ap,
            rng,
        })
    }

    /// Opens a stored signing key. `registry_version` is stamped into produced blobs.
    pub fn load(ksp: KeystoreParameters, alias: &str, registry_version: u32) -> Result<Self, EasyError> {
        Self::load_rng(ksp, alias, registry_version, Box::new(SystemRandom))
    }

    pub fn load_rng(
        ksp: KeystoreParameters,
        alias: &str,
        registry_version: u32,
        rng: Box<dyn RandomSource>,
    ) -> Result<Self, EasyError> {
        let ks = Keystore::open(ksp)?;
        let entry = ks.get_entry(alias)?;
        let params = AlgorithmParameters::from_algorithm_id(&entry.algorithm_id, registry_version)?;
        let next = entry.state.map(|s| s.reserved_until).unwrap_or(0);
        let key = HbsKeyPair::from_seed(params.hbs()?, entry_seed(entry)?, next)?;
        let manager = KeyManager::new(ks, alias, DEFAULT_RESERVATION_BATCH)?;
        Ok(Self {
            manager,
            key,
            params,
            rng,
        })
    }

    /// Leaves reserved per keystore write (stateful keys only).
    pub fn with_reservation_batch(mut self, batch: u64) -> Result<Self, EasyError> {
        let alias = self.manager.alias().to_string();
        let ks = self.manager.into_keystore();
        self.manager = KeyManager::new(ks, &alias, batch)?;
        Ok(self)
    }

    pub fn alias(&self) -> &str {
        self.manager.alias()
    }

    pub fn parameters(&self) -> &AlgorithmParameters {
        &self.params
    }

    pub fn key_pair(&self) -> &HbsKeyPair {
        &self.key
    }

    pub fn public_key(&self) -> PublicKeyInfo {
        PublicKeyInfo {
            algorithm_id: self.params.algorithm_id.clone(),
            key: self.key.root().to_vec(),
        }
    }

    /// Raw HBS signature without blob framing.
    pub fn sign_raw(&mut self, msg: &[u8]) -> Result<HbsSignature, EasyError> {
        let sig = match &mut self.manager {
            KeyManager::Stateful(m) => {
                let leaf = m.next_index().map_err(|e| match e {
                    KeystoreError::KeyExhausted { capacity, .. } => EasyError::Hbs(HbsError::KeyExhausted(capacity)),
                    other => other.into(),
                })?;
                self.key.sign_at(leaf, msg, &mut self.rng)?
            }
            KeyManager::Stateless(_) => self.key.sign(msg, &mut self.rng)?,
        };
        Ok(sig)
    }

    /// Signs and frames the result as `algorithm_id | registry_version | signature`.
    pub fn sign(&mut self, msg: &[u8]) -> Result<Vec<u8>, EasyError> {
        let sig = self.sign_raw(msg)?;
        Ok(SignatureBlob {
            algorithm_id: self.params.algorithm_id.clone(),
            registry_version: self.params.registry_version,
            signature: sig.to_bytes(),
        }
        .to_bytes())
    }

    /// Accepts iff the blob names the key's algorithm and the signature verifies.
    pub fn verify(public: &PublicKeyInfo, msg: &[u8], blob: &[u8]) -> bool {
        Self::verify_detailed(public, msg, blob).is_ok()
    }

    pub fn verify_detailed(public: &PublicKeyInfo, msg: &[u8], blob: &[u8]) -> Result<SignatureBlob, EasyError> {
        let decoded = SignatureBlob::from_bytes(blob)?;
        if decoded.algorithm_id != public.algorithm_id {
            return Err(EasyError::AlgorithmMismatch {
                expected: public.algorithm_id.clone(),
                found: decoded.algorithm_id,
            });
        }
        let pk = public.hbs()?;
        let sig = HbsSignature::from_bytes(&pk.params, &decoded.signature)?;
        if hbs::verify(&pk.root, &pk.params, msg, &sig) {
            Ok(decoded)
        } else {
            Err(EasyError::BadSignature)
        }
    }

    pub fn is_stateful(&self) -> bool {
        self.key.params().mode == LeafMode::Stateful
    }

    pub fn into_keystore(self) -> Keystore {
        self.manager.into_keystore()
    }
}

/// Hybrid encryption handle holding a KEM key pair.
pub struct EasyEncrypter {
    alias: String,
    key: KemKeyPair,
    params: AlgorithmParameters,
    rng: Box<dyn RandomSource>,
}

impl fmt::Debug for EasyEncrypter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EasyEncrypter")
            .field("alias", &self.alias)
            .field("algorithm_id", &self.params.algorithm_id)
            .finish()
    }
}

impl EasyEncrypter {
    /// Generates a KEM key, stores it under a derived alias and returns the handle. The
    /// keystore is released on return.
    pub fn with_new_key(ap: AlgorithmParameters, ksp: KeystoreParameters) -> Result<Self, EasyError> {
        Self::with_new_key_rng(ap, ksp, Box::new(SystemRandom))
    }

    pub fn with_new_key_rng(
        ap: AlgorithmParameters,
        ksp: KeystoreParameters,
        mut rng: Box<dyn RandomSource>,
    ) -> Result<Self, EasyError> {
        let params = ap.kem()?;
        let key = KemKeyPair::generate(params, &mut rng)?;
        let public = key.public.to_bytes();
        let alias = derived_alias(&ap.algorithm_id, &public);
        let mut ks = Keystore::open_or_create(ksp)?;
        ks.put_entry(KeystoreEntry::new(
            alias.clone(),
            ap.algorithm_id.clone(),
            key.secret.seed().to_vec(),
            public,
        ))?;
        Ok(Self {
            alias,
            key,
            params: ap,
            rng,
        })
    }

    pub fn load(ksp: KeystoreParameters, alias: &str, registry_version: u32) -> Result<Self, EasyError> {
        Self::load_rng(ksp, alias, registry_version, Box::new(SystemRandom))
    }

    pub fn load_rng(
        ksp: KeystoreParameters,
        alias: &str,
        registry_version: u32,
        rng: Box<dyn RandomSource>,
    ) -> Result<Self, EasyError> {
        let ks = Keystore::open_read_only(ksp)?;
        let entry = ks.get_entry(alias)?;
        let params = AlgorithmParameters::from_algorithm_id(&entry.algorithm_id, registry_version)?;
        let key = KemKeyPair::from_seed(params.kem()?, entry_seed(entry)?)?;
        Ok(Self {
            alias: alias.to_string(),
            key,
            params,
            rng,
        })
    }

    pub fn alias(&self) -> &str {
        &self.alias
    }

    pub fn parameters(&self) -> &AlgorithmParameters {
        &self.params
    }

    pub fn key_pair(&self) -> &KemKeyPair {
        &self.key
    }

    pub fn public_key(&self) -> PublicKeyInfo {
        PublicKeyInfo {
            algorithm_id: self.params.algorithm_id.clone(),
            key: self.key.public.to_bytes(),
        }
    }

    /// Encrypts to `recipient`, stamping this handle's registry version.
    pub fn encrypt(&mut self, recipient: &PublicKeyInfo, plaintext: &[u8]) -> Result<Vec<u8>, EasyError> {
        encrypt_to(recipient, self.params.registry_version, plaintext, &mut self.rng)
    }

    pub fn decrypt(&self, blob: &[u8]) -> Result<Vec<u8>, EasyError> {
        let parsed = CiphertextBlob::parse(blob)?;
        if parsed.algorithm_id != self.params.algorithm_id {
            return Err(EasyError::AlgorithmMismatch {
                expected: self.params.algorithm_id.clone(),
                found: parsed.algorithm_id,
            });
        }
        let params = self.key.public.params();
        let ct = KemCiphertext::from_bytes(params, parsed.kem_ciphertext)?;
        let ss = zeroize::Zeroizing::new(cbkem::decapsulate(&self.key.secret, &ct)?);
        let keys = hybrid_keys(ss.as_slice(), parsed.prefix);
        Ok(open_stream(&keys, parsed.prefix, parsed.sealed)?)
    }
}

/// Hybrid encryption to a public key without a local key pair.
pub fn encrypt_to<R: RandomSource + ?Sized>(
    recipient: &PublicKeyInfo,
    registry_version: u32,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, EasyError> {
    let pk = recipient.kem()?;
    let (ct, ss) = cbkem::encapsulate(&pk, rng)?;
    let ss = zeroize::Zeroizing::new(ss);
    let mut out = Vec::new();
    put_vec_u8(&mut out, recipient.algorithm_id.as_bytes());
    put_u32(&mut out, registry_version);
    put_vec_u32(&mut out, &ct.to_bytes(pk.params()));
    let keys = hybrid_keys(ss.as_slice(), &out);
    let sealed = seal_stream(&keys, &out, plaintext)?;
    out.extend_from_slice(&sealed);
    Ok(out)
}
