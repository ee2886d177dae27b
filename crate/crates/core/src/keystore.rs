//! Password-protected key storage and the stateless/stateful key managers.
//!
//! File layout (all integers big-endian):
//!
//! ```text
//! magic "AGKS" | version u16 = 1 | salt [16] | iterations u32 | sealed entry table
//! ```
//!
//! The sealed table is [`seal_stream`] output under keys derived with
//! PBKDF2-HMAC-H512(password, salt, iterations); the header bytes are bound into every
//! record MAC. A fresh salt is drawn on each save. Opening checks the MAC before any
//! entry is parsed, so a wrong password never yields partial data.
//!
//! Entry table: `count u32`, then per entry (sorted by alias)
//!
//! ```text
//! alias u16-str | algorithm_id u16-str | secret u32-bytes | public u32-bytes |
//! has_state u8 | [next_leaf u64 | reserved_until u64]
//! ```
//!
//! Saves go to `<path>.tmp`, are synced, then renamed over `<path>`. One writer per store
//! is enforced with an OS advisory lock on `<path>.lock`; read-only opens share it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;
use zeroize::{Zeroize, Zeroizing};

use crate::codec::{put_u16, put_u32, put_u64, put_vec_u16, put_vec_u32, MalformedEncoding, Reader};
use crate::hbs::{HbsParams, LeafMode};
use crate::primitives::{open_stream, seal_stream, CryptoError, HashId, RandomSource, SymmetricKeys, SystemRandom};

pub const MAGIC: &[u8; 4] = b"AGKS";
pub const FORMAT_VERSION: u16 = 1;
pub const SALT_LEN: usize = 16;
pub const DEFAULT_ITERATIONS: u32 = 100_000;
const HEADER_LEN: usize = 4 + 2 + SALT_LEN + 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeystoreError {
    #[error("wrong password or corrupted keystore")]
    BadPassword,
    #[error("malformed keystore: {0}")]
    MalformedStore(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("keystore already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("keystore {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("keystore was opened read-only")]
    ReadOnly,
    #[error("alias {0:?} already present")]
    DuplicateAlias(String),
    #[error("unknown alias {0:?}")]
    UnknownAlias(String),
    #[error("key {alias:?} exhausted: {capacity} leaves")]
    KeyExhausted { alias: String, capacity: u64 },
    #[error("key {0:?} is not stateful")]
    NotStateful(String),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("simulated crash at {0:?}")]
    SimulatedCrash(CrashPoint),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<std::io::Error> for KeystoreError {
    fn from(e: std::io::Error) -> Self {
        KeystoreError::Io(e.to_string())
    }
}

/// Points in the save protocol where a crash can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    /// Half of the temporary file has been written.
    TempPartial,
    /// The temporary file is complete and synced but not yet renamed.
    BeforeRename,
    /// The rename happened; nothing after it ran.
    AfterRename,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 3] = [CrashPoint::TempPartial, CrashPoint::BeforeRename, CrashPoint::AfterRename];
}

/// Where the key material lives and the password protecting it.
#[derive(Clone)]
pub struct KeystoreParameters {
    path: PathBuf,
    password: Zeroizing<String>,
    iterations: u32,
}

/// The same concept under its other name.
pub type StorageParameters = KeystoreParameters;

impl KeystoreParameters {
    pub fn new(path: impl Into<PathBuf>, password: impl Into<String>) -> Result<Self, KeystoreError> {
        let path = path.into();
        let password = Zeroizing::new(password.into());
        if path.as_os_str().is_empty() {
            return Err(KeystoreError::InvalidParameters("keystore path is empty".into()));
        }
        if password.is_empty() {
            return Err(KeystoreError::InvalidParameters("password is empty".into()));
        }
        Ok(Self {
            path,
            password,
            iterations: DEFAULT_ITERATIONS,
        })
    }

    /// KDF iteration count written on the next save. Lower it only in tests.
    pub fn with_iterations(mut self, iterations: u32) -> Self {
        self.iterations = iterations.max(1);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    fn lock_path(&self) -> PathBuf {
        sibling(&self.path, ".lock")
    }

    fn temp_path(&self) -> PathBuf {
        sibling(&self.path, ".tmp")
    }
}

impl std::fmt::Debug for KeystoreParameters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeystoreParameters")
            .field("path", &self.path)
            .field("iterations", &self.iterations)
            .finish_non_exhaustive()
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Signing-counter state of a stateful key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafState {
    pub next_leaf: u64,
    pub reserved_until: u64,
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeystoreEntry {
    pub alias: String,
    pub algorithm_id: String,
    pub secret_material: Zeroizing<Vec<u8>>,
    pub public_material: Vec<u8>,
    pub state: Option<LeafState>,
}

impl std::fmt::Debug for KeystoreEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeystoreEntry")
            .field("alias", &self.alias)
            .field("algorithm_id", &self.algorithm_id)
            .field("public_len", &self.public_material.len())
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl KeystoreEntry {
    /// Builds an entry, attaching fresh counter state when the algorithm is a stateful HBS.
    pub fn new(alias: impl Into<String>, algorithm_id: impl Into<String>, secret: Vec<u8>, public: Vec<u8>) -> Self {
        let algorithm_id = algorithm_id.into();
        let state = stateful_capacity(&algorithm_id).map(|_| LeafState {
            next_leaf: 0,
            reserved_until: 0,
        });
        Self {
            alias: alias.into(),
            algorithm_id,
            secret_material: Zeroizing::new(secret),
            public_material: public,
            state,
        }
    }

    fn validate(&self) -> Result<(), KeystoreError> {
        if self.alias.is_empty() || self.alias.len() > u16::MAX as usize {
            return Err(KeystoreError::InvalidEntry("alias must be 1..=65535 bytes".into()));
        }
        if self.algorithm_id.is_empty() || self.algorithm_id.len() > u16::MAX as usize {
            return Err(KeystoreError::InvalidEntry("algorithm id must be 1..=65535 bytes".into()));
        }
        match (stateful_capacity(&self.algorithm_id), self.state) {
            (Some(cap), Some(s)) if s.next_leaf <= s.reserved_until && s.reserved_until <= cap => Ok(()),
            (Some(_), Some(s)) => Err(KeystoreError::InvalidEntry(format!(
                "inconsistent counter state {s:?} for {}",
                self.alias
            ))),
            (Some(_), None) => Err(KeystoreError::InvalidEntry(format!(
                "stateful key {} has no counter state",
                self.alias
            ))),
            (None, Some(_)) => Err(KeystoreError::InvalidEntry(format!(
                "stateless key {} carries counter state",
                self.alias
            ))),
            (None, None) => Ok(()),
        }
    }
}

/// Leaf count of a stateful hash-based signature algorithm, `None` for anything else.
pub fn stateful_capacity(algorithm_id: &str) -> Option<u64> {
    HbsParams::from_algorithm_id(algorithm_id)
        .ok()
        .filter(|p| p.mode == LeafMode::Stateful)
        .map(|p| p.leaf_count())
}

/// An open keystore. Holds the advisory lock until dropped.
pub struct Keystore {
    params: KeystoreParameters,
    entries: BTreeMap<String, KeystoreEntry>,
    read_only: bool,
    _lock: File,
    crash_at: Option<CrashPoint>,
}

impl std::fmt::Debug for Keystore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keystore")
            .field("path", &self.params.path)
            .field("entries", &self.entries.len())
            .field("read_only", &self.read_only)
            .finish()
    }
}

impl Keystore {
    /// Creates an empty store. The path must be absent or an empty file.
    pub fn create(params: KeystoreParameters) -> Result<Self, KeystoreError> {
        let lock = acquire_lock(&params, false)?;
        match fs::metadata(&params.path) {
            Ok(meta) if meta.len() > 0 => return Err(KeystoreError::AlreadyExists(params.path.clone())),
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        let mut ks = Self {
            params,
            entries: BTreeMap::new(),
            read_only: false,
            _lock: lock,
            crash_at: None,
        };
        ks.save(&BTreeMap::new())?;
        Ok(ks)
    }

    /// Opens an existing store for writing; fails if another writer holds it.
    pub fn open(params: KeystoreParameters) -> Result<Self, KeystoreError> {
        Self::open_with(params, false)
    }

    /// Opens an existing store for reading; any number of readers may share it.
    pub fn open_read_only(params: KeystoreParameters) -> Result<Self, KeystoreError> {
        Self::open_with(params, true)
    }

    /// Opens the store, creating it first if the path does not exist yet.
    pub fn open_or_create(params: KeystoreParameters) -> Result<Self, KeystoreError> {
        match fs::metadata(&params.path) {
            Ok(meta) if meta.len() > 0 => Self::open(params),
            _ => Self::create(params),
        }
    }

    fn open_with(params: KeystoreParameters, read_only: bool) -> Result<Self, KeystoreError> {
        let lock = acquire_lock(&params, read_only)?;
        let raw = fs::read(&params.path)?;
        let entries = decode_store(&raw, &params.password)?;
        Ok(Self {
            params,
            entries,
            read_only,
            _lock: lock,
            crash_at: None,
        })
    }

    pub fn parameters(&self) -> &KeystoreParameters {
        &self.params
    }

    pub fn entries(&self) -> impl Iterator<Item = &KeystoreEntry> {
        self.entries.values()
    }

    pub fn aliases(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_entry(&self, alias: &str) -> Result<&KeystoreEntry, KeystoreError> {
        self.entries
            .get(alias)
            .ok_or_else(|| KeystoreError::UnknownAlias(alias.to_string()))
    }

    /// Adds an entry; durable once this returns.
    pub fn put_entry(&mut self, entry: KeystoreEntry) -> Result<(), KeystoreError> {
        entry.validate()?;
        if self.entries.contains_key(&entry.alias) {
            return Err(KeystoreError::DuplicateAlias(entry.alias));
        }
        let mut next = self.entries.clone();
        next.insert(entry.alias.clone(), entry);
        self.commit(next)
    }

    /// Reserves `count` leaf indices for a stateful key and persists the new bound before
    /// returning. Indices reserved but never used are abandoned, never reissued.
    pub fn reserve_leaves(&mut self, alias: &str, count: u64) -> Result<Range<u64>, KeystoreError> {
        let entry = self.get_entry(alias)?;
        let capacity =
            stateful_capacity(&entry.algorithm_id).ok_or_else(|| KeystoreError::NotStateful(alias.to_string()))?;
        let state = entry.state.ok_or_else(|| KeystoreError::NotStateful(alias.to_string()))?;
        let start = state.reserved_until;
        let end = start
            .checked_add(count)
            .filter(|&e| e <= capacity)
            .ok_or_else(|| KeystoreError::KeyExhausted {
                alias: alias.to_string(),
                capacity,
            })?;
        let mut next = self.entries.clone();
        next.get_mut(alias).expect("checked above").state = Some(LeafState {
            next_leaf: start,
            reserved_until: end,
        });
        self.commit(next)?;
        Ok(start..end)
    }

    /// Arms a one-shot crash at `point` for the next save.
    #[cfg(any(test, feature = "fault-injection"))]
    pub fn inject_crash(&mut self, point: CrashPoint) {
        self.crash_at = Some(point);
    }

    fn commit(&mut self, next: BTreeMap<String, KeystoreEntry>) -> Result<(), KeystoreError> {
        if self.read_only {
            return Err(KeystoreError::ReadOnly);
        }
        self.save(&next)?;
        self.entries = next;
        Ok(())
    }

    fn crash_check(&mut self, point: CrashPoint) -> Result<(), KeystoreError> {
        if self.crash_at == Some(point) {
            self.crash_at = None;
            return Err(KeystoreError::SimulatedCrash(point));
        }
        Ok(())
    }

    fn save(&mut self, entries: &BTreeMap<String, KeystoreEntry>) -> Result<(), KeystoreError> {
        let bytes = encode_store(entries, &self.params.password, self.params.iterations, &mut SystemRandom)?;
        let tmp = self.params.temp_path();
        {
            let mut f = OpenOptions::new().write(true).create(true).truncate(true).open(&tmp)?;
            if self.crash_at == Some(CrashPoint::TempPartial) {
                f.write_all(&bytes[..bytes.len() / 2])?;
                f.sync_all()?;
                return self.crash_check(CrashPoint::TempPartial);
            }
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        self.crash_check(CrashPoint::BeforeRename)?;
        fs::rename(&tmp, &self.params.path)?;
        self.crash_check(CrashPoint::AfterRename)?;
        if let Some(dir) = self.params.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            // Directory fsync is best effort; not every platform allows opening a directory.
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }
}

fn acquire_lock(params: &KeystoreParameters, shared: bool) -> Result<File, KeystoreError> {
    let lock = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(params.lock_path())?;
    let res = if shared { lock.try_lock_shared() } else { lock.try_lock() };
    match res {
        Ok(()) => Ok(lock),
        Err(TryLockError::WouldBlock) => Err(KeystoreError::Locked(params.path.clone())),
        Err(TryLockError::Error(e)) => Err(e.into()),
    }
}

fn derive_keys(password: &str, salt: &[u8], iterations: u32) -> SymmetricKeys {
    let mut block = Zeroizing::new(vec![0u8; SymmetricKeys::key_block_len(HashId::H512)]);
    pbkdf2::pbkdf2_hmac::<sha2::Sha512>(password.as_bytes(), salt, iterations, &mut block);
    SymmetricKeys::from_key_block(HashId::H512, &block).expect("sized key block")
}

fn encode_table(entries: &BTreeMap<String, KeystoreEntry>) -> Zeroizing<Vec<u8>> {
    let mut out = Zeroizing::new(Vec::new());
    put_u32(&mut out, entries.len() as u32);
    for e in entries.values() {
        put_vec_u16(&mut out, e.alias.as_bytes());
        put_vec_u16(&mut out, e.algorithm_id.as_bytes());
        put_vec_u32(&mut out, &e.secret_material);
        put_vec_u32(&mut out, &e.public_material);
        match e.state {
            Some(s) => {
                out.push(1);
                put_u64(&mut out, s.next_leaf);
                put_u64(&mut out, s.reserved_until);
            }
            None => out.push(0),
        }
    }
    out
}

fn decode_table(bytes: &[u8]) -> Result<BTreeMap<String, KeystoreEntry>, MalformedEncoding> {
    let mut r = Reader::new(bytes);
    let count = r.u32("entry count")?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let at = r.offset();
        let alias = r.string_u16("alias")?;
        let algorithm_id = r.string_u16("algorithm id")?;
        let secret_material = Zeroizing::new(r.vec_u32("secret material")?.to_vec());
        let public_material = r.vec_u32("public material")?.to_vec();
        let state = match r.u8("state flag")? {
            0 => None,
            1 => Some(LeafState {
                next_leaf: r.u64("next leaf")?,
                reserved_until: r.u64("reserved until")?,
            }),
            f => return Err(MalformedEncoding::new(r.offset() - 1, format!("bad state flag {f}"))),
        };
        let entry = KeystoreEntry {
            alias: alias.clone(),
            algorithm_id,
            secret_material,
            public_material,
            state,
        };
        entry
            .validate()
            .map_err(|e| MalformedEncoding::new(at, e.to_string()))?;
        if entries.insert(alias, entry).is_some() {
            return Err(MalformedEncoding::new(at, "duplicate alias"));
        }
    }
    r.finish()?;
    Ok(entries)
}

fn encode_store<R: RandomSource + ?Sized>(
    entries: &BTreeMap<String, KeystoreEntry>,
    password: &str,
    iterations: u32,
    rng: &mut R,
) -> Result<Vec<u8>, KeystoreError> {
    let mut salt = [0u8; SALT_LEN];
    rng.fill(&mut salt)?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, FORMAT_VERSION);
    out.extend_from_slice(&salt);
    put_u32(&mut out, iterations);
    let keys = derive_keys(password, &salt, iterations);
    let table = encode_table(entries);
    let sealed = seal_stream(&keys, &out, &table)?;
    out.extend_from_slice(&sealed);
    Ok(out)
}

fn decode_store(raw: &[u8], password: &str) -> Result<BTreeMap<String, KeystoreEntry>, KeystoreError> {
    let malformed = |e: MalformedEncoding| KeystoreError::MalformedStore(e.to_string());
    let mut r = Reader::new(raw);
    if r.take(4, "magic").map_err(malformed)? != MAGIC {
        return Err(KeystoreError::MalformedStore("bad magic".into()));
    }
    let version = r.u16("version").map_err(malformed)?;
    if version != FORMAT_VERSION {
        return Err(KeystoreError::MalformedStore(format!("unsupported version {version}")));
    }
    let salt = r.take(SALT_LEN, "salt").map_err(malformed)?;
    let iterations = r.u32("iterations").map_err(malformed)?;
    if iterations == 0 {
        return Err(KeystoreError::MalformedStore("zero KDF iterations".into()));
    }
    let header = &raw[..HEADER_LEN];
    let keys = derive_keys(password, salt, iterations);
    let mut table = match open_stream(&keys, header, &raw[HEADER_LEN..]) {
        Ok(t) => t,
        Err(CryptoError::BadMac | CryptoError::BadPadding) => return Err(KeystoreError::BadPassword),
        Err(CryptoError::Malformed(e)) => return Err(malformed(e)),
        Err(e) => return Err(e.into()),
    };
    let entries = decode_table(&table).map_err(malformed);
    table.zeroize();
    entries
}

/// Which key-manager behaviour an algorithm needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyManagerKind {
    Stateless,
    Stateful,
}

impl KeyManagerKind {
    pub fn for_algorithm(algorithm_id: &str) -> Self {
        if stateful_capacity(algorithm_id).is_some() {
            KeyManagerKind::Stateful
        } else {
            KeyManagerKind::Stateless
        }
    }
}

/// Gives out keystore material for algorithms without signing state.
#[derive(Debug)]
pub struct StatelessKeyManager {
    keystore: Keystore,
    alias: String,
}

impl StatelessKeyManager {
    pub fn entry(&self) -> &KeystoreEntry {
        self.keystore.get_entry(&self.alias).expect("alias checked on construction")
    }
}

/// Hands out leaf indices strictly from persisted reservations.
#[derive(Debug)]
pub struct StatefulKeyManager {
    keystore: Keystore,
    alias: String,
    pending: Range<u64>,
    batch: u64,
}

impl StatefulKeyManager {
    pub fn entry(&self) -> &KeystoreEntry {
        self.keystore.get_entry(&self.alias).expect("alias checked on construction")
    }

    /// Next index to sign with. Reserves `batch` more (fewer near the end) when the
    /// current reservation is used up.
    pub fn next_index(&mut self) -> Result<u64, KeystoreError> {
        if self.pending.is_empty() {
            let entry = self.entry();
            let capacity = stateful_capacity(&entry.algorithm_id).expect("stateful entry");
            let used = entry.state.expect("stateful entry").reserved_until;
            let want = self.batch.min(capacity - used);
            if want == 0 {
                return Err(KeystoreError::KeyExhausted {
                    alias: self.alias.clone(),
                    capacity,
                });
            }
            self.pending = self.keystore.reserve_leaves(&self.alias, want)?;
        }
        let index = self.pending.start;
        self.pending.start += 1;
        Ok(index)
    }

    /// Indices still reserved in memory; lost (never reused) if the process stops.
    pub fn pending(&self) -> Range<u64> {
        self.pending.clone()
    }
}

/// The key manager of one stored key.
#[derive(Debug)]
pub enum KeyManager {
    Stateless(StatelessKeyManager),
    Stateful(StatefulKeyManager),
}

impl KeyManager {
    /// Binds the manager matching the entry's algorithm. `batch` only affects stateful keys.
    pub fn new(keystore: Keystore, alias: &str, batch: u64) -> Result<Self, KeystoreError> {
        let entry = keystore.get_entry(alias)?;
        let alias = alias.to_string();
        Ok(match KeyManagerKind::for_algorithm(&entry.algorithm_id) {
            KeyManagerKind::Stateless => KeyManager::Stateless(StatelessKeyManager { keystore, alias }),
            KeyManagerKind::Stateful => KeyManager::Stateful(StatefulKeyManager {
                keystore,
                alias,
                pending: 0..0,
                batch: batch.max(1),
            }),
        })
    }

    pub fn kind(&self) -> KeyManagerKind {
        match self {
            KeyManager::Stateless(_) => KeyManagerKind::Stateless,
            KeyManager::Stateful(_) => KeyManagerKind::Stateful,
        }
    }

    pub fn entry(&self) -> &KeystoreEntry {
        match self {
            KeyManager::Stateless(m) => m.entry(),
            KeyManager::Stateful(m) => m.entry(),
        }
    }

    pub fn alias(&self) -> &str {
        match self {
            KeyManager::Stateless(m) => &m.alias,
            KeyManager::Stateful(m) => &m.alias,
        }
    }

    pub fn keystore(&self) -> &Keystore {
        match self {
            KeyManager::Stateless(m) => &m.keystore,
            KeyManager::Stateful(m) => &m.keystore,
        }
    }

    pub fn into_keystore(self) -> Keystore {
        match self {
            KeyManager::Stateless(m) => m.keystore,
            KeyManager::Stateful(m) => m.keystore,
        }
    }
}
