//! Niederreiter-style KEM over blocks of secretly permuted Hamming codes.
//!
//! Each block is a parity-check matrix whose `n = 2^m - 1` columns are every nonzero
//! `m`-bit vector in a secret order, reduced to systematic form `[I_m | T]`. Only `T`
//! (`m x k` bits, `k = n - m`) is published. Encapsulation picks one error position per
//! block and sends its column as the syndrome; since every column is distinct, decoding
//! is a table lookup.
//!
//! Hamming codes correct a single error, so anyone holding the public key can decode
//! too. This KEM has **no confidentiality**. It reproduces the interface, key sizes and
//! wire behaviour of a code-based KEM, nothing more.
//!
//! Column vectors are `u32` values with component `i` at bit `m - 1 - i`.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;
use zeroize::Zeroize;

use crate::codec::MalformedEncoding;
use crate::primitives::{hash_parts, uniform_below, CryptoError, DeterministicRandom, HashId, RandomSource};

pub const SEED_LEN: usize = 32;
pub const SHARED_SECRET_LEN: usize = 32;
const MAX_REDRAWS: usize = 100;
/// Bounded buffer used when streaming public keys.
const STREAM_CHUNK: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KemError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown algorithm id {0:?}")]
    UnknownAlgorithm(String),
    #[error("invalid ciphertext: {0}")]
    InvalidCiphertext(String),
    #[error(transparent)]
    Malformed(#[from] MalformedEncoding),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl From<io::Error> for KemError {
    fn from(e: io::Error) -> Self {
        KemError::Io(e.to_string())
    }
}

/// Named parameter sets.
pub const NAMED_SETS: [(&str, u32, u32); 3] = [("toy-64", 10, 8), ("toy-128", 13, 16), ("mce-emu", 16, 10)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KemParams {
    /// Syndrome bits per block.
    pub m: u32,
    /// Number of blocks.
    pub blocks: u32,
}

impl KemParams {
    pub fn new(m: u32, blocks: u32) -> Result<Self, KemError> {
        if !(3..=20).contains(&m) {
            return Err(KemError::InvalidParams(format!("m must be within 3..=20, got {m}")));
        }
        if !(1..=64).contains(&blocks) {
            return Err(KemError::InvalidParams(format!(
                "block count must be within 1..=64, got {blocks}"
            )));
        }
        Ok(Self { m, blocks })
    }

    /// `toy-64`, `toy-128` or `mce-emu`.
    pub fn named(name: &str) -> Result<Self, KemError> {
        NAMED_SETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(_, m, b)| Self { m, blocks: b })
            .ok_or_else(|| KemError::UnknownAlgorithm(name.to_string()))
    }

    pub fn name(&self) -> Option<&'static str> {
        NAMED_SETS
            .iter()
            .find(|&&(_, m, b)| m == self.m && b == self.blocks)
            .map(|(n, _, _)| *n)
    }

    /// Parses `CME-TOY-{m}-{b}`.
    pub fn from_algorithm_id(id: &str) -> Result<Self, KemError> {
        let unknown = || KemError::UnknownAlgorithm(id.to_string());
        let rest = id.strip_prefix("CME-TOY-").ok_or_else(unknown)?;
        let (m, b) = rest.split_once('-').ok_or_else(unknown)?;
        let num = |s: &str| -> Result<u32, KemError> {
            if s.is_empty() || s.starts_with('0') || !s.bytes().all(|c| c.is_ascii_digit()) {
                return Err(unknown());
            }
            s.parse().map_err(|_| unknown())
        };
        Self::new(num(m)?, num(b)?).map_err(|_| unknown())
    }

    pub fn algorithm_id(&self) -> String {
        format!("CME-TOY-{}-{}", self.m, self.blocks)
    }

    /// Code length per block, `2^m - 1`.
    pub fn n(&self) -> u32 {
        (1 << self.m) - 1
    }

    /// Columns of `T` per block, `n - m`.
    pub fn k(&self) -> u32 {
        self.n() - self.m
    }

    pub fn public_key_bits(&self) -> u64 {
        self.blocks as u64 * self.k() as u64 * self.m as u64
    }

    pub fn public_key_len(&self) -> usize {
        self.public_key_bits().div_ceil(8) as usize
    }

    pub fn ciphertext_bits(&self) -> u64 {
        self.blocks as u64 * self.m as u64
    }

    pub fn ciphertext_len(&self) -> usize {
        self.ciphertext_bits().div_ceil(8) as usize
    }
}

impl fmt::Display for KemParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.algorithm_id())
    }
}

/// Per-block systematic parity parts `T_i`, one `m`-bit value per column.
#[derive(Clone, PartialEq, Eq)]
pub struct KemPublicKey {
    params: KemParams,
    blocks: Vec<Vec<u32>>,
}

impl fmt::Debug for KemPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KemPublicKey({}, {} bytes)", self.params, self.params.public_key_len())
    }
}

impl KemPublicKey {
    pub fn params(&self) -> &KemParams {
        &self.params
    }

    pub fn parity_block(&self, block: usize) -> &[u32] {
        &self.blocks[block]
    }

    /// Column `j` of `[I | T_block]`.
    pub fn column(&self, block: usize, j: u32) -> u32 {
        let m = self.params.m;
        if j < m {
            1 << (m - 1 - j)
        } else {
            self.blocks[block][(j - m) as usize]
        }
    }

    /// Streams the bit-packed encoding through a bounded buffer.
    ///
    /// Layout: blocks in order; within a block, row-major over `T` (row 0 first, columns
    /// left to right), MSB-first; the final byte is zero-padded.
    pub fn write_to<W: Write>(&self, out: W) -> Result<(), KemError> {
        let m = self.params.m;
        let mut bits = BitWriter::new(out);
        for t in &self.blocks {
            for row in 0..m {
                let shift = m - 1 - row;
                for &col in t {
                    bits.push((col >> shift) & 1 == 1)?;
                }
            }
        }
        bits.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.public_key_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Streams and validates a public key: exact length, zero padding, and every column of
    /// `T` nonzero, of weight at least two, and distinct.
    pub fn read_from<R: Read>(params: KemParams, input: R) -> Result<Self, KemError> {
        let m = params.m;
        let k = params.k() as usize;
        let mut bits = BitReader::new(input, params.public_key_len());
        let mut blocks = Vec::with_capacity(params.blocks as usize);
        for _ in 0..params.blocks {
            let mut t = vec![0u32; k];
            for row in 0..m {
                let shift = m - 1 - row;
                for col in t.iter_mut() {
                    if bits.next()? {
                        *col |= 1 << shift;
                    }
                }
            }
            blocks.push(t);
        }
        bits.finish()?;

        for (b, t) in blocks.iter().enumerate() {
            let mut seen = vec![false; 1 << m];
            for (c, &col) in t.iter().enumerate() {
                if col.count_ones() < 2 || std::mem::replace(&mut seen[col as usize], true) {
                    let bit = b as u64 * k as u64 * m as u64 + c as u64;
                    return Err(MalformedEncoding::new(
                        (bit / 8) as usize,
                        format!("block {b} column {c} is not a valid parity column"),
                    )
                    .into());
                }
            }
        }
        Ok(Self { params, blocks })
    }

    pub fn from_bytes(params: KemParams, bytes: &[u8]) -> Result<Self, KemError> {
        Self::read_from(params, bytes)
    }
}

/// Secret key: the seed plus the derived column-value → position table per block.
#[derive(Clone)]
pub struct KemSecretKey {
    params: KemParams,
    seed: [u8; SEED_LEN],
    positions: Vec<Vec<u32>>,
}

impl KemSecretKey {
    pub fn params(&self) -> &KemParams {
        &self.params
    }

    pub fn seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }
}

impl fmt::Debug for KemSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KemSecretKey({})", self.params)
    }
}

impl Drop for KemSecretKey {
    fn drop(&mut self) {
        self.seed.zeroize();
        for p in &mut self.positions {
            p.zeroize();
        }
    }
}

#[derive(Debug, Clone)]
pub struct KemKeyPair {
    pub public: KemPublicKey,
    pub secret: KemSecretKey,
}

impl KemKeyPair {
    pub fn generate<R: RandomSource + ?Sized>(params: KemParams, rng: &mut R) -> Result<Self, KemError> {
        let mut seed = [0u8; SEED_LEN];
        rng.fill(&mut seed)?;
        let kp = Self::from_seed(params, seed);
        seed.zeroize();
        kp
    }

    /// Deterministically re-derives the key pair from its seed.
    pub fn from_seed(params: KemParams, seed: [u8; SEED_LEN]) -> Result<Self, KemError> {
        let mut stream = DeterministicRandom::from_seed(seed);
        let mut parity = Vec::with_capacity(params.blocks as usize);
        let mut positions = Vec::with_capacity(params.blocks as usize);
        for _ in 0..params.blocks {
            let (t, pos) = systematic_block(params.m, &mut stream)?;
            parity.push(t);
            positions.push(pos);
        }
        Ok(Self {
            public: KemPublicKey {
                params,
                blocks: parity,
            },
            secret: KemSecretKey {
                params,
                seed,
                positions,
            },
        })
    }
}

/// Draws column orders until the leading `m x m` block is invertible, then returns
/// `T` and the value → position table of the systematic matrix.
fn systematic_block(m: u32, rng: &mut DeterministicRandom) -> Result<(Vec<u32>, Vec<u32>), KemError> {
    let n = (1u32 << m) - 1;
    for _ in 0..MAX_REDRAWS {
        let mut columns: Vec<u32> = (1..=n).collect();
        for i in (1..columns.len()).rev() {
            let j = uniform_below(rng, i as u32 + 1)? as usize;
            columns.swap(i, j);
        }
        let Some(a) = invert(m, &columns[..m as usize]) else {
            continue;
        };
        let mut positions = vec![u32::MAX; 1 << m];
        let mut t = Vec::with_capacity((n - m) as usize);
        for (j, &h) in columns.iter().enumerate() {
            let c = mat_vec(&a, h);
            positions[c as usize] = j as u32;
            if j >= m as usize {
                t.push(c);
            }
        }
        return Ok((t, positions));
    }
    Err(KemError::Internal(format!(
        "no invertible leading block after {MAX_REDRAWS} redraws"
    )))
}

/// `A * v` over GF(2); `rows[r]` holds row `r` in the same bit convention as vectors.
fn mat_vec(rows: &[u32], v: u32) -> u32 {
    let m = rows.len() as u32;
    rows.iter()
        .enumerate()
        .fold(0, |acc, (r, row)| acc | (((row & v).count_ones() & 1) << (m - 1 - r as u32)))
}

/// Inverse (as rows) of the `m x m` matrix whose columns are `cols`, or `None` if singular.
fn invert(m: u32, cols: &[u32]) -> Option<Vec<u32>> {
    let m = m as usize;
    let bit = |i: usize| 1u32 << (m - 1 - i);
    // rows[r] = row r of B, inv[r] starts as row r of I
    let mut rows: Vec<u32> = (0..m)
        .map(|r| {
            cols.iter()
                .enumerate()
                .filter(|(_, &c)| c & bit(r) != 0)
                .fold(0, |acc, (c, _)| acc | bit(c))
        })
        .collect();
    let mut inv: Vec<u32> = (0..m).map(bit).collect();
    for col in 0..m {
        let pivot = (col..m).find(|&r| rows[r] & bit(col) != 0)?;
        rows.swap(col, pivot);
        inv.swap(col, pivot);
        for r in 0..m {
            if r != col && rows[r] & bit(col) != 0 {
                rows[r] ^= rows[col];
                inv[r] ^= inv[col];
            }
        }
    }
    Some(inv)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KemCiphertext {
    pub syndromes: Vec<u32>,
}

impl KemCiphertext {
    /// `b` syndromes of `m` bits each, packed MSB-first, zero-padded.
    pub fn to_bytes(&self, params: &KemParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(params.ciphertext_len());
        let mut bits = BitWriter::new(&mut out);
        for &s in &self.syndromes {
            for i in (0..params.m).rev() {
                bits.push((s >> i) & 1 == 1).expect("vec write");
            }
        }
        bits.finish().expect("vec write");
        out
    }

    pub fn from_bytes(params: &KemParams, bytes: &[u8]) -> Result<Self, KemError> {
        let mut bits = BitReader::new(bytes, params.ciphertext_len());
        let mut syndromes = Vec::with_capacity(params.blocks as usize);
        for _ in 0..params.blocks {
            let mut s = 0u32;
            for _ in 0..params.m {
                s = (s << 1) | bits.next()? as u32;
            }
            syndromes.push(s);
        }
        bits.finish()?;
        Ok(Self { syndromes })
    }
}

fn shared_secret(params: &KemParams, positions: &[u32], ct: &KemCiphertext) -> [u8; SHARED_SECRET_LEN] {
    let pos_bytes: Vec<u8> = positions.iter().flat_map(|p| p.to_be_bytes()).collect();
    let ct_bytes = ct.to_bytes(params);
    let digest = hash_parts(HashId::H256, &[b"kem-ss", &pos_bytes, &ct_bytes]);
    digest.try_into().expect("H256 output")
}

pub fn encapsulate<R: RandomSource + ?Sized>(
    pk: &KemPublicKey,
    rng: &mut R,
) -> Result<(KemCiphertext, [u8; SHARED_SECRET_LEN]), KemError> {
    let params = pk.params;
    let mut positions = Vec::with_capacity(params.blocks as usize);
    let mut syndromes = Vec::with_capacity(params.blocks as usize);
    for block in 0..params.blocks as usize {
        let j = uniform_below(rng, params.n())?;
        positions.push(j);
        syndromes.push(pk.column(block, j));
    }
    let ct = KemCiphertext { syndromes };
    let ss = shared_secret(&params, &positions, &ct);
    positions.zeroize();
    Ok((ct, ss))
}

pub fn decapsulate(sk: &KemSecretKey, ct: &KemCiphertext) -> Result<[u8; SHARED_SECRET_LEN], KemError> {
    let params = sk.params;
    if ct.syndromes.len() != params.blocks as usize {
        return Err(KemError::InvalidCiphertext(format!(
            "expected {} syndromes, got {}",
            params.blocks,
            ct.syndromes.len()
        )));
    }
    let mut positions = Vec::with_capacity(params.blocks as usize);
    for (block, &s) in ct.syndromes.iter().enumerate() {
        let pos = sk.positions[block].get(s as usize).copied().unwrap_or(u32::MAX);
        if s == 0 || pos == u32::MAX {
            return Err(KemError::InvalidCiphertext(format!(
                "block {block} syndrome {s:#x} maps to no column"
            )));
        }
        positions.push(pos);
    }
    let ss = shared_secret(&params, &positions, ct);
    positions.zeroize();
    Ok(ss)
}

struct BitWriter<W: Write> {
    out: W,
    buf: Vec<u8>,
    acc: u8,
    filled: u8,
}

impl<W: Write> BitWriter<W> {
    fn new(out: W) -> Self {
        Self {
            out,
            buf: Vec::with_capacity(STREAM_CHUNK),
            acc: 0,
            filled: 0,
        }
    }

    fn push(&mut self, bit: bool) -> io::Result<()> {
        self.acc = (self.acc << 1) | bit as u8;
        self.filled += 1;
        if self.filled == 8 {
            self.buf.push(self.acc);
            self.acc = 0;
            self.filled = 0;
            if self.buf.len() == STREAM_CHUNK {
                self.out.write_all(&self.buf)?;
                self.buf.clear();
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(), KemError> {
        if self.filled > 0 {
            self.buf.push(self.acc << (8 - self.filled));
        }
        self.out.write_all(&self.buf)?;
        self.out.flush()?;
        Ok(())
    }
}

struct BitReader<R: Read> {
    input: R,
    buf: Vec<u8>,
    pos: usize,
    consumed: usize,
    expected: usize,
    bit: u8,
}

impl<R: Read> BitReader<R> {
    fn new(input: R, expected: usize) -> Self {
        Self {
            input,
            buf: Vec::new(),
            pos: 0,
            consumed: 0,
            expected,
            bit: 0,
        }
    }

    fn offset(&self) -> usize {
        self.consumed + self.pos
    }

    fn refill(&mut self) -> Result<(), KemError> {
        self.consumed += self.buf.len();
        self.pos = 0;
        let want = STREAM_CHUNK.min(self.expected - self.consumed);
        self.buf.resize(want, 0);
        let mut got = 0;
        while got < want {
            match self.input.read(&mut self.buf[got..]) {
                Ok(0) => break,
                Ok(k) => got += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.buf.truncate(got);
        if got == 0 {
            return Err(MalformedEncoding::new(
                self.consumed,
                format!("truncated: expected {} bytes, got {}", self.expected, self.consumed),
            )
            .into());
        }
        Ok(())
    }

    fn next(&mut self) -> Result<bool, KemError> {
        if self.pos == self.buf.len() {
            self.refill()?;
        }
        let v = (self.buf[self.pos] >> (7 - self.bit)) & 1 == 1;
        self.bit += 1;
        if self.bit == 8 {
            self.bit = 0;
            self.pos += 1;
        }
        Ok(v)
    }

    /// Checks zero padding in the last partial byte and that no bytes follow.
    fn finish(mut self) -> Result<(), KemError> {
        if self.bit != 0 {
            let rest = self.buf[self.pos] & (0xff >> self.bit);
            if rest != 0 {
                return Err(MalformedEncoding::new(self.offset(), "nonzero padding bits").into());
            }
            self.pos += 1;
        }
        if self.offset() != self.expected {
            return Err(MalformedEncoding::new(self.offset(), "truncated input").into());
        }
        let mut probe = [0u8; 1];
        loop {
            match self.input.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(MalformedEncoding::new(self.expected, "trailing bytes after encoding").into())
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}
