//! Merkle-tree hash-based signatures over Winternitz one-time keys.
//!
//! A key pair is a 32-byte master seed. Every leaf `i` owns `len` WOTS chains whose
//! starting values are `prf(seed, "hbs wots sk", i || chain)`; the chain ends are hashed
//! into a leaf digest and the leaves into a binary tree whose root is the public key.
//!
//! Two leaf-selection modes exist. [`LeafMode::Stateful`] walks a counter and must never
//! hand out an index twice. [`LeafMode::Stateless`] picks the leaf from the randomized
//! message digest; at the tree heights supported here leaf collisions are likely, so it
//! only emulates the stateless interface and gives no one-time guarantee.
//!
//! Chain, leaf and node hashing is H256 truncated to `n` bytes, domain separated by a
//! one-byte tag and the position being computed:
//!
//! | tag | input                                              |
//! |-----|----------------------------------------------------|
//! | 0   | leaf(4) chain(2) step(2) value: one chain step     |
//! | 1   | leaf(4) chain ends: leaf digest                    |
//! | 2   | level(1) index(4) left right: tree node            |

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroize;

use crate::codec::{MalformedEncoding, Reader};
use crate::primitives::{hash_parts, prf, CryptoError, HashId, RandomSource};

pub const SEED_LEN: usize = 32;
pub const RANDOMIZER_LEN: usize = 32;
const MAX_NODE: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HbsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown algorithm id {0:?}")]
    UnknownAlgorithm(String),
    #[error("key exhausted: all {0} leaves used")]
    KeyExhausted(u64),
    #[error("leaf index {index} out of range for {leaves} leaves")]
    LeafOutOfRange { index: u64, leaves: u64 },
    #[error(transparent)]
    Malformed(#[from] MalformedEncoding),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeafMode {
    Stateful,
    Stateless,
}

impl LeafMode {
    fn suffix(self) -> &'static str {
        match self {
            LeafMode::Stateful => "S",
            LeafMode::Stateless => "SL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HbsParams {
    /// Message-digest hash. Chains, tree nodes and secret derivation always use H256.
    pub hash: HashId,
    /// Bytes per chain value and tree node.
    pub n: usize,
    /// Winternitz parameter.
    pub w: u32,
    /// Tree height.
    pub height: u32,
    pub mode: LeafMode,
}

impl HbsParams {
    /// `n = 16` digests messages with H256, `n = 32` with H512. Chain and tree hashing
    /// is H256 truncated to `n` bytes in both cases.
    pub fn new(n: usize, w: u32, height: u32, mode: LeafMode) -> Result<Self, HbsError> {
        let hash = match n {
            16 => HashId::H256,
            32 => HashId::H512,
            _ => return Err(HbsError::InvalidParams(format!("n must be 16 or 32, got {n}"))),
        };
        if !matches!(w, 2 | 4 | 16 | 256) {
            return Err(HbsError::InvalidParams(format!(
                "w must be one of 2, 4, 16, 256, got {w}"
            )));
        }
        if !(4..=16).contains(&height) {
            return Err(HbsError::InvalidParams(format!(
                "height must be within 4..=16, got {height}"
            )));
        }
        Ok(Self {
            hash,
            n,
            w,
            height,
            mode,
        })
    }

    /// Parses `SPX-TOY-{n}-{w}-{h}-{S|SL}`.
    pub fn from_algorithm_id(id: &str) -> Result<Self, HbsError> {
        let unknown = || HbsError::UnknownAlgorithm(id.to_string());
        let rest = id.strip_prefix("SPX-TOY-").ok_or_else(unknown)?;
        let parts: Vec<&str> = rest.split('-').collect();
        let [n, w, h, mode] = parts.as_slice() else {
            return Err(unknown());
        };
        let num = |s: &str| -> Result<u32, HbsError> {
            if s.is_empty() || s.starts_with('0') || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(unknown());
            }
            s.parse().map_err(|_| unknown())
        };
        let mode = match *mode {
            "S" => LeafMode::Stateful,
            "SL" => LeafMode::Stateless,
            _ => return Err(unknown()),
        };
        Self::new(num(n)? as usize, num(w)?, num(h)?, mode)
    }

    pub fn algorithm_id(&self) -> String {
        format!(
            "SPX-TOY-{}-{}-{}-{}",
            self.n,
            self.w,
            self.height,
            self.mode.suffix()
        )
    }

    pub fn log_w(&self) -> u32 {
        self.w.trailing_zeros()
    }

    /// Message digits: `ceil(8n / log2 w)`.
    pub fn len1(&self) -> usize {
        (8 * self.n).div_ceil(self.log_w() as usize)
    }

    /// Checksum digits: `floor(log2(len1 * (w - 1)) / log2 w) + 1`.
    pub fn len2(&self) -> usize {
        let max_checksum = (self.len1() as u64) * (self.w as u64 - 1);
        let log2 = 63 - max_checksum.leading_zeros();
        (log2 / self.log_w()) as usize + 1
    }

    pub fn chains(&self) -> usize {
        self.len1() + self.len2()
    }

    pub fn leaf_count(&self) -> u64 {
        1u64 << self.height
    }

    /// `4 + 32 + len * n + h * n`.
    pub fn signature_len(&self) -> usize {
        4 + RANDOMIZER_LEN + self.chains() * self.n + self.height as usize * self.n
    }

    pub fn public_key_len(&self) -> usize {
        self.n
    }

    fn node(&self, parts: &[&[u8]]) -> Node {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        let mut out = [0u8; MAX_NODE];
        out[..self.n].copy_from_slice(&h.finalize()[..self.n]);
        Node(out)
    }

    fn chain_step(&self, leaf: u32, chain: u16, step: u16, value: &Node) -> Node {
        self.node(&[
            &[0],
            &leaf.to_be_bytes(),
            &chain.to_be_bytes(),
            &step.to_be_bytes(),
            value.bytes(self.n),
        ])
    }

    /// Advances `value` from position `from` through `steps` chain steps.
    fn chain(&self, leaf: u32, chain: u16, from: u32, steps: u32, value: Node) -> Node {
        (from..from + steps).fold(value, |v, s| self.chain_step(leaf, chain, s as u16, &v))
    }

    fn leaf_from_ends(&self, leaf: u32, ends: &[Node]) -> Node {
        let mut parts: Vec<&[u8]> = Vec::with_capacity(ends.len() + 2);
        let leaf_be = leaf.to_be_bytes();
        parts.push(&[1]);
        parts.push(&leaf_be);
        parts.extend(ends.iter().map(|e| e.bytes(self.n)));
        self.node(&parts)
    }

    fn parent(&self, level: u32, index: u64, left: &Node, right: &Node) -> Node {
        self.node(&[
            &[2],
            &[level as u8],
            &(index as u32).to_be_bytes(),
            left.bytes(self.n),
            right.bytes(self.n),
        ])
    }

    /// Full-length message digest `hash(randomizer || root || msg)`.
    fn message_digest(&self, randomizer: &[u8], root: &[u8], msg: &[u8]) -> Vec<u8> {
        hash_parts(self.hash, &[randomizer, root, msg])
    }

    /// Base-w message digits followed by the base-w checksum `sum(w - 1 - d)`.
    pub fn digits(&self, digest: &[u8]) -> Vec<u32> {
        let log_w = self.log_w();
        let mask = self.w - 1;
        let mut out = Vec::with_capacity(self.chains());
        for &byte in &digest[..self.n] {
            let mut shift = 8;
            while shift > 0 {
                shift -= log_w;
                out.push((byte as u32 >> shift) & mask);
            }
        }
        debug_assert_eq!(out.len(), self.len1());
        let checksum: u64 = out.iter().map(|&d| (mask - d) as u64).sum();
        for i in (0..self.len2()).rev() {
            out.push(((checksum >> (log_w as usize * i)) as u32) & mask);
        }
        out
    }

    fn stateless_leaf(&self, digest: &[u8]) -> u32 {
        let top = u32::from_be_bytes([digest[0], digest[1], digest[2], digest[3]]);
        top >> (32 - self.height)
    }
}

impl fmt::Display for HbsParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.algorithm_id())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Node([u8; MAX_NODE]);

impl Node {
    fn bytes(&self, n: usize) -> &[u8] {
        &self.0[..n]
    }

    fn from_slice(s: &[u8]) -> Self {
        let mut out = [0u8; MAX_NODE];
        out[..s.len()].copy_from_slice(s);
        Node(out)
    }
}

/// Tree levels, leaves first. Derived from the seed; never serialized.
struct MerkleTree {
    levels: Vec<Vec<Node>>,
}

impl MerkleTree {
    fn build(params: &HbsParams, seed: &[u8; SEED_LEN]) -> Self {
        let leaves: Vec<Node> = (0..params.leaf_count() as u32)
            .into_par_iter()
            .map(|leaf| {
                let ends: Vec<Node> = (0..params.chains() as u16)
                    .map(|chain| {
                        let start = wots_secret(params, seed, leaf, chain);
                        params.chain(leaf, chain, 0, params.w - 1, start)
                    })
                    .collect();
                params.leaf_from_ends(leaf, &ends)
            })
            .collect();
        let mut levels = vec![leaves];
        for level in 1..=params.height {
            let below = &levels[level as usize - 1];
            let next: Vec<Node> = below
                .chunks_exact(2)
                .enumerate()
                .map(|(i, pair)| params.parent(level, i as u64, &pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        Self { levels }
    }

    fn root(&self) -> &Node {
        &self.levels.last().expect("non-empty")[0]
    }

    fn auth_path(&self, params: &HbsParams, leaf: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(params.height as usize * params.n);
        let mut idx = leaf as usize;
        for level in &self.levels[..params.height as usize] {
            out.extend_from_slice(level[idx ^ 1].bytes(params.n));
            idx >>= 1;
        }
        out
    }
}

fn wots_secret(params: &HbsParams, seed: &[u8; SEED_LEN], leaf: u32, chain: u16) -> Node {
    let mut ctx = [0u8; 6];
    ctx[..4].copy_from_slice(&leaf.to_be_bytes());
    ctx[4..].copy_from_slice(&chain.to_be_bytes());
    Node::from_slice(&prf(HashId::H256, seed, "hbs wots sk", &ctx, params.n))
}

/// Secret seed plus the derived tree. The seed is wiped on drop.
#[derive(Clone)]
pub struct HbsKeyPair {
    seed: [u8; SEED_LEN],
    params: HbsParams,
    next_leaf: u64,
    tree: Arc<MerkleTree>,
}

impl HbsKeyPair {
    pub fn generate<R: RandomSource + ?Sized>(params: HbsParams, rng: &mut R) -> Result<Self, HbsError> {
        let mut seed = [0u8; SEED_LEN];
        rng.fill(&mut seed)?;
        let kp = Self::from_seed(params, seed, 0);
        seed.zeroize();
        kp
    }

    /// Rebuilds the key from its seed. `next_leaf` is restored from persisted state.
    pub fn from_seed(params: HbsParams, seed: [u8; SEED_LEN], next_leaf: u64) -> Result<Self, HbsError> {
        if next_leaf > params.leaf_count() {
            return Err(HbsError::LeafOutOfRange {
                index: next_leaf,
                leaves: params.leaf_count(),
            });
        }
        let tree = Arc::new(MerkleTree::build(&params, &seed));
        Ok(Self {
            seed,
            params,
            next_leaf,
            tree,
        })
    }

    pub fn params(&self) -> &HbsParams {
        &self.params
    }

    pub fn seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }

    pub fn root(&self) -> &[u8] {
        self.tree.root().bytes(self.params.n)
    }

    pub fn public_key(&self) -> HbsPublicKey {
        HbsPublicKey {
            params: self.params,
            root: self.root().to_vec(),
        }
    }

    pub fn next_leaf(&self) -> u64 {
        self.next_leaf
    }

    pub fn remaining(&self) -> u64 {
        match self.params.mode {
            LeafMode::Stateful => self.params.leaf_count() - self.next_leaf,
            LeafMode::Stateless => u64::MAX,
        }
    }

    /// Signs with the next leaf (stateful) or a digest-selected leaf (stateless).
    ///
    /// In stateful mode the counter is advanced before the signature exists. Callers that
    /// persist state must do so before releasing the result; the keystore does this by
    /// reserving ranges and calling [`HbsKeyPair::sign_at`].
    pub fn sign<R: RandomSource + ?Sized>(&mut self, msg: &[u8], rng: &mut R) -> Result<HbsSignature, HbsError> {
        match self.params.mode {
            LeafMode::Stateful => {
                if self.next_leaf >= self.params.leaf_count() {
                    return Err(HbsError::KeyExhausted(self.params.leaf_count()));
                }
                let leaf = self.next_leaf as u32;
                self.next_leaf += 1;
                let mut randomizer = [0u8; RANDOMIZER_LEN];
                rng.fill(&mut randomizer)?;
                Ok(self.sign_leaf(leaf, randomizer, msg))
            }
            LeafMode::Stateless => {
                let mut randomizer = [0u8; RANDOMIZER_LEN];
                rng.fill(&mut randomizer)?;
                let digest = self.params.message_digest(&randomizer, self.root(), msg);
                let leaf = self.params.stateless_leaf(&digest);
                Ok(self.sign_leaf(leaf, randomizer, msg))
            }
        }
    }

    /// Signs with an explicitly chosen leaf of a stateful key. The caller owns the
    /// guarantee that `leaf` came from a persisted reservation and is used once.
    pub fn sign_at<R: RandomSource + ?Sized>(
        &self,
        leaf: u64,
        msg: &[u8],
        rng: &mut R,
    ) -> Result<HbsSignature, HbsError> {
        if self.params.mode != LeafMode::Stateful {
            return Err(HbsError::InvalidParams(
                "explicit leaf selection requires a stateful key".into(),
            ));
        }
        if leaf >= self.params.leaf_count() {
            return Err(HbsError::LeafOutOfRange {
                index: leaf,
                leaves: self.params.leaf_count(),
            });
        }
        let mut randomizer = [0u8; RANDOMIZER_LEN];
        rng.fill(&mut randomizer)?;
        Ok(self.sign_leaf(leaf as u32, randomizer, msg))
    }

    fn sign_leaf(&self, leaf: u32, randomizer: [u8; RANDOMIZER_LEN], msg: &[u8]) -> HbsSignature {
        let p = &self.params;
        let digest = p.message_digest(&randomizer, self.root(), msg);
        let mut wots = Vec::with_capacity(p.chains() * p.n);
        for (chain, &digit) in p.digits(&digest).iter().enumerate() {
            let start = wots_secret(p, &self.seed, leaf, chain as u16);
            wots.extend_from_slice(p.chain(leaf, chain as u16, 0, digit, start).bytes(p.n));
        }
        HbsSignature {
            leaf_index: leaf,
            randomizer,
            wots,
            auth_path: self.tree.auth_path(p, leaf),
        }
    }
}

impl fmt::Debug for HbsKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HbsKeyPair")
            .field("params", &self.params.algorithm_id())
            .field("next_leaf", &self.next_leaf)
            .finish_non_exhaustive()
    }
}

impl Drop for HbsKeyPair {
    fn drop(&mut self) {
        self.seed.zeroize();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HbsPublicKey {
    pub params: HbsParams,
    pub root: Vec<u8>,
}

impl HbsPublicKey {
    /// The encoding is the bare root; parameters travel in the algorithm id.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.root.clone()
    }

    pub fn from_bytes(params: HbsParams, bytes: &[u8]) -> Result<Self, HbsError> {
        let mut r = Reader::new(bytes);
        let root = r.take(params.n, "public root")?.to_vec();
        r.finish()?;
        Ok(Self { params, root })
    }

    pub fn verify(&self, msg: &[u8], sig: &HbsSignature) -> bool {
        verify(&self.root, &self.params, msg, sig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HbsSignature {
    pub leaf_index: u32,
    pub randomizer: [u8; RANDOMIZER_LEN],
    pub wots: Vec<u8>,
    pub auth_path: Vec<u8>,
}

impl HbsSignature {
    /// `leaf_index(4) || randomizer(32) || wots(len*n) || auth_path(h*n)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + RANDOMIZER_LEN + self.wots.len() + self.auth_path.len());
        out.extend_from_slice(&self.leaf_index.to_be_bytes());
        out.extend_from_slice(&self.randomizer);
        out.extend_from_slice(&self.wots);
        out.extend_from_slice(&self.auth_path);
        out
    }

    pub fn from_bytes(params: &HbsParams, bytes: &[u8]) -> Result<Self, HbsError> {
        let mut r = Reader::new(bytes);
        let leaf_index = r.u32("leaf index")?;
        let randomizer = r.array("randomizer")?;
        let wots = r.take(params.chains() * params.n, "wots signature")?.to_vec();
        let auth_path = r.take(params.height as usize * params.n, "auth path")?.to_vec();
        r.finish()?;
        Ok(Self {
            leaf_index,
            randomizer,
            wots,
            auth_path,
        })
    }

    fn well_formed(&self, params: &HbsParams) -> bool {
        self.wots.len() == params.chains() * params.n
            && self.auth_path.len() == params.height as usize * params.n
            && (self.leaf_index as u64) < params.leaf_count()
    }
}

/// Accepts iff the signature folds up to `root`. Malformed input rejects; nothing panics.
pub fn verify(root: &[u8], params: &HbsParams, msg: &[u8], sig: &HbsSignature) -> bool {
    if root.len() != params.n || !sig.well_formed(params) {
        return false;
    }
    let n = params.n;
    let digest = params.message_digest(&sig.randomizer, root, msg);
    if params.mode == LeafMode::Stateless && params.stateless_leaf(&digest) != sig.leaf_index {
        return false;
    }
    let leaf = sig.leaf_index;
    let ends: Vec<Node> = params
        .digits(&digest)
        .iter()
        .zip(sig.wots.chunks_exact(n))
        .enumerate()
        .map(|(chain, (&digit, value))| {
            params.chain(leaf, chain as u16, digit, params.w - 1 - digit, Node::from_slice(value))
        })
        .collect();
    let mut node = params.leaf_from_ends(leaf, &ends);
    let mut idx = leaf as u64;
    for (level, sibling) in sig.auth_path.chunks_exact(n).enumerate() {
        let sibling = Node::from_slice(sibling);
        node = if idx & 1 == 0 {
            params.parent(level as u32 + 1, idx >> 1, &node, &sibling)
        } else {
            params.parent(level as u32 + 1, idx >> 1, &sibling, &node)
        };
        idx >>= 1;
    }
    node.bytes(n) == root
}
