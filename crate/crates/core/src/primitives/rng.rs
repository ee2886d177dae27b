use rand::rngs::OsRng;
use rand::{SeedableRng, TryRngCore};
use rand_chacha::ChaCha20Rng;

use super::CryptoError;

/// Source of random bytes. Failure is always reported, never masked with zeros.
///
/// Handles are not shared: each thread or session owns its own source.
pub trait RandomSource: Send {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), CryptoError>;
}

impl<R: RandomSource + ?Sized> RandomSource for &mut R {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), CryptoError> {
        (**self).fill(dest)
    }
}

impl<R: RandomSource + ?Sized> RandomSource for Box<R> {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), CryptoError> {
        (**self).fill(dest)
    }
}

/// The operating system's CSPRNG.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemRandom;

impl RandomSource for SystemRandom {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), CryptoError> {
        OsRng
            .try_fill_bytes(dest)
            .map_err(|e| CryptoError::Entropy(e.to_string()))
    }
}

/// ChaCha20 stream from a fixed seed. Reproducible; for tests and stable reports only.
#[derive(Debug, Clone)]
pub struct DeterministicRandom(ChaCha20Rng);

impl DeterministicRandom {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self(ChaCha20Rng::from_seed(seed))
    }

    pub fn from_u64(seed: u64) -> Self {
        Self(ChaCha20Rng::seed_from_u64(seed))
    }
}

impl RandomSource for DeterministicRandom {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), CryptoError> {
        rand::RngCore::fill_bytes(&mut self.0, dest);
        Ok(())
    }
}

pub fn random_bytes<R: RandomSource + ?Sized>(rng: &mut R, n: usize) -> Result<Vec<u8>, CryptoError> {
    let mut out = vec![0u8; n];
    rng.fill(&mut out)?;
    Ok(out)
}

/// Uniform integer in `[0, bound)` by rejection sampling.
pub fn uniform_below<R: RandomSource + ?Sized>(rng: &mut R, bound: u32) -> Result<u32, CryptoError> {
    if bound == 0 {
        return Err(CryptoError::Parameter("uniform_below(0)".into()));
    }
    let zone = u32::MAX - (u32::MAX % bound);
    loop {
        let mut b = [0u8; 4];
        rng.fill(&mut b)?;
        let v = u32::from_be_bytes(b);
        if v < zone {
            return Ok(v % bound);
        }
    }
}
