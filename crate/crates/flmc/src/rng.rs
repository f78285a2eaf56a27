//! Deterministic random-stream derivation.
//!
//! One 64-bit master seed fans out into named substreams per replication.
//! Every consumer (data generation, chain initialization, quantizer draws,
//! channel noise, privacy Monte Carlo) owns its own stream, so replications
//! can run concurrently and results do not depend on scheduling.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// Named substreams of an experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic dataset generation.
    Data = 0,
    /// Chain initialization (draw of the starting parameter vector).
    Init = 1,
    /// Stochastic quantizer decisions.
    Quantizer = 2,
    /// Additive channel noise at the server.
    ChannelNoise = 3,
    /// Privacy-loss Monte Carlo draws.
    PrivacyMc = 4,
    /// Frozen noise used by the power solver (common random numbers).
    SolverMc = 5,
}

/// SplitMix64 finalizer; full-period bijective mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the ChaCha key for (master seed, replication, stream, word).
fn key_word(master: u64, replication: u64, stream: u64, word: u64) -> u64 {
    mix(mix(mix(mix(master) ^ replication) ^ stream) ^ word)
}

/// Creates the named substream for one replication of an experiment.
///
/// The mapping is pure: identical `(master, replication, stream)` triples
/// always yield bit-identical generators, on every platform.
pub fn substream(master: u64, replication: u64, stream: Stream) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    for w in 0..4u64 {
        let v = key_word(master, replication, stream as u64, w);
        key[(w as usize) * 8..(w as usize + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
