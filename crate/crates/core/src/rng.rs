//! Deterministic substream derivation.
//!
//! Every source of randomness in a run is a ChaCha stream derived from the
//! master seed, a domain tag, and (agent, round) coordinates. Draws are
//! therefore independent of call order, which is what makes twin runs and
//! the quantization on/off comparison replayable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomness domains. Each domain gets its own family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Initial values of theta and psi.
    Init,
    /// Quantizer dither variates.
    Quantizer,
    /// Data acquisition.
    Data,
    /// Audit perturbations (replacement data points and round choice).
    Perturb,
    /// Synthetic corpus generation.
    Corpus,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Init => 0x01,
            Domain::Quantizer => 0x02,
            Domain::Data => 0x03,
            Domain::Perturb => 0x04,
            Domain::Corpus => 0x05,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, words: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    acc
}

/// Stream for a (domain, agent) pair, consumed sequentially across rounds.
pub fn agent_stream(master: u64, domain: Domain, agent: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, &[domain.tag(), agent as u64]))
}

/// Stream for a (domain, agent, round) triple; fresh per call site.
pub fn round_stream(master: u64, domain: Domain, agent: usize, round: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, &[domain.tag(), agent as u64, round as u64]))
}
