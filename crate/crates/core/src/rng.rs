//! Counter-based random stream derivation.
//!
//! Every random draw in a training or evaluation step comes from a stream
//! addressed by `(seed, step, particle, purpose)`. Two estimators that ask for
//! the same address see the same numbers regardless of how many draws other
//! streams consumed, which is what makes the collapse identities bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for within one particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    MixingAnchor = 2,
    BranchNoise = 3,
    ExtraHidden = 4,
    Evaluation = 5,
    Simulation = 6,
    Init = 7,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Address of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub step: u64,
    pub particle: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, step: u64, particle: u64, purpose: Purpose) -> Self {
        StreamKey {
            seed,
            step,
            particle,
            purpose,
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ self.step);
        h = splitmix64(h ^ self.particle.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        h = splitmix64(h ^ (self.purpose as u64));
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&splitmix64(h.wrapping_add(i as u64)).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Streams for one particle of one step.
#[derive(Debug, Clone, Copy)]
pub struct ParticleStreams {
    pub seed: u64,
    pub step: u64,
    pub particle: u64,
}

impl ParticleStreams {
    pub fn new(seed: u64, step: u64, particle: u64) -> Self {
        ParticleStreams {
            seed,
            step,
            particle,
        }
    }

    pub fn rng(&self, purpose: Purpose) -> StreamRng {
        StreamKey::new(self.seed, self.step, self.particle, purpose).rng()
    }
}
