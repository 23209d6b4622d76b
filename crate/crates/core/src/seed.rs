//! Counter-based seed derivation.
//!
//! Every stochastic component (environment, policy sampling, estimator
//! jitter, ...) draws from its own stream derived from a master seed, so a
//! change in how much randomness one component consumes never shifts
//! another component's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

/// Named per-component streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    AuxInit = 2,
    Env = 3,
    Policy = 4,
    Shuffle = 5,
    AuxObjective = 6,
    Analysis = 7,
    Jitter = 8,
    Evaluation = 9,
    TestEvaluation = 10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    pub master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn seed(&self, stream: Stream) -> u64 {
        derive_seed(self.master, stream as u64, 0)
    }

    pub fn rng(&self, stream: Stream) -> Rng {
        Rng::seed_from_u64(self.seed(stream))
    }
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_distinct_and_stable() {
        let s = SeedStreams::new(7);
        assert_ne!(s.seed(Stream::Env), s.seed(Stream::Policy));
        let a: u64 = s.rng(Stream::Env).random();
        let b: u64 = SeedStreams::new(7).rng(Stream::Env).random();
        assert_eq!(a, b);
    }

    #[test]
    fn derive_depends_on_every_argument() {
        let base = derive_seed(1, 2, 3);
        assert_ne!(base, derive_seed(0, 2, 3));
        assert_ne!(base, derive_seed(1, 0, 3));
        assert_ne!(base, derive_seed(1, 2, 0));
    }
}
