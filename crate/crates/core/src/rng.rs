//! Seeded random sub-streams.
//!
//! Every Monte Carlo trial draws from ChaCha8 streams keyed by
//! `(seed, trial)` and separated by [`Stream`], so a trial's randomness does
//! not depend on which worker runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes a trial draws randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Mismatch = 1,
    Waveforms = 2,
    Noise = 3,
    Auxiliary = 4,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scenario-level seed from which per-trial streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSource {
    seed: u64,
}

impl SeedSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, trial: u64, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(trial)));
        rng.set_stream(stream as u64);
        rng
    }
}
