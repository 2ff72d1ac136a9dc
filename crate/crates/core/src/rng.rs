//! Seed derivation for reproducible, parallel random streams.
//!
//! Every random draw in a replication comes from a ChaCha stream whose seed is
//! a hash of `(master seed, stream tag, replication index, item index)`. The
//! same unit therefore receives the same values regardless of thread count or
//! population size, so a population of size `n` is a prefix of any larger
//! population generated from the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Population = 1,
    SampleA = 2,
    SampleB = 3,
    Clerical = 4,
    Estimation = 5,
    Synthetic = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the master seed with an arbitrary key path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(master: u64, tag: Stream, rep: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, &[tag as u64, rep, index]))
}
