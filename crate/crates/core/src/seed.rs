//! Splittable seed derivation.
//!
//! Every random stream in a run is keyed by a path of integers (master seed,
//! sweep point, frame, trial, ...). Each component is folded in with the
//! SplitMix64 finalizer, so seeds do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `seed = mix(...mix(mix(master) ^ path[0]) ^ path[1] ...)`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &p| splitmix64(h ^ p))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
