//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Independent
//! sub-streams (per graph, per epoch, per sample) are obtained by mixing the
//! base seed with stream indices, so parallel workers never share state and
//! results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a base seed with a path of stream indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = mix(base ^ 0x9E37_79B9_7F4A_7C15);
    for &s in stream {
        h = mix(h ^ mix(s.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
