//! Reproducible random streams.
//!
//! Every stream is a ChaCha generator keyed by a master seed plus a list of
//! tags (replica index, epsilon index, component, ...). Two different tag
//! lists give statistically independent streams, so replicas never share RNG
//! state and can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type StreamRng = ChaCha12Rng;

/// Stream tags used across the crate so that no two consumers collide.
pub mod tag {
    pub const FBM: u64 = 0x0066_626d;
    pub const BM: u64 = 0x0062_6d00;
    pub const FROZEN: u64 = 0x0066_727a;
    pub const FBAR: u64 = 0x0066_6261;
    pub const PROBE: u64 = 0x7072_6f62;
    pub const CONVERGE: u64 = 0x636f_6e76;
    pub const KHAS: u64 = 0x6b68_6173;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One standard normal draw converted to `T`.
pub fn normal<T: Real>(rng: &mut StreamRng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// Mixes a seed and tags into a single 64-bit key.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        acc ^= splitmix64(&mut state).rotate_left(17);
        state = state.wrapping_add(acc);
    }
    acc ^ splitmix64(&mut state)
}

/// Independent generator for `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    StreamRng::from_seed(key)
}
