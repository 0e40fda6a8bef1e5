//! Key derivation for all randomness in the crate.
//!
//! A single root seed is expanded into independent streams. Each stream is
//! identified by a component name and an index:
//!
//! ```text
//! key    = splitmix64(root ^ fnv1a64(component))
//! stream = ChaCha8(seed = key, stream id = index)
//! ```
//!
//! ChaCha is counter based, so stream `i` can be produced without touching
//! streams `0..i`. Mask `k` of a run is therefore identical whether masks are
//! generated sequentially, in parallel, or one at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit key of a named component from the root seed.
pub fn derive_key(root: u64, component: &str) -> u64 {
    splitmix64(root ^ fnv1a64(component.as_bytes()))
}

/// Derives a sub-seed, e.g. the weight seed of a per-trial embedder.
pub fn derive_seed(root: u64, component: &str, index: u64) -> u64 {
    splitmix64(derive_key(root, component) ^ splitmix64(index))
}

/// Random stream `index` of `component` under `root`.
pub fn stream(root: u64, component: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_key(root, component));
    rng.set_stream(index);
    rng
}
