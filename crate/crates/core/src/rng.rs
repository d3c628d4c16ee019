//! Portable seeded randomness.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`], whose output
//! stream is fixed by its algorithm and therefore identical on every platform.
//! A single master seed fans out into independent child seeds with
//! [`derive_seed`]:
//!
//! ```text
//! child = splitmix64(splitmix64(master) ^ fnv1a64(purpose) ^ splitmix64(index + 1))
//! ```
//!
//! `purpose` is a short ASCII tag naming what the stream is used for
//! (`"split"`, `"shots"`, `"cgan"`, ...) and `index` separates repeated uses
//! of the same purpose (class id, run index). Normal variates use
//! `rand_distr::StandardNormal` (ziggurat) on top of that stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// One step of the SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives the child seed for `purpose`/`index` from `master`.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a64(purpose) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng_from_seed(derive_seed(master, purpose, index))`.
pub fn child_rng(master: u64, purpose: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, purpose, index))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
