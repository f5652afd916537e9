//! Deterministic RNG stream derivation.
//!
//! Every random choice in a run is drawn from a stream derived from the
//! master seed and a purpose label, so results do not depend on execution
//! order or concurrency level. Sweep cells additionally mix their grid
//! coordinates into the seed, which makes cell results independent of the
//! sweep layout.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; stable across platforms and releases.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into a single seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x517cc1b727220a95u64;
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// FNV-1a over a label, so streams can be named instead of numbered.
pub fn label_hash(label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A dedicated RNG stream for `(master, label)`.
pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[master, label_hash(label)]))
}

/// Seed for one sweep cell, mixing the grid coordinates so that results are
/// invariant to sweep ordering.
pub fn cell_seed(
    master: u64,
    latent_dim: usize,
    power_watts: f64,
    period_s: f64,
    seed_index: u64,
) -> u64 {
    mix(&[
        master,
        latent_dim as u64,
        power_watts.to_bits(),
        period_s.to_bits(),
        seed_index,
    ])
}
