//! Seed derivation and substream management.
//!
//! Every stochastic component draws from a ChaCha8 stream whose seed is
//! derived from a root seed plus a role tag, so sampling one component never
//! perturbs another (layer sampling is order-independent, sweep cells own
//! disjoint streams).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mix a root seed with a role tag and an index into a fresh 64-bit seed.
pub fn derive_seed(root: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ tag.rotate_left(17)).wrapping_add(index))
}

/// Stream for sampling the parameters of one network layer.
pub fn layer_stream(net_seed: u64, layer: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(net_seed, 0x4c41_5945, layer as u64))
}

/// Stream for one Monte-Carlo replicate.
pub fn replicate_stream(root: u64, replicate: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, 0x5245_504c, replicate as u64))
}

/// Seed for the network of one replicate (distinct from its data stream).
pub fn replicate_net_seed(root: u64, replicate: usize) -> u64 {
    derive_seed(root, 0x4e45_5453, replicate as u64)
}

/// Stream for data synthesis.
pub fn data_stream(root: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, 0x4441_5441, 0))
}

/// Seed for one sweep cell, keyed by grid coordinates and restart index.
pub fn cell_seed(root: u64, xi: usize, yi: usize, restart: usize) -> u64 {
    derive_seed(
        derive_seed(root, 0x4345_4c4c, (xi as u64) << 32 | yi as u64),
        0x5253_5452,
        restart as u64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derived_seeds_are_deterministic_and_distinct() {
        let a = derive_seed(7, 1, 0);
        assert_eq!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(7, 1, 1));
        assert_ne!(a, derive_seed(7, 2, 0));
        assert_ne!(a, derive_seed(8, 1, 0));
    }

    #[test]
    fn layer_streams_are_order_independent() {
        let mut early = layer_stream(42, 3);
        let first = early.next_u64();
        // drawing from other layers first must not change layer 3's stream
        let mut other = layer_stream(42, 0);
        other.next_u64();
        let mut again = layer_stream(42, 3);
        assert_eq!(first, again.next_u64());
    }
}
