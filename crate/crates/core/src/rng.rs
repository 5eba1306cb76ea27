//! Counter-based random streams.
//!
//! Every random quantity is addressed by a key: an experiment seed, a domain
//! tag, and an integer index (trajectory id, environment index, run id). The
//! ChaCha stream id carries the index, so draws are reproducible and
//! independent of evaluation order or thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
pub mod domain {
    pub const ENV_PARAMS: u64 = 0x9e37_79b9_7f4a_7c15;
    pub const ENV_DRIVER: u64 = 0xc2b2_ae3d_27d4_eb4f;
    pub const TRAJECTORY: u64 = 0x1656_67b1_9e37_79f9;
    pub const ENV_DRAW: u64 = 0x85eb_ca77_c2b2_ae63;
    pub const COUPLING: u64 = 0x27d4_eb2f_1656_67c5;
    pub const JITTER: u64 = 0x94d0_49bb_1331_11eb;
    pub const SAMPLING: u64 = 0xbf58_476d_1ce4_e5b9;
}

/// Bijection `Z → N` used to turn signed indices into stream ids.
pub fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

/// Independent generator for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(index);
    rng
}

/// Uniform `[0, 1)` value at word position `slot` of the keyed stream.
pub fn keyed_uniform(seed: u64, domain: u64, index: u64, slot: u32) -> f64 {
    let mut rng = stream(seed, domain, index);
    rng.set_word_pos(2 * slot as u128);
    rng.gen::<f64>()
}

/// Derived 64-bit seed, e.g. a fresh environment seed for draw `index`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    stream(seed, domain, index).next_u64()
}

/// Samples an index from a (not necessarily normalized) weight vector with a
/// single uniform; returns `None` if the total weight is not positive.
pub fn sample_index(weights: &[f64], u: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if target < acc {
            return Some(i);
        }
    }
    last
}
