//! Deterministic seed derivation.
//!
//! Every randomized operation takes an explicit `u64` seed. Per-item streams
//! (one per trajectory, grid point, or sample) are derived from the master
//! seed with a splitmix64 step so that items are independent of each other
//! and of the iteration order.

/// Derives the seed for stream `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-level derivation for nested streams (e.g. grid point, then sample).
pub fn derive_seed2(master: u64, stream_a: u64, stream_b: u64) -> u64 {
    derive_seed(derive_seed(master, stream_a), stream_b)
}
