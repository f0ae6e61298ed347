//! Seed derivation.
//!
//! Every random decision in the workspace flows from explicit `u64` seeds.
//! Sub-streams (per teacher, per sample, per epoch, ...) are derived with a
//! splitmix64-style mix so that related streams are statistically
//! independent while remaining pure functions of `(base, stream)`.

/// Derive a child seed from a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
