//! Deterministic derivation of per-stage seeds from one master seed.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stage, independent of the order stages run in.
pub fn derive(master: u64, stage: &str) -> u64 {
    stage
        .bytes()
        .fold(mix64(master), |acc, b| mix64(acc ^ u64::from(b)))
}

/// Seed for the `index`-th item (fold, restart, ...) of a stage.
pub fn derive_indexed(master: u64, stage: &str, index: u64) -> u64 {
    mix64(derive(master, stage) ^ mix64(index))
}
