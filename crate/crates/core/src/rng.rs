//! Deterministic seed derivation.
//!
//! Every random stream in the workspace is a ChaCha8 generator seeded by a
//! stable integer mix of the root seed and a context tuple, so runs replay
//! bit-identically on any platform and under any scheduling order.

/// SplitMix64 finalization step.
fn split_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a context tuple into one 64-bit stream seed.
pub fn mix_seed(root: u64, context: &[u64]) -> u64 {
    let mut state = split_mix(root ^ 0x6c62_272e_07bb_0142);
    for &c in context {
        state = split_mix(state ^ split_mix(c));
    }
    state
}
