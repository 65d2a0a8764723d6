//! Seed expansion. Every random stream in a run derives from one master
//! seed through splitmix64, so component seeds stay stable across versions.

/// One splitmix64 step on `state`.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`.
pub fn derive(master: u64, stream: u64) -> u64 {
    let mut s = master ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut s)
}

/// Well-known stream ids.
pub mod stream {
    pub const COARSEN: u64 = 1;
    pub const ASSIGN: u64 = 2;
}
