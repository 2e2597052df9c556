//! Bit accounting for counter state.
//!
//! A register holding the value `v` is charged `bits_for(v)` bits, i.e.
//! the length of the binary representation of `v`, with `bits_for(0) = 0`.
//! Program constants and scratch registers are not charged.

/// ceil(log2(v + 1)): bits needed to write `v` in binary, 0 for 0.
pub fn bits_for(v: u64) -> u32 {
    64 - v.leading_zeros()
}

/// ceil(log2(n)) for n >= 1: width of a fixed register holding values in [0, n).
pub fn ceil_log2(n: u64) -> u32 {
    assert!(n >= 1, "ceil_log2 requires n >= 1");
    bits_for(n - 1)
}
