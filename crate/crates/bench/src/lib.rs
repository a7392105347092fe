//! Shared inputs for the benchmarks.

use hat_core::model::{init_params, HatConfig, ParamSet};

/// Deterministic pseudo-random values in [-1, 1).
pub fn values(n: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect()
}

pub fn micro_model() -> ParamSet<f32> {
    init_params(&HatConfig::micro(), 7)
}

/// Mixed-script text of roughly `n` bytes.
pub fn text(n: usize) -> String {
    const BASE: &str = "The quick brown fox, 3.14 times faster: naïve café über Straße! CamelCaseWords and snake_case. ";
    BASE.chars().cycle().scan(0, |len, c| {
        *len += c.len_utf8();
        (*len <= n).then_some(c)
    }).collect()
}
