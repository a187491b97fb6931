//! Seedable randomness with named, replayable streams.
//!
//! Every random decision in the simulator draws from a [`ChaCha12Rng`] stream
//! derived from the experiment seed plus a stream tag and the coordinates that
//! identify the consumer (round, agent id, ...). Streams are independent of
//! scheduling order, so evaluating agents in parallel or sequentially yields
//! the same sequences.
//!
//! Normal variates use the Box-Muller transform (cosine branch): each variate
//! consumes exactly two 53-bit uniforms, `z = sqrt(-2 ln u1) * cos(2 pi u2)`
//! with `u1` in (0, 1]. This keeps noise sequences reproducible across
//! platforms at the draw level.

#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream tag: global model initialization.
pub const STREAM_INIT: u64 = 0x01;
/// Stream tag: per-round cohort sampling.
pub const STREAM_COHORT: u64 = 0x02;
/// Stream tag: per-(round, agent) local batch sampling.
pub const STREAM_BATCH: u64 = 0x03;
/// Stream tag: per-(round, agent) Gaussian noise.
pub const STREAM_NOISE: u64 = 0x04;
/// Stream tag: dataset synthesis.
pub const STREAM_DATA: u64 = 0x05;
/// Stream tag: partitioning across agents.
pub const STREAM_PARTITION: u64 = 0x06;

/// One step of the SplitMix64 sequence; used only to mix seeds.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha12 stream from a root seed and a path of
/// identifying parts, e.g. `[STREAM_NOISE, round, agent_id]`.
pub fn substream(seed: u64, parts: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    let mut mixed = splitmix64(&mut state);
    for &part in parts {
        state ^= part.wrapping_mul(0xa076_1d64_78bd_642f);
        mixed ^= splitmix64(&mut state);
    }
    ChaCha12Rng::seed_from_u64(mixed)
}

/// Uniform draw in [0, 1) with 53 bits of precision.
pub fn next_f64(rng: &mut ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform draw in (0, 1]; safe as a logarithm argument.
fn next_f64_open(rng: &mut ChaCha12Rng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// One standard normal variate via Box-Muller (cosine branch).
pub fn next_standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1 = next_f64_open(rng);
    let u2 = next_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

/// Uniform index in [0, n) by rejection on the top multiple of n.
pub fn next_index(rng: &mut ChaCha12Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}

/// Gamma(shape, 1) variate via Marsaglia-Tsang squeeze, with the standard
/// `U^(1/shape)` boost for shape < 1.
pub fn next_gamma(rng: &mut ChaCha12Rng, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boost = next_f64_open(rng).powf(1.0 / shape);
        return next_gamma(rng, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let x = next_standard_normal(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = next_f64_open(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

/// Fisher-Yates shuffle driven by [`next_index`].
pub fn shuffle<T>(rng: &mut ChaCha12Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = next_index(rng, i + 1);
        items.swap(i, j);
    }
}
