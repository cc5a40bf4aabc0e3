//! Counter-based Gaussian generator.
//!
//! Every random quantity in the crate is a pure function of
//! `(seed, stream, index, draw)`, so regeneration is bit-exact, windows can
//! be shifted by reindexing alone, and parallel evaluation order never
//! matters. The mixer is the splitmix64 finalizer applied once per absorbed
//! word, which is the usual construction for reproducible Monte Carlo.

/// Stream tag for Wiener increments (one stream per mode).
pub const TAG_INCREMENT: u64 = 1;
/// Stream tag for stationary initial draws of the mode filters.
pub const TAG_OU_INIT: u64 = 2;
/// Stream tag for random coefficient fields (constant estimation).
pub const TAG_FIELD: u64 = 3;
/// Stream tag for stationary Monte Carlo draws (damping search).
pub const TAG_STATIONARY: u64 = 4;
/// Stream tag for ensemble member sampling.
pub const TAG_ENSEMBLE: u64 = 5;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Packs a tag and two sub-identifiers into one stream id.
/// Ranges: `tag < 2^8`, `a < 2^28`, `b < 2^28`; asserted in debug builds.
#[inline]
pub fn stream_id(tag: u64, a: u64, b: u64) -> u64 {
    debug_assert!(tag < (1 << 8) && a < (1 << 28) && b < (1 << 28));
    (tag << 56) | (a << 28) | b
}

/// Raw 64-bit output for a key. Each word is absorbed with an odd-constant
/// offset so that all-zero keys do not collapse to a fixed point.
#[inline]
pub fn raw(seed: u64, stream: u64, index: u64, draw: u64) -> u64 {
    let mut h = seed;
    h = mix(h.wrapping_add(GOLDEN));
    h ^= stream;
    h = mix(h.wrapping_add(GOLDEN));
    h ^= index;
    h = mix(h.wrapping_add(GOLDEN));
    h ^= draw;
    mix(h.wrapping_add(GOLDEN))
}

/// Uniform in the half-open interval (0, 1]; never returns 0 so it is safe
/// under a logarithm.
#[inline]
pub fn uniform_pos(seed: u64, stream: u64, index: u64, draw: u64) -> f64 {
    (((raw(seed, stream, index, draw) >> 11) as f64) + 1.0) * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform in [0, 1).
#[inline]
pub fn uniform(seed: u64, stream: u64, index: u64, draw: u64) -> f64 {
    ((raw(seed, stream, index, draw) >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw via Box-Muller; consumes draw slots `2*draw` and
/// `2*draw + 1` of the key's stream.
#[inline]
pub fn standard_normal(seed: u64, stream: u64, index: u64, draw: u64) -> f64 {
    let u1 = uniform_pos(seed, stream, index, 2 * draw);
    let u2 = uniform(seed, stream, index, 2 * draw + 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Signed grid index mapped to the key space (two's complement bit pattern).
#[inline]
pub fn signed_index(i: i64) -> u64 {
    i as u64
}

/// Sequential view over one stream for callers that just need a stateful
/// source (ensemble sampling, test fixtures). Draws are still pure functions
/// of the underlying key.
#[derive(Debug, Clone)]
pub struct KeyedStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl KeyedStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            counter: 0,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        let v = standard_normal(self.seed, self.stream, self.counter, 0);
        self.counter += 1;
        v
    }

    pub fn next_uniform(&mut self) -> f64 {
        let v = uniform(self.seed, self.stream, self.counter, 1);
        self.counter += 1;
        v
    }
}
