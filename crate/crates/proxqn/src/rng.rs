//! Seeded random number generation for the coordinate sampler and the
//! synthetic instance generators.
//!
//! The generator is SplitMix64: a 64-bit counter advanced by a fixed odd
//! increment, hashed through two multiply-xorshift rounds per draw. It is
//! trivially replayable from the seed alone, which is what the trace header
//! promises when it records `rng=splitmix64`.

/// SplitMix64 stream. The full generator state is one `u64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in {0, 1, ..., n-1}. Rejection sampling, so the
    /// distribution is exactly uniform and not just modulo-close.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Pair of independent standard normal draws (Box-Muller).
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let mut u1 = self.next_f64();
        while u1 <= 0.0 {
            u1 = self.next_f64();
        }
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        (r * a.cos(), r * a.sin())
    }

    pub fn next_normal(&mut self) -> f64 {
        self.next_normal_pair().0
    }
}

/// Algorithm identifier written into trace and report headers.
pub const RNG_ALGORITHM: &str = "splitmix64";
