//! Counter-based deterministic RNG.
//!
//! All stochastic outputs in this crate are pure functions of a u64 seed.
//! Every draw is `splitmix64(seed, counter)` with an incrementing counter,
//! so a given (seed, draw index) pair yields the same value on every
//! platform and run. Substreams are derived by hashing a label into the
//! seed, which keeps independent consumers from sharing draws.

/// splitmix64 output function applied to `seed + index` (wrapping).
#[inline]
pub fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream of uniforms/normals addressed by (seed, counter).
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { seed, counter: 0 }
    }

    /// Independent child stream; `label` picks the substream.
    pub fn derive(&self, label: u64) -> Self {
        // Offset constant separates a child's stream from the parent's even
        // for label 0.
        let child = splitmix64(self.seed ^ 0xA076_1D64_78BD_642F, label);
        CounterRng::new(child)
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let v = splitmix64(self.seed, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1): top 53 bits scaled by 2^-53.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform() * (hi - lo)
    }

    /// Uniform in [-1, 1).
    #[inline]
    pub fn uniform_signed(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per
    /// call; the second Box-Muller output is discarded so the draw count
    /// per normal is fixed.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        // Guard the log: uniform() can return exactly 0.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Number of draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.counter
    }
}
