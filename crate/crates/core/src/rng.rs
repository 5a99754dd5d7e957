//! Seeded, splittable RNG built on SplitMix64.
//!
//! Every consumer derives its own substream from `(seed, purpose, key...)`,
//! so the draw order of one component can never perturb another. SplitMix64
//! is counter-based (output i is a pure function of `state + i*GAMMA`),
//! which keeps streams stable across platforms and releases.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream purposes. Each gets a disjoint key space under the same run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Per-step random subset in non-divergent scoring.
    StepAward,
    /// Synthetic scenario structure (signal phases, offsets, answers).
    Scenario,
    /// Per-(path, step, layer) observation noise.
    PathNoise,
    /// Per-(path, step, layer) drift random walk.
    PathDrift,
    /// Validation-set construction.
    Validation,
    /// Test-side draws.
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::StepAward => 0x01,
            Purpose::Scenario => 0x02,
            Purpose::PathNoise => 0x03,
            Purpose::PathDrift => 0x04,
            Purpose::Validation => 0x05,
            Purpose::Test => 0x06,
        }
    }
}

/// A single substream. Cheap to construct; construct one per (purpose, key)
/// rather than threading a shared generator through call sites.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
    /// Spare Gaussian from Box-Muller.
    cached: Option<f64>,
}

impl Stream {
    /// Derive a stream from a run seed, a purpose, and arbitrary key words
    /// (step index, path hash, layer id...).
    pub fn derive(seed: u64, purpose: Purpose, keys: &[u64]) -> Self {
        let mut state = mix64(seed ^ GAMMA.wrapping_mul(purpose.tag()));
        for (i, k) in keys.iter().enumerate() {
            state = mix64(state ^ k.wrapping_add(GAMMA.wrapping_mul(i as u64 + 1)));
        }
        Stream { state, cached: None }
    }

    /// Stable 64-bit hash of a string, for keying streams by path id.
    pub fn key_of(s: &str) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
        for b in s.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Uses rejection to stay unbiased.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.cached.take() {
            return g;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniformly random k-subset of {0, .., n-1} via partial Fisher-Yates.
    /// Returned indices are sorted ascending.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
