//! Deterministic random numbers for fixtures and the flip experiment.
//!
//! The generator is SplitMix64: a Weyl counter (`state += 0x9E3779B97F4A7C15`)
//! followed by a fixed 64-bit finalizer. Output `k` is a pure function of
//! `(seed, k)`, so any language can reproduce a fixture from its seed alone.
//!
//! Normal deviates use the cosine branch of Box-Muller on two consecutive
//! uniforms, discarding the sine branch, so that the draw count per deviate is
//! always exactly two.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// The `counter`-th output (zero-based) of a generator seeded with `seed`,
    /// without stepping through the earlier outputs.
    pub fn at(seed: u64, counter: u64) -> u64 {
        mix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(counter.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe as a logarithm argument.
    fn next_f64_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open_zero();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, bound)` by rejection on the top bits.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// Derives an independent child seed, e.g. one per layer or per trial.
    pub fn derive(seed: u64, stream: u64) -> u64 {
        Self::at(seed ^ 0xA076_1D64_78BD_642F, stream)
    }

    /// `count` distinct indices from `[0, population)`, in sampled order
    /// (partial Fisher-Yates).
    pub fn sample_without_replacement(&mut self, population: usize, count: usize) -> Vec<usize> {
        assert!(count <= population, "cannot sample {count} of {population}");
        let mut pool: Vec<usize> = (0..population).collect();
        for i in 0..count {
            let j = i + self.next_below((population - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}
