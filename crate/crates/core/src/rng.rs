//! Deterministic pseudo-random streams for manifests, initialization and
//! shuffling.
//!
//! Everything that consumes randomness in this crate goes through
//! [`SplitMix64`] so that a seed reproduces the same bytes on every platform.
//! The algorithm identity is recorded in serialized artifacts as
//! [`RNG_ALGORITHM`].

/// Identifier written into manifest headers.
pub const RNG_ALGORITHM: &str = "splitmix64-v1";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator (Steele, Lea & Flood): 64-bit state, one
/// multiply-xorshift output function per draw.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

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

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Multiply-shift reduction, n must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fork an independent stream for the given index.
    pub fn split(&self, stream: u64) -> SplitMix64 {
        SplitMix64::new(sub_seed(self.state, stream))
    }
}

/// Derive a child seed for stream `stream` under `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = SplitMix64::new(seed ^ (stream.wrapping_add(1)).wrapping_mul(GOLDEN_GAMMA));
    rng.next_u64()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i + 1);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_streams_differ_from_parent() {
        let parent = SplitMix64::new(7);
        let mut c0 = parent.split(0);
        let mut c1 = parent.split(1);
        assert_ne!(c0.next_u64(), c1.next_u64());
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = SplitMix64::new(123);
        for _ in 0..1000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn below_covers_range() {
        let mut rng = SplitMix64::new(5);
        let mut seen = [false; 8];
        for _ in 0..1000 {
            seen[rng.below(8)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SplitMix64::new(9);
        let mut v: Vec<usize> = (0..32).collect();
        shuffle(&mut v, &mut rng);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..32).collect::<Vec<_>>());
    }
}
