//! Seedable random source used everywhere randomness is needed.
//!
//! The generator is splitmix64. It is tiny, passes the usual statistical
//! batteries at the scales used here, and most importantly produces the same
//! stream on every platform and toolchain, which the reproducibility
//! guarantees of this crate lean on. Independent streams are derived from a
//! base seed plus a tag path (for example per layer, per head, per sweep
//! cell), so adding a consumer never perturbs the draws seen by another.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Finalizer from splitmix64; full-avalanche 64-bit mixer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splitmix64 generator with Box-Muller state for normal draws.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
    spare_normal: Option<f64>,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng {
            state: seed,
            spare_normal: None,
        }
    }

    /// Derives the stream identified by `tags` under `seed`. Distinct tag
    /// paths yield statistically independent streams; the same path always
    /// yields the same stream.
    pub fn stream(seed: u64, tags: &[u64]) -> Self {
        let mut state = mix(seed ^ GOLDEN);
        for &t in tags {
            state = mix(state.wrapping_add(GOLDEN) ^ mix(t.wrapping_add(GOLDEN)));
        }
        StreamRng {
            state,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in (0, 1]; never returns zero, safe under log().
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; draws come in pairs, the second is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = (-2.0 * self.next_f64_open().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.next_f64();
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Unbiased uniform index in [0, n). Rejection-samples the biased tail.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_index over an empty range");
        let n = n as u64;
        // 2^64 mod n; draws below this threshold fall in the truncated band.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return (x % n) as usize;
            }
        }
    }
}
