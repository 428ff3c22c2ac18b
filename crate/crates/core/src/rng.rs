//! Counter-based random streams.
//!
//! Every stream is identified by `(root_seed, stream_id)`. Output `n` of a
//! stream is `splitmix64_mix(key + (n + 1) * GOLDEN_GAMMA)` where `key` is a
//! mix of the two identifiers, so any draw can be reproduced without replaying
//! other streams. Bags, parameter initialisation and epoch shuffles each get
//! their own stream, which makes generation order and worker count irrelevant.
//!
//! Gaussian draws use the basic (trigonometric) Box-Muller transform. Each
//! pair of coordinates consumes exactly two uniforms; for odd dimensions the
//! second half of the final pair is discarded but its uniforms are still
//! consumed. Changing this transform changes every golden file.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0x632B_E59B_D9B4_E019;

/// SplitMix64 finaliser (Stafford variant 13).
#[inline]
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedStream {
    root_seed: u64,
    stream_id: u64,
    counter: u64,
    key: u64,
}

/// Derives the stream for `(root_seed, stream_id)`, positioned at counter 0.
pub fn derive_stream(root_seed: u64, stream_id: u64) -> SeedStream {
    let key = splitmix64_mix(root_seed ^ splitmix64_mix(stream_id.wrapping_add(STREAM_SALT)));
    SeedStream {
        root_seed,
        stream_id,
        counter: 0,
        key,
    }
}

impl SeedStream {
    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Rewinds to the first output.
    pub fn reset(&mut self) {
        self.counter = 0;
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64_mix(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_bool(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// True with probability `p`.
    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform in `[0, n)`, unbiased (Lemire's multiply-and-reject). `n` must be nonzero.
    pub(crate) fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`, both inclusive.
    pub fn next_uniform_int(&mut self, lo: i64, hi: i64) -> Result<i64> {
        if lo > hi {
            return Err(Error::Argument(format!("empty integer range [{lo}, {hi}]")));
        }
        let span = hi.wrapping_sub(lo) as u64;
        if span == u64::MAX {
            return Ok(self.next_u64() as i64);
        }
        Ok(lo.wrapping_add(self.below(span + 1) as i64))
    }

    /// `dim` independent draws from `N(mean, variance)`.
    pub fn next_gaussian_vector(
        &mut self,
        mean: f64,
        variance: f64,
        dim: usize,
    ) -> Result<Vec<f64>> {
        if variance.is_nan() || variance <= 0.0 || !variance.is_finite() {
            return Err(Error::Argument(format!(
                "variance must be positive and finite, got {variance}"
            )));
        }
        if dim == 0 {
            return Err(Error::Argument("dimension must be at least 1".into()));
        }
        let sd = variance.sqrt();
        let mut out = Vec::with_capacity(dim);
        while out.len() < dim {
            let (z0, z1) = self.box_muller();
            out.push(mean + sd * z0);
            if out.len() < dim {
                out.push(mean + sd * z1);
            }
        }
        Ok(out)
    }

    fn box_muller(&mut self) -> (f64, f64) {
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        (radius * cos, radius * sin)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_outputs(seed: u64, stream: u64, n: usize) -> Vec<u64> {
        let mut s = derive_stream(seed, stream);
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_identifiers_same_outputs() {
        assert_eq!(first_outputs(42, 0, 100), first_outputs(42, 0, 100));
    }

    #[test]
    fn golden_values() {
        // Computed by an independent big-integer transcription of the mixing
        // function. Any change here breaks every previously generated dataset.
        assert_eq!(first_outputs(0, 0, 1)[0], GOLDEN_0_0);
        assert_eq!(first_outputs(42, 0, 1)[0], GOLDEN_42_0);
        assert_eq!(first_outputs(42, 1, 1)[0], GOLDEN_42_1);
        assert_ne!(GOLDEN_42_0, GOLDEN_42_1);
    }

    const GOLDEN_0_0: u64 = 9_453_489_454_682_472_753;
    const GOLDEN_42_0: u64 = 2_704_548_413_004_861_485;
    const GOLDEN_42_1: u64 = 13_570_961_024_170_898_929;

    #[test]
    fn degenerate_range() {
        let mut s = derive_stream(3, 9);
        for _ in 0..10 {
            assert_eq!(s.next_uniform_int(5, 5).unwrap(), 5);
        }
    }

    #[test]
    fn reversed_range_is_an_error() {
        let mut s = derive_stream(3, 9);
        assert!(matches!(s.next_uniform_int(4, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn full_range_does_not_overflow() {
        let mut s = derive_stream(1, 1);
        s.next_uniform_int(i64::MIN, i64::MAX).unwrap();
    }

    #[test]
    fn uniform_int_frequencies() {
        let mut s = derive_stream(7, 0);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let v = s.next_uniform_int(1, 4).unwrap();
            counts[(v - 1) as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn uniform_int_mean() {
        let mut s = derive_stream(8, 0);
        let n = 100_000;
        let total: i64 = (0..n).map(|_| s.next_uniform_int(1, 10).unwrap()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 5.5).abs() <= 0.05, "mean {mean}");
    }

    fn coordinate_moments(mean: f64, variance: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let dim = 16;
        let n = 100_000;
        let mut s = derive_stream(seed, 0);
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..n {
            let v = s.next_gaussian_vector(mean, variance, dim).unwrap();
            for (i, x) in v.iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        let nf = n as f64;
        let means: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let vars = sq
            .iter()
            .zip(&means)
            .map(|(q, m)| (q - nf * m * m) / (nf - 1.0))
            .collect();
        (means, vars)
    }

    #[test]
    fn gaussian_mean_matches_poison_parameters() {
        let (means, _) = coordinate_moments(-10.0, 0.1, 11);
        for m in means {
            assert!((m + 10.0).abs() <= 0.02, "mean {m}");
        }
    }

    #[test]
    fn gaussian_variance_matches() {
        let (_, vars) = coordinate_moments(0.0, 3.0, 12);
        for v in vars {
            assert!((v - 3.0).abs() <= 0.1, "variance {v}");
        }
    }

    #[test]
    fn gaussian_reset_reproduces() {
        let mut s = derive_stream(5, 5);
        let a = s.next_gaussian_vector(1.0, 1.0, 16).unwrap();
        s.reset();
        let b = s.next_gaussian_vector(1.0, 1.0, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn odd_dimension_consumes_whole_pairs() {
        let mut s = derive_stream(5, 5);
        s.next_gaussian_vector(0.0, 1.0, 3).unwrap();
        assert_eq!(s.counter(), 4);
    }

    #[test]
    fn gaussian_rejects_bad_arguments() {
        let mut s = derive_stream(5, 5);
        assert!(s.next_gaussian_vector(0.0, 0.0, 4).is_err());
        assert!(s.next_gaussian_vector(0.0, -1.0, 4).is_err());
        assert!(s.next_gaussian_vector(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut s = derive_stream(2, 3);
        let mut v: Vec<u32> = (0..50).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
