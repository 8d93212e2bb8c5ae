//! Seeded, splittable random number generation.
//!
//! A [`SeededRng`] is a ChaCha8 keystream keyed by `seed` and positioned on
//! stream `stream`. Two handles with the same `(seed, stream)` produce the
//! same sequence; distinct streams are independent keystreams, so work item
//! `k` can own stream `k` and be evaluated in any order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{dot, norm2, Matrix};

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// SplitMix64 finalizer over `(seed, index)`; used to derive independent
/// child seeds, e.g. one per grid cell.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw from the unit sphere in ℝⁿ (normalized Gaussian).
pub fn rand_unit_vector(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    assert!(n >= 1, "dimension must be positive");
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let nrm = norm2(&v);
        if nrm > 0.0 && nrm.is_finite() {
            v.iter_mut().for_each(|x| *x /= nrm);
            return v;
        }
    }
}

/// Independent ±1 entries with probability ½ each.
pub fn rand_rademacher(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.next_u64() >> 63 == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// Haar-distributed orthogonal matrix: Gram–Schmidt QR of a Gaussian matrix.
/// Two-pass orthogonalization keeps `R`'s diagonal positive, which is the
/// sign correction that makes the distribution rotation invariant.
pub fn haar_orthogonal(rng: &mut SeededRng, n: usize) -> Matrix {
    assert!(n >= 1, "dimension must be positive");
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        for _ in 0..2 {
            for q in &cols {
                let c = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let nrm = norm2(&v);
        if nrm <= 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nrm);
        cols.push(v);
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}
