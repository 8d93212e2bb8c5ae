//! Kendall rank correlation in O(N log N) (Knight's algorithm).
//!
//! Sort pairs by `(x, y)`, count tie groups, then merge-sort by `y` while
//! counting exchanges; every exchange is one discordant pair. With
//! `n₀ = N(N−1)/2`, `n₁` tied-in-x pairs, `n₂` tied-in-y pairs and `n₃`
//! tied-in-both pairs, `S = n₀ − n₁ − n₂ + n₃ − 2·swaps` is the exact
//! concordant-minus-discordant count.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauVariant {
    /// `S / n₀`; ties contribute nothing.
    #[default]
    A,
    /// `S / √((n₀ − n₁)(n₀ − n₂))`; 0 when either side is constant.
    B,
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Concordant-minus-discordant count and the pair/tie totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    pub s: i64,
    pub n0: u64,
    pub x_ties: u64,
    pub y_ties: u64,
}

pub fn kendall_counts(x: &[f64], y: &[f64]) -> Result<KendallCounts> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "x has {} entries, y has {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::validation(
            "Kendall τ needs at least two observations",
        ));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::validation("Kendall τ is undefined with NaN entries"));
    }
    let n = x.len() as u64;
    // Adding 0.0 folds −0.0 into +0.0 so total_cmp agrees with ==.
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);
    let n0 = n * (n - 1) / 2;
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(KendallCounts {
        s,
        n0,
        x_ties: n1,
        y_ties: n2,
    })
}

/// Tau-a: `2/(N(N−1))·Σ_{i<j} sign(xᵢ−xⱼ)·sign(yᵢ−yⱼ)`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    kendall_tau_variant(x, y, TauVariant::A)
}

pub fn kendall_tau_variant(x: &[f64], y: &[f64], variant: TauVariant) -> Result<f64> {
    let c = kendall_counts(x, y)?;
    Ok(match variant {
        TauVariant::A => c.s as f64 / c.n0 as f64,
        TauVariant::B => {
            let denom = ((c.n0 - c.x_ties) as f64 * (c.n0 - c.y_ties) as f64).sqrt();
            if denom == 0.0 {
                0.0
            } else {
                c.s as f64 / denom
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::linalg::SeededRng;

    fn brute_s(x: &[f64], y: &[f64]) -> i64 {
        let sign = |v: f64| (v > 0.0) as i64 - (v < 0.0) as i64;
        let mut s = 0;
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                s += sign(x[i] - x[j]) * sign(y[i] - y[j]);
            }
        }
        s
    }

    #[test]
    fn worked_examples() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            1.0 / 3.0
        );
    }

    #[test]
    fn constant_measure_gives_zero() {
        assert_eq!(
            kendall_tau(&[2.0; 5], &[1.0, 5.0, 3.0, 2.0, 4.0]).unwrap(),
            0.0
        );
        assert_eq!(
            kendall_tau_variant(&[2.0; 5], &[1.0, 5.0, 3.0, 2.0, 4.0], TauVariant::B).unwrap(),
            0.0
        );
    }

    #[test]
    fn tau_b_corrects_for_ties() {
        // Five concordant pairs out of six; the sixth is tied in x.
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        let c = kendall_counts(&x, &y).unwrap();
        assert_eq!((c.s, c.n0, c.x_ties, c.y_ties), (5, 6, 1, 0));
        assert_eq!(kendall_tau(&x, &y).unwrap(), 5.0 / 6.0);
        let b = kendall_tau_variant(&x, &y, TauVariant::B).unwrap();
        assert!((b - 5.0 / 30f64.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn errors() {
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn matches_brute_force_on_integer_vectors() {
        let mut rng = SeededRng::new(1, 0);
        for _ in 0..300 {
            let n = 2 + rng.below(60);
            let range = 1 + rng.below(10);
            let x: Vec<f64> = (0..n).map(|_| rng.below(range) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.below(range) as f64).collect();
            let s = brute_s(&x, &y);
            assert_eq!(kendall_counts(&x, &y).unwrap().s, s);
            let n0 = (n * (n - 1) / 2) as f64;
            assert_eq!(kendall_tau(&x, &y).unwrap(), s as f64 / n0);
        }
    }

    proptest! {
        #[test]
        fn bounded_and_rank_invariant(
            pts in proptest::collection::vec((-50i32..50, -50i32..50), 2..40)
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0 as f64 / 10.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1 as f64).collect();
            let t = kendall_tau(&x, &y).unwrap();
            prop_assert!(t.abs() <= 1.0);
            let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let lin: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
            prop_assert_eq!(kendall_tau(&ex, &y).unwrap(), t);
            prop_assert_eq!(kendall_tau(&lin, &y).unwrap(), t);
            prop_assert_eq!(kendall_tau(&y, &x).unwrap(), t);
        }
    }
}
