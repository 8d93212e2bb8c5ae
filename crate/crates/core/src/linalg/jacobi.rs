//! Cyclic Jacobi eigendecomposition of dense symmetric matrices.
//!
//! This is the exact oracle path: slow (O(n³) per sweep) but accurate to
//! near machine precision. Rotations skip off-diagonal entries that no longer
//! affect the diagonal, so the off-diagonal mass reaches exact zero.

use super::{DenseSymmetricMatrix, Matrix};
use crate::error::{Error, Result};

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenpairs sorted by descending eigenvalue; `vectors` holds eigenvectors
/// as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `Q Λ Qᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let q = &self.vectors;
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| q.get(i, k) * self.values[k] * q.get(j, k))
                .sum()
        })
    }

    /// `‖M Q − Q Λ‖_F`
    pub fn residual(&self, m: &DenseSymmetricMatrix) -> f64 {
        let n = self.values.len();
        let mq = m.as_matrix().matmul(&self.vectors);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = mq.get(i, j) - self.vectors.get(i, j) * self.values[j];
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// `max |QᵀQ − I|`
    pub fn orthogonality_defect(&self) -> f64 {
        let qtq = self.vectors.transpose().matmul(&self.vectors);
        qtq.max_abs_diff(&Matrix::identity(self.values.len()))
    }
}

#[inline]
fn rotate(
    a: &mut [f64],
    n: usize,
    (i, j): (usize, usize),
    (k, l): (usize, usize),
    s: f64,
    tau: f64,
) {
    let g = a[i * n + j];
    let h = a[k * n + l];
    a[i * n + j] = g - s * (h + g * tau);
    a[k * n + l] = h + s * (g - h * tau);
}

/// Full eigendecomposition of a dense symmetric matrix.
pub fn dense_eigh(m: &DenseSymmetricMatrix) -> Result<SymmetricEigen> {
    let n = m.dim();
    let mut a = m.as_matrix().data().to_vec();
    let mut v = Matrix::identity(n).into_data();
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    let mut converged = n == 1;
    for sweep in 1..=JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].abs())
            .sum();
        if off <= f64::MIN_POSITIVE {
            converged = true;
            break;
        }
        let thresh = if sweep < 4 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 4 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    a[p * n + q] = 0.0;
                } else if apq.abs() > thresh {
                    let h = d[q] - d[p];
                    let t = if h.abs() + g == h.abs() {
                        apq / h
                    } else {
                        let theta = 0.5 * h / apq;
                        let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            -t
                        } else {
                            t
                        }
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * apq;
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    a[p * n + q] = 0.0;
                    for j in 0..p {
                        rotate(&mut a, n, (j, p), (j, q), s, tau);
                    }
                    for j in p + 1..q {
                        rotate(&mut a, n, (p, j), (j, q), s, tau);
                    }
                    for j in q + 1..n {
                        rotate(&mut a, n, (p, j), (q, j), s, tau);
                    }
                    for j in 0..n {
                        rotate(&mut v, n, (j, p), (j, q), s, tau);
                    }
                }
            }
        }
        for p in 0..n {
            b[p] += z[p];
            d[p] = b[p];
            z[p] = 0.0;
        }
    }

    if !converged {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        return Err(Error::NoConvergence {
            what: "jacobi eigensolver",
            iterations: JACOBI_MAX_SWEEPS,
            residual: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(SymmetricEigen { values, vectors })
}
