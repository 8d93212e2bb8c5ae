//! Symmetric tridiagonal eigensolver (implicit QL with Wilkinson shifts).

use super::Matrix;
use crate::error::{Error, Result};

/// Per-eigenvalue iteration cap for the QL sweep.
pub const QL_MAX_ITERATIONS: usize = 60;

/// Symmetric tridiagonal matrix with diagonal `α₁..α_m` and off-diagonal
/// `β₁..β_{m−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::validation(
                "tridiagonal matrix needs at least one row",
            ));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(Error::shape(format!(
                "off-diagonal length {} must be diagonal length {} minus one",
                offdiag.len(),
                diag.len()
            )));
        }
        Ok(Self { diag, offdiag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    pub fn to_dense(&self) -> Matrix {
        let m = self.dim();
        Matrix::from_fn(m, m, |i, j| {
            if i == j {
                self.diag[i]
            } else if i + 1 == j {
                self.offdiag[i]
            } else if j + 1 == i {
                self.offdiag[j]
            } else {
                0.0
            }
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        let d: f64 = self.diag.iter().map(|x| x * x).sum();
        let e: f64 = self.offdiag.iter().map(|x| x * x).sum();
        (d + 2.0 * e).sqrt()
    }
}

/// Eigenpairs of a tridiagonal matrix, descending. Column `i` of `vectors`
/// is the eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl TridiagEigen {
    /// Gauss quadrature weights `τᵢ = (e₁ᵀ qᵢ)²`.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| {
                let q = self.vectors.get(0, i);
                q * q
            })
            .collect()
    }

    /// `‖T Q − Q Λ‖_F`
    pub fn residual(&self, t: &TridiagonalMatrix) -> f64 {
        let tq = t.to_dense().matmul(&self.vectors);
        let m = self.values.len();
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                let d = tq.get(i, j) - self.vectors.get(i, j) * self.values[j];
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Eigendecomposition of `T`, returning Ritz values `θᵢ` (descending) and the
/// full orthogonal eigenbasis; [`TridiagEigen::weights`] gives `τᵢ`.
pub fn tridiag_eigh(t: &TridiagonalMatrix) -> Result<TridiagEigen> {
    let n = t.dim();
    let mut d = t.diag.clone();
    let mut e = t.offdiag.clone();
    e.push(0.0);
    let mut z = Matrix::identity(n).into_data();

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_ITERATIONS {
                return Err(Error::NoConvergence {
                    what: "tridiagonal QL",
                    iterations: QL_MAX_ITERATIONS,
                    residual: e[l].abs(),
                });
            }
            // Wilkinson shift from the leading 2x2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let f = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * f;
                    z[k * n + i] = c * z[k * n + i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| z[r * n + order[c]]);
    Ok(TridiagEigen { values, vectors })
}
