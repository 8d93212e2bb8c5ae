//! Dense and operator-level symmetric linear algebra.
//!
//! Everything here works on plain `f64` slices. Matrices are row-major.
//! The Hessians this crate studies are only ever touched through
//! [`SymmetricOperator::apply`]; the dense types exist for the exact oracle
//! path and for desk-scale experiments.

mod io;
mod jacobi;
mod rng;
mod tridiag;

pub use io::{load_matrix, parse_matrix_csv, read_symf, write_matrix_csv, write_symf, SYMF_MAGIC};
pub use jacobi::{dense_eigh, SymmetricEigen, JACOBI_MAX_SWEEPS};
pub use rng::{derive_seed, haar_orthogonal, rand_rademacher, rand_unit_vector, SeededRng};
pub use tridiag::{tridiag_eigh, TridiagEigen, TridiagonalMatrix, QL_MAX_ITERATIONS};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(v: &mut [f64], c: f64) {
    for x in v {
        *x *= c;
    }
}

/// General rectangular row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                axpy(a, src, dst);
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Determinant by partial-pivot LU; only used for small diagnostics.
    pub fn determinant(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))
                .unwrap();
            if a[piv * n + k] == 0.0 {
                return 0.0;
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                det = -det;
            }
            let p = a[k * n + k];
            det *= p;
            for i in k + 1..n {
                let f = a[i * n + k] / p;
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
        det
    }
}

/// Dense symmetric matrix. The lower triangle is authoritative: construction
/// mirrors it onto the upper triangle so `get(i, j) == get(j, i)` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymmetricMatrix {
    inner: Matrix,
}

impl DenseSymmetricMatrix {
    /// Builds from a full row-major array, mirroring the lower triangle.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("matrix dimension must be positive"));
        }
        let mut inner = Matrix::from_vec(n, n, data)?;
        for i in 0..n {
            for j in 0..i {
                let v = inner.get(i, j);
                inner.set(j, i, v);
            }
        }
        Ok(Self { inner })
    }

    /// Builds from `f(i, j)` evaluated on the lower triangle (`j <= i`).
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("matrix dimension must be positive"));
        }
        let mut inner = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                inner.set(i, j, v);
                inner.set(j, i, v);
            }
        }
        Ok(Self { inner })
    }

    /// `(M + Mᵀ) / 2` of a square matrix.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::shape(format!(
                "cannot symmetrize a {}x{} matrix",
                m.rows(),
                m.cols()
            )));
        }
        Self::from_lower_fn(m.rows(), |i, j| 0.5 * (m.get(i, j) + m.get(j, i)))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_lower_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Matrix::identity(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut inner = self.inner.clone();
        scale(&mut inner.data, c);
        Self { inner }
    }
}

/// A symmetric linear operator on ℝⁿ seen only through matrix-vector products.
///
/// `apply` must be deterministic: the same input yields bit-identical output
/// within one process. Implementors must be shareable across threads so that
/// probes can run concurrently.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    /// Writes `H v` into `out`. Both slices have length [`Self::dim`].
    fn apply(&self, v: &[f64], out: &mut [f64]);

    fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(v, &mut out);
        out
    }
}

impl SymmetricOperator for DenseSymmetricMatrix {
    fn dim(&self) -> usize {
        self.inner.rows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = dot(self.inner.row(i), v);
        }
    }
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply(v, out)
    }
}

/// Operator backed by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> SymmetricOperator for FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        (self.f)(v, out)
    }
}

/// `c · H` for an underlying operator `H`.
pub struct ScaledOperator<O> {
    pub inner: O,
    pub factor: f64,
}

impl<O: SymmetricOperator> SymmetricOperator for ScaledOperator<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.inner.apply(v, out);
        scale(out, self.factor);
    }
}

/// Dense materialization `[H e₁, …, H eₙ]`, symmetrized.
pub fn materialize<O: SymmetricOperator + ?Sized>(op: &O) -> Result<DenseSymmetricMatrix> {
    let n = op.dim();
    let mut cols = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut out = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut out);
        e[j] = 0.0;
        for (i, &v) in out.iter().enumerate() {
            cols.set(i, j, v);
        }
    }
    DenseSymmetricMatrix::symmetrize(&cols)
}

/// Relative symmetry defect `|uᵀ(Hv) − vᵀ(Hu)| / (‖u‖‖v‖‖H‖_est)` for random
/// `u`, `v`, where `‖H‖_est = max(‖Hu‖/‖u‖, ‖Hv‖/‖v‖)`. Returns 0 for a
/// zero operator.
pub fn symmetry_defect<O: SymmetricOperator + ?Sized>(op: &O, rng: &mut SeededRng) -> f64 {
    let n = op.dim();
    let u: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let hu = op.apply_vec(&u);
    let hv = op.apply_vec(&v);
    let (nu, nv) = (norm2(&u), norm2(&v));
    let est = (norm2(&hu) / nu).max(norm2(&hv) / nv);
    if est == 0.0 {
        return 0.0;
    }
    (dot(&u, &hv) - dot(&v, &hu)).abs() / (nu * nv * est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_triangle_is_authoritative() {
        let m = DenseSymmetricMatrix::from_row_major(2, vec![1.0, 99.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 0), 2.0);
    }

    #[test]
    fn dense_operator_matches_matvec() {
        let m = DenseSymmetricMatrix::from_lower_fn(3, |i, j| (i + 2 * j) as f64).unwrap();
        let v = [1.0, -1.0, 0.5];
        assert_eq!(m.apply_vec(&v), m.as_matrix().matvec(&v));
    }

    #[test]
    fn materialize_round_trips() {
        let m = DenseSymmetricMatrix::from_lower_fn(4, |i, j| 1.0 / (1 + i + j) as f64).unwrap();
        let back = materialize(&m).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn symmetry_witness_on_dense() {
        let m =
            DenseSymmetricMatrix::from_lower_fn(10, |i, j| ((i * 7 + j * 3) % 5) as f64).unwrap();
        let mut rng = SeededRng::new(3, 0);
        assert!(symmetry_defect(&m, &mut rng) <= 1e-8);
    }

    #[test]
    fn symmetry_witness_flags_nonsymmetric() {
        let op = FnOperator::new(2, |v: &[f64], out: &mut [f64]| {
            out[0] = v[1];
            out[1] = 0.0;
        });
        let mut rng = SeededRng::new(1, 0);
        assert!(symmetry_defect(&op, &mut rng) > 1e-3);
    }

    #[test]
    fn determinant_of_permutation() {
        let p = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.determinant(), -1.0);
    }
}
