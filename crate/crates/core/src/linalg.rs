//! Small dense linear algebra: row-major matrices, Cholesky factorization,
//! and a cyclic Jacobi eigensolver for symmetric matrices.
//!
//! Everything here is sized for the problems the simulator sees (subspace
//! dimension in the single digits, a few dozen nodes), so clarity wins over
//! blocking or SIMD.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[T]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] = out[(i, j)] + a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mat_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * k).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    /// Adds `w * u uᵀ` in place.
    pub fn add_rank_one(&mut self, w: T, u: &[T]) {
        assert!(self.is_square() && u.len() == self.rows);
        for i in 0..self.rows {
            let wi = w * u[i];
            for j in 0..self.cols {
                self[(i, j)] = self[(i, j)] + wi * u[j];
            }
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.cols, |i, j| self[(idx[i], j)])
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Fails when a pivot is not strictly positive (and finite).
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument("cholesky of non-square matrix".into()));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Internal(format!(
                    "matrix not positive definite (pivot {j} = {d})"
                )));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: &[T]) -> Vec<T> {
        let l = &self.lower;
        let n = l.rows();
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s = s - l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        z
    }

    /// Solves `Lᵀ x = z`.
    pub fn backward(&self, z: &[T]) -> Vec<T> {
        let l = &self.lower;
        let n = l.rows();
        let mut x = z.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.backward(&self.forward(b))
    }

    /// `Tr(A⁻¹) = ‖L⁻¹‖_F²`.
    pub fn inverse_trace(&self) -> T {
        let n = self.lower.rows();
        let mut e = vec![T::zero(); n];
        let mut acc = T::zero();
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            acc = acc + norm_sq(&self.forward(&e));
        }
        acc
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lower.rows();
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let x = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = x[i];
            }
        }
        // symmetrize rounding noise
        Matrix::from_fn(n, n, |i, j| (inv[(i, j)] + inv[(j, i)]) / T::lit(2.0))
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending and
/// eigenvectors stored as columns in matching order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Matrix<T>,
}

impl<T: Scalar> SymmetricEigen<T> {
    /// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument("eigen of non-square matrix".into()));
        }
        let n = a.rows();
        let mut m = a.clone();
        let mut v = Matrix::identity(n);
        let two = T::lit(2.0);
        let scale = m.frobenius_norm().max(T::min_positive_value());
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off = off + m[(i, j)] * m[(i, j)];
                    }
                }
            }
            if off.sqrt() <= eps * scale * T::lit(1e-2) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= T::min_positive_value() {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            m[(i, i)]
                .partial_cmp(&m[(j, j)])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
        let eigenvectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }
}

/// Factorization of a symmetric positive-definite system with a guarded
/// fallback: when Cholesky fails in finite precision, eigenvalues are
/// floored at [`SpdFactor::EIGEN_FLOOR`] and the system is pseudo-solved.
#[derive(Debug, Clone)]
pub enum SpdFactor<T> {
    Cholesky(Cholesky<T>),
    Floored(SymmetricEigen<T>),
}

impl<T: Scalar> SpdFactor<T> {
    pub const EIGEN_FLOOR: f64 = 1e-12;

    pub fn new(a: &Matrix<T>) -> Result<Self> {
        match Cholesky::new(a) {
            Ok(c) => Ok(Self::Cholesky(c)),
            Err(_) => {
                let mut eig = SymmetricEigen::new(a)?;
                let floor = T::lit(Self::EIGEN_FLOOR);
                for l in eig.eigenvalues.iter_mut() {
                    if !l.is_finite() {
                        return Err(Error::Internal("non-finite eigenvalue".into()));
                    }
                    *l = l.max(floor);
                }
                Ok(Self::Floored(eig))
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        match self {
            Self::Cholesky(c) => c.solve(b),
            Self::Floored(e) => {
                let q = &e.eigenvectors;
                let proj = q.transpose().mat_vec(b);
                let scaled: Vec<T> = proj
                    .iter()
                    .zip(&e.eigenvalues)
                    .map(|(&p, &l)| p / l)
                    .collect();
                q.mat_vec(&scaled)
            }
        }
    }

    pub fn inverse_trace(&self) -> T {
        match self {
            Self::Cholesky(c) => c.inverse_trace(),
            Self::Floored(e) => e.eigenvalues.iter().map(|&l| T::one() / l).sum(),
        }
    }

    /// `bᵀ A⁻² b = ‖A⁻¹ b‖²`.
    pub fn inv_sq_quadratic(&self, b: &[T]) -> T {
        norm_sq(&self.solve(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> Matrix<f64> {
        Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd3();
        let c = Cholesky::new(&a).unwrap();
        let l = c.lower();
        let back = l.matmul(&l.transpose());
        assert!(back.max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Cholesky::new(&a).is_err());
    }

    #[test]
    fn solve_and_inverse_trace_agree() {
        let a = spd3();
        let c = Cholesky::new(&a).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        let ax = a.mat_vec(&x);
        for (got, want) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-13);
        }
        let inv = c.inverse();
        assert!(a.matmul(&inv).max_abs_diff(&Matrix::identity(3)) < 1e-13);
        assert_relative_eq!(c.inverse_trace(), inv.trace(), epsilon = 1e-13);
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = spd3();
        let eig = SymmetricEigen::new(&a).unwrap();
        let q = &eig.eigenvectors;
        assert!(q.transpose().matmul(q).max_abs_diff(&Matrix::identity(3)) < 1e-13);
        let d = Matrix::from_diagonal(&eig.eigenvalues);
        let back = q.matmul(&d).matmul(&q.transpose());
        assert!(back.max_abs_diff(&a) < 1e-12);
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn floored_fallback_handles_singular() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = SpdFactor::new(&a).unwrap();
        assert!(matches!(f, SpdFactor::Floored(_)));
        let x = f.solve(&[1.0, 1.0]);
        assert!(x.iter().all(|v| f64::is_finite(*v)));
    }

    #[test]
    fn works_in_f32() {
        let a: Matrix<f32> = spd3().cast();
        let c = Cholesky::new(&a).unwrap();
        let inv = c.inverse();
        assert!(a.matmul(&inv).max_abs_diff(&Matrix::identity(3)) < 1e-5);
    }
}
