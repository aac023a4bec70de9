//! Small dense matrices and the factorizations the likelihoods need.
//!
//! Ground sets hold a few dozen items at most, so everything here is a
//! straightforward row-major `O(n³)` routine.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Diagonal jitter added on the single retry after a failed factorization.
pub const JITTER: f64 = 1e-6;

/// A pivot this small relative to its original diagonal entry marks the
/// matrix as singular (the row lies in the span of the earlier rows).
pub const SINGULAR_RTOL: f64 = 1e-12;

/// A pivot more negative than this, relative to its diagonal entry, marks
/// the matrix as indefinite. Rank-deficient PSD input whose earlier pivots
/// are small can leave round-off well past [`SINGULAR_RTOL`].
pub const INDEFINITE_RTOL: f64 = 1e-8;

/// Symmetry tolerance, relative to `max(1, max |a_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows and columns `idx` of a square matrix.
    pub fn principal(&self, idx: &[usize]) -> Matrix {
        let k = idx.len();
        let mut m = Matrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m[(a, b)] = self[(i, j)];
            }
        }
        m
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    /// `A Aᵀ`, symmetric by construction.
    pub fn gram(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
    }

    /// Largest `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn add_diag(&mut self, eps: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += eps;
        }
    }

    fn check_square_symmetric(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let asym = self.asymmetry();
        if asym > SYMMETRY_TOL * self.max_abs().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `A = G Gᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Matrix,
}

/// Why a Cholesky sweep stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Breakdown {
    /// Pivot tiny relative to its diagonal entry: rank deficient.
    Singular,
    /// Negative or non-finite pivot.
    Indefinite,
}

fn cholesky(a: &Matrix) -> core::result::Result<Cholesky, Breakdown> {
    let n = a.rows;
    let mut g = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= g[(j, k)] * g[(j, k)];
        }
        if !d.is_finite() {
            return Err(Breakdown::Indefinite);
        }
        if d <= SINGULAR_RTOL * a[(j, j)].abs() {
            return Err(if d < -INDEFINITE_RTOL * a[(j, j)].abs() {
                Breakdown::Indefinite
            } else {
                Breakdown::Singular
            });
        }
        let pivot = libm::sqrt(d);
        g[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= g[(i, k)] * g[(j, k)];
            }
            g[(i, j)] = s / pivot;
        }
    }
    Ok(Cholesky { factor: g })
}

impl Cholesky {
    pub fn log_det(&self) -> f64 {
        (0..self.factor.rows)
            .map(|i| 2.0 * libm::log(self.factor[(i, i)]))
            .sum()
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let g = &self.factor;
        let n = g.rows;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= g[(i, k)] * b[k];
            }
            b[i] = s / g[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= g[(k, i)] * b[k];
            }
            b[i] = s / g[(i, i)];
        }
    }

    /// `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> Matrix {
        let n = self.factor.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Factors a symmetric PSD matrix, retrying once with [`JITTER`] on the
/// diagonal when the plain factorization breaks down.
pub fn factor_psd(a: &Matrix) -> Result<Cholesky> {
    a.check_square_symmetric()?;
    match cholesky(a) {
        Ok(c) => Ok(c),
        Err(_) => {
            log::debug!(
                "cholesky failed on {}x{} matrix, retrying with jitter {JITTER:e}",
                a.rows,
                a.cols
            );
            let mut jittered = a.clone();
            jittered.add_diag(JITTER);
            cholesky(&jittered).map_err(|_| Error::Singular)
        }
    }
}

/// `log det A` for a symmetric PSD matrix via its Cholesky factor.
pub fn log_det_psd(a: &Matrix) -> Result<f64> {
    Ok(factor_psd(a)?.log_det())
}

/// `log det A`, or `−∞` when `A` is singular. No jitter is applied, so a
/// rank-deficient PSD matrix reports zero volume instead of a tiny one.
/// Indefinite input (a negative pivot beyond round-off) is an error.
pub fn log_det_or_neg_inf(a: &Matrix) -> Result<f64> {
    a.check_square_symmetric()?;
    match cholesky(a) {
        Ok(c) => Ok(c.log_det()),
        Err(Breakdown::Singular) => Ok(f64::NEG_INFINITY),
        Err(Breakdown::Indefinite) => Err(Error::Singular),
    }
}

/// Determinant of a general square matrix by LU with partial pivoting.
pub fn det(a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs()))
            .unwrap_or(c);
        if m[(p, c)] == 0.0 {
            return Ok(0.0);
        }
        if p != c {
            for j in 0..n {
                m.data.swap(p * n + j, c * n + j);
            }
            det = -det;
        }
        let pivot = m[(c, c)];
        det *= pivot;
        for i in (c + 1)..n {
            let f = m[(i, c)] / pivot;
            if f != 0.0 {
                for j in c..n {
                    m[(i, j)] -= f * m[(c, j)];
                }
            }
        }
    }
    Ok(det)
}
