//! Small dense linear algebra with floating-point operation counting.
//!
//! Every kernel takes a [`Flops`] accumulator and charges one flop per scalar
//! addition, subtraction, multiplication or division it performs. Pivot
//! searches, row swaps and sign flips are free.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Smallest pivot magnitude accepted by elimination.
///
/// Only exact or subnormal breakdown is rejected. Reduced steady-state
/// systems of irreducible chains can have legitimate pivots far below any
/// fixed absolute cutoff when the stationary mass is strongly skewed.
pub const PIVOT_TOL: f64 = f64::MIN_POSITIVE;

/// Running flop count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flops(pub u64);

impl Flops {
    #[inline]
    pub fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }
}

/// Square or rectangular dense matrix, row-major.
#[derive(Clone, PartialEq)]
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let c = self.cols;
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(hi * c);
        head[lo * c..(lo + 1) * c].swap_with_slice(&mut tail[..c]);
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

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64], flops: &mut Flops) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        flops.add(self.rows * (2 * self.cols).saturating_sub(1));
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Plain matrix product, used by tests and diagnostics (not counted).
    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
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

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: Matrix, flops: &mut Flops) -> Result<Lu> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "LU needs a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pivot.is_nan() || pivot < PIVOT_TOL {
                return Err(Error::SingularSystem { column: k, pivot });
            }
            a.swap_rows(k, p);
            perm.swap(k, p);
            let pivot_row: Vec<f64> = a.row(k)[k + 1..].to_vec();
            let diag = a[(k, k)];
            let width = n - k - 1;
            for i in k + 1..n {
                let m = a[(i, k)] / diag;
                a[(i, k)] = m;
                let row = &mut a.row_mut(i)[k + 1..];
                for (x, u) in row.iter_mut().zip(&pivot_row) {
                    *x -= m * u;
                }
            }
            // one division per multiplier, a multiply and a subtract per updated entry
            flops.add((n - k - 1) * (1 + 2 * width));
        }
        Ok(Lu { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64], flops: &mut Flops) -> Vec<f64> {
        let n = self.dim();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward, unit lower
        for i in 1..n {
            let s = dot(&self.lu.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        flops.add(n * n.saturating_sub(1));
        // backward
        for i in (0..n).rev() {
            let s = dot(&self.lu.row(i)[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        flops.add(n * n);
        x
    }

    /// Full inverse by solving against every column of the identity.
    pub fn inverse(&self, flops: &mut Flops) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e, flops);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        inv
    }
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64], flops: &mut Flops) -> Result<Vec<f64>> {
    Ok(Lu::factor(a.clone(), flops)?.solve(b, flops))
}

/// Inverse by Gaussian elimination.
pub fn invert(a: &Matrix, flops: &mut Flops) -> Result<Matrix> {
    Ok(Lu::factor(a.clone(), flops)?.inverse(flops))
}
