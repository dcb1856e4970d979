//! Structured matrix products used throughout the channel model.
//!
//! All vectorization is column-major: `vec` stacks columns, and `unvec`
//! is its exact inverse. The Kronecker, Khatri-Rao and Hadamard products
//! follow the usual definitions:
//!
//! * `kron(A, B)` has block `(i, j)` equal to `A[i, j] * B`;
//! * `khatri_rao_col(A, B)` has column `j` equal to `kron(a_j, b_j)`;
//! * `khatri_rao_row(A, B)` has row `i` equal to `kron(A[i, :], B[i, :])`.
//!
//! [`SelectionMatrix`] is the sparse transform `S(A)` with
//! `vec(B ⊗ A) = S(A) vec(B)`, stored as per-column index lists.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;
pub type RealVector = DVector<f64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

fn checked_shape(op: &'static str, a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b).ok_or(Error::ShapeOverflow { op })
}

/// Kronecker product.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let rows = checked_shape("kron", a.nrows(), b.nrows())?;
    let cols = checked_shape("kron", a.ncols(), b.ncols())?;
    checked_shape("kron", rows, cols)?;
    let (br, bc) = b.shape();
    Ok(ComplexMatrix::from_fn(rows, cols, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    }))
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &ComplexVector, b: &ComplexVector) -> ComplexVector {
    let nb = b.len();
    ComplexVector::from_fn(a.len() * nb, |i, _| a[i / nb] * b[i % nb])
}

/// Column-wise Khatri-Rao product `A • B`.
pub fn khatri_rao_col(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims(
            "khatri_rao_col",
            format!("{} vs {} columns", a.ncols(), b.ncols()),
        ));
    }
    let rows = checked_shape("khatri_rao_col", a.nrows(), b.nrows())?;
    let br = b.nrows();
    Ok(ComplexMatrix::from_fn(rows, a.ncols(), |i, j| {
        a[(i / br, j)] * b[(i % br, j)]
    }))
}

/// Row-wise Khatri-Rao (face-splitting) product `A ∗ B`.
pub fn khatri_rao_row(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::dims(
            "khatri_rao_row",
            format!("{} vs {} rows", a.nrows(), b.nrows()),
        ));
    }
    let cols = checked_shape("khatri_rao_row", a.ncols(), b.ncols())?;
    let bc = b.ncols();
    Ok(ComplexMatrix::from_fn(a.nrows(), cols, |i, j| {
        a[(i, j / bc)] * b[(i, j % bc)]
    }))
}

/// Elementwise (Hadamard) product.
pub fn hadamard(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::dims(
            "hadamard",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(a.component_mul(b))
}

/// Column-major vectorization.
pub fn vec(a: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]: reshape a length `rows * cols` vector column by column.
pub fn unvec(v: &ComplexVector, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if checked_shape("unvec", rows, cols)? != v.len() {
        return Err(Error::dims(
            "unvec",
            format!("length {} cannot form {rows}x{cols}", v.len()),
        ));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn diag(v: &ComplexVector) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(v)
}

/// Sparse transform `S(A)` satisfying `vec(B ⊗ A) = S(A) vec(B)` for every
/// `B` of shape `rb x cb`.
///
/// Column `j` of `S(A)` holds the nonzero entries of `A` at the rows where
/// `B`'s `j`-th vectorized entry is replicated.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    rows: usize,
    cols: usize,
    columns: Vec<Vec<(usize, Complex64)>>,
}

impl SelectionMatrix {
    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Nonzero `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> &[(usize, Complex64)] {
        &self.columns[j]
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn apply(&self, x: &ComplexVector) -> Result<ComplexVector> {
        if x.len() != self.cols {
            return Err(Error::dims(
                "SelectionMatrix::apply",
                format!("expected length {}, got {}", self.cols, x.len()),
            ));
        }
        let mut out = ComplexVector::zeros(self.rows);
        for (j, col) in self.columns.iter().enumerate() {
            let xj = x[j];
            if xj == ZERO {
                continue;
            }
            for &(i, v) in col {
                out[i] += v * xj;
            }
        }
        Ok(out)
    }

    /// Dense copy, only sensible for small test sizes.
    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.rows, self.cols);
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Right-multiply a dense matrix by this transform: `lhs · S`.
    pub fn left_mul_dense(&self, lhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if lhs.ncols() != self.rows {
            return Err(Error::dims(
                "SelectionMatrix::left_mul_dense",
                format!("{} columns vs {} rows", lhs.ncols(), self.rows),
            ));
        }
        let mut out = ComplexMatrix::zeros(lhs.nrows(), self.cols);
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                for r in 0..lhs.nrows() {
                    out[(r, j)] += lhs[(r, i)] * v;
                }
            }
        }
        Ok(out)
    }
}

/// Build `S(a) = I_cb ⊗ [I_rb ⊗ a_1; …; I_rb ⊗ a_ca]` in sparse form.
pub fn lemma1_transform(a: &ComplexMatrix, rb: usize, cb: usize) -> Result<SelectionMatrix> {
    let (ra, ca) = a.shape();
    let block = checked_shape("lemma1_transform", ra, ca)
        .and_then(|x| checked_shape("lemma1_transform", x, rb))?;
    let rows = checked_shape("lemma1_transform", block, cb)?;
    let cols = checked_shape("lemma1_transform", rb, cb)?;
    let mut columns = Vec::with_capacity(cols);
    for jb in 0..cb {
        for ib in 0..rb {
            let mut entries = Vec::new();
            for ja in 0..ca {
                for ia in 0..ra {
                    let v = a[(ia, ja)];
                    if v != ZERO {
                        let row = jb * block + ja * rb * ra + ib * ra + ia;
                        entries.push((row, v));
                    }
                }
            }
            columns.push(entries);
        }
    }
    Ok(SelectionMatrix {
        rows,
        cols,
        columns,
    })
}

fn rel_err(lhs: &ComplexVector, rhs: &ComplexVector) -> f64 {
    let scale = lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    (lhs - rhs).norm() / scale
}

/// Whether `vec(a ⊙ b) == diag(vec(a)) vec(b)` holds to `1e-12`.
pub fn hadamard_vec_identity_check(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<bool> {
    let lhs = vec(&hadamard(a, b)?);
    let rhs = diag(&vec(a)) * vec(b);
    Ok(rel_err(&lhs, &rhs) <= 1e-12)
}

/// Relative Frobenius distance between two matrices of equal shape.
pub fn relative_error(lhs: &ComplexMatrix, rhs: &ComplexMatrix) -> f64 {
    let scale = lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    (lhs - rhs).norm() / scale
}

pub fn all_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
