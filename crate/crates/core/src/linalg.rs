//! Dense double-precision matrices and the handful of decompositions the
//! rest of the crate relies on.
//!
//! [`Matrix`] wraps a column-major `nalgebra::DMatrix<f64>`. Hot loops in
//! the network and trainer reach through [`Matrix::as_dmatrix`] to use
//! `gemm` directly; everything else goes through the checked operations
//! below.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numfmt::fmt_g;

/// Dense real matrix with at least one row and one column.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    inner: DMatrix<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Matrix {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "matrix dimensions must be positive");
        Matrix {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Matrix {
            inner: DMatrix::from_fn(rows, cols, f),
        }
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix {
            inner: DMatrix::from_row_slice(rows, cols, data),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), cols, &flat)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn from_dmatrix(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        Ok(Matrix { inner })
    }

    pub(crate) fn wrap(inner: DMatrix<f64>) -> Self {
        debug_assert!(inner.nrows() >= 1 && inner.ncols() >= 1);
        Matrix { inner }
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn as_dmatrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.inner
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::wrap(self.inner.transpose())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::wrap(&self.inner * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        Ok(Matrix::wrap(&self.inner + &other.inner))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        Ok(Matrix::wrap(&self.inner - &other.inner))
    }

    fn check_same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        singular_values(self)[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.amax()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }

    /// Columns `start..start + count`.
    pub fn column_block(&self, start: usize, count: usize) -> Matrix {
        Matrix::wrap(self.inner.columns(start, count).into_owned())
    }

    /// Rows `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> Matrix {
        Matrix::wrap(self.inner.rows(start, count).into_owned())
    }

    /// Serializes as `rows cols` followed by one whitespace-separated row
    /// per line, every entry printed with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.rows(), self.cols());
        for i in 0..self.rows() {
            let line: Vec<String> = (0..self.cols())
                .map(|j| fmt_g(self.inner[(i, j)], 17))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Matrix, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("missing header line")?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| format!("bad dimension {t:?}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let [rows, cols] = dims[..] else {
            return Err(format!("header must be `rows cols`, got {header:?}"));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| format!("row {i}: bad value {tok:?}: {e}"))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(format!("row {i} has {} entries, expected {cols}", data.len() - before));
            }
        }
        if data.len() != rows * cols {
            return Err(format!("expected {rows} rows, found {}", data.len() / cols.max(1)));
        }
        Matrix::from_row_slice(rows, cols, &data).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Matrix> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Matrix::from_text(&text).map_err(|msg| Error::parse(path, msg))
    }
}

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::invalid(format!(
            "matmul: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(Matrix::wrap(&a.inner * &b.inner))
}

/// Singular values in descending order; `min(rows, cols)` of them.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut sv: Vec<f64> = a.inner.singular_values().iter().map(|s| s.abs()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Eigenvalues of a symmetric matrix in descending order.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first; an asymmetry larger than
/// `1e-10` relative to the largest entry is rejected.
pub fn sym_eigvals(a: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::invalid(format!(
            "sym_eigvals: non-square {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let asym = (&a.inner - a.inner.transpose()).amax();
    let scale = a.inner.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::invalid(format!(
            "sym_eigvals: matrix not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = (&a.inner + a.inner.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

/// Kronecker product with the block layout `[a_ij · B]`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (m1, n1) = a.shape();
    let (m2, n2) = b.shape();
    let rows = m1
        .checked_mul(m2)
        .ok_or_else(|| Error::invalid("kron: row count overflows"))?;
    let cols = n1
        .checked_mul(n2)
        .ok_or_else(|| Error::invalid("kron: column count overflows"))?;
    rows.checked_mul(cols)
        .ok_or_else(|| Error::invalid("kron: entry count overflows"))?;
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        a.inner[(i / m2, j / n2)] * b.inner[(i % m2, j % n2)]
    }))
}

/// Column-first vectorization, returned as a column vector.
pub fn vec(a: &Matrix) -> Matrix {
    let data: Vec<f64> = a.inner.iter().copied().collect();
    Matrix::wrap(DMatrix::from_vec(data.len(), 1, data))
}

/// Inverse of [`vec`]: reshapes a column vector into `rows × cols`.
pub fn unvec(v: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
    if v.cols() != 1 || v.rows() != rows * cols {
        return Err(Error::invalid(format!(
            "unvec: {}x{} vector cannot fill {rows}x{cols}",
            v.rows(),
            v.cols()
        )));
    }
    let data: Vec<f64> = v.inner.iter().copied().collect();
    Matrix::from_dmatrix(DMatrix::from_vec(rows, cols, data))
}

const LANES: usize = 8;

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline(always)]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline(always)]
fn thin_left_mul_body(st: &[f64], r: usize, w: &[f64], out: &mut [f64], k: usize) {
    for (col, o) in w.chunks_exact(r).zip(out.chunks_exact_mut(k)) {
        for (q, oq) in o.iter_mut().enumerate() {
            *oq = dot(&st[q * r..(q + 1) * r], col);
        }
    }
}

#[inline(always)]
fn thin_update_body(w: &mut [f64], r: usize, st: &[f64], t: &[f64], c: usize, coef: f64, next: Option<&mut [f64]>) {
    let k = st.len() / r;
    let mut next = next;
    for (j, col) in w.chunks_exact_mut(r).enumerate() {
        if let Some(n) = next.as_deref_mut() {
            for q in 0..k {
                axpy(t[j + q * c], col, &mut n[q * r..(q + 1) * r]);
            }
        }
        if coef != 0.0 {
            for q in 0..k {
                axpy(coef * t[j + q * c], &st[q * r..(q + 1) * r], col);
            }
        }
    }
}

// Same loops compiled with wider vectors; chosen at run time. Rust never
// fuses `a * b + c`, so both builds give identical bits.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn thin_left_mul_avx2(st: &[f64], r: usize, w: &[f64], out: &mut [f64], k: usize) {
    thin_left_mul_body(st, r, w, out, k)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn thin_update_avx2(w: &mut [f64], r: usize, st: &[f64], t: &[f64], c: usize, coef: f64, next: Option<&mut [f64]>) {
    thin_update_body(w, r, st, t, c, coef, next)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `s · w` for a short, wide `s` (k × r) and `w` (r × c), streaming `w` once.
pub(crate) fn thin_left_mul(s: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, r) = s.shape();
    assert_eq!(r, w.nrows(), "thin_left_mul: inner dimensions differ");
    let st = s.transpose();
    let mut out = DMatrix::zeros(k, w.ncols());
    if has_avx2() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: AVX2 support was detected above.
        unsafe {
            thin_left_mul_avx2(st.as_slice(), r, w.as_slice(), out.as_mut_slice(), k);
            return out;
        }
    }
    thin_left_mul_body(st.as_slice(), r, w.as_slice(), out.as_mut_slice(), k);
    out
}

/// In one sweep over the columns of `w` (r × c): returns `w · t` for a tall,
/// thin `t` (c × k) using the old `w` when `advance` is set, then applies
/// `w += coef · sᵀ · tᵀ` with `s` (k × r).
pub(crate) fn thin_update(
    w: &mut DMatrix<f64>,
    s: &DMatrix<f64>,
    t: &DMatrix<f64>,
    coef: f64,
    advance: bool,
) -> Option<DMatrix<f64>> {
    let (r, c) = w.shape();
    let k = t.ncols();
    assert_eq!((s.nrows(), s.ncols(), t.nrows()), (k, r, c), "thin_update: shapes differ");
    let st = s.transpose();
    let mut next = advance.then(|| DMatrix::zeros(r, k));
    let n = next.as_mut().map(|m| m.as_mut_slice());
    if has_avx2() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: AVX2 support was detected above.
        unsafe {
            thin_update_avx2(w.as_mut_slice(), r, st.as_slice(), t.as_slice(), c, coef, n);
            return next;
        }
    }
    thin_update_body(w.as_mut_slice(), r, st.as_slice(), t.as_slice(), c, coef, n);
    next
}
