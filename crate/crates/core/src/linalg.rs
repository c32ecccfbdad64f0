//! Small dense linear algebra used on the hot paths.
//!
//! Matrices here are tiny (a handful of regressors), so everything works on
//! flat row-major slices with caller-provided scratch space. The heavier but
//! less frequent least-squares fits go through `nalgebra`'s QR.

use nalgebra::{DMatrix, DVector};

/// Default cap on the (column-equilibrated) condition number of a Gram matrix.
pub const CONDITION_CAP: f64 = 1e10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "RowMat::from_vec: length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "RowMat::from_rows: ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> RowMat {
        RowMat { rows: end - start, cols: self.cols, data: self.data[start * self.cols..end * self.cols].to_vec() }
    }

    /// Copy of the matrix with the given columns, in order.
    pub fn select_cols(&self, idx: &[usize]) -> RowMat {
        let mut out = RowMat::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (k, &j) in idx.iter().enumerate() {
                out.set(i, k, self.get(i, j));
            }
        }
        out
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut out = RowMat::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Upper-triangle index pairs `(i, j)` with `i <= j`, in row order.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

/// In-place Cholesky factorisation of the symmetric `n x n` matrix `a`
/// (row-major, lower triangle used). On success the lower triangle holds `L`
/// and the function returns a condition estimate `(max L_ii / min L_ii)^2`
/// taken after unit-diagonal equilibration. Returns `None` if `a` is not
/// numerically positive definite.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Option<f64> {
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for j in 0..n {
        let ajj = a[j * n + j];
        if !(ajj > 0.0) || !ajj.is_finite() {
            return None;
        }
        let mut d = ajj;
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        // Relative pivot against the original diagonal: equilibrated pivot.
        let rel = d / ajj;
        if !(rel > 1e-14) {
            return None;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        let r = rel.sqrt();
        min_ratio = min_ratio.min(r);
        max_ratio = max_ratio.max(r);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ljj;
        }
    }
    if n == 0 {
        return Some(1.0);
    }
    Some((max_ratio / min_ratio).powi(2))
}

/// Solves `L L' x = b` in place given the Cholesky factor from
/// [`cholesky_in_place`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i + 1];
        let s = b[i] - dot(&row[..i], &b[..i]);
        b[i] = s / row[i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Inverse of an SPD matrix from its Cholesky factor, written to `out`.
pub fn cholesky_inverse(l: &[f64], n: usize, out: &mut [f64]) {
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        cholesky_solve(l, n, &mut col);
        for i in 0..n {
            out[i * n + j] = col[i];
        }
    }
}

/// Exact condition number of the column-equilibrated Gram matrix `X'X`,
/// via singular values of the equilibrated `X`.
pub fn equilibrated_gram_condition(x: &DMatrix<f64>) -> f64 {
    let mut xs = x.clone();
    for mut c in xs.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        } else {
            return f64::INFINITY;
        }
    }
    let sv = xs.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).powi(2)
    }
}

/// Least-squares solution through Householder QR. Returns `None` when the
/// equilibrated Gram condition exceeds `cap`.
pub fn qr_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, cap: f64) -> Result<DVector<f64>, f64> {
    let cond = equilibrated_gram_condition(x);
    if !(cond <= cap) {
        return Err(cond);
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    let r = qr.r();
    match r.solve_upper_triangular(&qty) {
        Some(b) => Ok(b),
        None => Err(f64::INFINITY),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_roundtrip() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = a;
        let cond = cholesky_in_place(&mut l, 3).unwrap();
        assert!(cond >= 1.0);
        let mut b = [1.0, 2.0, 3.0];
        cholesky_solve(&l, 3, &mut b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * b[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let mut inv = [0.0; 9];
        cholesky_inverse(&l, 3, &mut inv);
        for i in 0..3 {
            for j in 0..3 {
                let p: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let mut a = [1.0, 1.0, 1.0, 1.0];
        assert!(cholesky_in_place(&mut a, 2).is_none());
        let mut b = [-1.0];
        assert!(cholesky_in_place(&mut b, 1).is_none());
    }

    #[test]
    fn equilibration_ignores_column_scale() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let mut scaled = x.clone();
        scaled.column_mut(1).scale_mut(1e6);
        let a = equilibrated_gram_condition(&x);
        let b = equilibrated_gram_condition(&scaled);
        assert!((a - b).abs() / a < 1e-9);
    }
}
