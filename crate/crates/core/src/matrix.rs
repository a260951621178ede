//! Sparse row matrices, small dense matrices, Gram products and the spectral
//! helpers (symmetric eigendecomposition, pseudoinverse square-root factors)
//! that every pipeline is built on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::par::{map_chunks, ROW_CHUNK};

/// Default numerical-rank cutoff relative to the largest eigenvalue.
pub const DEFAULT_REL_CUTOFF: f64 = 1e-10;
/// Default cap on the column count for dense `d x d` work.
pub const DEFAULT_MAX_DIM: usize = 5000;
/// Relative tolerance for negative eigenvalues of a PSD input.
pub const PSD_TOL: f64 = 1e-8;
/// Relative asymmetry accepted by [`sym_eigen`].
pub const SYMMETRY_TOL: f64 = 1e-9;

const EIGEN_MAX_ITER: usize = 10_000;

/// Borrowed view of one sparse row.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub cols: &'a [usize],
    pub vals: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.cols.iter().copied().zip(self.vals.iter().copied())
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.iter().map(|(j, v)| v * x[j]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }
}

/// Row-indexed sparse matrix (CSR). Column indices within a row are strictly
/// increasing and no explicit zeros are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRowMatrix {
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRowMatrix {
    /// A matrix with `n_cols` columns and no rows.
    pub fn empty(n_cols: usize) -> Self {
        SparseRowMatrix {
            n_cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseRowMatrix {
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::empty(d);
        for i in 0..d {
            m.push_sorted_row(&[i], &[1.0]);
        }
        m
    }

    pub fn with_capacity(n_cols: usize, rows: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        SparseRowMatrix {
            n_cols,
            row_ptr,
            col_idx: Vec::with_capacity(nnz),
            values: Vec::with_capacity(nnz),
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// resulting zeros dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(SketchError::contract(format!(
                    "entry ({i}, {j}) outside {n_rows}x{n_cols}"
                )));
            }
            if !v.is_finite() {
                return Err(SketchError::contract(format!("non-finite entry at ({i}, {j})")));
            }
            per_row[i].push((j, v));
        }
        let mut m = Self::empty(n_cols);
        for row in per_row {
            m.push_row(row);
        }
        Ok(m)
    }

    /// Builds from a row-major dense buffer.
    pub fn from_dense(n_rows: usize, n_cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(SketchError::contract(format!(
                "dense buffer has {} entries, expected {}",
                data.len(),
                n_rows * n_cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SketchError::contract("non-finite dense entry"));
        }
        let mut m = Self::with_capacity(n_cols, n_rows, data.len());
        for row in data.chunks(n_cols.max(1)).take(n_rows) {
            m.push_dense_row(row);
        }
        if n_cols == 0 {
            m.row_ptr = vec![0; n_rows + 1];
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(SketchError::contract("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_dense(rows.len(), d, &flat)
    }

    /// Appends a row given as unsorted `(col, value)` pairs; duplicates are
    /// summed, zeros dropped. Panics on an out-of-range column.
    pub fn push_row(&mut self, mut entries: Vec<(usize, f64)>) {
        entries.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        let start = self.col_idx.len();
        for (j, v) in entries {
            assert!(j < self.n_cols, "column {j} out of range {}", self.n_cols);
            if last == Some(j) {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.col_idx.push(j);
                self.values.push(v);
                last = Some(j);
            }
        }
        // Drop zeros produced by cancellation.
        let mut w = start;
        for r in start..self.col_idx.len() {
            if self.values[r] != 0.0 {
                self.col_idx[w] = self.col_idx[r];
                self.values[w] = self.values[r];
                w += 1;
            }
        }
        self.col_idx.truncate(w);
        self.values.truncate(w);
        self.row_ptr.push(self.col_idx.len());
    }

    /// Appends a row whose columns are already strictly increasing.
    pub fn push_sorted_row(&mut self, cols: &[usize], vals: &[f64]) {
        debug_assert_eq!(cols.len(), vals.len());
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        for (&j, &v) in cols.iter().zip(vals) {
            debug_assert!(j < self.n_cols);
            if v != 0.0 {
                self.col_idx.push(j);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    /// Appends a dense row, skipping zeros.
    pub fn push_dense_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n_cols);
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.col_idx.push(j);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    /// Appends a row of another matrix multiplied by `scale`.
    pub fn push_scaled_row(&mut self, row: RowView<'_>, scale: f64) {
        for (j, v) in row.iter() {
            let s = v * scale;
            if s != 0.0 {
                self.col_idx.push(j);
                self.values.push(s);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        RowView {
            cols: &self.col_idx[a..b],
            vals: &self.values[a..b],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = RowView<'_>> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    /// Checks the structural invariants; used by tests and after I/O.
    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.first() != Some(&0) || *self.row_ptr.last().unwrap() != self.values.len() {
            return Err(SketchError::contract("row pointer inconsistent with nnz"));
        }
        for i in 0..self.n_rows() {
            let r = self.row(i);
            if r.cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SketchError::contract(format!("row {i} columns not increasing")));
            }
            if r.cols.last().is_some_and(|&j| j >= self.n_cols) {
                return Err(SketchError::contract(format!("row {i} column out of range")));
            }
            if r.vals.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                return Err(SketchError::contract(format!("row {i} stores a zero or non-finite value")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zeros(self.n_rows(), self.n_cols);
        }
        SparseRowMatrix {
            n_cols: self.n_cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// New matrix whose `t`-th row is `scales[t] * self.row(indices[t])`.
    pub fn select_rows(&self, indices: &[usize], scales: &[f64]) -> Self {
        debug_assert_eq!(indices.len(), scales.len());
        let nnz = indices.iter().map(|&i| self.row(i).nnz()).sum();
        let mut out = Self::with_capacity(self.n_cols, indices.len(), nnz);
        for (&i, &s) in indices.iter().zip(scales) {
            out.push_scaled_row(self.row(i), s);
        }
        out
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[&SparseRowMatrix]) -> Result<Self> {
        let d = parts.first().map_or(0, |m| m.n_cols);
        if parts.iter().any(|m| m.n_cols != d) {
            return Err(SketchError::contract("vstack: column counts differ"));
        }
        let mut out = Self::with_capacity(
            d,
            parts.iter().map(|m| m.n_rows()).sum(),
            parts.iter().map(|m| m.nnz()).sum(),
        );
        for m in parts {
            for r in m.rows() {
                out.push_sorted_row(r.cols, r.vals);
            }
        }
        Ok(out)
    }

    /// `[self, column]`, used to augment a design matrix with its target.
    pub fn append_column(&self, column: &[f64]) -> Result<Self> {
        if column.len() != self.n_rows() {
            return Err(SketchError::contract(format!(
                "column length {} != rows {}",
                column.len(),
                self.n_rows()
            )));
        }
        let mut out = Self::with_capacity(self.n_cols + 1, self.n_rows(), self.nnz() + column.len());
        for (i, &b) in column.iter().enumerate() {
            let r = self.row(i);
            out.col_idx.extend_from_slice(r.cols);
            out.values.extend_from_slice(r.vals);
            if b != 0.0 {
                out.col_idx.push(self.n_cols);
                out.values.push(b);
            }
            out.row_ptr.push(out.col_idx.len());
        }
        Ok(out)
    }

    /// Splits off the last column: returns the leading columns and the last one densely.
    pub fn split_last_column(&self) -> (Self, Vec<f64>) {
        let d = self.n_cols.saturating_sub(1);
        let mut a = Self::with_capacity(d, self.n_rows(), self.nnz());
        let mut b = vec![0.0; self.n_rows()];
        for (i, r) in self.rows().enumerate() {
            let mut cols = r.cols;
            let mut vals = r.vals;
            if cols.last() == Some(&d) {
                b[i] = *vals.last().unwrap();
                cols = &cols[..cols.len() - 1];
                vals = &vals[..vals.len() - 1];
            }
            a.push_sorted_row(cols, vals);
        }
        (a, b)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols);
        self.rows().map(|r| r.dot(x)).collect()
    }

    /// `self^T y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (r, &yi) in self.rows().zip(y) {
            for (j, v) in r.iter() {
                out[j] += v * yi;
            }
        }
        out
    }

    /// Dense product `self * m` (`n x m.n_cols`), row-parallel.
    pub fn mul_dense(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n_cols, m.n_rows, "mul_dense: inner dimension mismatch");
        let k = m.n_cols;
        let chunks = map_chunks(self.n_rows(), ROW_CHUNK, |_, range| {
            let mut out = vec![0.0; range.len() * k];
            for (t, i) in range.enumerate() {
                let dst = &mut out[t * k..(t + 1) * k];
                for (j, v) in self.row(i).iter() {
                    let src = m.row(j);
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            }
            out
        });
        DenseMatrix {
            n_rows: self.n_rows(),
            n_cols: k,
            data: chunks.concat(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows(), self.n_cols);
        for (i, r) in self.rows().enumerate() {
            for (j, v) in r.iter() {
                d.set(i, j, v);
            }
        }
        d
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Row indices of rows with no stored entries.
    pub fn is_row_empty(&self, i: usize) -> bool {
        self.row_ptr[i] == self.row_ptr[i + 1]
    }
}

/// Small dense row-major matrix for `d x d` and `d x r` objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_row_major(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(SketchError::contract(format!(
                "dense buffer has {} entries, expected {}x{}",
                data.len(),
                n_rows,
                n_cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SketchError::contract("non-finite dense entry"));
        }
        Ok(DenseMatrix { n_rows, n_cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != c) {
            return Err(SketchError::contract("ragged rows"));
        }
        Self::from_row_major(rows.len(), c, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.n_cols, other.n_rows, "matmul: inner dimension mismatch");
        let mut out = Self::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            let dst = &mut out.data[i * other.n_cols..(i + 1) * other.n_cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in dst.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        DenseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Self {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        DenseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Self {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        DenseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n_rows {
            for j in i + 1..self.n_cols {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows, self.n_cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }

    pub fn to_sparse(&self) -> SparseRowMatrix {
        let mut s = SparseRowMatrix::with_capacity(self.n_cols, self.n_rows, self.data.len());
        for i in 0..self.n_rows {
            s.push_dense_row(self.row(i));
        }
        s
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn merge(&mut self, other: &Compensated) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `A^T A` with the default dimension cap.
pub fn gram(a: &SparseRowMatrix) -> Result<DenseMatrix> {
    gram_with_cap(a, DEFAULT_MAX_DIM)
}

/// `A^T A = sum_i a_i^T a_i`, accumulated with compensated summation in
/// fixed row chunks and mirrored from the upper triangle, so the result is
/// exactly symmetric and independent of the thread count.
pub fn gram_with_cap(a: &SparseRowMatrix, max_dim: usize) -> Result<DenseMatrix> {
    let d = a.n_cols();
    if d > max_dim {
        return Err(SketchError::Capacity {
            what: "gram dimension",
            requested: d,
            cap: max_dim,
        });
    }
    let partials = map_chunks(a.n_rows(), ROW_CHUNK, |_, range| {
        let mut acc = vec![Compensated::default(); d * d];
        for i in range {
            let r = a.row(i);
            for (p, (&jp, &vp)) in r.cols.iter().zip(r.vals).enumerate() {
                let base = jp * d;
                for (&jq, &vq) in r.cols[p..].iter().zip(&r.vals[p..]) {
                    acc[base + jq].add(vp * vq);
                }
            }
        }
        acc
    });
    let mut total = vec![Compensated::default(); d * d];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let mut g = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = total[i * d + j].value();
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    Ok(g)
}

/// Full eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: DenseMatrix,
    /// Eigenvalues strictly above `rel_cutoff * lambda_max`.
    pub rank: usize,
}

impl SymmetricEigen {
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Columns `range` of the eigenvector matrix.
    pub fn vectors(&self, range: std::ops::Range<usize>) -> DenseMatrix {
        let d = self.eigenvectors.n_rows();
        let mut out = DenseMatrix::zeros(d, range.len());
        for i in 0..d {
            for (t, j) in range.clone().enumerate() {
                out.set(i, t, self.eigenvectors.get(i, j));
            }
        }
        out
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let d = self.eigenvectors.n_rows();
        let mut out = DenseMatrix::zeros(d, d);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            for i in 0..d {
                let vi = self.eigenvectors.get(i, k) * lam;
                for j in 0..d {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + vi * self.eigenvectors.get(j, k));
                }
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending and numerical rank counted against `rel_cutoff * lambda_max`.
pub fn sym_eigen(m: &DenseMatrix, rel_cutoff: f64) -> Result<SymmetricEigen> {
    let d = m.n_rows();
    if m.n_cols() != d {
        return Err(SketchError::contract(format!(
            "sym_eigen needs a square matrix, got {}x{}",
            d,
            m.n_cols()
        )));
    }
    if d == 0 {
        return Ok(SymmetricEigen {
            eigenvalues: Vec::new(),
            eigenvectors: DenseMatrix::zeros(0, 0),
            rank: 0,
        });
    }
    let scale = m.max_abs();
    if m.max_asymmetry() > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(SketchError::contract(format!(
            "matrix is not symmetric (asymmetry {:e})",
            m.max_asymmetry()
        )));
    }
    let mut sym = m.to_nalgebra();
    sym = (&sym + sym.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(SketchError::NonConvergence {
            iterations: EIGEN_MAX_ITER,
        })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DenseMatrix::zeros(d, d);
    for (t, &k) in order.iter().enumerate() {
        for i in 0..d {
            vecs.set(i, t, eig.eigenvectors[(i, k)]);
        }
    }
    let lmax = eigenvalues[0];
    let rank = if lmax > 0.0 {
        eigenvalues.iter().filter(|&&l| l > rel_cutoff * lmax).count()
    } else {
        0
    };
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors: vecs,
        rank,
    })
}

fn check_psd(eig: &SymmetricEigen) -> Result<()> {
    let lmin = eig.lambda_min();
    let tol = PSD_TOL * eig.lambda_max().abs();
    if lmin < -tol {
        return Err(SketchError::NotPsd {
            eigenvalue: lmin,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Factor `C` (`d x r`, `r` the numerical rank) with `C C^T = M^+`, i.e.
/// `C = V_r diag(lambda_r^{-1/2})`. Then `C^T M C = I_r`.
pub fn pinv_sqrt_factor(m: &DenseMatrix, rel_cutoff: f64) -> Result<DenseMatrix> {
    let eig = sym_eigen(m, rel_cutoff)?;
    check_psd(&eig)?;
    Ok(pinv_sqrt_from_eigen(&eig))
}

pub(crate) fn pinv_sqrt_from_eigen(eig: &SymmetricEigen) -> DenseMatrix {
    let d = eig.eigenvectors.n_rows();
    let r = eig.rank;
    let mut c = DenseMatrix::zeros(d, r);
    for (k, &lam) in eig.eigenvalues.iter().take(r).enumerate() {
        let s = lam.sqrt().recip();
        for i in 0..d {
            c.set(i, k, eig.eigenvectors.get(i, k) * s);
        }
    }
    c
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix.
pub fn pinv_psd(m: &DenseMatrix, rel_cutoff: f64) -> Result<DenseMatrix> {
    let c = pinv_sqrt_factor(m, rel_cutoff)?;
    Ok(c.matmul(&c.transpose()))
}

/// `(sum |x_i|^p)^{1/p}`, evaluated with max-scaling to avoid overflow.
pub fn vector_p_norm(x: &[f64], p: f64) -> f64 {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    if p == 2.0 {
        return x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt() * m;
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p) * m
}

/// Entrywise p-norm, treating all entries as one vector.
pub fn entrywise_p_norm(m: &SparseRowMatrix, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(SketchError::param(format!("p must be a finite value >= 1, got {p}")));
    }
    let v = vector_p_norm(&m.values, p);
    if !v.is_finite() {
        return Err(SketchError::Overflow(format!("entrywise {p}-norm")));
    }
    Ok(v)
}

/// Entrywise p-norm of a dense matrix (|||U|||_p).
pub fn dense_entrywise_p_norm(m: &DenseMatrix, p: f64) -> f64 {
    vector_p_norm(m.as_slice(), p)
}
