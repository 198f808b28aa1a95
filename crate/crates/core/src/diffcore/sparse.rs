//! Compressed sparse row matrices with the two products the model needs:
//! `A · X` for propagation and `Aᵀ · G` for the backward pass.

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates and wraps raw CSR arrays.
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |msg: &str| Error::Input(format!("invalid CSR matrix: {msg}"));
        if indptr.len() != rows + 1 || indptr[0] != 0 {
            return Err(bad("indptr length"));
        }
        if indices.len() != values.len() || *indptr.last().unwrap() != indices.len() {
            return Err(bad("nnz mismatch"));
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return Err(bad("indptr not monotone"));
            }
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.iter().any(|&c| c >= cols) {
                return Err(bad("column index out of bounds"));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("column indices not strictly increasing"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse matrix values".into()));
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|t| t.0 >= rows || t.1 >= cols) {
            return Err(Error::Input(format!(
                "triplet ({r}, {c}) outside {rows}x{cols}"
            )));
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self::new(rows, cols, indptr, indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Keeps every nonzero of a dense matrix.
    pub fn from_dense(dense: &Tensor) -> Self {
        let mut trip = Vec::new();
        for r in 0..dense.rows() {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != 0.0 {
                    trip.push((r, c, v));
                }
            }
        }
        Self::from_triplets(dense.rows(), dense.cols(), &trip).expect("dense entries are in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Iterates over stored entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, vals) = self.row(r);
            idx.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Returns a matrix with the same pattern and transformed values.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                out.values[p] = f(r, self.indices[p], self.values[p]);
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let trip: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols, self.rows, &trip).expect("transpose stays in range")
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    /// `self · x` for a dense `x` with `self.cols()` rows.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.cols {
            return Err(Error::shape("spmm", &self.shape(), x.shape()));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(&[self.rows, d]);
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let dst = out.row_mut(r);
            for (&c, &w) in idx.iter().zip(vals) {
                for (o, &xv) in dst.iter_mut().zip(x.row(c)) {
                    *o += w * xv;
                }
            }
        }
        Ok(out)
    }

    /// Accumulates `selfᵀ · g` into `acc` (shape `cols x d`).
    pub fn transpose_matmul_acc(&self, g: &Tensor, acc: &mut Tensor) {
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let grow = g.row(r);
            for (&c, &w) in idx.iter().zip(vals) {
                for (a, &gv) in acc.row_mut(c).iter_mut().zip(grow) {
                    *a += w * gv;
                }
            }
        }
    }
}
