use rayon::prelude::*;

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Real-valued matrix in compressed-sparse-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from raw CSR arrays. Column indices must be sorted within each row.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1
            || indices.len() != values.len()
            || indptr[rows] != indices.len()
        {
            return Err(Error::ShapeMismatch {
                op: "from_csr",
                lhs: (rows, cols),
                rhs: (indptr.len(), indices.len()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&c| c >= cols) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                node_count: cols,
            });
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// `self · h`
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != h.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                lhs: (self.rows, self.cols),
                rhs: h.shape(),
            });
        }
        let d = h.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        if d == 0 {
            return Ok(out);
        }
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            for (c, v) in self.row(r) {
                for (o, &x) in out_row.iter_mut().zip(h.row(c)) {
                    *o += v * x;
                }
            }
        };
        if self.nnz() * d >= 1 << 15 {
            out.data_mut()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(kernel);
        } else {
            out.data_mut().chunks_mut(d).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · g`
    pub fn spmm_transpose(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != g.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm_transpose",
                lhs: (self.rows, self.cols),
                rhs: g.shape(),
            });
        }
        let d = g.cols();
        let mut out = DenseMatrix::zeros(self.cols, d);
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row(r) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(g_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }
}
