//! Square sparse matrices in compressed sparse row form.

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// An `n x n` sparse matrix in CSR layout.
///
/// `row_ptr` has length `n + 1` and is nondecreasing; column indices
/// within each row are strictly increasing. Instances are immutable
/// after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from raw components, validating the layout.
    pub fn new(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<SparseMatrix> {
        if row_ptr.len() != n + 1 {
            return Err(Error::shape(
                "SparseMatrix::new",
                format!("row_ptr length {} for n={}", row_ptr.len(), n),
            ));
        }
        if row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::shape(
                "SparseMatrix::new",
                "row_ptr endpoints must span the index/value arrays".to_string(),
            ));
        }
        for w in row_ptr.windows(2) {
            if w[1] < w[0] {
                return Err(Error::arg("SparseMatrix::new", "row_ptr must be nondecreasing"));
            }
        }
        for i in 0..n {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for (k, &j) in row.iter().enumerate() {
                if j >= n {
                    return Err(Error::arg(
                        "SparseMatrix::new",
                        format!("column {} out of range in row {}", j, i),
                    ));
                }
                if k > 0 && row[k - 1] >= j {
                    return Err(Error::arg(
                        "SparseMatrix::new",
                        format!("columns in row {} must be strictly increasing", i),
                    ));
                }
            }
        }
        Ok(SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from unordered `(row, col, value)` triplets. Duplicate
    /// coordinates are rejected.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseMatrix> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::arg(
                    "SparseMatrix::from_triplets",
                    format!("duplicate entry at ({}, {})", w[0].0, w[0].1),
                ));
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(i, j, v) in &sorted {
            if i >= n || j >= n {
                return Err(Error::arg(
                    "SparseMatrix::from_triplets",
                    format!("entry ({}, {}) out of range for n={}", i, j, n),
                ));
            }
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix::new(n, row_ptr, col_idx, values)
    }

    /// The `n x n` identity in CSR form.
    pub fn identity(n: usize) -> SparseMatrix {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// An `n x n` matrix with no stored entries.
    pub fn empty(n: usize) -> SparseMatrix {
        SparseMatrix {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// The `(column, value)` pairs stored in row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// Number of stored entries in row `i`.
    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// The stored value at `(i, j)`, or `None` when the entry is absent.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[lo + k])
    }

    /// Dense equivalent, for oracles and small-scale checks.
    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.data_mut()[i * self.n + j] = v;
            }
        }
        out
    }

    /// True when the stored pattern and values are symmetric.
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                match self.get(j, i) {
                    Some(w) if w == v => {}
                    _ => return false,
                }
            }
        }
        true
    }
}
