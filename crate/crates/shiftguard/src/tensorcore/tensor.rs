//! Dense row-major matrices of 64-bit floats.

use crate::error::{Error, Result};
use crate::tensorcore::tape::Trace;

/// A dense `rows x cols` matrix of `f64`, stored row-major.
///
/// Tensors are plain values: cloning copies the data, and no operation
/// mutates its inputs. A tensor produced by a [`Tape`](super::Tape)
/// operation on traced inputs additionally carries a handle back into
/// that tape so gradients can be routed to it.
#[derive(Debug, Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub(crate) trace: Option<Trace>,
}

impl Tensor {
    /// Builds a tensor from row-major data. Errors when the data length
    /// does not equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            trace: None,
        })
    }

    /// Builds a tensor from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape(
                    "Tensor::from_rows",
                    format!("ragged rows: expected width {}, got {}", c, row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            rows: r,
            cols: c,
            data,
            trace: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            trace: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
            trace: None,
        }
    }

    /// The `n x n` identity matrix.
    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// An `n x 1` column vector.
    pub fn column(values: Vec<f64>) -> Tensor {
        let rows = values.len();
        Tensor {
            rows,
            cols: 1,
            data: values,
            trace: None,
        }
    }

    /// A `1 x n` row vector.
    pub fn row(values: Vec<f64>) -> Tensor {
        let cols = values.len();
        Tensor {
            rows: 1,
            cols,
            data: values,
            trace: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index out of range");
        self.data[i * self.cols + j]
    }

    /// Row `i` as a slice.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row index out of range");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single entry of a `1 x 1` tensor.
    pub fn scalar(&self) -> f64 {
        assert!(
            self.rows == 1 && self.cols == 1,
            "scalar() on a {}x{} tensor",
            self.rows,
            self.cols
        );
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry-wise difference between two equal-shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when every entry is bit-identical to `other`'s.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// A copy that carries no tape handle.
    pub fn detach(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
            trace: None,
        }
    }

    /// Nested row-major `Vec` form, used by the JSON checkpoint formats.
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row_slice(i).to_vec()).collect()
    }

    /// Inverse of [`Tensor::to_nested`].
    pub fn from_nested(nested: &[Vec<f64>]) -> Result<Tensor> {
        Tensor::from_rows(nested)
    }
}

/// Value equality on shape and entries; the tape handle is ignored.
impl PartialEq for Tensor {
    fn eq(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}
