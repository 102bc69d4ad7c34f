//! Dense row-major f64 matrices. Scalars are 1x1, column vectors n x 1.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Array { rows, cols, data }
    }

    pub fn scalar(x: f64) -> Self {
        Array::from_vec(1, 1, vec![x])
    }

    /// n x 1 column vector.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Array::from_vec(n, 1, data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Extract row `i` as a 1 x cols array.
    pub fn row(&self, i: usize) -> Array {
        let start = i * self.cols;
        Array::from_vec(1, self.cols, self.data[start..start + self.cols].to_vec())
    }

    /// Stack the selected rows into a new array.
    pub fn select_rows(&self, indices: &[usize]) -> Array {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            let start = i * self.cols;
            data.extend_from_slice(&self.data[start..start + self.cols]);
        }
        Array::from_vec(indices.len(), self.cols, data)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// self @ other for plain (non-taped) evaluation.
    pub fn matmul(&self, other: &Array) -> Result<Array> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Array::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[p * n + j];
                }
            }
        }
        Ok(out)
    }
}
