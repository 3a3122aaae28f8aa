//! A minimal dense tensor: a shape plus finite `f64` values in row-major
//! order. Heavy math lives in explicit loops over slices; this type mostly
//! guards the shape/finiteness invariants at module boundaries.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Checked constructor: value count must equal the shape product and
    /// every value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                count,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite tensor value {bad}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by the crate's own kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; count],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let shape = vec![data.len()];
        Self::new(shape, data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged row lengths".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows when interpreted as a matrix (first dimension).
    pub fn rows(&self) -> usize {
        *self.shape.first().unwrap_or(&0)
    }

    /// Number of columns when interpreted as a matrix (second dimension).
    pub fn cols(&self) -> usize {
        *self.shape.get(1).unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }
}

/// `y = W x` for a `[rows, cols]` matrix and a `cols`-length slice.
pub(crate) fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, out.len());
    let data = w.data();
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[r] = acc;
    }
}

/// `y += W^T x` for a `[rows, cols]` matrix and a `rows`-length slice.
pub(crate) fn matvec_transpose_add(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(rows, x.len());
    debug_assert_eq!(cols, out.len());
    let data = w.data();
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let xr = x[r];
        for (o, wi) in out.iter_mut().zip(row) {
            *o += wi * xr;
        }
    }
}

/// Rank-one accumulation `W += scale * x y^T` into a `[rows, cols]` matrix.
pub(crate) fn outer_add(w: &mut Tensor, x: &[f64], y: &[f64], scale: f64) {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(rows, x.len());
    debug_assert_eq!(cols, y.len());
    let data = w.data_mut();
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let xr = scale * x[r];
        for (wi, yi) in row.iter_mut().zip(y) {
            *wi += xr * yi;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_mismatch() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn row_access() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(t.at(0, 2), 3.0);
    }

    #[test]
    fn matvec_small() {
        let w = Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]).unwrap();
        let mut out = [0.0; 2];
        matvec(&w, &[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [-2.0, 4.0]);
    }
}
