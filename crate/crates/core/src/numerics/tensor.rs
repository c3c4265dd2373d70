use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
///
/// Construction through [`Tensor::new`] rejects inconsistent shapes and
/// non-finite values; arithmetic inside the crate may produce non-finite
/// intermediates, which callers check with [`Tensor::is_finite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.values)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape must be non-empty with positive dimensions, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::shape("tensor construction", len, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor value at flat index {i}")));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; len],
        }
    }

    /// Matrix with `rows × cols` entries.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("tensor rows", cols, bad.len()));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    /// Skips validation; used for freshly computed intermediates.
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Number of rows when viewed as a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols())
    }

    /// Gathers rows by index into a new matrix. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut values = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_parts(shape, values)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let cols = first.cols();
        let mut values = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(Error::shape("concat rows", cols, p.cols()));
            }
            rows += p.rows();
            values.extend_from_slice(&p.values);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor::from_parts(shape, values))
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.values.iter().map(|&v| f(v)).collect())
    }
}

/// `out[r][o] = Σ_i a[r][i] · w[o][i] + b[o]` for `a: rows×in`, `w: out×in`.
pub(crate) fn affine(a: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (rows, inp) = (a.rows(), a.cols());
    let out = w.rows();
    let mut values = vec![0.0; rows * out];
    for r in 0..rows {
        let ar = a.row(r);
        let dst = &mut values[r * out..(r + 1) * out];
        for (o, d) in dst.iter_mut().enumerate() {
            let wr = &w.values[o * inp..(o + 1) * inp];
            let mut acc = 0.0;
            for (x, y) in ar.iter().zip(wr) {
                acc += x * y;
            }
            *d = acc + b.values[o];
        }
    }
    Tensor::from_parts(vec![rows, out], values)
}
