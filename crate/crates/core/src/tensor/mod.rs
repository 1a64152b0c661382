//! Dense tensors, their on-disk interchange format and the feature-map
//! layout operations everything else is built on.
//!
//! Feature maps are held channel-last (`n × h × w × c`). A batch flattens to
//! a matrix `V` with one row per spatial position, row index
//! `i·h·w + j·w + k` for image `i` at position `(j, k)`.

pub mod archive;
pub mod npy;

use ndarray::{Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use archive::{read_archive, read_archive_requiring, write_archive, TensorMap};
pub use npy::{read_tensor, write_tensor};

/// Element width of a tensor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Row-major dense tensor. Values are always held as `f64`; `dtype` records
/// the on-disk width so that files round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub dtype: Dtype,
}

impl Tensor {
    /// Builds a 64-bit tensor, rejecting a shape/length mismatch and
    /// non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::with_dtype(shape, data, Dtype::F64)
    }

    pub fn with_dtype(shape: Vec<usize>, data: Vec<f64>, dtype: Dtype) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data, dtype })
    }

    pub fn from_matrix(m: &Array2<f64>) -> Self {
        let (r, c) = m.dim();
        Self {
            shape: vec![r, c],
            data: m.iter().copied().collect(),
            dtype: Dtype::F64,
        }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
            dtype: Dtype::F64,
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Views a rank-2 tensor as a matrix.
    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok(Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .expect("shape checked on construction"))
    }

    /// Returns the values of a rank-1 tensor (or a rank-2 tensor with a
    /// single row or column).
    pub fn to_vector(&self) -> Result<Vec<f64>> {
        match self.shape.as_slice() {
            [_] => Ok(self.data.clone()),
            [1, _] | [_, 1] => Ok(self.data.clone()),
            _ => Err(Error::Shape(format!(
                "expected a vector, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn to_array4(&self) -> Result<Array4<f64>> {
        match *self.shape.as_slice() {
            [a, b, c, d] => Ok(Array4::from_shape_vec((a, b, c, d), self.data.clone())
                .expect("shape checked on construction")),
            _ => Err(Error::Shape(format!(
                "expected a rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn with_file_dtype(mut self, dtype: Dtype) -> Self {
        if dtype == Dtype::F32 {
            self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self.dtype = dtype;
        self
    }
}

/// A batch of feature maps `n × h × w × c`, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapBatch {
    data: Array4<f64>,
    non_negative: bool,
}

impl FeatureMapBatch {
    /// Wraps activations that must be non-negative (post-relu layers).
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let batch = Self::signed(data)?;
        if let Some((idx, &value)) = batch.data.indexed_iter().find(|(_, v)| **v < 0.0) {
            let (i, j, k, ch) = idx;
            let (_, h, w, _) = batch.data.dim();
            return Err(Error::NegativeInput {
                row: i * h * w + j * w + k,
                col: ch,
                value,
            });
        }
        Ok(Self {
            non_negative: true,
            ..batch
        })
    }

    /// Wraps activations without the non-negativity requirement.
    pub fn signed(data: Array4<f64>) -> Result<Self> {
        let (n, h, w, c) = data.dim();
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!(
                "feature maps need non-zero dimensions, got {:?}",
                data.dim()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            data,
            non_negative: false,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.to_array4()?)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: self.data.shape().to_vec(),
            data: self.data.iter().copied().collect(),
            dtype: Dtype::F64,
        }
    }

    pub fn array(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array4<f64> {
        self.data
    }

    pub fn is_non_negative(&self) -> bool {
        self.non_negative
    }

    pub fn n(&self) -> usize {
        self.data.dim().0
    }
    pub fn h(&self) -> usize {
        self.data.dim().1
    }
    pub fn w(&self) -> usize {
        self.data.dim().2
    }
    pub fn c(&self) -> usize {
        self.data.dim().3
    }

    pub fn positions_per_image(&self) -> usize {
        self.h() * self.w()
    }

    /// The single-image batch for image `i`.
    pub fn image(&self, i: usize) -> Result<Self> {
        if i >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "image index {i} out of range for batch of {}",
                self.n()
            )));
        }
        let data = self
            .data
            .slice(ndarray::s![i..i + 1, .., .., ..])
            .to_owned();
        Ok(Self {
            data,
            non_negative: self.non_negative,
        })
    }

    /// Root-mean-square of all entries.
    pub fn rms(&self) -> f64 {
        let sq: f64 = self.data.iter().map(|v| v * v).sum();
        (sq / self.data.len() as f64).sqrt()
    }
}

/// Flattens `n × h × w × c` to the `(n·h·w) × c` matrix `V`.
pub fn flatten_channels(a: &FeatureMapBatch) -> Array2<f64> {
    let (n, h, w, c) = a.data.dim();
    a.data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * h * w, c))
        .expect("contiguous reshape")
}

/// Inverse of [`flatten_channels`]. The result carries no non-negativity
/// guarantee, since reconstructions from signed reducers may dip below zero.
pub fn unflatten(v: &Array2<f64>, n: usize, h: usize, w: usize) -> Result<FeatureMapBatch> {
    let (rows, c) = v.dim();
    if rows != n * h * w {
        return Err(Error::Shape(format!(
            "matrix has {rows} rows but n·h·w = {}",
            n * h * w
        )));
    }
    let data = v
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, h, w, c))
        .expect("row count checked");
    FeatureMapBatch::signed(data)
}

/// Global average pooling over the spatial axes, giving an `n × c` matrix.
pub fn gap(a: &FeatureMapBatch) -> Array2<f64> {
    let hw = a.positions_per_image();
    block_means(flatten_channels(a).view(), hw)
}

/// Means of consecutive blocks of `block` rows: row `i` of the output is the
/// mean of rows `i·block .. (i+1)·block`.
pub fn block_means(v: ArrayView2<'_, f64>, block: usize) -> Array2<f64> {
    let (rows, c) = v.dim();
    assert!(block > 0 && rows % block == 0, "rows must split into blocks");
    let n = rows / block;
    let mut out = Array2::zeros((n, c));
    for (i, chunk) in v.axis_chunks_iter(Axis(0), block).enumerate() {
        let mut acc = out.row_mut(i);
        for row in chunk.rows() {
            acc += &row;
        }
        acc /= block as f64;
    }
    out
}

/// Converts an `n × c × h × w` tensor to a channel-last batch.
pub fn to_channel_last(t: &Tensor) -> Result<FeatureMapBatch> {
    if t.rank() != 4 {
        return Err(Error::Shape(format!(
            "expected a rank-4 channel-first tensor, got shape {:?}",
            t.shape
        )));
    }
    let a = t.to_array4()?.permuted_axes([0, 2, 3, 1]);
    FeatureMapBatch::new(a.as_standard_layout().into_owned())
}

/// Converts a channel-last batch back to an `n × c × h × w` tensor.
pub fn to_channel_first(a: &FeatureMapBatch) -> Tensor {
    let p = a.data.view().permuted_axes([0, 3, 1, 2]);
    Tensor {
        shape: p.shape().to_vec(),
        data: p.iter().copied().collect(),
        dtype: Dtype::F64,
    }
}
