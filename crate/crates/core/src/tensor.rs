//! Dense row-major tensors: the generic [`DenseTensor`] used by kernels and the
//! dtype-tagged [`TensorValue`] the interpreter passes between nodes.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Int64,
    Bool,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::Float32 => "float32",
            DType::Int64 => "int64",
            DType::Bool => "bool",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "float32" => Some(DType::Float32),
            "int64" => Some(DType::Int64),
            "bool" => Some(DType::Bool),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Int64 => 8,
            DType::Bool => 1,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?} ({expected} elements)")]
    LengthMismatch {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("expected dtype {expected}, got {actual}")]
    DType { expected: DType, actual: DType },
}

/// Number of elements described by `shape`. A rank-0 shape holds one element.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// A dense, row-major array of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected = numel(&shape);
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshaped(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        DenseTensor::new(shape, self.data)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone + Default> DenseTensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        DenseTensor {
            shape,
            data: vec![T::default(); n],
        }
    }
}

impl<T: Clone> DenseTensor<T> {
    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = numel(&shape);
        DenseTensor {
            shape,
            data: vec![value; n],
        }
    }
}

/// A tensor tagged with its runtime dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorValue {
    Float32(DenseTensor<f32>),
    Int64(DenseTensor<i64>),
    Bool(DenseTensor<bool>),
}

impl TensorValue {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        DenseTensor::new(shape, data).map(TensorValue::Float32)
    }

    pub fn i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self, TensorError> {
        DenseTensor::new(shape, data).map(TensorValue::Int64)
    }

    pub fn from_data(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        match data {
            TensorData::Float32(d) => DenseTensor::new(shape, d).map(TensorValue::Float32),
            TensorData::Int64(d) => DenseTensor::new(shape, d).map(TensorValue::Int64),
            TensorData::Bool(d) => DenseTensor::new(shape, d).map(TensorValue::Bool),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorValue::Float32(_) => DType::Float32,
            TensorValue::Int64(_) => DType::Int64,
            TensorValue::Bool(_) => DType::Bool,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorValue::Float32(t) => t.shape(),
            TensorValue::Int64(t) => t.shape(),
            TensorValue::Bool(t) => t.shape(),
        }
    }

    pub fn numel(&self) -> usize {
        numel(self.shape())
    }

    pub fn byte_size(&self) -> usize {
        self.numel() * self.dtype().byte_width()
    }

    pub fn as_f32(&self) -> Result<&DenseTensor<f32>, TensorError> {
        match self {
            TensorValue::Float32(t) => Ok(t),
            other => Err(TensorError::DType {
                expected: DType::Float32,
                actual: other.dtype(),
            }),
        }
    }

    /// Flat copy of the data in a dtype-tagged container.
    pub fn to_data(&self) -> TensorData {
        match self {
            TensorValue::Float32(t) => TensorData::Float32(t.data().to_vec()),
            TensorValue::Int64(t) => TensorData::Int64(t.data().to_vec()),
            TensorValue::Bool(t) => TensorData::Bool(t.data().to_vec()),
        }
    }

    /// Element values widened to f64, for comparisons across dtypes.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            TensorValue::Float32(t) => t.data().iter().map(|&v| v as f64).collect(),
            TensorValue::Int64(t) => t.data().iter().map(|&v| v as f64).collect(),
            TensorValue::Bool(t) => t.data().iter().map(|&v| v as u8 as f64).collect(),
        }
    }

    pub fn with_shape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        match self {
            TensorValue::Float32(t) => t.reshaped(shape).map(TensorValue::Float32),
            TensorValue::Int64(t) => t.reshaped(shape).map(TensorValue::Int64),
            TensorValue::Bool(t) => t.reshaped(shape).map(TensorValue::Bool),
        }
    }
}

impl From<DenseTensor<f32>> for TensorValue {
    fn from(t: DenseTensor<f32>) -> Self {
        TensorValue::Float32(t)
    }
}

impl From<DenseTensor<i64>> for TensorValue {
    fn from(t: DenseTensor<i64>) -> Self {
        TensorValue::Int64(t)
    }
}

/// Flat element storage tagged by dtype; serializes as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TensorData {
    Float32(Vec<f32>),
    Int64(Vec<i64>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::Float32(_) => DType::Float32,
            TensorData::Int64(_) => DType::Int64,
            TensorData::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::Float32(d) => d.len(),
            TensorData::Int64(d) => d.len(),
            TensorData::Bool(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decode a JSON array according to `dtype`. Returns a description of the
    /// first offending element on failure.
    pub fn from_json(dtype: DType, items: &[serde_json::Value]) -> Result<TensorData, String> {
        fn bad(i: usize, v: &serde_json::Value, dtype: DType) -> String {
            format!("element {i} ({v}) is not a valid {dtype}")
        }
        match dtype {
            DType::Float32 => items
                .iter()
                .enumerate()
                .map(|(i, v)| match v.as_f64() {
                    Some(x) if x.is_finite() => Ok(x as f32),
                    _ => Err(bad(i, v, dtype)),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(TensorData::Float32),
            DType::Int64 => items
                .iter()
                .enumerate()
                .map(|(i, v)| v.as_i64().ok_or_else(|| bad(i, v, dtype)))
                .collect::<Result<Vec<_>, _>>()
                .map(TensorData::Int64),
            DType::Bool => items
                .iter()
                .enumerate()
                .map(|(i, v)| v.as_bool().ok_or_else(|| bad(i, v, dtype)))
                .collect::<Result<Vec<_>, _>>()
                .map(TensorData::Bool),
        }
    }
}
