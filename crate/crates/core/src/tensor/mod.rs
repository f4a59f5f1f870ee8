//! Dense row-major tensors, a define-by-run expression graph with
//! reverse-mode differentiation, parameter storage and checkpoints.
//!
//! Every model equation in this crate is composed from the primitives on
//! [`Graph`]. Values are generic over [`Scalar`] so the same code runs in
//! 64-bit (tests and gradient checks) and 32-bit (training) precision.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ManifestEntry};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck, Stencil};
pub use graph::{Gradients, Graph, Mode, NodeId};
pub use params::{ParamId, ParamStore};

/// Element type identifier used by checkpoints and the precision flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(DType::F32),
            "f64" | "64" => Ok(DType::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A dense row-major array. The shape is a list of positive sizes whose
/// product equals the buffer length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("buffer holds {} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `[1, n]` row vector.
    pub fn row(data: Vec<T>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    /// A `[n, 1]` column vector.
    pub fn column(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::InvalidShape {
                    shape: vec![rows.len(), cols],
                    reason: format!("ragged row of length {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| T::of(x)).collect())
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    Ok(())
}
