//! Array newtypes for image-shaped data and its frequency-domain form.
//!
//! A [`SpatialTensor`] holds `[*B, H, W, C]` data (arbitrary leading batch
//! axes, then height, width, channels). A [`FrequencyTensor`] holds
//! `[*B, h, w, F, C]` data where `F` indexes frequency components of the
//! transform that produced it.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::transforms::TransformKind;

/// Real array of shape `[*B, H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTensor {
    data: ArrayD<f64>,
}

impl SpatialTensor {
    /// Wraps an array, requiring at least the `[H, W, C]` axes.
    pub fn new(data: ArrayD<f64>) -> Result<Self> {
        if data.ndim() < 3 {
            return Err(Error::invalid_argument(format!(
                "spatial tensor needs rank >= 3 ([*B, H, W, C]), got rank {}",
                data.ndim()
            )));
        }
        Ok(Self { data })
    }

    /// Builds an all-ones tensor of the given shape.
    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::new(ArrayD::ones(IxDyn(shape)))
    }

    /// Builds an all-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_inner(self) -> ArrayD<f64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// Height, width and channel extents (the trailing three axes).
    pub fn hwc(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        let n = s.len();
        (s[n - 3], s[n - 2], s[n - 1])
    }

    /// Leading batch axes (possibly empty).
    pub fn batch_shape(&self) -> &[usize] {
        let s = self.data.shape();
        &s[..s.len() - 3]
    }

    /// Checks every entry is finite; used at API boundaries, not hot paths.
    pub fn validate_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::degenerate("spatial tensor contains non-finite entries"))
        }
    }
}

/// Frequency-domain array of shape `[*B, h, w, F, C]` with its originating
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTensor {
    data: ArrayD<f64>,
    origin: TransformKind,
}

impl FrequencyTensor {
    pub fn new(data: ArrayD<f64>, origin: TransformKind) -> Result<Self> {
        if data.ndim() < 4 {
            return Err(Error::invalid_argument(format!(
                "frequency tensor needs rank >= 4 ([*B, h, w, F, C]), got rank {}",
                data.ndim()
            )));
        }
        Ok(Self { data, origin })
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> ArrayD<f64> {
        self.data
    }

    pub fn origin(&self) -> &TransformKind {
        &self.origin
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// (h, w, F, C) extents (the trailing four axes).
    pub fn hwfc(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        let n = s.len();
        (s[n - 4], s[n - 3], s[n - 2], s[n - 1])
    }

    pub fn batch_shape(&self) -> &[usize] {
        let s = self.data.shape();
        &s[..s.len() - 4]
    }
}
