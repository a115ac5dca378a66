//! Orthonormal frequency transforms used to decompose posterior
//! covariance: block DCT, the sliding-window ConvDCT, Haar and LeGall 5/3
//! wavelets, plus the trivial identity (the isotropic baseline).
//!
//! All transforms are linear and pure; they may be called concurrently.

pub mod block_dct;
pub mod conv_dct;
pub mod dct;
pub mod wavelet;

pub use dct::{dct_matrix, DctNorm};
pub use wavelet::{subband_count, subband_id, WaveletKind};

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::tensor::{FrequencyTensor, SpatialTensor};

/// The frequency mapping used by the covariance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// No mixing: one frequency component per pixel.
    Identity,
    /// Non-overlapping `b x b` orthonormal DCT tiles.
    BlockDct { block_size: usize },
    /// Stride-1 sliding `b x b` DCT windows.
    ConvDct { block_size: usize },
    /// Orthonormal Haar, `levels` deep.
    Haar { levels: usize },
    /// LeGall 5/3 lifting, `levels` deep.
    LeGall53 { levels: usize },
}

impl TransformKind {
    pub fn forward(&self, x: &SpatialTensor) -> Result<FrequencyTensor> {
        match *self {
            TransformKind::Identity => {
                // Insert the singleton F axis before the channel axis.
                let data = x.data().clone().insert_axis(Axis(x.data().ndim() - 1));
                FrequencyTensor::new(data, *self)
            }
            TransformKind::BlockDct { block_size } => block_dct::forward(x, block_size),
            TransformKind::ConvDct { block_size } => conv_dct::forward(x, block_size),
            TransformKind::Haar { levels } => wavelet::forward(x, WaveletKind::Haar, levels),
            TransformKind::LeGall53 { levels } => {
                wavelet::forward(x, WaveletKind::LeGall53, levels)
            }
        }
    }

    pub fn inverse(&self, y: &FrequencyTensor) -> Result<SpatialTensor> {
        match *self {
            TransformKind::Identity => {
                let (_, _, freq, _) = y.hwfc();
                if freq != 1 {
                    return Err(Error::invalid_argument(format!(
                        "identity transform frequency axis {freq} should equal 1"
                    )));
                }
                let data = y.data().clone().remove_axis(Axis(y.data().ndim() - 2));
                SpatialTensor::new(data)
            }
            TransformKind::BlockDct { block_size } => block_dct::inverse(y, block_size),
            TransformKind::ConvDct { block_size } => conv_dct::inverse(y, block_size),
            TransformKind::Haar { levels } => wavelet::inverse(y, WaveletKind::Haar, levels),
            TransformKind::LeGall53 { levels } => {
                wavelet::inverse(y, WaveletKind::LeGall53, levels)
            }
        }
    }

    /// Number of frequency components along the `F` axis.
    pub fn frequency_axis_len(&self) -> usize {
        match *self {
            TransformKind::Identity => 1,
            TransformKind::BlockDct { block_size } | TransformKind::ConvDct { block_size } => {
                block_size * block_size
            }
            TransformKind::Haar { .. } | TransformKind::LeGall53 { .. } => 1,
        }
    }

    /// Wavelet decomposition depth, if this is a wavelet transform.
    pub fn wavelet_levels(&self) -> Option<usize> {
        match *self {
            TransformKind::Haar { levels } | TransformKind::LeGall53 { levels } => Some(levels),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TransformKind::Identity => "identity".to_string(),
            TransformKind::BlockDct { block_size } => format!("block_dct{block_size}"),
            TransformKind::ConvDct { block_size } => format!("conv_dct{block_size}"),
            TransformKind::Haar { levels } => format!("haar{levels}"),
            TransformKind::LeGall53 { levels } => format!("legall53_{levels}"),
        }
    }
}
