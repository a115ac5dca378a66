//! Non-overlapping block DCT: each `b x b` tile transformed by the
//! orthonormal 2-D DCT. The transform is orthogonal, so the inverse is the
//! exact transpose and energy is preserved.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::tensor::{FrequencyTensor, SpatialTensor};
use crate::transforms::dct::{dct_matrix, DctNorm};
use crate::transforms::TransformKind;

pub fn forward(x: &SpatialTensor, block_size: usize) -> Result<FrequencyTensor> {
    if block_size == 0 {
        return Err(Error::invalid_argument("block_size must be >= 1"));
    }
    let (height, width, channels) = x.hwc();
    if height % block_size != 0 || width % block_size != 0 {
        return Err(Error::invalid_argument(format!(
            "spatial dims ({height}, {width}) not divisible by block_size {block_size}"
        )));
    }
    let b = block_size;
    let (out_h, out_w, freq) = (height / b, width / b, b * b);
    let dct = dct_matrix(b, b, DctNorm::Ortho)?;
    let d = dct.as_slice().expect("contiguous");

    let batch: usize = x.batch_shape().iter().product();
    let data = x.data().as_standard_layout();
    let src = data.as_slice().expect("standard layout");

    let mut out = vec![0.0; batch * out_h * out_w * freq * channels];
    let mut half = vec![0.0; b * b];
    for bi in 0..batch {
        let slab = &src[bi * height * width * channels..][..height * width * channels];
        let dst = &mut out[bi * out_h * out_w * freq * channels..][..out_h * out_w * freq * channels];
        for yh in 0..out_h {
            for xw in 0..out_w {
                for c in 0..channels {
                    // half[i, kc] = sum_j d[kc, j] * slab[yh*b + i, xw*b + j, c]
                    for i in 0..b {
                        for kc in 0..b {
                            let mut acc = 0.0;
                            for j in 0..b {
                                acc += d[kc * b + j]
                                    * slab[((yh * b + i) * width + xw * b + j) * channels + c];
                            }
                            half[i * b + kc] = acc;
                        }
                    }
                    // dst[.., kr*b + kc, c] = sum_i d[kr, i] * half[i, kc]
                    for kr in 0..b {
                        for kc in 0..b {
                            let mut acc = 0.0;
                            for i in 0..b {
                                acc += d[kr * b + i] * half[i * b + kc];
                            }
                            dst[((yh * out_w + xw) * freq + kr * b + kc) * channels + c] = acc;
                        }
                    }
                }
            }
        }
    }

    let mut shape: Vec<usize> = x.batch_shape().to_vec();
    shape.extend([out_h, out_w, freq, channels]);
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape/len agree");
    FrequencyTensor::new(arr, TransformKind::BlockDct { block_size })
}

pub fn inverse(y: &FrequencyTensor, block_size: usize) -> Result<SpatialTensor> {
    let b = block_size;
    let (out_h, out_w, freq, channels) = y.hwfc();
    if freq != b * b {
        return Err(Error::invalid_argument(format!(
            "frequency axis {freq} should equal block_size^2 = {}",
            b * b
        )));
    }
    let (height, width) = (out_h * b, out_w * b);
    let dct = dct_matrix(b, b, DctNorm::Ortho)?;
    let d = dct.as_slice().expect("contiguous");

    let batch: usize = y.batch_shape().iter().product();
    let data = y.data().as_standard_layout();
    let src = data.as_slice().expect("standard layout");

    let mut out = vec![0.0; batch * height * width * channels];
    let mut half = vec![0.0; b * b];
    for bi in 0..batch {
        let slab = &src[bi * out_h * out_w * freq * channels..][..out_h * out_w * freq * channels];
        let dst = &mut out[bi * height * width * channels..][..height * width * channels];
        for yh in 0..out_h {
            for xw in 0..out_w {
                for c in 0..channels {
                    // half[i, kc] = sum_kr d[kr, i] * slab[.., kr*b + kc, c]
                    for i in 0..b {
                        for kc in 0..b {
                            let mut acc = 0.0;
                            for kr in 0..b {
                                acc += d[kr * b + i]
                                    * slab[((yh * out_w + xw) * freq + kr * b + kc) * channels + c];
                            }
                            half[i * b + kc] = acc;
                        }
                    }
                    // dst[yh*b + i, xw*b + j, c] = sum_kc d[kc, j] * half[i, kc]
                    for i in 0..b {
                        for j in 0..b {
                            let mut acc = 0.0;
                            for kc in 0..b {
                                acc += d[kc * b + j] * half[i * b + kc];
                            }
                            dst[((yh * b + i) * width + xw * b + j) * channels + c] = acc;
                        }
                    }
                }
            }
        }
    }

    let mut shape: Vec<usize> = y.batch_shape().to_vec();
    shape.extend([height, width, channels]);
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape/len agree");
    SpatialTensor::new(arr)
}
