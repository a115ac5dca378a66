//! Sliding-window DCT ("ConvDCT"): the separable orthonormal `b x b` DCT
//! kernel applied at stride 1 with no padding, one channel at a time.
//!
//! The inverse is the adjoint (transposed convolution) normalized by the
//! adjoint applied to the forward transform of an all-ones image. Because
//! each window's analysis is orthonormal, that normalizer is exactly the
//! per-pixel window count, so the round trip is exact up to rounding.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::tensor::{FrequencyTensor, SpatialTensor};
use crate::transforms::dct::{dct_matrix, DctNorm};
use crate::transforms::TransformKind;

/// Frequency components are ordered row-major over `(k_row, k_col)`.
pub fn forward(x: &SpatialTensor, block_size: usize) -> Result<FrequencyTensor> {
    if block_size == 0 {
        return Err(Error::invalid_argument("block_size must be >= 1"));
    }
    let (height, width, channels) = x.hwc();
    if height < block_size || width < block_size {
        return Err(Error::invalid_argument(format!(
            "spatial dims ({height}, {width}) smaller than block_size {block_size}"
        )));
    }
    let b = block_size;
    let (out_h, out_w, freq) = (height - b + 1, width - b + 1, b * b);
    let dct = dct_matrix(b, b, DctNorm::Ortho)?;
    let d = dct.as_slice().expect("contiguous");

    let batch: usize = x.batch_shape().iter().product();
    let data = x.data().as_standard_layout();
    let src = data.as_slice().expect("standard layout");

    let mut out = vec![0.0; batch * out_h * out_w * freq * channels];
    let mut stage = vec![0.0; height * out_w * b * channels];
    for bi in 0..batch {
        let slab = &src[bi * height * width * channels..][..height * width * channels];
        let dst = &mut out[bi * out_h * out_w * freq * channels..][..out_h * out_w * freq * channels];
        forward_slab(slab, dst, &mut stage, d, b, height, width, channels, out_h, out_w);
    }

    let mut shape: Vec<usize> = x.batch_shape().to_vec();
    shape.extend([out_h, out_w, freq, channels]);
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape/len agree");
    FrequencyTensor::new(arr, TransformKind::ConvDct { block_size })
}

#[allow(clippy::too_many_arguments)]
fn forward_slab(
    src: &[f64],
    dst: &mut [f64],
    stage: &mut [f64],
    d: &[f64],
    b: usize,
    height: usize,
    width: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) {
    // Width pass: stage[y, xw, kc, c] = sum_j d[kc, j] * src[y, xw + j, c]
    for y in 0..height {
        for xw in 0..out_w {
            for kc in 0..b {
                let row = &d[kc * b..(kc + 1) * b];
                for c in 0..channels {
                    let mut acc = 0.0;
                    for (j, &w) in row.iter().enumerate() {
                        acc += w * src[(y * width + xw + j) * channels + c];
                    }
                    stage[((y * out_w + xw) * b + kc) * channels + c] = acc;
                }
            }
        }
    }
    // Height pass: dst[yh, xw, kr*b + kc, c] = sum_i d[kr, i] * stage[yh + i, xw, kc, c]
    let freq = b * b;
    for yh in 0..out_h {
        for xw in 0..out_w {
            for kr in 0..b {
                let row = &d[kr * b..(kr + 1) * b];
                for kc in 0..b {
                    for c in 0..channels {
                        let mut acc = 0.0;
                        for (i, &w) in row.iter().enumerate() {
                            acc += w * stage[(((yh + i) * out_w + xw) * b + kc) * channels + c];
                        }
                        dst[((yh * out_w + xw) * freq + kr * b + kc) * channels + c] = acc;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`forward`]: per-window synthesis followed by overlap-add.
#[allow(clippy::too_many_arguments)]
fn adjoint_slab(
    src: &[f64],
    dst: &mut [f64],
    d: &[f64],
    b: usize,
    out_h: usize,
    out_w: usize,
    channels: usize,
    width: usize,
) {
    let freq = b * b;
    let mut patch = vec![0.0; b * b * channels];
    let mut half = vec![0.0; b * b * channels];
    for yh in 0..out_h {
        for xw in 0..out_w {
            let win = &src[((yh * out_w + xw) * freq) * channels..][..freq * channels];
            // Synthesis over k_row: half[i, kc, c] = sum_kr d[kr, i] * win[kr*b + kc, c]
            for i in 0..b {
                for kc in 0..b {
                    for c in 0..channels {
                        let mut acc = 0.0;
                        for kr in 0..b {
                            acc += d[kr * b + i] * win[(kr * b + kc) * channels + c];
                        }
                        half[(i * b + kc) * channels + c] = acc;
                    }
                }
            }
            // Synthesis over k_col: patch[i, j, c] = sum_kc d[kc, j] * half[i, kc, c]
            for i in 0..b {
                for j in 0..b {
                    for c in 0..channels {
                        let mut acc = 0.0;
                        for kc in 0..b {
                            acc += d[kc * b + j] * half[(i * b + kc) * channels + c];
                        }
                        patch[(i * b + j) * channels + c] = acc;
                    }
                }
            }
            // Overlap-add into the target image.
            for i in 0..b {
                for j in 0..b {
                    for c in 0..channels {
                        dst[(((yh + i) * width) + xw + j) * channels + c] +=
                            patch[(i * b + j) * channels + c];
                    }
                }
            }
        }
    }
}

fn adjoint(y: &FrequencyTensor, block_size: usize) -> Result<ArrayD<f64>> {
    let b = block_size;
    let (out_h, out_w, freq, channels) = y.hwfc();
    debug_assert_eq!(freq, b * b);
    let (height, width) = (out_h + b - 1, out_w + b - 1);
    let dct = dct_matrix(b, b, DctNorm::Ortho)?;
    let d = dct.as_slice().expect("contiguous");

    let batch: usize = y.batch_shape().iter().product();
    let data = y.data().as_standard_layout();
    let src = data.as_slice().expect("standard layout");

    let mut out = vec![0.0; batch * height * width * channels];
    for bi in 0..batch {
        let slab = &src[bi * out_h * out_w * freq * channels..][..out_h * out_w * freq * channels];
        let dst = &mut out[bi * height * width * channels..][..height * width * channels];
        adjoint_slab(slab, dst, d, b, out_h, out_w, channels, width);
    }

    let mut shape: Vec<usize> = y.batch_shape().to_vec();
    shape.extend([height, width, channels]);
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape/len agree"))
}

pub fn inverse(y: &FrequencyTensor, block_size: usize) -> Result<SpatialTensor> {
    let (out_h, out_w, freq, channels) = y.hwfc();
    if freq != block_size * block_size {
        return Err(Error::invalid_argument(format!(
            "frequency axis {freq} should equal block_size^2 = {}",
            block_size * block_size
        )));
    }
    let numerator = adjoint(y, block_size)?;

    // Normalization: adjoint(forward(ones)) evaluated on a single-channel
    // slab; its per-pixel values do not depend on batch or channel.
    let (height, width) = (out_h + block_size - 1, out_w + block_size - 1);
    let ones = SpatialTensor::ones(&[height, width, 1])?;
    let ones_f = forward(&ones, block_size)?;
    let norm = adjoint(&ones_f, block_size)?;

    let mut out = numerator;
    {
        let flat = out.as_slice_mut().expect("standard layout");
        let nrm = norm.as_slice().expect("standard layout");
        let batch = flat.len() / (height * width * channels);
        for bi in 0..batch {
            for y_ix in 0..height {
                for x_ix in 0..width {
                    let n = nrm[y_ix * width + x_ix];
                    for c in 0..channels {
                        flat[((bi * height + y_ix) * width + x_ix) * channels + c] /= n;
                    }
                }
            }
        }
    }
    SpatialTensor::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_array, sample_stream};

    fn spatial(shape: &[usize], seed: u64) -> SpatialTensor {
        let mut rng = sample_stream(seed, 0);
        SpatialTensor::new(normal_array(&mut rng, shape)).unwrap()
    }

    /// Direct (non-separable) sliding DCT used as the oracle.
    fn forward_direct(x: &SpatialTensor, b: usize) -> Vec<f64> {
        let (height, width, channels) = x.hwc();
        let (out_h, out_w, freq) = (height - b + 1, width - b + 1, b * b);
        let d = dct_matrix(b, b, DctNorm::Ortho).unwrap();
        let src = x.data().as_slice().unwrap();
        let mut out = vec![0.0; out_h * out_w * freq * channels];
        for yh in 0..out_h {
            for xw in 0..out_w {
                for kr in 0..b {
                    for kc in 0..b {
                        for c in 0..channels {
                            let mut acc = 0.0;
                            for i in 0..b {
                                for j in 0..b {
                                    acc += d[(kr, i)]
                                        * d[(kc, j)]
                                        * src[((yh + i) * width + xw + j) * channels + c];
                                }
                            }
                            out[((yh * out_w + xw) * freq + kr * b + kc) * channels + c] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn block_one_is_identity_with_inserted_axis() {
        let x = spatial(&[5, 4, 2], 1);
        let y = forward(&x, 1).unwrap();
        assert_eq!(y.shape(), &[5, 4, 1, 2]);
        let back: Vec<f64> = y.data().iter().copied().collect();
        let orig: Vec<f64> = x.data().iter().copied().collect();
        assert_eq!(back, orig);
        let inv = inverse(&y, 1).unwrap();
        assert_eq!(inv.data(), x.data());
    }

    #[test]
    fn matches_direct_convolution_oracle() {
        let x = spatial(&[10, 9, 2], 2);
        let y = forward(&x, 4).unwrap();
        let oracle = forward_direct(&x, 4);
        for (a, b) in y.data().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_concentrates_on_dc() {
        let c0 = 0.73;
        let x = SpatialTensor::new(ArrayD::from_elem(IxDyn(&[12, 12, 1]), c0)).unwrap();
        let y = forward(&x, 8).unwrap();
        let (h, w, freq, _) = y.hwfc();
        for yh in 0..h {
            for xw in 0..w {
                for f in 0..freq {
                    let v = y.data()[IxDyn(&[yh, xw, f, 0])];
                    if f == 0 {
                        assert!((v - 8.0 * c0).abs() < 1e-12, "dc {v}");
                    } else {
                        assert!(v.abs() < 1e-12, "ac {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn round_trip_is_tight_for_all_block_sizes() {
        for &b in &[1usize, 2, 4, 8] {
            let x = spatial(&[16, 13, 2], 3 + b as u64);
            let y = forward(&x, b).unwrap();
            let back = inverse(&y, b).unwrap();
            for (a, r) in x.data().iter().zip(back.data().iter()) {
                assert!((a - r).abs() < 1e-10, "block {b}: {a} vs {r}");
            }
        }
    }

    #[test]
    fn zero_frequency_tensor_inverts_to_zero() {
        let y = FrequencyTensor::new(
            ArrayD::zeros(IxDyn(&[3, 3, 4, 2])),
            TransformKind::ConvDct { block_size: 2 },
        )
        .unwrap();
        let x = inverse(&y, 2).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_small_input_and_bad_frequency_axis() {
        let x = spatial(&[4, 4, 1], 9);
        let err = forward(&x, 8).unwrap_err().to_string();
        assert!(err.contains("smaller than"), "{err}");

        let y = FrequencyTensor::new(
            ArrayD::zeros(IxDyn(&[3, 3, 5, 1])),
            TransformKind::ConvDct { block_size: 2 },
        )
        .unwrap();
        let err = inverse(&y, 2).unwrap_err().to_string();
        assert!(err.contains("should equal"), "{err}");
    }

    #[test]
    fn batched_input_matches_per_slab_results() {
        let x = spatial(&[2, 9, 8, 2], 11);
        let y = forward(&x, 4).unwrap();
        for bi in 0..2 {
            let slab = SpatialTensor::new(
                x.data()
                    .index_axis(ndarray::Axis(0), bi)
                    .to_owned()
                    .into_dyn(),
            )
            .unwrap();
            let ys = forward(&slab, 4).unwrap();
            let batched = y.data().index_axis(ndarray::Axis(0), bi);
            for (a, b) in batched.iter().zip(ys.data().iter()) {
                assert_eq!(a, b);
            }
        }
    }
}
