//! Multi-level separable 2-D wavelets: orthonormal Haar and LeGall 5/3
//! (lifting scheme, whole-point symmetric extension, the JPEG 2000
//! convention).
//!
//! Coefficients are stored in the usual in-place Mallat layout, exposed as
//! a frequency tensor of shape `[*B, H, W, 1, C]`; the subband a
//! coefficient belongs to is a function of its position, see
//! [`subband_id`].

use ndarray::{ArrayD, IxDyn};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::{FrequencyTensor, SpatialTensor};
use crate::transforms::TransformKind;

/// Wavelet family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletKind {
    Haar,
    LeGall53,
}

fn haar_forward_1d(buf: &mut [f64], scratch: &mut [f64], n: usize) {
    let half = n / 2;
    for i in 0..half {
        let a = buf[2 * i];
        let b = buf[2 * i + 1];
        scratch[i] = (a + b) / SQRT_2;
        scratch[half + i] = (a - b) / SQRT_2;
    }
    buf[..n].copy_from_slice(&scratch[..n]);
}

fn haar_inverse_1d(buf: &mut [f64], scratch: &mut [f64], n: usize) {
    let half = n / 2;
    for i in 0..half {
        let lo = buf[i];
        let hi = buf[half + i];
        scratch[2 * i] = (lo + hi) / SQRT_2;
        scratch[2 * i + 1] = (lo - hi) / SQRT_2;
    }
    buf[..n].copy_from_slice(&scratch[..n]);
}

fn legall_forward_1d(buf: &mut [f64], scratch: &mut [f64], n: usize) {
    let half = n / 2;
    let (s, rest) = scratch.split_at_mut(half);
    let d = &mut rest[..half];
    for i in 0..half {
        s[i] = buf[2 * i];
        d[i] = buf[2 * i + 1];
    }
    // Predict: d[i] -= (x[2i] + x[2i+2]) / 2, extending x[n] = x[n-2].
    for i in 0..half {
        let right = if i + 1 < half { s[i + 1] } else { s[half - 1] };
        d[i] -= (s[i] + right) / 2.0;
    }
    // Update: s[i] += (d[i-1] + d[i]) / 4, extending d[-1] = d[0].
    for i in 0..half {
        let left = if i > 0 { d[i - 1] } else { d[0] };
        s[i] += (left + d[i]) / 4.0;
    }
    buf[..half].copy_from_slice(s);
    buf[half..n].copy_from_slice(d);
}

fn legall_inverse_1d(buf: &mut [f64], scratch: &mut [f64], n: usize) {
    let half = n / 2;
    let (s, rest) = scratch.split_at_mut(half);
    let d = &mut rest[..half];
    s.copy_from_slice(&buf[..half]);
    d.copy_from_slice(&buf[half..n]);
    for i in 0..half {
        let left = if i > 0 { d[i - 1] } else { d[0] };
        s[i] -= (left + d[i]) / 4.0;
    }
    for i in 0..half {
        let right = if i + 1 < half { s[i + 1] } else { s[half - 1] };
        d[i] += (s[i] + right) / 2.0;
    }
    for i in 0..half {
        buf[2 * i] = s[i];
        buf[2 * i + 1] = d[i];
    }
}

fn lift_1d(kind: WaveletKind, inverse: bool, buf: &mut [f64], scratch: &mut [f64], n: usize) {
    match (kind, inverse) {
        (WaveletKind::Haar, false) => haar_forward_1d(buf, scratch, n),
        (WaveletKind::Haar, true) => haar_inverse_1d(buf, scratch, n),
        (WaveletKind::LeGall53, false) => legall_forward_1d(buf, scratch, n),
        (WaveletKind::LeGall53, true) => legall_inverse_1d(buf, scratch, n),
    }
}

fn check_dims(height: usize, width: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid_argument("levels must be >= 1"));
    }
    let div = 1usize << levels;
    if !height.is_multiple_of(div) || !width.is_multiple_of(div) {
        return Err(Error::invalid_argument(format!(
            "spatial dims ({height}, {width}) not divisible by 2^levels = {div}"
        )));
    }
    Ok(())
}

fn transform_slab(
    slab: &mut [f64],
    height: usize,
    width: usize,
    channels: usize,
    kind: WaveletKind,
    levels: usize,
    inverse: bool,
) {
    let mut line = vec![0.0; height.max(width)];
    let mut scratch = vec![0.0; height.max(width)];
    let level_range: Vec<usize> = if inverse {
        (0..levels).rev().collect()
    } else {
        (0..levels).collect()
    };
    for level in level_range {
        let rh = height >> level;
        let rw = width >> level;
        for c in 0..channels {
            if inverse {
                // Undo columns first, then rows.
                for x in 0..rw {
                    for y in 0..rh {
                        line[y] = slab[(y * width + x) * channels + c];
                    }
                    lift_1d(kind, true, &mut line, &mut scratch, rh);
                    for y in 0..rh {
                        slab[(y * width + x) * channels + c] = line[y];
                    }
                }
                for y in 0..rh {
                    for x in 0..rw {
                        line[x] = slab[(y * width + x) * channels + c];
                    }
                    lift_1d(kind, true, &mut line, &mut scratch, rw);
                    for x in 0..rw {
                        slab[(y * width + x) * channels + c] = line[x];
                    }
                }
            } else {
                // Rows (width) first, then columns (height).
                for y in 0..rh {
                    for x in 0..rw {
                        line[x] = slab[(y * width + x) * channels + c];
                    }
                    lift_1d(kind, false, &mut line, &mut scratch, rw);
                    for x in 0..rw {
                        slab[(y * width + x) * channels + c] = line[x];
                    }
                }
                for x in 0..rw {
                    for y in 0..rh {
                        line[y] = slab[(y * width + x) * channels + c];
                    }
                    lift_1d(kind, false, &mut line, &mut scratch, rh);
                    for y in 0..rh {
                        slab[(y * width + x) * channels + c] = line[y];
                    }
                }
            }
        }
    }
}

pub fn forward(x: &SpatialTensor, kind: WaveletKind, levels: usize) -> Result<FrequencyTensor> {
    let (height, width, channels) = x.hwc();
    check_dims(height, width, levels)?;

    let batch: usize = x.batch_shape().iter().product();
    let data = x.data().as_standard_layout();
    let mut out: Vec<f64> = data.as_slice().expect("standard layout").to_vec();
    for bi in 0..batch {
        let slab = &mut out[bi * height * width * channels..][..height * width * channels];
        transform_slab(slab, height, width, channels, kind, levels, false);
    }

    let mut shape: Vec<usize> = x.batch_shape().to_vec();
    shape.extend([height, width, 1, channels]);
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape/len agree");
    let origin = match kind {
        WaveletKind::Haar => TransformKind::Haar { levels },
        WaveletKind::LeGall53 => TransformKind::LeGall53 { levels },
    };
    FrequencyTensor::new(arr, origin)
}

pub fn inverse(y: &FrequencyTensor, kind: WaveletKind, levels: usize) -> Result<SpatialTensor> {
    let (height, width, freq, channels) = y.hwfc();
    if freq != 1 {
        return Err(Error::invalid_argument(format!(
            "wavelet frequency axis {freq} should equal 1 (subbands are positional)"
        )));
    }
    check_dims(height, width, levels)?;

    let batch: usize = y.batch_shape().iter().product();
    let data = y.data().as_standard_layout();
    let mut out: Vec<f64> = data.as_slice().expect("standard layout").to_vec();
    for bi in 0..batch {
        let slab = &mut out[bi * height * width * channels..][..height * width * channels];
        transform_slab(slab, height, width, channels, kind, levels, true);
    }

    let mut shape: Vec<usize> = y.batch_shape().to_vec();
    shape.extend([height, width, channels]);
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape/len agree");
    SpatialTensor::new(arr)
}

/// Number of subbands of an `levels`-deep decomposition.
pub fn subband_count(levels: usize) -> usize {
    3 * levels + 1
}

/// Subband of the coefficient at Mallat-layout position `(y, x)`.
///
/// Id 0 is the deepest approximation band; detail bands are numbered from
/// the deepest level outward, 3 per level.
pub fn subband_id(y: usize, x: usize, height: usize, width: usize, levels: usize) -> usize {
    for level in 1..=levels {
        let rh = height >> level;
        let rw = width >> level;
        if y < rh && x < rw {
            continue;
        }
        // Escaped at this level: one of the three detail quadrants.
        let quad = (y >= rh) as usize * 2 + (x >= rw) as usize; // 1, 2 or 3
        return 3 * (levels - level) + quad;
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_array, sample_stream};

    fn spatial(shape: &[usize], seed: u64) -> SpatialTensor {
        let mut rng = sample_stream(seed, 0);
        SpatialTensor::new(normal_array(&mut rng, shape)).unwrap()
    }

    #[test]
    fn haar_two_by_two_hand_values() {
        let (a, b, c, d) = (1.0, 2.0, -3.0, 0.5);
        let x = SpatialTensor::new(
            ArrayD::from_shape_vec(IxDyn(&[2, 2, 1]), vec![a, b, c, d]).unwrap(),
        )
        .unwrap();
        let y = forward(&x, WaveletKind::Haar, 1).unwrap();
        let at = |yy: usize, xx: usize| y.data()[IxDyn(&[yy, xx, 0, 0])];
        // Row pass: [l0 h0; l1 h1], column pass combines rows.
        assert!((at(0, 0) - (a + b + c + d) / 2.0).abs() < 1e-12, "LL");
        assert!((at(0, 1) - (a - b + c - d) / 2.0).abs() < 1e-12);
        assert!((at(1, 0) - (a + b - c - d) / 2.0).abs() < 1e-12);
        assert!((at(1, 1) - (a - b - c + d) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_input_has_zero_detail_bands() {
        let x = SpatialTensor::new(ArrayD::from_elem(IxDyn(&[8, 8, 2]), 1.3)).unwrap();
        for kind in [WaveletKind::Haar, WaveletKind::LeGall53] {
            let y = forward(&x, kind, 2).unwrap();
            for yy in 0..8 {
                for xx in 0..8 {
                    if subband_id(yy, xx, 8, 8, 2) != 0 {
                        for c in 0..2 {
                            let v = y.data()[IxDyn(&[yy, xx, 0, c])];
                            assert!(v.abs() < 1e-12, "({yy},{xx},{c}) = {v}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn round_trips() {
        let x = spatial(&[16, 8, 3], 2);
        for (kind, tol) in [(WaveletKind::Haar, 1e-12), (WaveletKind::LeGall53, 1e-8)] {
            let y = forward(&x, kind, 3).unwrap();
            let back = inverse(&y, kind, 3).unwrap();
            for (a, r) in x.data().iter().zip(back.data().iter()) {
                assert!((a - r).abs() < tol, "{kind:?}: {a} vs {r}");
            }
        }
    }

    #[test]
    fn haar_preserves_energy() {
        let x = spatial(&[16, 16, 1], 3);
        let y = forward(&x, WaveletKind::Haar, 3).unwrap();
        let in_e: f64 = x.data().iter().map(|v| v * v).sum();
        let out_e: f64 = y.data().iter().map(|v| v * v).sum();
        assert!((in_e - out_e).abs() < 1e-10 * in_e);
    }

    #[test]
    fn rejects_non_divisible_dims() {
        let x = spatial(&[12, 16, 1], 4);
        assert!(forward(&x, WaveletKind::Haar, 3).is_err());
        assert!(forward(&x, WaveletKind::Haar, 2).is_ok());
    }

    #[test]
    fn subband_ids_partition_the_plane() {
        let (h, w, levels) = (16, 16, 3);
        let mut counts = vec![0usize; subband_count(levels)];
        for y in 0..h {
            for x in 0..w {
                counts[subband_id(y, x, h, w, levels)] += 1;
            }
        }
        // Deepest level: 2x2 bands; each shallower level triples in area.
        assert_eq!(counts[0], 4);
        assert_eq!(counts[1], 4);
        assert_eq!(counts[2], 4);
        assert_eq!(counts[3], 4);
        assert_eq!(counts[4], 16);
        assert_eq!(counts[7], 64);
        assert_eq!(counts.iter().sum::<usize>(), h * w);
    }
}
