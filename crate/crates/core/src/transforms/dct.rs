//! DCT type-II basis matrices.

use ndarray::Array2;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Normalization of [`dct_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DctNorm {
    /// Orthonormal rows: row 0 scaled by `1/sqrt(n)`, rows k >= 1 by
    /// `sqrt(2/n)`. Square matrices are orthonormal.
    Ortho,
    /// Raw cosine entries.
    None,
}

/// Computes the DCT type 2 matrix of shape `[num_k, num_n]`:
/// entry `(k, n) = cos(pi/num_n * (n + 0.5) * k)`, optionally reweighted
/// for orthonormality.
pub fn dct_matrix(num_n: usize, num_k: usize, norm: DctNorm) -> Result<Array2<f64>> {
    if num_n == 0 || num_k == 0 {
        return Err(Error::invalid_argument(format!(
            "dct_matrix sizes must be positive, got num_n={num_n}, num_k={num_k}"
        )));
    }
    let mut m = Array2::zeros((num_k, num_n));
    for k in 0..num_k {
        for n in 0..num_n {
            m[(k, n)] = (PI / num_n as f64 * (n as f64 + 0.5) * k as f64).cos();
        }
    }
    if norm == DctNorm::Ortho {
        let n = num_n as f64;
        for k in 0..num_k {
            let w = if k == 0 { 1.0 / n.sqrt() } else { (2.0 / n).sqrt() };
            for e in m.row_mut(k) {
                *e *= w;
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_basis() {
        let m = dct_matrix(1, 1, DctNorm::Ortho).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    #[allow(clippy::approx_constant)] // hand-derived 5-decimal oracle
    fn two_by_two_values() {
        // cos(0) scaled by 1/sqrt(2); cos(pi/4) = -cos(3pi/4) = sqrt(2)/2
        // scaled by sqrt(2/2) = 1.
        let m = dct_matrix(2, 2, DctNorm::Ortho).unwrap();
        let s = 0.70711;
        assert!((m[(0, 0)] - s).abs() < 5e-6);
        assert!((m[(0, 1)] - s).abs() < 5e-6);
        assert!((m[(1, 0)] - s).abs() < 5e-6);
        assert!((m[(1, 1)] + s).abs() < 5e-6);
    }

    #[test]
    fn eight_point_orthonormality() {
        let m = dct_matrix(8, 8, DctNorm::Ortho).unwrap();
        let prod = m.dot(&m.t());
        let mut max_dev = 0.0_f64;
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((prod[(i, j)] - expect).abs());
            }
        }
        assert!(max_dev < 1e-12, "max deviation {max_dev}");
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(dct_matrix(0, 4, DctNorm::Ortho).is_err());
        assert!(dct_matrix(4, 0, DctNorm::None).is_err());
    }

    #[test]
    fn unnormalized_rows_are_raw_cosines() {
        let m = dct_matrix(4, 2, DctNorm::None).unwrap();
        for n in 0..4 {
            assert_eq!(m[(0, n)], 1.0);
            let expect = (PI / 4.0 * (n as f64 + 0.5)).cos();
            assert!((m[(1, n)] - expect).abs() < 1e-15);
        }
    }
}
