//! Isotropic Gaussian mixture prior with closed-form posterior mean and an
//! exact analytic Jacobian-vector product: the oracle for the
//! state-dependent-Jacobian case.
//!
//! Responsibilities are computed in log space with max subtraction so high
//! log-SNR inputs do not underflow.

use ndarray::ArrayD;

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::schedule::NoiseInfo;

/// Mixture of `K` isotropic Gaussians `N(mu_k, s_k^2 I)`.
#[derive(Debug, Clone)]
pub struct GaussianMixtureModel {
    shape: Vec<usize>, // [H, W, C]
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    scales: Vec<f64>,
}

impl GaussianMixtureModel {
    pub fn new(
        shape: &[usize],
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        scales: Vec<f64>,
    ) -> Result<Self> {
        let dim: usize = shape.iter().product();
        if shape.len() != 3 || dim == 0 {
            return Err(Error::invalid_argument("shape must be [H, W, C]"));
        }
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k {
            return Err(Error::invalid_argument(
                "weights, means and scales must have equal nonzero length",
            ));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid_argument("weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid_argument("weights must sum to 1"));
        }
        if scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid_argument("scales must be positive"));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid_argument("every mean must have the data dimension"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(GaussianMixtureModel { shape: shape.to_vec(), weights, means, scales })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Same mixture with every component scale multiplied by `factor`.
    pub fn with_scales_scaled(&self, factor: f64) -> Result<Self> {
        if factor <= 0.0 {
            return Err(Error::invalid_argument("scale factor must be positive"));
        }
        let mut out = self.clone();
        for s in &mut out.scales {
            *s *= factor;
        }
        Ok(out)
    }

    /// Same mixture with all means zeroed.
    pub fn with_zero_means(&self) -> Self {
        let mut out = self.clone();
        for m in &mut out.means {
            m.fill(0.0);
        }
        out
    }

    /// Draws a sample: pick a component by weight, then add scaled noise.
    pub fn sample(&self, rng: &mut crate::rng::Stream) -> ArrayD<f64> {
        use rand::Rng;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                pick = k;
                break;
            }
        }
        let dim: usize = self.shape.iter().product();
        let noise = crate::rng::normal_vec(rng, dim);
        let data: Vec<f64> = self.means[pick]
            .iter()
            .zip(noise.iter())
            .map(|(m, n)| m + self.scales[pick] * n)
            .collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(&self.shape), data).expect("shape/len agree")
    }

    /// Posterior responsibilities of `z` under the noise-convolved mixture.
    fn responsibilities(&self, z: &[f64], noise: &NoiseInfo) -> Result<Vec<f64>> {
        let (alpha, sigma) = (noise.alpha, noise.sigma);
        let dim = z.len() as f64;
        let mut logs = Vec::with_capacity(self.weights.len());
        for ((w, mu), s) in self.weights.iter().zip(&self.means).zip(&self.scales) {
            let v = alpha * alpha * s * s + sigma * sigma;
            let mut sq = 0.0;
            for (zi, mi) in z.iter().zip(mu.iter()) {
                let d = zi - alpha * mi;
                sq += d * d;
            }
            logs.push(w.ln() - 0.5 * dim * v.ln() - 0.5 * sq / v);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::degenerate(
                "mixture responsibilities underflowed (non-finite log-density)",
            ));
        }
        let mut total = 0.0;
        let mut resp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        for r in &resp {
            total += r;
        }
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::degenerate("mixture weight normalization degenerate"));
        }
        for r in &mut resp {
            *r /= total;
        }
        Ok(resp)
    }

    /// `(x_hat, J . tangent)` with the exact analytic derivative:
    /// per-component linear terms plus the responsibility gradient.
    pub fn posterior_mean_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: Option<&ArrayD<f64>>,
    ) -> Result<(ArrayD<f64>, Option<ArrayD<f64>>)> {
        if z.shape() != &self.shape[..] {
            return Err(Error::invalid_argument(format!(
                "input shape {:?} does not match model shape {:?}",
                z.shape(),
                self.shape
            )));
        }
        let zs = z.as_slice().expect("contiguous");
        let (alpha, sigma) = (noise.alpha, noise.sigma);
        let sigma2 = sigma * sigma;
        let resp = self.responsibilities(zs, noise)?;
        let dim = zs.len();
        let k = self.weights.len();

        // Per-component posterior means m_k and their shared linear slope.
        let mut m = vec![0.0; k * dim];
        let mut slope = vec![0.0; k];
        for ki in 0..k {
            let s2 = self.scales[ki] * self.scales[ki];
            let v = alpha * alpha * s2 + sigma2;
            slope[ki] = alpha * s2 / v;
            for i in 0..dim {
                m[ki * dim + i] = (sigma2 * self.means[ki][i] + alpha * s2 * zs[i]) / v;
            }
        }
        let mut x_hat = vec![0.0; dim];
        for ki in 0..k {
            for i in 0..dim {
                x_hat[i] += resp[ki] * m[ki * dim + i];
            }
        }

        let jv = if let Some(u) = tangent {
            if u.shape() != &self.shape[..] {
                return Err(Error::invalid_argument("tangent shape mismatch"));
            }
            let us = u.as_slice().expect("contiguous");
            // g_k = grad_z log N(z; alpha mu_k, v_k I) = -(z - alpha mu_k)/v_k
            // dr_k = r_k (g_k - sum_j r_j g_j); J u = sum_k [r_k slope_k u
            //        + m_k (dr_k . u)].
            let mut g_dot_u = vec![0.0; k];
            for (ki, g) in g_dot_u.iter_mut().enumerate() {
                let s2 = self.scales[ki] * self.scales[ki];
                let v = alpha * alpha * s2 + sigma2;
                let mut acc = 0.0;
                for i in 0..dim {
                    acc += -(zs[i] - alpha * self.means[ki][i]) / v * us[i];
                }
                *g = acc;
            }
            let g_bar: f64 = resp.iter().zip(&g_dot_u).map(|(r, g)| r * g).sum();
            let mut out = vec![0.0; dim];
            let lin: f64 = resp.iter().zip(&slope).map(|(r, s)| r * s).sum();
            for i in 0..dim {
                out[i] = lin * us[i];
            }
            for ki in 0..k {
                let dr_u = resp[ki] * (g_dot_u[ki] - g_bar);
                for i in 0..dim {
                    out[i] += m[ki * dim + i] * dr_u;
                }
            }
            Some(
                ArrayD::from_shape_vec(z.raw_dim(), out).expect("shape/len agree"),
            )
        } else {
            None
        };

        Ok((
            ArrayD::from_shape_vec(z.raw_dim(), x_hat).expect("shape/len agree"),
            jv,
        ))
    }
}

impl Denoiser for GaussianMixtureModel {
    fn predict(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        nfe: &mut NfeLedger,
    ) -> Result<ArrayD<f64>> {
        nfe.add(1);
        Ok(self.posterior_mean_jvp(z, noise, None)?.0)
    }

    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        nfe.add(2);
        let (x, jv) = self.posterior_mean_jvp(z, noise, Some(tangent))?;
        Ok((x, jv.expect("tangent requested")))
    }
}
