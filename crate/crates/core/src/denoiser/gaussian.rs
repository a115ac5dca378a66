//! Analytic Gaussian prior: closed-form posterior mean, covariance and
//! Jacobian under the variance-preserving forward process.
//!
//! With prior `N(mu, Sigma)` and `z = alpha x + sigma eps`, the posterior
//! over `x` is Gaussian with
//!   `Cov = (Sigma^-1 + (alpha^2/sigma^2) I)^-1`,
//!   `E[x|z] = Cov (Sigma^-1 mu + (alpha/sigma^2) z)`.
//! Both are evaluated in a basis where `Sigma` is diagonal, which keeps
//! every coefficient of the form `(sigma^2 m + alpha lambda v) / (sigma^2 +
//! alpha^2 lambda)` and stable for extreme noise levels.

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayD, IxDyn};

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, Stream};
use crate::schedule::NoiseInfo;
use crate::tensor::SpatialTensor;
use crate::transforms::TransformKind;

/// Covariance representation.
#[derive(Debug, Clone)]
enum CovRepr {
    /// Dense SPD matrix, stored eigendecomposed: `Sigma = Q diag(l) Q^T`.
    Dense { q: DMatrix<f64>, eigvals: DVector<f64> },
    /// `Sigma = T^T diag(spectrum) T` for an orthonormal transform `T`;
    /// `spectrum` lives on the frequency-tensor layout of `shape`.
    TransformDiagonal { transform: TransformKind, spectrum: ArrayD<f64> },
}

/// Gaussian data model usable as an exact denoiser.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    shape: Vec<usize>, // [H, W, C]
    mean: ArrayD<f64>,
    cov: CovRepr,
}

impl GaussianModel {
    /// Dense covariance on data of the given `[H, W, C]` shape.
    pub fn dense(shape: &[usize], mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim: usize = shape.iter().product();
        if shape.len() != 3 || dim == 0 {
            return Err(Error::invalid_argument("shape must be [H, W, C]"));
        }
        if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::invalid_argument(format!(
                "mean/cov sized for dim {dim}, got {} and {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let sym_dev = (&cov - cov.transpose()).abs().max();
        if sym_dev > 1e-10 * cov.abs().max().max(1.0) {
            return Err(Error::invalid_argument("covariance must be symmetric"));
        }
        let eig = cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::invalid_argument(
                "covariance must be positive definite",
            ));
        }
        let mean = ArrayD::from_shape_vec(IxDyn(shape), mean).expect("shape/len agree");
        Ok(GaussianModel {
            shape: shape.to_vec(),
            mean,
            cov: CovRepr::Dense { q: eig.eigenvectors, eigvals: eig.eigenvalues },
        })
    }

    /// Isotropic covariance `variance * I` with a constant mean.
    pub fn isotropic(shape: &[usize], mean_value: f64, variance: f64) -> Result<Self> {
        if variance <= 0.0 {
            return Err(Error::invalid_argument("variance must be positive"));
        }
        let dim: usize = shape.iter().product();
        let cov = DMatrix::from_diagonal_element(dim, dim, variance);
        Self::dense(shape, vec![mean_value; dim], cov)
    }

    /// Covariance diagonal in the basis of `transform` (which must be
    /// orthonormal: block DCT or Haar). `spectrum` holds the per-component
    /// variances on the frequency layout of `shape`.
    pub fn transform_diagonal(
        shape: &[usize],
        mean: ArrayD<f64>,
        transform: TransformKind,
        spectrum: ArrayD<f64>,
    ) -> Result<Self> {
        if shape.len() != 3 {
            return Err(Error::invalid_argument("shape must be [H, W, C]"));
        }
        match transform {
            TransformKind::BlockDct { .. } | TransformKind::Haar { .. } => {}
            _ => {
                return Err(Error::invalid_argument(
                    "transform-diagonal covariance needs an orthonormal transform",
                ))
            }
        }
        let probe = SpatialTensor::zeros(shape)?;
        let freq_shape = transform.forward(&probe)?.shape().to_vec();
        if spectrum.shape() != &freq_shape[..] {
            return Err(Error::invalid_argument(format!(
                "spectrum shape {:?} does not match frequency layout {:?}",
                spectrum.shape(),
                freq_shape
            )));
        }
        if spectrum.iter().any(|&d| d <= 0.0) {
            return Err(Error::invalid_argument("spectrum must be positive"));
        }
        if mean.shape() != shape {
            return Err(Error::invalid_argument("mean shape must match data shape"));
        }
        Ok(GaussianModel { shape: shape.to_vec(), mean, cov: CovRepr::TransformDiagonal { transform, spectrum } })
    }

    /// Stationary-field construction: block-DCT-diagonal covariance with a
    /// power-law spectrum over the 2-D frequency indices,
    /// `d(k_r, k_c) = scale / (1 + k_r^2 + k_c^2)^(power/2)`, equal across
    /// block positions and channels.
    pub fn block_spectrum(shape: &[usize], block_size: usize, power: f64, scale: f64) -> Result<Self> {
        let transform = TransformKind::BlockDct { block_size };
        let probe = SpatialTensor::zeros(shape)?;
        let freq_shape = transform.forward(&probe)?.shape().to_vec();
        let mut spectrum = ArrayD::zeros(IxDyn(&freq_shape));
        let b = block_size;
        for (ix, v) in spectrum.indexed_iter_mut() {
            let f = ix[freq_shape.len() - 2];
            let (kr, kc) = (f / b, f % b);
            *v = scale / (1.0 + (kr * kr + kc * kc) as f64).powf(power / 2.0);
        }
        let mean = ArrayD::zeros(IxDyn(shape));
        Self::transform_diagonal(shape, mean, transform, spectrum)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn mean(&self) -> &ArrayD<f64> {
        &self.mean
    }

    /// Diagonalizing transform, if the covariance is transform-diagonal.
    pub fn diagonalizing_transform(&self) -> Option<TransformKind> {
        match &self.cov {
            CovRepr::TransformDiagonal { transform, .. } => Some(*transform),
            CovRepr::Dense { .. } => None,
        }
    }

    /// Prior spectrum on the frequency layout, if transform-diagonal.
    pub fn prior_spectrum(&self) -> Option<&ArrayD<f64>> {
        match &self.cov {
            CovRepr::TransformDiagonal { spectrum, .. } => Some(spectrum),
            CovRepr::Dense { .. } => None,
        }
    }

    /// Materializes the prior covariance as a dense matrix (row-major over
    /// the flattened data). Intended for desk-scale dims.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        match &self.cov {
            CovRepr::Dense { q, eigvals } => {
                let scaled = q * DMatrix::from_diagonal(eigvals);
                scaled * q.transpose()
            }
            CovRepr::TransformDiagonal { transform, spectrum } => {
                let dim = self.dim();
                let mut cov = DMatrix::zeros(dim, dim);
                for col in 0..dim {
                    let mut basis = vec![0.0; dim];
                    basis[col] = 1.0;
                    let x = SpatialTensor::new(
                        ArrayD::from_shape_vec(IxDyn(&self.shape), basis).unwrap(),
                    )
                    .unwrap();
                    let mut f = transform.forward(&x).unwrap();
                    *f.data_mut() *= spectrum;
                    let back = transform.inverse(&f).unwrap();
                    for (row, v) in back.data().iter().enumerate() {
                        cov[(row, col)] = *v;
                    }
                }
                cov
            }
        }
    }

    /// Posterior mean `E[x | z]`; `z` must have the model's data shape.
    pub fn posterior_mean(&self, z: &ArrayD<f64>, noise: &NoiseInfo) -> Result<ArrayD<f64>> {
        self.check_shape(z)?;
        let (alpha, sigma2) = (noise.alpha, noise.sigma * noise.sigma);
        match &self.cov {
            CovRepr::Dense { q, eigvals } => {
                let zv = DVector::from_column_slice(z.as_slice().expect("contiguous"));
                let mv = DVector::from_column_slice(self.mean.as_slice().expect("contiguous"));
                let zc = q.transpose() * zv;
                let mc = q.transpose() * mv;
                let mut out = DVector::zeros(zc.len());
                for i in 0..zc.len() {
                    let l = eigvals[i];
                    out[i] = (sigma2 * mc[i] + alpha * l * zc[i]) / (sigma2 + alpha * alpha * l);
                }
                let out = q * out;
                Ok(ArrayD::from_shape_vec(z.raw_dim(), out.as_slice().to_vec())
                    .expect("shape/len agree"))
            }
            CovRepr::TransformDiagonal { transform, spectrum } => {
                let zf = transform.forward(&SpatialTensor::new(z.clone())?)?;
                let mf = transform.forward(&SpatialTensor::new(self.mean.clone())?)?;
                let mut out = zf.data().clone();
                for ((o, d), m) in out.iter_mut().zip(spectrum.iter()).zip(mf.data().iter()) {
                    *o = (sigma2 * m + alpha * d * *o) / (sigma2 + alpha * alpha * d);
                }
                let freq = crate::tensor::FrequencyTensor::new(out, *transform)?;
                Ok(transform.inverse(&freq)?.into_inner())
            }
        }
    }

    /// Posterior covariance `(Sigma^-1 + (alpha^2/sigma^2) I)^-1` as a
    /// dense matrix; independent of `z`.
    pub fn posterior_cov_dense(&self, noise: &NoiseInfo) -> Result<DMatrix<f64>> {
        if noise.sigma <= 0.0 {
            return Err(Error::invalid_argument(
                "posterior covariance needs sigma > 0",
            ));
        }
        let (alpha, sigma2) = (noise.alpha, noise.sigma * noise.sigma);
        match &self.cov {
            CovRepr::Dense { q, eigvals } => {
                let post: DVector<f64> = eigvals
                    .map(|l| l * sigma2 / (sigma2 + alpha * alpha * l));
                Ok(q * DMatrix::from_diagonal(&post) * q.transpose())
            }
            CovRepr::TransformDiagonal { .. } => {
                // Fall back through the dense materialization of the prior.
                let prior = self.covariance_dense();
                let eig = prior.symmetric_eigen();
                let post: DVector<f64> = eig
                    .eigenvalues
                    .map(|l| l * sigma2 / (sigma2 + alpha * alpha * l));
                let q = eig.eigenvectors;
                Ok(&q * DMatrix::from_diagonal(&post) * q.transpose())
            }
        }
    }

    /// Per-frequency posterior variances `(1/d_f + alpha^2/sigma^2)^-1` on
    /// the frequency layout; only for transform-diagonal covariance.
    pub fn posterior_spectrum(&self, noise: &NoiseInfo) -> Result<ArrayD<f64>> {
        let (alpha, sigma2) = (noise.alpha, noise.sigma * noise.sigma);
        match &self.cov {
            CovRepr::TransformDiagonal { spectrum, .. } => {
                Ok(spectrum.map(|&d| d * sigma2 / (sigma2 + alpha * alpha * d)))
            }
            CovRepr::Dense { .. } => Err(Error::invalid_state(
                "posterior spectrum requires a transform-diagonal covariance",
            )),
        }
    }

    /// Same covariance, mean replaced by a constant fill.
    pub fn with_mean_value(&self, value: f64) -> Self {
        let mut out = self.clone();
        out.mean = ArrayD::from_elem(IxDyn(&self.shape), value);
        out
    }

    /// Covariance scaled by a positive factor (spectrum or eigenvalues).
    pub fn with_covariance_scaled(&self, factor: f64) -> Result<Self> {
        if factor <= 0.0 {
            return Err(Error::invalid_argument("covariance scale must be positive"));
        }
        let mut out = self.clone();
        match &mut out.cov {
            CovRepr::Dense { eigvals, .. } => {
                for v in eigvals.iter_mut() {
                    *v *= factor;
                }
            }
            CovRepr::TransformDiagonal { spectrum, .. } => {
                for v in spectrum.iter_mut() {
                    *v *= factor;
                }
            }
        }
        Ok(out)
    }

    /// Log-density of `x` under the scaled-and-noised marginal
    /// `N(scale * mu, scale^2 Sigma + noise_var I)`.
    pub fn scaled_marginal_logpdf(&self, x: &[f64], scale: f64, noise_var: f64) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid_argument("dimension mismatch"));
        }
        if noise_var <= 0.0 {
            return Err(Error::invalid_argument("noise_var must be positive"));
        }
        match &self.cov {
            CovRepr::Dense { q, eigvals } => {
                let mv = self.mean.as_slice().expect("contiguous");
                let centered =
                    DVector::from_iterator(x.len(), x.iter().zip(mv).map(|(xi, mi)| xi - scale * mi));
                let coords = q.transpose() * centered;
                let mut log_det = 0.0;
                let mut quad = 0.0;
                for i in 0..coords.len() {
                    let v = scale * scale * eigvals[i] + noise_var;
                    log_det += v.ln();
                    quad += coords[i] * coords[i] / v;
                }
                let dim = x.len() as f64;
                Ok(-0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
            }
            CovRepr::TransformDiagonal { transform, spectrum } => {
                let mv = self.mean.as_slice().expect("contiguous");
                let centered: Vec<f64> =
                    x.iter().zip(mv).map(|(xi, mi)| xi - scale * mi).collect();
                let arr = ArrayD::from_shape_vec(IxDyn(&self.shape), centered)
                    .expect("shape/len agree");
                let coords = transform.forward(&SpatialTensor::new(arr)?)?;
                let mut log_det = 0.0;
                let mut quad = 0.0;
                for (c, d) in coords.data().iter().zip(spectrum.iter()) {
                    let v = scale * scale * d + noise_var;
                    log_det += v.ln();
                    quad += c * c / v;
                }
                let dim = x.len() as f64;
                Ok(-0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
            }
        }
    }

    /// Draws an exact sample `mu + Sigma^(1/2) xi`.
    pub fn sample(&self, rng: &mut Stream) -> ArrayD<f64> {
        match &self.cov {
            CovRepr::Dense { q, eigvals } => {
                let xi = DVector::from_vec(normal_vec(rng, self.dim()));
                let scaled: DVector<f64> =
                    DVector::from_iterator(xi.len(), xi.iter().zip(eigvals.iter()).map(|(x, l)| x * l.sqrt()));
                let out = q * scaled;
                let mv = self.mean.as_slice().expect("contiguous");
                let data: Vec<f64> = out.iter().zip(mv.iter()).map(|(a, m)| a + m).collect();
                ArrayD::from_shape_vec(IxDyn(&self.shape), data).expect("shape/len agree")
            }
            CovRepr::TransformDiagonal { transform, spectrum } => {
                let mut xi = crate::rng::normal_array(rng, spectrum.shape());
                for (x, d) in xi.iter_mut().zip(spectrum.iter()) {
                    *x *= d.sqrt();
                }
                let freq = crate::tensor::FrequencyTensor::new(xi, *transform).unwrap();
                let spatial = transform.inverse(&freq).unwrap();
                spatial.into_inner() + &self.mean
            }
        }
    }

    fn check_shape(&self, z: &ArrayD<f64>) -> Result<()> {
        if z.shape() != &self.shape[..] {
            return Err(Error::invalid_argument(format!(
                "input shape {:?} does not match model shape {:?}",
                z.shape(),
                self.shape
            )));
        }
        Ok(())
    }
}

impl Denoiser for GaussianModel {
    fn predict(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        nfe: &mut NfeLedger,
    ) -> Result<ArrayD<f64>> {
        nfe.add(1);
        self.posterior_mean(z, noise)
    }

    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        nfe.add(2);
        let x_hat = self.posterior_mean(z, noise)?;
        // J u = (alpha lambda / (sigma^2 + alpha^2 lambda)) u in the
        // diagonal basis; reuse the mean path with mu = 0, scaled.
        self.check_shape(tangent)?;
        let (alpha, sigma2) = (noise.alpha, noise.sigma * noise.sigma);
        let jv = match &self.cov {
            CovRepr::Dense { q, eigvals } => {
                let tv = DVector::from_column_slice(tangent.as_slice().expect("contiguous"));
                let tc = q.transpose() * tv;
                let mut out = DVector::zeros(tc.len());
                for i in 0..tc.len() {
                    let l = eigvals[i];
                    out[i] = alpha * l * tc[i] / (sigma2 + alpha * alpha * l);
                }
                let out = q * out;
                ArrayD::from_shape_vec(tangent.raw_dim(), out.as_slice().to_vec())
                    .expect("shape/len agree")
            }
            CovRepr::TransformDiagonal { transform, spectrum } => {
                let tf = transform.forward(&SpatialTensor::new(tangent.clone())?)?;
                let mut out = tf.data().clone();
                for (o, d) in out.iter_mut().zip(spectrum.iter()) {
                    *o = alpha * d * *o / (sigma2 + alpha * alpha * d);
                }
                let freq = crate::tensor::FrequencyTensor::new(out, *transform)?;
                transform.inverse(&freq)?.into_inner()
            }
        };
        Ok((x_hat, jv))
    }
}
