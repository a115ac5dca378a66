//! Denoisers exposing x-prediction and Jacobian-vector products.
//!
//! Analytic Gaussian and Gaussian-mixture models give closed-form
//! predictions for exact verification; a small MLP with forward-mode
//! autodiff stands in for a learned network. Every handle is immutable and
//! pure; function-evaluation counts are accumulated in an [`NfeLedger`]
//! owned by the caller, never by the handle.

pub mod gaussian;
pub mod gmm;
pub mod guided;
pub mod mlp;

pub use gaussian::GaussianModel;
pub use gmm::GaussianMixtureModel;
pub use guided::GuidedDenoiser;
pub use mlp::MlpDenoiser;

use ndarray::ArrayD;

use crate::error::Result;
use crate::schedule::NoiseInfo;

/// Running count of network evaluations. A value pass costs 1; a
/// forward-mode tangent pass costs 1 more, so `predict_jvp` on a leaf
/// denoiser records 2.
#[derive(Debug, Clone, Default)]
pub struct NfeLedger {
    evals: u64,
}

impl NfeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, n: u64) {
        self.evals += n;
    }

    pub fn total(&self) -> u64 {
        self.evals
    }
}

/// A predict-x function with JVP capability.
///
/// `predict_jvp`'s first output is bitwise equal to `predict` on the same
/// inputs, and its tangent output is linear in `tangent`.
pub trait Denoiser {
    /// Predicts the clean sample from `z` at noise level `noise`.
    fn predict(&self, z: &ArrayD<f64>, noise: &NoiseInfo, nfe: &mut NfeLedger)
        -> Result<ArrayD<f64>>;

    /// Returns `(x_hat, J . tangent)` where `J = d x_hat / d z`.
    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        nfe: &mut NfeLedger,
    ) -> Result<ArrayD<f64>> {
        (**self).predict(z, noise, nfe)
    }

    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        (**self).predict_jvp(z, noise, tangent, nfe)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        nfe: &mut NfeLedger,
    ) -> Result<ArrayD<f64>> {
        (**self).predict(z, noise, nfe)
    }

    fn predict_jvp(
        &self,
        z: &ArrayD<f64>,
        noise: &NoiseInfo,
        tangent: &ArrayD<f64>,
        nfe: &mut NfeLedger,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        (**self).predict_jvp(z, noise, tangent, nfe)
    }
}

/// Materializes the dense Jacobian of a denoiser at `(z, noise)` by
/// probing `predict_jvp` with basis tangents. Oracle machinery for tests
/// and verification; row-major over the flattened data.
pub fn dense_jacobian<D: Denoiser + ?Sized>(
    denoiser: &D,
    z: &ArrayD<f64>,
    noise: &NoiseInfo,
) -> Result<nalgebra::DMatrix<f64>> {
    let dim = z.len();
    let mut jac = nalgebra::DMatrix::zeros(dim, dim);
    let mut nfe = NfeLedger::new();
    for col in 0..dim {
        let mut tangent = ArrayD::zeros(z.raw_dim());
        tangent.as_slice_mut().unwrap()[col] = 1.0;
        let (_, jv) = denoiser.predict_jvp(z, noise, &tangent, &mut nfe)?;
        for (row, v) in jv.iter().enumerate() {
            jac[(row, col)] = *v;
        }
    }
    Ok(jac)
}
