//! Posterior covariance estimation in the frequency domain.
//!
//! One standard-normal probe `eps` and one JVP give an unbiased per-group
//! estimate of the posterior variance in a frequency basis; the same probe
//! is then rescaled per group and transformed back as structured noise
//! (the matched-probe scheme; it makes the scalar-Jacobian case exact).

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::schedule::NoiseInfo;
use crate::tensor::SpatialTensor;
use crate::transforms::{subband_count, subband_id, TransformKind};

/// Floor under the per-group probe energy, preventing division by zero.
const EPS2_FLOOR: f64 = 1e-6;
/// Cap inside the log of the noise scale factor.
const NOISE_FAC_CAP: f64 = 1e5;

/// How per-frequency variance estimates are shared across the tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingMode {
    /// Average over channels only: a distinct scale per spatial position
    /// and frequency component.
    Channel,
    /// Average over spatial positions: a scale per (frequency, channel).
    Spatial,
    /// Average over positions and channels: one scale per frequency.
    Global,
    /// Single scalar variance; the transform is forced to identity.
    Isotropic,
}

impl AveragingMode {
    pub fn name(&self) -> &'static str {
        match self {
            AveragingMode::Channel => "channel",
            AveragingMode::Spatial => "spatial",
            AveragingMode::Global => "global",
            AveragingMode::Isotropic => "isotropic",
        }
    }
}

/// Covariance-estimator settings used by the covariance-aware sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimatorConfig {
    /// Variance used at `t = 1.0`, where the model runs out of
    /// distribution.
    pub first_step_var: f64,
    pub averaging_mode: AveragingMode,
    /// Upper clip on per-group variance estimates.
    pub var_cap: f64,
    pub transform: TransformKind,
    /// Whether the fixed-variance first step is applied at all.
    pub first_step_special: bool,
}

impl Default for CovEstimatorConfig {
    fn default() -> Self {
        CovEstimatorConfig {
            first_step_var: 0.1,
            averaging_mode: AveragingMode::Channel,
            var_cap: 1e4,
            transform: TransformKind::ConvDct { block_size: 8 },
            first_step_special: true,
        }
    }
}

impl CovEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.first_step_var < 0.0 {
            return Err(Error::invalid_argument("first_step_var must be >= 0"));
        }
        if self.var_cap.is_nan() || self.var_cap < 0.0 {
            return Err(Error::invalid_argument("var_cap must be >= 0"));
        }
        Ok(())
    }

    /// Block size of the DCT-family transform, if any.
    pub fn block_size(&self) -> Option<usize> {
        match self.transform {
            TransformKind::BlockDct { block_size } | TransformKind::ConvDct { block_size } => {
                Some(block_size)
            }
            _ => None,
        }
    }

    /// The transform actually applied: isotropic averaging bypasses the
    /// frequency mapping entirely.
    pub fn effective_transform(&self) -> TransformKind {
        if self.averaging_mode == AveragingMode::Isotropic {
            TransformKind::Identity
        } else {
            self.transform
        }
    }
}

/// `exp(min(-1/2 (l + softplus(l)), log 1e5))`; equal to
/// `min(sigma^2/alpha, 1e5)` under the variance-preserving schedule.
pub fn noise_scale_factor(logsnr: f64) -> f64 {
    let softplus = if logsnr > 30.0 {
        logsnr
    } else if logsnr < -30.0 {
        logsnr.exp()
    } else {
        logsnr.exp().ln_1p()
    };
    (-0.5 * (logsnr + softplus)).min(NOISE_FAC_CAP.ln()).exp()
}

/// Group structure of a frequency layout under an averaging mode.
#[derive(Debug, Clone)]
struct Grouping {
    /// Group id per element of one `[h, w, F, C]` slab, row-major.
    ids: Vec<u32>,
    num_groups: usize,
    /// Reduced trailing axes, as indices into `[h, w, F, C]`.
    reduced_axes: Vec<usize>,
}

impl Grouping {
    fn build(layout: &TransformKind, hwfc: (usize, usize, usize, usize), mode: AveragingMode) -> Self {
        let (h, w, f, c) = hwfc;
        let wavelet_levels = layout.wavelet_levels();
        let subbands = wavelet_levels.map(subband_count).unwrap_or(0);
        let sb = |y: usize, x: usize| -> usize {
            subband_id(y, x, h, w, wavelet_levels.expect("wavelet layout"))
        };
        let mut ids = vec![0u32; h * w * f * c];
        let (num_groups, reduced_axes): (usize, Vec<usize>) = match (mode, wavelet_levels) {
            (AveragingMode::Channel, _) => {
                for y in 0..h {
                    for x in 0..w {
                        for fi in 0..f {
                            let gid = ((y * w + x) * f + fi) as u32;
                            for ci in 0..c {
                                ids[((y * w + x) * f + fi) * c + ci] = gid;
                            }
                        }
                    }
                }
                (h * w * f, vec![3])
            }
            (AveragingMode::Spatial, None) => {
                for y in 0..h {
                    for x in 0..w {
                        for fi in 0..f {
                            for ci in 0..c {
                                ids[((y * w + x) * f + fi) * c + ci] = (fi * c + ci) as u32;
                            }
                        }
                    }
                }
                (f * c, vec![0, 1])
            }
            (AveragingMode::Spatial, Some(_)) => {
                for y in 0..h {
                    for x in 0..w {
                        let band = sb(y, x);
                        for fi in 0..f {
                            for ci in 0..c {
                                ids[((y * w + x) * f + fi) * c + ci] = (band * c + ci) as u32;
                            }
                        }
                    }
                }
                (subbands * c, vec![0, 1])
            }
            (AveragingMode::Global, None) => {
                for y in 0..h {
                    for x in 0..w {
                        for fi in 0..f {
                            for ci in 0..c {
                                ids[((y * w + x) * f + fi) * c + ci] = fi as u32;
                            }
                        }
                    }
                }
                (f, vec![0, 1, 3])
            }
            (AveragingMode::Global, Some(_)) => {
                for y in 0..h {
                    for x in 0..w {
                        let band = sb(y, x) as u32;
                        for fi in 0..f {
                            for ci in 0..c {
                                ids[((y * w + x) * f + fi) * c + ci] = band;
                            }
                        }
                    }
                }
                (subbands, vec![0, 1, 3])
            }
            (AveragingMode::Isotropic, _) => (1, vec![0, 1, 2, 3]),
        };
        Grouping { ids, num_groups, reduced_axes }
    }

    /// Per-group means of `a[i] * b[i]` and `a[i]^2` over one slab.
    fn product_means(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut prod = vec![0.0; self.num_groups];
        let mut sq = vec![0.0; self.num_groups];
        let mut count = vec![0u64; self.num_groups];
        for ((&ai, &bi), &gid) in a.iter().zip(b.iter()).zip(self.ids.iter()) {
            let g = gid as usize;
            prod[g] += ai * bi;
            sq[g] += ai * ai;
            count[g] += 1;
        }
        for g in 0..self.num_groups {
            let n = count[g].max(1) as f64;
            prod[g] /= n;
            sq[g] /= n;
        }
        (prod, sq)
    }
}

/// Per-group posterior variance estimates on the frequency layout.
#[derive(Debug, Clone)]
pub struct FrequencyVariance {
    /// Estimates broadcastable against the frequency tensor: reduced axes
    /// kept as singletons for axis-shaped groupings, full layout
    /// (group-constant) for subband groupings.
    pub values: ArrayD<f64>,
    /// Which trailing `[h, w, F, C]` axes were averaged over.
    pub group_axes: Vec<usize>,
    /// Distinct variance groups per sample.
    pub num_groups: usize,
}

fn values_array(
    grouping: &Grouping,
    per_group: &[f64],
    layout: &TransformKind,
    hwfc: (usize, usize, usize, usize),
) -> ArrayD<f64> {
    let (h, w, f, c) = hwfc;
    match (grouping.reduced_axes.as_slice(), layout.wavelet_levels()) {
        // Axis-shaped groupings: emit keepdims arrays.
        ([3], _) => ArrayD::from_shape_vec(IxDyn(&[h, w, f, 1]), per_group.to_vec()).unwrap(),
        ([0, 1], None) => {
            ArrayD::from_shape_vec(IxDyn(&[1, 1, f, c]), per_group.to_vec()).unwrap()
        }
        ([0, 1, 3], None) => {
            ArrayD::from_shape_vec(IxDyn(&[1, 1, f, 1]), per_group.to_vec()).unwrap()
        }
        ([0, 1, 2, 3], _) => ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), per_group[0]),
        // Subband groupings: group-constant over the full layout.
        _ => {
            let mut full = vec![0.0; h * w * f * c];
            for (slot, gid) in full.iter_mut().zip(grouping.ids.iter()) {
                *slot = per_group[*gid as usize];
            }
            ArrayD::from_shape_vec(IxDyn(&[h, w, f, c]), full).unwrap()
        }
    }
}

/// Core of the generalized Hutchinson estimator: given the frequency-space
/// probe and JVP output for one slab, returns the clipped per-group
/// variances and the per-group noise scales `sqrt(var/eps2)`.
fn slab_variances(
    grouping: &Grouping,
    epsf: &[f64],
    dxf: &[f64],
    var_cap: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (mut var, mut eps2) = grouping.product_means(epsf, dxf);
    for v in &mut var {
        *v = v.clamp(0.0, var_cap);
    }
    for e in &mut eps2 {
        *e = e.max(EPS2_FLOOR);
    }
    let scales: Vec<f64> = var.iter().zip(eps2.iter()).map(|(v, e)| (v / e).sqrt()).collect();
    (var, scales)
}

/// Converts one JVP output into structured noise: transform both inputs,
/// estimate the per-group variance from `mean(eps_f * dx_f)`, rescale the
/// probe by `sqrt(var_f / mean(eps_f^2))` and transform back.
///
/// `dx_dnoise` must be `J . (noise_scale_factor(l) * eps)` for the same
/// probe `eps`.
pub fn frequency_hutchinson(
    dx_dnoise: &SpatialTensor,
    eps: &SpatialTensor,
    cfg: &CovEstimatorConfig,
) -> Result<SpatialTensor> {
    if dx_dnoise.shape() != eps.shape() {
        return Err(Error::invalid_argument(format!(
            "dx_dnoise shape {:?} does not match eps shape {:?}",
            dx_dnoise.shape(),
            eps.shape()
        )));
    }
    cfg.validate()?;
    let transform = cfg.effective_transform();
    let dxf = transform.forward(dx_dnoise)?;
    let mut epsf = transform.forward(eps)?;

    let hwfc = epsf.hwfc();
    let grouping = Grouping::build(&transform, hwfc, cfg.averaging_mode);
    let slab_len = hwfc.0 * hwfc.1 * hwfc.2 * hwfc.3;
    let batch = epsf.data().len() / slab_len;

    {
        let dx_std = dxf.data().as_standard_layout();
        let dx_flat = dx_std.as_slice().expect("standard layout");
        let eps_flat = epsf
            .data_mut()
            .as_slice_mut()
            .expect("standard layout");
        for bi in 0..batch {
            let eps_slab = &mut eps_flat[bi * slab_len..][..slab_len];
            let dx_slab = &dx_flat[bi * slab_len..][..slab_len];
            let (_, scales) = slab_variances(&grouping, eps_slab, dx_slab, cfg.var_cap);
            for (e, &gid) in eps_slab.iter_mut().zip(grouping.ids.iter()) {
                *e *= scales[gid as usize];
            }
        }
    }
    transform.inverse(&epsf)
}

/// Clipped per-group variance estimates of a fixed `(dx_dnoise, eps)`
/// pair: exactly the values [`frequency_hutchinson`] uses internally for
/// one sampler step. Single-sample inputs only.
pub fn grouped_variances_of(
    dx_dnoise: &SpatialTensor,
    eps: &SpatialTensor,
    cfg: &CovEstimatorConfig,
) -> Result<FrequencyVariance> {
    if dx_dnoise.shape() != eps.shape() {
        return Err(Error::invalid_argument("dx_dnoise/eps shape mismatch"));
    }
    if dx_dnoise.data().ndim() != 3 {
        return Err(Error::invalid_argument(
            "grouped variances expect a single [H, W, C] sample",
        ));
    }
    cfg.validate()?;
    let transform = cfg.effective_transform();
    let dxf = transform.forward(dx_dnoise)?;
    let epsf = transform.forward(eps)?;
    let hwfc = epsf.hwfc();
    let grouping = Grouping::build(&transform, hwfc, cfg.averaging_mode);
    let (var, _) = slab_variances(
        &grouping,
        epsf.data().as_slice().expect("standard layout"),
        dxf.data().as_slice().expect("standard layout"),
        cfg.var_cap,
    );
    let values = values_array(&grouping, &var, &transform, hwfc);
    Ok(FrequencyVariance {
        values,
        group_axes: grouping.reduced_axes.clone(),
        num_groups: grouping.num_groups,
    })
}

/// Single-probe variance estimate, exactly as used inside one sampler
/// step (same rng consumption: one standard-normal probe).
pub fn step_frequency_variance<D: Denoiser + ?Sized>(
    handle: &D,
    z: &ArrayD<f64>,
    noise: &NoiseInfo,
    cfg: &CovEstimatorConfig,
    rng: &mut Stream,
    nfe: &mut NfeLedger,
) -> Result<FrequencyVariance> {
    estimate_frequency_variances(handle, z, noise, 1, cfg, rng, nfe)
}

/// Monte-Carlo average over independent probes of the per-group variance
/// estimates (before noise injection). Clipping to `[0, var_cap]` happens
/// after averaging.
pub fn estimate_frequency_variances<D: Denoiser + ?Sized>(
    handle: &D,
    z: &ArrayD<f64>,
    noise: &NoiseInfo,
    probes: usize,
    cfg: &CovEstimatorConfig,
    rng: &mut Stream,
    nfe: &mut NfeLedger,
) -> Result<FrequencyVariance> {
    if probes == 0 {
        return Err(Error::invalid_argument("probes must be >= 1"));
    }
    cfg.validate()?;
    if z.ndim() != 3 {
        return Err(Error::invalid_argument(
            "variance estimation expects a single [H, W, C] sample",
        ));
    }
    let transform = cfg.effective_transform();
    let fac = noise_scale_factor(noise.logsnr);

    let mut acc: Option<Vec<f64>> = None;
    let mut grouping: Option<Grouping> = None;
    let mut hwfc = (0, 0, 0, 0);
    for _ in 0..probes {
        let eps = crate::rng::normal_array(rng, z.shape());
        let tangent = &eps * fac;
        let (_, dx) = handle.predict_jvp(z, noise, &tangent, nfe)?;
        let epsf = transform.forward(&SpatialTensor::new(eps)?)?;
        let dxf = transform.forward(&SpatialTensor::new(dx)?)?;
        hwfc = epsf.hwfc();
        let grouping =
            grouping.get_or_insert_with(|| Grouping::build(&transform, hwfc, cfg.averaging_mode));
        let (prod, _) = grouping.product_means(
            epsf.data().as_slice().expect("standard layout"),
            dxf.data().as_slice().expect("standard layout"),
        );
        match &mut acc {
            Some(acc) => {
                for (a, p) in acc.iter_mut().zip(prod.iter()) {
                    *a += p;
                }
            }
            None => acc = Some(prod),
        }
    }
    let grouping = grouping.expect("at least one probe");
    let mut per_group = acc.expect("at least one probe");
    for v in &mut per_group {
        *v = (*v / probes as f64).clamp(0.0, cfg.var_cap);
    }
    let values = values_array(&grouping, &per_group, &transform, hwfc);
    Ok(FrequencyVariance {
        values,
        group_axes: grouping.reduced_axes.clone(),
        num_groups: grouping.num_groups,
    })
}

/// Number of distinct variance groups the estimator produces for a given
/// data shape and config; used for granularity assertions and diagnostics.
pub fn variance_group_count(shape: &[usize], cfg: &CovEstimatorConfig) -> Result<usize> {
    let transform = cfg.effective_transform();
    let probe = SpatialTensor::zeros(shape)?;
    let freq = transform.forward(&probe)?;
    let grouping = Grouping::build(&transform, freq.hwfc(), cfg.averaging_mode);
    Ok(grouping.num_groups)
}

/// Exponential-family parameters of the reverse transition
/// `p(x_{t-1} | x_t) = exp(lambda x_{t-1}^T x_t - F(x_t) - G(x_{t-1})) p(x_{t-1})`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorExpFamilyParams {
    /// `alpha_tilde / sigma_t^2`.
    pub lambda: f64,
    /// `alpha(t) / alpha(s)`.
    pub alpha_tilde: f64,
    /// Transition noise variance `sigma_t^2`.
    pub sigma_t_sq: f64,
}

/// Builds the `(lambda, F, G)` parameters for the transition from `s` to
/// `t` (`t` noisier).
pub fn posterior_exp_family_params(
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
) -> Result<PosteriorExpFamilyParams> {
    if noise_t.sigma <= 0.0 {
        return Err(Error::invalid_argument("sigma(t) must be positive"));
    }
    if noise_s.alpha <= 0.0 {
        return Err(Error::invalid_argument("alpha(s) must be positive"));
    }
    let alpha_tilde = noise_t.alpha / noise_s.alpha;
    let sigma_t_sq = noise_t.sigma * noise_t.sigma;
    Ok(PosteriorExpFamilyParams { lambda: alpha_tilde / sigma_t_sq, alpha_tilde, sigma_t_sq })
}

impl PosteriorExpFamilyParams {
    /// `G(x) = 1/2 alpha_tilde^2 ||x||^2 / sigma_t^2`.
    pub fn g(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        0.5 * self.alpha_tilde * self.alpha_tilde * sq / self.sigma_t_sq
    }

    /// `F(x_t) = -log C(t) + 1/2 ||x_t||^2 / sigma_t^2 + log P(x_t)` for a
    /// Gaussian prior on `x_{t-1}`, where `P` is the marginal of
    /// `x_t = alpha_tilde x_{t-1} + sigma_t xi`. The sign on `log P` is
    /// fixed by the moment identities `grad F = lambda E[x_{t-1}|x_t]` and
    /// `hess F = lambda^2 Cov[x_{t-1}|x_t]`, which the tests verify.
    pub fn f_gaussian(&self, prior: &crate::denoiser::GaussianModel, x_t: &[f64]) -> Result<f64> {
        let dim = x_t.len() as f64;
        let log_c = -0.5 * dim * (2.0 * std::f64::consts::PI * self.sigma_t_sq).ln();
        let sq: f64 = x_t.iter().map(|v| v * v).sum();
        let log_p = prior.scaled_marginal_logpdf(x_t, self.alpha_tilde, self.sigma_t_sq)?;
        Ok(-log_c + 0.5 * sq / self.sigma_t_sq + log_p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GaussianModel;
    use crate::rng::{normal_array, sample_stream};
    use crate::schedule::{make_noise_info, ScheduleKind};

    fn cfg_with(mode: AveragingMode, transform: TransformKind) -> CovEstimatorConfig {
        CovEstimatorConfig { averaging_mode: mode, transform, ..CovEstimatorConfig::default() }
    }

    #[test]
    fn noise_scale_factor_values() {
        // l = 0: alpha = sigma = 2^(-1/2), sigma^2/alpha = 2^(-1/2).
        let v = noise_scale_factor(0.0);
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        // Cap active at very negative log-SNR: -1/2 (l + softplus(l)) ~ 15
        // exceeds log(1e5) ~ 11.5, so the min binds.
        assert!((noise_scale_factor(-30.0) - 1e5).abs() < 1e-9 * 1e5);
        // High log-SNR: factor vanishes.
        assert!(noise_scale_factor(60.0) < 1e-12);
        assert_eq!(noise_scale_factor(f64::INFINITY), 0.0);
        // Agreement with the direct sigma^2/alpha route.
        for i in 1..20 {
            let t = i as f64 / 20.0;
            let n = make_noise_info(t, ScheduleKind::Cosine).unwrap();
            let direct = (n.sigma * n.sigma / n.alpha).min(1e5);
            let via_l = noise_scale_factor(n.logsnr);
            assert!(
                (direct - via_l).abs() < 1e-10 * direct.max(1.0),
                "t={t}: {direct} vs {via_l}"
            );
        }
    }

    #[test]
    fn scalar_jacobian_is_exact_in_every_mode() {
        let mut rng = sample_stream(50, 0);
        let shape = [8usize, 8, 3];
        let eps = SpatialTensor::new(normal_array(&mut rng, &shape)).unwrap();
        for c in [0.0, 0.37, 1.0, 4.2] {
            for mode in [
                AveragingMode::Channel,
                AveragingMode::Spatial,
                AveragingMode::Global,
                AveragingMode::Isotropic,
            ] {
                let cfg = cfg_with(mode, TransformKind::ConvDct { block_size: 4 });
                let dx = SpatialTensor::new(eps.data() * c).unwrap();
                let out = frequency_hutchinson(&dx, &eps, &cfg).unwrap();
                let root = c.sqrt();
                for (o, e) in out.data().iter().zip(eps.data().iter()) {
                    assert!(
                        (o - root * e).abs() < 1e-10,
                        "mode {mode:?}, c {c}: {o} vs {}",
                        root * e
                    );
                }
            }
        }
    }

    #[test]
    fn scalar_jacobian_exact_for_wavelet_transforms() {
        let mut rng = sample_stream(51, 0);
        let shape = [8usize, 8, 2];
        let eps = SpatialTensor::new(normal_array(&mut rng, &shape)).unwrap();
        let dx = SpatialTensor::new(eps.data() * 2.5).unwrap();
        for transform in [
            TransformKind::Haar { levels: 2 },
            TransformKind::LeGall53 { levels: 2 },
            TransformKind::BlockDct { block_size: 4 },
            TransformKind::Identity,
        ] {
            for mode in [AveragingMode::Channel, AveragingMode::Spatial, AveragingMode::Global] {
                let cfg = cfg_with(mode, transform);
                let out = frequency_hutchinson(&dx, &eps, &cfg).unwrap();
                for (o, e) in out.data().iter().zip(eps.data().iter()) {
                    assert!(
                        (o - 2.5f64.sqrt() * e).abs() < 1e-9,
                        "{transform:?} {mode:?}: {o} vs {e}"
                    );
                }
            }
        }
    }

    #[test]
    fn negative_and_zero_jacobians_clip_to_zero() {
        let mut rng = sample_stream(52, 0);
        let shape = [8usize, 8, 1];
        let eps = SpatialTensor::new(normal_array(&mut rng, &shape)).unwrap();
        let cfg = CovEstimatorConfig::default();

        let neg = SpatialTensor::new(eps.data() * -1.0).unwrap();
        let out = frequency_hutchinson(&neg, &eps, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0), "clip at zero binds");

        let zero = SpatialTensor::zeros(&shape).unwrap();
        let out = frequency_hutchinson(&zero, &eps, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sign_flip_antisymmetry_is_exact() {
        let mut rng = sample_stream(53, 0);
        let shape = [8usize, 8, 2];
        let eps = SpatialTensor::new(normal_array(&mut rng, &shape)).unwrap();
        let dx = SpatialTensor::new(normal_array(&mut rng, &shape)).unwrap();
        let cfg = CovEstimatorConfig::default();
        let out = frequency_hutchinson(&dx, &eps, &cfg).unwrap();
        let flipped = frequency_hutchinson(
            &SpatialTensor::new(dx.data() * -1.0).unwrap(),
            &SpatialTensor::new(eps.data() * -1.0).unwrap(),
            &cfg,
        )
        .unwrap();
        for (a, b) in out.data().iter().zip(flipped.data().iter()) {
            assert_eq!(*a, -*b, "output must flip sign exactly");
        }
    }

    #[test]
    fn safeguards_keep_outputs_finite() {
        let shape = [8usize, 8, 1];
        let cfg = CovEstimatorConfig::default();
        let zeros = SpatialTensor::zeros(&shape).unwrap();
        let huge = SpatialTensor::new(ArrayD::from_elem(IxDyn(&shape), 1e12)).unwrap();
        let mut rng = sample_stream(54, 0);
        let eps = SpatialTensor::new(normal_array(&mut rng, &shape)).unwrap();
        for (dx, probe) in [(&huge, &eps), (&huge, &huge), (&zeros, &zeros), (&eps, &zeros)] {
            let out = frequency_hutchinson(dx, probe, &cfg).unwrap();
            assert!(out.data().iter().all(|v| v.is_finite()), "non-finite output");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = SpatialTensor::zeros(&[8, 8, 1]).unwrap();
        let b = SpatialTensor::zeros(&[8, 8, 2]).unwrap();
        assert!(frequency_hutchinson(&a, &b, &CovEstimatorConfig::default()).is_err());
    }

    #[test]
    fn group_counts_match_modes() {
        let shape = [16usize, 16, 3];
        let base = CovEstimatorConfig::default(); // ConvDct(8): h = w = 9, F = 64
        let count = |mode| {
            variance_group_count(
                &shape,
                &CovEstimatorConfig { averaging_mode: mode, ..base.clone() },
            )
            .unwrap()
        };
        assert_eq!(count(AveragingMode::Channel), 9 * 9 * 64);
        assert_eq!(count(AveragingMode::Spatial), 64 * 3);
        assert_eq!(count(AveragingMode::Global), 64);
        assert_eq!(count(AveragingMode::Isotropic), 1);
        assert!(count(AveragingMode::Channel) > count(AveragingMode::Global));

        // Wavelet grouping counts by subband.
        let wav = CovEstimatorConfig {
            averaging_mode: AveragingMode::Global,
            transform: TransformKind::Haar { levels: 3 },
            ..base
        };
        assert_eq!(variance_group_count(&shape, &wav).unwrap(), 10);
    }

    #[test]
    fn isotropic_estimate_converges_to_analytic_posterior_variance() {
        let dim = 16;
        let v = 2.0;
        let model = GaussianModel::isotropic(&[dim, 1, 1], 0.0, v).unwrap();
        let noise = make_noise_info(0.55, ScheduleKind::Cosine).unwrap();
        let mut rng = sample_stream(55, 0);
        let z = normal_array(&mut rng, &[dim, 1, 1]);
        let cfg = cfg_with(AveragingMode::Isotropic, TransformKind::Identity);
        let mut nfe = NfeLedger::new();
        let est =
            estimate_frequency_variances(&model, &z, &noise, 3000, &cfg, &mut rng, &mut nfe)
                .unwrap();
        let k = noise.alpha * noise.alpha / (noise.sigma * noise.sigma);
        let analytic = 1.0 / (1.0 / v + k);
        let got = est.values.iter().next().copied().unwrap();
        assert!(
            ((got - analytic) / analytic).abs() < 0.1,
            "estimate {got} vs analytic {analytic}"
        );
        assert_eq!(nfe.total(), 2 * 3000);
    }

    #[test]
    fn single_probe_matches_step_variance_for_same_stream() {
        let model = GaussianModel::isotropic(&[4, 4, 1], 0.0, 1.3).unwrap();
        let noise = make_noise_info(0.5, ScheduleKind::Cosine).unwrap();
        let cfg = cfg_with(AveragingMode::Channel, TransformKind::BlockDct { block_size: 2 });
        let mut rng_a = sample_stream(56, 0);
        let mut rng_b = rng_a.clone();
        let mut rng_z = sample_stream(56, 1);
        let z = normal_array(&mut rng_z, &[4, 4, 1]);
        let mut nfe = NfeLedger::new();
        let one = step_frequency_variance(&model, &z, &noise, &cfg, &mut rng_a, &mut nfe).unwrap();
        let est =
            estimate_frequency_variances(&model, &z, &noise, 1, &cfg, &mut rng_b, &mut nfe)
                .unwrap();
        assert_eq!(one.values, est.values);
        assert_eq!(one.num_groups, est.num_groups);
    }

    #[test]
    fn exp_family_lambda_examples() {
        let noise_t = make_noise_info(0.5, ScheduleKind::Cosine).unwrap();
        let noise_s = NoiseInfo { t: None, ..noise_t };
        let p = posterior_exp_family_params(&noise_t, &noise_s).unwrap();
        assert!((p.alpha_tilde - 1.0).abs() < 1e-15);
        assert!((p.lambda - 1.0 / (noise_t.sigma * noise_t.sigma)).abs() < 1e-12);

        let bad = make_noise_info(0.0, ScheduleKind::Cosine).unwrap();
        assert!(posterior_exp_family_params(&bad, &noise_s).is_err());
    }

    #[test]
    fn exp_family_gradient_matches_posterior_mean() {
        // grad F / lambda = E[x_{t-1} | x_t] for the two-level Gaussian
        // model; finite differences of the F closure against the analytic
        // posterior mean.
        let dim = 4;
        let mut rng = sample_stream(57, 0);
        let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| {
            use rand::Rng;
            rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.4
        });
        let cov = &a * a.transpose() + nalgebra::DMatrix::identity(dim, dim);
        let mean = vec![0.3, -0.1, 0.2, 0.0];
        let prior = GaussianModel::dense(&[dim, 1, 1], mean, cov).unwrap();

        let noise_t = make_noise_info(0.6, ScheduleKind::Cosine).unwrap();
        let noise_s = make_noise_info(0.5, ScheduleKind::Cosine).unwrap();
        let p = posterior_exp_family_params(&noise_t, &noise_s).unwrap();

        let x_t: Vec<f64> = crate::rng::normal_vec(&mut rng, dim);
        // Analytic posterior mean of the two-level model: reuse the
        // Gaussian posterior with coefficients (alpha_tilde, sigma_t).
        let virtual_noise = NoiseInfo {
            t: None,
            alpha: p.alpha_tilde,
            sigma: p.sigma_t_sq.sqrt(),
            logsnr: 0.0,
        };
        let z = ArrayD::from_shape_vec(IxDyn(&[dim, 1, 1]), x_t.clone()).unwrap();
        let expect = prior.posterior_mean(&z, &virtual_noise).unwrap();

        let h = 1e-5;
        for i in 0..dim {
            let mut xp = x_t.clone();
            let mut xm = x_t.clone();
            xp[i] += h;
            xm[i] -= h;
            let fp = p.f_gaussian(&prior, &xp).unwrap();
            let fm = p.f_gaussian(&prior, &xm).unwrap();
            let grad = (fp - fm) / (2.0 * h);
            let got = grad / p.lambda;
            let want = expect.as_slice().unwrap()[i];
            assert!((got - want).abs() < 1e-6, "coord {i}: {got} vs {want}");
        }
    }
}
