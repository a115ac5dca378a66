//! Individual sampler update rules. Each step maps `z_t` at noise level
//! `t` to `z_s` at the less-noisy level `s < t`.

use ndarray::ArrayD;

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::rng::{normal_array, Stream};
use crate::schedule::{make_noise_info, NoiseInfo, ScheduleKind, TimeGrid};
use crate::tensor::SpatialTensor;
use crate::tweedie::{frequency_hutchinson, noise_scale_factor, CovEstimatorConfig};

/// DDIM update: `z_s = alpha_s x + (sigma_s/sigma_t)(z_t - alpha_t x)`,
/// with the ratio defined as 0 when `sigma_s = 0`.
pub fn ddim_step(
    x: &ArrayD<f64>,
    z_t: &ArrayD<f64>,
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
) -> ArrayD<f64> {
    let ratio = if noise_s.sigma == 0.0 { 0.0 } else { noise_s.sigma / noise_t.sigma };
    let mut out = x * noise_s.alpha;
    out.zip_mut_with(z_t, |o, &z| *o += ratio * z);
    out.zip_mut_with(x, |o, &xv| *o -= ratio * noise_t.alpha * xv);
    out
}

/// Covariance-aware step: inject structured posterior noise into the
/// x-prediction, then take a DDIM step on the noised prediction.
///
/// At `t = 1.0` a fixed variance is used instead, because the model runs
/// out of distribution there.
pub fn cov_aware_step<D: Denoiser + ?Sized>(
    handle: &D,
    z_t: &ArrayD<f64>,
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
    cfg: &CovEstimatorConfig,
    rng: &mut Stream,
    nfe: &mut NfeLedger,
) -> Result<(ArrayD<f64>, Option<crate::tweedie::FrequencyVariance>)> {
    cfg.validate()?;
    let first_step = noise_t.t == Some(1.0) && cfg.first_step_special;
    let eps = normal_array(rng, z_t.shape());
    let (noised_x, variance) = if first_step {
        let x = handle.predict(z_t, noise_t, nfe)?;
        let scale = cfg.first_step_var.sqrt();
        let mut out = x;
        out.zip_mut_with(&eps, |o, &e| *o += scale * e);
        (out, None)
    } else {
        let fac = noise_scale_factor(noise_t.logsnr);
        let tangent = &eps * fac;
        let (x, dx_dnoise) = handle.predict_jvp(z_t, noise_t, &tangent, nfe)?;
        let (noise, variance) = frequency_hutchinson_detailed(
            &SpatialTensor::new(dx_dnoise)?,
            &SpatialTensor::new(eps)?,
            cfg,
        )?;
        let mut out = x;
        out.zip_mut_with(noise.data(), |o, &n| *o += n);
        (out, Some(variance))
    };
    Ok((ddim_step(&noised_x, z_t, noise_t, noise_s), variance))
}

/// [`frequency_hutchinson`] plus the per-group variances it used, for
/// diagnostics. Single-sample inputs only.
pub fn frequency_hutchinson_detailed(
    dx_dnoise: &SpatialTensor,
    eps: &SpatialTensor,
    cfg: &CovEstimatorConfig,
) -> Result<(SpatialTensor, crate::tweedie::FrequencyVariance)> {
    let noise = frequency_hutchinson(dx_dnoise, eps, cfg)?;
    let variance = crate::tweedie::grouped_variances_of(dx_dnoise, eps, cfg)?;
    Ok((noise, variance))
}

/// Ancestral (DDPM) step.
///
/// With `alpha_tilde = alpha_t / alpha_s` and the forward transition
/// `z_t = alpha_tilde z_s + sqrt(sigma_t^2 - alpha_tilde^2 sigma_s^2) xi`,
/// the posterior `q(z_s | z_t, x)` is Gaussian with
///   mean `(alpha_tilde sigma_s^2 / sigma_t^2) z_t
///         + (alpha_s sigma_ts^2 / sigma_t^2) x`,
///   variance `sigma_s^2 sigma_ts^2 / sigma_t^2`,
/// where `sigma_ts^2 = sigma_t^2 - alpha_tilde^2 sigma_s^2`. The model
/// prediction stands in for `x`.
pub fn ddpm_step<D: Denoiser + ?Sized>(
    handle: &D,
    z_t: &ArrayD<f64>,
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
    rng: &mut Stream,
    nfe: &mut NfeLedger,
) -> Result<ArrayD<f64>> {
    let x = handle.predict(z_t, noise_t, nfe)?;
    let xi = normal_array(rng, z_t.shape());
    let (st2, ss2) = (noise_t.sigma * noise_t.sigma, noise_s.sigma * noise_s.sigma);
    let alpha_tilde = noise_t.alpha / noise_s.alpha;
    let sigma_ts2 = st2 - alpha_tilde * alpha_tilde * ss2;
    let coeff_z = alpha_tilde * ss2 / st2;
    let coeff_x = noise_s.alpha * sigma_ts2 / st2;
    let std = (ss2 * sigma_ts2 / st2).max(0.0).sqrt();
    let mut out = x * coeff_x;
    out.zip_mut_with(z_t, |o, &z| *o += coeff_z * z);
    out.zip_mut_with(&xi, |o, &n| *o += std * n);
    Ok(out)
}

/// aDDIM step: the DDIM mean plus Gaussian noise calibrated from a
/// precomputed scalar estimate of `Var[x | z_t]`.
///
/// Under the DDIM coupling `z_s = (sigma_s/sigma_t) z_t + gamma x` with
/// `gamma = alpha_s - alpha_t sigma_s / sigma_t`, the conditional variance
/// of `z_s` given `z_t` is `gamma^2 Var[x | z_t]`; the step restores it
/// with fresh noise scaled by `gamma sqrt(eta * data_var)`.
#[allow(clippy::too_many_arguments)]
pub fn addim_step<D: Denoiser + ?Sized>(
    handle: &D,
    z_t: &ArrayD<f64>,
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
    data_var_estimate: f64,
    eta: f64,
    rng: &mut Stream,
    nfe: &mut NfeLedger,
) -> Result<ArrayD<f64>> {
    if data_var_estimate.is_nan() || data_var_estimate < 0.0 {
        return Err(Error::invalid_state(
            "aDDIM requires a non-negative precomputed variance estimate",
        ));
    }
    let x = handle.predict(z_t, noise_t, nfe)?;
    let xi = normal_array(rng, z_t.shape());
    let mut out = ddim_step(&x, z_t, noise_t, noise_s);
    let ratio = if noise_s.sigma == 0.0 { 0.0 } else { noise_s.sigma / noise_t.sigma };
    let gamma = noise_s.alpha - noise_t.alpha * ratio;
    let scale = gamma * (eta * data_var_estimate).sqrt();
    out.zip_mut_with(&xi, |o, &n| *o += scale * n);
    Ok(out)
}

/// Calibrates the aDDIM per-step variance table on a batch of clean
/// samples: `E[ ||x - x_hat(z_t)||^2 / D ]` at each step origin of the
/// grid. Returns the table and the number of evaluations spent.
pub fn estimate_addim_data_var<D: Denoiser + ?Sized, F>(
    handle: &D,
    mut draw_data: F,
    batch: usize,
    grid: &TimeGrid,
    schedule: ScheduleKind,
    rng: &mut Stream,
) -> Result<(Vec<f64>, u64)>
where
    F: FnMut(&mut Stream) -> ArrayD<f64>,
{
    if batch == 0 {
        return Err(Error::invalid_argument("batch must be >= 1"));
    }
    let mut nfe = NfeLedger::new();
    let mut table = Vec::with_capacity(grid.num_steps());
    for (t, _) in grid.transitions() {
        let noise = make_noise_info(t, schedule)?;
        let mut acc = 0.0;
        for _ in 0..batch {
            let x = draw_data(rng);
            let eps = normal_array(rng, x.shape());
            let mut z = &x * noise.alpha;
            z.zip_mut_with(&eps, |o, &e| *o += noise.sigma * e);
            let x_hat = handle.predict(&z, &noise, &mut nfe)?;
            let mut sq = 0.0;
            for (a, b) in x.iter().zip(x_hat.iter()) {
                sq += (a - b) * (a - b);
            }
            acc += sq / x.len() as f64;
        }
        table.push(acc / batch as f64);
    }
    Ok((table, nfe.total()))
}

/// Second-order deterministic step: trapezoidal correction of the
/// x-prediction integral in `u = alpha/sigma` (the exponential-integrator
/// form of the probability-flow ODE, finite at the `t = 1` endpoint).
/// Falls back to Euler (plain DDIM) when `sigma_s = 0`.
pub fn heun_step<D: Denoiser + ?Sized>(
    handle: &D,
    z_t: &ArrayD<f64>,
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
    nfe: &mut NfeLedger,
) -> Result<ArrayD<f64>> {
    let x_t = handle.predict(z_t, noise_t, nfe)?;
    let z_pred = ddim_step(&x_t, z_t, noise_t, noise_s);
    if noise_s.sigma == 0.0 {
        return Ok(z_pred);
    }
    let x_s = handle.predict(&z_pred, noise_s, nfe)?;
    let avg = (&x_t + &x_s) * 0.5;
    Ok(ddim_step(&avg, z_t, noise_t, noise_s))
}

/// Multistep state for DPM-Solver++(2M).
#[derive(Debug, Clone, Default)]
pub struct DpmState {
    prev_x: Option<ArrayD<f64>>,
    prev_half_logsnr: f64,
}

/// DPM-Solver++(2M) step in x-prediction: one fresh evaluation per step;
/// the previous step's prediction supplies the second-order correction.
/// The first step (no history) is the first-order update, which under
/// this parameterization coincides with DDIM.
pub fn dpm_solverpp_step<D: Denoiser + ?Sized>(
    handle: &D,
    state: &mut DpmState,
    z_t: &ArrayD<f64>,
    noise_t: &NoiseInfo,
    noise_s: &NoiseInfo,
    nfe: &mut NfeLedger,
) -> Result<ArrayD<f64>> {
    let x_t = handle.predict(z_t, noise_t, nfe)?;
    let half_l_t = 0.5 * noise_t.logsnr;
    let half_l_s = 0.5 * noise_s.logsnr;
    let h = half_l_s - half_l_t;
    let h_prev = half_l_t - state.prev_half_logsnr;

    let ratio = if noise_s.sigma == 0.0 { 0.0 } else { noise_s.sigma / noise_t.sigma };
    let gamma = noise_s.alpha - noise_t.alpha * ratio; // alpha_s (1 - e^{-h})

    let combined = match &state.prev_x {
        Some(prev) if h.is_finite() && h_prev.is_finite() => {
            let c = h / (2.0 * h_prev);
            let mut d = &x_t * (1.0 + c);
            d.zip_mut_with(prev, |o, &p| *o -= c * p);
            d
        }
        _ => x_t.clone(),
    };
    let mut out = z_t * ratio;
    out.zip_mut_with(&combined, |o, &x| *o += gamma * x);

    state.prev_x = Some(x_t);
    state.prev_half_logsnr = half_l_t;
    Ok(out)
}
