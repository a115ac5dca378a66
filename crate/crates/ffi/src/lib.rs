//! C ABI for the covariance-aware sampling lab: opaque model handles,
//! status codes, frequency transforms on caller buffers, and sampler runs.
//!
//! Conventions:
//! - Every fallible call returns a [`CovsampStatus`]; `COVSAMP_STATUS_OK`
//!   is zero. On failure, [`covsamp_last_error_message`] returns a
//!   thread-local, NUL-terminated description valid until the next failing
//!   call on the same thread.
//! - Array buffers are `double`, row-major `[H, W, C]` (or
//!   `[N, H, W, C]` for sample batches); the caller owns and sizes them.
//! - Handles created by `covsamp_model_*` must be released with
//!   [`covsamp_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::{ArrayD, IxDyn};

use covsamp_core::denoiser::{GaussianModel, GuidedDenoiser};
use covsamp_core::error::Error;
use covsamp_core::samplers::{
    estimate_addim_data_var, run_sampler, AddimConfig, SamplerKind, StepPlan,
};
use covsamp_core::schedule::{make_time_grid, GridSpacing, ScheduleKind};
use covsamp_core::tensor::{FrequencyTensor, SpatialTensor};
use covsamp_core::transforms::TransformKind;
use covsamp_core::tweedie::{AveragingMode, CovEstimatorConfig};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovsampStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidState = 3,
    NumericallyDegenerate = 4,
    ConfigError = 5,
    SchemaError = 6,
    IoError = 7,
    InternalPanic = 8,
}

fn status_for(err: &Error) -> CovsampStatus {
    match err {
        Error::InvalidArgument(_) => CovsampStatus::InvalidArgument,
        Error::InvalidState(_) => CovsampStatus::InvalidState,
        Error::NumericallyDegenerate(_) => CovsampStatus::NumericallyDegenerate,
        Error::Config(_) => CovsampStatus::ConfigError,
        Error::Schema(_) => CovsampStatus::SchemaError,
        Error::Io(_) => CovsampStatus::IoError,
    }
}

fn run_guarded<F: FnOnce() -> Result<(), (CovsampStatus, String)>>(f: F) -> CovsampStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CovsampStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CovsampStatus::InternalPanic
        }
    }
}

fn core_err(e: Error) -> (CovsampStatus, String) {
    (status_for(&e), e.to_string())
}

fn invalid(msg: &str) -> (CovsampStatus, String) {
    (CovsampStatus::InvalidArgument, msg.to_string())
}

fn null_err(what: &str) -> (CovsampStatus, String) {
    (CovsampStatus::NullPointer, format!("{what} is null"))
}

/// Opaque data-model handle.
pub struct CovsampModel {
    inner: GaussianModel,
}

/// Frequency transforms exposed over the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovsampTransform {
    Identity = 0,
    BlockDct = 1,
    ConvDct = 2,
    Haar = 3,
    LeGall53 = 4,
}

/// Variance-sharing modes of the estimator.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovsampAveraging {
    Channel = 0,
    Spatial = 1,
    Global = 2,
    Isotropic = 3,
}

/// Sampler kinds exposed over the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovsampSampler {
    CovAware = 0,
    Ddim = 1,
    Ddpm = 2,
    Addim = 3,
    Heun = 4,
    DpmSolverPp = 5,
}

/// Covariance-estimator options for the covariance-aware sampler.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CovsampEstimatorOptions {
    pub transform: CovsampTransform,
    /// Block size for the DCT transforms, decomposition levels for the
    /// wavelets; ignored for the identity.
    pub transform_param: usize,
    pub averaging: CovsampAveraging,
    pub first_step_var: f64,
    pub var_cap: f64,
    pub first_step_special: bool,
}

fn transform_kind(t: CovsampTransform, param: usize) -> TransformKind {
    match t {
        CovsampTransform::Identity => TransformKind::Identity,
        CovsampTransform::BlockDct => TransformKind::BlockDct { block_size: param },
        CovsampTransform::ConvDct => TransformKind::ConvDct { block_size: param },
        CovsampTransform::Haar => TransformKind::Haar { levels: param },
        CovsampTransform::LeGall53 => TransformKind::LeGall53 { levels: param },
    }
}

fn estimator_config(opts: &CovsampEstimatorOptions) -> CovEstimatorConfig {
    CovEstimatorConfig {
        first_step_var: opts.first_step_var,
        averaging_mode: match opts.averaging {
            CovsampAveraging::Channel => AveragingMode::Channel,
            CovsampAveraging::Spatial => AveragingMode::Spatial,
            CovsampAveraging::Global => AveragingMode::Global,
            CovsampAveraging::Isotropic => AveragingMode::Isotropic,
        },
        var_cap: opts.var_cap,
        transform: transform_kind(opts.transform, opts.transform_param),
        first_step_special: opts.first_step_special,
    }
}

/// Default estimator options (ConvDCT block 8, channel averaging).
#[no_mangle]
pub extern "C" fn covsamp_estimator_options_default() -> CovsampEstimatorOptions {
    CovsampEstimatorOptions {
        transform: CovsampTransform::ConvDct,
        transform_param: 8,
        averaging: CovsampAveraging::Channel,
        first_step_var: 0.1,
        var_cap: 1e4,
        first_step_special: true,
    }
}

/// Message describing the most recent failure on this thread.
#[no_mangle]
pub extern "C" fn covsamp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates an isotropic Gaussian model `N(mean, variance I)` on
/// `[height, width, channels]` data.
///
/// # Safety
/// `out_model` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn covsamp_model_gaussian_isotropic(
    height: usize,
    width: usize,
    channels: usize,
    mean: f64,
    variance: f64,
    out_model: *mut *mut CovsampModel,
) -> CovsampStatus {
    run_guarded(|| {
        if out_model.is_null() {
            return Err(null_err("out_model"));
        }
        let model = GaussianModel::isotropic(&[height, width, channels], mean, variance)
            .map_err(core_err)?;
        unsafe { *out_model = Box::into_raw(Box::new(CovsampModel { inner: model })) };
        Ok(())
    })
}

/// Creates a Gaussian model whose covariance is diagonal in the block-DCT
/// basis with a power-law spectrum over 2-D frequency indices.
///
/// # Safety
/// `out_model` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn covsamp_model_block_spectrum(
    height: usize,
    width: usize,
    channels: usize,
    block_size: usize,
    power: f64,
    scale: f64,
    out_model: *mut *mut CovsampModel,
) -> CovsampStatus {
    run_guarded(|| {
        if out_model.is_null() {
            return Err(null_err("out_model"));
        }
        let model =
            GaussianModel::block_spectrum(&[height, width, channels], block_size, power, scale)
                .map_err(core_err)?;
        unsafe { *out_model = Box::into_raw(Box::new(CovsampModel { inner: model })) };
        Ok(())
    })
}

/// Releases a model handle; accepts null.
///
/// # Safety
/// `model` must be a pointer returned by a `covsamp_model_*` constructor
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn covsamp_model_free(model: *mut CovsampModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Flattened data dimension of a model (`H * W * C`).
///
/// # Safety
/// `model` must be a live handle and `out_dim` writable.
#[no_mangle]
pub unsafe extern "C" fn covsamp_model_dim(
    model: *const CovsampModel,
    out_dim: *mut usize,
) -> CovsampStatus {
    run_guarded(|| {
        if model.is_null() {
            return Err(null_err("model"));
        }
        if out_dim.is_null() {
            return Err(null_err("out_dim"));
        }
        unsafe { *out_dim = (*model).inner.dim() };
        Ok(())
    })
}

/// Draws `count` exact data samples into `out` (row-major
/// `[count, H, W, C]`, `out_len == count * H * W * C`). The i-th sample
/// uses the stream derived from `(seed, i)`.
///
/// # Safety
/// `model` must be a live handle; `out` must point to `out_len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn covsamp_model_sample_data(
    model: *const CovsampModel,
    count: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> CovsampStatus {
    run_guarded(|| {
        if model.is_null() {
            return Err(null_err("model"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let inner = unsafe { &(*model).inner };
        let dim = inner.dim();
        if out_len != count * dim {
            return Err(invalid(&format!(
                "out_len {out_len} should equal count * dim = {}",
                count * dim
            )));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
        for i in 0..count {
            let mut rng = covsamp_core::rng::sample_stream(seed, i as u64);
            let sample = inner.sample(&mut rng);
            let flat = sample.as_slice().expect("standard layout");
            dst[i * dim..(i + 1) * dim].copy_from_slice(flat);
        }
        Ok(())
    })
}

/// Number of doubles the forward transform of `[H, W, C]` data produces.
///
/// # Safety
/// `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn covsamp_transform_output_len(
    transform: CovsampTransform,
    transform_param: usize,
    height: usize,
    width: usize,
    channels: usize,
    out_len: *mut usize,
) -> CovsampStatus {
    run_guarded(|| {
        if out_len.is_null() {
            return Err(null_err("out_len"));
        }
        let kind = transform_kind(transform, transform_param);
        let probe = SpatialTensor::zeros(&[height, width, channels]).map_err(core_err)?;
        let freq = kind.forward(&probe).map_err(core_err)?;
        unsafe { *out_len = freq.data().len() };
        Ok(())
    })
}

/// Applies the forward transform to one `[H, W, C]` buffer, writing the
/// `[h, w, F, C]` frequency coefficients row-major into `out`.
///
/// # Safety
/// `input` must hold `H * W * C` readable doubles; `out` must hold
/// `out_len` writable doubles sized per `covsamp_transform_output_len`.
#[no_mangle]
pub unsafe extern "C" fn covsamp_transform_forward(
    transform: CovsampTransform,
    transform_param: usize,
    input: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
    out_len: usize,
) -> CovsampStatus {
    run_guarded(|| {
        if input.is_null() {
            return Err(null_err("input"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let kind = transform_kind(transform, transform_param);
        let src = unsafe { std::slice::from_raw_parts(input, height * width * channels) };
        let arr = ArrayD::from_shape_vec(IxDyn(&[height, width, channels]), src.to_vec())
            .map_err(|e| invalid(&e.to_string()))?;
        let freq = kind
            .forward(&SpatialTensor::new(arr).map_err(core_err)?)
            .map_err(core_err)?;
        if freq.data().len() != out_len {
            return Err(invalid(&format!(
                "out_len {out_len} should equal {}",
                freq.data().len()
            )));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
        dst.copy_from_slice(freq.data().as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Inverts frequency coefficients produced by [`covsamp_transform_forward`]
/// back to a `[H, W, C]` buffer.
///
/// # Safety
/// `freq` must hold `freq_len` readable doubles; `out` must hold
/// `H * W * C` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn covsamp_transform_inverse(
    transform: CovsampTransform,
    transform_param: usize,
    freq: *const f64,
    freq_len: usize,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
) -> CovsampStatus {
    run_guarded(|| {
        if freq.is_null() {
            return Err(null_err("freq"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let kind = transform_kind(transform, transform_param);
        let probe = SpatialTensor::zeros(&[height, width, channels]).map_err(core_err)?;
        let freq_shape = kind.forward(&probe).map_err(core_err)?.shape().to_vec();
        let expect: usize = freq_shape.iter().product();
        if freq_len != expect {
            return Err(invalid(&format!("freq_len {freq_len} should equal {expect}")));
        }
        let src = unsafe { std::slice::from_raw_parts(freq, freq_len) };
        let arr = ArrayD::from_shape_vec(IxDyn(&freq_shape), src.to_vec())
            .map_err(|e| invalid(&e.to_string()))?;
        let spatial = kind
            .inverse(&FrequencyTensor::new(arr, kind).map_err(core_err)?)
            .map_err(core_err)?;
        let dst = unsafe { std::slice::from_raw_parts_mut(out, height * width * channels) };
        dst.copy_from_slice(spatial.data().as_slice().expect("standard layout"));
        Ok(())
    })
}

/// `exp(min(-1/2 (l + softplus(l)), log 1e5))`, the per-step tangent
/// scale.
#[no_mangle]
pub extern "C" fn covsamp_noise_scale_factor(logsnr: f64) -> f64 {
    covsamp_core::tweedie::noise_scale_factor(logsnr)
}

/// Runs a sampler against the exact denoiser of `model` under the cosine
/// schedule on a uniform grid.
///
/// Writes `num_samples` generated samples row-major `[N, H, W, C]` into
/// `out` (`out_len == num_samples * H * W * C`). When `uncond_model` is
/// non-null, classifier-free guidance with `guidance_scale` on the open
/// log-SNR interval `(interval_lo, interval_hi)` is applied and budgets
/// use guided accounting. `opts` may be null except for the
/// covariance-aware sampler. `out_planned_nfe` / `out_actual_nfe`
/// (nullable) receive the per-sample budget and spent evaluations.
///
/// # Safety
/// `model` (and `uncond_model` when non-null) must be live handles;
/// `opts` null or readable; `out` must hold `out_len` writable doubles;
/// the nfe outputs must be null or writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn covsamp_run_sampler(
    model: *const CovsampModel,
    uncond_model: *const CovsampModel,
    guidance_scale: f64,
    interval_lo: f64,
    interval_hi: f64,
    sampler: CovsampSampler,
    steps: usize,
    num_samples: usize,
    seed: u64,
    opts: *const CovsampEstimatorOptions,
    out: *mut f64,
    out_len: usize,
    out_planned_nfe: *mut u64,
    out_actual_nfe: *mut u64,
) -> CovsampStatus {
    run_guarded(|| {
        if model.is_null() {
            return Err(null_err("model"));
        }
        if out.is_null() {
            return Err(null_err("out"));
        }
        let inner = unsafe { &(*model).inner };
        let dim = inner.dim();
        if out_len != num_samples * dim {
            return Err(invalid(&format!(
                "out_len {out_len} should equal num_samples * dim = {}",
                num_samples * dim
            )));
        }
        let schedule = ScheduleKind::Cosine;
        let grid = make_time_grid(steps, GridSpacing::UniformT, schedule).map_err(core_err)?;

        let est = if opts.is_null() {
            estimator_config(&covsamp_estimator_options_default())
        } else {
            estimator_config(unsafe { &*opts })
        };
        let kind = match sampler {
            CovsampSampler::CovAware => SamplerKind::CovAware(est),
            CovsampSampler::Ddim => SamplerKind::Ddim,
            CovsampSampler::Ddpm => SamplerKind::Ddpm,
            CovsampSampler::Addim => {
                let data_model = inner.clone();
                let mut rng = covsamp_core::rng::setup_stream(seed, 0xadd1);
                let (table, setup_evals) = estimate_addim_data_var(
                    inner,
                    move |r| data_model.sample(r),
                    256,
                    &grid,
                    schedule,
                    &mut rng,
                )
                .map_err(core_err)?;
                SamplerKind::Addim(AddimConfig { data_var: table, eta: 1.0, setup_evals })
            }
            CovsampSampler::Heun => SamplerKind::Heun,
            CovsampSampler::DpmSolverPp => SamplerKind::DpmSolverPp,
        };

        let guided = if uncond_model.is_null() {
            None
        } else {
            Some((interval_lo, interval_hi))
        };
        let plan = StepPlan { grid, guided };
        let shape = inner.shape().to_vec();

        let run = if uncond_model.is_null() {
            run_sampler(&kind, inner, &plan, schedule, &shape, num_samples, seed)
                .map_err(core_err)?
        } else {
            let uncond = unsafe { &(*uncond_model).inner };
            let handle = GuidedDenoiser::new(
                inner.clone(),
                uncond.clone(),
                guidance_scale,
                (interval_lo, interval_hi),
            )
            .map_err(core_err)?;
            run_sampler(&kind, &handle, &plan, schedule, &shape, num_samples, seed)
                .map_err(core_err)?
        };

        let dst = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
        for (i, sample) in run.samples.iter().enumerate() {
            let flat = sample.as_slice().expect("standard layout");
            dst[i * dim..(i + 1) * dim].copy_from_slice(flat);
        }
        if !out_planned_nfe.is_null() {
            unsafe { *out_planned_nfe = run.ledger.planned_per_sample };
        }
        if !out_actual_nfe.is_null() {
            unsafe { *out_actual_nfe = run.ledger.actual_per_sample };
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    #[test]
    fn models_transforms_and_errors() {
        unsafe {
            let mut model: *mut CovsampModel = std::ptr::null_mut();
            let status =
                covsamp_model_gaussian_isotropic(4, 4, 1, 0.0, 1.0, &mut model as *mut _);
            assert_eq!(status, CovsampStatus::Ok);
            let mut dim = 0usize;
            assert_eq!(covsamp_model_dim(model, &mut dim), CovsampStatus::Ok);
            assert_eq!(dim, 16);

            // Invalid variance surfaces as a status + message.
            let mut bad: *mut CovsampModel = std::ptr::null_mut();
            let status =
                covsamp_model_gaussian_isotropic(4, 4, 1, 0.0, -1.0, &mut bad as *mut _);
            assert_eq!(status, CovsampStatus::InvalidArgument);
            let msg = CStr::from_ptr(covsamp_last_error_message());
            assert!(msg.to_str().unwrap().contains("variance"));

            covsamp_model_free(model);
            covsamp_model_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn transform_round_trip_through_the_abi() {
        unsafe {
            let (h, w, c) = (8usize, 8, 2);
            let input: Vec<f64> = (0..h * w * c).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut flen = 0usize;
            assert_eq!(
                covsamp_transform_output_len(CovsampTransform::ConvDct, 4, h, w, c, &mut flen),
                CovsampStatus::Ok
            );
            let mut freq = vec![0.0; flen];
            assert_eq!(
                covsamp_transform_forward(
                    CovsampTransform::ConvDct,
                    4,
                    input.as_ptr(),
                    h,
                    w,
                    c,
                    freq.as_mut_ptr(),
                    flen
                ),
                CovsampStatus::Ok
            );
            let mut back = vec![0.0; h * w * c];
            assert_eq!(
                covsamp_transform_inverse(
                    CovsampTransform::ConvDct,
                    4,
                    freq.as_ptr(),
                    flen,
                    h,
                    w,
                    c,
                    back.as_mut_ptr()
                ),
                CovsampStatus::Ok
            );
            for (a, b) in input.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-10);
            }

            // Wrong buffer length is rejected with "should equal".
            let status = covsamp_transform_inverse(
                CovsampTransform::ConvDct,
                4,
                freq.as_ptr(),
                flen - 1,
                h,
                w,
                c,
                back.as_mut_ptr(),
            );
            assert_eq!(status, CovsampStatus::InvalidArgument);
            let msg = CStr::from_ptr(covsamp_last_error_message());
            assert!(msg.to_str().unwrap().contains("should equal"));
        }
    }

    #[test]
    fn sampler_runs_and_reports_nfe() {
        unsafe {
            let mut model: *mut CovsampModel = std::ptr::null_mut();
            assert_eq!(
                covsamp_model_gaussian_isotropic(4, 1, 1, 0.0, 1.0, &mut model as *mut _),
                CovsampStatus::Ok
            );
            let num_samples = 8usize;
            let mut out = vec![0.0; num_samples * 4];
            let mut planned = 0u64;
            let mut actual = 0u64;
            let opts = CovsampEstimatorOptions {
                transform: CovsampTransform::Identity,
                transform_param: 0,
                averaging: CovsampAveraging::Isotropic,
                ..covsamp_estimator_options_default()
            };
            let status = covsamp_run_sampler(
                model,
                std::ptr::null(),
                0.0,
                0.0,
                0.0,
                CovsampSampler::CovAware,
                6,
                num_samples,
                42,
                &opts,
                out.as_mut_ptr(),
                out.len(),
                &mut planned,
                &mut actual,
            );
            assert_eq!(status, CovsampStatus::Ok);
            assert_eq!(planned, 12, "6 unguided steps x 2");
            assert_eq!(actual, 11, "first-step shortcut documented in the ledger");
            assert!(out.iter().all(|v| v.is_finite()));

            // Identical seed gives identical output through the ABI.
            let mut out2 = vec![0.0; num_samples * 4];
            let status = covsamp_run_sampler(
                model,
                std::ptr::null(),
                0.0,
                0.0,
                0.0,
                CovsampSampler::CovAware,
                6,
                num_samples,
                42,
                &opts,
                out2.as_mut_ptr(),
                out2.len(),
                std::ptr::null_mut(),
                std::ptr::null_mut(),
            );
            assert_eq!(status, CovsampStatus::Ok);
            assert_eq!(out, out2);

            covsamp_model_free(model);
        }
    }

    #[test]
    fn guided_run_through_the_abi() {
        unsafe {
            let mut cond: *mut CovsampModel = std::ptr::null_mut();
            let mut uncond: *mut CovsampModel = std::ptr::null_mut();
            assert_eq!(
                covsamp_model_gaussian_isotropic(4, 1, 1, 0.5, 1.0, &mut cond as *mut _),
                CovsampStatus::Ok
            );
            assert_eq!(
                covsamp_model_gaussian_isotropic(4, 1, 1, 0.0, 2.0, &mut uncond as *mut _),
                CovsampStatus::Ok
            );
            let mut out = vec![0.0; 4 * 4];
            let mut planned = 0u64;
            let status = covsamp_run_sampler(
                cond,
                uncond,
                1.2,
                -3.0,
                5.0,
                CovsampSampler::Ddim,
                8,
                4,
                7,
                std::ptr::null(),
                out.as_mut_ptr(),
                out.len(),
                &mut planned,
                std::ptr::null_mut(),
            );
            assert_eq!(status, CovsampStatus::Ok);
            assert_eq!(planned, 16, "8 guided steps x 2");
            covsamp_model_free(cond);
            covsamp_model_free(uncond);
        }
    }
}
