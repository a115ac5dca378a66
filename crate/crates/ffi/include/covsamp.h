#ifndef COVSAMP_H
#define COVSAMP_H

/* Generated by cbindgen from covsamp-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Frequency transforms exposed over the ABI.
typedef enum CovsampTransform {
  COVSAMP_TRANSFORM_IDENTITY = 0,
  COVSAMP_TRANSFORM_BLOCK_DCT = 1,
  COVSAMP_TRANSFORM_CONV_DCT = 2,
  COVSAMP_TRANSFORM_HAAR = 3,
  COVSAMP_TRANSFORM_LE_GALL53 = 4,
} CovsampTransform;

// Variance-sharing modes of the estimator.
typedef enum CovsampAveraging {
  COVSAMP_AVERAGING_CHANNEL = 0,
  COVSAMP_AVERAGING_SPATIAL = 1,
  COVSAMP_AVERAGING_GLOBAL = 2,
  COVSAMP_AVERAGING_ISOTROPIC = 3,
} CovsampAveraging;

// Status codes returned by every fallible call.
typedef enum CovsampStatus {
  COVSAMP_STATUS_OK = 0,
  COVSAMP_STATUS_NULL_POINTER = 1,
  COVSAMP_STATUS_INVALID_ARGUMENT = 2,
  COVSAMP_STATUS_INVALID_STATE = 3,
  COVSAMP_STATUS_NUMERICALLY_DEGENERATE = 4,
  COVSAMP_STATUS_CONFIG_ERROR = 5,
  COVSAMP_STATUS_SCHEMA_ERROR = 6,
  COVSAMP_STATUS_IO_ERROR = 7,
  COVSAMP_STATUS_INTERNAL_PANIC = 8,
} CovsampStatus;

// Sampler kinds exposed over the ABI.
typedef enum CovsampSampler {
  COVSAMP_SAMPLER_COV_AWARE = 0,
  COVSAMP_SAMPLER_DDIM = 1,
  COVSAMP_SAMPLER_DDPM = 2,
  COVSAMP_SAMPLER_ADDIM = 3,
  COVSAMP_SAMPLER_HEUN = 4,
  COVSAMP_SAMPLER_DPM_SOLVER_PP = 5,
} CovsampSampler;

// Opaque data-model handle.
typedef struct CovsampModel CovsampModel;

// Covariance-estimator options for the covariance-aware sampler.
typedef struct CovsampEstimatorOptions {
  enum CovsampTransform transform;
  // Block size for the DCT transforms, decomposition levels for the
  // wavelets; ignored for the identity.
  uintptr_t transform_param;
  enum CovsampAveraging averaging;
  double first_step_var;
  double var_cap;
  bool first_step_special;
} CovsampEstimatorOptions;

// Default estimator options (ConvDCT block 8, channel averaging).
struct CovsampEstimatorOptions covsamp_estimator_options_default(void);

// Message describing the most recent failure on this thread.
const char *covsamp_last_error_message(void);

// Creates an isotropic Gaussian model `N(mean, variance I)` on
// `[height, width, channels]` data.
//
// # Safety
// `out_model` must point to writable storage for one pointer.
enum CovsampStatus covsamp_model_gaussian_isotropic(uintptr_t height,
                                                    uintptr_t width,
                                                    uintptr_t channels,
                                                    double mean,
                                                    double variance,
                                                    struct CovsampModel **out_model);

// Creates a Gaussian model whose covariance is diagonal in the block-DCT
// basis with a power-law spectrum over 2-D frequency indices.
//
// # Safety
// `out_model` must point to writable storage for one pointer.
enum CovsampStatus covsamp_model_block_spectrum(uintptr_t height,
                                                uintptr_t width,
                                                uintptr_t channels,
                                                uintptr_t block_size,
                                                double power,
                                                double scale,
                                                struct CovsampModel **out_model);

// Releases a model handle; accepts null.
//
// # Safety
// `model` must be a pointer returned by a `covsamp_model_*` constructor
// that has not been freed yet.
void covsamp_model_free(struct CovsampModel *model);

// Flattened data dimension of a model (`H * W * C`).
//
// # Safety
// `model` must be a live handle and `out_dim` writable.
enum CovsampStatus covsamp_model_dim(const struct CovsampModel *model, uintptr_t *out_dim);

// Draws `count` exact data samples into `out` (row-major
// `[count, H, W, C]`, `out_len == count * H * W * C`). The i-th sample
// uses the stream derived from `(seed, i)`.
//
// # Safety
// `model` must be a live handle; `out` must point to `out_len` writable
// doubles.
enum CovsampStatus covsamp_model_sample_data(const struct CovsampModel *model,
                                             uintptr_t count,
                                             uint64_t seed,
                                             double *out,
                                             uintptr_t out_len);

// Number of doubles the forward transform of `[H, W, C]` data produces.
//
// # Safety
// `out_len` must be writable.
enum CovsampStatus covsamp_transform_output_len(enum CovsampTransform transform,
                                                uintptr_t transform_param,
                                                uintptr_t height,
                                                uintptr_t width,
                                                uintptr_t channels,
                                                uintptr_t *out_len);

// Applies the forward transform to one `[H, W, C]` buffer, writing the
// `[h, w, F, C]` frequency coefficients row-major into `out`.
//
// # Safety
// `input` must hold `H * W * C` readable doubles; `out` must hold
// `out_len` writable doubles sized per `covsamp_transform_output_len`.
enum CovsampStatus covsamp_transform_forward(enum CovsampTransform transform,
                                             uintptr_t transform_param,
                                             const double *input,
                                             uintptr_t height,
                                             uintptr_t width,
                                             uintptr_t channels,
                                             double *out,
                                             uintptr_t out_len);

// Inverts frequency coefficients produced by [`covsamp_transform_forward`]
// back to a `[H, W, C]` buffer.
//
// # Safety
// `freq` must hold `freq_len` readable doubles; `out` must hold
// `H * W * C` writable doubles.
enum CovsampStatus covsamp_transform_inverse(enum CovsampTransform transform,
                                             uintptr_t transform_param,
                                             const double *freq,
                                             uintptr_t freq_len,
                                             uintptr_t height,
                                             uintptr_t width,
                                             uintptr_t channels,
                                             double *out);

// `exp(min(-1/2 (l + softplus(l)), log 1e5))`, the per-step tangent
// scale.
double covsamp_noise_scale_factor(double logsnr);

// Runs a sampler against the exact denoiser of `model` under the cosine
// schedule on a uniform grid.
//
// Writes `num_samples` generated samples row-major `[N, H, W, C]` into
// `out` (`out_len == num_samples * H * W * C`). When `uncond_model` is
// non-null, classifier-free guidance with `guidance_scale` on the open
// log-SNR interval `(interval_lo, interval_hi)` is applied and budgets
// use guided accounting. `opts` may be null except for the
// covariance-aware sampler. `out_planned_nfe` / `out_actual_nfe`
// (nullable) receive the per-sample budget and spent evaluations.
//
// # Safety
// `model` (and `uncond_model` when non-null) must be live handles;
// `opts` null or readable; `out` must hold `out_len` writable doubles;
// the nfe outputs must be null or writable.
enum CovsampStatus covsamp_run_sampler(const struct CovsampModel *model,
                                       const struct CovsampModel *uncond_model,
                                       double guidance_scale,
                                       double interval_lo,
                                       double interval_hi,
                                       enum CovsampSampler sampler,
                                       uintptr_t steps,
                                       uintptr_t num_samples,
                                       uint64_t seed,
                                       const struct CovsampEstimatorOptions *opts,
                                       double *out,
                                       uintptr_t out_len,
                                       uint64_t *out_planned_nfe,
                                       uint64_t *out_actual_nfe);

#endif  /* COVSAMP_H */
