//! Built-in verification suite: invariant checks over transforms, moment
//! identities, the Hutchinson estimator, accounting and determinism.
//! `covsamp verify` runs these and exits nonzero naming the first failing
//! check.

use ndarray::{ArrayD, IxDyn};

use crate::denoiser::{dense_jacobian, Denoiser, GaussianMixtureModel, GaussianModel, MlpDenoiser, NfeLedger};
use crate::error::Result;
use crate::eval::runners::{run_comparison, Experiment, SamplerChoice};
use crate::eval::rows_to_csv;
use crate::rng::{normal_array, normal_vec, setup_stream};
use crate::samplers::{per_step_nfe, run_sampler, SamplerKind, StepPlan};
use crate::schedule::{make_noise_info, make_time_grid, GridSpacing, ScheduleKind};
use crate::tensor::SpatialTensor;
use crate::transforms::{dct_matrix, DctNorm, TransformKind};
use crate::tweedie::{
    estimate_frequency_variances, frequency_hutchinson, noise_scale_factor,
    posterior_exp_family_params, AveragingMode, CovEstimatorConfig,
};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub tolerance: String,
    pub detail: String,
}

/// Test-harness fault injection; the CLI always runs with no faults.
#[derive(Debug, Clone, Default)]
pub struct FaultInjection {
    /// Multiplies the DCT matrix before the orthonormality check.
    pub dct_scale: Option<f64>,
}

type CheckFn = fn(&FaultInjection) -> Result<(bool, String)>;

fn check_dct_orthonormality(faults: &FaultInjection) -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    for n in 1..=64 {
        let mut m = dct_matrix(n, n, DctNorm::Ortho)?;
        if let Some(scale) = faults.dct_scale {
            m *= scale;
        }
        let prod = m.dot(&m.t());
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - expect).abs());
            }
        }
    }
    Ok((worst < 1e-10, format!("max |MM^T - I| = {worst:.3e}")))
}

fn check_conv_dct_energy(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(1, 1);
    let x = SpatialTensor::new(normal_array(&mut rng, &[128, 128, 3]))?;
    let y = TransformKind::ConvDct { block_size: 8 }.forward(&x)?;
    let ms_in: f64 = x.data().iter().map(|v| v * v).sum::<f64>() / x.data().len() as f64;
    let ms_out: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / y.data().len() as f64;
    let rel = ((ms_out - ms_in) / ms_in).abs();
    Ok((rel < 5e-3, format!("mean-square rel dev = {rel:.3e}")))
}

fn check_conv_dct_roundtrip(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(1, 2);
    let x = SpatialTensor::new(normal_array(&mut rng, &[128, 128, 3]))?;
    let kind = TransformKind::ConvDct { block_size: 8 };
    let back = kind.inverse(&kind.forward(&x)?)?;
    let mut worst = 0.0_f64;
    let mut ok = true;
    for (a, b) in x.data().iter().zip(back.data().iter()) {
        let dev = (a - b).abs();
        worst = worst.max(dev);
        ok &= dev < 1e-2 + 1e-2 * a.abs();
    }
    Ok((ok, format!("round-trip max dev = {worst:.3e}")))
}

fn check_block_dct_roundtrip(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(1, 3);
    let x = SpatialTensor::new(normal_array(&mut rng, &[32, 32, 2]))?;
    let kind = TransformKind::BlockDct { block_size: 8 };
    let y = kind.forward(&x)?;
    let back = kind.inverse(&y)?;
    let mut worst = 0.0_f64;
    for (a, b) in x.data().iter().zip(back.data().iter()) {
        worst = worst.max((a - b).abs());
    }
    let e_in: f64 = x.data().iter().map(|v| v * v).sum();
    let e_out: f64 = y.data().iter().map(|v| v * v).sum();
    let e_dev = (e_in - e_out).abs() / e_in;
    Ok((
        worst < 1e-10 && e_dev < 1e-10,
        format!("round-trip {worst:.3e}, energy rel dev {e_dev:.3e}"),
    ))
}

fn check_wavelet_roundtrip(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(1, 4);
    let x = SpatialTensor::new(normal_array(&mut rng, &[16, 16, 2]))?;
    let mut detail = String::new();
    let mut ok = true;
    for (kind, tol) in [
        (TransformKind::Haar { levels: 3 }, 1e-10),
        (TransformKind::LeGall53 { levels: 3 }, 1e-8),
    ] {
        let back = kind.inverse(&kind.forward(&x)?)?;
        let mut worst = 0.0_f64;
        for (a, b) in x.data().iter().zip(back.data().iter()) {
            worst = worst.max((a - b).abs());
        }
        ok &= worst < tol;
        detail.push_str(&format!("{} {worst:.3e}; ", kind.name()));
    }
    Ok((ok, detail))
}

fn check_schedule_invariants(_: &FaultInjection) -> Result<(bool, String)> {
    let schedules = [
        ScheduleKind::Cosine,
        ScheduleKind::ShiftedCosine { shift: 1.0 },
        ScheduleKind::LinearLogsnr { l_min: -10.0, l_max: 10.0 },
    ];
    let mut worst = 0.0_f64;
    for schedule in schedules {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let n = make_noise_info(t, schedule)?;
            worst = worst.max((n.alpha * n.alpha + n.sigma * n.sigma - 1.0).abs());
            if i > 0 && n.logsnr >= prev {
                return Ok((false, format!("logsnr not decreasing at t={t}")));
            }
            prev = n.logsnr;
        }
    }
    Ok((worst < 1e-12, format!("max |alpha^2+sigma^2-1| = {worst:.3e}")))
}

fn check_noise_scale_factor(_: &FaultInjection) -> Result<(bool, String)> {
    let mid = (noise_scale_factor(0.0) - std::f64::consts::FRAC_1_SQRT_2).abs();
    let cap = (noise_scale_factor(-30.0) - 1e5).abs() / 1e5;
    let hi = noise_scale_factor(60.0);
    Ok((
        mid < 1e-12 && cap < 1e-9 && hi < 1e-12,
        format!("l=0 dev {mid:.3e}, cap rel dev {cap:.3e}"),
    ))
}

fn check_tweedie_gaussian(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(2, 1);
    let dim = 8;
    let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| {
        use rand::Rng;
        rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.5
    });
    let cov = &a * a.transpose() + nalgebra::DMatrix::identity(dim, dim);
    let model = GaussianModel::dense(&[dim, 1, 1], vec![0.2; dim], cov)?;
    let mut worst = 0.0_f64;
    for i in 0..5 {
        let t = 0.15 + 0.15 * i as f64;
        let noise = make_noise_info(t, ScheduleKind::Cosine)?;
        let z = normal_array(&mut rng, &[dim, 1, 1]);
        let jac = dense_jacobian(&model, &z, &noise)?;
        let scaled = jac * (noise.sigma * noise.sigma / noise.alpha);
        let analytic = model.posterior_cov_dense(&noise)?;
        worst = worst.max((scaled - analytic).abs().max());
    }
    Ok((worst < 1e-8, format!("max |s^2/a J - Cov| = {worst:.3e}")))
}

fn check_exp_family_identities(_: &FaultInjection) -> Result<(bool, String)> {
    let dim = 4;
    let mut rng = setup_stream(2, 2);
    let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| {
        use rand::Rng;
        rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.4
    });
    let cov = &a * a.transpose() + nalgebra::DMatrix::identity(dim, dim);
    let prior = GaussianModel::dense(&[dim, 1, 1], vec![0.1; dim], cov)?;
    let noise_t = make_noise_info(0.6, ScheduleKind::Cosine)?;
    let noise_s = make_noise_info(0.5, ScheduleKind::Cosine)?;
    let p = posterior_exp_family_params(&noise_t, &noise_s)?;
    let virtual_noise = crate::schedule::NoiseInfo {
        t: None,
        alpha: p.alpha_tilde,
        sigma: p.sigma_t_sq.sqrt(),
        logsnr: 0.0,
    };
    let x_t = normal_vec(&mut rng, dim);
    let z = ArrayD::from_shape_vec(IxDyn(&[dim, 1, 1]), x_t.clone()).unwrap();
    let mean = prior.posterior_mean(&z, &virtual_noise)?;
    let cov_post = prior.posterior_cov_dense(&virtual_noise)?;

    let h = 1e-5;
    let mut worst_grad = 0.0_f64;
    let mut grad = vec![0.0; dim];
    for i in 0..dim {
        let mut xp = x_t.clone();
        let mut xm = x_t.clone();
        xp[i] += h;
        xm[i] -= h;
        grad[i] = (p.f_gaussian(&prior, &xp)? - p.f_gaussian(&prior, &xm)?) / (2.0 * h);
        worst_grad =
            worst_grad.max((grad[i] / p.lambda - mean.as_slice().unwrap()[i]).abs());
    }
    let mut worst_hess = 0.0_f64;
    for i in 0..dim {
        for j in 0..dim {
            let mut xpp = x_t.clone();
            let mut xpm = x_t.clone();
            let mut xmp = x_t.clone();
            let mut xmm = x_t.clone();
            xpp[i] += h;
            xpp[j] += h;
            xpm[i] += h;
            xpm[j] -= h;
            xmp[i] -= h;
            xmp[j] += h;
            xmm[i] -= h;
            xmm[j] -= h;
            let hess = (p.f_gaussian(&prior, &xpp)? - p.f_gaussian(&prior, &xpm)?
                - p.f_gaussian(&prior, &xmp)?
                + p.f_gaussian(&prior, &xmm)?)
                / (4.0 * h * h);
            worst_hess =
                worst_hess.max((hess / (p.lambda * p.lambda) - cov_post[(i, j)]).abs());
        }
    }
    Ok((
        worst_grad < 1e-6 && worst_hess < 1e-4,
        format!("grad dev {worst_grad:.3e}, hess dev {worst_hess:.3e}"),
    ))
}

fn check_hutchinson_scalar(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(2, 3);
    let eps = SpatialTensor::new(normal_array(&mut rng, &[8, 8, 3]))?;
    let mut worst = 0.0_f64;
    for mode in [
        AveragingMode::Channel,
        AveragingMode::Spatial,
        AveragingMode::Global,
        AveragingMode::Isotropic,
    ] {
        for c in [0.0, 0.7, 2.5] {
            let cfg = CovEstimatorConfig {
                averaging_mode: mode,
                transform: TransformKind::ConvDct { block_size: 4 },
                ..CovEstimatorConfig::default()
            };
            let dx = SpatialTensor::new(eps.data() * c)?;
            let out = frequency_hutchinson(&dx, &eps, &cfg)?;
            for (o, e) in out.data().iter().zip(eps.data().iter()) {
                worst = worst.max((o - c.sqrt() * e).abs());
            }
        }
    }
    Ok((worst < 1e-10, format!("max |out - sqrt(c) eps| = {worst:.3e}")))
}

fn check_hutchinson_convergence(_: &FaultInjection) -> Result<(bool, String)> {
    // Diagonal-in-block-DCT covariance on an 8x8 image: per-frequency
    // estimates converge to the analytic posterior variances.
    let model = GaussianModel::block_spectrum(&[8, 8, 1], 8, 2.0, 2.0)?;
    let noise = make_noise_info(0.5, ScheduleKind::Cosine)?;
    let cfg = CovEstimatorConfig {
        averaging_mode: AveragingMode::Global,
        transform: TransformKind::BlockDct { block_size: 8 },
        ..CovEstimatorConfig::default()
    };
    let mut rng = setup_stream(2, 4);
    let z = normal_array(&mut rng, &[8, 8, 1]);
    let mut nfe = NfeLedger::new();
    let est = estimate_frequency_variances(&model, &z, &noise, 2000, &cfg, &mut rng, &mut nfe)?;
    let analytic = model.posterior_spectrum(&noise)?;
    let mut worst = 0.0_f64;
    for (e, a) in est.values.iter().zip(analytic.iter()) {
        worst = worst.max((e - a).abs() / a);
    }
    Ok((worst < 0.12, format!("max rel dev = {worst:.3e} at 2000 probes")))
}

fn check_gmm_jvp(_: &FaultInjection) -> Result<(bool, String)> {
    let gmm = GaussianMixtureModel::new(
        &[2, 1, 1],
        vec![0.4, 0.6],
        vec![vec![1.0, -0.5], vec![-1.2, 0.8]],
        vec![0.6, 1.1],
    )?;
    let noise = make_noise_info(0.5, ScheduleKind::Cosine)?;
    let mut rng = setup_stream(2, 5);
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let z = normal_array(&mut rng, &[2, 1, 1]);
        let u = normal_array(&mut rng, &[2, 1, 1]);
        let (_, jv) = gmm.posterior_mean_jvp(&z, &noise, Some(&u))?;
        let jv = jv.unwrap();
        let h = 1e-4;
        let (xp, _) = gmm.posterior_mean_jvp(&(&z + &(&u * h)), &noise, None)?;
        let (xm, _) = gmm.posterior_mean_jvp(&(&z - &(&u * h)), &noise, None)?;
        let fd = (&xp - &xm) / (2.0 * h);
        let num: f64 =
            jv.iter().zip(fd.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1e-12));
    }
    Ok((worst < 1e-5, format!("max rel dev = {worst:.3e}")))
}

fn check_mlp_jvp(_: &FaultInjection) -> Result<(bool, String)> {
    let mut rng = setup_stream(2, 6);
    let mlp = MlpDenoiser::random(&[4, 1, 1], &[16, 16], &mut rng)?;
    let noise = make_noise_info(0.4, ScheduleKind::Cosine)?;
    let mut nfe = NfeLedger::new();
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let z = normal_array(&mut rng, &[4, 1, 1]);
        let u = normal_array(&mut rng, &[4, 1, 1]);
        let (_, jv) = mlp.predict_jvp(&z, &noise, &u, &mut nfe)?;
        let h = 1e-5;
        let xp = mlp.predict(&(&z + &(&u * h)), &noise, &mut nfe)?;
        let xm = mlp.predict(&(&z - &(&u * h)), &noise, &mut nfe)?;
        let fd = (&xp - &xm) / (2.0 * h);
        let num: f64 =
            jv.iter().zip(fd.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1e-12));
    }
    Ok((worst < 1e-4, format!("max rel dev = {worst:.3e}")))
}

fn check_nfe_accounting(_: &FaultInjection) -> Result<(bool, String)> {
    let model = GaussianModel::isotropic(&[4, 1, 1], 0.0, 1.0)?;
    let iso = CovEstimatorConfig {
        averaging_mode: AveragingMode::Isotropic,
        transform: TransformKind::Identity,
        ..CovEstimatorConfig::default()
    };
    let kinds = [
        (SamplerKind::CovAware(iso.clone()), 3u64, 2u64),
        (SamplerKind::Ddim, 2, 1),
        (SamplerKind::Ddpm, 2, 1),
        (SamplerKind::Heun, 4, 2),
        (SamplerKind::DpmSolverPp, 4, 2),
    ];
    for (kind, g, u) in &kinds {
        if per_step_nfe(kind, true) != *g || per_step_nfe(kind, false) != *u {
            return Ok((false, format!("per-step table wrong for {}", kind.name())));
        }
    }
    let grid = make_time_grid(5, GridSpacing::UniformT, ScheduleKind::Cosine)?;
    let plan = StepPlan { grid, guided: None };
    for (kind, _, _) in &kinds {
        let run = run_sampler(kind, &model, &plan, ScheduleKind::Cosine, &[4, 1, 1], 1, 0)?;
        if !run.ledger.reconciles() {
            return Ok((false, format!("ledger failed for {}", kind.name())));
        }
    }
    Ok((true, "per-step table and ledger reconciliation hold".to_string()))
}

fn check_ddim_degeneracy(_: &FaultInjection) -> Result<(bool, String)> {
    let model = GaussianModel::isotropic(&[4, 1, 1], 0.0, 1.0)?;
    let cfg = CovEstimatorConfig {
        first_step_var: 0.0,
        var_cap: 0.0,
        averaging_mode: AveragingMode::Isotropic,
        transform: TransformKind::Identity,
        ..CovEstimatorConfig::default()
    };
    let grid = make_time_grid(8, GridSpacing::UniformT, ScheduleKind::Cosine)?;
    let plan = StepPlan { grid, guided: None };
    let a = run_sampler(
        &SamplerKind::CovAware(cfg),
        &model,
        &plan,
        ScheduleKind::Cosine,
        &[4, 1, 1],
        2,
        13,
    )?;
    let b = run_sampler(&SamplerKind::Ddim, &model, &plan, ScheduleKind::Cosine, &[4, 1, 1], 2, 13)?;
    let equal = a.samples == b.samples;
    Ok((equal, "zeroed covariance-aware run vs DDIM, bitwise".to_string()))
}

fn check_rerun_determinism(_: &FaultInjection) -> Result<(bool, String)> {
    let model = GaussianModel::isotropic(&[4, 1, 1], 0.0, 1.0)?;
    let mut exp = Experiment::gaussian(model, ScheduleKind::Cosine);
    exp.num_samples = 8;
    exp.metrics_transform = TransformKind::Identity;
    let samplers = [SamplerChoice::Ddim, SamplerChoice::Ddpm];
    let (rows1, _) = run_comparison(&exp, &samplers, &[4], &[0])?;
    let (rows2, _) = run_comparison(&exp, &samplers, &[4], &[0])?;
    let equal = rows_to_csv(&rows1) == rows_to_csv(&rows2);
    Ok((equal, "identical CSV across reruns".to_string()))
}

/// Every check in fixed order: name, tolerance description, function.
const CHECKS: &[(&str, &str, CheckFn)] = &[
    ("dct-orthonormality", "max |MM^T - I| < 1e-10, n in 1..=64", check_dct_orthonormality),
    ("convdct-energy", "mean-square preserved, rtol 5e-3, 128x128x3", check_conv_dct_energy),
    ("convdct-roundtrip", "inverse(forward(x)) = x, atol/rtol 1e-2", check_conv_dct_roundtrip),
    ("blockdct-roundtrip", "exact round trip and energy, 1e-10", check_block_dct_roundtrip),
    ("wavelet-roundtrip", "haar 1e-10, legall53 1e-8", check_wavelet_roundtrip),
    ("schedule-vp-invariant", "alpha^2+sigma^2 = 1 within 1e-12, logsnr decreasing", check_schedule_invariants),
    ("noise-scale-factor", "l=0 equals 2^(-1/2); cap binds at l=-30", check_noise_scale_factor),
    ("tweedie-gaussian-covariance", "(sigma^2/alpha) J = Cov, 1e-8", check_tweedie_gaussian),
    ("expfamily-identities", "FD grad 1e-6, FD hessian 1e-4", check_exp_family_identities),
    ("hutchinson-scalar-exactness", "sqrt(c) eps exactly, 1e-10, all modes", check_hutchinson_scalar),
    ("hutchinson-convergence", "per-frequency rel err < 12% at 2000 probes", check_hutchinson_convergence),
    ("gmm-jvp-finite-difference", "rel err < 1e-5", check_gmm_jvp),
    ("mlp-jvp-finite-difference", "rel err < 1e-4", check_mlp_jvp),
    ("nfe-accounting", "per-step table + ledger reconciliation", check_nfe_accounting),
    ("ddim-degeneracy", "zeroed estimator equals DDIM bitwise", check_ddim_degeneracy),
    ("rerun-determinism", "byte-identical CSV", check_rerun_determinism),
];

/// Runs every check; failures never panic, they are reported.
pub fn run_verification(faults: &FaultInjection) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, tolerance, f)| match f(faults) {
            Ok((passed, detail)) => CheckOutcome {
                name,
                passed,
                tolerance: tolerance.to_string(),
                detail,
            },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                tolerance: tolerance.to_string(),
                detail: format!("error: {e}"),
            },
        })
        .collect()
}
