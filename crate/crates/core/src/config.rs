//! Run configuration: a versioned TOML file with sections for the model,
//! schedule, sampling, guidance, estimator, metrics and ablation grids.
//! Everything is validated up front, before any compute, including the
//! existence of referenced parameter files.

use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::denoiser::{GaussianMixtureModel, GaussianModel};
use crate::error::{Error, Result};
use crate::eval::runners::{
    AblationGrid, DenoiserSpec, Experiment, GuidanceSpec, ReferenceSpec, SamplerChoice,
    UncondSpec,
};
use crate::schedule::{GridSpacing, ScheduleKind};
use crate::transforms::TransformKind;
use crate::tweedie::{AveragingMode, CovEstimatorConfig};

const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    model: RawModel,
    #[serde(default)]
    reference_model: Option<RawModel>,
    #[serde(default)]
    schedule: RawSchedule,
    sampling: RawSampling,
    #[serde(default)]
    guidance: RawGuidance,
    #[serde(default)]
    estimator: RawEstimator,
    #[serde(default)]
    metrics: RawMetrics,
    #[serde(default)]
    ablation: Option<RawAblation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: String,
    #[serde(default)]
    shape: Vec<usize>,
    // gaussian
    #[serde(default)]
    covariance: Option<String>,
    #[serde(default)]
    mean: Option<f64>,
    #[serde(default)]
    variance: Option<f64>,
    #[serde(default)]
    block_size: Option<usize>,
    #[serde(default)]
    spectrum_power: Option<f64>,
    #[serde(default)]
    spectrum_scale: Option<f64>,
    // gmm
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    means: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    scales: Option<Vec<f64>>,
    // mlp
    #[serde(default)]
    params_file: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    shift: Option<f64>,
    #[serde(default)]
    l_min: Option<f64>,
    #[serde(default)]
    l_max: Option<f64>,
    #[serde(default)]
    grid: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampling {
    samplers: Vec<String>,
    budgets: Vec<u64>,
    num_samples: usize,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    addim_eta: Option<f64>,
    #[serde(default)]
    addim_calibration_batch: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    #[serde(default)]
    enabled: bool,
    #[serde(default)]
    scale: Option<f64>,
    #[serde(default)]
    interval: Option<[f64; 2]>,
    #[serde(default)]
    uncond: Option<String>,
    #[serde(default)]
    widen_factor: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    #[serde(default)]
    transform: Option<String>,
    #[serde(default)]
    block_size: Option<usize>,
    #[serde(default)]
    levels: Option<usize>,
    #[serde(default)]
    averaging: Option<String>,
    #[serde(default)]
    first_step_var: Option<f64>,
    #[serde(default)]
    var_cap: Option<f64>,
    #[serde(default)]
    first_step_special: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    #[serde(default)]
    transform: Option<String>,
    #[serde(default)]
    block_size: Option<usize>,
    #[serde(default)]
    levels: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAblation {
    transforms: Vec<String>,
    averagings: Vec<String>,
    budgets: Vec<u64>,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub samplers: Vec<SamplerChoice>,
    pub budgets: Vec<u64>,
    pub seeds: Vec<u64>,
    pub estimator: CovEstimatorConfig,
    pub ablation: Option<AblationGrid>,
}

fn parse_transform(
    name: &str,
    block_size: Option<usize>,
    levels: Option<usize>,
) -> Result<TransformKind> {
    let block_size = block_size.unwrap_or(8);
    let levels = levels.unwrap_or(3);
    match name {
        "identity" => Ok(TransformKind::Identity),
        "block_dct" => Ok(TransformKind::BlockDct { block_size }),
        "conv_dct" => Ok(TransformKind::ConvDct { block_size }),
        "haar" => Ok(TransformKind::Haar { levels }),
        "legall53" => Ok(TransformKind::LeGall53 { levels }),
        other => Err(Error::config(format!("unknown transform '{other}'"))),
    }
}

fn parse_averaging(name: &str) -> Result<AveragingMode> {
    match name {
        "channel" => Ok(AveragingMode::Channel),
        "spatial" => Ok(AveragingMode::Spatial),
        "global" => Ok(AveragingMode::Global),
        "isotropic" => Ok(AveragingMode::Isotropic),
        other => Err(Error::config(format!("unknown averaging mode '{other}'"))),
    }
}

fn parse_schedule(raw: &RawSchedule) -> Result<ScheduleKind> {
    match raw.kind.as_deref().unwrap_or("cosine") {
        "cosine" => Ok(ScheduleKind::Cosine),
        "shifted_cosine" => Ok(ScheduleKind::ShiftedCosine { shift: raw.shift.unwrap_or(0.0) }),
        "linear_logsnr" => {
            let l_min = raw.l_min.ok_or_else(|| Error::config("linear_logsnr needs l_min"))?;
            let l_max = raw.l_max.ok_or_else(|| Error::config("linear_logsnr needs l_max"))?;
            if l_min >= l_max {
                return Err(Error::config("linear_logsnr needs l_min < l_max"));
            }
            Ok(ScheduleKind::LinearLogsnr { l_min, l_max })
        }
        other => Err(Error::config(format!("unknown schedule '{other}'"))),
    }
}

fn parse_grid_spacing(raw: &RawSchedule) -> Result<GridSpacing> {
    match raw.grid.as_deref().unwrap_or("uniform_t") {
        "uniform_t" => Ok(GridSpacing::UniformT),
        "uniform_logsnr" => Ok(GridSpacing::UniformLogsnr),
        other => Err(Error::config(format!("unknown grid spacing '{other}'"))),
    }
}

fn build_gaussian(raw: &RawModel) -> Result<GaussianModel> {
    if raw.shape.len() != 3 {
        return Err(Error::config("model.shape must be [H, W, C]"));
    }
    match raw.covariance.as_deref().unwrap_or("isotropic") {
        "isotropic" => GaussianModel::isotropic(
            &raw.shape,
            raw.mean.unwrap_or(0.0),
            raw.variance.unwrap_or(1.0),
        ),
        "block_spectrum" => GaussianModel::block_spectrum(
            &raw.shape,
            raw.block_size.unwrap_or(8),
            raw.spectrum_power.unwrap_or(2.0),
            raw.spectrum_scale.unwrap_or(1.0),
        ),
        other => Err(Error::config(format!("unknown covariance '{other}'"))),
    }
}

fn build_gmm(raw: &RawModel) -> Result<GaussianMixtureModel> {
    if raw.shape.len() != 3 {
        return Err(Error::config("model.shape must be [H, W, C]"));
    }
    let weights = raw.weights.clone().ok_or_else(|| Error::config("gmm needs weights"))?;
    let means = raw.means.clone().ok_or_else(|| Error::config("gmm needs means"))?;
    let scales = raw.scales.clone().ok_or_else(|| Error::config("gmm needs scales"))?;
    GaussianMixtureModel::new(&raw.shape, weights, means, scales)
}

fn build_reference(raw: &RawModel) -> Result<ReferenceSpec> {
    match raw.kind.as_str() {
        "gaussian" => Ok(ReferenceSpec::Gaussian(build_gaussian(raw)?)),
        "gmm" => Ok(ReferenceSpec::Gmm(build_gmm(raw)?)),
        other => Err(Error::config(format!(
            "reference model must be gaussian or gmm, got '{other}'"
        ))),
    }
}

impl RunConfig {
    /// Parses and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    /// Parses config text; relative file references resolve against `dir`.
    pub fn from_toml(text: &str, dir: &Path) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("parse error: {e}")))?;
        if raw.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                raw.version
            )));
        }

        let schedule = parse_schedule(&raw.schedule)?;
        let grid_spacing = parse_grid_spacing(&raw.schedule)?;

        // Denoiser model.
        let denoiser = match raw.model.kind.as_str() {
            "gaussian" => DenoiserSpec::Gaussian(build_gaussian(&raw.model)?),
            "gmm" => DenoiserSpec::Gmm(build_gmm(&raw.model)?),
            "mlp" => {
                let rel = raw
                    .model
                    .params_file
                    .as_ref()
                    .ok_or_else(|| Error::config("mlp model needs params_file"))?;
                let path: PathBuf = dir.join(rel);
                if !path.exists() {
                    return Err(Error::config(format!(
                        "params_file {} does not exist",
                        path.display()
                    )));
                }
                DenoiserSpec::Mlp(crate::io::load_mlp(&path)?)
            }
            other => Err(Error::config(format!("unknown model kind '{other}'")))?,
        };

        // Reference model: defaults to the denoiser model when analytic.
        let reference = match (&raw.reference_model, &denoiser) {
            (Some(r), _) => build_reference(r)?,
            (None, DenoiserSpec::Gaussian(m)) => ReferenceSpec::Gaussian(m.clone()),
            (None, DenoiserSpec::Gmm(m)) => ReferenceSpec::Gmm(m.clone()),
            (None, DenoiserSpec::Mlp(_)) => {
                return Err(Error::config(
                    "mlp models need a [reference_model] section for metrics",
                ))
            }
        };

        let guidance = if raw.guidance.enabled {
            let interval = raw.guidance.interval.unwrap_or([-3.0, 5.0]);
            let uncond = match raw.guidance.uncond.as_deref().unwrap_or("widened") {
                "same" => UncondSpec::Same,
                "widened" => UncondSpec::Widened(raw.guidance.widen_factor.unwrap_or(1.5)),
                "mean_zero" => UncondSpec::MeanZero,
                other => return Err(Error::config(format!("unknown uncond mode '{other}'"))),
            };
            Some(GuidanceSpec {
                scale: raw.guidance.scale.unwrap_or(1.2),
                interval: (interval[0], interval[1]),
                uncond,
            })
        } else {
            None
        };

        let estimator = CovEstimatorConfig {
            first_step_var: raw.estimator.first_step_var.unwrap_or(0.1),
            averaging_mode: parse_averaging(
                raw.estimator.averaging.as_deref().unwrap_or("channel"),
            )?,
            var_cap: raw.estimator.var_cap.unwrap_or(1e4),
            transform: parse_transform(
                raw.estimator.transform.as_deref().unwrap_or("conv_dct"),
                raw.estimator.block_size,
                raw.estimator.levels,
            )?,
            first_step_special: raw.estimator.first_step_special.unwrap_or(true),
        };
        estimator.validate()?;

        // Explicit metrics transforms validate strictly; the default
        // falls back to identity when the 8x8 block DCT does not fit the
        // data shape.
        let data_probe = crate::tensor::SpatialTensor::zeros(denoiser.shape())
            .map_err(|e| Error::config(e.to_string()))?;
        let metrics_transform = match raw.metrics.transform.as_deref() {
            Some(name) => parse_transform(name, raw.metrics.block_size, raw.metrics.levels)?,
            None => {
                let preferred = TransformKind::BlockDct {
                    block_size: raw.metrics.block_size.unwrap_or(8),
                };
                if preferred.forward(&data_probe).is_ok() {
                    preferred
                } else {
                    TransformKind::Identity
                }
            }
        };

        let mut samplers = Vec::new();
        for name in &raw.sampling.samplers {
            samplers.push(match name.as_str() {
                "cov_aware" => SamplerChoice::CovAware(estimator.clone()),
                "ddim" => SamplerChoice::Ddim,
                "ddpm" => SamplerChoice::Ddpm,
                "addim" => SamplerChoice::Addim { eta: raw.sampling.addim_eta.unwrap_or(1.0) },
                "heun" => SamplerChoice::Heun,
                "dpm_solverpp" => SamplerChoice::DpmSolverPp,
                other => return Err(Error::config(format!("unknown sampler '{other}'"))),
            });
        }
        if samplers.is_empty() {
            return Err(Error::config("sampling.samplers must be non-empty"));
        }
        if raw.sampling.budgets.is_empty() {
            return Err(Error::config("sampling.budgets must be non-empty"));
        }
        if raw.sampling.num_samples < 2 {
            return Err(Error::config("sampling.num_samples must be >= 2"));
        }

        let experiment = Experiment {
            denoiser,
            reference,
            schedule,
            grid_spacing,
            guidance,
            metrics_transform,
            num_samples: raw.sampling.num_samples,
            addim_calibration_batch: raw.sampling.addim_calibration_batch.unwrap_or(256),
        };
        experiment.validate()?;

        // Probe every transform against the data shape now, so malformed
        // configs fail before any compute.
        let check_transform = |t: &TransformKind| -> Result<()> {
            t.forward(&data_probe).map_err(|e| {
                Error::config(format!(
                    "transform {} does not apply to shape {:?}: {e}",
                    t.name(),
                    experiment.shape()
                ))
            })?;
            Ok(())
        };
        check_transform(&experiment.metrics_transform)?;
        if samplers.iter().any(|s| matches!(s, SamplerChoice::CovAware(_))) {
            check_transform(&estimator.effective_transform())?;
        }

        let ablation = match &raw.ablation {
            None => None,
            Some(a) => {
                let transforms = a
                    .transforms
                    .iter()
                    .map(|t| {
                        parse_transform(t, raw.estimator.block_size, raw.estimator.levels)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for t in &transforms {
                    check_transform(t)?;
                }
                let averagings = a
                    .averagings
                    .iter()
                    .map(|m| parse_averaging(m))
                    .collect::<Result<Vec<_>>>()?;
                let grid = AblationGrid { transforms, averagings, budgets: a.budgets.clone() };
                grid.validate()?;
                Some(grid)
            }
        };

        Ok(RunConfig {
            experiment,
            samplers,
            budgets: raw.sampling.budgets.clone(),
            seeds: raw.sampling.seeds.clone().unwrap_or_else(|| vec![0]),
            estimator,
            ablation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[model]
kind = "gaussian"
shape = [8, 1, 1]
covariance = "isotropic"
variance = 1.0

[sampling]
samplers = ["ddim"]
budgets = [8]
num_samples = 16
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(cfg.samplers.len(), 1);
        assert_eq!(cfg.budgets, vec![8]);
        assert_eq!(cfg.seeds, vec![0]);
        assert!(cfg.ablation.is_none());
    }

    #[test]
    fn rejects_unknown_version() {
        let text = MINIMAL.replace("version = 1", "version = 9");
        let err = RunConfig::from_toml(&text, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn rejects_unknown_sampler_and_missing_file() {
        let text = MINIMAL.replace("\"ddim\"", "\"warp\"");
        assert!(RunConfig::from_toml(&text, Path::new(".")).is_err());

        let text = r#"
version = 1

[model]
kind = "mlp"
shape = [4, 1, 1]
params_file = "missing.json"

[sampling]
samplers = ["ddim"]
budgets = [4]
num_samples = 8
"#;
        let err = RunConfig::from_toml(text, Path::new("/nonexistent"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn full_config_with_guidance_and_ablation() {
        let text = r#"
version = 1

[model]
kind = "gaussian"
shape = [16, 16, 3]
covariance = "block_spectrum"
block_size = 8
spectrum_power = 2.0
spectrum_scale = 1.0

[schedule]
kind = "shifted_cosine"
shift = 0.5
grid = "uniform_t"

[sampling]
samplers = ["cov_aware", "ddim", "addim", "heun", "dpm_solverpp", "ddpm"]
budgets = [24, 36]
num_samples = 32
seeds = [0, 1]
addim_eta = 0.9

[guidance]
enabled = true
scale = 1.2
interval = [-3.0, 5.0]
uncond = "widened"
widen_factor = 1.5

[estimator]
transform = "conv_dct"
block_size = 8
averaging = "channel"
first_step_var = 0.1
var_cap = 1e4

[metrics]
transform = "block_dct"
block_size = 8

[ablation]
transforms = ["conv_dct", "block_dct", "identity", "haar", "legall53"]
averagings = ["channel", "global"]
budgets = [24]
"#;
        let cfg = RunConfig::from_toml(text, Path::new(".")).unwrap();
        assert_eq!(cfg.samplers.len(), 6);
        assert!(cfg.experiment.guidance.is_some());
        assert_eq!(cfg.ablation.as_ref().unwrap().transforms.len(), 5);
        assert_eq!(cfg.seeds, vec![0, 1]);
    }

    #[test]
    fn incompatible_transform_fails_at_load_time() {
        // Explicit 8x8 block DCT cannot apply to a [6, 1, 1] model.
        let text = r#"
version = 1

[model]
kind = "gaussian"
shape = [6, 1, 1]
covariance = "isotropic"
variance = 1.0

[sampling]
samplers = ["ddim"]
budgets = [8]
num_samples = 8

[metrics]
transform = "block_dct"
block_size = 8
"#;
        let err = RunConfig::from_toml(text, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("does not apply"), "{err}");

        // The default metrics transform falls back to identity instead.
        let text = text.replace("[metrics]\ntransform = \"block_dct\"\nblock_size = 8\n", "");
        let cfg = RunConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.experiment.metrics_transform, TransformKind::Identity);
    }

    #[test]
    fn gmm_model_config() {
        let text = r#"
version = 1

[model]
kind = "gmm"
shape = [2, 1, 1]
weights = [0.5, 0.5]
means = [[1.0, 0.0], [-1.0, 0.0]]
scales = [0.5, 0.5]

[sampling]
samplers = ["ddpm"]
budgets = [8]
num_samples = 8
"#;
        let cfg = RunConfig::from_toml(text, Path::new(".")).unwrap();
        assert!(matches!(cfg.experiment.denoiser, DenoiserSpec::Gmm(_)));
    }
}
