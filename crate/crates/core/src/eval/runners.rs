//! Experiment and ablation runners: matched-seed sampler comparisons over
//! NFE budgets, emitting one CSV row of metrics per cell.

use ndarray::ArrayD;

use crate::denoiser::{
    Denoiser, GaussianMixtureModel, GaussianModel, GuidedDenoiser, MlpDenoiser,
};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, exact_gaussian_sampler, CsvRow, Reference};
use crate::rng::{sample_stream, setup_stream};
use crate::samplers::{
    estimate_addim_data_var, run_sampler, steps_for_budget, AddimConfig, SampleRun, SamplerKind,
    StepPlan,
};
use crate::schedule::{make_time_grid, GridSpacing, ScheduleKind};
use crate::transforms::TransformKind;
use crate::tweedie::{AveragingMode, CovEstimatorConfig};

/// The network stand-in driving the reverse process.
#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    Gaussian(GaussianModel),
    Gmm(GaussianMixtureModel),
    Mlp(MlpDenoiser),
}

impl DenoiserSpec {
    pub fn shape(&self) -> &[usize] {
        match self {
            DenoiserSpec::Gaussian(m) => m.shape(),
            DenoiserSpec::Gmm(m) => m.shape(),
            DenoiserSpec::Mlp(m) => m.shape(),
        }
    }

    fn boxed(&self) -> Box<dyn Denoiser> {
        match self {
            DenoiserSpec::Gaussian(m) => Box::new(m.clone()),
            DenoiserSpec::Gmm(m) => Box::new(m.clone()),
            DenoiserSpec::Mlp(m) => Box::new(m.clone()),
        }
    }

    /// Unconditional counterpart for a guided pair.
    fn uncond(&self, spec: UncondSpec) -> Result<Box<dyn Denoiser>> {
        match (self, spec) {
            (_, UncondSpec::Same) => Ok(self.boxed()),
            (DenoiserSpec::Gaussian(m), UncondSpec::Widened(f)) => {
                Ok(Box::new(m.with_covariance_scaled(f * f)?))
            }
            (DenoiserSpec::Gaussian(m), UncondSpec::MeanZero) => {
                Ok(Box::new(m.with_mean_value(0.0)))
            }
            (DenoiserSpec::Gmm(m), UncondSpec::Widened(f)) => {
                Ok(Box::new(m.with_scales_scaled(f)?))
            }
            (DenoiserSpec::Gmm(m), UncondSpec::MeanZero) => Ok(Box::new(m.with_zero_means())),
            (DenoiserSpec::Mlp(_), _) => Err(Error::invalid_argument(
                "mlp denoisers support only uncond = \"same\" guidance",
            )),
        }
    }
}

/// The data distribution used for metric references and calibration.
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    Gaussian(GaussianModel),
    Gmm(GaussianMixtureModel),
}

impl ReferenceSpec {
    pub fn shape(&self) -> &[usize] {
        match self {
            ReferenceSpec::Gaussian(m) => m.shape(),
            ReferenceSpec::Gmm(m) => m.shape(),
        }
    }

    pub fn draw(&self, rng: &mut crate::rng::Stream) -> ArrayD<f64> {
        match self {
            ReferenceSpec::Gaussian(m) => m.sample(rng),
            ReferenceSpec::Gmm(m) => m.sample(rng),
        }
    }

    /// Exact reference sample set with per-index derived streams.
    pub fn exact_samples(&self, count: usize, seed: u64) -> Vec<ArrayD<f64>> {
        match self {
            ReferenceSpec::Gaussian(m) => exact_gaussian_sampler(m, count, seed),
            ReferenceSpec::Gmm(m) => (0..count)
                .map(|i| {
                    let mut rng = sample_stream(seed, i as u64);
                    m.sample(&mut rng)
                })
                .collect(),
        }
    }
}

/// How the unconditional branch of a guided pair is derived from the
/// denoiser model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UncondSpec {
    /// Same model (guidance becomes a no-op direction).
    Same,
    /// Covariance or component scales widened by the factor.
    Widened(f64),
    /// Means replaced by zero.
    MeanZero,
}

/// Guidance settings for an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceSpec {
    pub scale: f64,
    pub interval: (f64, f64),
    pub uncond: UncondSpec,
}

/// A denoiser, a reference distribution, and everything needed to sample
/// and score.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub denoiser: DenoiserSpec,
    pub reference: ReferenceSpec,
    pub schedule: ScheduleKind,
    pub grid_spacing: GridSpacing,
    pub guidance: Option<GuidanceSpec>,
    pub metrics_transform: TransformKind,
    pub num_samples: usize,
    /// Batch size for aDDIM variance calibration.
    pub addim_calibration_batch: usize,
}

impl Experiment {
    /// Exact-denoiser experiment: the Gaussian model is both the network
    /// stand-in and the reference.
    pub fn gaussian(model: GaussianModel, schedule: ScheduleKind) -> Self {
        Experiment {
            denoiser: DenoiserSpec::Gaussian(model.clone()),
            reference: ReferenceSpec::Gaussian(model),
            schedule,
            grid_spacing: GridSpacing::UniformT,
            guidance: None,
            metrics_transform: TransformKind::BlockDct { block_size: 8 },
            num_samples: 256,
            addim_calibration_batch: 256,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.denoiser.shape()
    }

    pub fn validate(&self) -> Result<()> {
        if self.denoiser.shape() != self.reference.shape() {
            return Err(Error::invalid_argument(
                "denoiser and reference shapes must match",
            ));
        }
        if self.num_samples < 2 {
            return Err(Error::invalid_argument("num_samples must be >= 2"));
        }
        Ok(())
    }

    /// The denoiser handle, optionally wrapped with classifier-free
    /// guidance.
    pub fn handle(&self) -> Result<Box<dyn Denoiser>> {
        match self.guidance {
            None => Ok(self.denoiser.boxed()),
            Some(g) => {
                let uncond = self.denoiser.uncond(g.uncond)?;
                Ok(Box::new(GuidedDenoiser::new(
                    self.denoiser.boxed(),
                    uncond,
                    g.scale,
                    g.interval,
                )?))
            }
        }
    }

    pub fn guided_interval(&self) -> Option<(f64, f64)> {
        self.guidance.map(|g| g.interval)
    }

    fn metrics_for(&self, samples: &[ArrayD<f64>], seed: u64) -> Result<crate::eval::MetricReport> {
        match &self.reference {
            ReferenceSpec::Gaussian(m) => {
                compute_metrics(samples, &Reference::Model(m), &self.metrics_transform, seed)
            }
            ReferenceSpec::Gmm(m) => {
                let refs = (0..samples.len())
                    .map(|i| {
                        let mut rng = sample_stream(seed ^ 0x9e3779b97f4a7c15, i as u64);
                        m.sample(&mut rng)
                    })
                    .collect::<Vec<_>>();
                compute_metrics(
                    samples,
                    &Reference::Samples(&refs),
                    &self.metrics_transform,
                    seed,
                )
            }
        }
    }
}

/// Sampler selection for a comparison run. aDDIM carries its inflation
/// factor; the variance table is calibrated per grid inside the runner.
#[derive(Debug, Clone)]
pub enum SamplerChoice {
    CovAware(CovEstimatorConfig),
    Ddim,
    Ddpm,
    Addim { eta: f64 },
    Heun,
    DpmSolverPp,
}

impl SamplerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerChoice::CovAware(_) => "cov_aware",
            SamplerChoice::Ddim => "ddim",
            SamplerChoice::Ddpm => "ddpm",
            SamplerChoice::Addim { .. } => "addim",
            SamplerChoice::Heun => "heun",
            SamplerChoice::DpmSolverPp => "dpm_solverpp",
        }
    }

    /// Transform/averaging labels for the CSV row.
    fn labels(&self) -> (String, String) {
        match self {
            SamplerChoice::CovAware(cfg) => (
                cfg.effective_transform().name(),
                cfg.averaging_mode.name().to_string(),
            ),
            _ => ("none".to_string(), "none".to_string()),
        }
    }

    /// Budget-accounting stand-in (the aDDIM table is filled later).
    fn budget_kind(&self) -> SamplerKind {
        match self {
            SamplerChoice::CovAware(cfg) => SamplerKind::CovAware(cfg.clone()),
            SamplerChoice::Ddim => SamplerKind::Ddim,
            SamplerChoice::Ddpm => SamplerKind::Ddpm,
            SamplerChoice::Addim { eta } => SamplerKind::Addim(AddimConfig {
                data_var: Vec::new(),
                eta: *eta,
                setup_evals: 0,
            }),
            SamplerChoice::Heun => SamplerKind::Heun,
            SamplerChoice::DpmSolverPp => SamplerKind::DpmSolverPp,
        }
    }
}

/// Runs one (sampler, budget, seed) cell and returns its row and run.
pub fn run_cell(
    exp: &Experiment,
    choice: &SamplerChoice,
    budget: u64,
    seed: u64,
) -> Result<(CsvRow, SampleRun)> {
    exp.validate()?;
    let guided = exp.guided_interval();
    let budget_kind = choice.budget_kind();
    let steps = steps_for_budget(&budget_kind, guided.is_some(), budget)?;
    let grid = make_time_grid(steps, exp.grid_spacing, exp.schedule)?;
    let handle = exp.handle()?;

    let kind = match choice {
        SamplerChoice::Addim { eta } => {
            let reference = exp.reference.clone();
            let mut rng = setup_stream(seed, 0xadd1);
            let (table, setup_evals) = estimate_addim_data_var(
                handle.as_ref(),
                move |r| reference.draw(r),
                exp.addim_calibration_batch,
                &grid,
                exp.schedule,
                &mut rng,
            )?;
            SamplerKind::Addim(AddimConfig { data_var: table, eta: *eta, setup_evals })
        }
        other => other.budget_kind(),
    };

    let plan = StepPlan { grid, guided };
    let run = run_sampler(
        &kind,
        handle.as_ref(),
        &plan,
        exp.schedule,
        exp.shape(),
        exp.num_samples,
        seed,
    )?;
    let metrics = exp.metrics_for(&run.samples, seed)?;
    let (transform, averaging) = choice.labels();
    let row = CsvRow {
        sampler: choice.name().to_string(),
        transform,
        averaging,
        steps,
        nfe: budget,
        mean_err: metrics.mean_err,
        cov_err: metrics.cov_err,
        spectrum_err: metrics.spectrum_err,
        sw_dist: metrics.sw_dist,
        energy_dist: metrics.energy_dist,
        seed,
    };
    Ok((row, run))
}

/// Matched-seed comparison over samplers and NFE budgets: one CSV row per
/// (seed, sampler, budget) cell.
pub fn run_comparison(
    exp: &Experiment,
    samplers: &[SamplerChoice],
    budgets: &[u64],
    seeds: &[u64],
) -> Result<(Vec<CsvRow>, Vec<SampleRun>)> {
    if samplers.is_empty() || budgets.is_empty() || seeds.is_empty() {
        return Err(Error::invalid_argument(
            "samplers, budgets and seeds must be non-empty",
        ));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &seed in seeds {
        for choice in samplers {
            for &budget in budgets {
                let (row, run) = run_cell(exp, choice, budget, seed)?;
                rows.push(row);
                runs.push(run);
            }
        }
    }
    Ok((rows, runs))
}

/// Sweep specification for the transform/averaging ablation.
#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub transforms: Vec<TransformKind>,
    pub averagings: Vec<AveragingMode>,
    pub budgets: Vec<u64>,
}

impl AblationGrid {
    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() || self.averagings.is_empty() || self.budgets.is_empty() {
            return Err(Error::invalid_argument("ablation grid lists must be non-empty"));
        }
        Ok(())
    }
}

/// Covariance-aware sampler swept over transforms x averaging modes x
/// budgets; `base` supplies the remaining estimator settings.
pub fn run_ablation(
    grid: &AblationGrid,
    exp: &Experiment,
    base: &CovEstimatorConfig,
    seeds: &[u64],
) -> Result<(Vec<CsvRow>, Vec<SampleRun>)> {
    grid.validate()?;
    if seeds.is_empty() {
        return Err(Error::invalid_argument("seeds must be non-empty"));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &seed in seeds {
        for &transform in &grid.transforms {
            for &averaging in &grid.averagings {
                for &budget in &grid.budgets {
                    let cfg = CovEstimatorConfig {
                        transform,
                        averaging_mode: averaging,
                        ..base.clone()
                    };
                    let (row, run) =
                        run_cell(exp, &SamplerChoice::CovAware(cfg), budget, seed)?;
                    rows.push(row);
                    runs.push(run);
                }
            }
        }
    }
    Ok((rows, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::rows_to_csv;

    fn small_experiment() -> Experiment {
        let model = GaussianModel::isotropic(&[4, 1, 1], 0.0, 1.0).unwrap();
        let mut exp = Experiment::gaussian(model, ScheduleKind::Cosine);
        exp.num_samples = 16;
        exp.addim_calibration_batch = 16;
        exp.metrics_transform = TransformKind::Identity;
        exp
    }

    fn iso_cfg() -> CovEstimatorConfig {
        CovEstimatorConfig {
            averaging_mode: AveragingMode::Isotropic,
            transform: TransformKind::Identity,
            ..CovEstimatorConfig::default()
        }
    }

    #[test]
    fn comparison_row_count_and_determinism() {
        let exp = small_experiment();
        let samplers = vec![
            SamplerChoice::Ddim,
            SamplerChoice::CovAware(iso_cfg()),
            SamplerChoice::Addim { eta: 1.0 },
        ];
        let budgets = [4u64, 8];
        let (rows, runs) = run_comparison(&exp, &samplers, &budgets, &[0]).unwrap();
        assert_eq!(rows.len(), samplers.len() * budgets.len());
        assert_eq!(runs.len(), rows.len());
        let (rows2, _) = run_comparison(&exp, &samplers, &budgets, &[0]).unwrap();
        assert_eq!(rows_to_csv(&rows), rows_to_csv(&rows2), "rerun must be identical");
    }

    #[test]
    fn nfe_column_is_flat_budget() {
        let exp = small_experiment();
        let (rows, runs) =
            run_comparison(&exp, &[SamplerChoice::CovAware(iso_cfg())], &[12], &[1]).unwrap();
        assert_eq!(rows[0].nfe, 12);
        assert_eq!(rows[0].steps, 6, "unguided covariance-aware costs 2 per step");
        assert_eq!(runs[0].ledger.planned_per_sample, 12);
    }

    #[test]
    fn trivial_ablation_grid_reduces_to_comparison_cell() {
        let exp = small_experiment();
        let grid = AblationGrid {
            transforms: vec![TransformKind::Identity],
            averagings: vec![AveragingMode::Isotropic],
            budgets: vec![8],
        };
        let (ab_rows, _) = run_ablation(&grid, &exp, &iso_cfg(), &[3]).unwrap();
        assert_eq!(ab_rows.len(), 1);
        let (cmp_rows, _) =
            run_comparison(&exp, &[SamplerChoice::CovAware(iso_cfg())], &[8], &[3]).unwrap();
        assert_eq!(ab_rows, cmp_rows);
    }

    #[test]
    fn guided_experiment_counts_flat_budget() {
        let mut exp = small_experiment();
        exp.guidance = Some(GuidanceSpec {
            scale: 1.2,
            interval: (-3.0, 5.0),
            uncond: UncondSpec::Widened(1.5),
        });
        let (rows, runs) =
            run_comparison(&exp, &[SamplerChoice::CovAware(iso_cfg())], &[36], &[5]).unwrap();
        assert_eq!(rows[0].steps, 12);
        assert_eq!(runs[0].ledger.planned_per_sample, 36);
        assert!(runs[0].ledger.reconciles());
    }

    #[test]
    fn gmm_experiment_runs_with_sample_reference() {
        let gmm = GaussianMixtureModel::new(
            &[2, 1, 1],
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![0.4, 0.4],
        )
        .unwrap();
        let mut exp = Experiment {
            denoiser: DenoiserSpec::Gmm(gmm.clone()),
            reference: ReferenceSpec::Gmm(gmm),
            schedule: ScheduleKind::Cosine,
            grid_spacing: GridSpacing::UniformT,
            guidance: None,
            metrics_transform: TransformKind::Identity,
            num_samples: 16,
            addim_calibration_batch: 8,
        };
        exp.num_samples = 16;
        let (rows, _) = run_comparison(&exp, &[SamplerChoice::Ddpm], &[8], &[2]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].cov_err.is_finite());
    }

    #[test]
    fn alternative_schedules_and_grid_spacings_run() {
        let model = GaussianModel::isotropic(&[4, 1, 1], 0.2, 1.0).unwrap();
        for schedule in [
            ScheduleKind::ShiftedCosine { shift: 1.0 },
            ScheduleKind::LinearLogsnr { l_min: -10.0, l_max: 10.0 },
        ] {
            for spacing in [GridSpacing::UniformT, GridSpacing::UniformLogsnr] {
                let mut exp = Experiment::gaussian(model.clone(), schedule);
                exp.grid_spacing = spacing;
                exp.num_samples = 8;
                exp.metrics_transform = TransformKind::Identity;
                let (rows, runs) = run_comparison(
                    &exp,
                    &[SamplerChoice::CovAware(iso_cfg()), SamplerChoice::Heun],
                    &[8],
                    &[1],
                )
                .unwrap();
                for (row, run) in rows.iter().zip(&runs) {
                    assert!(
                        run.samples.iter().all(|s| s.iter().all(|v| v.is_finite())),
                        "{schedule:?} {spacing:?} {}",
                        row.sampler
                    );
                    assert!(run.ledger.reconciles());
                }
            }
        }
    }

    #[test]
    fn empty_specs_rejected() {
        let exp = small_experiment();
        assert!(run_comparison(&exp, &[], &[4], &[0]).is_err());
        let grid = AblationGrid { transforms: vec![], averagings: vec![], budgets: vec![] };
        assert!(run_ablation(&grid, &exp, &iso_cfg(), &[0]).is_err());
    }
}
