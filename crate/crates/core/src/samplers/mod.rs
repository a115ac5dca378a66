//! Sampler kinds under a uniform stepping interface with exact
//! function-evaluation accounting.
//!
//! NFE budgets use flat per-step counts (guided: covariance-aware 3,
//! first-order baselines 2, second-order 4; unguided: 2 / 1 / 2), matching
//! how budgets are compared. The ledger additionally records the
//! evaluations actually spent and documents every deviation (first-step
//! shortcut, inactive guidance interval, terminal Euler fallback,
//! multistep reuse); runs assert that the documented notes reconcile the
//! two numbers exactly.

pub mod steps;

pub use steps::{
    addim_step, cov_aware_step, ddim_step, ddpm_step, dpm_solverpp_step,
    estimate_addim_data_var, frequency_hutchinson_detailed, heun_step, DpmState,
};

use ndarray::ArrayD;

use crate::denoiser::{Denoiser, NfeLedger};
use crate::error::{Error, Result};
use crate::rng::{normal_array, sample_stream, stream_fingerprint};
use crate::schedule::{make_noise_info, ScheduleKind, TimeGrid};
use crate::tweedie::CovEstimatorConfig;

/// aDDIM settings: the precomputed per-step scalar variance table plus the
/// inflation factor applied to it.
#[derive(Debug, Clone)]
pub struct AddimConfig {
    pub data_var: Vec<f64>,
    pub eta: f64,
    /// Evaluations spent calibrating `data_var`, kept outside the
    /// sampling budget.
    pub setup_evals: u64,
}

/// Sampler selector.
#[derive(Debug, Clone)]
pub enum SamplerKind {
    CovAware(CovEstimatorConfig),
    Ddim,
    Ddpm,
    Addim(AddimConfig),
    Heun,
    DpmSolverPp,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::CovAware(_) => "cov_aware",
            SamplerKind::Ddim => "ddim",
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Addim(_) => "addim",
            SamplerKind::Heun => "heun",
            SamplerKind::DpmSolverPp => "dpm_solverpp",
        }
    }
}

/// Flat per-step function-evaluation count used for budget accounting.
pub fn per_step_nfe(kind: &SamplerKind, guided: bool) -> u64 {
    match kind {
        SamplerKind::CovAware(_) => {
            if guided {
                3
            } else {
                2
            }
        }
        SamplerKind::Ddim | SamplerKind::Ddpm | SamplerKind::Addim(_) => {
            if guided {
                2
            } else {
                1
            }
        }
        SamplerKind::Heun | SamplerKind::DpmSolverPp => {
            if guided {
                4
            } else {
                2
            }
        }
    }
}

/// Steps that exactly consume an NFE budget; errors when the budget does
/// not divide evenly.
pub fn steps_for_budget(kind: &SamplerKind, guided: bool, budget: u64) -> Result<usize> {
    let per = per_step_nfe(kind, guided);
    if budget == 0 || !budget.is_multiple_of(per) {
        return Err(Error::invalid_argument(format!(
            "budget {budget} is not a multiple of the per-step cost {per} of {}",
            kind.name()
        )));
    }
    Ok((budget / per) as usize)
}

/// Grid plus guidance flag; guidance carries its log-SNR interval so
/// accounting can attribute inactive-interval savings.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub grid: TimeGrid,
    /// `Some((lo, hi))` when the handle is guided with that interval.
    pub guided: Option<(f64, f64)>,
}

impl StepPlan {
    pub fn is_guided(&self) -> bool {
        self.guided.is_some()
    }

    /// Planned evaluations per sample: steps times the flat per-step cost.
    pub fn planned_nfe(&self, kind: &SamplerKind) -> u64 {
        self.grid.num_steps() as u64 * per_step_nfe(kind, self.is_guided())
    }
}

/// A documented deviation of actual evaluations from the flat budget,
/// per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerNote {
    pub label: String,
    pub delta: i64,
}

/// Per-run evaluation bookkeeping (per-sample counts; every sample of a
/// run spends identically).
#[derive(Debug, Clone)]
pub struct RunLedger {
    pub steps: usize,
    pub guided: bool,
    pub per_step_nfe: u64,
    pub planned_per_sample: u64,
    pub actual_per_sample: u64,
    pub setup_evals: u64,
    pub notes: Vec<LedgerNote>,
}

impl RunLedger {
    /// The reconciliation every run asserts:
    /// `actual = planned + sum(note deltas)`.
    pub fn reconciles(&self) -> bool {
        let delta: i64 = self.notes.iter().map(|n| n.delta).sum();
        self.planned_per_sample as i64 + delta == self.actual_per_sample as i64
    }
}

/// Per-step estimator diagnostics aggregated over samples.
#[derive(Debug, Clone)]
pub struct StepDiag {
    pub t: f64,
    pub var_min: f64,
    pub var_max: f64,
    pub var_mean: f64,
    pub num_groups: usize,
}

/// Output of [`run_sampler`].
#[derive(Debug, Clone)]
pub struct SampleRun {
    pub kind_name: String,
    pub seed: u64,
    pub samples: Vec<ArrayD<f64>>,
    pub ledger: RunLedger,
    /// Estimator diagnostics for steps that ran the estimator (empty for
    /// baselines).
    pub diagnostics: Vec<StepDiag>,
    /// Fingerprint of each sample's rng stream before any draws; equal
    /// across sampler kinds by the matched-seed policy.
    pub probe_fingerprints: Vec<u64>,
}

/// Cost of one guided/unguided prediction at log-SNR `l`.
fn predict_cost(guided: Option<(f64, f64)>, l: f64) -> u64 {
    match guided {
        None => 1,
        Some((lo, hi)) if lo < l && l < hi => 2,
        Some(_) => 1,
    }
}

/// Cost of one guided/unguided JVP at log-SNR `l` (stop-gradient trick:
/// 3 inside the interval, 2 outside or unguided).
fn jvp_cost(guided: Option<(f64, f64)>, l: f64) -> u64 {
    match guided {
        None => 2,
        Some((lo, hi)) if lo < l && l < hi => 3,
        Some(_) => 2,
    }
}

/// Walks the plan and derives the expected actual evaluation count per
/// sample together with the notes documenting each deviation from the
/// flat budget.
fn accounting_walk(
    kind: &SamplerKind,
    plan: &StepPlan,
    schedule: ScheduleKind,
) -> Result<(u64, Vec<LedgerNote>)> {
    let guided = plan.guided;
    let active_predict = if guided.is_some() { 2 } else { 1 };
    let active_jvp = if guided.is_some() { 3 } else { 2 };
    let mut actual: u64 = 0;
    let mut inactive: i64 = 0;
    let mut first_step: i64 = 0;
    let mut terminal_euler: i64 = 0;
    let mut multistep: i64 = 0;
    for (t, s) in plan.grid.transitions() {
        let l_t = make_noise_info(t, schedule)?.logsnr;
        let sigma_s = make_noise_info(s, schedule)?.sigma;
        match kind {
            SamplerKind::Ddim | SamplerKind::Ddpm | SamplerKind::Addim(_) => {
                let c = predict_cost(guided, l_t);
                actual += c;
                inactive += c as i64 - active_predict as i64;
            }
            SamplerKind::CovAware(cfg) => {
                if t == 1.0 && cfg.first_step_special {
                    let c = predict_cost(guided, l_t);
                    actual += c;
                    first_step += active_predict as i64 - active_jvp as i64;
                    inactive += c as i64 - active_predict as i64;
                } else {
                    let c = jvp_cost(guided, l_t);
                    actual += c;
                    inactive += c as i64 - active_jvp as i64;
                }
            }
            SamplerKind::Heun => {
                let c1 = predict_cost(guided, l_t);
                actual += c1;
                inactive += c1 as i64 - active_predict as i64;
                if sigma_s == 0.0 {
                    terminal_euler -= active_predict as i64;
                } else {
                    let l_s = make_noise_info(s, schedule)?.logsnr;
                    let c2 = predict_cost(guided, l_s);
                    actual += c2;
                    inactive += c2 as i64 - active_predict as i64;
                }
            }
            SamplerKind::DpmSolverPp => {
                let c = predict_cost(guided, l_t);
                actual += c;
                inactive += c as i64 - active_predict as i64;
                // The flat budget counts both endpoint evaluations; the
                // multistep scheme reuses the previous one.
                multistep -= active_predict as i64;
            }
        }
    }
    let mut notes = Vec::new();
    if first_step != 0 {
        notes.push(LedgerNote {
            label: "first-step fixed variance skips the tangent pass".into(),
            delta: first_step,
        });
    }
    if terminal_euler != 0 {
        notes.push(LedgerNote {
            label: "terminal step falls back to Euler (no corrector evaluation)".into(),
            delta: terminal_euler,
        });
    }
    if multistep != 0 {
        notes.push(LedgerNote {
            label: "multistep history reuse (one fresh evaluation per step)".into(),
            delta: multistep,
        });
    }
    if inactive != 0 {
        notes.push(LedgerNote {
            label: "guidance interval inactive (unconditional pass skipped)".into(),
            delta: inactive,
        });
    }
    Ok((actual, notes))
}

/// Runs `num_samples` reverse processes of `kind` over the plan's grid.
///
/// The i-th sample uses the rng stream derived from `(seed, i)`, identical
/// across sampler kinds.
pub fn run_sampler<D: Denoiser + ?Sized>(
    kind: &SamplerKind,
    handle: &D,
    plan: &StepPlan,
    schedule: ScheduleKind,
    shape: &[usize],
    num_samples: usize,
    seed: u64,
) -> Result<SampleRun> {
    if num_samples == 0 {
        return Err(Error::invalid_argument("num_samples must be >= 1"));
    }
    if let SamplerKind::Addim(cfg) = kind {
        if cfg.data_var.len() != plan.grid.num_steps() {
            return Err(Error::invalid_state(format!(
                "aDDIM variance table has {} entries for {} steps; calibrate it first",
                cfg.data_var.len(),
                plan.grid.num_steps()
            )));
        }
    }
    if let SamplerKind::CovAware(cfg) = kind {
        cfg.validate()?;
    }

    let steps = plan.grid.num_steps();
    let times: Vec<f64> = plan.grid.times().to_vec();
    let noise_infos: Vec<_> = times
        .iter()
        .map(|&t| make_noise_info(t, schedule))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::with_capacity(num_samples);
    let mut fingerprints = Vec::with_capacity(num_samples);
    let mut actual_per_sample: Option<u64> = None;
    // Aggregated estimator diagnostics: (sum, min, max, count, groups).
    let mut diag_acc: Vec<(f64, f64, f64, u64, usize)> = Vec::new();

    for i in 0..num_samples {
        let mut rng = sample_stream(seed, i as u64);
        fingerprints.push(stream_fingerprint(&rng));
        let mut z = normal_array(&mut rng, shape);
        let mut nfe = NfeLedger::new();
        let mut dpm_state = DpmState::default();
        for step in 0..steps {
            let (noise_t, noise_s) = (&noise_infos[step], &noise_infos[step + 1]);
            z = match kind {
                SamplerKind::Ddim => {
                    let x = handle.predict(&z, noise_t, &mut nfe)?;
                    ddim_step(&x, &z, noise_t, noise_s)
                }
                SamplerKind::Ddpm => ddpm_step(handle, &z, noise_t, noise_s, &mut rng, &mut nfe)?,
                SamplerKind::Addim(cfg) => addim_step(
                    handle,
                    &z,
                    noise_t,
                    noise_s,
                    cfg.data_var[step],
                    cfg.eta,
                    &mut rng,
                    &mut nfe,
                )?,
                SamplerKind::Heun => heun_step(handle, &z, noise_t, noise_s, &mut nfe)?,
                SamplerKind::DpmSolverPp => {
                    dpm_solverpp_step(handle, &mut dpm_state, &z, noise_t, noise_s, &mut nfe)?
                }
                SamplerKind::CovAware(cfg) => {
                    let (z_next, variance) =
                        cov_aware_step(handle, &z, noise_t, noise_s, cfg, &mut rng, &mut nfe)?;
                    if let Some(var) = variance {
                        let (mut lo, mut hi, mut sum, mut count) =
                            (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0u64);
                        for &v in var.values.iter() {
                            if !v.is_finite() || v < 0.0 || v > cfg.var_cap {
                                return Err(Error::degenerate(format!(
                                    "estimator variance {v} outside [0, {}] at t={}",
                                    cfg.var_cap,
                                    times[step]
                                )));
                            }
                            lo = lo.min(v);
                            hi = hi.max(v);
                            sum += v;
                            count += 1;
                        }
                        // Index diagnostics by step; lazily grow.
                        while diag_acc.len() <= step {
                            diag_acc.push((0.0, f64::INFINITY, f64::NEG_INFINITY, 0, 0));
                        }
                        let d = &mut diag_acc[step];
                        d.0 += sum / count as f64;
                        d.1 = d.1.min(lo);
                        d.2 = d.2.max(hi);
                        d.3 += 1;
                        d.4 = var.num_groups;
                    }
                    z_next
                }
            };
        }
        match actual_per_sample {
            None => actual_per_sample = Some(nfe.total()),
            Some(prev) => {
                if prev != nfe.total() {
                    return Err(Error::invalid_state(format!(
                        "per-sample evaluation counts diverged: {prev} vs {}",
                        nfe.total()
                    )));
                }
            }
        }
        samples.push(z);
    }

    let actual = actual_per_sample.expect("at least one sample");
    let (expected_actual, notes) = accounting_walk(kind, plan, schedule)?;
    let ledger = RunLedger {
        steps,
        guided: plan.is_guided(),
        per_step_nfe: per_step_nfe(kind, plan.is_guided()),
        planned_per_sample: plan.planned_nfe(kind),
        actual_per_sample: actual,
        setup_evals: match kind {
            SamplerKind::Addim(cfg) => cfg.setup_evals,
            _ => 0,
        },
        notes,
    };
    if actual != expected_actual || !ledger.reconciles() {
        return Err(Error::invalid_state(format!(
            "NFE ledger failed to reconcile for {}: planned {}, actual {}, expected {}",
            kind.name(),
            ledger.planned_per_sample,
            actual,
            expected_actual
        )));
    }

    let diagnostics = diag_acc
        .iter()
        .enumerate()
        .filter(|(_, d)| d.3 > 0)
        .map(|(step, d)| StepDiag {
            t: times[step],
            var_min: d.1,
            var_max: d.2,
            var_mean: d.0 / d.3 as f64,
            num_groups: d.4,
        })
        .collect();

    Ok(SampleRun {
        kind_name: kind.name().to_string(),
        seed,
        samples,
        ledger,
        diagnostics,
        probe_fingerprints: fingerprints,
    })
}
