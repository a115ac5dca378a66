//! Minimal programmatic run: compare the covariance-aware sampler against
//! DDIM and Heun on a block-spectrum Gaussian field at matched NFE
//! budgets, printing the metric rows.
//!
//! ```sh
//! cargo run -p covsamp-core --example quickstart
//! ```

use covsamp_core::denoiser::GaussianModel;
use covsamp_core::eval::runners::{run_comparison, Experiment, SamplerChoice};
use covsamp_core::eval::CSV_HEADER;
use covsamp_core::schedule::ScheduleKind;
use covsamp_core::tweedie::CovEstimatorConfig;

fn main() -> Result<(), covsamp_core::Error> {
    let model = GaussianModel::block_spectrum(&[16, 16, 3], 8, 2.0, 1.0)?;
    let mut exp = Experiment::gaussian(model, ScheduleKind::Cosine);
    exp.num_samples = 128;

    let samplers = [
        SamplerChoice::CovAware(CovEstimatorConfig::default()),
        SamplerChoice::Ddim,
        SamplerChoice::Heun,
    ];
    let (rows, runs) = run_comparison(&exp, &samplers, &[24, 36], &[0])?;

    println!("{CSV_HEADER}");
    for row in &rows {
        println!("{}", row.to_csv_line());
    }
    for run in &runs {
        println!(
            "# {}: planned {} evals/sample, spent {}",
            run.kind_name, run.ledger.planned_per_sample, run.ledger.actual_per_sample
        );
    }
    Ok(())
}
