//! Batch command-line front end.
//!
//! Subcommands: `verify` (invariant suite), `sample` (comparison runs),
//! `ablate` (transform/averaging sweep), `report` (CSV to SVG plots).
//! Exit codes: 0 success, 1 compute failure, 2 invalid config or schema.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::runners::{run_ablation, run_comparison};
use crate::eval::rows_to_csv;
use crate::io::{atomic_write_text, write_samples};
use crate::verify::{run_verification, FaultInjection};

#[derive(Debug, Parser)]
#[command(name = "covsamp", version, about = "Covariance-aware diffusion sampling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print per-cell progress and tolerances.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the built-in verification suite.
    Verify {
        #[arg(long)]
        verbose: bool,
    },
    /// Run the sampler comparison described by a config file.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the transform/averaging ablation described by a config file.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render SVG plots from a results CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        verbose: bool,
    },
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Schema(_) => 2,
        _ => 1,
    }
}

/// Prints the per-check table and returns the process exit code.
pub fn cmd_verify(verbose: bool) -> i32 {
    let outcomes = run_verification(&FaultInjection::default());
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        if verbose {
            println!("{status}  {:width$}  [{}]  {}", o.name, o.tolerance, o.detail);
        } else {
            println!("{status}  {:width$}  {}", o.name, o.detail);
        }
        if !o.passed {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        0
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        1
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<crate::config::RunConfig> {
    let mut cfg = crate::config::RunConfig::load(path)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

/// Executes the comparison and writes `metrics.csv` plus one sample
/// archive per cell.
pub fn cmd_sample(config: &Path, out: &Path, seed_override: Option<u64>, verbose: bool) -> Result<()> {
    let cfg = load_config(config, seed_override)?;
    let (rows, runs) = run_comparison(&cfg.experiment, &cfg.samplers, &cfg.budgets, &cfg.seeds)?;
    std::fs::create_dir_all(out)?;
    for (row, run) in rows.iter().zip(runs.iter()) {
        let name = format!("samples_{}_{}_{}.csm", row.sampler, row.nfe, row.seed);
        write_samples(&out.join(&name), &run.samples)?;
        if verbose {
            println!(
                "{} nfe={} seed={}: steps={} actual_evals={} spectrum_err={:.4}",
                row.sampler,
                row.nfe,
                row.seed,
                row.steps,
                run.ledger.actual_per_sample,
                row.spectrum_err
            );
        }
    }
    atomic_write_text(&out.join("metrics.csv"), &rows_to_csv(&rows))?;
    println!("wrote {} rows to {}", rows.len(), out.join("metrics.csv").display());
    Ok(())
}

/// Executes the ablation sweep and writes `ablation.csv`.
pub fn cmd_ablate(config: &Path, out: &Path, seed_override: Option<u64>, verbose: bool) -> Result<()> {
    let cfg = load_config(config, seed_override)?;
    let grid = cfg
        .ablation
        .as_ref()
        .ok_or_else(|| Error::config("config has no [ablation] section"))?;
    let (rows, _) = run_ablation(grid, &cfg.experiment, &cfg.estimator, &cfg.seeds)?;
    std::fs::create_dir_all(out)?;
    if verbose {
        for row in &rows {
            println!(
                "{}/{} nfe={} seed={}: spectrum_err={:.4}",
                row.transform, row.averaging, row.nfe, row.seed, row.spectrum_err
            );
        }
    }
    atomic_write_text(&out.join("ablation.csv"), &rows_to_csv(&rows))?;
    println!("wrote {} rows to {}", rows.len(), out.join("ablation.csv").display());
    Ok(())
}

/// Renders every metric of a results CSV as SVG plots.
pub fn cmd_report(csv: &Path, out: &Path, verbose: bool) -> Result<()> {
    let text = std::fs::read_to_string(csv)
        .map_err(|e| Error::schema(format!("cannot read {}: {e}", csv.display())))?;
    let rows = crate::eval::parse_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::schema("CSV has no data rows"));
    }
    std::fs::create_dir_all(out)?;
    for (name, svg) in crate::plot::render_report(&rows)? {
        atomic_write_text(&out.join(&name), &svg)?;
        if verbose {
            println!("wrote {}", out.join(&name).display());
        }
    }
    println!("rendered {} plots to {}", crate::plot::METRICS.len(), out.display());
    Ok(())
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Verify { verbose } => return cmd_verify(verbose),
        Command::Sample { config, common } => {
            cmd_sample(&config, &common.out, common.seed, common.verbose)
        }
        Command::Ablate { config, common } => {
            cmd_ablate(&config, &common.out, common.seed, common.verbose)
        }
        Command::Report { csv, out, verbose } => cmd_report(&csv, &out, verbose),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
version = 1

[model]
kind = "gaussian"
shape = [4, 1, 1]
covariance = "isotropic"
variance = 1.0

[sampling]
samplers = ["ddim"]
budgets = [8]
num_samples = 8

[metrics]
transform = "identity"
"#;

    #[test]
    fn sample_command_writes_csv_and_archives() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, CONFIG).unwrap();
        let out = dir.path().join("out");
        cmd_sample(&config_path, &out, None, false).unwrap();
        let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(csv.starts_with(crate::eval::CSV_HEADER));
        assert_eq!(csv.lines().count(), 2, "one data row");
        assert!(out.join("samples_ddim_8_0.csm").exists());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, CONFIG).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_sample(&config_path, &out_a, None, false).unwrap();
        cmd_sample(&config_path, &out_b, None, false).unwrap();
        let csv_a = std::fs::read(out_a.join("metrics.csv")).unwrap();
        let csv_b = std::fs::read(out_b.join("metrics.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
        let bin_a = std::fs::read(out_a.join("samples_ddim_8_0.csm")).unwrap();
        let bin_b = std::fs::read(out_b.join("samples_ddim_8_0.csm")).unwrap();
        assert_eq!(bin_a, bin_b);
    }

    #[test]
    fn invalid_config_is_exit_code_two() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("bad.toml");
        std::fs::write(&config_path, "version = 1\n").unwrap();
        let code = run([
            "covsamp",
            "sample",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn report_renders_plots_and_rejects_bad_schema() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, CONFIG).unwrap();
        let out = dir.path().join("out");
        cmd_sample(&config_path, &out, None, false).unwrap();
        cmd_report(&out.join("metrics.csv"), &out, false).unwrap();
        for m in crate::plot::METRICS {
            assert!(out.join(format!("report_{m}.svg")).exists());
        }

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "sampler,steps\nddim,4\n").unwrap();
        let err = cmd_report(&bad, &out, false).unwrap_err().to_string();
        assert!(err.contains("missing column"), "{err}");
    }

    #[test]
    fn seed_override_applies() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, CONFIG).unwrap();
        let out = dir.path().join("out");
        cmd_sample(&config_path, &out, Some(7), false).unwrap();
        assert!(out.join("samples_ddim_8_7.csm").exists());
    }
}
