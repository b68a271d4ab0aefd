//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when a validation check fails, 2 on usage or
//! input errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::gam::TargetRecord;
use crate::io::{write_atomic, write_outputs, write_table, RunManifest, ScenarioConfig};
use crate::pipelines::{self, ScenarioSpec, ValidationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mortsynth", version, about = "Synthesize granular mortality tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the joint population distribution to the configured marginals.
    Ipf(Common),
    /// Split age x gender base rates by smoker status.
    Split(Common),
    /// Run the Monte Carlo simulation and write confidence intervals.
    Simulate(Common),
    /// Fit the insured-mortality transfer model on the source country.
    Fit(Common),
    /// Run a complete scenario and write every output.
    Scenario {
        /// Scenario number (1, 2 or 3); overrides the config.
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        number: u8,
        #[command(flatten)]
        common: Common,
    },
    /// Check inputs and, if they pass, the outputs of a full run.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// IPF convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// IPF iteration cap.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Monte Carlo replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// RNG seed; falls back to the config, then MORTSYNTH_SEED, then 42.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    config: ScenarioConfig,
    spec: ScenarioSpec,
}

fn load(common: &Common, scenario: Option<u8>) -> Result<Loaded> {
    let mut config = ScenarioConfig::load(&common.config)?;
    if let Some(n) = scenario {
        config.scenario = n;
    }
    if let Some(t) = common.tol {
        config.ipf.tolerance = t;
    }
    if let Some(m) = common.max_iter {
        config.ipf.max_iterations = m;
    }
    if let Some(r) = common.replicates {
        config.simulation.replicates = r;
    }
    let seed = crate::io::resolve_seed(common.seed, config.simulation.seed)?;
    let spec = ScenarioSpec::from_config(&config, seed)?;
    Ok(Loaded { config, spec })
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn manifest(command: &str, common: &Common, l: &Loaded) -> Result<RunManifest> {
    RunManifest::new(command, &common.config, &l.config, &l.spec)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn report_exit(report: &ValidationReport) -> i32 {
    for c in &report.checks {
        eprintln!("{:<40} {:?} deviation={:e}", c.name, c.status, c.deviation);
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

fn run_ipf(common: &Common) -> Result<i32> {
    let l = load(common, None)?;
    let i = &l.spec.inputs;
    let demo = pipelines::Demography::load(&i.gender, &i.age_gender, &i.smoker_gender, Some(&i.region))?;
    let fit = pipelines::synthesize_population(&demo, &l.spec.ipf, l.spec.ipf_method)?;
    let dir = out_dir(common, "out/ipf");
    write_table(&dir.join("joint.csv"), &fit.fitted, Some("fitted joint distribution"))?;
    let population = fit.fitted.rescale(l.spec.population_total)?;
    write_table(&dir.join("population.csv"), &population, Some("synthetic population counts"))?;
    write_json(
        &dir.join("ipf.json"),
        &serde_json::json!({
            "method": l.spec.ipf_method,
            "iterations_used": fit.iterations_used,
            "converged": fit.converged,
            "max_deviation": fit.max_deviation,
            "tolerance": l.spec.ipf.tolerance,
            "deviation_history": fit.deviation_history,
        }),
    )?;
    write_json(&dir.join("manifest.json"), &manifest("ipf", common, &l)?)?;
    println!(
        "ipf: {} iterations, max deviation {:e}, converged {}",
        fit.iterations_used, fit.max_deviation, fit.converged
    );
    Ok(if fit.converged { EXIT_OK } else { EXIT_VALIDATION })
}

fn run_split(common: &Common) -> Result<i32> {
    let l = load(common, None)?;
    let mut spec = l.spec.clone();
    spec.id = 2;
    if spec.hazard.is_none() {
        return Err(crate::Error::Config("split needs a [hazard] section".into()));
    }
    let out = pipelines::run_scenario_2(&spec)?;
    let dir = out_dir(common, "out/split");
    let split = out.split.as_ref().expect("scenario 2 produces a split");
    write_table(&dir.join("split_rates.csv"), split.rates(), Some("base rates split by smoker status"))?;
    write_table(&dir.join("split_exposure.csv"), split.exposure(), Some("national exposure per split cell"))?;
    write_json(&dir.join("manifest.json"), &manifest("split", common, &l)?)?;
    println!("split: {} cells", split.rates().len());
    Ok(EXIT_OK)
}

fn run_simulate(common: &Common) -> Result<i32> {
    let l = load(common, None)?;
    let out = pipelines::run_scenario(&l.spec)?;
    let dir = out_dir(common, "out/simulate");
    write_atomic(
        &dir.join("ci.csv"),
        crate::io::summary_csv(&out.summary, &out.expected_deaths)?.as_bytes(),
    )?;
    let keep: Vec<&str> = out.aggregated.dims.iter().map(|d| d.name()).collect();
    let agg = out.expected_deaths.marginalize(&keep)?;
    write_atomic(
        &dir.join("ci_aggregated.csv"),
        crate::io::summary_csv(&out.aggregated, &agg)?.as_bytes(),
    )?;
    write_json(&dir.join("manifest.json"), &manifest("simulate", common, &l)?)?;
    println!(
        "simulate: {} cells x {} replicates, seed {}",
        out.summary.cells.len(),
        out.summary.replicates,
        out.summary.seed
    );
    Ok(EXIT_OK)
}

fn run_fit(common: &Common) -> Result<i32> {
    let l = load(common, None)?;
    let (source, hazard) = match (&l.spec.source, &l.spec.hazard) {
        (Some(s), Some(h)) => (s, h),
        _ => {
            return Err(crate::Error::Config(
                "fit needs [source] and [hazard] sections".into(),
            ))
        }
    };
    let (model, training) =
        pipelines::fit_transfer_model(source, hazard, l.spec.population_total, &l.spec.gam)?;
    let dir = out_dir(common, "out/fit");
    write_atomic(&dir.join("gam_model.txt"), model.to_text()?.as_bytes())?;
    let own: Vec<TargetRecord> = training.iter().map(TargetRecord::from).collect();
    let pred = crate::gam::predict_insured_rates(&model, &own)?;
    let observed: Vec<f64> = training.iter().map(|r| r.deaths / r.exposure).collect();
    let rmse = pipelines::log_rmse(&pred.rates, &observed);
    write_json(
        &dir.join("fit.json"),
        &serde_json::json!({
            "lambdas": model.lambdas,
            "deviance": model.deviance,
            "edf": model.edf,
            "converged": model.converged,
            "iterations": model.iterations,
            "records": model.num_records,
            "training_log_rmse": rmse,
        }),
    )?;
    write_json(&dir.join("manifest.json"), &manifest("fit", common, &l)?)?;
    println!(
        "fit: lambdas {:?}, edf {:.3}, training log-rate RMSE {:.4}",
        model.lambdas, model.edf, rmse
    );
    Ok(if model.converged { EXIT_OK } else { EXIT_VALIDATION })
}

fn run_full(number: u8, common: &Common) -> Result<i32> {
    let l = load(common, Some(number))?;
    let out = pipelines::run_scenario(&l.spec)?;
    let dir = out_dir(common, &format!("out/scenario{number}"));
    let m = manifest("scenario", common, &l)?;
    write_outputs(&dir, &l.spec, &out, &m)?;
    println!("scenario {number}: outputs in {}", dir.display());
    Ok(report_exit(&out.report))
}

fn run_validate(common: &Common) -> Result<i32> {
    let l = load(common, None)?;
    let report = pipelines::validate(&l.spec)?;
    if let Some(dir) = &common.out {
        let mut s = report.to_json();
        s.push('\n');
        write_atomic(&dir.join("validation_report.json"), s.as_bytes())?;
    }
    Ok(report_exit(&report))
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Ipf(c) => run_ipf(c),
        Command::Split(c) => run_split(c),
        Command::Simulate(c) => run_simulate(c),
        Command::Fit(c) => run_fit(c),
        Command::Scenario { number, common } => run_full(*number, common),
        Command::Validate(c) => run_validate(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
