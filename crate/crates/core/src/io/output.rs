//! Writing a finished scenario run to an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{plot, sha256_file, sha256_hex, write_atomic, write_table, ScenarioConfig};
use crate::mc::SimulationSummary;
use crate::pipelines::{ScenarioOutput, ScenarioSpec};
use crate::table::ContingencyTable;

/// What produced a run: enough to reproduce it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: u8,
    pub seed: u64,
    pub replicates: usize,
    pub ipf_tolerance: f64,
    pub ipf_max_iterations: usize,
    pub population_total: f64,
    pub config_sha256: String,
    pub config_text: String,
    /// SHA-256 of every input file and sidecar, keyed by path relative to
    /// the config directory.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: &Path,
        config: &ScenarioConfig,
        spec: &ScenarioSpec,
    ) -> Result<Self> {
        let config_text =
            std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
        let base = config_path.parent().unwrap_or(Path::new(""));
        let mut inputs = BTreeMap::new();
        for f in config.input_files() {
            if !f.exists() {
                continue;
            }
            let key = f.strip_prefix(base).unwrap_or(&f).to_string_lossy().into_owned();
            inputs.insert(key, sha256_file(&f)?);
        }
        Ok(Self {
            tool: "mortsynth".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            scenario: spec.id,
            seed: spec.simulation.rng_seed,
            replicates: spec.simulation.replicates,
            ipf_tolerance: spec.ipf.tolerance,
            ipf_max_iterations: spec.ipf.max_iterations,
            population_total: spec.population_total,
            config_sha256: sha256_hex(config_text.as_bytes()),
            config_text,
            inputs,
        })
    }
}

fn csv_bytes(rows: Vec<Vec<String>>, path: &Path) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.write_record(&r)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    wtr.into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn percent_label(p: f64) -> String {
    let s = fmt(p);
    s.strip_suffix(".0").unwrap_or(&s).to_string()
}

/// One row per cell: labels, exposure, lambda, mean, variance, count bounds
/// per CI level, then mean rate and rate bounds per level.
pub fn summary_csv(summary: &SimulationSummary, lambda: &ContingencyTable) -> Result<String> {
    if lambda.dims() != summary.dims.as_slice() {
        return Err(Error::ConstraintMismatch(
            "summary and intensity tables have different dimensions".into(),
        ));
    }
    let mut header: Vec<String> = summary.dims.iter().map(|d| d.name().to_string()).collect();
    header.extend(["exposure", "lambda", "mean", "variance"].map(String::from));
    for &(lo, hi) in &summary.ci_levels {
        header.push(format!("lower_{}", percent_label(lo)));
        header.push(format!("upper_{}", percent_label(hi)));
    }
    header.push("rate_mean".into());
    for &(lo, hi) in &summary.ci_levels {
        header.push(format!("rate_lower_{}", percent_label(lo)));
        header.push(format!("rate_upper_{}", percent_label(hi)));
    }
    let mut rows = vec![header];
    for (i, c) in summary.cells.iter().enumerate() {
        let mut r: Vec<String> = lambda.cell_labels(i).into_iter().map(str::to_string).collect();
        r.extend([fmt(c.exposure), fmt(lambda.values()[i]), fmt(c.mean), fmt(c.variance)]);
        for &(lo, hi) in &c.bounds {
            r.push(fmt(lo));
            r.push(fmt(hi));
        }
        r.push(fmt_opt(c.mean_rate()));
        for b in &c.rate_bounds {
            r.push(fmt_opt(b.map(|x| x.0)));
            r.push(fmt_opt(b.map(|x| x.1)));
        }
        rows.push(r);
    }
    let bytes = csv_bytes(rows, Path::new("ci.csv"))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct IpfReport<'a> {
    method: crate::io::config::IpfMethod,
    iterations_used: usize,
    converged: bool,
    max_deviation: f64,
    deviation_history: &'a [f64],
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s.into_bytes()
}

fn file_stem_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes every artifact of a run into `dir` and returns the paths written.
pub fn write_outputs(
    dir: &Path,
    spec: &ScenarioSpec,
    out: &ScenarioOutput,
    manifest: &RunManifest,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };

    let tables: Vec<(&str, &ContingencyTable, &str)> = vec![
        ("population.csv", &out.population, "synthetic population counts"),
        ("rates.csv", out.rates.rates(), "mortality rates over the full joint"),
        ("expected_deaths.csv", &out.expected_deaths, "rate times population"),
    ];
    let mut extra: Vec<(String, ContingencyTable, &str)> = Vec::new();
    if let Some(s) = &out.split {
        extra.push(("split_rates.csv".into(), s.rates().clone(), "base rates split by smoker status"));
    }
    if let Some(t) = &out.transfer {
        extra.push(("insured_rates.csv".into(), t.insured.rates().clone(), "predicted insured rates"));
    }
    let mut tables_written = Vec::new();
    for (name, table, note) in tables {
        let p = dir.join(name);
        write_table(&p, table, Some(note))?;
        tables_written.push(p);
    }
    for (name, table, note) in &extra {
        let p = dir.join(name);
        write_table(&p, table, Some(note))?;
        tables_written.push(p);
    }

    put(
        "ci.csv",
        summary_csv(&out.summary, &out.expected_deaths)?.into_bytes(),
    )?;
    let keep: Vec<&str> = out.aggregated.dims.iter().map(|d| d.name()).collect();
    let agg_lambda = out.expected_deaths.marginalize(&keep)?;
    put(
        "ci_aggregated.csv",
        summary_csv(&out.aggregated, &agg_lambda)?.into_bytes(),
    )?;
    put(
        "ipf.json",
        json(&IpfReport {
            method: spec.ipf_method,
            iterations_used: out.ipf.iterations_used,
            converged: out.ipf.converged,
            max_deviation: out.ipf.max_deviation,
            deviation_history: &out.ipf.deviation_history,
        }),
    )?;
    if let Some(t) = &out.transfer {
        put("gam_model.txt", t.model.to_text()?.into_bytes())?;
    }
    let mut report = out.report.to_json();
    report.push('\n');
    put("validation_report.json", report.into_bytes())?;
    put("manifest.json", json(manifest))?;

    put(
        "plots/aggregated.svg",
        plot::rate_plot("all regions", &out.aggregated)?.into_bytes(),
    )?;
    for level in out.region_levels() {
        let cells = plot::region_cells(&out.summary, &out.region_dimension, &level)?;
        put(
            &format!("plots/{}.svg", file_stem_safe(&level)),
            plot::rate_plot(&level, &cells)?.into_bytes(),
        )?;
    }
    written.extend(tables_written);
    written.sort();
    Ok(written)
}
