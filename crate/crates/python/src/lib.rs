//! Python bindings: tables, IPF, hazard splitting, Monte Carlo summaries,
//! the transfer GAM and full scenario runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use mortsynth_core::gam::{self, GroupStructure, ModelLayout, PirlsConfig, SmoothSpec};
use mortsynth_core::hazard::{self, HazardRatioSpec, HazardScope, RateTable};
use mortsynth_core::io::{self as mio, ReadOptions, ScenarioConfig};
use mortsynth_core::ipf::{self, IpfConfig, ZeroPolicy};
use mortsynth_core::mc::{self, SimulationConfig, SimulationSummary};
use mortsynth_core::pipelines::{self, ScenarioOutput, ScenarioSpec};
use mortsynth_core::{ContingencyTable, DimensionSpec, Error, MarginalConstraint, TableKind};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<TableKind> {
    kind.parse().map_err(py_err)
}

/// A labeled N-dimensional table. Dimensions are stored in alphabetical
/// order of their names; values are row-major over that order.
#[pyclass(name = "Table", module = "mortsynth", frozen, from_py_object)]
#[derive(Clone)]
struct PyTable {
    inner: ContingencyTable,
}

#[pymethods]
impl PyTable {
    /// `dims` is a list of `(name, levels)` pairs in the order `values` is
    /// laid out; `kind` is "count", "probability" or "rate".
    #[new]
    #[pyo3(signature = (dims, values, kind = "count"))]
    fn new(dims: Vec<(String, Vec<String>)>, values: Vec<f64>, kind: &str) -> PyResult<Self> {
        let specs = dims
            .into_iter()
            .map(|(n, l)| DimensionSpec::new(n, l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let kind = parse_kind(kind)?;
        let table = ContingencyTable::new(specs, values, kind).map_err(py_err)?;
        Ok(Self { inner: table })
    }

    /// Reads a table file and its `.meta.toml` sidecar. Conditional tables
    /// need `marginal` over their conditioning dimensions.
    #[staticmethod]
    #[pyo3(signature = (path, marginal = None))]
    fn read(path: PathBuf, marginal: Option<&PyTable>) -> PyResult<Self> {
        let options = ReadOptions {
            marginal: marginal.map(|m| m.inner.clone()),
            ..ReadOptions::default()
        };
        let inner = mio::read_table(&path, &options).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, note = None))]
    fn write(&self, path: PathBuf, note: Option<&str>) -> PyResult<()> {
        mio::write_table(&path, &self.inner, note).map_err(py_err)
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn levels(&self) -> Vec<Vec<String>> {
        self.inner.dims().iter().map(|d| d.levels().to_vec()).collect()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    /// Value at the cell given by `{dimension: level}`.
    fn get(&self, labels: BTreeMap<String, String>) -> PyResult<f64> {
        let pairs: Vec<(&str, &str)> = labels.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        self.inner.get(&pairs).map_err(py_err)
    }

    fn marginalize(&self, keep: Vec<String>) -> PyResult<Self> {
        let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
        Ok(Self {
            inner: self.inner.marginalize(&keep).map_err(py_err)?,
        })
    }

    fn rescale(&self, total: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.rescale(total).map_err(py_err)?,
        })
    }

    fn slice(&self, dim: &str, level: &str) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.slice(dim, level).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Table(kind={}, dims={:?}, total={})",
            self.inner.kind().as_str(),
            self.inner.dims().iter().map(|d| (d.name(), d.len())).collect::<Vec<_>>(),
            self.inner.total()
        )
    }
}

/// Outcome of an IPF run.
#[pyclass(name = "IpfResult", module = "mortsynth", frozen, get_all)]
struct PyIpfResult {
    fitted: PyTable,
    iterations_used: usize,
    converged: bool,
    max_deviation: f64,
    deviation_history: Vec<f64>,
}

fn zero_policy(epsilon: Option<f64>) -> ZeroPolicy {
    match epsilon {
        Some(epsilon) => ZeroPolicy::EpsilonFloor { epsilon },
        None => ZeroPolicy::KeepZero,
    }
}

/// Fits `seed` to marginal `constraints` (tables over subsets of its
/// dimensions). `stratum` runs one fit per level of that dimension.
#[pyfunction]
#[pyo3(signature = (seed, constraints, tolerance = 1e-10, max_iterations = 1000, zero_floor = None, stratum = None))]
fn ipf_fit(
    seed: &PyTable,
    constraints: Vec<PyTable>,
    tolerance: f64,
    max_iterations: usize,
    zero_floor: Option<f64>,
    stratum: Option<&str>,
) -> PyResult<PyIpfResult> {
    let cons = constraints
        .into_iter()
        .map(|c| MarginalConstraint::new(c.inner))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let config = IpfConfig {
        tolerance,
        max_iterations,
        zero_policy: zero_policy(zero_floor),
    };
    let r = match stratum {
        Some(s) => ipf::ipf_fit_stratified(&seed.inner, s, &cons, &config),
        None => ipf::ipf_fit(&seed.inner, &cons, &config),
    }
    .map_err(py_err)?;
    Ok(PyIpfResult {
        fitted: PyTable { inner: r.fitted },
        iterations_used: r.iterations_used,
        converged: r.converged,
        max_deviation: r.max_deviation,
        deviation_history: r.deviation_history,
    })
}

/// Splits `rates` (with `exposure`) along the dimension of `shares` so that
/// level rates follow `ratios` relative to `reference` and their
/// share-weighted mean is the base rate. Returns `(rates, exposure)`.
#[pyfunction]
fn split_rates(
    rates: &PyTable,
    exposure: &PyTable,
    shares: &PyTable,
    dimension: &str,
    reference: &str,
    ratios: BTreeMap<String, f64>,
) -> PyResult<(PyTable, PyTable)> {
    let mut ratios = ratios;
    ratios.entry(reference.to_string()).or_insert(1.0);
    let spec = HazardRatioSpec::new(dimension, reference, HazardScope::Global(ratios)).map_err(py_err)?;
    let base = RateTable::new(rates.inner.clone(), exposure.inner.clone()).map_err(py_err)?;
    let conditional = hazard::conditional_shares(&shares.inner, dimension).map_err(py_err)?;
    let out = hazard::split_rates(&base, &conditional, &spec).map_err(py_err)?;
    Ok((
        PyTable {
            inner: out.rates().clone(),
        },
        PyTable {
            inner: out.exposure().clone(),
        },
    ))
}

/// Per-cell Monte Carlo summary, flattened in table order.
#[pyclass(name = "Summary", module = "mortsynth", frozen, get_all)]
struct PySummary {
    names: Vec<String>,
    levels: Vec<Vec<String>>,
    mean: Vec<f64>,
    variance: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    exposure: Vec<f64>,
    rate_mean: Vec<Option<f64>>,
    replicates: usize,
    seed: u64,
    ci_level: (f64, f64),
}

impl From<&SimulationSummary> for PySummary {
    fn from(s: &SimulationSummary) -> Self {
        Self {
            names: s.dims.iter().map(|d| d.name().to_string()).collect(),
            levels: s.dims.iter().map(|d| d.levels().to_vec()).collect(),
            mean: s.cells.iter().map(|c| c.mean).collect(),
            variance: s.cells.iter().map(|c| c.variance).collect(),
            lower: s.cells.iter().map(|c| c.bounds[0].0).collect(),
            upper: s.cells.iter().map(|c| c.bounds[0].1).collect(),
            exposure: s.cells.iter().map(|c| c.exposure).collect(),
            rate_mean: s.cells.iter().map(|c| c.mean_rate()).collect(),
            replicates: s.replicates,
            seed: s.seed,
            ci_level: s.ci_levels[0],
        }
    }
}

#[pymethods]
impl PySummary {
    /// `(upper - lower) / mean` per cell, `None` where the mean is zero.
    fn relative_widths(&self) -> Vec<Option<f64>> {
        self.mean
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(m, (l, u))| (*m > 0.0).then(|| (u - l) / m))
            .collect()
    }
}

/// Poisson replicates of every cell of `intensity` (expected deaths),
/// summarized with percentile bounds at `ci_level`.
#[pyfunction]
#[pyo3(signature = (intensity, exposure, replicates = 10_000, seed = 42, ci_level = (2.5, 97.5)))]
fn simulate(
    intensity: &PyTable,
    exposure: &PyTable,
    replicates: usize,
    seed: u64,
    ci_level: (f64, f64),
) -> PyResult<PySummary> {
    let config = SimulationConfig {
        replicates,
        rng_seed: seed,
        ci_levels: vec![ci_level],
    };
    let s = mc::simulate_summary(&intensity.inner, &exposure.inner, &config).map_err(py_err)?;
    Ok(PySummary::from(&s))
}

type RecordTuple = (f64, String, String, f64, f64, f64);

/// Fitted insured-mortality transfer model.
#[pyclass(name = "GamModel", module = "mortsynth", frozen)]
struct PyGamModel {
    inner: gam::GamModel,
}

#[pymethods]
impl PyGamModel {
    /// Fits on `(age, gender, smoker, exposure, deaths, population_deaths)`
    /// records, choosing both smoothing parameters from `lambda_values` by
    /// GCV. `groups` is "interaction", "additive" or "none".
    #[staticmethod]
    #[pyo3(signature = (records, lambda_values = vec![0.01, 0.1, 1.0, 10.0, 100.0], num_basis = 10, groups = "interaction"))]
    fn fit(records: Vec<RecordTuple>, lambda_values: Vec<f64>, num_basis: usize, groups: &str) -> PyResult<Self> {
        let groups = match groups {
            "interaction" => GroupStructure::Interaction,
            "additive" => GroupStructure::Additive,
            "none" => GroupStructure::None,
            other => return Err(PyValueError::new_err(format!("unknown group structure `{other}`"))),
        };
        let smooth = SmoothSpec {
            num_basis,
            ..SmoothSpec::default()
        };
        let layout = ModelLayout {
            age_smooth: Some(smooth),
            deaths_smooth: Some(smooth),
            groups,
        };
        let training: Vec<gam::TrainingRecord> = records
            .into_iter()
            .map(|(age, gender, smoker, exposure, deaths, population_deaths)| gam::TrainingRecord {
                age,
                gender,
                smoker,
                exposure,
                deaths,
                population_deaths,
            })
            .collect();
        let grid = gam::lambda_grid(&lambda_values, 2);
        let inner = gam::fit_gam(&training, &layout, &grid, &PirlsConfig::default()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: gam::GamModel::from_text(text).map_err(py_err)?,
        })
    }

    fn to_text(&self) -> PyResult<String> {
        self.inner.to_text().map_err(py_err)
    }

    /// Predicted `(rates, deaths, extrapolated)` for
    /// `(age, gender, smoker, exposure, population_deaths)` targets.
    fn predict(&self, targets: Vec<(f64, String, String, f64, f64)>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<bool>)> {
        let targets: Vec<gam::TargetRecord> = targets
            .into_iter()
            .map(|(age, gender, smoker, exposure, population_deaths)| gam::TargetRecord {
                age,
                gender,
                smoker,
                exposure,
                population_deaths,
            })
            .collect();
        let p = gam::predict_insured_rates(&self.inner, &targets).map_err(py_err)?;
        Ok((p.rates, p.deaths, p.extrapolated))
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas.clone()
    }

    #[getter]
    fn edf(&self) -> f64 {
        self.inner.edf
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }
}

/// A finished scenario run.
#[pyclass(name = "ScenarioRun", module = "mortsynth", frozen)]
struct PyScenarioRun {
    config_path: PathBuf,
    config: ScenarioConfig,
    spec: ScenarioSpec,
    out: ScenarioOutput,
}

#[pymethods]
impl PyScenarioRun {
    #[getter]
    fn scenario(&self) -> u8 {
        self.out.scenario
    }

    #[getter]
    fn passed(&self) -> bool {
        self.out.report.passed()
    }

    /// `(name, status, deviation, tolerance)` per validation check.
    fn checks(&self) -> Vec<(String, String, f64, f64)> {
        self.out
            .report
            .checks
            .iter()
            .map(|c| (c.name.clone(), format!("{:?}", c.status).to_lowercase(), c.deviation, c.tolerance))
            .collect()
    }

    fn report_json(&self) -> String {
        self.out.report.to_json()
    }

    #[getter]
    fn population(&self) -> PyTable {
        PyTable {
            inner: self.out.population.clone(),
        }
    }

    #[getter]
    fn rates(&self) -> PyTable {
        PyTable {
            inner: self.out.rates.rates().clone(),
        }
    }

    #[getter]
    fn expected_deaths(&self) -> PyTable {
        PyTable {
            inner: self.out.expected_deaths.clone(),
        }
    }

    #[getter]
    fn summary(&self) -> PySummary {
        PySummary::from(&self.out.summary)
    }

    #[getter]
    fn aggregated(&self) -> PySummary {
        PySummary::from(&self.out.aggregated)
    }

    /// Writes every output file into `out_dir`; returns the paths written.
    fn write(&self, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        let manifest = mio::RunManifest::new("python", &self.config_path, &self.config, &self.spec).map_err(py_err)?;
        mio::write_outputs(&out_dir, &self.spec, &self.out, &manifest).map_err(py_err)
    }
}

/// Runs the scenario described by the TOML config at `config`.
#[pyfunction]
#[pyo3(signature = (config, seed = None, replicates = None))]
fn run_scenario(py: Python<'_>, config: PathBuf, seed: Option<u64>, replicates: Option<usize>) -> PyResult<PyScenarioRun> {
    let mut cfg = ScenarioConfig::load(&config).map_err(py_err)?;
    if let Some(r) = replicates {
        cfg.simulation.replicates = r;
    }
    let seed = mio::resolve_seed(seed, cfg.simulation.seed).map_err(py_err)?;
    let spec = ScenarioSpec::from_config(&cfg, seed).map_err(py_err)?;
    let out = py.detach(|| pipelines::run_scenario(&spec)).map_err(py_err)?;
    Ok(PyScenarioRun {
        config_path: config,
        config: cfg,
        spec,
        out,
    })
}

/// Runs the command-line interface with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn cli(argv: Vec<String>) -> i32 {
    mortsynth_core::cli::cli_dispatch(std::iter::once("mortsynth".to_string()).chain(argv))
}

#[pymodule]
fn mortsynth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_class::<PyIpfResult>()?;
    m.add_class::<PySummary>()?;
    m.add_class::<PyGamModel>()?;
    m.add_class::<PyScenarioRun>()?;
    m.add_function(wrap_pyfunction!(ipf_fit, m)?)?;
    m.add_function(wrap_pyfunction!(split_rates, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
