//! Scenario configuration files.
//!
//! A config is a TOML document with one section per module. Paths are
//! relative to the directory holding the config file.
//!
//! ```toml
//! scenario = 2
//! name = "italy"
//! population_total = 1000000
//!
//! [inputs]
//! gender = "italy/gender.csv"
//! age_gender = "italy/age_gender.csv"
//! smoker_gender = "italy/smoker_gender.csv"
//! region = "italy/region.csv"
//! base_rates = "italy/insured_rates.csv"
//!
//! [hazard]
//! dimension = "smoker"
//! reference = "no"
//! ratios = { yes = 1.4 }
//!
//! [ipf]
//! tolerance = 1e-10
//! max_iterations = 1000
//! method = "cross_tabulated"   # or "stratified"
//!
//! [simulation]
//! replicates = 10000
//! seed = 42
//! ci_levels = [[2.5, 97.5]]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: u8,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_population")]
    pub population_total: f64,
    pub inputs: InputPaths,
    #[serde(default)]
    pub source: Option<SourcePaths>,
    #[serde(default)]
    pub hazard: Option<HazardConfig>,
    #[serde(default)]
    pub ipf: IpfSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub gam: GamSection,
    #[serde(default)]
    pub reference: Option<ReferenceCell>,
}

fn default_population() -> f64 {
    1_000_000.0
}

/// Target-country inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub gender: PathBuf,
    /// Age distribution within gender.
    pub age_gender: PathBuf,
    /// Smoker prevalence within gender.
    pub smoker_gender: PathBuf,
    /// Regional distribution; its single column names the region dimension.
    pub region: PathBuf,
    /// Base mortality rates: age x gender x smoker for scenario 1, age x
    /// gender for scenarios 2 and 3.
    pub base_rates: PathBuf,
}

/// Source-country data for the transfer model (scenario 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePaths {
    pub gender: PathBuf,
    pub age_gender: PathBuf,
    pub smoker_gender: PathBuf,
    /// Insured rates by age x gender x smoker.
    pub insured_rates: PathBuf,
    /// General-population rates by age x gender.
    pub population_rates: PathBuf,
    #[serde(default)]
    pub hazard: Option<HazardConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardConfig {
    pub dimension: String,
    pub reference: String,
    pub ratios: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpfMethod {
    /// One fit with cross-tabulated (age x gender, smoker x gender) targets.
    CrossTabulated,
    /// A separate fit per gender.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpfSection {
    #[serde(default = "default_ipf_tol")]
    pub tolerance: f64,
    #[serde(default = "default_ipf_iter")]
    pub max_iterations: usize,
    #[serde(default = "default_method")]
    pub method: IpfMethod,
    /// Replace zero seed cells by this value; zero cells stay zero when unset.
    #[serde(default)]
    pub epsilon_floor: Option<f64>,
}

fn default_ipf_tol() -> f64 {
    1e-10
}

fn default_ipf_iter() -> usize {
    1000
}

fn default_method() -> IpfMethod {
    IpfMethod::CrossTabulated
}

impl Default for IpfSection {
    fn default() -> Self {
        Self {
            tolerance: default_ipf_tol(),
            max_iterations: default_ipf_iter(),
            method: default_method(),
            epsilon_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Falls back to `MORTSYNTH_SEED`, then 42.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_ci")]
    pub ci_levels: Vec<(f64, f64)>,
}

fn default_replicates() -> usize {
    10_000
}

fn default_ci() -> Vec<(f64, f64)> {
    vec![(2.5, 97.5)]
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            seed: None,
            ci_levels: default_ci(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GamSection {
    #[serde(default = "default_num_basis")]
    pub num_basis: usize,
    /// Candidate values for each smoothing parameter; the grid is their
    /// Cartesian product.
    #[serde(default = "default_lambda_values")]
    pub lambda_values: Vec<f64>,
}

fn default_num_basis() -> usize {
    10
}

fn default_lambda_values() -> Vec<f64> {
    vec![1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]
}

impl Default for GamSection {
    fn default() -> Self {
        Self {
            num_basis: default_num_basis(),
            lambda_values: default_lambda_values(),
        }
    }
}

/// A cell whose population share is compared with a published value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCell {
    pub labels: BTreeMap<String, String>,
    /// Published share of the population, in percent.
    pub percent: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub source: Option<String>,
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.gender,
            &mut i.age_gender,
            &mut i.smoker_gender,
            &mut i.region,
            &mut i.base_rates,
        ] {
            fix(p);
        }
        if let Some(s) = &mut self.source {
            for p in [
                &mut s.gender,
                &mut s.age_gender,
                &mut s.smoker_gender,
                &mut s.insured_rates,
                &mut s.population_rates,
            ] {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.scenario) {
            return Err(Error::Config(format!(
                "scenario must be 1, 2 or 3, got {}",
                self.scenario
            )));
        }
        if !(self.population_total.is_finite() && self.population_total > 0.0) {
            return Err(Error::Config("population_total must be > 0".into()));
        }
        if self.scenario >= 2 && self.hazard.is_none() {
            return Err(Error::Config(format!(
                "scenario {} needs a [hazard] section",
                self.scenario
            )));
        }
        if self.scenario == 3 && self.source.is_none() {
            return Err(Error::Config("scenario 3 needs a [source] section".into()));
        }
        if self.gam.lambda_values.is_empty() {
            return Err(Error::Config("gam.lambda_values must not be empty".into()));
        }
        Ok(())
    }

    /// Every input file with its sidecar, for digests.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let i = &self.inputs;
        let mut files = vec![
            i.gender.clone(),
            i.age_gender.clone(),
            i.smoker_gender.clone(),
            i.region.clone(),
            i.base_rates.clone(),
        ];
        if let Some(s) = &self.source {
            files.extend([
                s.gender.clone(),
                s.age_gender.clone(),
                s.smoker_gender.clone(),
                s.insured_rates.clone(),
                s.population_rates.clone(),
            ]);
        }
        let mut out = Vec::new();
        for f in files {
            out.push(crate::io::meta_path(&f));
            out.push(f);
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Seed precedence: explicit flag, config, `MORTSYNTH_SEED`, then 42.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var("MORTSYNTH_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("MORTSYNTH_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(42),
    }
}
