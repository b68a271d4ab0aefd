//! End-to-end scenario runs and their validation.

mod report;

pub use report::{Check, CheckStatus, ValidationReport, MAX_LISTED_CELLS};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gam::{
    fit_gam, lambda_grid, predict_insured_rates, GamModel, ModelLayout, PirlsConfig, SmoothSpec,
    TargetRecord, TrainingRecord,
};
use crate::hazard::{conditional_shares, split_rates, HazardRatioSpec, HazardScope, RateTable};
use crate::io::config::{
    GamSection, HazardConfig, InputPaths, IpfMethod, ReferenceCell, ScenarioConfig, SourcePaths,
};
use crate::io::{read_raw_table, read_table, ReadOptions};
use crate::ipf::{ipf_fit, ipf_fit_stratified, max_marginal_deviation, IpfConfig, IpfResult, ZeroPolicy};
use crate::mc::{simulate_with_aggregate, SimulationConfig, SimulationSummary};
use crate::table::{uniform_table, ContingencyTable, DimensionSpec, MarginalConstraint, TableKind};

pub const AGE: &str = "age";
pub const GENDER: &str = "gender";
pub const SMOKER: &str = "smoker";

/// Relative tolerance of the exact-arithmetic identities (aggregation,
/// conservation).
pub const IDENTITY_TOL: f64 = 1e-10;
/// Tolerance on the smoker/non-smoker rate ratio.
pub const RATIO_TOL: f64 = 1e-9;
/// Largest accepted RMSE of log-rates when the transfer model is applied to
/// its own training data.
pub const SELF_TRANSFER_TOL: f64 = 0.05;

/// Everything a scenario run needs, with seeds and defaults resolved.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub id: u8,
    pub population_total: f64,
    pub inputs: InputPaths,
    pub source: Option<SourcePaths>,
    pub hazard: Option<HazardConfig>,
    pub ipf: IpfConfig,
    pub ipf_method: IpfMethod,
    pub simulation: SimulationConfig,
    pub gam: GamSection,
    pub reference: Option<ReferenceCell>,
}

impl ScenarioSpec {
    pub fn from_config(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let ipf = IpfConfig {
            tolerance: cfg.ipf.tolerance,
            max_iterations: cfg.ipf.max_iterations,
            zero_policy: match cfg.ipf.epsilon_floor {
                Some(epsilon) => ZeroPolicy::EpsilonFloor { epsilon },
                None => ZeroPolicy::KeepZero,
            },
        };
        ipf.validate()?;
        let simulation = SimulationConfig {
            replicates: cfg.simulation.replicates,
            rng_seed: seed,
            ci_levels: cfg.simulation.ci_levels.clone(),
        };
        simulation.validate()?;
        Ok(Self {
            id: cfg.scenario,
            population_total: cfg.population_total,
            inputs: cfg.inputs.clone(),
            source: cfg.source.clone(),
            hazard: cfg.hazard.clone(),
            ipf,
            ipf_method: cfg.ipf.method,
            simulation,
            gam: cfg.gam.clone(),
            reference: cfg.reference.clone(),
        })
    }
}

/// Demographic distributions of one country, all as joint probabilities.
#[derive(Debug, Clone)]
pub struct Demography {
    pub gender: ContingencyTable,
    /// P(age, gender).
    pub age_gender: ContingencyTable,
    /// P(gender, smoker).
    pub smoker_gender: ContingencyTable,
    /// P(region); absent for source-country data.
    pub region: Option<ContingencyTable>,
}

fn require_dims(table: &ContingencyTable, names: &[&str], path: &Path) -> Result<()> {
    let mut want: Vec<&str> = names.to_vec();
    want.sort_unstable();
    if table.names() != want {
        return Err(Error::parse(
            path,
            0,
            format!(
                "expected columns [{}], found [{}]",
                want.join(", "),
                table.names().join(", ")
            ),
        ));
    }
    Ok(())
}

impl Demography {
    pub fn load(
        gender: &Path,
        age_gender: &Path,
        smoker_gender: &Path,
        region: Option<&Path>,
    ) -> Result<Self> {
        let g = read_table(gender, &ReadOptions::default())?;
        require_dims(&g, &[GENDER], gender)?;
        let with_gender = ReadOptions {
            expected_dims: None,
            marginal: Some(g.clone()),
        };
        let ag = read_table(age_gender, &with_gender)?;
        require_dims(&ag, &[AGE, GENDER], age_gender)?;
        let sg = read_table(smoker_gender, &with_gender)?;
        require_dims(&sg, &[GENDER, SMOKER], smoker_gender)?;
        let region = match region {
            Some(p) => {
                let r = read_table(p, &ReadOptions::default())?;
                if r.dims().len() != 1 || [AGE, GENDER, SMOKER].contains(&r.names()[0]) {
                    return Err(Error::parse(p, 0, "region table needs exactly one region column"));
                }
                Some(r)
            }
            None => None,
        };
        for (t, name) in [(&ag, "age_gender"), (&sg, "smoker_gender")] {
            if t.kind() != TableKind::Probability {
                return Err(Error::InvalidSpec(format!("{name} must be a probability table")));
            }
        }
        Ok(Self {
            gender: g,
            age_gender: ag,
            smoker_gender: sg,
            region,
        })
    }

    pub fn region_table(&self) -> Result<&ContingencyTable> {
        self.region
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("no regional distribution loaded".into()))
    }

    pub fn region_dimension(&self) -> Result<&DimensionSpec> {
        Ok(&self.region_table()?.dims()[0])
    }

    /// P(smoker | gender).
    pub fn smoker_shares(&self) -> Result<ContingencyTable> {
        conditional_shares(&self.smoker_gender, SMOKER)
    }

    fn dim(&self, name: &str) -> Result<DimensionSpec> {
        let t = if name == SMOKER { &self.smoker_gender } else { &self.age_gender };
        t.dim(name)
            .cloned()
            .ok_or_else(|| Error::InvalidSpec(format!("missing dimension `{name}`")))
    }

    /// Age x gender x smoker x region dimensions of the synthetic population.
    pub fn joint_dims(&self) -> Result<Vec<DimensionSpec>> {
        Ok(vec![
            self.dim(AGE)?,
            self.dim(GENDER)?,
            self.dim(SMOKER)?,
            self.region_dimension()?.clone(),
        ])
    }

    /// Age x gender, gender x smoker and region targets, as probabilities.
    pub fn constraints(&self) -> Result<Vec<MarginalConstraint>> {
        Ok(vec![
            MarginalConstraint::new(self.age_gender.clone())?,
            MarginalConstraint::new(self.smoker_gender.clone())?,
            MarginalConstraint::new(self.region_table()?.clone())?,
        ])
    }

    /// N * P(age, gender) * P(smoker | gender).
    pub fn national_exposure(&self, total: f64) -> Result<ContingencyTable> {
        let dims = vec![self.dim(AGE)?, self.dim(GENDER)?, self.dim(SMOKER)?];
        let ag = self.age_gender.broadcast(&dims)?;
        let shares = self.smoker_shares()?.broadcast(&dims)?;
        ag.zip_with(&shares, TableKind::Count, |a, s| a * s * total)
    }
}

/// Fits the joint age x gender x smoker x region distribution (on the
/// probability scale) to the demographic marginals.
pub fn synthesize_population(
    demo: &Demography,
    config: &IpfConfig,
    method: IpfMethod,
) -> Result<IpfResult> {
    let seed = uniform_table(demo.joint_dims()?, 1.0)?;
    let constraints = demo.constraints()?;
    match method {
        IpfMethod::CrossTabulated => ipf_fit(&seed, &constraints, config),
        IpfMethod::Stratified => ipf_fit_stratified(&seed, GENDER, &constraints, config),
    }
}

fn scale(table: &ContingencyTable, factor: f64) -> Result<ContingencyTable> {
    table.with_values(table.values().iter().map(|v| v * factor).collect(), TableKind::Count)
}

fn read_rates(path: &Path, dims: &[&str]) -> Result<ContingencyTable> {
    let t = read_table(path, &ReadOptions::default())?;
    require_dims(&t, dims, path)?;
    if t.kind() != TableKind::Rate {
        return Err(Error::parse(path, 0, format!("expected a rate table, found {}", t.kind())));
    }
    Ok(t)
}

fn hazard_spec(cfg: &HazardConfig) -> Result<HazardRatioSpec> {
    let mut ratios = cfg.ratios.clone();
    ratios.entry(cfg.reference.clone()).or_insert(1.0);
    HazardRatioSpec::new(
        cfg.dimension.as_str(),
        cfg.reference.as_str(),
        HazardScope::Global(ratios),
    )
}

/// The published-share comparison for one cell under both IPF conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOutcome {
    pub labels: BTreeMap<String, String>,
    pub published_percent: f64,
    pub cross_tabulated_percent: f64,
    pub stratified_percent: f64,
    pub tolerance: f64,
}

/// Fitted insured-mortality transfer.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub model: GamModel,
    /// Predicted insured rates for the target, age x gender x smoker, with
    /// the target's national exposure.
    pub insured: RateTable,
    pub extrapolated: Vec<String>,
    pub training: Vec<TrainingRecord>,
    /// RMSE of log-rates when predicting the training records.
    pub self_transfer_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub scenario: u8,
    pub region_dimension: String,
    pub constraints: Vec<MarginalConstraint>,
    /// IPF result on the probability scale.
    pub ipf: IpfResult,
    /// Population counts over age x gender x smoker x region.
    pub population: ContingencyTable,
    /// Base rates as given, with the national exposure of their cells.
    pub base: RateTable,
    /// Base rates split by smoker status (scenarios 2 and 3).
    pub split: Option<RateTable>,
    pub transfer: Option<Transfer>,
    /// Rates over the full joint, with population exposure.
    pub rates: RateTable,
    pub expected_deaths: ContingencyTable,
    pub summary: SimulationSummary,
    /// Summary with draws summed over regions.
    pub aggregated: SimulationSummary,
    pub reference: Option<ReferenceOutcome>,
    pub report: ValidationReport,
}

struct Stage {
    demo: Demography,
    ipf: IpfResult,
    population: ContingencyTable,
}

fn population_stage(spec: &ScenarioSpec) -> Result<Stage> {
    let i = &spec.inputs;
    let demo = Demography::load(&i.gender, &i.age_gender, &i.smoker_gender, Some(&i.region))?;
    let ipf = synthesize_population(&demo, &spec.ipf, spec.ipf_method)?;
    let population = scale(&ipf.fitted, spec.population_total)?;
    Ok(Stage {
        demo,
        ipf,
        population,
    })
}

/// Splits age x gender base rates by smoker status, weighting with
/// P(smoker | gender) and exposing with the national population.
fn split_stage(
    demo: &Demography,
    base_rates: ContingencyTable,
    hazard: &HazardConfig,
    total: f64,
) -> Result<(RateTable, RateTable)> {
    let exposure = scale(&demo.age_gender, total)?;
    let base = RateTable::new(base_rates, exposure)?;
    let split = split_rates(&base, &demo.smoker_shares()?, &hazard_spec(hazard)?)?;
    Ok((base, split))
}

/// Scenario 1: regional disaggregation of age x gender x smoker rates.
pub fn run_scenario_1(spec: &ScenarioSpec) -> Result<ScenarioOutput> {
    let stage = population_stage(spec)?;
    let base_rates = read_rates(&spec.inputs.base_rates, &[AGE, GENDER, SMOKER])?;
    let base_exposure = stage.population.marginalize(&[AGE, GENDER, SMOKER])?;
    let base = RateTable::new(base_rates, base_exposure)?;
    finish(spec, stage, base, None, None)
}

/// Scenario 2: smoker split of age x gender rates, then as scenario 1.
pub fn run_scenario_2(spec: &ScenarioSpec) -> Result<ScenarioOutput> {
    let hazard = spec
        .hazard
        .as_ref()
        .ok_or_else(|| Error::Config("scenario 2 needs a [hazard] section".into()))?;
    let stage = population_stage(spec)?;
    let base_rates = read_rates(&spec.inputs.base_rates, &[AGE, GENDER])?;
    let (base, split) = split_stage(&stage.demo, base_rates, hazard, spec.population_total)?;
    finish(spec, stage, base, Some(split), None)
}

fn age_value(label: &str) -> Result<f64> {
    label
        .parse::<f64>()
        .map_err(|_| Error::InvalidSpec(format!("age level `{label}` is not numeric")))
}

fn training_records(insured: &ContingencyTable, population_split: &RateTable) -> Result<Vec<TrainingRecord>> {
    let pop = population_split.rates();
    if insured.dims() != pop.dims() {
        return Err(Error::ConstraintMismatch(
            "source insured and population rates have different cells".into(),
        ));
    }
    let ages = pop.dim_index(AGE)?;
    let genders = pop.dim_index(GENDER)?;
    let smokers = pop.dim_index(SMOKER)?;
    (0..pop.len())
        .map(|i| {
            let labels = pop.cell_labels(i);
            let e = population_split.exposure().values()[i];
            Ok(TrainingRecord {
                age: age_value(labels[ages])?,
                gender: labels[genders].to_string(),
                smoker: labels[smokers].to_string(),
                exposure: e,
                deaths: insured.values()[i] * e,
                population_deaths: pop.values()[i] * e,
            })
        })
        .collect()
}

fn target_records(population_split: &RateTable) -> Result<Vec<TargetRecord>> {
    let pop = population_split.rates();
    let ages = pop.dim_index(AGE)?;
    let genders = pop.dim_index(GENDER)?;
    let smokers = pop.dim_index(SMOKER)?;
    (0..pop.len())
        .map(|i| {
            let labels = pop.cell_labels(i);
            let e = population_split.exposure().values()[i];
            Ok(TargetRecord {
                age: age_value(labels[ages])?,
                gender: labels[genders].to_string(),
                smoker: labels[smokers].to_string(),
                exposure: e,
                population_deaths: pop.values()[i] * e,
            })
        })
        .collect()
}

/// Root mean square of `ln(a) - ln(b)` over pairs where both are positive.
pub fn log_rmse(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln() - y.ln()).powi(2))
        .collect();
    if diffs.is_empty() {
        return f64::NAN;
    }
    (diffs.iter().sum::<f64>() / diffs.len() as f64).sqrt()
}

/// Fits the transfer model on source-country pairs.
pub fn fit_transfer_model(
    source: &SourcePaths,
    default_hazard: &HazardConfig,
    total: f64,
    gam: &GamSection,
) -> Result<(GamModel, Vec<TrainingRecord>)> {
    let demo = Demography::load(&source.gender, &source.age_gender, &source.smoker_gender, None)?;
    let insured = read_rates(&source.insured_rates, &[AGE, GENDER, SMOKER])?;
    let pop = read_rates(&source.population_rates, &[AGE, GENDER])?;
    let hazard = source.hazard.as_ref().unwrap_or(default_hazard);
    let (_, pop_split) = split_stage(&demo, pop, hazard, total)?;
    let records = training_records(&insured, &pop_split)?;
    let smooth = SmoothSpec {
        num_basis: gam.num_basis,
        ..SmoothSpec::default()
    };
    let layout = ModelLayout {
        age_smooth: Some(smooth),
        deaths_smooth: Some(smooth),
        ..ModelLayout::default()
    };
    let model = fit_gam(
        &records,
        &layout,
        &lambda_grid(&gam.lambda_values, 2),
        &PirlsConfig::default(),
    )?;
    Ok((model, records))
}

/// Scenario 3: general-population split for the target, then insured
/// rates inferred with a model trained on the source country.
pub fn run_scenario_3(spec: &ScenarioSpec) -> Result<ScenarioOutput> {
    let hazard = spec
        .hazard
        .as_ref()
        .ok_or_else(|| Error::Config("scenario 3 needs a [hazard] section".into()))?;
    let source = spec
        .source
        .as_ref()
        .ok_or_else(|| Error::Config("scenario 3 needs a [source] section".into()))?;
    let stage = population_stage(spec)?;
    let base_rates = read_rates(&spec.inputs.base_rates, &[AGE, GENDER])?;
    let (base, pop_split) = split_stage(&stage.demo, base_rates, hazard, spec.population_total)?;

    let (model, training) = fit_transfer_model(source, hazard, spec.population_total, &spec.gam)?;
    let own: Vec<TargetRecord> = training.iter().map(TargetRecord::from).collect();
    let own_pred = predict_insured_rates(&model, &own)?;
    let observed: Vec<f64> = training.iter().map(|r| r.deaths / r.exposure).collect();
    let self_transfer_rmse = log_rmse(&own_pred.rates, &observed);

    let targets = target_records(&pop_split)?;
    let pred = predict_insured_rates(&model, &targets)?;
    let extrapolated = pred
        .extrapolated
        .iter()
        .enumerate()
        .filter(|(_, e)| **e)
        .map(|(i, _)| pop_split.rates().describe_cell(i))
        .collect();
    let insured = RateTable::new(
        pop_split.rates().with_values(pred.rates, TableKind::Rate)?,
        pop_split.exposure().clone(),
    )?;
    let transfer = Transfer {
        model,
        insured,
        extrapolated,
        training,
        self_transfer_rmse,
    };
    finish(spec, stage, base, Some(pop_split), Some(transfer))
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioOutput> {
    match spec.id {
        1 => run_scenario_1(spec),
        2 => run_scenario_2(spec),
        3 => run_scenario_3(spec),
        n => Err(Error::Config(format!("unknown scenario {n}"))),
    }
}

fn finish(
    spec: &ScenarioSpec,
    stage: Stage,
    base: RateTable,
    split: Option<RateTable>,
    transfer: Option<Transfer>,
) -> Result<ScenarioOutput> {
    let Stage {
        demo,
        ipf,
        population,
    } = stage;
    let national = match (&transfer, &split) {
        (Some(t), _) => t.insured.rates(),
        (None, Some(s)) => s.rates(),
        (None, None) => base.rates(),
    };
    let rates = RateTable::new(national.broadcast(population.dims())?, population.clone())?;
    let expected_deaths = rates.expected_deaths();
    let region = demo.region_dimension()?.name().to_string();
    let (summary, aggregated) = simulate_with_aggregate(
        &expected_deaths,
        &population,
        &[AGE, GENDER, SMOKER],
        &spec.simulation,
    )?;
    let reference = match &spec.reference {
        Some(r) => Some(reference_outcome(spec, &demo, &ipf, r)?),
        None => None,
    };
    let constraints = demo.constraints()?;
    let mut output = ScenarioOutput {
        scenario: spec.id,
        region_dimension: region,
        constraints,
        ipf,
        population,
        base,
        split,
        transfer,
        rates,
        expected_deaths,
        summary,
        aggregated,
        reference,
        report: ValidationReport::default(),
    };
    let mut report = validate_input_files(spec)?;
    report.extend(validate_outputs(spec, &output)?);
    output.report = report;
    Ok(output)
}

fn cell_percent(table: &ContingencyTable, labels: &BTreeMap<String, String>) -> Result<f64> {
    let pairs: Vec<(&str, &str)> = labels.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    Ok(100.0 * table.get(&pairs)? / table.total())
}

fn reference_outcome(
    spec: &ScenarioSpec,
    demo: &Demography,
    fitted: &IpfResult,
    r: &ReferenceCell,
) -> Result<ReferenceOutcome> {
    let other_method = match spec.ipf_method {
        IpfMethod::CrossTabulated => IpfMethod::Stratified,
        IpfMethod::Stratified => IpfMethod::CrossTabulated,
    };
    let other = synthesize_population(demo, &spec.ipf, other_method)?;
    let here = cell_percent(&fitted.fitted, &r.labels)?;
    let there = cell_percent(&other.fitted, &r.labels)?;
    let (cross, strat) = match spec.ipf_method {
        IpfMethod::CrossTabulated => (here, there),
        IpfMethod::Stratified => (there, here),
    };
    Ok(ReferenceOutcome {
        labels: r.labels.clone(),
        published_percent: r.percent,
        cross_tabulated_percent: cross,
        stratified_percent: strat,
        tolerance: r.tolerance,
    })
}

/// Prevalence sums of the raw distribution files, before any normalization.
pub fn validate_input_files(spec: &ScenarioSpec) -> Result<ValidationReport> {
    let mut files = vec![
        spec.inputs.gender.as_path(),
        spec.inputs.age_gender.as_path(),
        spec.inputs.smoker_gender.as_path(),
        spec.inputs.region.as_path(),
    ];
    if let Some(s) = &spec.source {
        files.extend([s.gender.as_path(), s.age_gender.as_path(), s.smoker_gender.as_path()]);
    }
    let mut worst: f64 = 0.0;
    let mut worst_tol: f64 = crate::table::PROBABILITY_TOTAL_TOL;
    let mut offending = Vec::new();
    for path in files {
        let raw = read_raw_table(path)?;
        if raw.meta.kind()? != TableKind::Probability {
            continue;
        }
        let counts = raw.as_counts()?;
        let expected = raw.meta.declared_total.unwrap_or(1.0);
        let sums = if raw.meta.conditional_on.is_empty() {
            vec![("total".to_string(), counts.total())]
        } else {
            let keep: Vec<&str> = raw.meta.conditional_on.iter().map(String::as_str).collect();
            let m = counts.marginalize(&keep)?;
            (0..m.len()).map(|i| (m.describe_cell(i), m.values()[i])).collect()
        };
        let tol = if raw.meta.normalize {
            raw.meta.rounding_tolerance * expected
        } else {
            crate::table::PROBABILITY_TOTAL_TOL * expected.max(1.0)
        };
        for (cell, s) in sums {
            let dev = (s - expected).abs();
            if dev > worst {
                worst = dev;
                worst_tol = tol;
            }
            if dev > tol {
                offending.push(format!("{}: {cell} sums to {s}", path.display()));
            }
        }
    }
    let mut report = ValidationReport::default();
    report.push(Check::measured(
        "prevalence-sum",
        worst,
        worst_tol,
        "shares of every distribution (per conditioning slice) sum to one within the file's rounding tolerance",
        offending,
    ));
    Ok(report)
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares two levels of `dim` cell by cell over the remaining dimensions:
/// returns cells where `high` is not strictly above `low`.
fn ordering_violations(rates: &ContingencyTable, dim: &str, high: &str, low: &str) -> Result<Vec<String>> {
    let hi = rates.slice(dim, high)?;
    let lo = rates.slice(dim, low)?;
    Ok((0..hi.len())
        .filter(|&i| hi.values()[i] <= lo.values()[i])
        .map(|i| format!("{} ({} vs {})", hi.describe_cell(i), hi.values()[i], lo.values()[i]))
        .collect())
}

fn ci_violations(summary: &SimulationSummary, label: &str) -> Vec<String> {
    let mut bad = Vec::new();
    for (i, c) in summary.cells.iter().enumerate() {
        let ok_bounds = c.bounds.iter().all(|(lo, hi)| lo <= hi);
        let ok_rates = c.rate_bounds.iter().flatten().all(|(lo, hi)| lo <= hi);
        if !(ok_bounds && ok_rates) {
            bad.push(format!("{label} cell {i}: {:?}", c.bounds));
        }
    }
    bad
}

/// The named checks over a finished run.
pub fn validate_outputs(spec: &ScenarioSpec, out: &ScenarioOutput) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();

    let dev = max_marginal_deviation(&out.ipf.fitted, &out.constraints)?;
    report.push(Check::measured(
        "marginal-consistency",
        dev,
        spec.ipf.tolerance,
        format!(
            "max |fitted marginal - target| on the probability scale after {} iterations (converged: {})",
            out.ipf.iterations_used, out.ipf.converged
        ),
        vec![],
    ));

    // rate bounds over every rate table produced
    let mut bad = Vec::new();
    let mut tables: Vec<(&str, &ContingencyTable)> = vec![("base", out.base.rates()), ("output", out.rates.rates())];
    if let Some(s) = &out.split {
        tables.push(("split", s.rates()));
    }
    if let Some(t) = &out.transfer {
        tables.push(("insured", t.insured.rates()));
    }
    let mut worst: f64 = 0.0;
    for (name, t) in &tables {
        for (i, &v) in t.values().iter().enumerate() {
            let excess = if v < 0.0 { -v } else { (v - 1.0).max(0.0) };
            worst = worst.max(excess);
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} {} = {v}", t.describe_cell(i)));
            }
        }
    }
    report.push(Check::measured("rate-bounds", worst, 0.0, "every rate lies in [0, 1]", bad));

    // aggregating over regions reproduces the national rates
    let keep = [AGE, GENDER, SMOKER];
    let agg_deaths = out.expected_deaths.marginalize(&keep)?;
    let agg_pop = out.population.marginalize(&keep)?;
    let national = out.rates.rates().slice(&out.region_dimension, &out.region_levels()[0])?;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for i in 0..agg_deaths.len() {
        if agg_pop.values()[i] <= 0.0 {
            continue;
        }
        let r = agg_deaths.values()[i] / agg_pop.values()[i];
        let d = relative(r, national.values()[i]);
        worst = worst.max(d);
        if d > IDENTITY_TOL {
            bad.push(agg_deaths.describe_cell(i));
        }
    }
    report.push(Check::measured(
        "region-aggregation-identity",
        worst,
        IDENTITY_TOL,
        "deaths / population summed over regions equal the national rates (relative)",
        bad,
    ));

    // deaths before and after disaggregation
    let (before, after, detail) = match &out.split {
        Some(split) if out.transfer.is_none() => (
            out.base.expected_deaths().total(),
            split.expected_deaths().total(),
            "total expected deaths of the base table and of the smoker split (relative)",
        ),
        _ => {
            let national = match &out.transfer {
                Some(t) => t.insured.rates().clone(),
                None => out.base.rates().clone(),
            };
            let nat = RateTable::new(national, agg_pop.clone())?;
            (
                nat.expected_deaths().total(),
                out.expected_deaths.total(),
                "total expected deaths of the national table and of the regional table (relative)",
            )
        }
    };
    let d = relative(before, after);
    report.push(Check::measured("death-conservation", d, IDENTITY_TOL, detail, vec![]));

    if let (Some(split), Some(h)) = (&out.split, &spec.hazard) {
        let rates = split.rates();
        let reference = rates.slice(&h.dimension, &h.reference)?;
        let mut worst: f64 = 0.0;
        let mut bad = Vec::new();
        for (level, ratio) in &h.ratios {
            if *level == h.reference {
                continue;
            }
            let other = rates.slice(&h.dimension, level)?;
            for i in 0..other.len() {
                if reference.values()[i] == 0.0 {
                    continue;
                }
                let d = (other.values()[i] / reference.values()[i] - ratio).abs();
                worst = worst.max(d);
                if d > RATIO_TOL {
                    bad.push(format!("{level} {}", other.describe_cell(i)));
                }
            }
        }
        report.push(Check::measured(
            "hazard-ratio-fidelity",
            worst,
            RATIO_TOL,
            "split rate ratios against the configured hazard ratios (absolute)",
            bad,
        ));
    }

    let mut bad = ci_violations(&out.summary, "joint");
    bad.extend(ci_violations(&out.aggregated, "aggregated"));
    report.push(Check::measured(
        "ci-ordering",
        if bad.is_empty() { 0.0 } else { 1.0 },
        0.0,
        "lower bound <= upper bound for every interval",
        bad,
    ));

    let rates = out.rates.rates();
    let smoker_bad = ordering_violations(rates, SMOKER, "yes", "no")?;
    report.push(Check::measured(
        "smoker-above-non-smoker",
        smoker_bad.len() as f64,
        0.0,
        "smoker rate above non-smoker rate in every output cell",
        smoker_bad,
    ));
    let gender_bad = ordering_violations(rates, GENDER, "M", "F")?;
    report.push(Check::measured(
        "male-above-female",
        gender_bad.len() as f64,
        0.0,
        "male rate above female rate in every output cell",
        gender_bad,
    ));

    if let Some(r) = &out.reference {
        let disc = r.cross_tabulated_percent - r.published_percent;
        let detail = format!(
            "cell {:?}: published {}%, cross-tabulated IPF {}%, stratified IPF {}%; discrepancy {:+.3e} points ({:+.2}%)",
            r.labels,
            r.published_percent,
            r.cross_tabulated_percent,
            r.stratified_percent,
            disc,
            100.0 * disc / r.published_percent
        );
        if disc.abs() <= r.tolerance {
            report.push(Check::measured("reference-cell", disc.abs(), r.tolerance, detail, vec![]));
        } else {
            report.push(Check::recorded("reference-cell", disc, detail));
        }
    }

    if let Some((small, large, wider, total)) = region_width_comparison(out)? {
        report.push(Check::recorded(
            "region-ci-width",
            wider as f64 / total as f64,
            format!(
                "relative CI width in the smallest region `{small}` exceeds the largest region `{large}` in {wider} of {total} cells"
            ),
        ));
    }

    if let Some(t) = &out.transfer {
        report.push(Check::measured(
            "self-transfer-consistency",
            t.self_transfer_rmse,
            SELF_TRANSFER_TOL,
            "RMSE of log insured rates when the model predicts its training cells",
            vec![],
        ));
        report.push(Check::measured(
            "transfer-converged",
            if t.model.converged { 0.0 } else { 1.0 },
            0.0,
            format!("P-IRLS converged in {} iterations, lambdas {:?}", t.model.iterations, t.model.lambdas),
            vec![],
        ));
        let split = out.split.as_ref().expect("scenario 3 has a population split");
        let ins = t.insured.rates().slice(SMOKER, "no")?;
        let pop = split.rates().slice(SMOKER, "no")?;
        let bad: Vec<String> = (0..ins.len())
            .filter(|&i| ins.values()[i] >= pop.values()[i])
            .map(|i| ins.describe_cell(i))
            .collect();
        report.push(Check::measured(
            "insured-below-population-non-smokers",
            bad.len() as f64,
            0.0,
            "predicted insured non-smoker rates below general-population non-smoker rates",
            bad,
        ));
    }
    Ok(report)
}

/// For the smallest and largest region: how many age x gender x smoker
/// cells have a strictly wider relative CI in the small region.
pub fn region_width_comparison(out: &ScenarioOutput) -> Result<Option<(String, String, usize, usize)>> {
    let region = out.population.marginalize(&[out.region_dimension.as_str()])?;
    if region.len() < 2 {
        return Ok(None);
    }
    let (mut small, mut large) = (0, 0);
    for (i, &v) in region.values().iter().enumerate() {
        if v < region.values()[small] {
            small = i;
        }
        if v > region.values()[large] {
            large = i;
        }
    }
    let levels = region.dims()[0].levels();
    let (s, l) = (&levels[small], &levels[large]);
    let (wider, total) = compare_region_widths(out, s, l)?;
    Ok(Some((s.clone(), l.clone(), wider, total)))
}

/// Number of cells where `small`'s relative CI width is strictly larger than
/// `large`'s, out of all age x gender x smoker cells.
pub fn compare_region_widths(out: &ScenarioOutput, small: &str, large: &str) -> Result<(usize, usize)> {
    let widths = out.relative_widths()?;
    let a = widths.slice(&out.region_dimension, small)?;
    let b = widths.slice(&out.region_dimension, large)?;
    let wider = a.values().iter().zip(b.values()).filter(|(x, y)| x > y).count();
    Ok((wider, a.len()))
}

impl ScenarioOutput {
    pub fn region_levels(&self) -> Vec<String> {
        self.population
            .dim(&self.region_dimension)
            .map(|d| d.levels().to_vec())
            .unwrap_or_default()
    }

    /// Relative width of the first CI level per joint cell (zero where the
    /// mean is zero).
    pub fn relative_widths(&self) -> Result<ContingencyTable> {
        let values = self
            .summary
            .cells
            .iter()
            .map(|c| c.relative_width().unwrap_or(0.0))
            .collect();
        self.population.with_values(values, TableKind::Count)
    }
}

/// Input checks, then (when they pass) a full run with output checks.
pub fn validate(spec: &ScenarioSpec) -> Result<ValidationReport> {
    let report = validate_input_files(spec)?;
    if !report.passed() {
        return Ok(report);
    }
    Ok(run_scenario(spec)?.report)
}
