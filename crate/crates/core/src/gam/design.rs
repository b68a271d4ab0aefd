use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::basis::{quantile_knots, SmoothBasis, SmoothSpec};

/// One demographic subgroup of the source population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub age: f64,
    pub gender: String,
    pub smoker: String,
    /// Person-years at risk, > 0.
    pub exposure: f64,
    /// Insured deaths. Expected (non-integer) counts are accepted; the
    /// Poisson deviance is defined for any nonnegative response.
    pub deaths: f64,
    /// General-population deaths in the same subgroup.
    pub population_deaths: f64,
}

/// A subgroup of the target population, where insured deaths are unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub age: f64,
    pub gender: String,
    pub smoker: String,
    pub exposure: f64,
    pub population_deaths: f64,
}

impl From<&TrainingRecord> for TargetRecord {
    fn from(r: &TrainingRecord) -> Self {
        Self {
            age: r.age,
            gender: r.gender.clone(),
            smoker: r.smoker.clone(),
            exposure: r.exposure,
            population_deaths: r.population_deaths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStructure {
    /// No gender or smoker terms; a single deaths smooth.
    None,
    /// Gender and smoker main effects with a single deaths smooth.
    Additive,
    /// One deaths smooth per gender-smoker combination plus a level effect
    /// for each combination.
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub age_smooth: Option<SmoothSpec>,
    pub deaths_smooth: Option<SmoothSpec>,
    pub groups: GroupStructure,
}

impl Default for ModelLayout {
    fn default() -> Self {
        Self {
            age_smooth: Some(SmoothSpec::default()),
            deaths_smooth: Some(SmoothSpec::default()),
            groups: GroupStructure::Interaction,
        }
    }
}

/// Population deaths enter the smooth on the log scale.
pub fn deaths_covariate(population_deaths: f64) -> f64 {
    population_deaths.ln_1p()
}

/// A penalized block of consecutive columns, scaled by `lambdas[lambda_index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub start: usize,
    pub matrix: DMatrix<f64>,
    pub lambda_index: usize,
}

impl PenaltyBlock {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Which term a smooth belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothTerm {
    Age,
    /// Deaths smooth for one gender-smoker combination, or for all rows.
    Deaths { group: Option<(String, String)> },
}

/// Column structure shared by fitting and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub layout: ModelLayout,
    pub genders: Vec<String>,
    pub smokers: Vec<String>,
    /// Smooths in column order, each with its first column.
    pub smooths: Vec<(SmoothTerm, usize, SmoothBasis)>,
    pub level_columns: Vec<(String, usize)>,
    pub num_columns: usize,
    pub age_range: (f64, f64),
    pub deaths_range: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct Design {
    pub spec: DesignSpec,
    pub x: DMatrix<f64>,
    pub offset: Vec<f64>,
    pub counts: Vec<f64>,
    pub penalties: Vec<PenaltyBlock>,
}

fn sorted_levels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = labels.map(str::to_string).collect();
    v.sort();
    v.dedup();
    v
}

fn validate_record(i: usize, age: f64, exposure: f64, pop_deaths: f64) -> Result<()> {
    if !(exposure.is_finite() && exposure > 0.0) {
        return Err(Error::InvalidSpec(format!("record {i}: exposure must be > 0, got {exposure}")));
    }
    if !age.is_finite() {
        return Err(Error::InvalidSpec(format!("record {i}: age is not finite")));
    }
    if !(pop_deaths.is_finite() && pop_deaths >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "record {i}: population deaths must be >= 0, got {pop_deaths}"
        )));
    }
    Ok(())
}

impl DesignSpec {
    fn group_index(&self, gender: &str, smoker: &str) -> Result<(usize, usize)> {
        let g = self.genders.iter().position(|l| l == gender).ok_or_else(|| Error::UnknownLevel {
            dimension: "gender".into(),
            level: gender.into(),
        })?;
        let s = self.smokers.iter().position(|l| l == smoker).ok_or_else(|| Error::UnknownLevel {
            dimension: "smoker".into(),
            level: smoker.into(),
        })?;
        Ok((g, s))
    }

    /// One design row (without offset) for a subgroup.
    pub fn row(&self, age: f64, gender: &str, smoker: &str, population_deaths: f64) -> Result<Vec<f64>> {
        let (g, s) = self.group_index(gender, smoker)?;
        let mut row = vec![0.0; self.num_columns];
        row[0] = 1.0;
        let dx = deaths_covariate(population_deaths);
        for (term, start, basis) in &self.smooths {
            let values = match term {
                SmoothTerm::Age => basis.row(age),
                SmoothTerm::Deaths { group: None } => basis.row(dx),
                SmoothTerm::Deaths { group: Some((tg, ts)) } => {
                    if *tg == self.genders[g] && *ts == self.smokers[s] {
                        basis.row(dx)
                    } else {
                        continue;
                    }
                }
            };
            row[*start..*start + values.len()].copy_from_slice(&values);
        }
        for (name, col) in &self.level_columns {
            let on = match self.layout.groups {
                GroupStructure::Interaction => *name == format!("{}:{}", self.genders[g], self.smokers[s]),
                GroupStructure::Additive => {
                    *name == format!("gender:{}", self.genders[g])
                        || *name == format!("smoker:{}", self.smokers[s])
                }
                GroupStructure::None => false,
            };
            if on {
                row[*col] = 1.0;
            }
        }
        Ok(row)
    }

    pub fn is_extrapolation(&self, age: f64, population_deaths: f64) -> bool {
        let dx = deaths_covariate(population_deaths);
        let outside = |x: f64, (lo, hi): (f64, f64)| x < lo || x > hi;
        (self.layout.age_smooth.is_some() && outside(age, self.age_range))
            || (self.layout.deaths_smooth.is_some() && outside(dx, self.deaths_range))
    }

    pub fn penalties(&self) -> Vec<PenaltyBlock> {
        self.smooths
            .iter()
            .map(|(term, start, basis)| PenaltyBlock {
                start: *start,
                matrix: basis.penalty(),
                lambda_index: match term {
                    SmoothTerm::Age => 0,
                    SmoothTerm::Deaths { .. } => usize::from(self.layout.age_smooth.is_some()),
                },
            })
            .collect()
    }

    pub fn num_smoothing_parameters(&self) -> usize {
        usize::from(self.layout.age_smooth.is_some()) + usize::from(self.layout.deaths_smooth.is_some())
    }
}

/// Design matrix, penalty blocks and log-exposure offset for `records`.
///
/// Columns: intercept, age smooth, deaths smooth(s), then gender/smoker
/// level effects with the first level of each factor as reference.
pub fn build_design(records: &[TrainingRecord], layout: &ModelLayout) -> Result<Design> {
    if records.is_empty() {
        return Err(Error::InvalidSpec("no training records".into()));
    }
    for (i, r) in records.iter().enumerate() {
        validate_record(i, r.age, r.exposure, r.population_deaths)?;
        if !(r.deaths.is_finite() && r.deaths >= 0.0) {
            return Err(Error::InvalidSpec(format!("record {i}: deaths must be >= 0")));
        }
        if r.deaths > r.exposure {
            return Err(Error::InvalidSpec(format!("record {i}: deaths exceed exposure")));
        }
    }
    let genders = sorted_levels(records.iter().map(|r| r.gender.as_str()));
    let smokers = sorted_levels(records.iter().map(|r| r.smoker.as_str()));
    let ages: Vec<f64> = records.iter().map(|r| r.age).collect();
    let dxs: Vec<f64> = records.iter().map(|r| deaths_covariate(r.population_deaths)).collect();
    let range = |xs: &[f64]| {
        xs.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };

    let mut smooths = Vec::new();
    let mut col = 1;
    if let Some(spec) = layout.age_smooth {
        let knots = quantile_knots("age", &ages, &spec)?;
        let basis = SmoothBasis::fit("age", spec, knots, &ages, None)?;
        smooths.push((SmoothTerm::Age, col, basis));
        col += spec.num_basis;
    }
    if let Some(spec) = layout.deaths_smooth {
        let knots = quantile_knots("population_deaths", &dxs, &spec)?;
        match layout.groups {
            GroupStructure::Interaction => {
                for g in &genders {
                    for s in &smokers {
                        let rows: Vec<bool> =
                            records.iter().map(|r| r.gender == *g && r.smoker == *s).collect();
                        let basis = SmoothBasis::fit(
                            format!("population_deaths:{g}:{s}"),
                            spec,
                            knots.clone(),
                            &dxs,
                            Some(&rows),
                        )?;
                        smooths.push((
                            SmoothTerm::Deaths {
                                group: Some((g.clone(), s.clone())),
                            },
                            col,
                            basis,
                        ));
                        col += spec.num_basis;
                    }
                }
            }
            GroupStructure::Additive | GroupStructure::None => {
                let basis = SmoothBasis::fit("population_deaths", spec, knots, &dxs, None)?;
                smooths.push((SmoothTerm::Deaths { group: None }, col, basis));
                col += spec.num_basis;
            }
        }
    }
    let mut level_columns = Vec::new();
    match layout.groups {
        GroupStructure::Interaction => {
            let mut first = true;
            for g in &genders {
                for s in &smokers {
                    if first {
                        first = false;
                        continue;
                    }
                    level_columns.push((format!("{g}:{s}"), col));
                    col += 1;
                }
            }
        }
        GroupStructure::Additive => {
            for g in genders.iter().skip(1) {
                level_columns.push((format!("gender:{g}"), col));
                col += 1;
            }
            for s in smokers.iter().skip(1) {
                level_columns.push((format!("smoker:{s}"), col));
                col += 1;
            }
        }
        GroupStructure::None => {}
    }

    let spec = DesignSpec {
        layout: *layout,
        genders,
        smokers,
        smooths,
        level_columns,
        num_columns: col,
        age_range: range(&ages),
        deaths_range: range(&dxs),
    };
    let mut x = DMatrix::<f64>::zeros(records.len(), col);
    for (i, r) in records.iter().enumerate() {
        let row = spec.row(r.age, &r.gender, &r.smoker, r.population_deaths)?;
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let offset = records.iter().map(|r| r.exposure.ln()).collect();
    let counts = records.iter().map(|r| r.deaths).collect();
    let penalties = spec.penalties();
    Ok(Design {
        spec,
        x,
        offset,
        counts,
        penalties,
    })
}

/// Design rows for target records, with extrapolation flags.
pub fn target_rows(spec: &DesignSpec, records: &[TargetRecord]) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let mut x = DMatrix::<f64>::zeros(records.len(), spec.num_columns);
    let mut flags = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        validate_record(i, r.age, r.exposure, r.population_deaths)?;
        let row = spec.row(r.age, &r.gender, &r.smoker, r.population_deaths)?;
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        flags.push(spec.is_extrapolation(r.age, r.population_deaths));
    }
    Ok((x, flags))
}
