use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::basis::{SmoothBasis, SmoothSpec};
use crate::gam::design::{build_design, target_rows, DesignSpec, GroupStructure, ModelLayout, SmoothTerm, TargetRecord, TrainingRecord};
use crate::gam::pirls::PirlsConfig;
use crate::gam::select::select_smoothing;

const FORMAT_HEADER: &str = "mortsynth-gam 1";

/// A fitted transfer model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GamModel {
    pub spec: DesignSpec,
    pub coefficients: Vec<f64>,
    /// Age smoothing parameter first (when present), then deaths.
    pub lambdas: Vec<f64>,
    pub deviance: f64,
    pub edf: f64,
    pub converged: bool,
    pub iterations: usize,
    pub num_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub rates: Vec<f64>,
    pub deaths: Vec<f64>,
    /// Covariates outside the training range; the smooths are held at their
    /// boundary value there.
    pub extrapolated: Vec<bool>,
}

/// Builds the design, selects smoothing parameters over `grid` by GCV and
/// returns the winning fit.
pub fn fit_gam(
    records: &[TrainingRecord],
    layout: &ModelLayout,
    grid: &[Vec<f64>],
    config: &PirlsConfig,
) -> Result<GamModel> {
    let design = build_design(records, layout)?;
    let k = design.spec.num_smoothing_parameters();
    if let Some(bad) = grid.iter().find(|l| l.len() != k) {
        return Err(Error::InvalidSpec(format!(
            "model has {k} smoothing parameters but grid point has {}",
            bad.len()
        )));
    }
    let selection = select_smoothing(&design, grid, config)?;
    let fit = selection.fit;
    Ok(GamModel {
        spec: design.spec,
        coefficients: fit.coefficients,
        lambdas: fit.lambdas,
        deviance: fit.deviance,
        edf: fit.edf,
        converged: fit.converged,
        iterations: fit.iterations,
        num_records: records.len(),
    })
}

/// Insured rates `exp(x'beta)` for each target; predicted deaths are rate
/// times exposure.
pub fn predict_insured_rates(model: &GamModel, records: &[TargetRecord]) -> Result<Prediction> {
    let (x, extrapolated) = target_rows(&model.spec, records)?;
    let eta = x * DVector::from_column_slice(&model.coefficients);
    let rates: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let deaths = rates.iter().zip(records).map(|(r, t)| r * t.exposure).collect();
    Ok(Prediction {
        rates,
        deaths,
        extrapolated,
    })
}

fn spec_token(s: &Option<SmoothSpec>) -> String {
    match s {
        Some(s) => format!("{},{},{}", s.num_basis, s.degree, s.penalty_order),
        None => "none".into(),
    }
}

fn parse_spec_token(tok: &str) -> Result<Option<SmoothSpec>> {
    if tok == "none" {
        return Ok(None);
    }
    let parts: Vec<usize> = tok
        .split(',')
        .map(|p| p.parse().map_err(|_| bad(format!("bad smooth spec `{tok}`"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [num_basis, degree, penalty_order] => Ok(Some(SmoothSpec {
            num_basis,
            degree,
            penalty_order,
        })),
        _ => Err(bad(format!("bad smooth spec `{tok}`"))),
    }
}

fn groups_token(g: GroupStructure) -> &'static str {
    match g {
        GroupStructure::None => "none",
        GroupStructure::Additive => "additive",
        GroupStructure::Interaction => "interaction",
    }
}

fn bad(msg: String) -> Error {
    Error::Config(format!("model file: {msg}"))
}

fn floats(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats<'a>(toks: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    toks.map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}`"))))
        .collect()
}

fn check_label(l: &str) -> Result<()> {
    if l.is_empty() || l.chars().any(char::is_whitespace) {
        return Err(Error::InvalidSpec(format!(
            "level `{l}` cannot be written to a model file"
        )));
    }
    Ok(())
}

impl GamModel {
    /// Plain-text export. One keyword per line followed by whitespace
    /// separated values; floats use the shortest representation that
    /// parses back to the same bits.
    pub fn to_text(&self) -> Result<String> {
        for l in self.spec.genders.iter().chain(&self.spec.smokers) {
            check_label(l)?;
        }
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(
            out,
            "layout {} {} {}",
            spec_token(&s.layout.age_smooth),
            spec_token(&s.layout.deaths_smooth),
            groups_token(s.layout.groups)
        );
        let _ = writeln!(out, "genders {}", s.genders.join(" "));
        let _ = writeln!(out, "smokers {}", s.smokers.join(" "));
        let _ = writeln!(out, "age_range {}", floats(&[s.age_range.0, s.age_range.1]));
        let _ = writeln!(out, "deaths_range {}", floats(&[s.deaths_range.0, s.deaths_range.1]));
        let _ = writeln!(out, "columns {}", s.num_columns);
        for (term, start, basis) in &s.smooths {
            let term = match term {
                SmoothTerm::Age => "age * *".to_string(),
                SmoothTerm::Deaths { group: None } => "deaths * *".to_string(),
                SmoothTerm::Deaths { group: Some((g, k)) } => format!("deaths {g} {k}"),
            };
            let _ = writeln!(out, "smooth {term} {start}");
            let _ = writeln!(out, "knots {}", floats(&basis.knots));
            let _ = writeln!(out, "constraint {}", floats(&basis.constraint));
        }
        for (name, col) in &s.level_columns {
            let _ = writeln!(out, "level {name} {col}");
        }
        let _ = writeln!(out, "lambdas {}", floats(&self.lambdas));
        let _ = writeln!(out, "deviance {:?}", self.deviance);
        let _ = writeln!(out, "edf {:?}", self.edf);
        let _ = writeln!(out, "converged {}", self.converged);
        let _ = writeln!(out, "iterations {}", self.iterations);
        let _ = writeln!(out, "records {}", self.num_records);
        let _ = writeln!(out, "coefficients {}", floats(&self.coefficients));
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(FORMAT_HEADER) {
            return Err(bad(format!("missing `{FORMAT_HEADER}` header")));
        }
        let mut layout = None;
        let mut genders = Vec::new();
        let mut smokers = Vec::new();
        let mut age_range = (0.0, 0.0);
        let mut deaths_range = (0.0, 0.0);
        let mut num_columns = 0;
        let mut smooths = Vec::new();
        let mut pending: Option<(SmoothTerm, usize, Option<Vec<f64>>)> = None;
        let mut level_columns = Vec::new();
        let mut lambdas = Vec::new();
        let mut deviance = 0.0;
        let mut edf = 0.0;
        let mut converged = false;
        let mut iterations = 0;
        let mut num_records = 0;
        let mut coefficients = Vec::new();

        let pair = |v: Vec<f64>| -> Result<(f64, f64)> {
            match v[..] {
                [a, b] => Ok((a, b)),
                _ => Err(bad("range needs two values".into())),
            }
        };
        let int = |t: Option<&str>| -> Result<usize> {
            t.and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("expected an integer".into()))
        };
        for line in lines {
            let mut toks = line.split_whitespace();
            let key = toks.next().unwrap_or_default();
            match key {
                "layout" => {
                    let t: Vec<&str> = toks.collect();
                    if t.len() != 3 {
                        return Err(bad("layout needs three fields".into()));
                    }
                    let groups = match t[2] {
                        "none" => GroupStructure::None,
                        "additive" => GroupStructure::Additive,
                        "interaction" => GroupStructure::Interaction,
                        g => return Err(bad(format!("unknown group structure `{g}`"))),
                    };
                    layout = Some(ModelLayout {
                        age_smooth: parse_spec_token(t[0])?,
                        deaths_smooth: parse_spec_token(t[1])?,
                        groups,
                    });
                }
                "genders" => genders = toks.map(str::to_string).collect(),
                "smokers" => smokers = toks.map(str::to_string).collect(),
                "age_range" => age_range = pair(parse_floats(toks)?)?,
                "deaths_range" => deaths_range = pair(parse_floats(toks)?)?,
                "columns" => num_columns = int(toks.next())?,
                "smooth" => {
                    let t: Vec<&str> = toks.collect();
                    if t.len() != 4 {
                        return Err(bad("smooth needs four fields".into()));
                    }
                    let term = match (t[0], t[1], t[2]) {
                        ("age", "*", "*") => SmoothTerm::Age,
                        ("deaths", "*", "*") => SmoothTerm::Deaths { group: None },
                        ("deaths", g, k) => SmoothTerm::Deaths {
                            group: Some((g.to_string(), k.to_string())),
                        },
                        _ => return Err(bad(format!("unknown smooth term `{line}`"))),
                    };
                    pending = Some((term, int(Some(t[3]))?, None));
                }
                "knots" => match pending.as_mut() {
                    Some((_, _, knots @ None)) => *knots = Some(parse_floats(toks)?),
                    _ => return Err(bad("`knots` without `smooth`".into())),
                },
                "constraint" => {
                    let Some((term, start, Some(knots))) = pending.take() else {
                        return Err(bad("`constraint` without `smooth` and `knots`".into()));
                    };
                    let lay = layout.ok_or_else(|| bad("`layout` must come first".into()))?;
                    let spec = match term {
                        SmoothTerm::Age => lay.age_smooth,
                        SmoothTerm::Deaths { .. } => lay.deaths_smooth,
                    }
                    .ok_or_else(|| bad("smooth not declared in layout".into()))?;
                    let label = match &term {
                        SmoothTerm::Age => "age".to_string(),
                        SmoothTerm::Deaths { group: None } => "population_deaths".to_string(),
                        SmoothTerm::Deaths { group: Some((g, k)) } => format!("population_deaths:{g}:{k}"),
                    };
                    let basis = SmoothBasis::from_parts(label, spec, knots, parse_floats(toks)?)?;
                    smooths.push((term, start, basis));
                }
                "level" => {
                    let name = toks.next().ok_or_else(|| bad("level needs a name".into()))?;
                    level_columns.push((name.to_string(), int(toks.next())?));
                }
                "lambdas" => lambdas = parse_floats(toks)?,
                "deviance" => deviance = parse_floats(toks)?.first().copied().unwrap_or(f64::NAN),
                "edf" => edf = parse_floats(toks)?.first().copied().unwrap_or(f64::NAN),
                "converged" => converged = toks.next() == Some("true"),
                "iterations" => iterations = int(toks.next())?,
                "records" => num_records = int(toks.next())?,
                "coefficients" => coefficients = parse_floats(toks)?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let layout = layout.ok_or_else(|| bad("missing layout".into()))?;
        if coefficients.len() != num_columns || num_columns == 0 {
            return Err(bad(format!(
                "{} coefficients for {num_columns} columns",
                coefficients.len()
            )));
        }
        for (_, start, b) in &smooths {
            if start + b.num_columns() > num_columns {
                return Err(bad("smooth columns out of range".into()));
            }
        }
        if level_columns.iter().any(|(_, c)| *c >= num_columns) {
            return Err(bad("level column out of range".into()));
        }
        Ok(Self {
            spec: DesignSpec {
                layout,
                genders,
                smokers,
                smooths,
                level_columns,
                num_columns,
                age_range,
                deaths_range,
            },
            coefficients,
            lambdas,
            deviance,
            edf,
            converged,
            iterations,
            num_records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<TrainingRecord> {
        let mut out = Vec::new();
        for (g, gm) in [("F", 0.0), ("M", 0.3)] {
            for (s, sm) in [("no", 0.0), ("yes", 0.5)] {
                for a in 20..80 {
                    let age = a as f64;
                    let pop = (-9.0 + 0.085 * age + gm + sm).exp() * 10_000.0;
                    let e = 8000.0;
                    out.push(TrainingRecord {
                        age,
                        gender: g.into(),
                        smoker: s.into(),
                        exposure: e,
                        deaths: (0.8 * pop / 10_000.0 * e).round(),
                        population_deaths: pop,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn export_round_trips_bitwise() {
        let m = fit_gam(&records(), &ModelLayout::default(), &[vec![1.0, 10.0]], &PirlsConfig::default()).unwrap();
        let text = m.to_text().unwrap();
        let back = GamModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text().unwrap(), text);
        let targets: Vec<TargetRecord> = records().iter().map(TargetRecord::from).collect();
        let p1 = predict_insured_rates(&m, &targets).unwrap();
        let p2 = predict_insured_rates(&back, &targets).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn doubling_exposure_doubles_deaths_only() {
        let m = fit_gam(&records(), &ModelLayout::default(), &[vec![1.0, 1.0]], &PirlsConfig::default()).unwrap();
        let t: Vec<TargetRecord> = records().iter().map(TargetRecord::from).collect();
        let t2: Vec<TargetRecord> = t
            .iter()
            .cloned()
            .map(|mut r| {
                r.exposure *= 2.0;
                r
            })
            .collect();
        let a = predict_insured_rates(&m, &t).unwrap();
        let b = predict_insured_rates(&m, &t2).unwrap();
        assert_eq!(a.rates, b.rates);
        for (x, y) in a.deaths.iter().zip(&b.deaths) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y);
        }
    }

    #[test]
    fn extrapolation_is_flagged() {
        let m = fit_gam(&records(), &ModelLayout::default(), &[vec![1.0, 1.0]], &PirlsConfig::default()).unwrap();
        let t = vec![
            TargetRecord {
                age: 95.0,
                gender: "F".into(),
                smoker: "no".into(),
                exposure: 1.0,
                population_deaths: 100.0,
            },
            TargetRecord {
                age: 40.0,
                gender: "F".into(),
                smoker: "no".into(),
                exposure: 1.0,
                population_deaths: (-9.0 + 0.085 * 40.0f64).exp() * 10_000.0,
            },
        ];
        let p = predict_insured_rates(&m, &t).unwrap();
        assert_eq!(p.extrapolated, vec![true, false]);
    }

    #[test]
    fn malformed_model_text() {
        assert!(GamModel::from_text("hello").is_err());
        assert!(GamModel::from_text(&format!("{FORMAT_HEADER}\nlayout none none none\ncolumns 1\n")).is_err());
    }
}
