//! Iterative proportional fitting of a joint table to marginal targets.
//!
//! Updates are count-preserving: each step scales cells so the constrained
//! marginal equals its target, and the fitted total equals the common
//! constraint total. Normalizing to probabilities, when wanted, is a
//! [`ContingencyTable::rescale`] afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ContingencyTable, MarginalConstraint, TableKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Zero seed cells are structural and stay zero.
    KeepZero,
    /// Zero seed cells are replaced by `epsilon` before fitting.
    EpsilonFloor { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfConfig {
    /// Max absolute deviation between fitted and target marginals.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub zero_policy: ZeroPolicy,
}

impl Default for IpfConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 1000,
            zero_policy: ZeroPolicy::KeepZero,
        }
    }
}

impl IpfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "IPF tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidSpec("IPF max_iterations must be at least 1".into()));
        }
        if let ZeroPolicy::EpsilonFloor { epsilon } = self.zero_policy {
            if !(epsilon.is_finite() && epsilon >= 0.0) {
                return Err(Error::InvalidSpec(format!("epsilon floor must be >= 0, got {epsilon}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IpfResult {
    pub fitted: ContingencyTable,
    pub iterations_used: usize,
    pub converged: bool,
    pub max_deviation: f64,
    /// Max deviation after each full cycle through the constraints.
    pub deviation_history: Vec<f64>,
}

struct Prepared<'a> {
    constraint: &'a MarginalConstraint,
    projection: Vec<usize>,
}

fn prepare<'a>(
    joint: &ContingencyTable,
    constraints: &'a [MarginalConstraint],
) -> Result<Vec<Prepared<'a>>> {
    constraints
        .iter()
        .map(|c| {
            Ok(Prepared {
                constraint: c,
                projection: c.projection_for(joint)?,
            })
        })
        .collect()
}

fn projected_sums(values: &[f64], projection: &[usize], len: usize) -> Vec<f64> {
    let mut sums = vec![0.0; len];
    for (v, &p) in values.iter().zip(projection) {
        sums[p] += v;
    }
    sums
}

fn scale_step(values: &mut [f64], prepared: &Prepared<'_>) -> Result<()> {
    let target = prepared.constraint.target();
    let current = projected_sums(values, &prepared.projection, target.len());
    let mut factors = Vec::with_capacity(current.len());
    for (m, (&cur, &tgt)) in current.iter().zip(target.values()).enumerate() {
        if cur > 0.0 {
            factors.push(tgt / cur);
        } else if tgt > 0.0 {
            return Err(Error::InfeasibleUpdate {
                cell: target.describe_cell(m),
                target: tgt,
            });
        } else {
            factors.push(0.0);
        }
    }
    for (v, &p) in values.iter_mut().zip(&prepared.projection) {
        *v *= factors[p];
    }
    Ok(())
}

fn deviation(values: &[f64], prepared: &[Prepared<'_>]) -> f64 {
    prepared
        .iter()
        .map(|p| {
            let target = p.constraint.target();
            projected_sums(values, &p.projection, target.len())
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// One proportional update: scales `table` so its marginal over the
/// constraint's dimensions equals the target.
pub fn ipf_update_step(
    table: &ContingencyTable,
    constraint: &MarginalConstraint,
) -> Result<ContingencyTable> {
    let prepared = Prepared {
        constraint,
        projection: constraint.projection_for(table)?,
    };
    let mut values = table.values().to_vec();
    scale_step(&mut values, &prepared)?;
    table.with_values(values, TableKind::Count)
}

/// Largest |fitted marginal - target| over all constraints and cells.
pub fn max_marginal_deviation(
    table: &ContingencyTable,
    constraints: &[MarginalConstraint],
) -> Result<f64> {
    Ok(deviation(table.values(), &prepare(table, constraints)?))
}

fn check_totals(constraints: &[MarginalConstraint], tolerance: f64) -> Result<f64> {
    let first = constraints
        .first()
        .ok_or_else(|| Error::InvalidSpec("IPF needs at least one constraint".into()))?
        .total();
    for c in &constraints[1..] {
        if (c.total() - first).abs() > tolerance * first.max(1.0) {
            return Err(Error::InfeasibleConstraints(format!(
                "constraint over [{}] totals {} but constraint over [{}] totals {}",
                constraints[0].over().join(","),
                first,
                c.over().join(","),
                c.total()
            )));
        }
    }
    Ok(first)
}

/// Fits `seed` to `constraints`, cycling through them in the given order
/// once per iteration. The fixed point does not depend on that order; the
/// iterate path does.
pub fn ipf_fit(
    seed: &ContingencyTable,
    constraints: &[MarginalConstraint],
    config: &IpfConfig,
) -> Result<IpfResult> {
    config.validate()?;
    check_totals(constraints, config.tolerance)?;
    let prepared = prepare(seed, constraints)?;

    let mut values = seed.values().to_vec();
    if let ZeroPolicy::EpsilonFloor { epsilon } = config.zero_policy {
        for v in values.iter_mut().filter(|v| **v == 0.0) {
            *v = epsilon;
        }
    }

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    for _ in 0..config.max_iterations {
        for p in &prepared {
            scale_step(&mut values, p)?;
        }
        iterations_used += 1;
        let dev = deviation(&values, &prepared);
        history.push(dev);
        if dev <= config.tolerance {
            converged = true;
            break;
        }
    }

    let max_deviation = *history.last().unwrap_or(&f64::INFINITY);
    let total: f64 = values.iter().sum();
    let kind = if (total - 1.0).abs() <= crate::table::PROBABILITY_TOTAL_TOL {
        TableKind::Probability
    } else {
        TableKind::Count
    };
    Ok(IpfResult {
        fitted: seed.with_values(values, kind)?,
        iterations_used,
        converged,
        max_deviation,
        deviation_history: history,
    })
}

/// Runs a separate fit for every level of `stratum`.
///
/// Constraints that include `stratum` are sliced per level. A constraint
/// over `stratum` alone, or the first constraint that includes it, fixes the
/// stratum totals; constraints without `stratum` are scaled to each
/// stratum's total. The per-level fits are stacked back together.
pub fn ipf_fit_stratified(
    seed: &ContingencyTable,
    stratum: &str,
    constraints: &[MarginalConstraint],
    config: &IpfConfig,
) -> Result<IpfResult> {
    config.validate()?;
    let total = check_totals(constraints, config.tolerance)?;
    let stratum_dim = seed
        .dim(stratum)
        .ok_or_else(|| Error::ConstraintMismatch(format!("unknown dimension `{stratum}`")))?
        .clone();
    let defining = constraints
        .iter()
        .find(|c| c.target().has_dim(stratum))
        .ok_or_else(|| {
            Error::InvalidSpec(format!("no constraint involves stratum dimension `{stratum}`"))
        })?;
    let stratum_totals = defining.target().marginalize(&[stratum])?;

    let mut slices = Vec::with_capacity(stratum_dim.len());
    let mut iterations_used = 0;
    let mut converged = true;
    let mut history: Vec<f64> = Vec::new();
    for (level_idx, level) in stratum_dim.levels().iter().enumerate() {
        let share = stratum_totals.values()[level_idx];
        let sub_seed = seed.slice(stratum, level)?;
        if share == 0.0 {
            slices.push(sub_seed.with_values(vec![0.0; sub_seed.len()], TableKind::Count)?);
            continue;
        }
        let mut sub_constraints = Vec::new();
        for c in constraints {
            let target = c.target();
            if target.has_dim(stratum) {
                if target.dims().len() == 1 {
                    continue;
                }
                sub_constraints.push(MarginalConstraint::new(target.slice(stratum, level)?)?);
            } else {
                sub_constraints.push(MarginalConstraint::new(target.rescale(share)?)?);
            }
        }
        if sub_constraints.is_empty() {
            slices.push(sub_seed.rescale(share)?);
            continue;
        }
        let fit = ipf_fit(&sub_seed, &sub_constraints, config)?;
        iterations_used = iterations_used.max(fit.iterations_used);
        converged &= fit.converged;
        for (i, d) in fit.deviation_history.iter().enumerate() {
            if i < history.len() {
                history[i] = history[i].max(*d);
            } else {
                history.push(*d);
            }
        }
        slices.push(fit.fitted);
    }

    let kind = if (total - 1.0).abs() <= crate::table::PROBABILITY_TOTAL_TOL {
        TableKind::Probability
    } else {
        TableKind::Count
    };
    let fitted = ContingencyTable::stack(stratum_dim, &slices, TableKind::Count)?;
    let fitted = fitted.with_values(fitted.values().to_vec(), kind)?;
    let max_deviation = max_marginal_deviation(&fitted, constraints)?;
    Ok(IpfResult {
        fitted,
        iterations_used,
        converged: converged && max_deviation <= config.tolerance,
        max_deviation,
        deviation_history: history,
    })
}
