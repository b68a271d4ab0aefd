//! Splitting base mortality rates into risk subgroups by hazard ratio.
//!
//! For a base cell with rate `mu` and subgroup shares `w_g`, the reference
//! rate is `q = mu / sum_g(w_g * h_g)` and subgroup `g` gets `h_g * q`. The
//! share-weighted mean of the split rates is `mu` again, so expected deaths
//! are conserved for any exposure split in proportion to the shares.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::table::{ContingencyTable, DimensionSpec, TableKind};

/// Tolerance on per-cell share sums.
pub const SHARE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum HazardScope {
    /// One ratio per group level, applied everywhere.
    Global(BTreeMap<String, f64>),
    /// Ratios indexed by the group dimension and a subset of the base
    /// dimensions (e.g. age and gender).
    Cellwise(ContingencyTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardRatioSpec {
    group_dimension: String,
    reference_level: String,
    scope: HazardScope,
}

impl HazardRatioSpec {
    pub fn new(
        group_dimension: impl Into<String>,
        reference_level: impl Into<String>,
        scope: HazardScope,
    ) -> Result<Self> {
        let spec = Self {
            group_dimension: group_dimension.into(),
            reference_level: reference_level.into(),
            scope,
        };
        spec.check()?;
        Ok(spec)
    }

    /// A two-level global spec: `reference` gets 1 and `other` gets `ratio`.
    pub fn binary(
        group_dimension: &str,
        reference: &str,
        other: &str,
        ratio: f64,
    ) -> Result<Self> {
        let ratios = BTreeMap::from([(reference.to_string(), 1.0), (other.to_string(), ratio)]);
        Self::new(group_dimension, reference, HazardScope::Global(ratios))
    }

    fn check(&self) -> Result<()> {
        match &self.scope {
            HazardScope::Global(ratios) => {
                match ratios.get(&self.reference_level) {
                    Some(1.0) => {}
                    Some(&h) => {
                        return Err(Error::InvalidSpec(format!(
                            "reference level `{}` must have ratio 1, got {h}",
                            self.reference_level
                        )))
                    }
                    None => {
                        return Err(Error::InvalidSpec(format!(
                            "no ratio for reference level `{}`",
                            self.reference_level
                        )))
                    }
                }
                if let Some((level, h)) = ratios.iter().find(|(_, h)| !(h.is_finite() && **h >= 0.0)) {
                    return Err(Error::InvalidSpec(format!(
                        "ratio for `{level}` must be finite and >= 0, got {h}"
                    )));
                }
            }
            HazardScope::Cellwise(table) => {
                let group = table.dim(&self.group_dimension).ok_or_else(|| {
                    Error::InvalidSpec(format!(
                        "cellwise ratios lack group dimension `{}`",
                        self.group_dimension
                    ))
                })?;
                group.require_position(&self.reference_level)?;
                if table.dims().len() > 1 {
                    let reference = table.slice(&self.group_dimension, &self.reference_level)?;
                    if reference.values().iter().any(|&h| h != 1.0) {
                        return Err(Error::InvalidSpec(format!(
                            "reference level `{}` must have ratio 1 in every cell",
                            self.reference_level
                        )));
                    }
                } else {
                    let pos = group.require_position(&self.reference_level)?;
                    if table.values()[pos] != 1.0 {
                        return Err(Error::InvalidSpec(format!(
                            "reference level `{}` must have ratio 1",
                            self.reference_level
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn group_dimension(&self) -> &str {
        &self.group_dimension
    }

    pub fn reference_level(&self) -> &str {
        &self.reference_level
    }

    pub fn scope(&self) -> &HazardScope {
        &self.scope
    }

    /// The ratios as a table over `group` (and, for cellwise scope, the
    /// scoped dimensions).
    fn ratio_table(&self, group: &DimensionSpec) -> Result<ContingencyTable> {
        match &self.scope {
            HazardScope::Global(ratios) => {
                let mut values = Vec::with_capacity(group.len());
                for level in group.levels() {
                    let h = ratios.get(level).ok_or_else(|| {
                        Error::InvalidSpec(format!("no hazard ratio for level `{level}`"))
                    })?;
                    values.push(*h);
                }
                ContingencyTable::new(vec![group.clone()], values, TableKind::Rate)
            }
            HazardScope::Cellwise(table) => Ok(table.clone()),
        }
    }
}

/// Rates with their exposure over identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    rates: ContingencyTable,
    exposure: ContingencyTable,
}

impl RateTable {
    pub fn new(rates: ContingencyTable, exposure: ContingencyTable) -> Result<Self> {
        if rates.dims() != exposure.dims() {
            return Err(Error::ConstraintMismatch(format!(
                "rates over [{}] but exposure over [{}]",
                rates.names().join(","),
                exposure.names().join(",")
            )));
        }
        if let Some(i) = rates.values().iter().position(|&r| r > 1.0) {
            return Err(Error::RateOverflow {
                cell: rates.describe_cell(i),
                rate: rates.values()[i],
            });
        }
        let rates = rates.with_values(rates.values().to_vec(), TableKind::Rate)?;
        let exposure = exposure.with_values(exposure.values().to_vec(), TableKind::Count)?;
        Ok(Self { rates, exposure })
    }

    /// Rates with unit exposure in every cell.
    pub fn with_unit_exposure(rates: ContingencyTable) -> Result<Self> {
        let exposure = rates.with_values(vec![1.0; rates.len()], TableKind::Count)?;
        Self::new(rates, exposure)
    }

    pub fn rates(&self) -> &ContingencyTable {
        &self.rates
    }

    pub fn exposure(&self) -> &ContingencyTable {
        &self.exposure
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        self.rates.dims()
    }

    pub fn expected_deaths(&self) -> ContingencyTable {
        expected_deaths(self)
    }
}

/// Cellwise rate times exposure.
pub fn expected_deaths(rate_table: &RateTable) -> ContingencyTable {
    rate_table
        .rates
        .zip_with(&rate_table.exposure, TableKind::Count, |r, e| r * e)
        .expect("rate and exposure dimensions are aligned at construction")
}

pub fn implied_hazard_ratio(rate_a: f64, rate_b: f64) -> Result<f64> {
    if rate_b == 0.0 {
        return Err(Error::DivisionDegenerate);
    }
    Ok(rate_a / rate_b)
}

/// Normalizes `joint` so the `group` values in each cell of the remaining
/// dimensions sum to one.
pub fn conditional_shares(joint: &ContingencyTable, group: &str) -> Result<ContingencyTable> {
    let others: Vec<&str> = joint.names().into_iter().filter(|n| *n != group).collect();
    joint.dim_index(group)?;
    if others.is_empty() {
        return joint.rescale(1.0).map(|t| {
            t.with_values(t.values().to_vec(), TableKind::Probability)
                .expect("rescaled to one")
        });
    }
    let slice_totals = joint.marginalize(&others)?;
    let proj = joint.projection_onto(slice_totals.dims())?;
    let mut values = Vec::with_capacity(joint.len());
    for (i, (&v, &p)) in joint.values().iter().zip(&proj).enumerate() {
        let total = slice_totals.values()[p];
        if total <= 0.0 {
            return Err(Error::DegenerateTable(format!(
                "zero total in shares slice at {}",
                joint.describe_cell(i)
            )));
        }
        values.push(v / total);
    }
    ContingencyTable::with_declared_total(
        joint.dims().to_vec(),
        values,
        slice_totals.len() as f64,
    )
}

fn check_share_sums(shares: &ContingencyTable, group: &str) -> Result<()> {
    let others: Vec<&str> = shares.names().into_iter().filter(|n| *n != group).collect();
    let sums = if others.is_empty() {
        vec![shares.total()]
    } else {
        shares.marginalize(&others)?.values().to_vec()
    };
    if let Some((i, s)) = sums
        .iter()
        .enumerate()
        .find(|(_, s)| (**s - 1.0).abs() > SHARE_SUM_TOL)
    {
        return Err(Error::InvalidSpec(format!(
            "group shares sum to {s} (slice {i}), expected 1"
        )));
    }
    Ok(())
}

/// Adds `spec.group_dimension` to `base`, splitting each rate so that
/// subgroup rates follow the hazard ratios and the share-weighted mean
/// equals the base rate. The output exposure is base exposure times share.
pub fn split_rates(
    base: &RateTable,
    shares: &ContingencyTable,
    spec: &HazardRatioSpec,
) -> Result<RateTable> {
    let group_name = spec.group_dimension();
    if base.rates.has_dim(group_name) {
        return Err(Error::InvalidSpec(format!(
            "base table already has dimension `{group_name}`"
        )));
    }
    let group = shares
        .dim(group_name)
        .ok_or_else(|| {
            Error::ConstraintMismatch(format!("shares lack group dimension `{group_name}`"))
        })?
        .clone();
    group.require_position(spec.reference_level())?;
    check_share_sums(shares, group_name)?;

    let mut out_dims = base.dims().to_vec();
    out_dims.push(group.clone());
    let ratios = spec.ratio_table(&group)?;
    let w = shares.broadcast(&out_dims)?;
    let h = ratios.broadcast(&out_dims)?;
    let out_dims = w.dims().to_vec();
    let exposure = base.exposure.broadcast(&out_dims)?;

    // denominator per base cell
    let to_base = w.projection_onto(base.dims())?;
    let mut denom = vec![0.0; base.rates.len()];
    for ((wv, hv), &b) in w.values().iter().zip(h.values()).zip(&to_base) {
        denom[b] += wv * hv;
    }

    let mut rates = Vec::with_capacity(w.len());
    for (i, &b) in to_base.iter().enumerate() {
        let m = base.rates.values()[b];
        let r = if m == 0.0 {
            0.0
        } else if denom[b] <= 0.0 {
            return Err(Error::InfeasibleSplit {
                cell: base.rates.describe_cell(b),
                rate: m,
            });
        } else {
            h.values()[i] * m / denom[b]
        };
        if r > 1.0 {
            return Err(Error::RateOverflow {
                cell: w.describe_cell(i),
                rate: r,
            });
        }
        rates.push(r);
    }
    let split_exposure: Vec<f64> = exposure
        .values()
        .iter()
        .zip(w.values())
        .map(|(e, s)| e * s)
        .collect();
    RateTable::new(
        w.with_values(rates, TableKind::Rate)?,
        w.with_values(split_exposure, TableKind::Count)?,
    )
}

/// Share-weighted mean of split rates, removing `group`. Inverse of
/// [`split_rates`] given the same shares.
pub fn recombine(split: &RateTable, shares: &ContingencyTable, group: &str) -> Result<RateTable> {
    let others: Vec<&str> = split.rates.names().into_iter().filter(|n| *n != group).collect();
    let w = shares.broadcast(split.dims())?;
    let weighted = split.rates.zip_with(&w, TableKind::Count, |r, s| r * s)?;
    let rates = weighted.marginalize(&others)?;
    let exposure = split.exposure.marginalize(&others)?;
    RateTable::new(
        rates.with_values(rates.values().to_vec(), TableKind::Rate)?,
        exposure,
    )
}
