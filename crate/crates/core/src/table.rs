//! Named, leveled N-dimensional tables.
//!
//! Storage is dense and row-major with the last dimension varying fastest.
//! Dimensions are kept sorted by name, so two tables built from the same
//! data in different dimension orders are identical.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the total of a probability table.
pub const PROBABILITY_TOTAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimensionSpec {
    name: String,
    levels: Vec<String>,
}

impl DimensionSpec {
    pub fn new<S: Into<String>, L: Into<String>>(
        name: S,
        levels: impl IntoIterator<Item = L>,
    ) -> Result<Self> {
        let name = name.into();
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        if name.is_empty() {
            return Err(Error::InvalidSpec("dimension name is empty".into()));
        }
        if levels.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "dimension `{name}` has no levels"
            )));
        }
        let mut seen = HashSet::with_capacity(levels.len());
        for level in &levels {
            if !seen.insert(level.as_str()) {
                return Err(Error::InvalidSpec(format!(
                    "dimension `{name}` repeats level `{level}`"
                )));
            }
        }
        Ok(Self { name, levels })
    }

    /// Integer-labelled levels `start..=end`, e.g. ages.
    pub fn range(name: impl Into<String>, start: i64, end: i64) -> Result<Self> {
        Self::new(name, (start..=end).map(|a| a.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn position(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn require_position(&self, level: &str) -> Result<usize> {
        self.position(level).ok_or_else(|| Error::UnknownLevel {
            dimension: self.name.clone(),
            level: level.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Count,
    Probability,
    Rate,
}

impl TableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::Count => "count",
            TableKind::Probability => "probability",
            TableKind::Rate => "rate",
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(TableKind::Count),
            "probability" => Ok(TableKind::Probability),
            "rate" => Ok(TableKind::Rate),
            other => Err(Error::InvalidSpec(format!("unknown table kind `{other}`"))),
        }
    }
}

/// Dense nonnegative table over the Cartesian product of its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    dims: Vec<DimensionSpec>,
    values: Vec<f64>,
    kind: TableKind,
    declared_total: Option<f64>,
}

fn shape_of(dims: &[DimensionSpec]) -> Vec<usize> {
    dims.iter().map(DimensionSpec::len).collect()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Walks every multi-index of `shape` in row-major order.
pub(crate) struct MultiIndex {
    shape: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl MultiIndex {
    pub(crate) fn new(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            current: vec![0; shape.len()],
            done: shape.contains(&0),
        }
    }

    /// Returns the next index, or `None` once the product has been exhausted.
    pub(crate) fn next_index(&mut self) -> Option<&[usize]> {
        if self.done {
            None
        } else {
            Some(self.current.as_slice())
        }
    }

    pub(crate) fn advance(&mut self) {
        for axis in (0..self.shape.len()).rev() {
            self.current[axis] += 1;
            if self.current[axis] < self.shape[axis] {
                return;
            }
            self.current[axis] = 0;
        }
        self.done = true;
    }
}

impl ContingencyTable {
    /// Builds a table from values laid out row-major over `dims` as given.
    /// Dimensions are reordered by name and values permuted to match.
    pub fn new(dims: Vec<DimensionSpec>, values: Vec<f64>, kind: TableKind) -> Result<Self> {
        Self::build(dims, values, kind, None)
    }

    /// A probability table whose values sum to `total` rather than 1.
    pub fn with_declared_total(
        dims: Vec<DimensionSpec>,
        values: Vec<f64>,
        total: f64,
    ) -> Result<Self> {
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "declared total must be positive, got {total}"
            )));
        }
        Self::build(dims, values, TableKind::Probability, Some(total))
    }

    fn build(
        dims: Vec<DimensionSpec>,
        values: Vec<f64>,
        kind: TableKind,
        declared_total: Option<f64>,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpec("table needs at least one dimension".into()));
        }
        let mut names = HashSet::new();
        for d in &dims {
            if !names.insert(d.name()) {
                return Err(Error::InvalidSpec(format!(
                    "dimension `{}` appears twice",
                    d.name()
                )));
            }
        }
        let cells: usize = dims.iter().map(DimensionSpec::len).product();
        if values.len() != cells {
            return Err(Error::InvalidSpec(format!(
                "expected {cells} values for the dimension product, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidSpec(format!(
                "value {v} at flat index {i} is negative or not finite"
            )));
        }

        let (dims, values) = canonicalize(dims, values);
        let table = Self {
            dims,
            values,
            kind,
            declared_total,
        };
        if kind == TableKind::Probability {
            let expected = declared_total.unwrap_or(1.0);
            let total = table.total();
            if (total - expected).abs() > PROBABILITY_TOTAL_TOL * expected.max(1.0) {
                return Err(Error::InvalidSpec(format!(
                    "probability table sums to {total}, expected {expected}"
                )));
            }
        }
        Ok(table)
    }

    pub fn from_fn(
        dims: Vec<DimensionSpec>,
        kind: TableKind,
        mut f: impl FnMut(&[&str]) -> f64,
    ) -> Result<Self> {
        let shape = shape_of(&dims);
        let mut values = Vec::with_capacity(shape.iter().product());
        let mut it = MultiIndex::new(&shape);
        let mut labels: Vec<&str> = Vec::with_capacity(dims.len());
        while let Some(idx) = it.next_index() {
            labels.clear();
            labels.extend(idx.iter().zip(&dims).map(|(&i, d)| d.levels[i].as_str()));
            values.push(f(&labels));
            it.advance();
        }
        Self::new(dims, values, kind)
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn declared_total(&self) -> Option<f64> {
        self.declared_total
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        shape_of(&self.dims)
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(DimensionSpec::name).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn dim(&self, name: &str) -> Option<&DimensionSpec> {
        self.dims.iter().find(|d| d.name() == name)
    }

    pub fn dim_index(&self, name: &str) -> Result<usize> {
        self.dims
            .iter()
            .position(|d| d.name() == name)
            .ok_or_else(|| Error::ConstraintMismatch(format!("unknown dimension `{name}`")))
    }

    pub fn has_dim(&self, name: &str) -> bool {
        self.dim(name).is_some()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for axis in (0..shape.len()).rev() {
            idx[axis] = flat % shape[axis];
            flat /= shape[axis];
        }
        idx
    }

    pub fn cell_labels(&self, flat: usize) -> Vec<&str> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.dims)
            .map(|(i, d)| d.levels[i].as_str())
            .collect()
    }

    /// `name=level` pairs for error messages and reports.
    pub fn describe_cell(&self, flat: usize) -> String {
        self.cell_labels(flat)
            .iter()
            .zip(&self.dims)
            .map(|(l, d)| format!("{}={}", d.name(), l))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Flat index of the cell identified by `(dimension, level)` pairs.
    /// Every dimension of the table must be named exactly once.
    pub fn flat_index(&self, labels: &[(&str, &str)]) -> Result<usize> {
        if labels.len() != self.dims.len() {
            return Err(Error::ConstraintMismatch(format!(
                "expected {} labels, got {}",
                self.dims.len(),
                labels.len()
            )));
        }
        let strides = strides_of(&self.shape());
        let mut flat = 0;
        for (axis, d) in self.dims.iter().enumerate() {
            let (_, level) = labels
                .iter()
                .find(|(n, _)| *n == d.name())
                .ok_or_else(|| {
                    Error::ConstraintMismatch(format!("missing label for `{}`", d.name()))
                })?;
            flat += d.require_position(level)? * strides[axis];
        }
        Ok(flat)
    }

    pub fn get(&self, labels: &[(&str, &str)]) -> Result<f64> {
        Ok(self.values[self.flat_index(labels)?])
    }

    /// For each cell of `self`, the flat index of the cell it projects onto
    /// in a table over `target` (a subset of this table's dimensions).
    pub fn projection_onto(&self, target: &[DimensionSpec]) -> Result<Vec<usize>> {
        let target_strides = strides_of(&shape_of(target));
        let mut axis_stride = vec![0usize; self.dims.len()];
        for (t_axis, t) in target.iter().enumerate() {
            let axis = self.dim_index(t.name())?;
            if self.dims[axis] != *t {
                return Err(Error::ConstraintMismatch(format!(
                    "levels of `{}` differ between tables",
                    t.name()
                )));
            }
            axis_stride[axis] = target_strides[t_axis];
        }
        let mut out = Vec::with_capacity(self.values.len());
        let mut it = MultiIndex::new(&self.shape());
        while let Some(idx) = it.next_index() {
            out.push(idx.iter().zip(&axis_stride).map(|(i, s)| i * s).sum());
            it.advance();
        }
        Ok(out)
    }

    fn dims_for(&self, keep: &[&str]) -> Result<Vec<DimensionSpec>> {
        if keep.is_empty() {
            return Err(Error::ConstraintMismatch("keep set is empty".into()));
        }
        let mut kept = Vec::with_capacity(keep.len());
        for name in keep {
            let axis = self.dim_index(name)?;
            if kept.iter().any(|d: &DimensionSpec| d.name() == *name) {
                return Err(Error::ConstraintMismatch(format!(
                    "dimension `{name}` listed twice"
                )));
            }
            kept.push(self.dims[axis].clone());
        }
        kept.sort_by(|a, b| a.name().cmp(b.name()));
        Ok(kept)
    }

    /// Sums over every dimension not in `keep`.
    pub fn marginalize(&self, keep: &[&str]) -> Result<ContingencyTable> {
        let kept = self.dims_for(keep)?;
        let proj = self.projection_onto(&kept)?;
        let mut values = vec![0.0; kept.iter().map(DimensionSpec::len).product()];
        for (v, &p) in self.values.iter().zip(&proj) {
            values[p] += v;
        }
        let kind = match self.kind {
            TableKind::Rate => TableKind::Count,
            k => k,
        };
        Ok(ContingencyTable {
            dims: kept,
            values,
            kind,
            declared_total: self.declared_total,
        })
    }

    /// Expands this table onto `target`, repeating values along the new
    /// dimensions. `target` must contain every dimension of `self`.
    pub fn broadcast(&self, target: &[DimensionSpec]) -> Result<ContingencyTable> {
        let shell = ContingencyTable::new(
            target.to_vec(),
            vec![0.0; target.iter().map(DimensionSpec::len).product()],
            TableKind::Count,
        )?;
        let proj = shell.projection_onto(&self.dims)?;
        let values = proj.iter().map(|&p| self.values[p]).collect();
        Ok(ContingencyTable {
            dims: shell.dims,
            values,
            kind: if self.kind == TableKind::Probability {
                TableKind::Count
            } else {
                self.kind
            },
            declared_total: None,
        })
    }

    /// Multiplies every cell so the total becomes `new_total`.
    pub fn rescale(&self, new_total: f64) -> Result<ContingencyTable> {
        if !(new_total.is_finite() && new_total > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "new total must be positive, got {new_total}"
            )));
        }
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::DegenerateTable("cannot rescale a zero-total table".into()));
        }
        let factor = new_total / total;
        let values = self.values.iter().map(|v| v * factor).collect();
        let (kind, declared_total) = match self.kind {
            TableKind::Probability if (new_total - 1.0).abs() <= PROBABILITY_TOTAL_TOL => {
                (TableKind::Probability, None)
            }
            TableKind::Probability => (TableKind::Count, None),
            k => (k, None),
        };
        Ok(ContingencyTable {
            dims: self.dims.clone(),
            values,
            kind,
            declared_total,
        })
    }

    /// Same dimensions, new values and kind.
    pub fn with_values(&self, values: Vec<f64>, kind: TableKind) -> Result<ContingencyTable> {
        if values.len() != self.values.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        ContingencyTable::build(self.dims.clone(), values, kind, None)
    }

    /// Cellwise combination of two tables over identical dimensions.
    pub fn zip_with(
        &self,
        other: &ContingencyTable,
        kind: TableKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ContingencyTable> {
        if self.dims != other.dims {
            return Err(Error::ConstraintMismatch(format!(
                "dimension mismatch: [{}] vs [{}]",
                self.names().join(","),
                other.names().join(",")
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| f(*a, *b))
            .collect();
        ContingencyTable::build(self.dims.clone(), values, kind, None)
    }

    /// The sub-table at `level` of `dim`, with that dimension removed.
    pub fn slice(&self, dim: &str, level: &str) -> Result<ContingencyTable> {
        let axis = self.dim_index(dim)?;
        if self.dims.len() == 1 {
            return Err(Error::InvalidSpec("cannot slice a one-dimensional table".into()));
        }
        let pos = self.dims[axis].require_position(level)?;
        let mut values = Vec::with_capacity(self.values.len() / self.dims[axis].len());
        let mut it = MultiIndex::new(&self.shape());
        let mut flat = 0;
        while let Some(idx) = it.next_index() {
            if idx[axis] == pos {
                values.push(self.values[flat]);
            }
            flat += 1;
            it.advance();
        }
        let mut dims = self.dims.clone();
        dims.remove(axis);
        Ok(ContingencyTable {
            dims,
            values,
            kind: if self.kind == TableKind::Probability {
                TableKind::Count
            } else {
                self.kind
            },
            declared_total: None,
        })
    }

    /// Inverse of [`slice`](Self::slice): joins per-level tables along a new
    /// dimension. All slices must share dimensions.
    pub fn stack(
        dim: DimensionSpec,
        slices: &[ContingencyTable],
        kind: TableKind,
    ) -> Result<ContingencyTable> {
        if slices.len() != dim.len() {
            return Err(Error::InvalidSpec(format!(
                "dimension `{}` has {} levels but {} slices were given",
                dim.name(),
                dim.len(),
                slices.len()
            )));
        }
        let inner = slices[0].dims.clone();
        if slices.iter().any(|s| s.dims != inner) {
            return Err(Error::ConstraintMismatch("slices have different dimensions".into()));
        }
        let mut dims = vec![dim];
        dims.extend(inner);
        let values = slices.iter().flat_map(|s| s.values.iter().copied()).collect();
        ContingencyTable::new(dims, values, kind)
    }

    pub fn max_abs_diff(&self, other: &ContingencyTable) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::ConstraintMismatch("dimension mismatch".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn canonicalize(dims: Vec<DimensionSpec>, values: Vec<f64>) -> (Vec<DimensionSpec>, Vec<f64>) {
    let mut order: Vec<usize> = (0..dims.len()).collect();
    order.sort_by(|&a, &b| dims[a].name().cmp(dims[b].name()));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return (dims, values);
    }
    let old_strides = strides_of(&shape_of(&dims));
    let new_dims: Vec<DimensionSpec> = order.iter().map(|&o| dims[o].clone()).collect();
    let new_shape = shape_of(&new_dims);
    let mut new_values = Vec::with_capacity(values.len());
    let mut it = MultiIndex::new(&new_shape);
    while let Some(idx) = it.next_index() {
        let old: usize = idx
            .iter()
            .zip(&order)
            .map(|(&i, &o)| i * old_strides[o])
            .sum();
        new_values.push(values[old]);
        it.advance();
    }
    (new_dims, new_values)
}

/// A table of uniform cells summing to `total`.
pub fn uniform_table(dims: Vec<DimensionSpec>, total: f64) -> Result<ContingencyTable> {
    if dims.is_empty() {
        return Err(Error::InvalidSpec("uniform table needs at least one dimension".into()));
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidSpec(format!("total must be positive, got {total}")));
    }
    let cells: usize = dims.iter().map(DimensionSpec::len).product();
    let kind = if total == 1.0 {
        TableKind::Probability
    } else {
        TableKind::Count
    };
    ContingencyTable::new(dims, vec![total / cells as f64; cells], kind)
}

pub fn marginalize(table: &ContingencyTable, keep: &[&str]) -> Result<ContingencyTable> {
    table.marginalize(keep)
}

pub fn rescale(table: &ContingencyTable, new_total: f64) -> Result<ContingencyTable> {
    table.rescale(new_total)
}

/// A target marginal the fitted joint must reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalConstraint {
    target: ContingencyTable,
}

impl MarginalConstraint {
    pub fn new(target: ContingencyTable) -> Result<Self> {
        if target.total() <= 0.0 {
            return Err(Error::InvalidSpec("constraint target total must be positive".into()));
        }
        Ok(Self { target })
    }

    pub fn over(&self) -> Vec<&str> {
        self.target.names()
    }

    pub fn target(&self) -> &ContingencyTable {
        &self.target
    }

    pub fn total(&self) -> f64 {
        self.target.total()
    }

    /// Checks that every constrained dimension exists in `joint` with
    /// identical levels, and returns the cell projection.
    pub fn projection_for(&self, joint: &ContingencyTable) -> Result<Vec<usize>> {
        joint.projection_onto(self.target.dims())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim(name: &str, levels: &[&str]) -> DimensionSpec {
        DimensionSpec::new(name, levels.iter().copied()).unwrap()
    }

    #[test]
    fn dimension_rejects_duplicate_and_empty_levels() {
        assert!(DimensionSpec::new("g", ["F", "F"]).is_err());
        assert!(DimensionSpec::new("g", Vec::<String>::new()).is_err());
        assert!(DimensionSpec::new("", ["a"]).is_err());
    }

    #[test]
    fn table_rejects_duplicate_dims_and_bad_values() {
        let a = dim("a", &["x", "y"]);
        assert!(ContingencyTable::new(vec![a.clone(), a.clone()], vec![1.0; 4], TableKind::Count).is_err());
        assert!(ContingencyTable::new(vec![a.clone()], vec![1.0, -1.0], TableKind::Count).is_err());
        assert!(ContingencyTable::new(vec![a.clone()], vec![1.0, f64::NAN], TableKind::Count).is_err());
        assert!(ContingencyTable::new(vec![a.clone()], vec![1.0], TableKind::Count).is_err());
        assert!(ContingencyTable::new(vec![a], vec![0.5, 0.6], TableKind::Probability).is_err());
    }

    #[test]
    fn dimensions_are_sorted_by_name() {
        let t = ContingencyTable::new(
            vec![dim("z", &["a", "b"]), dim("a", &["p", "q", "r"])],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            TableKind::Count,
        )
        .unwrap();
        assert_eq!(t.names(), vec!["a", "z"]);
        assert_eq!(t.values(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.get(&[("z", "b"), ("a", "q")]).unwrap(), 5.0);
    }

    #[test]
    fn marginalize_uniform_rows() {
        let t = ContingencyTable::new(
            vec![dim("row", &["r1", "r2"]), dim("col", &["c1", "c2"])],
            vec![1.0; 4],
            TableKind::Count,
        )
        .unwrap();
        let m = t.marginalize(&["row"]).unwrap();
        assert_eq!(m.values(), &[2.0, 2.0]);
        assert_eq!(t.marginalize(&["row", "col"]).unwrap(), t);
    }

    #[test]
    fn marginalize_unknown_dimension_is_mismatch() {
        let t = uniform_table(vec![dim("a", &["x"])], 1.0).unwrap();
        assert!(matches!(
            t.marginalize(&["b"]),
            Err(Error::ConstraintMismatch(_))
        ));
        assert!(matches!(t.marginalize(&[]), Err(Error::ConstraintMismatch(_))));
    }

    #[test]
    fn uniform_fill() {
        let t = uniform_table(vec![dim("a", &["1", "2"]), dim("b", &["1", "2"])], 4.0).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
        let t = uniform_table(vec![dim("a", &["1", "2"]), dim("b", &["1", "2", "3"])], 1.0).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0 / 6.0));
        let t = uniform_table(
            vec![dim("a", &["1", "2", "3"]), dim("b", &["1", "2"]), dim("c", &["1", "2"])],
            100_000.0,
        )
        .unwrap();
        assert!(t.values().iter().all(|&v| (v - 100_000.0 / 12.0).abs() < 1e-9));
        assert!(uniform_table(vec![], 1.0).is_err());
    }

    #[test]
    fn rescale_scales_and_rejects_zero_total() {
        let t = uniform_table(vec![dim("a", &["1", "2"])], 1.0).unwrap();
        let r = t.rescale(1_000_000.0).unwrap();
        assert_eq!(r.values(), &[500_000.0, 500_000.0]);
        assert_eq!(t.rescale(1.0).unwrap().values(), t.values());
        let z = ContingencyTable::new(vec![dim("a", &["1"])], vec![0.0], TableKind::Count).unwrap();
        assert!(matches!(z.rescale(1.0), Err(Error::DegenerateTable(_))));
    }

    #[test]
    fn rescaling_a_percent_cell_to_a_population() {
        // a share printed as 0.02852311 percent is 0.0002852311 as a fraction
        let share = 0.02852311 / 100.0;
        let t = ContingencyTable::new(
            vec![dim("c", &["cell", "rest"])],
            vec![share, 1.0 - share],
            TableKind::Probability,
        )
        .unwrap();
        let r = t.rescale(1_000_000.0).unwrap();
        assert!((r.values()[0] - 285.2311).abs() < 1e-9);
    }

    #[test]
    fn slice_and_stack_invert() {
        let t = ContingencyTable::from_fn(
            vec![dim("g", &["F", "M"]), dim("a", &["1", "2", "3"])],
            TableKind::Count,
            |l| l.concat().len() as f64 + if l[1] == "M" { 10.0 } else { 0.0 },
        )
        .unwrap();
        let f = t.slice("g", "F").unwrap();
        let m = t.slice("g", "M").unwrap();
        let back = ContingencyTable::stack(t.dim("g").unwrap().clone(), &[f, m], TableKind::Count).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn broadcast_repeats_along_new_dims() {
        let small = ContingencyTable::new(vec![dim("a", &["x", "y"])], vec![1.0, 2.0], TableKind::Rate).unwrap();
        let big = small
            .broadcast(&[dim("b", &["p", "q", "r"]), dim("a", &["x", "y"])])
            .unwrap();
        assert_eq!(big.names(), vec!["a", "b"]);
        assert_eq!(big.values(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(big.marginalize(&["a"]).unwrap().values(), &[3.0, 6.0]);
    }

    #[test]
    fn constraint_level_mismatch_detected() {
        let joint = uniform_table(vec![dim("a", &["x", "y"]), dim("b", &["p", "q"])], 1.0).unwrap();
        let bad = MarginalConstraint::new(
            ContingencyTable::new(vec![dim("a", &["y", "x"])], vec![0.5, 0.5], TableKind::Probability).unwrap(),
        )
        .unwrap();
        assert!(bad.projection_for(&joint).is_err());
    }
}
