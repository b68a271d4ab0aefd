use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::table::{ContingencyTable, DimensionSpec, TableKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Percent,
    Fraction,
    Count,
    Rate,
}

impl Units {
    fn factor(self) -> f64 {
        match self {
            Units::Percent => 0.01,
            _ => 1.0,
        }
    }

    fn compatible_with(self, kind: TableKind) -> bool {
        matches!(
            (self, kind),
            (Units::Percent | Units::Fraction, TableKind::Probability)
                | (Units::Count, TableKind::Count)
                | (Units::Rate | Units::Fraction, TableKind::Rate)
        )
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::Percent => "percent",
            Units::Fraction => "fraction",
            Units::Count => "count",
            Units::Rate => "rate",
        })
    }
}

/// Sidecar metadata stored next to a table file as `<stem>.meta.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableMeta {
    pub kind: String,
    pub units: Units,
    /// Dimensions the values are conditional on: within each combination of
    /// these levels the values sum to one (after unit conversion).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditional_on: Vec<String>,
    /// Rescale probabilities (or each conditional slice) to sum to one when
    /// the printed values are off by rounding.
    #[serde(default, skip_serializing_if = "is_false")]
    pub normalize: bool,
    /// Largest accepted departure from one before normalizing.
    #[serde(default = "default_rounding", skip_serializing_if = "is_default_rounding")]
    pub rounding_tolerance: f64,
    /// Total of a probability table that does not sum to one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_total: Option<f64>,
    /// Level order per dimension; dimensions not listed keep the order of
    /// first appearance in the file.
    #[serde(default)]
    pub levels: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn default_rounding() -> f64 {
    1e-3
}

fn is_default_rounding(v: &f64) -> bool {
    *v == default_rounding()
}

impl TableMeta {
    pub fn kind(&self) -> Result<TableKind> {
        TableKind::from_str(&self.kind)
    }
}

/// Sidecar path for a table file: `dir/name.csv` -> `dir/name.meta.toml`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    path.with_file_name(format!("{stem}.meta.toml"))
}

pub fn read_meta(path: &Path) -> Result<TableMeta> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: TableMeta =
        toml::from_str(&text).map_err(|e| Error::parse(&mp, 0, e.to_string()))?;
    let kind = meta.kind().map_err(|e| Error::parse(&mp, 0, e.to_string()))?;
    if !meta.units.compatible_with(kind) {
        return Err(Error::parse(
            &mp,
            0,
            format!("units `{}` cannot describe a {kind} table", meta.units),
        ));
    }
    Ok(meta)
}

#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Dimensions (names and level order) the file must match.
    pub expected_dims: Option<Vec<DimensionSpec>>,
    /// Marginal over the conditioning dimensions, used to turn a
    /// conditional table into a joint one.
    pub marginal: Option<ContingencyTable>,
}

/// A table as stored, after unit conversion but before any sum checks.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub dims: Vec<DimensionSpec>,
    /// Row-major over `dims` in file order.
    pub values: Vec<f64>,
    pub meta: TableMeta,
}

impl RawTable {
    /// The values as an unconstrained count table.
    pub fn as_counts(&self) -> Result<ContingencyTable> {
        ContingencyTable::new(self.dims.clone(), self.values.clone(), TableKind::Count)
    }
}

/// Parses a long-format table file and applies its declared units.
/// Missing cells, duplicates, unknown levels and malformed values are
/// errors carrying the file line number.
pub fn read_raw_table(path: &Path) -> Result<RawTable> {
    let meta = read_meta(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.last().map(String::as_str) != Some("value") || headers.len() < 2 {
        return Err(Error::parse(
            path,
            1,
            "header must list the dimension columns followed by `value`",
        ));
    }
    let dim_names = &headers[..headers.len() - 1];
    for name in meta.levels.keys() {
        if !dim_names.contains(name) {
            return Err(Error::parse(
                path,
                1,
                format!("metadata declares levels for unknown column `{name}`"),
            ));
        }
    }

    let mut levels: Vec<Vec<String>> = dim_names
        .iter()
        .map(|n| meta.levels.get(n).cloned().unwrap_or_default())
        .collect();
    let declared: Vec<bool> = dim_names.iter().map(|n| meta.levels.contains_key(n)).collect();
    let mut rows: Vec<(usize, Vec<usize>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::parse(path, line, "wrong number of fields"));
        }
        let mut idx = Vec::with_capacity(dim_names.len());
        for (d, label) in record.iter().take(dim_names.len()).enumerate() {
            match levels[d].iter().position(|l| l == label) {
                Some(p) => idx.push(p),
                None if !declared[d] => {
                    levels[d].push(label.to_string());
                    idx.push(levels[d].len() - 1);
                }
                None => {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("unknown level `{label}` for dimension `{}`", dim_names[d]),
                    ))
                }
            }
        }
        let text = &record[dim_names.len()];
        let value: f64 = text
            .parse()
            .map_err(|_| Error::parse(path, line, format!("`{text}` is not a number")))?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::parse(
                path,
                line,
                format!("value {value} must be finite and >= 0"),
            ));
        }
        rows.push((line, idx, value * meta.units.factor()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable {
            path: path.to_path_buf(),
        });
    }

    let dims: Vec<DimensionSpec> = dim_names
        .iter()
        .zip(&levels)
        .map(|(n, l)| DimensionSpec::new(n.as_str(), l.iter().map(String::as_str)))
        .collect::<Result<_>>()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let shape: Vec<usize> = dims.iter().map(DimensionSpec::len).collect();
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let cells: usize = shape.iter().product();
    let mut values = vec![f64::NAN; cells];
    let mut seen: HashMap<usize, usize> = HashMap::new();
    for (line, idx, v) in rows {
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        if let Some(first) = seen.insert(flat, line) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate cell (first defined on line {first})"),
            ));
        }
        values[flat] = v;
    }
    if let Some(missing) = values.iter().position(|v| v.is_nan()) {
        let mut rem = missing;
        let labels: Vec<String> = dims
            .iter()
            .zip(&strides)
            .map(|(d, s)| {
                let i = rem / s;
                rem %= s;
                format!("{}={}", d.name(), d.levels()[i])
            })
            .collect();
        return Err(Error::parse(
            path,
            0,
            format!("missing cell ({})", labels.join(", ")),
        ));
    }
    Ok(RawTable { dims, values, meta })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn check_expected(path: &Path, table: &ContingencyTable, expected: &[DimensionSpec]) -> Result<()> {
    let mut want = expected.to_vec();
    want.sort_by(|a, b| a.name().cmp(b.name()));
    if table.dims() != want.as_slice() {
        let got: Vec<String> = table
            .dims()
            .iter()
            .map(|d| format!("{}[{}]", d.name(), d.len()))
            .collect();
        let exp: Vec<String> = want.iter().map(|d| format!("{}[{}]", d.name(), d.len())).collect();
        return Err(Error::parse(
            path,
            0,
            format!(
                "dimensions {} do not match the expected {}",
                got.join(", "),
                exp.join(", ")
            ),
        ));
    }
    Ok(())
}

/// Sums of `values` over every dimension except `keep`, per `keep` cell.
fn slice_sums(table: &ContingencyTable, keep: &[&str]) -> Result<ContingencyTable> {
    table.marginalize(keep)
}

/// Reads a table file into a [`ContingencyTable`].
///
/// Percent values are divided by 100. A table declared conditional on some
/// dimensions is multiplied by `options.marginal` over those dimensions to
/// give the joint table; its slices must sum to one first.
pub fn read_table(path: &Path, options: &ReadOptions) -> Result<ContingencyTable> {
    let raw = read_raw_table(path)?;
    let meta = &raw.meta;
    let kind = meta.kind()?;
    let counts = raw.as_counts()?;
    let err = |msg: String| Error::parse(path, 0, msg);

    let table = if meta.conditional_on.is_empty() {
        match kind {
            TableKind::Probability => {
                let total = counts.total();
                let expected = meta.declared_total.unwrap_or(1.0);
                let values = if meta.normalize {
                    if (total - expected).abs() > meta.rounding_tolerance * expected {
                        return Err(err(format!(
                            "values sum to {total}, more than rounding away from {expected}"
                        )));
                    }
                    counts.values().iter().map(|v| v / total * expected).collect()
                } else {
                    counts.values().to_vec()
                };
                match meta.declared_total {
                    Some(t) => ContingencyTable::with_declared_total(counts.dims().to_vec(), values, t),
                    None => counts.with_values(values, TableKind::Probability),
                }
                .map_err(|e| err(e.to_string()))?
            }
            _ => counts.with_values(counts.values().to_vec(), kind)?,
        }
    } else {
        if kind != TableKind::Probability {
            return Err(err("only probability tables can be conditional".into()));
        }
        let cond: Vec<&str> = meta.conditional_on.iter().map(String::as_str).collect();
        for c in &cond {
            if !counts.has_dim(c) {
                return Err(err(format!("conditioning dimension `{c}` is not a column")));
            }
        }
        if cond.len() == counts.dims().len() {
            return Err(err("a table cannot be conditional on all its dimensions".into()));
        }
        let sums = slice_sums(&counts, &cond)?;
        for (i, &s) in sums.values().iter().enumerate() {
            let off = (s - 1.0).abs();
            let tol = if meta.normalize {
                meta.rounding_tolerance
            } else {
                crate::table::PROBABILITY_TOTAL_TOL
            };
            if off > tol {
                return Err(err(format!(
                    "conditional slice {} sums to {s}, expected 1",
                    sums.describe_cell(i)
                )));
            }
        }
        let marginal = options.marginal.as_ref().ok_or_else(|| {
            err(format!(
                "table is conditional on {}; a marginal over those dimensions is required",
                cond.join(", ")
            ))
        })?;
        let mut m_names: Vec<&str> = marginal.names();
        m_names.sort_unstable();
        let mut c_sorted = cond.clone();
        c_sorted.sort_unstable();
        if m_names != c_sorted {
            return Err(err(format!(
                "marginal is over {} but the table is conditional on {}",
                m_names.join(", "),
                c_sorted.join(", ")
            )));
        }
        let sums_b = sums.broadcast(counts.dims())?;
        let m_b = marginal.broadcast(counts.dims()).map_err(|e| err(e.to_string()))?;
        let values: Vec<f64> = counts
            .values()
            .iter()
            .zip(sums_b.values())
            .zip(m_b.values())
            .map(|((v, s), m)| if meta.normalize { v / s * m } else { v * m })
            .collect();
        match marginal.kind() {
            TableKind::Probability => match marginal.declared_total() {
                Some(t) => ContingencyTable::with_declared_total(counts.dims().to_vec(), values, t),
                None => counts.with_values(values, TableKind::Probability),
            },
            _ => counts.with_values(values, TableKind::Count),
        }
        .map_err(|e| err(e.to_string()))?
    };
    if let Some(expected) = &options.expected_dims {
        check_expected(path, &table, expected)?;
    }
    Ok(table)
}

fn format_value(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `table` in long format with a sidecar that reads back to the
/// identical table.
pub fn write_table(path: &Path, table: &ContingencyTable, note: Option<&str>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = table.names();
    header.push("value");
    wtr.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, v) in table.values().iter().enumerate() {
        let mut rec: Vec<String> = table.cell_labels(i).into_iter().map(str::to_string).collect();
        rec.push(format_value(*v));
        wtr.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let units = match table.kind() {
        TableKind::Probability => Units::Fraction,
        TableKind::Count => Units::Count,
        TableKind::Rate => Units::Rate,
    };
    let meta = TableMeta {
        kind: table.kind().as_str().to_string(),
        units,
        conditional_on: Vec::new(),
        normalize: false,
        rounding_tolerance: default_rounding(),
        declared_total: table.declared_total(),
        levels: table
            .dims()
            .iter()
            .map(|d| (d.name().to_string(), d.levels().to_vec()))
            .collect(),
        note: note.map(str::to_string),
    };
    let meta_text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path, &bytes)?;
    write_atomic(&meta_path(path), meta_text.as_bytes())
}
