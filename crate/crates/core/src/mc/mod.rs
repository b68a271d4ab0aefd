//! Poisson Monte Carlo replicates of death counts and their summaries.

mod poisson;
mod summary;

pub use poisson::{sample_poisson, DrawStream, PoissonSampler, INVERSION_CUTOFF};
pub use summary::{
    mc_standard_error, percentile, summarize, summarize_cell, CellSummary, SimulationSummary,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::ContingencyTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub replicates: usize,
    pub rng_seed: u64,
    /// Percentile pairs, e.g. `(2.5, 97.5)`.
    pub ci_levels: Vec<(f64, f64)>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            replicates: 10_000,
            rng_seed: 42,
            ci_levels: vec![(2.5, 97.5)],
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidSpec("replicates must be at least 1".into()));
        }
        if self.ci_levels.is_empty() {
            return Err(Error::InvalidSpec("at least one CI level is required".into()));
        }
        for &(lo, hi) in &self.ci_levels {
            if !(lo > 0.0 && hi < 100.0 && lo < hi) {
                return Err(Error::InvalidSpec(format!(
                    "CI percentiles must satisfy 0 < lower < upper < 100, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Draws per cell, stored cell-major: `draws[cell * replicates + r]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicateMatrix {
    cells: usize,
    replicates: usize,
    draws: Vec<u32>,
}

impl ReplicateMatrix {
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Result<Self> {
        let replicates = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || replicates == 0 {
            return Err(Error::InvalidSpec("replicate matrix is empty".into()));
        }
        if rows.iter().any(|r| r.len() != replicates) {
            return Err(Error::InvalidSpec("replicate rows have different lengths".into()));
        }
        Ok(Self {
            cells: rows.len(),
            replicates,
            draws: rows.into_iter().flatten().collect(),
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn row(&self, cell: usize) -> &[u32] {
        &self.draws[cell * self.replicates..(cell + 1) * self.replicates]
    }

    pub fn get(&self, cell: usize, replicate: usize) -> u32 {
        self.draws[cell * self.replicates + replicate]
    }
}

fn check_intensities(lambda: &ContingencyTable) -> Result<()> {
    // table construction already rules out negative or non-finite values,
    // this guards the u32 storage
    if let Some((cell, &value)) = lambda
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0 && **v < 1e9))
    {
        return Err(Error::InvalidIntensity { cell, value });
    }
    Ok(())
}

/// Poisson draws for one cell, replicate by replicate.
pub fn simulate_cell(lambda: f64, cell: usize, config: &SimulationConfig) -> Vec<u32> {
    let mut stream = DrawStream::new(config.rng_seed, cell as u64);
    let sampler = PoissonSampler::new(lambda);
    (0..config.replicates)
        .map(|_| sampler.sample(&mut stream) as u32)
        .collect()
}

/// Independent Poisson(`lambda`) draws for every cell and replicate.
pub fn simulate(lambda: &ContingencyTable, config: &SimulationConfig) -> Result<ReplicateMatrix> {
    config.validate()?;
    check_intensities(lambda)?;
    let rows: Vec<Vec<u32>> = lambda
        .values()
        .par_iter()
        .enumerate()
        .map(|(cell, &l)| simulate_cell(l, cell, config))
        .collect();
    ReplicateMatrix::from_rows(rows)
}

/// Simulates and summarizes cell by cell without holding the full matrix.
/// Gives the same result as `summarize(&simulate(..), ..)`.
pub fn simulate_summary(
    lambda: &ContingencyTable,
    exposure: &ContingencyTable,
    config: &SimulationConfig,
) -> Result<SimulationSummary> {
    config.validate()?;
    check_intensities(lambda)?;
    if lambda.dims() != exposure.dims() {
        return Err(Error::ConstraintMismatch(
            "intensity and exposure tables have different dimensions".into(),
        ));
    }
    let cells: Vec<CellSummary> = lambda
        .values()
        .par_iter()
        .zip(exposure.values().par_iter())
        .enumerate()
        .map(|(cell, (&l, &e))| {
            let mut draws = simulate_cell(l, cell, config);
            summarize_cell(&mut draws, e, &config.ci_levels)
        })
        .collect();
    Ok(SimulationSummary {
        dims: lambda.dims().to_vec(),
        cells,
        ci_levels: config.ci_levels.clone(),
        replicates: config.replicates,
        seed: config.rng_seed,
    })
}

/// Summaries of draws summed over every dimension not in `keep`.
///
/// Each joint cell uses its own stream, so the aggregate is the sum of the
/// very draws that [`simulate_summary`] produces for the member cells.
pub fn simulate_aggregated_summary(
    lambda: &ContingencyTable,
    exposure: &ContingencyTable,
    keep: &[&str],
    config: &SimulationConfig,
) -> Result<SimulationSummary> {
    Ok(simulate_with_aggregate(lambda, exposure, keep, config)?.1)
}

/// Joint and aggregated summaries from a single pass over the draws.
pub fn simulate_with_aggregate(
    lambda: &ContingencyTable,
    exposure: &ContingencyTable,
    keep: &[&str],
    config: &SimulationConfig,
) -> Result<(SimulationSummary, SimulationSummary)> {
    config.validate()?;
    check_intensities(lambda)?;
    if lambda.dims() != exposure.dims() {
        return Err(Error::ConstraintMismatch(
            "intensity and exposure tables have different dimensions".into(),
        ));
    }
    let totals = exposure.marginalize(keep)?;
    let proj = lambda.projection_onto(totals.dims())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); totals.len()];
    for (cell, &p) in proj.iter().enumerate() {
        members[p].push(cell);
    }
    let groups: Vec<(CellSummary, Vec<(usize, CellSummary)>)> = members
        .par_iter()
        .zip(totals.values().par_iter())
        .map(|(cells, &e)| {
            let mut sum = vec![0u32; config.replicates];
            let mut own = Vec::with_capacity(cells.len());
            for &cell in cells {
                let mut draws = simulate_cell(lambda.values()[cell], cell, config);
                for (s, d) in sum.iter_mut().zip(&draws) {
                    *s += d;
                }
                own.push((
                    cell,
                    summarize_cell(&mut draws, exposure.values()[cell], &config.ci_levels),
                ));
            }
            (summarize_cell(&mut sum, e, &config.ci_levels), own)
        })
        .collect();
    let mut joint: Vec<Option<CellSummary>> = vec![None; lambda.len()];
    let mut aggregated = Vec::with_capacity(groups.len());
    for (agg, own) in groups {
        aggregated.push(agg);
        for (cell, s) in own {
            joint[cell] = Some(s);
        }
    }
    let summary = |dims: &[crate::table::DimensionSpec], cells| SimulationSummary {
        dims: dims.to_vec(),
        cells,
        ci_levels: config.ci_levels.clone(),
        replicates: config.replicates,
        seed: config.rng_seed,
    };
    Ok((
        summary(
            lambda.dims(),
            joint.into_iter().map(|c| c.expect("every cell has a group")).collect(),
        ),
        summary(totals.dims(), aggregated),
    ))
}
