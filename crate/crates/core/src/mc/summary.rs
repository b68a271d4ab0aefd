use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::ReplicateMatrix;
use crate::table::{ContingencyTable, DimensionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean: f64,
    /// Unbiased sample variance; zero for a single replicate.
    pub variance: f64,
    /// Count bounds, one pair per CI level.
    pub bounds: Vec<(f64, f64)>,
    pub exposure: f64,
    /// Count bounds divided by exposure; `None` where exposure is zero.
    pub rate_bounds: Vec<Option<(f64, f64)>>,
}

impl CellSummary {
    pub fn mean_rate(&self) -> Option<f64> {
        (self.exposure > 0.0).then(|| self.mean / self.exposure)
    }

    /// `(upper - lower) / mean` for the first CI level.
    pub fn relative_width(&self) -> Option<f64> {
        let (lo, hi) = *self.bounds.first()?;
        (self.mean > 0.0).then(|| (hi - lo) / self.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub dims: Vec<DimensionSpec>,
    pub cells: Vec<CellSummary>,
    pub ci_levels: Vec<(f64, f64)>,
    pub replicates: usize,
    pub seed: u64,
}

/// Empirical percentile of sorted data, interpolating linearly between the
/// closest order statistics: position `(n - 1) * p / 100`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_u32(sorted: &[u32], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] as f64 + (h - lo as f64) * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Summarizes one cell's draws. Sorts `draws` in place.
pub fn summarize_cell(draws: &mut [u32], exposure: f64, ci_levels: &[(f64, f64)]) -> CellSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().map(|&d| d as f64).sum::<f64>() / n;
    let variance = if draws.len() > 1 {
        draws.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    draws.sort_unstable();
    let bounds: Vec<(f64, f64)> = ci_levels
        .iter()
        .map(|&(lo, hi)| (percentile_u32(draws, lo), percentile_u32(draws, hi)))
        .collect();
    let rate_bounds = bounds
        .iter()
        .map(|&(lo, hi)| (exposure > 0.0).then(|| (lo / exposure, hi / exposure)))
        .collect();
    CellSummary {
        mean,
        variance,
        bounds,
        exposure,
        rate_bounds,
    }
}

pub fn summarize(
    replicates: &ReplicateMatrix,
    exposure: &ContingencyTable,
    ci_levels: &[(f64, f64)],
) -> Result<SimulationSummary> {
    if replicates.cells() != exposure.len() {
        return Err(Error::ConstraintMismatch(format!(
            "{} replicate rows but {} exposure cells",
            replicates.cells(),
            exposure.len()
        )));
    }
    let cells = (0..replicates.cells())
        .map(|c| {
            let mut row = replicates.row(c).to_vec();
            summarize_cell(&mut row, exposure.values()[c], ci_levels)
        })
        .collect();
    Ok(SimulationSummary {
        dims: exposure.dims().to_vec(),
        cells,
        ci_levels: ci_levels.to_vec(),
        replicates: replicates.replicates(),
        seed: 0,
    })
}

/// Monte Carlo standard error of the sample mean, `sqrt(s^2 / n)`.
pub fn mc_standard_error(sample: &[f64]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: sample.len(),
        });
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Order-statistic percentile computed the long way: rank by counting.
    fn oracle_percentile(data: &[f64], p: f64) -> f64 {
        let n = data.len();
        let h = (n - 1) as f64 * p / 100.0;
        let k = h.floor() as usize;
        let kth = |k: usize| {
            *data
                .iter()
                .find(|&&x| {
                    let below = data.iter().filter(|&&y| y < x).count();
                    let equal = data.iter().filter(|&&y| y == x).count();
                    below <= k && k < below + equal
                })
                .unwrap()
        };
        let lo = kth(k);
        let hi = kth((k + 1).min(n - 1));
        lo + (h - k as f64) * (hi - lo)
    }

    #[test]
    fn constant_sample() {
        let mut d = vec![7u32; 50];
        let s = summarize_cell(&mut d, 10.0, &[(2.5, 97.5)]);
        assert_eq!(s.mean, 7.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.bounds, vec![(7.0, 7.0)]);
        assert_eq!(s.rate_bounds, vec![Some((0.7, 0.7))]);
    }

    #[test]
    fn percentiles_of_zero_to_99() {
        let data: Vec<f64> = (0..100).rev().map(f64::from).collect();
        let lo = oracle_percentile(&data, 2.5);
        let hi = oracle_percentile(&data, 97.5);
        assert!((lo - 2.475).abs() < 1e-12);
        assert!((hi - 96.525).abs() < 1e-12);

        let mut draws: Vec<u32> = (0..100).rev().collect();
        let s = summarize_cell(&mut draws, 1.0, &[(2.5, 97.5)]);
        assert!((s.bounds[0].0 - lo).abs() < 1e-12);
        assert!((s.bounds[0].1 - hi).abs() < 1e-12);
    }

    #[test]
    fn zero_exposure_flags_rate_bounds() {
        let mut d = vec![0u32, 1, 2];
        let s = summarize_cell(&mut d, 0.0, &[(2.5, 97.5)]);
        assert_eq!(s.rate_bounds, vec![None]);
        assert_eq!(s.mean_rate(), None);
    }

    #[test]
    fn standard_error() {
        assert_eq!(mc_standard_error(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!((mc_standard_error(&[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            mc_standard_error(&[1.0]),
            Err(Error::InsufficientSample { .. })
        ));
    }
}
