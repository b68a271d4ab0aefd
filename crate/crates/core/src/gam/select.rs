use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gam::design::Design;
use crate::gam::pirls::{fit_pirls, PirlsConfig, PirlsFit};

/// Outcome of a grid search, with the score of every candidate (`None`
/// where the fit failed or had no residual degrees of freedom).
#[derive(Debug, Clone)]
pub struct Selection {
    pub lambdas: Vec<f64>,
    pub score: f64,
    pub fit: PirlsFit,
    pub scores: Vec<(Vec<f64>, Option<f64>)>,
}

/// Cartesian product of `values` over `k` smoothing parameters.
pub fn lambda_grid(values: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![Vec::new()];
    for _ in 0..k {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    grid
}

/// `n * deviance / (n - edf)^2`.
pub fn gcv_score(n: usize, fit: &PirlsFit) -> Option<f64> {
    let n = n as f64;
    let resid_df = n - fit.edf;
    (resid_df > 0.0 && fit.deviance.is_finite()).then(|| n * fit.deviance / (resid_df * resid_df))
}

fn is_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-12
}

/// Orders candidates by smoothness: larger total, then larger componentwise.
fn smoother(a: &[f64], b: &[f64]) -> bool {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sa != sb {
        return sa > sb;
    }
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x > y)
}

/// Fits every grid point (in parallel) and returns the one with the lowest
/// GCV score; near-ties go to the smoother candidate.
pub fn select_smoothing(design: &Design, grid: &[Vec<f64>], config: &PirlsConfig) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidSpec("smoothing grid is empty".into()));
    }
    if grid.iter().flatten().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidSpec("smoothing grid values must be finite and >= 0".into()));
    }
    let n = design.x.nrows();
    let fits: Vec<Option<PirlsFit>> = grid
        .par_iter()
        .map(|l| fit_pirls(design, l, config).ok().filter(|f| f.converged))
        .collect();
    let scores: Vec<(Vec<f64>, Option<f64>)> = grid
        .iter()
        .zip(&fits)
        .map(|(l, f)| (l.clone(), f.as_ref().and_then(|f| gcv_score(n, f))))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, (l, score)) in scores.iter().enumerate() {
        let Some(score) = *score else { continue };
        best = match best {
            None => Some((i, score)),
            Some((j, b)) => {
                let better = if is_tie(score, b) {
                    smoother(l, &grid[j])
                } else {
                    score < b
                };
                Some(if better { (i, score) } else { (j, b) })
            }
        };
    }
    let (i, score) = best.ok_or(Error::SelectionFailure)?;
    let fit = fits[i].clone().expect("scored candidate has a fit");
    Ok(Selection {
        lambdas: grid[i].clone(),
        score,
        fit,
        scores,
    })
}
