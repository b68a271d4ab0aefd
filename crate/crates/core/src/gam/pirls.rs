use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::design::{Design, PenaltyBlock};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PirlsConfig {
    pub max_iterations: usize,
    /// Relative change in penalized deviance that ends the iteration.
    pub tolerance: f64,
    /// Extra Newton steps after convergence while the score exceeds this.
    pub score_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for PirlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            score_tolerance: 1e-9,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PirlsFit {
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    pub edf: f64,
    /// Effective degrees of freedom of each penalty block.
    pub block_edf: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized deviance after each accepted iteration.
    pub deviance_history: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// Poisson deviance `2 sum [y log(y / mu) - (y - mu)]`.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let t = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            t - (y - m)
        })
        .sum::<f64>()
}

/// Sum of `lambda * S` over the blocks, as a full matrix.
pub fn total_penalty(p: usize, blocks: &[PenaltyBlock], lambdas: &[f64]) -> Result<DMatrix<f64>> {
    let mut s = DMatrix::<f64>::zeros(p, p);
    for b in blocks {
        let lambda = *lambdas.get(b.lambda_index).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "penalty block needs smoothing parameter {}, only {} given",
                b.lambda_index,
                lambdas.len()
            ))
        })?;
        let k = b.size();
        let mut view = s.view_mut((b.start, b.start), (k, k));
        view += &b.matrix * lambda;
    }
    Ok(s)
}

fn linear_predictor(design: &Design, beta: &DVector<f64>) -> Vec<f64> {
    let eta = &design.x * beta;
    eta.iter().zip(&design.offset).map(|(e, o)| e + o).collect()
}

/// Penalized Poisson log-likelihood `sum [y eta - exp(eta)] - beta' S beta / 2`,
/// dropping the `log y!` constant.
pub fn penalized_log_likelihood(design: &Design, lambdas: &[f64], beta: &[f64]) -> Result<f64> {
    let b = DVector::from_column_slice(beta);
    let s = total_penalty(design.x.ncols(), &design.penalties, lambdas)?;
    let eta = linear_predictor(design, &b);
    let ll: f64 = eta.iter().zip(&design.counts).map(|(&e, &y)| y * e - e.exp()).sum();
    Ok(ll - 0.5 * b.dot(&(&s * &b)))
}

/// Gradient of [`penalized_log_likelihood`]: `X'(y - mu) - S beta`.
pub fn penalized_score(design: &Design, lambdas: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(beta);
    let s = total_penalty(design.x.ncols(), &design.penalties, lambdas)?;
    let eta = linear_predictor(design, &b);
    let resid = DVector::from_iterator(
        eta.len(),
        eta.iter().zip(&design.counts).map(|(&e, &y)| y - e.exp()),
    );
    let g = design.x.transpose() * resid - s * b;
    Ok(g.iter().copied().collect())
}

const MAX_POLISH_STEPS: usize = 5;

struct Step {
    beta: DVector<f64>,
    mu: Vec<f64>,
    pen_dev: f64,
}

/// Square roots `R` (with `S = R'R`) of the scaled penalty blocks, so the
/// penalty `beta'S beta` is a sum of squares and keeps its precision under
/// very large smoothing parameters.
struct PenaltyRoots(Vec<(usize, DMatrix<f64>)>);

impl PenaltyRoots {
    fn new(blocks: &[PenaltyBlock], lambdas: &[f64]) -> Self {
        let roots = blocks
            .iter()
            .map(|b| {
                let eig = b.matrix.clone().symmetric_eigen();
                let lambda = lambdas[b.lambda_index];
                let mut r = eig.eigenvectors.transpose();
                for (i, &l) in eig.eigenvalues.iter().enumerate() {
                    r.row_mut(i).scale_mut((lambda * l.max(0.0)).sqrt());
                }
                (b.start, r)
            })
            .collect();
        Self(roots)
    }

    fn quadratic(&self, beta: &DVector<f64>) -> f64 {
        self.0
            .iter()
            .map(|(start, r)| (r * beta.rows(*start, r.ncols())).norm_squared())
            .sum()
    }
}

fn evaluate(design: &Design, roots: &PenaltyRoots, beta: DVector<f64>) -> Option<Step> {
    let eta = linear_predictor(design, &beta);
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
        return None;
    }
    let pen_dev = poisson_deviance(&design.counts, &mu) + roots.quadratic(&beta);
    pen_dev.is_finite().then_some(Step { beta, mu, pen_dev })
}

/// Solves the symmetric positive (semi)definite system. A numerically
/// singular matrix (a rank-deficient unpenalized design) gets the
/// minimum-norm solution from its eigendecomposition.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        let resid = (a * &x - b).amax();
        if resid <= 1e-10 * (b.amax() + a.amax() * x.amax()) {
            return Ok(x);
        }
    }
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top.is_finite() && top > 0.0) {
        return Err(Error::Numerical("penalized normal equations are singular".into()));
    }
    let cut = top * 1e-13 * a.nrows() as f64;
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(p, &l)| if l > cut { p / l } else { 0.0 }),
    );
    Ok(&eig.eigenvectors * scaled)
}

fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    solve_spd_matrix(a, &DMatrix::identity(n, n))
}

fn solve_spd_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    for j in 0..b.ncols() {
        let col = solve_spd(a, &b.column(j).into_owned())?;
        out.set_column(j, &col);
    }
    Ok(out)
}

fn weighted_cross_product(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(wi);
    }
    x.transpose() * xw
}

/// Penalized iteratively reweighted least squares for a log-link Poisson
/// model with offset. Non-convergence is reported through the flag.
pub fn fit_pirls(design: &Design, lambdas: &[f64], config: &PirlsConfig) -> Result<PirlsFit> {
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidSpec("smoothing parameters must be finite and >= 0".into()));
    }
    if design.counts.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
        return Err(Error::InvalidSpec("counts must be finite and >= 0".into()));
    }
    let p = design.x.ncols();
    let n = design.x.nrows();
    let s = total_penalty(p, &design.penalties, lambdas)?;
    let roots = PenaltyRoots::new(&design.penalties, lambdas);
    let y = &design.counts;

    // start from mu = y + 0.1 on the working scale
    let mut mu: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
    let mut eta_free: Vec<f64> = mu.iter().zip(&design.offset).map(|(m, o)| m.ln() - o).collect();
    let mut current: Option<Step> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut polish_steps = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let z = DVector::from_iterator(
            n,
            (0..n).map(|i| eta_free[i] + (y[i] - mu[i]) / mu[i]),
        );
        let xtwx = weighted_cross_product(&design.x, &mu);
        let a = &xtwx + &s;
        // after the first step, solve for the increment so that precision
        // is relative to the score rather than to the coefficients
        let proposal = match &current {
            None => {
                let wz = DVector::from_iterator(n, (0..n).map(|i| mu[i] * z[i]));
                solve_spd(&a, &(design.x.transpose() * wz))?
            }
            Some(prev) => {
                let resid = DVector::from_iterator(n, (0..n).map(|i| y[i] - mu[i]));
                let grad = design.x.transpose() * resid - &s * &prev.beta;
                &prev.beta + solve_spd(&a, &grad)?
            }
        };

        let accepted = match &current {
            None => evaluate(design, &roots, proposal),
            Some(prev) => {
                let mut candidate = proposal;
                let mut found = None;
                for _ in 0..=config.max_halvings {
                    if let Some(step) = evaluate(design, &roots, candidate.clone()) {
                        if step.pen_dev <= prev.pen_dev * (1.0 + 1e-12) + 1e-12 {
                            found = Some(step);
                            break;
                        }
                    }
                    candidate = (&candidate + &prev.beta) * 0.5;
                }
                found
            }
        };
        let Some(step) = accepted else {
            break;
        };
        let change = current
            .as_ref()
            .map(|prev| (prev.pen_dev - step.pen_dev).abs() / (step.pen_dev.abs() + 0.1));
        history.push(step.pen_dev);
        mu = step.mu.clone();
        eta_free = (&design.x * &step.beta).iter().copied().collect();
        current = Some(step);

        if change.is_some_and(|c| c < config.tolerance) || polish_steps > 0 {
            converged = true;
            let beta: Vec<f64> = current.as_ref().unwrap().beta.iter().copied().collect();
            let score = penalized_score(design, lambdas, &beta)?;
            let scale = 1.0 + y.iter().sum::<f64>().sqrt();
            if score.iter().all(|g| g.abs() <= config.score_tolerance * scale) {
                break;
            }
            if polish_steps >= MAX_POLISH_STEPS || change.is_some_and(|c| c == 0.0) {
                break;
            }
            polish_steps += 1;
        }
    }

    let step = current.ok_or_else(|| Error::Numerical("no finite P-IRLS step".into()))?;
    let xtwx = weighted_cross_product(&design.x, &step.mu);
    let inv = inverse_spd(&(&xtwx + &s))?;
    let influence = inv * &xtwx;
    let edf = influence.trace();
    let block_edf = design
        .penalties
        .iter()
        .map(|b| (b.start..b.start + b.size()).map(|j| influence[(j, j)]).sum())
        .collect();
    let deviance = poisson_deviance(y, &step.mu).max(0.0);
    Ok(PirlsFit {
        coefficients: step.beta.iter().copied().collect(),
        lambdas: lambdas.to_vec(),
        deviance,
        penalized_deviance: step.pen_dev,
        edf,
        block_edf,
        converged,
        iterations,
        deviance_history: history,
        fitted: step.mu,
    })
}
