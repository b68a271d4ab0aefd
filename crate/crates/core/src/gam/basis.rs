//! Cubic B-spline bases with a difference penalty and a sum-to-zero
//! constraint absorbed into the basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    /// Columns per smooth after the identifiability constraint.
    pub num_basis: usize,
    pub degree: usize,
    pub penalty_order: usize,
}

impl Default for SmoothSpec {
    fn default() -> Self {
        Self {
            num_basis: 10,
            degree: 3,
            penalty_order: 2,
        }
    }
}

impl SmoothSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::InvalidSpec("spline degree must be at least 1".into()));
        }
        if self.num_basis < self.penalty_order + 1 {
            return Err(Error::InvalidSpec(format!(
                "num_basis {} must be at least penalty order + 1 = {}",
                self.num_basis,
                self.penalty_order + 1
            )));
        }
        if self.num_basis + 1 < self.degree + 1 {
            return Err(Error::InvalidSpec(format!(
                "num_basis {} too small for degree {}",
                self.num_basis, self.degree
            )));
        }
        Ok(())
    }

    fn raw_size(&self) -> usize {
        self.num_basis + 1
    }
}

/// Knot vector with interior knots at quantiles of the distinct covariate
/// values (even spacing when quantiles collide). The `degree` outer knots on
/// each side continue the spacing of the nearest interior interval, so on
/// evenly spaced data a linear function has linearly spaced coefficients
/// and lies in the null space of the difference penalty.
pub fn quantile_knots(covariate: &str, xs: &[f64], spec: &SmoothSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut distinct: Vec<f64> = xs.to_vec();
    if distinct.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateBasis {
            covariate: covariate.into(),
            reason: "covariate has non-finite values".into(),
        });
    }
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateBasis {
            covariate: covariate.into(),
            reason: "covariate is constant".into(),
        });
    }
    let lo = distinct[0];
    let hi = *distinct.last().unwrap();
    let n_interior = spec.raw_size() - spec.degree - 1;
    let mut interior: Vec<f64> = (1..=n_interior)
        .map(|j| crate::mc::percentile(&distinct, 100.0 * j as f64 / (n_interior + 1) as f64))
        .collect();
    let strictly_inside = interior.windows(2).all(|w| w[0] < w[1])
        && interior.first().is_none_or(|&k| k > lo)
        && interior.last().is_none_or(|&k| k < hi);
    if !strictly_inside {
        interior = (1..=n_interior)
            .map(|j| lo + (hi - lo) * j as f64 / (n_interior + 1) as f64)
            .collect();
    }
    let h_lo = interior.first().map_or(hi - lo, |&k| k - lo);
    let h_hi = interior.last().map_or(hi - lo, |&k| hi - k);
    let mut knots: Vec<f64> = (1..=spec.degree).rev().map(|d| lo - d as f64 * h_lo).collect();
    knots.push(lo);
    knots.extend(interior);
    knots.push(hi);
    knots.extend((1..=spec.degree).map(|d| hi + d as f64 * h_hi));
    Ok(knots)
}

/// Values of all B-spline basis functions of `degree` at `x` (Cox-de Boor).
/// `x` is clamped into `[knots[degree], knots[len - degree - 1]]`; the right
/// end belongs to the last interval.
pub fn bspline_row(knots: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let n_basis = knots.len() - degree - 1;
    let lo = knots[degree];
    let hi = knots[n_basis];
    let x = x.clamp(lo, hi);
    // find span mu with knots[mu] <= x < knots[mu+1], mu in [degree, n_basis-1]
    let mut span = degree;
    while span < n_basis - 1 && x >= knots[span + 1] {
        span += 1;
    }
    let mut local = vec![0.0; degree + 1];
    local[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { local[r] / denom } else { 0.0 };
            local[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        local[j] = saved;
    }
    let mut row = vec![0.0; n_basis];
    for (r, v) in local.into_iter().enumerate() {
        row[span - degree + r] = v;
    }
    row
}

/// `D^T D` for the `order`-th difference operator on `size` coefficients.
pub fn difference_penalty(size: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(size, size);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::<f64>::zeros(rows, size);
        for i in 0..rows {
            for j in 0..size {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    d.transpose() * d
}

/// Orthonormal basis of the complement of `c`: columns 2.. of the
/// Householder reflection that maps `c` onto the first axis.
pub fn constraint_null_space(c: &[f64]) -> Result<DMatrix<f64>> {
    let k = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical("constraint vector is zero".into()));
    }
    let mut v = DVector::from_column_slice(c);
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    Ok(h.columns(1, k - 1).into_owned())
}

/// One smooth term: knots, the absorbed centering constraint and penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothBasis {
    pub label: String,
    pub spec: SmoothSpec,
    pub knots: Vec<f64>,
    /// Column sums of the unconstrained basis over the rows the term
    /// covers; the fitted term sums to zero over those rows.
    pub constraint: Vec<f64>,
    z: DMatrix<f64>,
}

impl SmoothBasis {
    /// Builds the term over `xs`, centering over the rows flagged in `rows`
    /// (all rows when `None`).
    pub fn fit(
        label: impl Into<String>,
        spec: SmoothSpec,
        knots: Vec<f64>,
        xs: &[f64],
        rows: Option<&[bool]>,
    ) -> Result<Self> {
        let label = label.into();
        let raw = spec.raw_size();
        let mut constraint = vec![0.0; raw];
        let mut used = 0;
        for (i, &x) in xs.iter().enumerate() {
            if rows.is_none_or(|r| r[i]) {
                for (c, b) in constraint.iter_mut().zip(bspline_row(&knots, spec.degree, x)) {
                    *c += b;
                }
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::DegenerateBasis {
                covariate: label,
                reason: "no rows cover this term".into(),
            });
        }
        Self::from_parts(label, spec, knots, constraint)
    }

    pub fn from_parts(
        label: String,
        spec: SmoothSpec,
        knots: Vec<f64>,
        constraint: Vec<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        if knots.len() != spec.raw_size() + spec.degree + 1 {
            return Err(Error::InvalidSpec(format!(
                "smooth `{label}` expects {} knots, got {}",
                spec.raw_size() + spec.degree + 1,
                knots.len()
            )));
        }
        if !knots.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec(format!(
                "knots of smooth `{label}` are not strictly increasing"
            )));
        }
        if constraint.len() != spec.raw_size() {
            return Err(Error::InvalidSpec(format!(
                "smooth `{label}` constraint has wrong length"
            )));
        }
        let z = constraint_null_space(&constraint)?;
        Ok(Self {
            label,
            spec,
            knots,
            constraint,
            z,
        })
    }

    /// Covariate interval covered by the basis; values outside are clamped.
    pub fn range(&self) -> (f64, f64) {
        let d = self.spec.degree;
        (self.knots[d], self.knots[self.knots.len() - d - 1])
    }

    pub fn num_columns(&self) -> usize {
        self.spec.num_basis
    }

    /// Constrained basis row at `x`.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let raw = DVector::from_vec(bspline_row(&self.knots, self.spec.degree, x));
        (self.z.transpose() * raw).iter().copied().collect()
    }

    /// Penalty on the constrained coefficients.
    pub fn penalty(&self) -> DMatrix<f64> {
        let s = difference_penalty(self.spec.raw_size(), self.spec.penalty_order);
        self.z.transpose() * s * &self.z
    }
}
