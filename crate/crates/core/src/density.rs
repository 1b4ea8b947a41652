//! One-dimensional marginal densities from moments via the Gram-Charlier
//! type A series
//!
//! ```text
//! f(x) = [1 + Σ_{r=1}^{N} C_r / (r! σ^r) He_r((x - μ)/σ)] φ_{μ,σ}(x)
//! ```
//!
//! where `C_r` is the complete Bell polynomial of the cumulant differences
//! between the target and the auxiliary Gaussian `N(μ, σ²)`. The series
//! integrates to one but is not guaranteed to be non-negative.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use crate::pce::{LeastSquaresSolver, PceBasis, PceFit};
use crate::propagation::{solution_moment, LinearNoiseState, Snapshot};
use crate::stats::pairwise_sum;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Probabilists' Hermite polynomial `He_r(x)`.
pub fn hermite(r: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if r == 0 {
        return prev;
    }
    for k in 1..r {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `He_0(x), ..., He_max(x)`.
pub fn hermite_all(max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    out.push(1.0);
    if max >= 1 {
        out.push(x);
    }
    for k in 1..max {
        out.push(x * out[k] - k as f64 * out[k - 1]);
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Complete Bell polynomial `B_r(x_1, ..., x_r)`, with `B_0 = 1`.
///
/// Only the first `r` entries of `x` are used.
pub fn complete_bell(r: usize, x: &[f64]) -> f64 {
    complete_bell_all(r, x)[r]
}

/// `B_0, ..., B_r` via `B_{n+1} = Σ_i C(n, i) B_{n-i} x_{i+1}`.
pub fn complete_bell_all(r: usize, x: &[f64]) -> Vec<f64> {
    assert!(x.len() >= r, "need {r} arguments, got {}", x.len());
    let mut b = vec![0.0; r + 1];
    b[0] = 1.0;
    for n in 0..r {
        b[n + 1] = (0..=n).map(|i| binomial(n, i) * b[n - i] * x[i]).sum();
    }
    b
}

/// Cumulants `κ_1..κ_N` from raw moments `m_1..m_N`.
pub fn moments_to_cumulants(moments: &[f64]) -> Vec<f64> {
    let n = moments.len();
    let m = |r: usize| if r == 0 { 1.0 } else { moments[r - 1] };
    let mut kappa: Vec<f64> = Vec::with_capacity(n);
    for r in 1..=n {
        let mut value = m(r);
        for i in 1..r {
            value -= binomial(r - 1, i - 1) * kappa[i - 1] * m(r - i);
        }
        kappa.push(value);
    }
    kappa
}

/// Raw moments `m_1..m_N` from cumulants, `m_r = B_r(κ_1, ..., κ_r)`.
pub fn cumulants_to_moments(kappa: &[f64]) -> Vec<f64> {
    complete_bell_all(kappa.len(), kappa)[1..].to_vec()
}

/// `C_1..C_N` for a target with raw moments `m_1..m_N` against the
/// Gaussian `N(μ, σ²)`.
pub fn gc_coefficients(moments: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    let mut diff = moments_to_cumulants(moments);
    if let Some(k1) = diff.get_mut(0) {
        *k1 -= mu;
    }
    if let Some(k2) = diff.get_mut(1) {
        *k2 -= sigma * sigma;
    }
    complete_bell_all(diff.len(), &diff)[1..].to_vec()
}

/// Gram-Charlier type A density around `N(μ, σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcDensity {
    mu: f64,
    sigma: f64,
    coefficients: Vec<f64>,
    /// `C_r / (r! σ^r)`, precomputed for evaluation.
    scaled: Vec<f64>,
}

impl GcDensity {
    pub fn new(mu: f64, sigma: f64, coefficients: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "auxiliary Gaussian needs finite mean and positive deviation, got ({mu}, {sigma})"
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("Gram-Charlier coefficients".into()));
        }
        let mut factor = 1.0;
        let scaled = coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                factor *= (i + 1) as f64 * sigma;
                c / factor
            })
            .collect();
        Ok(GcDensity {
            mu,
            sigma,
            coefficients,
            scaled,
        })
    }

    /// Density built from the raw moments `m_1..m_N` of the target.
    pub fn from_moments(moments: &[f64], mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, gc_coefficients(moments, mu, sigma))
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let u = (x - self.mu) / self.sigma;
        let he = hermite_all(self.coefficients.len(), u);
        let series: f64 = 1.0
            + self
                .scaled
                .iter()
                .zip(&he[1..])
                .map(|(c, h)| c * h)
                .sum::<f64>();
        series * (-0.5 * u * u).exp() * INV_SQRT_2PI / self.sigma
    }
}

/// Auxiliary Gaussian parameters of component `k` from the order-1
/// truncation: `μ = x_c + E[z]` and `σ² = E[z²] - E[z]²`.
pub fn auxiliary_params(
    linear: &LinearNoiseState,
    central: &[f64],
    k: usize,
) -> Result<(f64, f64)> {
    let mean = linear.mean[k];
    let mut variance = linear.second_moment[(k, k)] - mean * mean;
    if variance < -1e-12 {
        return Err(Error::NonFinite(format!(
            "negative variance {variance:e} for component {k}"
        )));
    }
    if variance < 0.0 {
        variance = 0.0;
    }
    if variance == 0.0 {
        return Err(Error::DegenerateAuxiliary {
            component: k,
            variance,
        });
    }
    Ok((central[k] + mean, variance.sqrt()))
}

/// Raw moments `E[X_k^p]`, `p = 1..N`, of component `k` at a snapshot.
pub fn marginal_moments(snapshot: &Snapshot, k: usize) -> Result<Vec<f64>> {
    let v = snapshot.table.dim();
    (1..=snapshot.table.order())
        .map(|p| {
            let mut r = vec![0u32; v];
            r[k] = p as u32;
            solution_moment(&snapshot.central, &snapshot.table, &MultiIndex::new(r))
        })
        .collect()
}

/// Gram-Charlier marginal of component `k` for a fixed initial state.
pub fn marginal_density(snapshot: &Snapshot, k: usize) -> Result<GcDensity> {
    let (mu, sigma) = auxiliary_params(&snapshot.linear, &snapshot.central, k)?;
    GcDensity::from_moments(&marginal_moments(snapshot, k)?, mu, sigma)
}

/// Chaos-expansion surrogates of `μ`, `σ` and `C_1..C_N` for one component.
#[derive(Clone, Debug)]
pub struct DensitySurrogates {
    pub component: usize,
    pub mu: PceFit,
    pub sigma: PceFit,
    pub coefficients: Vec<PceFit>,
}

impl DensitySurrogates {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Largest condition number and residual norm over all fits.
    pub fn diagnostics(&self) -> (f64, f64) {
        std::iter::once(&self.mu)
            .chain(std::iter::once(&self.sigma))
            .chain(&self.coefficients)
            .fold((0.0, 0.0), |(c, r), fit| {
                (
                    f64::max(c, fit.condition_number),
                    f64::max(r, fit.residual_norm),
                )
            })
    }
}

/// Fits surrogates for component `k` from per-sample densities (one per
/// row of the solver's design matrix).
pub fn fit_density_surrogates(
    solver: &LeastSquaresSolver,
    densities: &[GcDensity],
    k: usize,
) -> Result<DensitySurrogates> {
    let order = densities.first().map(GcDensity::order).unwrap_or(0);
    if densities.iter().any(|d| d.order() != order) {
        return Err(Error::InvalidArgument(
            "densities of differing order".into(),
        ));
    }
    let mu: Vec<f64> = densities.iter().map(|d| d.mu).collect();
    let sigma: Vec<f64> = densities.iter().map(|d| d.sigma).collect();
    let coefficients = (0..order)
        .map(|r| {
            let target: Vec<f64> = densities.iter().map(|d| d.coefficients[r]).collect();
            solver.solve(&target)
        })
        .collect::<Result<_>>()?;
    Ok(DensitySurrogates {
        component: k,
        mu: solver.solve(&mu)?,
        sigma: solver.solve(&sigma)?,
        coefficients,
    })
}

/// Share of skipped mixture samples above which the mixture is rejected.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

/// Equal-weight mixture of Gram-Charlier densities.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDensity {
    components: Vec<GcDensity>,
    skipped: usize,
}

impl MixtureDensity {
    pub fn new(components: Vec<GcDensity>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DegenerateSamples("empty mixture".into()));
        }
        Ok(MixtureDensity {
            components,
            skipped: 0,
        })
    }

    /// Evaluates the surrogates at each fresh initial state. States where
    /// the surrogate deviation is not positive are skipped; more than
    /// [`MAX_SKIPPED_FRACTION`] of them is an error.
    pub fn from_surrogates(
        surrogates: &DensitySurrogates,
        basis: &PceBasis,
        fresh_samples: &[Vec<f64>],
    ) -> Result<Self> {
        let total = fresh_samples.len();
        if total == 0 {
            return Err(Error::TooFewSamples {
                required: 1,
                actual: 0,
            });
        }
        let mut components = Vec::with_capacity(total);
        for x0 in fresh_samples {
            let phi = basis.evaluate_all(x0)?;
            let sigma = surrogates.sigma.predict(&phi);
            if !(sigma > 0.0) {
                continue;
            }
            let mu = surrogates.mu.predict(&phi);
            let coefficients = surrogates
                .coefficients
                .iter()
                .map(|f| f.predict(&phi))
                .collect();
            components.push(GcDensity::new(mu, sigma, coefficients)?);
        }
        let skipped = total - components.len();
        if components.is_empty() || skipped as f64 > MAX_SKIPPED_FRACTION * total as f64 {
            return Err(Error::TooManySkipped { skipped, total });
        }
        Ok(MixtureDensity {
            components,
            skipped,
        })
    }

    pub fn components(&self) -> &[GcDensity] {
        &self.components
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let values: Vec<f64> = self.components.iter().map(|c| c.pdf(x)).collect();
        pairwise_sum(&values) / values.len() as f64
    }

    /// Values on a grid; grid points are evaluated in parallel.
    pub fn pdf_grid(&self, grid: &[f64]) -> Vec<f64> {
        grid.par_iter().map(|&x| self.pdf(x)).collect()
    }
}

/// Total variation distance `½ ∫ |f - g|` of two densities tabulated on the
/// same grid, by the trapezoidal rule.
pub fn tvd(grid: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "grid has {} points, densities have {} and {}",
            grid.len(),
            f.len(),
            g.len()
        )));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch(
            "grid must be strictly increasing".into(),
        ));
    }
    let pieces: Vec<f64> = (1..grid.len())
        .map(|i| {
            let a = (f[i - 1] - g[i - 1]).abs();
            let b = (f[i] - g[i]).abs();
            0.5 * (grid[i] - grid[i - 1]) * (a + b)
        })
        .collect();
    Ok(0.5 * pairwise_sum(&pieces))
}
