//! SDE models `dX = u(X, t) dt + G(X, t) dW`: drift and diffusion
//! evaluators together with their partial derivatives.
//!
//! Models supply analytic derivatives up to [`SdeModel::max_derivative_order`].
//! Beyond that order the provided helpers in [`fd`] differentiate the highest
//! analytic derivative with nested central finite differences. The fallback
//! loses accuracy quickly with the order (roughly `eps^(2/(m+2))` relative
//! for `m` extra orders), so models meant for large `N` should supply
//! analytic derivatives.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;

/// Drift, diffusion and their partial derivatives.
///
/// Implementations must be pure: identical arguments give identical
/// results, and evaluation from several threads at once is allowed.
pub trait SdeModel: Send + Sync {
    /// `v`, the dimension of the state.
    fn state_dim(&self) -> usize;

    /// `d`, the dimension of the driving noise.
    fn noise_dim(&self) -> usize;

    /// Writes `u(x, t)` into `out` (length `v`).
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Writes `G(x, t)` into `out`, row-major `v x d`.
    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Largest `|r|` for which derivatives are evaluated analytically.
    fn max_derivative_order(&self) -> usize {
        0
    }

    /// `∂^|r| u_k / ∂x^r` at `(x, t)`.
    fn drift_derivative(&self, x: &[f64], t: f64, k: usize, r: &MultiIndex) -> Result<f64> {
        fd::nested_central(
            |y| {
                let mut u = vec![0.0; self.state_dim()];
                self.drift(y, t, &mut u)?;
                Ok(u[k])
            },
            x,
            r.entries(),
        )
    }

    /// `∂^|r| G_kj / ∂x^r` at `(x, t)`.
    fn diffusion_derivative(
        &self,
        x: &[f64],
        t: f64,
        k: usize,
        j: usize,
        r: &MultiIndex,
    ) -> Result<f64> {
        let d = self.noise_dim();
        fd::nested_central(
            |y| {
                let mut g = vec![0.0; self.state_dim() * d];
                self.diffusion(y, t, &mut g)?;
                Ok(g[k * d + j])
            },
            x,
            r.entries(),
        )
    }

    /// Drift derivatives for every component and every index in `indices`,
    /// written row-major as `out[k * indices.len() + i]`.
    fn drift_jet(&self, x: &[f64], t: f64, indices: &[MultiIndex], out: &mut [f64]) -> Result<()> {
        let n = indices.len();
        for k in 0..self.state_dim() {
            for (i, r) in indices.iter().enumerate() {
                out[k * n + i] = self.drift_derivative(x, t, k, r)?;
            }
        }
        Ok(())
    }

    /// Diffusion derivatives for every entry `(k, j)` and every index,
    /// written as `out[(k * d + j) * indices.len() + i]`.
    fn diffusion_jet(
        &self,
        x: &[f64],
        t: f64,
        indices: &[MultiIndex],
        out: &mut [f64],
    ) -> Result<()> {
        let n = indices.len();
        let d = self.noise_dim();
        for k in 0..self.state_dim() {
            for j in 0..d {
                for (i, r) in indices.iter().enumerate() {
                    out[(k * d + j) * n + i] = self.diffusion_derivative(x, t, k, j, r)?;
                }
            }
        }
        Ok(())
    }
}

/// Nested central finite differences.
pub mod fd {
    use crate::error::{Error, Result};

    /// Step used for the `i`-th coordinate when `total` orders are taken
    /// numerically: `eps^(1/(total+2))` scaled by the coordinate magnitude.
    pub fn step(x: f64, total: usize) -> f64 {
        f64::EPSILON.powf(1.0 / (total as f64 + 2.0)) * x.abs().max(1.0)
    }

    /// `∂^|r| f / ∂x^r` by applying the central difference operator
    /// `δ^m f(x) = Σ_j (-1)^j C(m, j) f(x + (m/2 - j) δ) / δ^m` in each
    /// coordinate in turn.
    pub fn nested_central<F>(f: F, x: &[f64], r: &[u32]) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let total: usize = r.iter().map(|&e| e as usize).sum();
        let steps: Vec<f64> = x.iter().map(|&xi| step(xi, total)).collect();
        let mut point = x.to_vec();
        let value = recurse(&f, &mut point, x, r, &steps, 0)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("finite-difference derivative".into()));
        }
        Ok(value)
    }

    fn recurse<F>(
        f: &F,
        point: &mut [f64],
        base: &[f64],
        r: &[u32],
        steps: &[f64],
        pos: usize,
    ) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        if pos == r.len() {
            return f(point);
        }
        let m = r[pos];
        if m == 0 {
            return recurse(f, point, base, r, steps, pos + 1);
        }
        let delta = steps[pos];
        let mut acc = 0.0;
        let mut binom = 1.0;
        for j in 0..=m {
            let offset = (m as f64 / 2.0 - j as f64) * delta;
            point[pos] = base[pos] + offset;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * recurse(f, point, base, r, steps, pos + 1)?;
            binom = binom * (m - j) as f64 / (j + 1) as f64;
        }
        point[pos] = base[pos];
        Ok(acc / delta.powi(m as i32))
    }
}

/// Splits `r` into a part of order `analytic` (taken from the front) and the
/// remainder that must be differentiated numerically.
fn split_order(r: &[u32], analytic: usize) -> (Vec<u32>, Vec<u32>) {
    let mut head = vec![0u32; r.len()];
    let mut tail = r.to_vec();
    let mut budget = analytic as u32;
    for (i, e) in r.iter().enumerate() {
        let take = (*e).min(budget);
        head[i] = take;
        tail[i] -= take;
        budget -= take;
    }
    (head, tail)
}

/// Planar two-body dynamics with additive noise on the accelerations.
///
/// State `(x, y, v_x, v_y)` in km and km/s, drift
/// `(v_x, v_y, -μ x / ρ³, -μ y / ρ³)` with `ρ² = x² + y²`, and constant
/// diffusion `diag(0, 0, σ₃, σ₄)` driven by a 4-dimensional Wiener process.
#[derive(Clone, Debug, PartialEq)]
pub struct KeplerModel {
    pub mu: f64,
    pub sigma3: f64,
    pub sigma4: f64,
}

/// Gravitational parameter of the Earth in km³/s².
pub const EARTH_MU: f64 = 3.986e5;
/// Equatorial radius of the Earth in km.
pub const EARTH_RADIUS: f64 = 6378.137;

impl KeplerModel {
    pub fn new(mu: f64, sigma3: f64, sigma4: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gravitational parameter must be positive, got {mu}"
            )));
        }
        Ok(KeplerModel { mu, sigma3, sigma4 })
    }

    /// Circular orbit of the given altitude (km) above the Earth's surface.
    pub fn circular_state(&self, altitude: f64) -> [f64; 4] {
        let radius = altitude + EARTH_RADIUS;
        [radius, 0.0, 0.0, (self.mu / radius).sqrt()]
    }

    fn inverse_powers(x: f64, y: f64) -> Result<(f64, f64, f64)> {
        let rho2 = x * x + y * y;
        if rho2 == 0.0 || !rho2.is_finite() {
            return Err(Error::ModelEvaluation(format!(
                "gravitational singularity at ({x}, {y})"
            )));
        }
        let inv2 = 1.0 / rho2;
        let inv3 = inv2 * inv2.sqrt();
        Ok((inv3, inv3 * inv2, inv3 * inv2 * inv2))
    }

    /// Analytic derivative of drift component `k` for `|r| <= 2`.
    fn analytic_drift(&self, x: &[f64], k: usize, r: &[u32]) -> Result<f64> {
        let order: u32 = r.iter().sum();
        match k {
            0 | 1 => {
                // Position rates are the velocities.
                let vel = k + 2;
                Ok(match order {
                    0 => x[vel],
                    1 if r[vel] == 1 => 1.0,
                    _ => 0.0,
                })
            }
            2 | 3 => {
                if r[2] != 0 || r[3] != 0 {
                    return Ok(0.0);
                }
                let (px, py) = (x[0], x[1]);
                let (inv3, inv5, inv7) = Self::inverse_powers(px, py)?;
                // Component 2 is -μ x ρ⁻³; component 3 is the mirror image
                // with the roles of x and y swapped.
                let (a, b, ra, rb) = if k == 2 {
                    (px, py, r[0], r[1])
                } else {
                    (py, px, r[1], r[0])
                };
                let g = match (ra, rb) {
                    (0, 0) => a * inv3,
                    (1, 0) => inv3 - 3.0 * a * a * inv5,
                    (0, 1) => -3.0 * a * b * inv5,
                    (2, 0) => -9.0 * a * inv5 + 15.0 * a * a * a * inv7,
                    (1, 1) => -3.0 * b * inv5 + 15.0 * a * a * b * inv7,
                    (0, 2) => -3.0 * a * inv5 + 15.0 * a * b * b * inv7,
                    _ => unreachable!("order above 2 handled by the caller"),
                };
                Ok(-self.mu * g)
            }
            _ => Err(Error::InvalidArgument(format!(
                "component {k} out of range"
            ))),
        }
    }
}

impl SdeModel for KeplerModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn noise_dim(&self) -> usize {
        4
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        let (inv3, _, _) = Self::inverse_powers(x[0], x[1])?;
        out[0] = x[2];
        out[1] = x[3];
        out[2] = -self.mu * (x[0] * inv3);
        out[3] = -self.mu * (x[1] * inv3);
        Ok(())
    }

    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        out[2 * 4 + 2] = self.sigma3;
        out[3 * 4 + 3] = self.sigma4;
        Ok(())
    }

    fn max_derivative_order(&self) -> usize {
        2
    }

    fn drift_derivative(&self, x: &[f64], _t: f64, k: usize, r: &MultiIndex) -> Result<f64> {
        if r.dim() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                actual: r.dim(),
            });
        }
        if r.total_order() <= 2 {
            return self.analytic_drift(x, k, r.entries());
        }
        let (head, tail) = split_order(r.entries(), 2);
        fd::nested_central(|y| self.analytic_drift(y, k, &head), x, &tail)
    }

    fn diffusion_derivative(
        &self,
        x: &[f64],
        t: f64,
        k: usize,
        j: usize,
        r: &MultiIndex,
    ) -> Result<f64> {
        if r.is_zero() {
            let mut g = [0.0; 16];
            self.diffusion(x, t, &mut g)?;
            return Ok(g[k * 4 + j]);
        }
        Ok(0.0)
    }

    fn diffusion_jet(
        &self,
        x: &[f64],
        t: f64,
        indices: &[MultiIndex],
        out: &mut [f64],
    ) -> Result<()> {
        let n = indices.len();
        let mut g = [0.0; 16];
        self.diffusion(x, t, &mut g)?;
        for (entry, &value) in g.iter().enumerate() {
            for (i, r) in indices.iter().enumerate() {
                out[entry * n + i] = if r.is_zero() { value } else { 0.0 };
            }
        }
        Ok(())
    }
}

/// Linear drift `u = A x + b` with constant diffusion `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    dim: usize,
    noise_dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

impl LinearModel {
    /// `a` is `v x v`, `b` has length `v`, `sigma` is `v x d`; rows given as
    /// nested vectors.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("empty state".into()));
        }
        if a.len() != dim || a.iter().any(|row| row.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "drift matrix must be {dim}x{dim}"
            )));
        }
        if sigma.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: sigma.len(),
            });
        }
        let noise_dim = sigma[0].len();
        if noise_dim == 0 || sigma.iter().any(|row| row.len() != noise_dim) {
            return Err(Error::InvalidArgument(
                "diffusion matrix rows must share a non-zero length".into(),
            ));
        }
        Ok(LinearModel {
            dim,
            noise_dim,
            a: a.into_iter().flatten().collect(),
            b,
            sigma: sigma.into_iter().flatten().collect(),
        })
    }

    /// Scalar `dX = (a X + b) dt + σ dW`.
    pub fn scalar(a: f64, b: f64, sigma: f64) -> Self {
        LinearModel {
            dim: 1,
            noise_dim: 1,
            a: vec![a],
            b: vec![b],
            sigma: vec![sigma],
        }
    }
}

impl SdeModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        for k in 0..self.dim {
            let row = &self.a[k * self.dim..(k + 1) * self.dim];
            out[k] = self.b[k] + row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
        }
        Ok(())
    }

    fn diffusion(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.sigma);
        Ok(())
    }

    fn max_derivative_order(&self) -> usize {
        usize::MAX
    }

    fn drift_derivative(&self, x: &[f64], t: f64, k: usize, r: &MultiIndex) -> Result<f64> {
        Ok(match r.total_order() {
            0 => {
                let mut u = vec![0.0; self.dim];
                self.drift(x, t, &mut u)?;
                u[k]
            }
            1 => {
                let m = r.entries().iter().position(|&e| e == 1).unwrap_or(0);
                self.a[k * self.dim + m]
            }
            _ => 0.0,
        })
    }

    fn diffusion_derivative(
        &self,
        _x: &[f64],
        _t: f64,
        k: usize,
        j: usize,
        r: &MultiIndex,
    ) -> Result<f64> {
        Ok(if r.is_zero() {
            self.sigma[k * self.noise_dim + j]
        } else {
            0.0
        })
    }
}

/// Scalar model with polynomial drift and diffusion,
/// `u(x) = Σ a_i x^i` and `G(x) = Σ b_i x^i`.
///
/// Covers the scalar test problems: Ornstein-Uhlenbeck, cubic drift and
/// geometric (multiplicative) noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPolynomialModel {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl ScalarPolynomialModel {
    pub fn new(drift: Vec<f64>, diffusion: Vec<f64>) -> Self {
        ScalarPolynomialModel { drift, diffusion }
    }

    /// `dX = -α X³ dt + σ dW`.
    pub fn cubic(alpha: f64, sigma: f64) -> Self {
        Self::new(vec![0.0, 0.0, 0.0, -alpha], vec![sigma])
    }

    /// `dX = a X dt + σ X dW`.
    pub fn geometric(a: f64, sigma: f64) -> Self {
        Self::new(vec![0.0, a], vec![0.0, sigma])
    }

    fn derivative(coeffs: &[f64], x: f64, order: usize) -> f64 {
        // d^m/dx^m Σ c_i x^i = Σ_{i>=m} c_i i!/(i-m)! x^{i-m}, Horner form.
        let mut acc = 0.0;
        for i in (order..coeffs.len()).rev() {
            let falling: f64 = ((i - order + 1)..=i).map(|f| f as f64).product();
            acc = acc * x + coeffs[i] * falling;
        }
        acc
    }
}

impl SdeModel for ScalarPolynomialModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out[0] = Self::derivative(&self.drift, x[0], 0);
        Ok(())
    }

    fn diffusion(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out[0] = Self::derivative(&self.diffusion, x[0], 0);
        Ok(())
    }

    fn max_derivative_order(&self) -> usize {
        usize::MAX
    }

    fn drift_derivative(&self, x: &[f64], _t: f64, _k: usize, r: &MultiIndex) -> Result<f64> {
        Ok(Self::derivative(&self.drift, x[0], r.total_order()))
    }

    fn diffusion_derivative(
        &self,
        x: &[f64],
        _t: f64,
        _k: usize,
        _j: usize,
        r: &MultiIndex,
    ) -> Result<f64> {
        Ok(Self::derivative(&self.diffusion, x[0], r.total_order()))
    }
}

/// Law of the initial state.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    Gaussian {
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
    },
}

const SYMMETRY_TOLERANCE: f64 = 1e-12;

impl InitialCondition {
    pub fn fixed(x0: Vec<f64>) -> Result<Self> {
        if x0.is_empty() || x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "initial state must be non-empty and finite".into(),
            ));
        }
        Ok(InitialCondition::Fixed(x0))
    }

    /// Gaussian law; the covariance must be symmetric positive semi-definite.
    pub fn gaussian(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let v = mean.len();
        if covariance.nrows() != v || covariance.ncols() != v {
            return Err(Error::DimensionMismatch {
                expected: v,
                actual: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("initial law".into()));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..v {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::NotPositiveSemiDefinite(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ"
                    )));
                }
            }
        }
        let smallest = covariance.clone().symmetric_eigenvalues().min();
        if smallest < -SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotPositiveSemiDefinite(format!(
                "smallest eigenvalue {smallest:e}"
            )));
        }
        Ok(InitialCondition::Gaussian { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    /// The fixed state or the Gaussian mean.
    pub fn mean(&self) -> &[f64] {
        match self {
            InitialCondition::Fixed(x0) => x0,
            InitialCondition::Gaussian { mean, .. } => mean,
        }
    }

    /// Zero for a fixed state.
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            InitialCondition::Fixed(x0) => DMatrix::zeros(x0.len(), x0.len()),
            InitialCondition::Gaussian { covariance, .. } => covariance.clone(),
        }
    }

    /// Draws `mean + Σ^{1/2} ξ` with `ξ` standard normal; a fixed state is
    /// returned unchanged without consuming randomness.
    pub fn sampler(&self) -> InitialSampler {
        match self {
            InitialCondition::Fixed(x0) => InitialSampler {
                mean: DVector::from_column_slice(x0),
                root: None,
            },
            InitialCondition::Gaussian { mean, covariance } => InitialSampler {
                mean: DVector::from_column_slice(mean),
                root: Some(symmetric_sqrt(covariance)),
            },
        }
    }
}

/// Symmetric square root of a symmetric positive semi-definite matrix, with
/// negative rounding noise in the eigenvalues clamped to zero.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Sampler returned by [`InitialCondition::sampler`].
#[derive(Clone, Debug)]
pub struct InitialSampler {
    mean: DVector<f64>,
    root: Option<DMatrix<f64>>,
}

impl InitialSampler {
    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match &self.root {
            None => self.mean.as_slice().to_vec(),
            Some(root) => {
                let xi = DVector::from_iterator(
                    self.mean.len(),
                    (0..self.mean.len()).map(|_| -> f64 { StandardNormal.sample(rng) }),
                );
                (&self.mean + root * xi).as_slice().to_vec()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::enumerate_up_to;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kepler() -> KeplerModel {
        KeplerModel::new(EARTH_MU, 1e-5, 1e-5).unwrap()
    }

    #[test]
    fn kepler_drift_at_circular_state() {
        let m = kepler();
        let x0 = [6578.0, 0.0, 0.0, 7.7843];
        let mut u = [0.0; 4];
        m.drift(&x0, 0.0, &mut u).unwrap();
        assert_eq!(u[0], 0.0);
        assert_eq!(u[1], 7.7843);
        assert!((u[2] - (-9.2119e-3)).abs() < 1e-7, "{}", u[2]);
        assert_eq!(u[3], 0.0);
    }

    #[test]
    fn kepler_circular_speed() {
        let s = kepler().circular_state(200.0);
        assert_eq!(s[0], 6578.137);
        assert!((s[3] - 7.78426).abs() < 1e-5);
    }

    #[test]
    fn kepler_singularity_is_an_error() {
        let mut u = [0.0; 4];
        let err = kepler()
            .drift(&[0.0, 0.0, 1.0, 1.0], 0.0, &mut u)
            .unwrap_err();
        assert!(matches!(err, Error::ModelEvaluation(_)));
        assert!(kepler()
            .drift_derivative(
                &[0.0, 0.0, 1.0, 1.0],
                0.0,
                2,
                &MultiIndex::from([1, 0, 0, 0])
            )
            .is_err());
    }

    #[test]
    fn kepler_simple_derivatives() {
        let m = kepler();
        let x0 = [6578.0, 0.0, 0.0, 7.7843];
        assert_eq!(
            m.drift_derivative(&x0, 0.0, 0, &MultiIndex::from([0, 0, 1, 0]))
                .unwrap(),
            1.0
        );
        for k in 0..4 {
            for j in 0..4 {
                for r in enumerate_up_to(4, 2).into_iter().skip(1) {
                    assert_eq!(m.diffusion_derivative(&x0, 0.0, k, j, &r).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_order_derivatives_match_evaluators() {
        let m = kepler();
        let x = [5000.0, -3000.0, 4.0, 6.0];
        let mut u = [0.0; 4];
        let mut g = [0.0; 16];
        m.drift(&x, 0.0, &mut u).unwrap();
        m.diffusion(&x, 0.0, &mut g).unwrap();
        let zero = MultiIndex::zeros(4);
        for k in 0..4 {
            assert_eq!(m.drift_derivative(&x, 0.0, k, &zero).unwrap(), u[k]);
            for j in 0..4 {
                assert_eq!(
                    m.diffusion_derivative(&x, 0.0, k, j, &zero).unwrap(),
                    g[k * 4 + j]
                );
            }
        }
    }

    #[test]
    fn derivative_evaluation_is_pure() {
        let m = kepler();
        let x = [5000.0, -3000.0, 4.0, 6.0];
        for r in enumerate_up_to(4, 3) {
            let a = m.drift_derivative(&x, 0.0, 2, &r).unwrap();
            let b = m.drift_derivative(&x, 0.0, 2, &r).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Analytic first and second partials against central differences with
    /// a step of 1e-5 of the state scale, at random states on a shell
    /// around low Earth orbit.
    #[test]
    fn kepler_analytic_derivatives_match_central_differences() {
        let m = kepler();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let first: Vec<MultiIndex> = (0..4).map(|i| MultiIndex::unit(4, i)).collect();
        for _ in 0..100 {
            let radius = rng.random_range(6500.0..8000.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = [
                radius * angle.cos(),
                radius * angle.sin(),
                rng.random_range(-8.0..8.0),
                rng.random_range(-8.0..8.0),
            ];
            let scale = [radius, radius, 8.0, 8.0];
            for k in 0..4 {
                // order 1 from the drift itself
                let mut errs = Vec::new();
                let mut mags = Vec::new();
                for (i, e) in first.iter().enumerate() {
                    let dx = 1e-5 * scale[i];
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += dx;
                    xm[i] -= dx;
                    let mut up = [0.0; 4];
                    let mut um = [0.0; 4];
                    m.drift(&xp, 0.0, &mut up).unwrap();
                    m.drift(&xm, 0.0, &mut um).unwrap();
                    let numeric = (up[k] - um[k]) / (2.0 * dx);
                    let analytic = m.drift_derivative(&x, 0.0, k, e).unwrap();
                    errs.push((numeric - analytic).abs());
                    mags.push(analytic.abs());
                }
                let mag = mags.iter().cloned().fold(0.0, f64::max);
                for err in errs {
                    assert!(
                        err <= 1e-4 * mag.max(1e-300),
                        "order 1, k={k}: {err} vs {mag}"
                    );
                }
                // order 2 as differences of the analytic first derivatives
                let mut errs = Vec::new();
                let mut mags = Vec::new();
                for i in 0..4 {
                    for l in 0..4 {
                        let dx = 1e-5 * scale[l];
                        let mut xp = x;
                        let mut xm = x;
                        xp[l] += dx;
                        xm[l] -= dx;
                        let fp = m.drift_derivative(&xp, 0.0, k, &first[i]).unwrap();
                        let fm = m.drift_derivative(&xm, 0.0, k, &first[i]).unwrap();
                        let numeric = (fp - fm) / (2.0 * dx);
                        let r = first[i].checked_add(&first[l]).unwrap();
                        let analytic = m.drift_derivative(&x, 0.0, k, &r).unwrap();
                        errs.push((numeric - analytic).abs());
                        mags.push(analytic.abs());
                    }
                }
                let mag = mags.iter().cloned().fold(0.0, f64::max);
                for err in errs {
                    assert!(
                        err <= 1e-4 * mag.max(1e-300),
                        "order 2, k={k}: {err} vs {mag}"
                    );
                }
            }
        }
    }

    #[test]
    fn kepler_third_order_fallback_is_close() {
        // ∂³/∂x³ of -μ x ρ⁻³ along y = 0 is -μ d³/dx³ x⁻² = 24 μ x⁻⁵.
        let m = kepler();
        let x = [7000.0, 0.0, 0.0, 7.5];
        let got = m
            .drift_derivative(&x, 0.0, 2, &MultiIndex::from([3, 0, 0, 0]))
            .unwrap();
        let want = 24.0 * EARTH_MU / 7000f64.powi(5);
        assert!(((got - want) / want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn linear_model_examples() {
        let m = LinearModel::scalar(-1.0, 0.0, 0.5);
        let mut u = [0.0];
        m.drift(&[2.0], 0.0, &mut u).unwrap();
        assert_eq!(u[0], -2.0);
        assert_eq!(
            m.drift_derivative(&[2.0], 0.0, 0, &MultiIndex::from([2]))
                .unwrap(),
            0.0
        );
        assert_eq!(
            m.drift_derivative(&[2.0], 0.0, 0, &MultiIndex::from([1]))
                .unwrap(),
            -1.0
        );
        let mut g = [0.0];
        m.diffusion(&[123.0], 0.0, &mut g).unwrap();
        assert_eq!(g[0], 0.5);
    }

    #[test]
    fn linear_model_rejects_bad_shapes() {
        assert!(LinearModel::new(vec![vec![1.0, 0.0]], vec![0.0], vec![vec![1.0]]).is_err());
        assert!(LinearModel::new(vec![vec![1.0]], vec![0.0], vec![vec![]]).is_err());
        let m = LinearModel::new(
            vec![vec![0.0, 1.0], vec![-1.0, 0.0]],
            vec![0.0, 1.0],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap();
        assert_eq!(m.state_dim(), 2);
        assert_eq!(m.noise_dim(), 1);
        assert_eq!(
            m.drift_derivative(&[0.0, 0.0], 0.0, 1, &MultiIndex::from([1, 0]))
                .unwrap(),
            -1.0
        );
    }

    #[test]
    fn polynomial_model_derivatives() {
        let m = ScalarPolynomialModel::new(vec![0.0, 0.0, 1.0], vec![1.0]);
        let at = |n: u32| {
            m.drift_derivative(&[1.5], 0.0, 0, &MultiIndex::from([n]))
                .unwrap()
        };
        assert_eq!(at(0), 2.25);
        assert_eq!(at(1), 3.0);
        assert_eq!(at(2), 2.0);
        assert_eq!(at(3), 0.0);
        let c = ScalarPolynomialModel::cubic(1.0, 1.0);
        assert_eq!(
            c.drift_derivative(&[2.0], 0.0, 0, &MultiIndex::from([3]))
                .unwrap(),
            -6.0
        );
    }

    #[test]
    fn default_fallback_differentiates_drift() {
        struct Sine;
        impl SdeModel for Sine {
            fn state_dim(&self) -> usize {
                2
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
                out[0] = x[0].sin() * x[1].cos();
                out[1] = 0.0;
                Ok(())
            }
            fn diffusion(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
                out[0] = x[0] * x[0];
                out[1] = 1.0;
                Ok(())
            }
        }
        let x = [0.3, 0.7];
        let d11 = Sine
            .drift_derivative(&x, 0.0, 0, &MultiIndex::from([1, 1]))
            .unwrap();
        assert!((d11 - (-(0.3f64).cos() * (0.7f64).sin())).abs() < 1e-6);
        let g2 = Sine
            .diffusion_derivative(&x, 0.0, 0, 0, &MultiIndex::from([2, 0]))
            .unwrap();
        assert!((g2 - 2.0).abs() < 1e-5);
    }
    #[test]
    fn initial_condition_validation() {
        assert!(InitialCondition::fixed(vec![]).is_err());
        let ok = InitialCondition::gaussian(
            vec![0.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        );
        assert!(ok.is_ok());
        let singular = InitialCondition::gaussian(
            vec![0.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        );
        assert!(singular.is_ok());
        let asym = InitialCondition::gaussian(
            vec![0.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]),
        );
        assert!(matches!(asym, Err(Error::NotPositiveSemiDefinite(_))));
        let indefinite = InitialCondition::gaussian(
            vec![0.0, 1.0],
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(indefinite, Err(Error::NotPositiveSemiDefinite(_))));
        assert!(InitialCondition::gaussian(vec![0.0], DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn initial_sampler_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let init = InitialCondition::gaussian(vec![1.0, -1.0], cov.clone()).unwrap();
        let sampler = init.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut sum = DVector::zeros(2);
        let mut outer = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x =
                DVector::from_vec(sampler.sample(&mut rng)) - DVector::from_vec(vec![1.0, -1.0]);
            sum += &x;
            outer += &x * x.transpose();
        }
        let mean = sum / n as f64;
        let emp = outer / n as f64;
        assert!(mean.amax() < 0.02);
        assert!((emp - cov).amax() < 0.03);
        let fixed = InitialCondition::fixed(vec![3.0]).unwrap().sampler();
        assert_eq!(fixed.sample(&mut rng), vec![3.0]);
    }
}
