//! Non-intrusive polynomial chaos over a Gaussian initial state.
//!
//! The initial state is whitened with the symmetric inverse square root of
//! its covariance, `ξ = Σ^{-1/2} (x - m)`, and the basis is the tensor
//! product of normalized probabilists' Hermite polynomials
//! `Φ_α(ξ) = Π_i He_{α_i}(ξ_i) / √(α_i!)`, `|α| <= N_PCE`, in graded-lex
//! order. The basis is orthonormal under the initial law and `Φ_1 ≡ 1`, so
//! the expectation of a fitted quantity is its first coefficient.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::density::hermite_all;
use crate::error::{Error, Result};
use crate::model::{symmetric_sqrt, InitialCondition, SdeModel};
use crate::multiindex::{enumerate_up_to, MultiIndex};
use crate::noise::NoiseModel;
use crate::propagation::{propagate_fixed, solution_moments, Propagation, PropagationSettings};
use crate::rng::{self, Domain};

/// Largest condition number accepted by [`LeastSquaresSolver`].
pub const MAX_CONDITION: f64 = 1e10;

/// Orthonormal Hermite chaos basis for a Gaussian measure.
#[derive(Clone, Debug)]
pub struct PceBasis {
    mean: DVector<f64>,
    whitening: DMatrix<f64>,
    order: usize,
    indices: Vec<MultiIndex>,
    norms: Vec<f64>,
}

impl PceBasis {
    /// Basis of total degree `order` for `N(mean, covariance)`; the
    /// covariance must be positive definite.
    pub fn gaussian(mean: &[f64], covariance: &DMatrix<f64>, order: usize) -> Result<Self> {
        let v = mean.len();
        if v == 0 || covariance.nrows() != v || covariance.ncols() != v {
            return Err(Error::DimensionMismatch {
                expected: v,
                actual: covariance.nrows(),
            });
        }
        if covariance.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        let root = symmetric_sqrt(covariance);
        let whitening = root.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        let indices = enumerate_up_to(v, order);
        let norms = indices
            .iter()
            .map(|a| a.factorial().map(|f| 1.0 / (f as f64).sqrt()))
            .collect::<Result<_>>()?;
        Ok(PceBasis {
            mean: DVector::from_column_slice(mean),
            whitening,
            order,
            indices,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `N_p = C(N_PCE + v, v)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Hermite degrees of each basis function.
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn whiten(&self, x0: &[f64]) -> Result<DVector<f64>> {
        if x0.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x0.len(),
            });
        }
        Ok(&self.whitening * (DVector::from_column_slice(x0) - &self.mean))
    }

    /// All basis functions at `x0`.
    pub fn evaluate_all(&self, x0: &[f64]) -> Result<Vec<f64>> {
        let xi = self.whiten(x0)?;
        let he: Vec<Vec<f64>> = xi.iter().map(|&x| hermite_all(self.order, x)).collect();
        Ok(self
            .indices
            .iter()
            .zip(&self.norms)
            .map(|(a, norm)| {
                a.entries()
                    .iter()
                    .zip(&he)
                    .map(|(&e, h)| h[e as usize])
                    .product::<f64>()
                    * norm
            })
            .collect())
    }

    /// Basis function `i` (zero-based) at `x0`.
    pub fn evaluate(&self, i: usize, x0: &[f64]) -> Result<f64> {
        self.evaluate_all(x0)?
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("basis index {i} out of range")))
    }
}

/// `Φ_{ji} = Φ_i(x_j)`, one row per sample.
pub fn design_matrix(basis: &PceBasis, samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < basis.len() {
        return Err(Error::TooFewSamples {
            required: basis.len(),
            actual: samples.len(),
        });
    }
    let mut m = DMatrix::zeros(samples.len(), basis.len());
    for (j, x0) in samples.iter().enumerate() {
        for (i, value) in basis.evaluate_all(x0)?.into_iter().enumerate() {
            m[(j, i)] = value;
        }
    }
    Ok(m)
}

/// Coefficients of one fitted quantity with fit diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct PceFit {
    pub coefficients: Vec<f64>,
    pub condition_number: f64,
    pub residual_norm: f64,
}

impl PceFit {
    /// `Σ_i c_i Φ_i` for precomputed basis values.
    pub fn predict(&self, basis_values: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(basis_values)
            .map(|(c, p)| c * p)
            .sum()
    }
}

/// Expectation of a fitted quantity: the coefficient of `Φ_1 ≡ 1`.
pub fn aggregate_moment(fit: &PceFit) -> f64 {
    fit.coefficients[0]
}

/// Least-squares solver for one design matrix, reused across targets.
/// Uses the singular value decomposition.
#[derive(Clone, Debug)]
pub struct LeastSquaresSolver {
    matrix: DMatrix<f64>,
    /// `V Σ^{-1} Uᵀ`.
    pseudo_inverse: DMatrix<f64>,
    condition_number: f64,
}

impl LeastSquaresSolver {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() < matrix.ncols() {
            return Err(Error::TooFewSamples {
                required: matrix.ncols(),
                actual: matrix.nrows(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        let svd = matrix.clone().svd(true, true);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition_number <= MAX_CONDITION) {
            return Err(Error::RankDeficient {
                condition: condition_number,
            });
        }
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let inv = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
        let pseudo_inverse = v_t.transpose() * inv * u.transpose();
        Ok(LeastSquaresSolver {
            matrix,
            pseudo_inverse,
            condition_number,
        })
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn solve(&self, targets: &[f64]) -> Result<PceFit> {
        if targets.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                actual: targets.len(),
            });
        }
        if let Some(j) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("fit target at sample {j}")));
        }
        let y = DVector::from_column_slice(targets);
        let c = &self.pseudo_inverse * &y;
        let residual_norm = (&self.matrix * &c - y).norm();
        Ok(PceFit {
            coefficients: c.as_slice().to_vec(),
            condition_number: self.condition_number,
            residual_norm,
        })
    }
}

/// Fit of a single target against a design matrix.
pub fn fit_least_squares(matrix: &DMatrix<f64>, targets: &[f64]) -> Result<PceFit> {
    LeastSquaresSolver::new(matrix.clone())?.solve(targets)
}

/// Draws `count` initial states from stream `domain`, one stream per draw.
pub fn draw_initial_states(
    init: &InitialCondition,
    seed: u64,
    domain: Domain,
    count: usize,
) -> Vec<Vec<f64>> {
    let sampler = init.sampler();
    (0..count)
        .map(|j| sampler.sample(&mut rng::stream(seed, domain, j as u64)))
        .collect()
}

/// Propagates every initial state, in parallel, keeping the input order.
/// The first failing sample (by index) is reported.
pub fn propagate_samples(
    samples: &[Vec<f64>],
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    settings: &PropagationSettings,
) -> Result<Vec<Propagation>> {
    let runs: Vec<Result<Propagation>> = samples
        .par_iter()
        .map(|x0| propagate_fixed(x0, model, noise, settings))
        .collect();
    runs.into_iter()
        .enumerate()
        .map(|(j, r)| r.map_err(|e| e.at_sample(j)))
        .collect()
}

/// Outcome of propagating a Gaussian initial state through the chaos
/// expansion.
#[derive(Clone, Debug)]
pub struct RandomPropagation {
    pub basis: PceBasis,
    pub solver: LeastSquaresSolver,
    pub samples: Vec<Vec<f64>>,
    pub runs: Vec<Propagation>,
    /// Multi-indices `|r| <= N` of the moments, in graded-lex order.
    pub indices: Vec<MultiIndex>,
    /// Fitted `E[X^r]` per index.
    pub fits: Vec<PceFit>,
}

impl RandomPropagation {
    /// Aggregated moments, aligned with `indices`.
    pub fn moments(&self) -> Vec<f64> {
        self.fits.iter().map(aggregate_moment).collect()
    }

    pub fn moment(&self, r: &MultiIndex) -> Option<f64> {
        self.indices
            .iter()
            .position(|i| i == r)
            .map(|i| aggregate_moment(&self.fits[i]))
    }

    pub fn condition_number(&self) -> f64 {
        self.solver.condition_number()
    }

    pub fn max_residual_norm(&self) -> f64 {
        self.fits
            .iter()
            .map(|f| f.residual_norm)
            .fold(0.0, f64::max)
    }
}

/// Chaos-expansion settings for a Gaussian initial state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PceSettings {
    pub order: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Moments `E[X_n^r]`, `|r| <= N`, for a Gaussian initial state: propagate
/// `N_s` sampled initial states, fit each conditional moment in the chaos
/// basis and take the first coefficient.
pub fn propagate_random(
    init: &InitialCondition,
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    settings: &PropagationSettings,
    pce: &PceSettings,
) -> Result<RandomPropagation> {
    let InitialCondition::Gaussian { mean, covariance } = init else {
        return Err(Error::InvalidArgument(
            "chaos expansion needs a Gaussian initial condition".into(),
        ));
    };
    let basis = PceBasis::gaussian(mean, covariance, pce.order)?;
    let samples = draw_initial_states(init, pce.seed, Domain::InitialSamples, pce.samples);
    let solver = LeastSquaresSolver::new(design_matrix(&basis, &samples)?)?;
    let runs = propagate_samples(&samples, model, noise, settings)?;
    let per_sample: Vec<Vec<f64>> = runs
        .iter()
        .enumerate()
        .map(|(j, run)| {
            solution_moments(&run.final_state.central, &run.final_state.table)
                .map_err(|e| e.at_sample(j))
        })
        .collect::<Result<_>>()?;
    let indices = runs[0].final_state.table.layout().indices().to_vec();
    let fits = (0..indices.len())
        .map(|i| {
            let target: Vec<f64> = per_sample.iter().map(|m| m[i]).collect();
            solver.solve(&target)
        })
        .collect::<Result<_>>()?;
    Ok(RandomPropagation {
        basis,
        solver,
        samples,
        runs,
        indices,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn standard(v: usize, order: usize) -> PceBasis {
        PceBasis::gaussian(&vec![0.0; v], &DMatrix::identity(v, v), order).unwrap()
    }

    fn normal_samples(n: usize, v: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..v).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn basis_examples() {
        let b = standard(1, 2);
        let at = |x: f64| b.evaluate_all(&[x]).unwrap();
        let v = at(1.7);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 1.7);
        assert!((v[2] - (1.7 * 1.7 - 1.0) / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(standard(4, 6).len(), 210);
        let b4 = PceBasis::gaussian(
            &[1.0, 2.0, 3.0, 4.0],
            &DMatrix::from_diagonal_element(4, 4, 0.1),
            3,
        )
        .unwrap();
        assert_eq!(b4.evaluate(0, &[9.0, -3.0, 0.5, 7.0]).unwrap(), 1.0);
    }

    #[test]
    fn singular_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            PceBasis::gaussian(&[0.0, 0.0], &cov, 2),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn design_matrix_examples() {
        let b = standard(1, 2);
        let m = design_matrix(&b, &[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(
            m.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, -1.0 / 2f64.sqrt()]
        );
        assert!(m.column(0).iter().all(|&x| x == 1.0));
        assert!(matches!(
            design_matrix(&b, &[vec![0.0], vec![1.0]]),
            Err(Error::TooFewSamples {
                required: 3,
                actual: 2
            })
        ));
        let b4 = standard(4, 6);
        let m = design_matrix(&b4, &normal_samples(420, 4, 1)).unwrap();
        assert_eq!(m.shape(), (420, 210));
    }

    fn correlated() -> (Vec<f64>, DMatrix<f64>) {
        (
            vec![1.0, -2.0],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
    }

    /// Gauss-Hermite nodes and weights for the standard normal law from the
    /// eigen-decomposition of the Jacobi matrix.
    fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
        let mut jacobi = DMatrix::zeros(n, n);
        for i in 1..n {
            jacobi[(i, i - 1)] = (i as f64).sqrt();
            jacobi[(i - 1, i)] = (i as f64).sqrt();
        }
        let eig = jacobi.symmetric_eigen();
        (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect()
    }

    #[test]
    fn orthonormality_by_quadrature() {
        let (mean, cov) = correlated();
        let b = PceBasis::gaussian(&mean, &cov, 4).unwrap();
        let root = symmetric_sqrt(&cov);
        let rule = gauss_hermite(6);
        let mut gram = DMatrix::zeros(b.len(), b.len());
        for &(x, wx) in &rule {
            for &(y, wy) in &rule {
                let point =
                    DVector::from_column_slice(&mean) + &root * DVector::from_vec(vec![x, y]);
                let phi = DVector::from_vec(b.evaluate_all(point.as_slice()).unwrap());
                gram += wx * wy * &phi * phi.transpose();
            }
        }
        assert!((gram - DMatrix::identity(b.len(), b.len())).amax() < 1e-12);
    }

    #[test]
    fn orthonormality_by_monte_carlo() {
        let (mean, cov) = correlated();
        let b = PceBasis::gaussian(&mean, &cov, 3).unwrap();
        assert_eq!(b.len(), 10);
        let init = InitialCondition::gaussian(mean, cov).unwrap();
        let n = 1_000_000;
        let mut gram = DMatrix::zeros(b.len(), b.len());
        for x0 in draw_initial_states(&init, 9, Domain::InitialSamples, n) {
            let phi = DVector::from_vec(b.evaluate_all(&x0).unwrap());
            gram += &phi * phi.transpose();
        }
        gram /= n as f64;
        for i in 0..b.len() {
            for j in 0..b.len() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[(i, j)] - want).abs() < 0.02,
                    "({i},{j}) {}",
                    gram[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fit_examples() {
        let b = standard(1, 3);
        let samples = normal_samples(40, 1, 2);
        let m = design_matrix(&b, &samples).unwrap();
        let fit = fit_least_squares(&m, &vec![2.5; 40]).unwrap();
        assert!((fit.coefficients[0] - 2.5).abs() < 1e-12);
        assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 1e-12));
        assert!((aggregate_moment(&fit) - 2.5).abs() < 1e-12);
        let phi2: Vec<f64> = samples.iter().map(|x| b.evaluate(1, x).unwrap()).collect();
        let fit = fit_least_squares(&m, &phi2).unwrap();
        for (i, c) in fit.coefficients.iter().enumerate() {
            assert!((c - if i == 1 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        let x: Vec<f64> = samples.iter().map(|x| x[0]).collect();
        assert!(aggregate_moment(&fit_least_squares(&m, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn square_projects_onto_second_hermite() {
        let b = standard(1, 4);
        let samples = normal_samples(5000, 1, 3);
        let m = design_matrix(&b, &samples).unwrap();
        let y: Vec<f64> = samples.iter().map(|x| x[0] * x[0]).collect();
        let fit = fit_least_squares(&m, &y).unwrap();
        let want = [1.0, 0.0, 2f64.sqrt(), 0.0, 0.0];
        for (c, w) in fit.coefficients.iter().zip(want) {
            assert!((c - w).abs() < 1e-10, "{c} vs {w}");
        }
        assert!(fit.residual_norm < 1e-9);
    }

    #[test]
    fn rank_deficiency_reports_condition() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            fit_least_squares(&m, &[1.0, 2.0, 3.0]),
            Err(Error::RankDeficient { .. })
        ));
        let ok = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            fit_least_squares(&ok, &[1.0, f64::NAN, 3.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn aggregate_error_shrinks_with_samples() {
        // Smooth target sin(x) + x² under N(0, 1): E = 1.
        let b = standard(1, 3);
        let error_at = |n: usize, seed: u64| {
            let samples = normal_samples(n, 1, seed);
            let y: Vec<f64> = samples.iter().map(|x| x[0].sin() + x[0] * x[0]).collect();
            let fit = fit_least_squares(&design_matrix(&b, &samples).unwrap(), &y).unwrap();
            (aggregate_moment(&fit) - mean(&y)).abs()
        };
        let wins = (0..3)
            .filter(|&s| error_at(400, s) <= error_at(100, s) + 1e-15)
            .count();
        assert!(wins >= 2);
    }
}
