//! Monte Carlo reference: Euler-Maruyama paths, empirical moments with
//! jackknife standard errors, and Gaussian kernel density estimates.

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{InitialCondition, SdeModel};
use crate::multiindex::MultiIndex;
use crate::noise::NoiseModel;
use crate::propagation::step_count;
use crate::rng::{self, Domain};
use crate::stats::{pairwise_sum, quantile_sorted, std_dev};

/// Final state of one path of
/// `X_n = X_{n-1} + h u(X_{n-1}, t_{n-1}) + G(X_{n-1}, t_{n-1}) ΔW_n`.
pub fn euler_maruyama_path(
    x0: &[f64],
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    h: f64,
    t0: f64,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let v = model.state_dim();
    let d = model.noise_dim();
    if x0.len() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            actual: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let mut u = vec![0.0; v];
    let mut g = vec![0.0; v * d];
    let mut w = vec![0.0; d];
    for n in 1..=steps {
        let t = t0 + (n - 1) as f64 * h;
        model.drift(&x, t, &mut u).map_err(|e| e.at_step(n))?;
        model.diffusion(&x, t, &mut g).map_err(|e| e.at_step(n))?;
        noise.sample_increment(rng, h, &mut w);
        for k in 0..v {
            let row = &g[k * d..(k + 1) * d];
            x[k] += h * u[k] + row.iter().zip(&w).map(|(g, w)| g * w).sum::<f64>();
        }
        if x.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Euler-Maruyama path".into()).at_step(n));
        }
    }
    Ok(x)
}

/// Final states of independent Euler-Maruyama paths.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEnsemble {
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
    pub steps: usize,
    pub h: f64,
}

impl SampleEnsemble {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Values of component `k` across the ensemble.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[k]).collect()
    }
}

/// Simulates `count` paths over `[t0, tn]`. Path `i` draws its initial
/// state (for a Gaussian law) and then its increments from its own random
/// stream, so the ensemble does not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    init: &InitialCondition,
    model: &dyn SdeModel,
    noise: &dyn NoiseModel,
    h: f64,
    t0: f64,
    tn: f64,
    count: usize,
    seed: u64,
) -> Result<SampleEnsemble> {
    let steps = step_count(t0, tn, h)?;
    let sampler = init.sampler();
    let paths: Vec<Result<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::Paths, i as u64);
            let x0 = sampler.sample(&mut rng);
            euler_maruyama_path(&x0, model, noise, h, t0, steps, &mut rng)
        })
        .collect();
    let states = paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.map_err(|e| e.at_sample(i)))
        .collect::<Result<_>>()?;
    Ok(SampleEnsemble {
        states,
        seed,
        steps,
        h,
    })
}

/// Sample mean of `y` with its jackknife standard error.
pub fn jackknife_mean(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    let total = pairwise_sum(y);
    let mean = total / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let leave_one_out: Vec<f64> = y.iter().map(|v| (total - v) / (n - 1) as f64).collect();
    let centre = pairwise_sum(&leave_one_out) / n as f64;
    let squares: Vec<f64> = leave_one_out
        .iter()
        .map(|t| (t - centre) * (t - centre))
        .collect();
    let se = ((n - 1) as f64 / n as f64 * pairwise_sum(&squares)).sqrt();
    (mean, se)
}

/// `E[X^r]` estimated from the ensemble, with its standard error.
pub fn empirical_moment(ensemble: &SampleEnsemble, r: &MultiIndex) -> Result<(f64, f64)> {
    if ensemble.is_empty() {
        return Err(Error::TooFewSamples {
            required: 1,
            actual: 0,
        });
    }
    if r.dim() != ensemble.dim() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.dim(),
            actual: r.dim(),
        });
    }
    let y: Vec<f64> = ensemble.states.iter().map(|x| r.monomial(x)).collect();
    Ok(jackknife_mean(&y))
}

/// Sample mean vector and covariance matrix (with the `n - 1` denominator).
pub fn mean_and_covariance(ensemble: &SampleEnsemble) -> (Vec<f64>, Vec<Vec<f64>>) {
    let v = ensemble.dim();
    let n = ensemble.len() as f64;
    let columns: Vec<Vec<f64>> = (0..v).map(|k| ensemble.component(k)).collect();
    let mean: Vec<f64> = columns.iter().map(|c| pairwise_sum(c) / n).collect();
    let cov = (0..v)
        .map(|i| {
            (0..v)
                .map(|j| {
                    let products: Vec<f64> = columns[i]
                        .iter()
                        .zip(&columns[j])
                        .map(|(a, b)| (a - mean[i]) * (b - mean[j]))
                        .collect();
                    pairwise_sum(&products) / (n - 1.0)
                })
                .collect()
        })
        .collect();
    (mean, cov)
}

/// Kernels further than this many bandwidths away are not evaluated; their
/// contribution is below `1e-15` of the peak.
const KERNEL_CUTOFF: f64 = 8.5;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density estimate with Silverman's bandwidth
/// `1.06 σ̂ n^{-1/5}`, `σ̂ = min(std, IQR / 1.34)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kde {
    sorted: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                actual: samples.len(),
            });
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("density samples".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::DegenerateSamples("all samples are equal".into()));
        }
        let std = std_dev(&sorted);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
        let bandwidth = 1.06 * spread * (sorted.len() as f64).powf(-0.2);
        Ok(Kde { sorted, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let reach = KERNEL_CUTOFF * self.bandwidth;
        let lo = self.sorted.partition_point(|&s| s < x - reach);
        let hi = self.sorted.partition_point(|&s| s <= x + reach);
        let kernels: Vec<f64> = self.sorted[lo..hi]
            .iter()
            .map(|&s| {
                let u = (x - s) / self.bandwidth;
                (-0.5 * u * u).exp()
            })
            .collect();
        pairwise_sum(&kernels) * INV_SQRT_2PI / (self.bandwidth * self.sorted.len() as f64)
    }

    pub fn pdf_grid(&self, grid: &[f64]) -> Vec<f64> {
        grid.par_iter().map(|&x| self.pdf(x)).collect()
    }
}

/// Estimate at a single point.
pub fn kde_1d(samples: &[f64], x: f64) -> Result<f64> {
    Ok(Kde::new(samples)?.pdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearModel, ScalarPolynomialModel};
    use crate::noise::Wiener;
    use crate::propagation::central_step;
    use crate::stats::linspace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_diffusion_path_is_central_path() {
        let m = ScalarPolynomialModel::new(vec![0.5, -1.0, 0.0, -0.2], vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = euler_maruyama_path(&[1.0], &m, &Wiener, 0.01, 0.0, 200, &mut rng).unwrap();
        let mut c = vec![1.0];
        for n in 0..200 {
            c = central_step(&c, n as f64 * 0.01, 0.01, &m).unwrap();
        }
        assert_eq!(x, c);
    }

    #[test]
    fn single_step_of_pure_noise() {
        let m = LinearModel::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = euler_maruyama_path(&[1.0, 2.0], &m, &Wiener, 0.25, 0.0, 1, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = [0.0; 2];
        Wiener.sample_increment(&mut rng, 0.25, &mut w);
        assert_eq!(x, vec![1.0 + w[0], 2.0 + w[1]]);
    }

    #[test]
    fn ou_path_replays_golden_value() {
        let m = LinearModel::scalar(-1.0, 0.0, 1.0);
        let init = InitialCondition::fixed(vec![2.0]).unwrap();
        let e = simulate_ensemble(&init, &m, &Wiener, 0.1, 0.0, 1.0, 3, 42).unwrap();
        let again = simulate_ensemble(&init, &m, &Wiener, 0.1, 0.0, 1.0, 3, 42).unwrap();
        assert_eq!(e, again);
        assert_eq!(e.steps, 10);
        let golden = [1.3712682120287412, 1.1266586731962704, 0.5968696393054278];
        for (x, g) in e.states.iter().zip(golden) {
            assert_eq!(x[0], g);
        }
    }

    #[test]
    fn divergent_path_reports_sample_and_step() {
        let m = ScalarPolynomialModel::new(vec![0.0, 0.0, 0.0, 1.0], vec![0.0]);
        let init = InitialCondition::fixed(vec![10.0]).unwrap();
        let err = simulate_ensemble(&init, &m, &Wiener, 0.5, 0.0, 100.0, 2, 0).unwrap_err();
        assert!(matches!(err, Error::AtSample { sample: 0, .. }));
        assert!(matches!(err.root(), Error::NonFinite(_)));
    }

    #[test]
    fn empirical_moment_examples() {
        let constant = SampleEnsemble {
            states: vec![vec![2.0, 3.0]; 10],
            seed: 0,
            steps: 1,
            h: 1.0,
        };
        let (value, se) = empirical_moment(&constant, &MultiIndex::from([2, 1])).unwrap();
        assert_eq!(value, 12.0);
        assert!(se < 1e-12);
        let varied = SampleEnsemble {
            states: vec![vec![1.0], vec![2.0], vec![6.0]],
            seed: 0,
            steps: 1,
            h: 1.0,
        };
        assert_eq!(
            empirical_moment(&varied, &MultiIndex::from([1])).unwrap().0,
            3.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = SampleEnsemble {
            states: (0..1_000_000)
                .map(|_| vec![StandardNormal.sample(&mut rng)])
                .collect(),
            seed: 5,
            steps: 0,
            h: 1.0,
        };
        let (m2, se) = empirical_moment(&normal, &MultiIndex::from([2])).unwrap();
        assert!((m2 - 1.0).abs() < 3.0 * se, "{m2} ± {se}");
    }

    #[test]
    fn jackknife_of_mean_is_classical_standard_error() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let (_, se) = jackknife_mean(&y);
        let classical = std_dev(&y) / (y.len() as f64).sqrt();
        assert!((se - classical).abs() < 1e-14);
    }

    #[test]
    fn covariance_of_small_ensemble() {
        let e = SampleEnsemble {
            states: vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 7.0]],
            seed: 0,
            steps: 1,
            h: 1.0,
        };
        let (mean, cov) = mean_and_covariance(&e);
        assert_eq!(mean, vec![3.0, 5.0]);
        assert_eq!(cov, vec![vec![4.0, 5.0], vec![5.0, 7.0]]);
    }

    #[test]
    fn kde_examples() {
        let kde = Kde::new(&[-1.0, 1.0]).unwrap();
        let h = kde.bandwidth();
        // std √2, interquartile range 1
        assert!((h - 1.06 / 1.34 * 2f64.powf(-0.2)).abs() < 1e-15);
        let want = (-0.5 / (h * h)).exp() * INV_SQRT_2PI / h;
        assert!((kde.pdf(0.0) - want).abs() < 1e-16);
        assert!(matches!(
            Kde::new(&[3.0, 3.0, 3.0]),
            Err(Error::DegenerateSamples(_))
        ));
        assert!(Kde::new(&[1.0]).is_err());
    }

    #[test]
    fn kde_mass_and_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let kde = Kde::new(&samples).unwrap();
        let grid = linspace(-8.0, 8.0, 3201);
        let f = kde.pdf_grid(&grid);
        let mass: f64 = (1..grid.len())
            .map(|i| 0.5 * (grid[i] - grid[i - 1]) * (f[i] + f[i - 1]))
            .sum();
        assert!((mass - 1.0).abs() < 1e-3);
        let worst = grid
            .iter()
            .zip(&f)
            .filter(|(x, _)| x.abs() <= 3.0)
            .map(|(&x, &y)| (y - (-0.5 * x * x).exp() * INV_SQRT_2PI).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "{worst}");
    }
}
