//! Driving noise: moments, quantile bounds and samplers of the increments
//! `ΔW_n = W(t_n) - W(t_{n-1})`.
//!
//! Only noises with independent, identically distributed components and
//! independent increments are supported.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf_inv;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;

/// Increment law of the driving process.
pub trait NoiseModel: Send + Sync {
    /// `E[ΔW_j^p]` for a single component.
    fn component_moment(&self, p: u32, h: f64) -> f64;

    /// `E[ΔW^s]`, the product of component moments.
    fn increment_moment(&self, s: &MultiIndex, h: f64) -> f64 {
        s.entries()
            .iter()
            .map(|&p| self.component_moment(p, h))
            .product()
    }

    /// Smallest `a` with `P(|ΔW_j| < a) >= p`.
    fn quantile_bound(&self, j: usize, p: f64, h: f64) -> Result<f64>;

    /// Fills `out` with one independent increment per component.
    fn sample_increment(&self, rng: &mut dyn RngCore, h: f64, out: &mut [f64]);
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "probability must lie in (0, 1), got {p}"
        )))
    }
}

/// Standard Wiener process: components are independent `N(0, h)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Wiener;

/// `(p - 1)!!`, the even moments of a standard normal.
fn double_factorial_odd(p: u32) -> f64 {
    let mut acc = 1.0;
    let mut k = p.saturating_sub(1);
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

impl NoiseModel for Wiener {
    fn component_moment(&self, p: u32, h: f64) -> f64 {
        if p % 2 == 1 {
            0.0
        } else {
            double_factorial_odd(p) * h.powi((p / 2) as i32)
        }
    }

    fn quantile_bound(&self, _j: usize, p: f64, h: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(h.sqrt() * std::f64::consts::SQRT_2 * erf_inv(p))
    }

    fn sample_increment(&self, rng: &mut dyn RngCore, h: f64, out: &mut [f64]) {
        let scale = h.sqrt();
        for w in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = scale * z;
        }
    }
}

/// Wiener increments with each standardized component truncated to
/// `[-c, c]`: `ΔW_j = √h Z_j` with `Z_j` a standard normal conditioned on
/// `|Z_j| <= c`.
///
/// Bounded support makes the effective-noise remainder vanish as the
/// truncation order grows, which the Gaussian law does not guarantee.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedGaussian {
    c: f64,
    /// Standardized even moments `E[Z^p]`, cached for small `p`.
    moments: Vec<f64>,
    mass: f64,
}

const TRUNCATED_CACHE: usize = 24;

impl TruncatedGaussian {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "truncation bound must be positive and finite, got {c}"
            )));
        }
        let mass = 2.0 * Normal::standard().cdf(c) - 1.0;
        // E[Z^p] = (p-1)!! P((p+1)/2, c²/2) / P(1/2, c²/2) with P the
        // regularized lower incomplete gamma function.
        let mut moments = vec![0.0; TRUNCATED_CACHE + 1];
        moments[0] = 1.0;
        for p in (2..=TRUNCATED_CACHE).step_by(2) {
            moments[p] = double_factorial_odd(p as u32)
                * gamma_lr((p as f64 + 1.0) / 2.0, 0.5 * c * c)
                / mass;
        }
        Ok(TruncatedGaussian { c, moments, mass })
    }

    pub fn bound(&self) -> f64 {
        self.c
    }
}

impl NoiseModel for TruncatedGaussian {
    fn component_moment(&self, p: u32, h: f64) -> f64 {
        if p % 2 == 1 {
            return 0.0;
        }
        let p = p as usize;
        let standardized = if p < self.moments.len() {
            self.moments[p]
        } else {
            double_factorial_odd(p as u32) * gamma_lr((p as f64 + 1.0) / 2.0, 0.5 * self.c * self.c)
                / self.mass
        };
        standardized * h.powi((p / 2) as i32)
    }

    fn quantile_bound(&self, _j: usize, p: f64, h: f64) -> Result<f64> {
        check_probability(p)?;
        let std = Normal::standard();
        Ok(h.sqrt() * std.inverse_cdf(0.5 * (1.0 + p * self.mass)))
    }

    fn sample_increment(&self, rng: &mut dyn RngCore, h: f64, out: &mut [f64]) {
        let scale = h.sqrt();
        for w in out.iter_mut() {
            let z = loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= self.c {
                    break z;
                }
            };
            *w = scale * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wiener_examples() {
        let w = Wiener;
        assert!((w.increment_moment(&MultiIndex::from([2]), 0.1) - 0.1).abs() < 1e-15);
        assert!((w.increment_moment(&MultiIndex::from([4]), 0.1) - 0.03).abs() < 1e-15);
        assert_eq!(w.increment_moment(&MultiIndex::from([1, 2]), 0.1), 0.0);
        assert_eq!(w.increment_moment(&MultiIndex::zeros(3), 0.1), 1.0);
        assert!((w.increment_moment(&MultiIndex::from([6]), 2.0) - 15.0 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn wiener_quantile_examples() {
        let w = Wiener;
        assert!((w.quantile_bound(0, 0.9973, 1.0).unwrap() - 3.0).abs() < 1e-3);
        assert!((w.quantile_bound(0, 0.6827, 1.0).unwrap() - 1.0).abs() < 1e-3);
        assert!((w.quantile_bound(0, 0.9973, 0.01).unwrap() - 0.30).abs() < 1e-4);
        assert!(w.quantile_bound(0, 1.0, 1.0).is_err());
        assert!(w.quantile_bound(0, 0.0, 1.0).is_err());
    }

    /// Numerical quadrature of z^p φ(z) over [-c, c] as an independent
    /// oracle for the truncated moments.
    fn quadrature_moment(c: f64, p: i32) -> f64 {
        let n = 200_000;
        let dz = 2.0 * c / n as f64;
        let phi = |z: f64| (-0.5 * z * z).exp();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let z = -c + i as f64 * dz;
            let weight = if i == 0 || i == n { 0.5 } else { 1.0 };
            num += weight * z.powi(p) * phi(z);
            den += weight * phi(z);
        }
        num / den
    }

    #[test]
    fn truncated_moments_match_quadrature() {
        for &c in &[1.0, 2.0, 3.0] {
            let t = TruncatedGaussian::new(c).unwrap();
            for p in [2, 4, 6, 8] {
                let want = quadrature_moment(c, p);
                let got = t.component_moment(p as u32, 1.0);
                assert!(
                    ((got - want) / want).abs() < 1e-8,
                    "c={c} p={p}: {got} vs {want}"
                );
            }
            assert_eq!(t.component_moment(3, 0.5), 0.0);
            assert!(t.component_moment(2, 1.0) < 1.0);
        }
    }

    #[test]
    fn truncated_quantile_never_exceeds_bound() {
        let t = TruncatedGaussian::new(2.0).unwrap();
        let a = t.quantile_bound(0, 0.999_999, 1.0).unwrap();
        assert!(a <= 2.0 + 1e-9);
        let b = t.quantile_bound(0, 0.5, 0.04).unwrap();
        assert!(b > 0.0 && b < 0.4);
    }

    #[test]
    fn truncated_samples_stay_in_support() {
        let t = TruncatedGaussian::new(1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = [0.0; 3];
        for _ in 0..10_000 {
            t.sample_increment(&mut rng, 0.25, &mut out);
            assert!(out.iter().all(|w| w.abs() <= 0.75));
        }
    }

    #[test]
    fn rejects_bad_truncation() {
        assert!(TruncatedGaussian::new(0.0).is_err());
        assert!(TruncatedGaussian::new(f64::INFINITY).is_err());
    }
}
