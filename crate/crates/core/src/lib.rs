//! Deterministic moment propagation for Euler-Maruyama solutions of Itô
//! SDEs, polynomial chaos over random initial conditions, Gram-Charlier
//! marginal densities and a Monte Carlo reference.

pub mod baseline;
pub mod density;
pub mod error;
pub mod model;
pub mod multiindex;
pub mod noise;
pub mod pce;
pub mod propagation;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use model::{InitialCondition, KeplerModel, LinearModel, ScalarPolynomialModel, SdeModel};
pub use multiindex::MultiIndex;
pub use noise::{NoiseModel, TruncatedGaussian, Wiener};
