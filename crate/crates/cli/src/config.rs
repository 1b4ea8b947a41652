//! Run configuration: a single JSON document naming the model, noise,
//! time grid, truncation orders, initial law, sample counts and output
//! location.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use sde_moments::model::EARTH_MU;
use sde_moments::multiindex::{count_up_to, MAX_ORDER};
use sde_moments::propagation::{step_count, PropagationSettings};
use sde_moments::{
    InitialCondition, KeplerModel, LinearModel, NoiseModel, ScalarPolynomialModel, SdeModel,
    TruncatedGaussian, Wiener,
};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Planar two-body motion with noisy accelerations.
    Kepler {
        #[serde(default = "default_mu")]
        mu: f64,
        sigma3: f64,
        sigma4: f64,
    },
    /// `u = a x + b`, constant diffusion `sigma` (`v x d`).
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
    /// Scalar `u = Σ drift[i] x^i`, `G = Σ diffusion[i] x^i`.
    Polynomial {
        drift: Vec<f64>,
        diffusion: Vec<f64>,
    },
}

fn default_mu() -> f64 {
    EARTH_MU
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    Wiener,
    /// Standardized increments truncated to `[-c, c]`.
    TruncatedGaussian { c: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Fixed {
        x0: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    /// `[min, max]` per component; when absent each range is the mean ± 6
    /// standard deviations of a linearized propagation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<Vec<[f64; 2]>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points: 401,
            ranges: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub h: f64,
    #[serde(default)]
    pub t0: f64,
    pub tn: f64,
    /// Truncation order `N` of the moment recursion.
    pub order: usize,
    pub init: InitConfig,
    /// Chaos-expansion degree (Gaussian initial law only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pce_order: Option<usize>,
    /// Fit samples; defaults to twice the basis size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pce_samples: Option<usize>,
    /// Fresh initial states for the mixture density.
    #[serde(default = "default_mixture_samples")]
    pub mixture_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_mixture_samples() -> usize {
    10_000
}

fn default_mc_samples() -> usize {
    10_000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Models, noise and initial law built from a validated configuration.
pub struct Setup {
    pub model: Box<dyn SdeModel>,
    pub noise: Box<dyn NoiseModel>,
    pub init: InitialCondition,
    pub settings: PropagationSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn state_dim(&self) -> usize {
        match &self.model {
            ModelConfig::Kepler { .. } => 4,
            ModelConfig::Linear { b, .. } => b.len(),
            ModelConfig::Polynomial { .. } => 1,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.init, InitConfig::Gaussian { .. })
    }

    /// Chaos basis size `C(N_PCE + v, v)`.
    pub fn basis_size(&self) -> Option<usize> {
        self.pce_order.map(|p| count_up_to(self.state_dim(), p))
    }

    /// Fit sample count, defaulting to twice the basis size.
    pub fn fit_samples(&self) -> Option<usize> {
        self.pce_samples
            .or_else(|| self.basis_size().map(|n| 2 * n))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if !(self.tn > self.t0) {
            return bad(format!("tn ({}) must exceed t0 ({})", self.tn, self.t0));
        }
        step_count(self.t0, self.tn, self.h).map_err(|e| CliError::Config(e.to_string()))?;
        if self.order == 0 || self.order > MAX_ORDER {
            return bad(format!(
                "order must lie in 1..={MAX_ORDER}, got {}",
                self.order
            ));
        }
        if self.grid.points < 2 {
            return bad("grid needs at least 2 points".into());
        }
        let v = self.state_dim();
        if let Some(ranges) = &self.grid.ranges {
            if ranges.len() != v {
                return bad(format!(
                    "grid.ranges needs {v} entries, got {}",
                    ranges.len()
                ));
            }
            if ranges.iter().any(|[lo, hi]| !(hi > lo)) {
                return bad("each grid range must satisfy min < max".into());
            }
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be at least 2".into());
        }
        if self.mixture_samples == 0 {
            return bad("mixture_samples must be positive".into());
        }
        match &self.init {
            InitConfig::Fixed { x0 } if x0.len() != v => {
                return bad(format!("init.x0 needs {v} entries, got {}", x0.len()));
            }
            InitConfig::Gaussian { mean, covariance } => {
                if mean.len() != v
                    || covariance.len() != v
                    || covariance.iter().any(|r| r.len() != v)
                {
                    return bad(format!(
                        "init.mean and init.covariance must have dimension {v}"
                    ));
                }
                let Some(np) = self.basis_size() else {
                    return bad("pce_order is required for a gaussian initial law".into());
                };
                let ns = self.fit_samples().unwrap_or(0);
                if ns < np {
                    return bad(format!(
                        "pce_samples ({ns}) must be at least the basis size {np}"
                    ));
                }
            }
            InitConfig::Fixed { .. } => {}
        }
        // Model, noise and initial law constructors carry their own checks.
        self.setup().map(|_| ())
    }

    pub fn setup(&self) -> Result<Setup, CliError> {
        let config_err = |e: sde_moments::Error| CliError::Config(e.to_string());
        let model: Box<dyn SdeModel> = match &self.model {
            ModelConfig::Kepler { mu, sigma3, sigma4 } => {
                Box::new(KeplerModel::new(*mu, *sigma3, *sigma4).map_err(config_err)?)
            }
            ModelConfig::Linear { a, b, sigma } => {
                Box::new(LinearModel::new(a.clone(), b.clone(), sigma.clone()).map_err(config_err)?)
            }
            ModelConfig::Polynomial { drift, diffusion } => {
                if drift.is_empty() || diffusion.is_empty() {
                    return Err(CliError::Config(
                        "polynomial model needs drift and diffusion coefficients".into(),
                    ));
                }
                Box::new(ScalarPolynomialModel::new(drift.clone(), diffusion.clone()))
            }
        };
        if model.state_dim() + model.noise_dim() > 16 {
            return Err(CliError::Config(
                "state plus noise dimension must not exceed 16".into(),
            ));
        }
        let noise: Box<dyn NoiseModel> = match &self.noise {
            NoiseConfig::Wiener => Box::new(Wiener),
            NoiseConfig::TruncatedGaussian { c } => {
                Box::new(TruncatedGaussian::new(*c).map_err(config_err)?)
            }
        };
        let init = match &self.init {
            InitConfig::Fixed { x0 } => InitialCondition::fixed(x0.clone()).map_err(config_err)?,
            InitConfig::Gaussian { mean, covariance } => {
                let v = mean.len();
                let flat: Vec<f64> = covariance.iter().flatten().copied().collect();
                InitialCondition::gaussian(mean.clone(), DMatrix::from_row_slice(v, v, &flat))
                    .map_err(config_err)?
            }
        };
        Ok(Setup {
            model,
            noise,
            init,
            settings: PropagationSettings {
                h: self.h,
                t0: self.t0,
                tn: self.tn,
                order: self.order,
                trajectory_stride: None,
            },
        })
    }
}
