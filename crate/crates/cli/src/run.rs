//! The four subcommands. Each returns its results in memory and writes its
//! artifacts into the configured output directory.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use sde_moments::baseline::{empirical_moment, mean_and_covariance, simulate_ensemble, Kde};
use sde_moments::density::{
    fit_density_surrogates, marginal_density, tvd, GcDensity, MixtureDensity,
};
use sde_moments::multiindex::enumerate_up_to;
use sde_moments::pce::{draw_initial_states, propagate_random, PceSettings, RandomPropagation};
use sde_moments::propagation::{
    central_step, propagate_fixed, solution_moments, step_count, step_linear_noise,
    LinearNoiseState, Propagation, PropagationSettings,
};
use sde_moments::rng::Domain;
use sde_moments::stats::linspace;
use sde_moments::{InitialCondition, MultiIndex};

use crate::config::{RunConfig, Setup};
use crate::error::CliError;
use crate::output::{self, fmt_f64, Layout};

/// Width of default density grids in linearized standard deviations.
pub const GRID_HALF_WIDTH: f64 = 6.0;

/// Per-invocation flags that are not part of the configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub trajectory_stride: Option<usize>,
    pub clip_nonnegative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub time: f64,
    /// `moments` when assembled from second moments, `linearized` when the
    /// order-1 truncation supplied them (`N = 1`).
    pub source: String,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub steps: usize,
    pub propagations: usize,
    pub total_seconds: f64,
    pub mean_step_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "init", rename_all = "snake_case")]
pub enum MomentsReport {
    Fixed {
        order: usize,
        steps: usize,
    },
    Gaussian {
        order: usize,
        steps: usize,
        pce_order: usize,
        basis_size: usize,
        samples: usize,
        condition_number: f64,
        max_residual_norm: f64,
    },
}

pub struct MomentsOutcome {
    pub indices: Vec<MultiIndex>,
    pub values: Vec<f64>,
    pub covariance: CovarianceReport,
    pub report: MomentsReport,
    pub timings: Timings,
}

impl MomentsOutcome {
    pub fn moment(&self, r: &MultiIndex) -> Option<f64> {
        self.indices
            .iter()
            .position(|i| i == r)
            .map(|i| self.values[i])
    }
}

fn settings(setup: &Setup, stride: Option<usize>) -> PropagationSettings {
    PropagationSettings {
        trajectory_stride: stride,
        ..setup.settings
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Mean and covariance assembled from first and second raw moments.
fn covariance_from_moments(
    v: usize,
    moment: impl Fn(&MultiIndex) -> f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mean: Vec<f64> = (0..v).map(|i| moment(&MultiIndex::unit(v, i))).collect();
    let cov = (0..v)
        .map(|i| {
            (0..v)
                .map(|j| {
                    let mut r = vec![0u32; v];
                    r[i] += 1;
                    r[j] += 1;
                    moment(&MultiIndex::new(r)) - mean[i] * mean[j]
                })
                .collect()
        })
        .collect();
    (mean, cov)
}

/// Mean and covariance of the order-1 truncation around the central path
/// started at the initial mean, with the initial covariance as the starting
/// second moment of the effective noise.
pub fn linearized_moments(setup: &Setup) -> Result<(Vec<f64>, DMatrix<f64>), CliError> {
    let s = &setup.settings;
    let steps = step_count(s.t0, s.tn, s.h)?;
    let mut central = setup.init.mean().to_vec();
    let mut state = LinearNoiseState {
        mean: DVector::zeros(central.len()),
        second_moment: setup.init.covariance(),
    };
    for n in 1..=steps {
        let t = s.t0 + (n - 1) as f64 * s.h;
        state = step_linear_noise(
            &state,
            &central,
            t,
            s.h,
            setup.model.as_ref(),
            setup.noise.as_ref(),
        )?;
        central = central_step(&central, t, s.h, setup.model.as_ref())?;
    }
    let mean = central
        .iter()
        .zip(state.mean.iter())
        .map(|(c, m)| c + m)
        .collect();
    Ok((mean, state.covariance()))
}

fn write_moment_rows(time: f64, indices: &[MultiIndex], values: &[f64]) -> Vec<Vec<String>> {
    indices
        .iter()
        .zip(values)
        .map(|(r, x)| vec![fmt_f64(time), r.to_string(), fmt_f64(*x)])
        .collect()
}

/// Algorithm-1 moments at the final time, for a fixed or Gaussian initial
/// state.
pub fn run_moments(config: &RunConfig, options: &RunOptions) -> Result<MomentsOutcome, CliError> {
    let setup = config.setup()?;
    let layout = Layout::new(&config.output_dir);
    output::ensure_dir(&layout.dir)?;
    let v = config.state_dim();
    let steps = step_count(config.t0, config.tn, config.h)?;
    log::info!("moments: {steps} steps at order {}", config.order);
    let started = Instant::now();
    let (indices, values, report, propagations, linear_source): (_, _, _, _, Option<Propagation>) =
        match &setup.init {
            InitialCondition::Fixed(x0) => {
                let run = propagate_fixed(
                    x0,
                    setup.model.as_ref(),
                    setup.noise.as_ref(),
                    &settings(&setup, options.trajectory_stride),
                )?;
                let indices = run.final_state.table.layout().indices().to_vec();
                let values = solution_moments(&run.final_state.central, &run.final_state.table)?;
                let report = MomentsReport::Fixed {
                    order: config.order,
                    steps,
                };
                (indices, values, report, 1, Some(run))
            }
            InitialCondition::Gaussian { .. } => {
                if options.trajectory_stride.is_some() {
                    return Err(CliError::Config(
                        "--trajectory-stride needs a fixed initial state".into(),
                    ));
                }
                let random = run_pce(config, &setup)?;
                let report = MomentsReport::Gaussian {
                    order: config.order,
                    steps,
                    pce_order: random.basis.order(),
                    basis_size: random.basis.len(),
                    samples: random.samples.len(),
                    condition_number: random.condition_number(),
                    max_residual_norm: random.max_residual_norm(),
                };
                (
                    random.indices.clone(),
                    random.moments(),
                    report,
                    random.runs.len(),
                    None,
                )
            }
        };
    let elapsed = started.elapsed().as_secs_f64();

    let (mean, covariance, source) = if config.order >= 2 {
        let lookup = |r: &MultiIndex| {
            let i = indices
                .iter()
                .position(|i| i == r)
                .expect("index within order");
            values[i]
        };
        let (mean, cov) = covariance_from_moments(v, lookup);
        (mean, cov, "moments")
    } else if let Some(run) = &linear_source {
        let fs = &run.final_state;
        let mean = fs
            .central
            .iter()
            .zip(fs.linear.mean.iter())
            .map(|(c, m)| c + m)
            .collect();
        (mean, matrix_rows(&fs.linear.covariance()), "linearized")
    } else {
        let (mean, cov) = linearized_moments(&setup)?;
        (mean, matrix_rows(&cov), "linearized")
    };
    let covariance = CovarianceReport {
        time: config.t0 + steps as f64 * config.h,
        source: source.into(),
        mean,
        covariance,
    };
    let timings = Timings {
        steps,
        propagations,
        total_seconds: elapsed,
        mean_step_seconds: elapsed / (steps * propagations) as f64,
    };

    output::write_csv(
        &layout.moments(),
        "moments",
        &["time", "multiindex", "value"],
        write_moment_rows(covariance.time, &indices, &values),
    )?;
    output::write_json(&layout.covariance(), &covariance)?;
    output::write_json(&layout.timings(), &timings)?;
    output::write_json(&layout.report(), &report)?;
    if let Some(trajectory) = linear_source.as_ref().and_then(|r| r.trajectory.as_ref()) {
        let mut rows = Vec::new();
        for snap in trajectory {
            let values = solution_moments(&snap.central, &snap.table)?;
            rows.extend(write_moment_rows(snap.time, &indices, &values));
        }
        output::write_csv(
            &layout.trajectory_moments(),
            "trajectory_moments",
            &["time", "multiindex", "value"],
            rows,
        )?;
        let mut header = vec!["step".to_string(), "time".to_string()];
        header.extend((0..v).map(|k| format!("x_{k}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        output::write_csv(
            &layout.central_path(),
            "central_path",
            &header,
            trajectory.iter().map(|snap| {
                let mut row = vec![snap.step.to_string(), fmt_f64(snap.time)];
                row.extend(snap.central.iter().map(|x| fmt_f64(*x)));
                row
            }),
        )?;
    }
    log::info!("moments: done in {elapsed:.3} s");
    Ok(MomentsOutcome {
        indices,
        values,
        covariance,
        report,
        timings,
    })
}

fn run_pce(config: &RunConfig, setup: &Setup) -> Result<RandomPropagation, CliError> {
    let pce = PceSettings {
        order: config.pce_order.expect("validated"),
        samples: config.fit_samples().expect("validated"),
        seed: config.seed,
    };
    Ok(propagate_random(
        &setup.init,
        setup.model.as_ref(),
        setup.noise.as_ref(),
        &settings(setup, None),
        &pce,
    )?)
}

/// Evaluation grid per component: the configured ranges, or the linearized
/// mean ± 6 standard deviations. `None` marks a component with zero
/// linearized spread.
pub fn density_grids(config: &RunConfig, setup: &Setup) -> Result<Vec<Option<Vec<f64>>>, CliError> {
    let points = config.grid.points;
    if let Some(ranges) = &config.grid.ranges {
        return Ok(ranges
            .iter()
            .map(|[lo, hi]| Some(linspace(*lo, *hi, points)))
            .collect());
    }
    let (mean, cov) = linearized_moments(setup)?;
    Ok(mean
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let sd = cov[(k, k)].max(0.0).sqrt();
            (sd > 0.0).then(|| linspace(m - GRID_HALF_WIDTH * sd, m + GRID_HALF_WIDTH * sd, points))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    fn of(grid: &[f64]) -> Self {
        GridSpec {
            min: grid[0],
            max: grid[grid.len() - 1],
            points: grid.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDensity {
    pub component: usize,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Auxiliary mean, deviation and series coefficients (fixed init).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// Smallest raw density value on the grid; negative values are kept in
    /// the CSV unless clipping was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_pdf: Option<f64>,
    /// Mixture diagnostics (Gaussian init).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_components: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_residual_norm: Option<f64>,
}

impl ComponentDensity {
    fn degenerate(component: usize, grid: Option<&Vec<f64>>, message: String) -> Self {
        ComponentDensity {
            component,
            status: Status::Degenerate,
            message: Some(message),
            grid: grid.map(|g| GridSpec::of(g)),
            mu: None,
            sigma: None,
            coefficients: None,
            min_pdf: None,
            mixture_components: None,
            skipped: None,
            condition_number: None,
            max_residual_norm: None,
        }
    }

    fn ok(component: usize, grid: &[f64], values: &[f64]) -> Self {
        ComponentDensity {
            status: Status::Ok,
            message: None,
            grid: Some(GridSpec::of(grid)),
            min_pdf: Some(values.iter().copied().fold(f64::INFINITY, f64::min)),
            ..ComponentDensity::degenerate(component, None, String::new())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub order: usize,
    pub method: String,
    pub clipped: bool,
    pub components: Vec<ComponentDensity>,
}

/// A marginal density tabulated on its grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

pub struct DensityOutcome {
    pub report: DensityReport,
    pub curves: Vec<Option<Curve>>,
}

fn gc_on_grid(density: &GcDensity, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&x| density.pdf(x)).collect()
}

/// Algorithm-2 marginals for every component. A degenerate component is
/// reported and skipped; the others are still written.
pub fn run_density(config: &RunConfig, options: &RunOptions) -> Result<DensityOutcome, CliError> {
    let setup = config.setup()?;
    let layout = Layout::new(&config.output_dir);
    output::ensure_dir(&layout.dir)?;
    let v = config.state_dim();
    let grids = density_grids(config, &setup)?;
    log::info!("density: {v} components at order {}", config.order);

    let mut components = Vec::with_capacity(v);
    let mut curves = Vec::with_capacity(v);
    let method = match &setup.init {
        InitialCondition::Fixed(x0) => {
            let run = propagate_fixed(
                x0,
                setup.model.as_ref(),
                setup.noise.as_ref(),
                &settings(&setup, None),
            )?;
            for (k, grid) in grids.iter().enumerate() {
                let density = match (grid, marginal_density(&run.final_state, k)) {
                    (Some(grid), Ok(density)) => (grid, density),
                    (_, Err(e)) if !e.is_degeneracy() => return Err(e.into()),
                    (_, Err(e)) => {
                        components.push(ComponentDensity::degenerate(
                            k,
                            grid.as_ref(),
                            e.to_string(),
                        ));
                        curves.push(None);
                        continue;
                    }
                    (None, Ok(_)) => {
                        components.push(ComponentDensity::degenerate(
                            k,
                            None,
                            "zero linearized spread leaves no default grid".into(),
                        ));
                        curves.push(None);
                        continue;
                    }
                };
                let (grid, density) = density;
                let values = gc_on_grid(&density, grid);
                components.push(ComponentDensity {
                    mu: Some(density.mu()),
                    sigma: Some(density.sigma()),
                    coefficients: Some(density.coefficients().to_vec()),
                    ..ComponentDensity::ok(k, grid, &values)
                });
                curves.push(Some(Curve {
                    grid: grid.clone(),
                    values,
                }));
            }
            "gram_charlier"
        }
        InitialCondition::Gaussian { .. } => {
            let random = run_pce(config, &setup)?;
            let fresh = draw_initial_states(
                &setup.init,
                config.seed,
                Domain::MixtureSamples,
                config.mixture_samples,
            );
            for (k, grid) in grids.iter().enumerate() {
                match mixture_component(&random, &fresh, k) {
                    Ok((mixture, cond, resid)) => {
                        let Some(grid) = grid else {
                            components.push(ComponentDensity::degenerate(
                                k,
                                None,
                                "zero linearized spread leaves no default grid".into(),
                            ));
                            curves.push(None);
                            continue;
                        };
                        let values = mixture.pdf_grid(grid);
                        components.push(ComponentDensity {
                            mixture_components: Some(mixture.components().len()),
                            skipped: Some(mixture.skipped()),
                            condition_number: Some(cond),
                            max_residual_norm: Some(resid),
                            ..ComponentDensity::ok(k, grid, &values)
                        });
                        curves.push(Some(Curve {
                            grid: grid.clone(),
                            values,
                        }));
                    }
                    Err(e) if e.is_degeneracy() => {
                        components.push(ComponentDensity::degenerate(
                            k,
                            grid.as_ref(),
                            e.to_string(),
                        ));
                        curves.push(None);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            "mixture"
        }
    };

    for (k, curve) in curves.iter().enumerate() {
        let path = layout.density(k);
        match curve {
            Some(curve) => write_curve(
                &path,
                "density",
                k,
                curve,
                "pdf_value",
                options.clip_nonnegative,
            )?,
            None => remove_stale(&path)?,
        }
    }
    let report = DensityReport {
        order: config.order,
        method: method.into(),
        clipped: options.clip_nonnegative,
        components,
    };
    output::write_json(&layout.density_report(), &report)?;
    Ok(DensityOutcome { report, curves })
}

fn mixture_component(
    random: &RandomPropagation,
    fresh: &[Vec<f64>],
    k: usize,
) -> sde_moments::Result<(MixtureDensity, f64, f64)> {
    let densities = random
        .runs
        .iter()
        .map(|run| marginal_density(&run.final_state, k))
        .collect::<sde_moments::Result<Vec<_>>>()?;
    let surrogates = fit_density_surrogates(&random.solver, &densities, k)?;
    let (cond, resid) = surrogates.diagnostics();
    let mixture = MixtureDensity::from_surrogates(&surrogates, &random.basis, fresh)?;
    Ok((mixture, cond, resid))
}

fn write_curve(
    path: &Path,
    kind: &str,
    k: usize,
    curve: &Curve,
    column: &str,
    clip: bool,
) -> Result<(), CliError> {
    output::write_csv(
        path,
        kind,
        &["component", "x", column],
        curve.grid.iter().zip(&curve.values).map(|(x, y)| {
            let y = if clip { y.max(0.0) } else { *y };
            vec![k.to_string(), fmt_f64(*x), fmt_f64(y)]
        }),
    )
}

/// Removes an artifact left by an earlier run so it cannot be mistaken for
/// a result of this one.
fn remove_stale(path: &Path) -> Result<(), CliError> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(CliError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoment {
    pub multiindex: String,
    pub value: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeSummary {
    pub component: usize,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub samples: usize,
    pub seed: u64,
    pub steps: usize,
    pub h: f64,
    pub time: f64,
    pub moments: Vec<EmpiricalMoment>,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub kde: Vec<KdeSummary>,
}

pub struct BaselineOutcome {
    pub summary: BaselineSummary,
    pub curves: Vec<Option<Curve>>,
    pub timings: Timings,
}

/// Monte Carlo reference: Euler-Maruyama ensemble, empirical moments with
/// standard errors, and KDE curves on the density grids.
pub fn run_baseline(
    config: &RunConfig,
    _options: &RunOptions,
) -> Result<BaselineOutcome, CliError> {
    let setup = config.setup()?;
    let layout = Layout::new(&config.output_dir);
    output::ensure_dir(&layout.dir)?;
    let v = config.state_dim();
    log::info!("baseline: {} paths", config.mc_samples);
    let started = Instant::now();
    let ensemble = simulate_ensemble(
        &setup.init,
        setup.model.as_ref(),
        setup.noise.as_ref(),
        config.h,
        config.t0,
        config.tn,
        config.mc_samples,
        config.seed,
    )?;
    let elapsed = started.elapsed().as_secs_f64();
    let moments = enumerate_up_to(v, config.order)
        .into_iter()
        .map(|r| {
            let (value, standard_error) = empirical_moment(&ensemble, &r)?;
            Ok(EmpiricalMoment {
                multiindex: r.to_string(),
                value,
                standard_error,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let (mean, covariance) = mean_and_covariance(&ensemble);

    let grids = density_grids(config, &setup)?;
    let mut kde = Vec::with_capacity(v);
    let mut curves = Vec::with_capacity(v);
    for (k, grid) in grids.iter().enumerate() {
        let Some(grid) = grid else {
            kde.push(KdeSummary {
                component: k,
                status: Status::Degenerate,
                bandwidth: None,
                grid: None,
                message: Some("zero linearized spread leaves no default grid".into()),
            });
            curves.push(None);
            continue;
        };
        match Kde::new(&ensemble.component(k)) {
            Ok(estimate) => {
                kde.push(KdeSummary {
                    component: k,
                    status: Status::Ok,
                    bandwidth: Some(estimate.bandwidth()),
                    grid: Some(GridSpec::of(grid)),
                    message: None,
                });
                curves.push(Some(Curve {
                    grid: grid.clone(),
                    values: estimate.pdf_grid(grid),
                }));
            }
            Err(e) if e.is_degeneracy() => {
                kde.push(KdeSummary {
                    component: k,
                    status: Status::Degenerate,
                    bandwidth: None,
                    grid: Some(GridSpec::of(grid)),
                    message: Some(e.to_string()),
                });
                curves.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }

    let summary = BaselineSummary {
        samples: ensemble.len(),
        seed: config.seed,
        steps: ensemble.steps,
        h: config.h,
        time: config.t0 + ensemble.steps as f64 * config.h,
        moments,
        mean,
        covariance,
        kde,
    };
    let timings = Timings {
        steps: ensemble.steps,
        propagations: ensemble.len(),
        total_seconds: elapsed,
        mean_step_seconds: elapsed / (ensemble.steps * ensemble.len()).max(1) as f64,
    };

    let mut header = vec!["sample".to_string()];
    header.extend((0..v).map(|k| format!("x_{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    output::write_csv(
        &layout.ensemble(),
        "ensemble",
        &header,
        ensemble.states.iter().enumerate().map(|(i, x)| {
            let mut row = vec![i.to_string()];
            row.extend(x.iter().map(|x| fmt_f64(*x)));
            row
        }),
    )?;
    for (k, curve) in curves.iter().enumerate() {
        let path = layout.kde(k);
        match curve {
            Some(curve) => write_curve(&path, "kde", k, curve, "pdf_value", false)?,
            None => remove_stale(&path)?,
        }
    }
    output::write_json(&layout.baseline_summary(), &summary)?;
    output::write_json(&layout.baseline_timings(), &timings)?;
    log::info!("baseline: done in {elapsed:.3} s");
    Ok(BaselineOutcome {
        summary,
        curves,
        timings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub algorithm: f64,
    pub baseline: f64,
    pub absolute: f64,
    /// `|algorithm - baseline| / |baseline|`; absent when the baseline is
    /// zero and the values differ.
    pub relative: Option<f64>,
}

impl Difference {
    pub fn new(algorithm: f64, baseline: f64) -> Self {
        let absolute = (algorithm - baseline).abs();
        let relative = if absolute == 0.0 {
            Some(0.0)
        } else if baseline != 0.0 {
            Some(absolute / baseline.abs())
        } else {
            None
        };
        Difference {
            algorithm,
            baseline,
            absolute,
            relative,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean: Vec<Difference>,
    pub covariance: Vec<Vec<Difference>>,
    /// Total variation distance between the Algorithm-2 marginal and the
    /// KDE per component; absent when either curve is missing.
    pub tvd: Vec<Option<f64>>,
}

impl Comparison {
    pub fn max_relative_mean(&self) -> Option<f64> {
        max_relative(self.mean.iter())
    }

    pub fn max_relative_covariance(&self) -> Option<f64> {
        max_relative(self.covariance.iter().flatten())
    }
}

fn max_relative<'a>(diffs: impl Iterator<Item = &'a Difference>) -> Option<f64> {
    diffs
        .map(|d| d.relative)
        .try_fold(0.0, |acc, r| r.map(|r| f64::max(acc, r)))
}

/// Compares the moments artifacts with the baseline artifacts, and the
/// density curves with the KDE curves when both exist. With `produce`, the
/// moments, density and baseline commands run first.
pub fn run_compare(
    config: &RunConfig,
    options: &RunOptions,
    produce: bool,
) -> Result<Comparison, CliError> {
    let layout = Layout::new(&config.output_dir);
    if produce {
        run_moments(config, options)?;
        run_density(config, options)?;
        run_baseline(config, options)?;
    }
    let algorithm: CovarianceReport = output::read_json(&layout.covariance(), "moments")?;
    let baseline: BaselineSummary = output::read_json(&layout.baseline_summary(), "baseline")?;
    let v = config.state_dim();
    if algorithm.mean.len() != v || baseline.mean.len() != v {
        return Err(CliError::Artifact {
            path: layout.dir.clone(),
            message: format!("artifacts do not have dimension {v}"),
        });
    }
    let mean = algorithm
        .mean
        .iter()
        .zip(&baseline.mean)
        .map(|(a, b)| Difference::new(*a, *b))
        .collect();
    let covariance = algorithm
        .covariance
        .iter()
        .zip(&baseline.covariance)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(a, b)| Difference::new(*a, *b))
                .collect()
        })
        .collect();
    let mut tvds = Vec::with_capacity(v);
    for k in 0..v {
        let (density, kde) = (layout.density(k), layout.kde(k));
        if !density.exists() || !kde.exists() {
            tvds.push(None);
            continue;
        }
        let (gx, f) = output::read_curve(&density, "density")?;
        let (kx, g) = output::read_curve(&kde, "baseline")?;
        if gx != kx {
            return Err(sde_moments::Error::GridMismatch(format!(
                "component {k}: density and KDE grids differ"
            ))
            .into());
        }
        tvds.push(Some(tvd(&gx, &f, &g)?));
    }
    let comparison = Comparison {
        mean,
        covariance,
        tvd: tvds,
    };
    output::ensure_dir(&layout.dir)?;
    output::write_json(&layout.comparison(), &comparison)?;
    Ok(comparison)
}
