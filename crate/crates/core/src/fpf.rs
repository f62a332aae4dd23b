//! The feedback particle filter: control-law computation, particle
//! propagation, the general-drift extension, and a full scenario runner
//! that tracks a grid reference posterior alongside the ensemble.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bayes::{self, VectorField};
use crate::density::{self, GridDensity, ObservationModel, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::gain::{self, DensitySource, GainField};
use crate::math;
// When std is linked (tests, the std feature) its inherent float methods
// shadow this shim.
#[cfg_attr(any(test, feature = "std"), allow(unused_imports))]
use crate::math::FloatExt;
use crate::sim::{self, ObservationPath, Prior};

/// Which Poisson solver feeds the filter each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainSolverChoice {
    Exact1d,
    WeakFd,
    Galerkin { degree: u32 },
}

/// Whether density-dependent quantities come from the particles themselves
/// (the real algorithm) or from the known grid posterior (isolates Monte
/// Carlo error from gain error).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Algorithmic,
    Oracle,
}

/// The per-step control pair `(K, u)` with its Stratonovich correction
/// `Omega = (1/2) K K'` and the conditional-mean estimate `h_hat`; `u`
/// satisfies `u = -(1/2) K (h + h_hat) + Omega` node-wise by construction.
#[derive(Debug)]
pub struct ControlLaw<'a> {
    gain: &'a GainField,
    omega: VectorField,
    u: VectorField,
    h_hat: f64,
}

impl<'a> ControlLaw<'a> {
    pub fn gain(&self) -> &GainField {
        self.gain
    }

    pub fn omega(&self) -> &VectorField {
        &self.omega
    }

    pub fn u(&self) -> &VectorField {
        &self.u
    }

    pub fn h_hat(&self) -> f64 {
        self.h_hat
    }

    /// `u(x)` by linear interpolation on the gain's grid.
    pub fn u_at(&self, x: f64) -> f64 {
        math::interp_linear(self.gain.grid(), self.u.values(), x)
    }

    /// `Omega(x)` by linear interpolation on the gain's grid.
    pub fn omega_at(&self, x: f64) -> f64 {
        math::interp_linear(self.gain.grid(), self.omega.values(), x)
    }
}

/// Assembles the control law for a solved gain: `h_hat` from quadrature or
/// a fixed-order particle average per the source type, then
/// `u = -(1/2) K (h + h_hat) + (1/2) K K'` sampled on the gain's grid.
pub fn compute_control<'a>(
    gain: &'a GainField,
    source: DensitySource<'_>,
    model: &ObservationModel,
) -> Result<ControlLaw<'a>> {
    let h_hat = match source {
        DensitySource::Grid(d) => d.expectation(|x| model.h(x))?,
        DensitySource::Ensemble(e) => e.average(|x| model.h(x)),
    };
    let grid = gain.grid();
    let mut omega = Vec::with_capacity(grid.len());
    let mut u = Vec::with_capacity(grid.len());
    for &x in grid {
        let k = gain.gain_at(x);
        let om = 0.5 * k * gain.gain_slope_at(x);
        omega.push(om);
        u.push(-0.5 * k * (model.h(x) + h_hat) + om);
    }
    Ok(ControlLaw {
        gain,
        omega: VectorField::new(omega)?,
        u: VectorField::new(u)?,
        h_hat,
    })
}

/// One filter step for the static-signal model: every particle moves by
/// `u(X) dt + K(X) dz`. Deterministic; the filter has no process noise.
pub fn fpf_step(
    e: &ParticleEnsemble,
    law: &ControlLaw<'_>,
    dz: f64,
    dt: f64,
) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::BadStep);
    }
    let mut next = Vec::with_capacity(e.len());
    for &x in e.positions() {
        let moved = x + law.u_at(x) * dt + law.gain.gain_at(x) * dz;
        if !moved.is_finite() {
            return Err(Error::Blowup);
        }
        next.push(moved);
    }
    ParticleEnsemble::new(next)
}

/// The general-drift extension: adds `a(X) dt + dB^i` to the basic step,
/// with per-particle independent `N(0, dt)` increments drawn in fixed
/// particle order from a per-step stream.
pub fn fpf_step_general(
    e: &ParticleEnsemble,
    drift: impl Fn(f64) -> f64,
    law: &ControlLaw<'_>,
    dz: f64,
    dt: f64,
    process_noise: bool,
    seed: u64,
    step: u64,
) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::BadStep);
    }
    let mut rng = sim::process_noise_rng(seed, step);
    let sqrt_dt = dt.sqrt();
    let mut next = Vec::with_capacity(e.len());
    for &x in e.positions() {
        let mut moved = x + (drift(x) + law.u_at(x)) * dt + law.gain.gain_at(x) * dz;
        if process_noise {
            let n: f64 = rng.sample(StandardNormal);
            moved += sqrt_dt * n;
        }
        if !moved.is_finite() {
            return Err(Error::Blowup);
        }
        next.push(moved);
    }
    ParticleEnsemble::new(next)
}

/// Solves the gain from an ensemble per the configured method: Galerkin
/// directly on the particles, the grid solvers on a Silverman-bandwidth KDE.
pub fn solve_ensemble_gain(
    e: &ParticleEnsemble,
    model: &ObservationModel,
    choice: GainSolverChoice,
    grid: &[f64],
) -> Result<GainField> {
    match choice {
        GainSolverChoice::Galerkin { degree } => {
            let basis = gain::default_basis(degree, e.mean(), e.variance().sqrt().max(1e-8));
            gain::solve_gain_galerkin(DensitySource::Ensemble(e), model, basis, grid)
        }
        GainSolverChoice::Exact1d => {
            let kde = density::kde_estimate(e, density::silverman_bandwidth(e), grid)?;
            gain::solve_gain_exact_1d(&kde, model)
        }
        GainSolverChoice::WeakFd => {
            let kde = density::kde_estimate(e, density::silverman_bandwidth(e), grid)?;
            gain::solve_gain_weak_fd(&kde, model)
        }
    }
}

fn solve_grid_gain(
    rho: &GridDensity,
    model: &ObservationModel,
    choice: GainSolverChoice,
) -> Result<GainField> {
    match choice {
        GainSolverChoice::Exact1d => gain::solve_gain_exact_1d(rho, model),
        GainSolverChoice::WeakFd => gain::solve_gain_weak_fd(rho, model),
        GainSolverChoice::Galerkin { degree } => {
            let basis = gain::default_basis(degree, rho.mean(), rho.variance().sqrt().max(1e-8));
            gain::solve_gain_galerkin(DensitySource::Grid(rho), model, basis, rho.grid())
        }
    }
}

/// Kolmogorov–Smirnov distance between an ensemble's empirical CDF and a
/// grid density's CDF (both step sides of the empirical CDF checked).
pub fn ks_distance(e: &ParticleEnsemble, reference: &GridDensity) -> f64 {
    let sorted = e.sorted_positions();
    let cdf = reference.cdf();
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = math::interp_linear(reference.grid(), &cdf, x);
        worst = worst.max((f - i as f64 / n).abs());
        worst = worst.max(((i + 1) as f64 / n - f).abs());
    }
    worst
}

/// L1 distance between a Silverman-bandwidth KDE of the ensemble and the
/// reference, both on the reference grid.
pub fn l1_after_kde(e: &ParticleEnsemble, reference: &GridDensity) -> Result<f64> {
    let kde = density::kde_estimate(e, density::silverman_bandwidth(e), reference.grid())?;
    let w = math::trapezoid_weights(reference.grid());
    Ok(kde
        .values()
        .iter()
        .zip(reference.values())
        .zip(&w)
        .map(|((&a, b), &wi)| wi * (a - b).abs())
        .sum())
}

/// True hidden state: fixed, or drawn from the prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrueState {
    Value(f64),
    Sample,
}

/// Full description of one filter experiment.
#[derive(Debug)]
pub struct ScenarioConfig {
    pub prior: Prior,
    pub model: ObservationModel,
    pub true_state: TrueState,
    pub horizon: f64,
    pub steps: usize,
    pub particles: usize,
    pub solver: GainSolverChoice,
    pub mode: FilterMode,
    pub seed: u64,
    pub grid_nodes: usize,
    /// Half-width of the grid in prior standard deviations.
    pub grid_half_width: f64,
    /// Stride (in steps) at which the KS/L1 distances are evaluated; the
    /// final step is always evaluated. Zero disables intermediate metrics.
    pub dist_stride: usize,
    /// Stride at which reference posteriors are stored on the run record.
    pub posterior_stride: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidInput("horizon must be > 0"));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be >= 1"));
        }
        if self.particles < 2 {
            return Err(Error::TooFewParticles);
        }
        if self.grid_nodes < 128 {
            return Err(Error::InvalidInput("grid needs at least 128 nodes"));
        }
        if !(self.grid_half_width > 0.0) {
            return Err(Error::InvalidInput("grid half-width must be > 0"));
        }
        Ok(())
    }

    /// The evaluation grid implied by the prior and grid settings.
    pub fn build_grid(&self) -> Vec<f64> {
        let center = self.prior.mean();
        let spread = self.prior.std();
        density::uniform_grid(
            center - self.grid_half_width * spread,
            center + self.grid_half_width * spread,
            self.grid_nodes,
        )
    }
}

/// One row of run diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub z: f64,
    pub h_hat: f64,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub ref_mean: f64,
    pub ref_var: f64,
    pub ks_dist: Option<f64>,
    pub l1_dist: Option<f64>,
    /// Weak-form probe with `psi = x`: `|E[K] - E[(h - h_hat) x]|` under the
    /// measure that fed the gain solve.
    pub gain_flux_residual: f64,
}

/// Everything a finished run exposes: per-step diagnostics, the terminal
/// ensemble, stored reference posteriors, and the realized paths.
#[derive(Debug)]
pub struct FpfRun {
    pub records: Vec<StepRecord>,
    pub ensemble: ParticleEnsemble,
    /// `(step, posterior)` pairs at the configured stride, ending with the
    /// terminal posterior.
    pub posteriors: Vec<(usize, GridDensity)>,
    pub path: ObservationPath,
    pub true_state: f64,
}

impl FpfRun {
    pub fn terminal(&self) -> &StepRecord {
        &self.records[self.records.len() - 1]
    }

    pub fn terminal_posterior(&self) -> &GridDensity {
        &self.posteriors[self.posteriors.len() - 1].1
    }
}

/// Runs the filter over a fresh scenario: simulates the world, then per step
/// solves the gain, assembles the control law, moves the particles, and
/// advances the grid reference posterior. Deterministic given the config.
pub fn run_fpf(config: &ScenarioConfig) -> Result<FpfRun> {
    config.validate()?;
    let grid = config.build_grid();
    let prior_density = config.prior.grid_density(&grid)?;
    config.model.check_bounds_on_grid(&grid)?;

    let true_state = match config.true_state {
        TrueState::Value(v) => v,
        TrueState::Sample => {
            // one auxiliary draw on its own stream
            let mut rng = sim::stream_rng(config.seed, 7);
            match &config.prior {
                Prior::Gaussian { mean, std } => {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + std * z
                }
                _ => {
                    let cdf = prior_density.cdf();
                    let u: f64 = rng.random();
                    sim::inverse_cdf(&grid, &cdf, u)
                }
            }
        }
    };

    let times = sim::uniform_times(config.horizon, config.steps);
    let x_path = sim::SignalPath::constant(true_state, times)?;
    let path = sim::simulate_observation_path(&x_path, &config.model, config.seed);

    let mut ensemble = sim::sample_prior(&config.prior, config.particles, config.seed)?;
    let mut reference = prior_density;
    let mut records = Vec::with_capacity(config.steps);
    let mut posteriors = Vec::new();

    for n in 0..config.steps {
        let (dt, dz) = path.increment(n);

        let (field, flux_residual, h_hat) = match config.mode {
            FilterMode::Oracle => {
                let field = solve_grid_gain(&reference, &config.model, config.solver)?;
                let h_vals = config.model.h_values(&grid);
                let h_hat = reference.expectation_of_values(&h_vals)?;
                let r = gain::weak_form_residual(&field, &reference, &h_vals, |x| x, |_| 1.0)?;
                (field, r.abs(), h_hat)
            }
            FilterMode::Algorithmic => {
                let field = solve_ensemble_gain(&ensemble, &config.model, config.solver, &grid)?;
                let h_hat = ensemble.average(|x| config.model.h(x));
                let lhs = ensemble.average(|x| field.gain_at(x));
                let rhs = ensemble.average(|x| (config.model.h(x) - h_hat) * x);
                (field, (lhs - rhs).abs(), h_hat)
            }
        };

        let source = match config.mode {
            FilterMode::Oracle => DensitySource::Grid(&reference),
            FilterMode::Algorithmic => DensitySource::Ensemble(&ensemble),
        };
        let law = compute_control(&field, source, &config.model)?;
        debug_assert!((law.h_hat() - h_hat).abs() < 1e-12);

        ensemble = fpf_step(&ensemble, &law, dz, dt)?;
        reference = bayes::bayes_update(&reference, dz, dt, &config.model)?;

        let step = n + 1;
        let at_stride =
            config.dist_stride != 0 && step % config.dist_stride == 0 || step == config.steps;
        let (ks, l1) = if at_stride {
            (
                Some(ks_distance(&ensemble, &reference)),
                Some(l1_after_kde(&ensemble, &reference)?),
            )
        } else {
            (None, None)
        };
        records.push(StepRecord {
            step,
            t: path.times()[step],
            z: path.z_values()[step],
            h_hat,
            emp_mean: ensemble.mean(),
            emp_var: ensemble.variance(),
            ref_mean: reference.mean(),
            ref_var: reference.variance(),
            ks_dist: ks,
            l1_dist: l1,
            gain_flux_residual: flux_residual,
        });
        if (config.posterior_stride != 0 && step % config.posterior_stride == 0)
            || step == config.steps
        {
            posteriors.push((step, reference.clone()));
        }
    }

    Ok(FpfRun {
        records,
        ensemble,
        posteriors,
        path,
        true_state,
    })
}

/// Exact mean/variance recursion of the Kalman–Bucy filter for the static
/// linear-Gaussian model on a realized observation path; returns one
/// `(mean, variance)` pair per path node, starting at the prior.
pub fn kalman_bucy_reference(path: &ObservationPath, mean0: f64, var0: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(path.steps() + 1);
    let mut mean = mean0;
    let mut var = var0;
    out.push((mean, var));
    for n in 0..path.steps() {
        let (dt, dz) = path.increment(n);
        // conjugate Gaussian update for the factor exp(x dz - x^2 dt / 2)
        let denom = 1.0 + var * dt;
        mean = (mean + var * dz) / denom;
        var /= denom;
        out.push((mean, var));
    }
    out
}
