//! The variational time-stepping recursion: each posterior minimizes
//! KL-divergence-to-previous plus the expected observation cost
//!
//! ```text
//! I_n(rho) = D(rho || rho_{n-1}) + (dt/2) int rho (Y_n - h)^2 dx,
//! ```
//!
//! whose minimizer is the discrete Bayes update. Also the closed-form limit
//! posterior the recursion telescopes into, and numerical residual checks of
//! the Euler–Lagrange characterizations of the minimizer.

use alloc::vec::Vec;

use crate::density::{GridDensity, ObservationModel};
use crate::error::{Error, Result};
use crate::gain::{self, GainMethod};
use crate::math;
// When std is linked (tests, the std feature) its inherent float methods
// shadow this shim.
#[cfg_attr(any(test, feature = "std"), allow(unused_imports))]
use crate::math::FloatExt;
use crate::sim::ObservationPath;

/// A grid-sampled vector field (1D: one value per node), the test field of
/// the Euler–Lagrange equation and the control field of the forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(VectorField { values })
    }

    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        VectorField::new(grid.iter().map(|&x| f(x)).collect())
    }

    pub fn zero(n: usize) -> Self {
        VectorField {
            values: alloc::vec![0.0; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One discrete Bayes step: multiply by the likelihood factor
/// `exp(h dz - (dt/2) h^2)` and renormalize. The quadratic-in-`Y_n` term
/// common to numerator and denominator is cancelled algebraically, so no
/// `dz/dt` division occurs and small steps stay well conditioned.
pub fn bayes_update(
    prev: &GridDensity,
    dz: f64,
    dt: f64,
    model: &ObservationModel,
) -> Result<GridDensity> {
    if !(dt > 0.0) {
        return Err(Error::BadStep);
    }
    let logs: Vec<f64> = prev
        .grid()
        .iter()
        .zip(prev.log_values())
        .map(|(&x, &lv)| {
            let h = model.h(x);
            lv + h * dz - 0.5 * dt * h * h
        })
        .collect();
    GridDensity::from_log_values(prev.grid().to_vec(), logs)?.normalize()
}

/// The one-step energy `I_n(candidate) = D(candidate || prev)
/// + (dt/2) int candidate (y - h)^2`. Minimized by [`bayes_update`] with
/// `dz = y dt`.
pub fn energy_functional(
    candidate: &GridDensity,
    prev: &GridDensity,
    y: f64,
    dt: f64,
    model: &ObservationModel,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::BadStep);
    }
    let kl = candidate.kl_divergence(prev)?;
    let cost = candidate.expectation(|x| {
        let d = y - model.h(x);
        d * d
    })?;
    Ok(kl + 0.5 * dt * cost)
}

/// The minimum value of the one-step energy, `-ln int prev exp(-phi_n)` with
/// `phi_n = (dt/2)(y - h)^2`, evaluated by log-domain quadrature.
pub fn energy_minimum(prev: &GridDensity, y: f64, dt: f64, model: &ObservationModel) -> f64 {
    let w = math::trapezoid_weights(prev.grid());
    -math::log_sum_exp(prev.grid().iter().zip(prev.log_values()).zip(&w).map(
        |((&x, &lv), &wi)| {
            let d = y - model.h(x);
            lv + wi.ln() - 0.5 * dt * d * d
        },
    ))
}

/// The explicit limit posterior the recursion telescopes into:
/// `rho(x, t) ∝ exp(h(x) z_span - (t/2) h(x)^2) rho_0(x)`.
pub fn closed_form_posterior(
    prior: &GridDensity,
    z_span: f64,
    t: f64,
    model: &ObservationModel,
) -> Result<GridDensity> {
    if t < 0.0 {
        return Err(Error::InvalidInput("time must be nonnegative"));
    }
    let logs: Vec<f64> = prior
        .grid()
        .iter()
        .zip(prior.log_values())
        .map(|(&x, &lv)| {
            let h = model.h(x);
            lv + h * z_span - 0.5 * t * h * h
        })
        .collect();
    GridDensity::from_log_values(prior.grid().to_vec(), logs)?.normalize()
}

/// The full sequence `rho_0 ... rho_N` over an observation path, with the
/// piecewise-constant interpolant `rho^(N)(., t) = rho_n` on `[t_n, t_{n+1})`.
#[derive(Debug, Clone)]
pub struct TimeSteppingRun {
    densities: Vec<GridDensity>,
    path: ObservationPath,
}

impl TimeSteppingRun {
    pub fn densities(&self) -> &[GridDensity] {
        &self.densities
    }

    pub fn path(&self) -> &ObservationPath {
        &self.path
    }

    /// The interpolant: `rho_n` for `t` in `[t_n, t_{n+1})`, clamped to the
    /// final posterior at and beyond the horizon.
    pub fn density_at(&self, t: f64) -> &GridDensity {
        let times = self.path.times();
        let mut n = 0;
        for (i, &ti) in times.iter().enumerate() {
            if ti <= t {
                n = i;
            } else {
                break;
            }
        }
        &self.densities[n]
    }

    /// Worst node-wise excess of `ln(rho_n / rho_{n-1})` over the a-priori
    /// ratio bound `2 |dz| ||h|| + (dt/2) ||h||^2`; nonpositive when the
    /// bound holds everywhere.
    pub fn ratio_bound_margin(&self, model: &ObservationModel) -> f64 {
        let grid = self.densities[0].grid();
        let h_sup = model.h_sup_on(grid);
        let mut worst = f64::NEG_INFINITY;
        for n in 1..self.densities.len() {
            let (dt, dz) = self.path.increment(n - 1);
            let bound = 2.0 * dz.abs() * h_sup + 0.5 * dt * h_sup * h_sup;
            for (lp, lq) in self.densities[n]
                .log_values()
                .iter()
                .zip(self.densities[n - 1].log_values())
            {
                if *lq == f64::NEG_INFINITY {
                    continue;
                }
                worst = worst.max(lp - lq - bound);
            }
        }
        worst
    }
}

/// Runs the recursion over the whole observation path.
pub fn run_time_stepping(
    prior: &GridDensity,
    path: &ObservationPath,
    model: &ObservationModel,
) -> Result<TimeSteppingRun> {
    let mut densities = Vec::with_capacity(path.steps() + 1);
    densities.push(prior.normalize()?);
    for n in 0..path.steps() {
        let (dt, dz) = path.increment(n);
        let next = bayes_update(&densities[n], dz, dt, model)?;
        densities.push(next);
    }
    Ok(TimeSteppingRun {
        densities,
        path: path.clone(),
    })
}

/// Quadrature value of the Euler–Lagrange form for a candidate pair:
///
/// ```text
/// int rho_n [ -G_n' + G_{n-1}' - (dz - h dt) h' ] varsigma dx,
/// ```
///
/// with `G = -ln rho` differentiated by central differences. Zero (to
/// discretization error) exactly when `post` is the Bayes update of `prev`.
pub fn el_residual(
    prev: &GridDensity,
    post: &GridDensity,
    dz: f64,
    dt: f64,
    field: &VectorField,
    model: &ObservationModel,
) -> Result<f64> {
    if !prev.same_grid(post) {
        return Err(Error::GridMismatch);
    }
    let grid = prev.grid();
    if field.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let neg = |logs: &[f64]| -> Vec<f64> { logs.iter().map(|&l| -l).collect() };
    let grad_g_post = math::gradient(grid, &neg(post.log_values()));
    let grad_g_prev = math::gradient(grid, &neg(prev.log_values()));
    let integrand: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            (-grad_g_post[i] + grad_g_prev[i] - (dz - model.h(x) * dt) * model.grad_h(x))
                * field.values()[i]
        })
        .collect();
    post.expectation_of_values(&integrand)
}

/// The alternate (update-form) Euler–Lagrange check: with `varsigma` the
/// gain-form solution for data `g` under `prev`, returns
///
/// ```text
/// | int rho_n g - int rho_{n-1} g - int rho_n (dz - h dt) h' varsigma |.
/// ```
pub fn el_update_residual(
    prev: &GridDensity,
    post: &GridDensity,
    g_values: &[f64],
    dz: f64,
    dt: f64,
    model: &ObservationModel,
    method: GainMethod,
) -> Result<f64> {
    if !prev.same_grid(post) {
        return Err(Error::GridMismatch);
    }
    let field = match method {
        GainMethod::Exact1d => gain::solve_data_exact_1d(prev, g_values)?,
        GainMethod::WeakFd => gain::solve_data_weak_fd(prev, g_values)?,
        GainMethod::Galerkin => {
            return Err(Error::InvalidInput("update-form check needs a grid solver"))
        }
    };
    let lhs = post.expectation_of_values(g_values)?;
    let prev_term = prev.expectation_of_values(g_values)?;
    let grid = prev.grid();
    let correction: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| (dz - model.h(x) * dt) * model.grad_h(x) * field.gain()[i])
        .collect();
    let rhs = prev_term + post.expectation_of_values(&correction)?;
    Ok((lhs - rhs).abs())
}
