//! Grid-density representation, quadrature, divergences, kernel density
//! estimation, and spectral-gap diagnostics shared by every other module.
//!
//! Densities are stored in log domain so that long products of likelihood
//! factors survive without underflow; `-inf` marks zero-mass tails.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
// When std is linked (tests, the std feature) its inherent float methods
// shadow this shim.
#[cfg_attr(any(test, feature = "std"), allow(unused_imports))]
use crate::math::FloatExt;

/// Minimum number of grid nodes a density may live on.
pub const MIN_NODES: usize = 64;

const LN_2PI: f64 = 1.8378770664093453;

/// Uniform ascending grid with `n` nodes on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// A probability density on a bounded 1D grid, stored as log-values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Vec<f64>,
    log_values: Vec<f64>,
}

impl GridDensity {
    /// Builds an (unnormalized) density from log-values; call
    /// [`GridDensity::normalize`] to obtain a probability density.
    ///
    /// The grid must be strictly increasing with at least [`MIN_NODES`]
    /// nodes; log-values may be `-inf` (zero mass) but not `NaN` or `+inf`.
    pub fn from_log_values(grid: Vec<f64>, log_values: Vec<f64>) -> Result<Self> {
        if grid.len() < MIN_NODES {
            return Err(Error::InvalidInput("grid needs at least 64 nodes"));
        }
        if grid.len() != log_values.len() {
            return Err(Error::InvalidInput("grid/log-value length mismatch"));
        }
        for w in grid.windows(2) {
            if !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite() {
                return Err(Error::InvalidInput("grid must be finite and strictly increasing"));
            }
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite);
        }
        Ok(GridDensity { grid, log_values })
    }

    /// Normalized Gaussian `N(mean, std^2)` restricted to `grid`.
    pub fn gaussian(mean: f64, std: f64, grid: &[f64]) -> Result<Self> {
        if std <= 0.0 {
            return Err(Error::InvalidInput("gaussian std must be > 0"));
        }
        let logs = grid
            .iter()
            .map(|&x| {
                let z = (x - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * LN_2PI
            })
            .collect();
        GridDensity::from_log_values(grid.to_vec(), logs)?.normalize()
    }

    /// Normalized mixture of Gaussians, `components = [(weight, mean, std)]`.
    pub fn gaussian_mixture(components: &[(f64, f64, f64)], grid: &[f64]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component"));
        }
        let logs: Vec<f64> = grid
            .iter()
            .map(|&x| {
                math::log_sum_exp(components.iter().map(|&(w, mean, std)| {
                    let z = (x - mean) / std;
                    w.ln() - 0.5 * z * z - std.ln() - 0.5 * LN_2PI
                }))
            })
            .collect();
        GridDensity::from_log_values(grid.to_vec(), logs)?.normalize()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `[x_min, x_max]` of the grid.
    pub fn domain(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    /// Linear-domain values `exp(log_values)`.
    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|&v| v.exp()).collect()
    }

    pub(crate) fn weights(&self) -> Vec<f64> {
        math::trapezoid_weights(&self.grid)
    }

    /// Trapezoid integral of the density over the grid.
    pub fn mass(&self) -> f64 {
        let w = self.weights();
        self.log_values
            .iter()
            .zip(&w)
            .map(|(&lv, &wi)| wi * lv.exp())
            .sum()
    }

    /// Rescales so the trapezoid integral equals one; performed entirely in
    /// log domain (log-sum-exp), so log-values up to ±700 are safe.
    pub fn normalize(&self) -> Result<GridDensity> {
        let w = self.weights();
        let log_mass = math::log_sum_exp(
            self.log_values
                .iter()
                .zip(w.iter())
                .map(|(&lv, &wi)| lv + wi.ln()),
        );
        if log_mass == f64::NEG_INFINITY {
            return Err(Error::ZeroMass);
        }
        let log_values = self.log_values.iter().map(|&lv| lv - log_mass).collect();
        Ok(GridDensity {
            grid: self.grid.clone(),
            log_values,
        })
    }

    /// True when `mass` is within `tol` of one.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        self.grid.len() == other.grid.len()
            && self.grid.iter().zip(&other.grid).all(|(a, b)| a == b)
    }

    /// Trapezoid quadrature of `f * rho` for `f` given on the grid nodes.
    ///
    /// Errors with [`Error::NonFinite`] if `f` is non-finite on a node that
    /// carries positive mass.
    pub fn expectation_of_values(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::GridMismatch);
        }
        let w = self.weights();
        let mut acc = 0.0;
        for i in 0..self.len() {
            let v = self.log_values[i].exp();
            if v > 0.0 {
                if !f[i].is_finite() {
                    return Err(Error::NonFinite);
                }
                acc += w[i] * f[i] * v;
            }
        }
        Ok(acc)
    }

    /// Trapezoid quadrature of `f * rho`.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let vals: Vec<f64> = self.grid.iter().map(|&x| f(x)).collect();
        self.expectation_of_values(&vals)
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|x| x).unwrap_or(f64::NAN)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|x| (x - m) * (x - m)).unwrap_or(f64::NAN)
    }

    /// Kullback–Leibler divergence `D(self || other)` on a shared grid.
    ///
    /// Nodes where `self` vanishes contribute zero; `self > 0` on a node
    /// where `other = 0` is a [`Error::SupportMismatch`].
    pub fn kl_divergence(&self, other: &GridDensity) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let w = self.weights();
        let mut acc = 0.0;
        for i in 0..self.len() {
            let l1 = self.log_values[i];
            if l1 == f64::NEG_INFINITY {
                continue;
            }
            let l2 = other.log_values[i];
            if l2 == f64::NEG_INFINITY {
                return Err(Error::SupportMismatch);
            }
            acc += w[i] * l1.exp() * (l1 - l2);
        }
        Ok(acc)
    }

    /// Grid CDF by cumulative trapezoid integration, clamped to `[0, 1]`.
    pub fn cdf(&self) -> Vec<f64> {
        let vals = self.values();
        let mut c = math::cumulative_trapezoid(&self.grid, &vals);
        let total = c[c.len() - 1];
        if total > 0.0 {
            for v in c.iter_mut() {
                *v = (*v / total).clamp(0.0, 1.0);
            }
        }
        c
    }

    /// Rayleigh quotient `∫|f'|² rho / ∫|f - f̄|² rho` probing the spectral
    /// gap: every admissible `f` yields a value at or above the Poincaré
    /// constant of `rho`. `f'` is taken by central differences on the grid.
    pub fn rayleigh_quotient(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let vals: Vec<f64> = self.grid.iter().map(|&x| f(x)).collect();
        let grad = math::gradient(&self.grid, &vals);
        let mean = self.expectation_of_values(&vals)?;
        let centered_sq: Vec<f64> = vals.iter().map(|&v| (v - mean) * (v - mean)).collect();
        let den = self.expectation_of_values(&centered_sq)?;
        if den < 1e-14 {
            return Err(Error::DegenerateTestFunction);
        }
        let grad_sq: Vec<f64> = grad.iter().map(|&g| g * g).collect();
        let num = self.expectation_of_values(&grad_sq)?;
        Ok(num / den)
    }
}

/// Gaussian-kernel density estimate of an ensemble, evaluated on `grid`
/// and renormalized there.
pub fn kde_estimate(
    ensemble: &ParticleEnsemble,
    bandwidth: f64,
    grid: &[f64],
) -> Result<GridDensity> {
    if !(bandwidth > 0.0) {
        return Err(Error::BadBandwidth);
    }
    let n = ensemble.len() as f64;
    let log_norm = -(n.ln() + bandwidth.ln() + 0.5 * LN_2PI);
    let logs: Vec<f64> = grid
        .iter()
        .map(|&x| {
            log_norm
                + math::log_sum_exp(ensemble.positions().iter().map(|&p| {
                    let z = (x - p) / bandwidth;
                    -0.5 * z * z
                }))
        })
        .collect();
    GridDensity::from_log_values(grid.to_vec(), logs)?.normalize()
}

/// Silverman's rule of thumb, `1.06 * sigma_hat * N^(-1/5)`.
pub fn silverman_bandwidth(ensemble: &ParticleEnsemble) -> f64 {
    let sd = ensemble.variance().sqrt();
    1.06 * sd * (ensemble.len() as f64).powf(-0.2)
}

/// Recorded sup-norm bounds for an observation function and its first two
/// derivatives. Infinite entries mark functions outside the bounded class
/// (the linear map used for Kalman cross-checks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationBounds {
    pub h_sup: f64,
    pub grad_sup: f64,
    pub hess_sup: f64,
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// The observation function `h` with its first two derivatives and recorded
/// sup-norm bounds.
pub struct ObservationModel {
    h: ScalarFn,
    grad_h: ScalarFn,
    hess_h: ScalarFn,
    bounds: ObservationBounds,
}

impl ObservationModel {
    pub fn new(
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        grad_h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        hess_h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bounds: ObservationBounds,
    ) -> Self {
        ObservationModel {
            h: Box::new(h),
            grad_h: Box::new(grad_h),
            hess_h: Box::new(hess_h),
            bounds,
        }
    }

    /// `h(x) = x`. Unbounded, hence outside the bounded observation class;
    /// kept for Kalman–Bucy cross-checks.
    pub fn linear() -> Self {
        ObservationModel::new(
            |x| x,
            |_| 1.0,
            |_| 0.0,
            ObservationBounds {
                h_sup: f64::INFINITY,
                grad_sup: 1.0,
                hess_sup: 0.0,
            },
        )
    }

    /// `h(x) = tanh(x)`.
    pub fn tanh() -> Self {
        ObservationModel::new(
            |x| x.tanh(),
            |x| {
                let c = x.cosh();
                1.0 / (c * c)
            },
            |x| {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            },
            ObservationBounds {
                h_sup: 1.0,
                grad_sup: 1.0,
                // max of |2 tanh sech^2| at tanh^2 = 1/3
                hess_sup: 4.0 / (3.0 * (3.0f64).sqrt()),
            },
        )
    }

    /// `h(x) = atan(x)`.
    pub fn atan() -> Self {
        ObservationModel::new(
            |x| x.atan(),
            |x| 1.0 / (1.0 + x * x),
            |x| {
                let d = 1.0 + x * x;
                -2.0 * x / (d * d)
            },
            ObservationBounds {
                h_sup: core::f64::consts::FRAC_PI_2,
                grad_sup: 1.0,
                // max of |2x/(1+x^2)^2| at x = 1/sqrt(3)
                hess_sup: 3.0 * (3.0f64).sqrt() / 8.0,
            },
        )
    }

    /// Constant observation function (flat likelihood).
    pub fn constant(c: f64) -> Self {
        ObservationModel::new(
            move |_| c,
            |_| 0.0,
            |_| 0.0,
            ObservationBounds {
                h_sup: c.abs(),
                grad_sup: 0.0,
                hess_sup: 0.0,
            },
        )
    }

    pub fn h(&self, x: f64) -> f64 {
        (self.h)(x)
    }

    pub fn grad_h(&self, x: f64) -> f64 {
        (self.grad_h)(x)
    }

    pub fn hess_h(&self, x: f64) -> f64 {
        (self.hess_h)(x)
    }

    pub fn bounds(&self) -> ObservationBounds {
        self.bounds
    }

    pub fn h_values(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.h(x)).collect()
    }

    pub fn grad_values(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.grad_h(x)).collect()
    }

    /// Checks that `h` and its derivatives are finite on the grid and that
    /// the recorded sup-norm bounds hold there.
    pub fn check_bounds_on_grid(&self, grid: &[f64]) -> Result<()> {
        const SLACK: f64 = 1e-12;
        for &x in grid {
            let (h, g, s) = (self.h(x), self.grad_h(x), self.hess_h(x));
            if !h.is_finite() || !g.is_finite() || !s.is_finite() {
                return Err(Error::NonFinite);
            }
            if h.abs() > self.bounds.h_sup + SLACK
                || g.abs() > self.bounds.grad_sup + SLACK
                || s.abs() > self.bounds.hess_sup + SLACK
            {
                return Err(Error::InvalidInput("recorded sup-norm bound violated on grid"));
            }
        }
        Ok(())
    }

    /// Sup of `|h|` over the grid, capped by the recorded bound. This is the
    /// norm that enters ratio-bound and spectral-gap formulas on a truncated
    /// domain.
    pub fn h_sup_on(&self, grid: &[f64]) -> f64 {
        let grid_sup = grid
            .iter()
            .map(|&x| self.h(x).abs())
            .fold(0.0f64, f64::max);
        grid_sup.min(self.bounds.h_sup)
    }
}

impl core::fmt::Debug for ObservationModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ObservationModel")
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// `N` unweighted particle positions (uniform `1/N` mass each).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::TooFewParticles);
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ParticleEnsemble { positions })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }

    /// Empirical variance with `1/N` normalization (the ensemble is the
    /// distribution, not a sample from one).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.positions.iter().map(|&p| (p - m) * (p - m)).sum::<f64>() / self.len() as f64
    }

    /// Particle average of `f`.
    pub fn average(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.positions.iter().map(|&p| f(p)).sum::<f64>() / self.len() as f64
    }

    /// Positions sorted ascending (for empirical CDFs).
    pub fn sorted_positions(&self) -> Vec<f64> {
        let mut s = self.positions.clone();
        s.sort_unstable_by(f64::total_cmp);
        s
    }
}
