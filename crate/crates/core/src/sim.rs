//! Ground-truth state and observation sample paths with deterministic,
//! seeded randomness.
//!
//! Every random quantity draws from its own counter-based ChaCha stream, so
//! paths are reproducible independent of evaluation order and two different
//! consumers of the same seed never share draws.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::density::{GridDensity, ObservationModel, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::math;
// When std is linked (tests, the std feature) its inherent float methods
// shadow this shim.
#[cfg_attr(any(test, feature = "std"), allow(unused_imports))]
use crate::math::FloatExt;

/// Stream ids keeping independent consumers of one seed apart.
const STREAM_PRIOR: u64 = 1;
const STREAM_OBSERVATION: u64 = 2;
const STREAM_SIGNAL: u64 = 3;
const STREAM_PROCESS_NOISE_BASE: u64 = 1 << 32;
const STREAM_BRIDGE_BASE: u64 = 1 << 33;

/// Counter-based RNG for a named (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-particle process-noise RNG for [`crate::fpf`]'s general-drift step.
pub(crate) fn process_noise_rng(seed: u64, step: u64) -> ChaCha12Rng {
    stream_rng(seed, STREAM_PROCESS_NOISE_BASE + step)
}

/// Uniform time grid `t_0 = 0 < ... < t_n = horizon`.
pub fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| horizon * i as f64 / steps as f64)
        .collect()
}

/// A sampled observation process `{Z_n}` on `t_0 = 0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    times: Vec<f64>,
    z_values: Vec<f64>,
}

impl ObservationPath {
    pub fn new(times: Vec<f64>, z_values: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != z_values.len() {
            return Err(Error::InvalidInput("path needs matching times/values, length >= 2"));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidInput("observation path must start at t = 0"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::BadStep);
            }
        }
        if z_values.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ObservationPath { times, z_values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z_values
    }

    /// Number of increments `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `(dt_n, dz_n)` for step `n` (1-based over nodes, 0-based here).
    pub fn increment(&self, n: usize) -> (f64, f64) {
        (
            self.times[n + 1] - self.times[n],
            self.z_values[n + 1] - self.z_values[n],
        )
    }

    /// Largest time step on the path.
    pub fn max_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// `max_n |Z_n - Z_0|`, the excursion constant entering the spectral-gap
    /// lower bound.
    pub fn max_excursion(&self) -> f64 {
        let z0 = self.z_values[0];
        self.z_values
            .iter()
            .map(|&z| (z - z0).abs())
            .fold(0.0, f64::max)
    }

    /// Brownian-bridge midpoint refinement: doubles the number of steps while
    /// keeping the already-sampled nodes fixed, so refinement studies hold
    /// the underlying continuous path fixed. Deterministic given the seed;
    /// each interval draws from its own stream.
    pub fn refine_bridge(&self, seed: u64) -> ObservationPath {
        let n = self.steps();
        let mut times = Vec::with_capacity(2 * n + 1);
        let mut z = Vec::with_capacity(2 * n + 1);
        for i in 0..n {
            let (dt, _) = self.increment(i);
            // The level (current step count) enters the stream id so repeated
            // refinement does not reuse draws across levels.
            let mut rng = stream_rng(seed, STREAM_BRIDGE_BASE + (n as u64) * (1 << 20) + i as u64);
            let noise: f64 = rng.sample(StandardNormal);
            times.push(self.times[i]);
            z.push(self.z_values[i]);
            times.push(0.5 * (self.times[i] + self.times[i + 1]));
            z.push(0.5 * (self.z_values[i] + self.z_values[i + 1]) + 0.5 * dt.sqrt() * noise);
        }
        times.push(self.times[n]);
        z.push(self.z_values[n]);
        ObservationPath { times, z_values: z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalMode {
    Static,
    Drifting,
}

/// A sampled state trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    times: Vec<f64>,
    x_values: Vec<f64>,
    mode: SignalMode,
}

impl SignalPath {
    /// The static signal of the basic model: `X_t = x0` for all t.
    pub fn constant(x0: f64, times: Vec<f64>) -> Result<Self> {
        if !x0.is_finite() {
            return Err(Error::NonFinite);
        }
        let x_values = alloc::vec![x0; times.len()];
        SignalPath::new(times, x_values, SignalMode::Static)
    }

    pub fn new(times: Vec<f64>, x_values: Vec<f64>, mode: SignalMode) -> Result<Self> {
        if times.len() < 2 || times.len() != x_values.len() {
            return Err(Error::InvalidInput("path needs matching times/values, length >= 2"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::BadStep);
            }
        }
        if x_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if mode == SignalMode::Static && x_values.iter().any(|&x| x != x_values[0]) {
            return Err(Error::InvalidInput("static signal must be constant"));
        }
        Ok(SignalPath {
            times,
            x_values,
            mode,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x_values
    }

    pub fn mode(&self) -> SignalMode {
        self.mode
    }
}

/// Initial distribution for the hidden state.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Gaussian { mean: f64, std: f64 },
    /// `(weight, mean, std)` per component; weights need not be normalized.
    Mixture(Vec<(f64, f64, f64)>),
    Grid(GridDensity),
}

impl Prior {
    /// Overall mean of the prior.
    pub fn mean(&self) -> f64 {
        match self {
            Prior::Gaussian { mean, .. } => *mean,
            Prior::Mixture(parts) => {
                let wsum: f64 = parts.iter().map(|p| p.0).sum();
                parts.iter().map(|&(w, m, _)| w * m).sum::<f64>() / wsum
            }
            Prior::Grid(d) => d.mean(),
        }
    }

    /// Overall standard deviation of the prior.
    pub fn std(&self) -> f64 {
        match self {
            Prior::Gaussian { std, .. } => *std,
            Prior::Mixture(parts) => {
                let wsum: f64 = parts.iter().map(|p| p.0).sum();
                let mean = self.mean();
                let var = parts
                    .iter()
                    .map(|&(w, m, s)| w * (s * s + (m - mean) * (m - mean)))
                    .sum::<f64>()
                    / wsum;
                var.sqrt()
            }
            Prior::Grid(d) => d.variance().sqrt(),
        }
    }

    /// Restriction of the prior to `grid`, normalized.
    pub fn grid_density(&self, grid: &[f64]) -> Result<GridDensity> {
        match self {
            Prior::Gaussian { mean, std } => GridDensity::gaussian(*mean, *std, grid),
            Prior::Mixture(parts) => GridDensity::gaussian_mixture(parts, grid),
            Prior::Grid(d) => {
                let logs: Vec<f64> = grid
                    .iter()
                    .map(|&x| math::interp_linear(d.grid(), d.log_values(), x))
                    .collect();
                GridDensity::from_log_values(grid.to_vec(), logs)?.normalize()
            }
        }
    }
}

/// Draws `n` i.i.d. particles from the prior. Parametric priors are drawn
/// exactly; grid priors by inverse CDF.
pub fn sample_prior(prior: &Prior, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n < 2 {
        return Err(Error::TooFewParticles);
    }
    let mut rng = stream_rng(seed, STREAM_PRIOR);
    let mut positions = Vec::with_capacity(n);
    match prior {
        Prior::Gaussian { mean, std } => {
            if *std <= 0.0 {
                return Err(Error::InvalidInput("gaussian std must be > 0"));
            }
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                positions.push(mean + std * z);
            }
        }
        Prior::Mixture(parts) => {
            if parts.is_empty() || parts.iter().any(|&(w, _, s)| w <= 0.0 || s <= 0.0) {
                return Err(Error::InvalidInput("mixture weights and stds must be > 0"));
            }
            let wsum: f64 = parts.iter().map(|p| p.0).sum();
            for _ in 0..n {
                let mut u: f64 = rng.random::<f64>() * wsum;
                let mut chosen = parts.len() - 1;
                for (k, &(w, _, _)) in parts.iter().enumerate() {
                    if u < w {
                        chosen = k;
                        break;
                    }
                    u -= w;
                }
                let (_, m, s) = parts[chosen];
                let z: f64 = rng.sample(StandardNormal);
                positions.push(m + s * z);
            }
        }
        Prior::Grid(d) => {
            let cdf = d.cdf();
            let grid = d.grid();
            for _ in 0..n {
                let u: f64 = rng.random();
                positions.push(inverse_cdf(grid, &cdf, u));
            }
        }
    }
    ParticleEnsemble::new(positions)
}

/// Inverse of a grid CDF by linear interpolation within the bracketing cell.
pub fn inverse_cdf(grid: &[f64], cdf: &[f64], u: f64) -> f64 {
    let n = grid.len();
    if u <= cdf[0] {
        return grid[0];
    }
    if u >= cdf[n - 1] {
        return grid[n - 1];
    }
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cdf[mid] <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let span = cdf[hi] - cdf[lo];
    if span <= 0.0 {
        return grid[lo];
    }
    grid[lo] + (u - cdf[lo]) / span * (grid[hi] - grid[lo])
}

/// Where the Euler scheme evaluates `h(X)` within each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftEval {
    #[default]
    LeftEndpoint,
    Midpoint,
}

/// Euler–Maruyama observation path on the signal's time grid:
/// `dZ_n = h(X) dt_n + dW_n`, `dW_n ~ N(0, dt_n)`, `Z_0 = 0`.
pub fn simulate_observation_path(
    x_path: &SignalPath,
    model: &ObservationModel,
    seed: u64,
) -> ObservationPath {
    simulate_observation_path_with(x_path, model, seed, DriftEval::LeftEndpoint)
}

/// As [`simulate_observation_path`], with an explicit choice of where `h(X)`
/// is frozen within each step.
pub fn simulate_observation_path_with(
    x_path: &SignalPath,
    model: &ObservationModel,
    seed: u64,
    eval: DriftEval,
) -> ObservationPath {
    let times = x_path.times();
    let xs = x_path.x_values();
    let mut rng = stream_rng(seed, STREAM_OBSERVATION);
    let mut z = Vec::with_capacity(times.len());
    z.push(0.0);
    for n in 1..times.len() {
        let dt = times[n] - times[n - 1];
        let x = match eval {
            DriftEval::LeftEndpoint => xs[n - 1],
            DriftEval::Midpoint => 0.5 * (xs[n - 1] + xs[n]),
        };
        let noise: f64 = rng.sample(StandardNormal);
        z.push(z[n - 1] + model.h(x) * dt + dt.sqrt() * noise);
    }
    ObservationPath {
        times: times.to_vec(),
        z_values: z,
    }
}

/// Euler–Maruyama state path `dX = a(X) dt (+ dB)`; with zero drift and
/// noise off this is the static signal of the basic model.
pub fn simulate_signal_path(
    drift: impl Fn(f64) -> f64,
    x0: f64,
    times: &[f64],
    process_noise: bool,
    seed: u64,
) -> Result<SignalPath> {
    let mut rng = stream_rng(seed, STREAM_SIGNAL);
    let mut xs = Vec::with_capacity(times.len());
    xs.push(x0);
    let mut x = x0;
    let mut moved = false;
    for n in 1..times.len() {
        let dt = times[n] - times[n - 1];
        let mut next = x + drift(x) * dt;
        if process_noise {
            let noise: f64 = rng.sample(StandardNormal);
            next += dt.sqrt() * noise;
        }
        if !next.is_finite() {
            return Err(Error::Blowup);
        }
        moved |= next != x;
        x = next;
        xs.push(x);
    }
    let mode = if moved {
        SignalMode::Drifting
    } else {
        SignalMode::Static
    };
    SignalPath::new(times.to_vec(), xs, mode)
}
