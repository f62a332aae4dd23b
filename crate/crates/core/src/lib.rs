//! Continuous-time nonlinear filtering on 1D grids and particle ensembles.
//!
//! The crate is organized around a small set of value types:
//!
//! * [`GridDensity`]: a probability density stored in log domain on a
//!   bounded, strictly increasing grid.
//! * [`ParticleEnsemble`]: unweighted particle positions.
//! * [`ObservationPath`] / [`SignalPath`]: sampled observation and state
//!   trajectories (Euler–Maruyama, seeded and reproducible).
//! * [`GainField`]: a solution pair `(phi, K = phi')` of the weighted
//!   Poisson equation `(rho K)' = -(h - h_hat) rho`.
//!
//! On top of these, [`bayes`] implements the variational time-stepping
//! recursion (discrete Bayes updates that minimize KL-to-previous plus an
//! expected observation cost), [`gain`] solves the Poisson equation by exact
//! 1D integration, weak-form finite differences, and a particle Galerkin
//! method, [`ks`] provides grid references (explicit Kushner–Stratonovich
//! and controlled Fokker–Planck steps), and [`fpf`] runs the feedback
//! particle filter itself.
//!
//! The crate is `no_std` (with `alloc`); all IO lives in the companion
//! `fpf-lab` crate.

#![no_std]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod bayes;
pub mod density;
mod error;
pub mod fpf;
pub mod gain;
pub mod ks;
pub(crate) mod math;
pub mod sim;

pub use bayes::{TimeSteppingRun, VectorField};
pub use density::{GridDensity, ObservationModel, ParticleEnsemble};
pub use error::{Error, Result};
pub use fpf::{
    ControlLaw, FilterMode, FpfRun, GainSolverChoice, ScenarioConfig, StepRecord, TrueState,
};
pub use gain::{BasisFn, DensitySource, GainField, GainMethod};
pub use sim::{ObservationPath, Prior, SignalPath};
