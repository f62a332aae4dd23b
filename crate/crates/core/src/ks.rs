//! Grid-based reference propagators: an explicit Euler step of the
//! nonlinear-filter SPDE, its weak-form residual, the controlled forward
//! (Fokker–Planck) equation driven by the particle filter's `(K, u)`, and
//! the pointwise exactness identities tying the two together.

use alloc::vec::Vec;

use crate::bayes::VectorField;
use crate::density::{GridDensity, ObservationModel};
use crate::error::{Error, Result};
use crate::gain::GainField;
use crate::math;
// When std is linked (tests, the std feature) its inherent float methods
// shadow this shim.
#[cfg_attr(any(test, feature = "std"), allow(unused_imports))]
use crate::math::FloatExt;

/// Fraction of the original mass below which an explicit step is rejected.
const MASS_FLOOR: f64 = 1e-6;

/// Outcome of an explicit Euler step with its bookkeeping: how much mass the
/// update created or destroyed before renormalization, and how much negative
/// mass was clipped away.
#[derive(Debug, Clone)]
pub struct StepDetail {
    pub density: GridDensity,
    /// Signed mass change of the raw update (zero for divergence-form
    /// right-hand sides, up to rounding).
    pub mass_drift: f64,
    /// Mass removed by clipping negative nodes.
    pub clipped_mass: f64,
}

/// Explicit Euler step of the filter SPDE
/// `dp = (h - h_hat)(dz - h_hat dt) p`, clipped at zero and renormalized.
pub fn ks_step(
    p: &GridDensity,
    dz: f64,
    dt: f64,
    model: &ObservationModel,
) -> Result<GridDensity> {
    Ok(ks_step_detailed(p, dz, dt, model)?.density)
}

/// As [`ks_step`], reporting the clipped mass.
pub fn ks_step_detailed(
    p: &GridDensity,
    dz: f64,
    dt: f64,
    model: &ObservationModel,
) -> Result<StepDetail> {
    if !(dt > 0.0) {
        return Err(Error::BadStep);
    }
    let h_vals = model.h_values(p.grid());
    let h_hat = p.expectation_of_values(&h_vals)?;
    let values = p.values();
    let updated: Vec<f64> = values
        .iter()
        .zip(&h_vals)
        .map(|(&v, &h)| v * (1.0 + (h - h_hat) * (dz - h_hat * dt)))
        .collect();
    finish_step(p, updated)
}

fn finish_step(p: &GridDensity, updated: Vec<f64>) -> Result<StepDetail> {
    let w = math::trapezoid_weights(p.grid());
    let before = p.mass();
    let mut raw_mass = 0.0;
    let mut clipped_mass = 0.0;
    let mut clipped = updated;
    for (v, &wi) in clipped.iter_mut().zip(&w) {
        raw_mass += wi * *v;
        if *v < 0.0 {
            clipped_mass -= wi * *v;
            *v = 0.0;
        }
    }
    let kept = raw_mass + clipped_mass;
    if !(kept > MASS_FLOOR * before) {
        return Err(Error::StepTooLarge);
    }
    let logs: Vec<f64> = clipped.iter().map(|&v| v.ln()).collect();
    let density = GridDensity::from_log_values(p.grid().to_vec(), logs)?.normalize()?;
    Ok(StepDetail {
        density,
        mass_drift: raw_mass - before,
        clipped_mass,
    })
}

/// Weak-form residual of one SPDE step against a test function `f`:
/// `<f, p_next> - <f, p> - <(h - h_hat)(dz - h_hat dt) f, p>`.
pub fn ks_weak_residual(
    p: &GridDensity,
    p_next: &GridDensity,
    dz: f64,
    dt: f64,
    model: &ObservationModel,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    let h_vals = model.h_values(p.grid());
    let h_hat = p.expectation_of_values(&h_vals)?;
    let f_vals: Vec<f64> = p.grid().iter().map(|&x| f(x)).collect();
    let lhs = p_next.expectation_of_values(&f_vals)?;
    let base = p.expectation_of_values(&f_vals)?;
    let gen_vals: Vec<f64> = f_vals
        .iter()
        .zip(&h_vals)
        .map(|(&fv, &h)| (h - h_hat) * (dz - h_hat * dt) * fv)
        .collect();
    let gen = p.expectation_of_values(&gen_vals)?;
    Ok(lhs - base - gen)
}

/// Explicit Euler step of the controlled forward equation
///
/// ```text
/// dp = -(p K)' dz - (p u)' dt + (1/2) (p K^2)'' dt
/// ```
///
/// in conservative (finite-volume) form with zero-flux ends, so the raw
/// update conserves mass to rounding. Clipped at zero and renormalized.
pub fn fokker_planck_step(
    p: &GridDensity,
    gain: &GainField,
    u: &VectorField,
    dz: f64,
    dt: f64,
) -> Result<GridDensity> {
    Ok(fokker_planck_step_detailed(p, gain, u, dz, dt)?.density)
}

/// As [`fokker_planck_step`], reporting mass bookkeeping.
pub fn fokker_planck_step_detailed(
    p: &GridDensity,
    gain: &GainField,
    u: &VectorField,
    dz: f64,
    dt: f64,
) -> Result<StepDetail> {
    if !(dt > 0.0) {
        return Err(Error::BadStep);
    }
    let grid = p.grid();
    let n = grid.len();
    if u.len() != n {
        return Err(Error::GridMismatch);
    }
    let k_vals: Vec<f64> = grid.iter().map(|&x| gain.gain_at(x)).collect();

    // CFL guard: per-step transport must stay under half the local spacing.
    for i in 0..n {
        let local = if i == 0 {
            grid[1] - grid[0]
        } else if i == n - 1 {
            grid[n - 1] - grid[n - 2]
        } else {
            (grid[i] - grid[i - 1]).min(grid[i + 1] - grid[i])
        };
        if (k_vals[i] * dz).abs() > 0.5 * local || (u.values()[i] * dt).abs() > 0.5 * local {
            return Err(Error::CflViolation);
        }
    }

    let values = p.values();
    let w = math::trapezoid_weights(grid);
    let pk: Vec<f64> = values.iter().zip(&k_vals).map(|(&p, &k)| p * k).collect();
    let pu: Vec<f64> = values
        .iter()
        .zip(u.values())
        .map(|(&p, &uv)| p * uv)
        .collect();
    let pkk: Vec<f64> = pk.iter().zip(&k_vals).map(|(&pk, &k)| pk * k).collect();

    // Half-face fluxes; F[i] sits between nodes i and i+1. Boundary flux
    // is zero, so the update telescopes to exact mass conservation.
    let mut flux = alloc::vec![0.0; n - 1];
    for i in 0..n - 1 {
        let h = grid[i + 1] - grid[i];
        let adv = 0.5 * (pk[i] + pk[i + 1]) * dz + 0.5 * (pu[i] + pu[i + 1]) * dt;
        let diff = 0.5 * (pkk[i + 1] - pkk[i]) / h * dt;
        flux[i] = adv - diff;
    }
    let mut updated = values;
    for i in 0..n {
        let inflow = if i == 0 { 0.0 } else { flux[i - 1] };
        let outflow = if i == n - 1 { 0.0 } else { flux[i] };
        updated[i] -= (outflow - inflow) / w[i];
    }
    finish_step(p, updated)
}

/// The rho-weighted L2 norms of the two pointwise exactness identities the
/// optimal control pair must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactnessResidual {
    /// `sqrt( int [ (pK)' + p(h - h_hat) ]^2 p dx )` (the gain equation).
    pub gain_equation: f64,
    /// `sqrt( int [ -(pu)' + (1/2)(pK^2)'' - (pK)' h_hat ]^2 p dx )`.
    pub control_equation: f64,
}

/// Evaluates both exactness identities for a candidate `(K, u)` pair.
pub fn exactness_identity_residual(
    p: &GridDensity,
    gain: &GainField,
    u: &VectorField,
    model: &ObservationModel,
) -> Result<ExactnessResidual> {
    let grid = p.grid();
    let n = grid.len();
    if u.len() != n {
        return Err(Error::GridMismatch);
    }
    let h_vals = model.h_values(grid);
    let h_hat = p.expectation_of_values(&h_vals)?;
    let values = p.values();
    let k_vals: Vec<f64> = grid.iter().map(|&x| gain.gain_at(x)).collect();

    let pk: Vec<f64> = values.iter().zip(&k_vals).map(|(&p, &k)| p * k).collect();
    let pu: Vec<f64> = values
        .iter()
        .zip(u.values())
        .map(|(&p, &uv)| p * uv)
        .collect();
    let pkk: Vec<f64> = pk.iter().zip(&k_vals).map(|(&pk, &k)| pk * k).collect();

    let d_pk = math::gradient(grid, &pk);
    let d_pu = math::gradient(grid, &pu);
    let dd_pkk = math::second_derivative(grid, &pkk);

    let mut r_gain = alloc::vec![0.0; n];
    let mut r_ctrl = alloc::vec![0.0; n];
    for i in 0..n {
        let g = d_pk[i] + values[i] * (h_vals[i] - h_hat);
        let c = -d_pu[i] + 0.5 * dd_pkk[i] - d_pk[i] * h_hat;
        r_gain[i] = g * g;
        r_ctrl[i] = c * c;
    }
    Ok(ExactnessResidual {
        gain_equation: p.expectation_of_values(&r_gain)?.sqrt(),
        control_equation: p.expectation_of_values(&r_ctrl)?.sqrt(),
    })
}
