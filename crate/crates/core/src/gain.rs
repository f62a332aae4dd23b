//! Solvers for the weighted Poisson equation
//!
//! ```text
//! (rho(x) phi'(x))' = -(g(x) - g_hat) rho(x),   integral phi rho dx = 0,
//! ```
//!
//! whose gradient `K = phi'` is the filter gain. Three methods: exact 1D
//! integration of the flux, a weak-form finite-difference (hat-function)
//! assembly, and a density-free particle Galerkin projection. All solvers
//! accept arbitrary data `g`; the observation function `h` is the common
//! case.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::density::{GridDensity, ObservationModel, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::math;
// When std is linked (tests, the std feature) its inherent float methods
// shadow this shim.
#[cfg_attr(any(test, feature = "std"), allow(unused_imports))]
use crate::math::FloatExt;

/// Nodes with log-density at or below this are treated as mass-free tails
/// (about 1e-300 in linear scale).
const LOG_TAIL: f64 = -690.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMethod {
    Exact1d,
    WeakFd,
    Galerkin,
}

/// Density or ensemble feeding the Galerkin expectations.
#[derive(Debug, Clone, Copy)]
pub enum DensitySource<'a> {
    Grid(&'a GridDensity),
    Ensemble(&'a ParticleEnsemble),
}

impl DensitySource<'_> {
    fn expectation(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        match self {
            DensitySource::Grid(d) => d.expectation(f),
            DensitySource::Ensemble(e) => Ok(e.average(f)),
        }
    }
}

/// One differentiable Galerkin basis function with its first two derivatives.
pub struct BasisFn {
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d1: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    d2: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl BasisFn {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        BasisFn {
            f: Box::new(f),
            d1: Box::new(d1),
            d2: Box::new(d2),
        }
    }

    /// Monomial `x^p` for `p >= 1`.
    pub fn monomial(p: u32) -> Self {
        BasisFn::scaled_monomial(p, 0.0, 1.0)
    }

    /// Centered/scaled monomial `((x - center)/scale)^p`, the default
    /// conditioning trick before Galerkin assembly.
    pub fn scaled_monomial(p: u32, center: f64, scale: f64) -> Self {
        let pf = p as f64;
        let f = move |x: f64| ((x - center) / scale).powi(p as i32);
        let d1 = move |x: f64| pf / scale * ((x - center) / scale).powi(p as i32 - 1);
        let d2 = move |x: f64| {
            if p < 2 {
                0.0
            } else {
                pf * (pf - 1.0) / (scale * scale) * ((x - center) / scale).powi(p as i32 - 2)
            }
        };
        BasisFn::new(f, d1, d2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.d1)(x)
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        (self.d2)(x)
    }
}

impl core::fmt::Debug for BasisFn {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("BasisFn")
    }
}

/// Monomials `{x, x^2, ..., x^degree}` centered and scaled by the source's
/// mean and standard deviation.
pub fn default_basis(degree: u32, center: f64, scale: f64) -> Vec<BasisFn> {
    (1..=degree)
        .map(|p| BasisFn::scaled_monomial(p, center, scale))
        .collect()
}

/// A solution pair `(phi, K = phi')` of the Poisson equation, grid-sampled;
/// Galerkin solutions additionally carry coefficients and their basis for
/// analytic off-grid evaluation.
#[derive(Debug)]
pub struct GainField {
    grid: Vec<f64>,
    phi: Vec<f64>,
    gain: Vec<f64>,
    gain_slope: Vec<f64>,
    method: GainMethod,
    galerkin: Option<GalerkinData>,
}

#[derive(Debug)]
struct GalerkinData {
    coefficients: Vec<f64>,
    basis: Vec<BasisFn>,
    phi_offset: f64,
}

impl GainField {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn gain_slope(&self) -> &[f64] {
        &self.gain_slope
    }

    pub fn method(&self) -> GainMethod {
        self.method
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        self.galerkin.as_ref().map(|g| g.coefficients.as_slice())
    }

    /// `K(x)`; Galerkin fields evaluate analytically, grid fields by linear
    /// interpolation with constant extrapolation past the grid (tail rule).
    pub fn gain_at(&self, x: f64) -> f64 {
        match &self.galerkin {
            Some(g) => g
                .coefficients
                .iter()
                .zip(&g.basis)
                .map(|(&c, b)| c * b.deriv(x))
                .sum(),
            None => math::interp_linear(&self.grid, &self.gain, x),
        }
    }

    /// `K'(x)`, the slope entering the Stratonovich correction.
    pub fn gain_slope_at(&self, x: f64) -> f64 {
        match &self.galerkin {
            Some(g) => g
                .coefficients
                .iter()
                .zip(&g.basis)
                .map(|(&c, b)| c * b.second_deriv(x))
                .sum(),
            None => math::interp_linear(&self.grid, &self.gain_slope, x),
        }
    }

    /// `phi(x)` (mean-zero under the solve's density).
    pub fn phi_at(&self, x: f64) -> f64 {
        match &self.galerkin {
            Some(g) => {
                g.coefficients
                    .iter()
                    .zip(&g.basis)
                    .map(|(&c, b)| c * b.eval(x))
                    .sum::<f64>()
                    - g.phi_offset
            }
            None => math::interp_linear(&self.grid, &self.phi, x),
        }
    }

    /// rho-weighted L2 distance between the gains of two fields, evaluated
    /// on rho's grid.
    pub fn gain_l2_distance(&self, other: &GainField, rho: &GridDensity) -> f64 {
        let sq: Vec<f64> = rho
            .grid()
            .iter()
            .map(|&x| {
                let d = self.gain_at(x) - other.gain_at(x);
                d * d
            })
            .collect();
        rho.expectation_of_values(&sq).unwrap_or(f64::NAN).sqrt()
    }
}

pub(crate) fn grid_field(
    grid: Vec<f64>,
    phi: Vec<f64>,
    method: GainMethod,
) -> GainField {
    grid_field_with(grid, phi, method, None)
}

fn grid_field_with(
    grid: Vec<f64>,
    phi: Vec<f64>,
    method: GainMethod,
    galerkin: Option<GalerkinData>,
) -> GainField {
    let gain = math::gradient(&grid, &phi);
    let gain_slope = math::gradient(&grid, &gain);
    GainField {
        grid,
        phi,
        gain,
        gain_slope,
        method,
        galerkin,
    }
}

/// Exact 1D solve for arbitrary centered data: one integration gives the
/// flux `rho K = -int (g - g_hat) rho`, a second gives `phi`.
pub fn solve_data_exact_1d(rho: &GridDensity, g_values: &[f64]) -> Result<GainField> {
    let grid = rho.grid();
    let n = grid.len();
    if g_values.len() != n {
        return Err(Error::GridMismatch);
    }
    let g_hat = rho.expectation_of_values(g_values)?;
    let logs = rho.log_values();

    // Reliable window: nodes where rho has not underflowed.
    let first = logs.iter().position(|&l| l > LOG_TAIL).ok_or(Error::ZeroMass)?;
    let last = n - 1 - logs.iter().rev().position(|&l| l > LOG_TAIL).unwrap();
    if logs[first..=last].iter().any(|&l| l <= LOG_TAIL) {
        return Err(Error::DegenerateDensity);
    }

    let values = rho.values();
    let integrand: Vec<f64> = (0..n).map(|i| (g_values[i] - g_hat) * values[i]).collect();
    let mut cum = math::cumulative_trapezoid(grid, &integrand);

    // The centering makes the full integral zero, so the flux rho*K vanishes
    // at both ends. Quadrature leaves a roundoff-scale closure defect which,
    // divided by a vanishing tail density, would blow the gain up at the far
    // end; spread it over the grid in proportion to the accumulated absolute
    // integrand so both tails stay clean.
    let total = cum[n - 1];
    let abs_integrand: Vec<f64> = integrand.iter().map(|v| v.abs()).collect();
    let abs_cum = math::cumulative_trapezoid(grid, &abs_integrand);
    let abs_total = abs_cum[n - 1];
    if abs_total > 0.0 {
        for i in 0..n {
            cum[i] -= total * (abs_cum[i] / abs_total);
        }
    }

    let mut gain = vec![0.0; n];
    for i in first..=last {
        gain[i] = -cum[i] / values[i];
    }
    // Hold K at its last reliable value beyond the window (tail rule).
    for i in 0..first {
        gain[i] = gain[first];
    }
    for i in last + 1..n {
        gain[i] = gain[last];
    }

    let mut phi = math::cumulative_trapezoid(grid, &gain);
    let phi_mean = rho.expectation_of_values(&phi)?;
    for p in phi.iter_mut() {
        *p -= phi_mean;
    }

    let gain_slope = math::gradient(grid, &gain);
    Ok(GainField {
        grid: grid.to_vec(),
        phi,
        gain,
        gain_slope,
        method: GainMethod::Exact1d,
        galerkin: None,
    })
}

/// Exact 1D solve with `g = h`.
pub fn solve_gain_exact_1d(rho: &GridDensity, model: &ObservationModel) -> Result<GainField> {
    solve_data_exact_1d(rho, &model.h_values(rho.grid()))
}

/// Weak-form finite-difference solve over hat functions on the grid. The
/// constant null space is removed by appending the mean-zero constraint as a
/// bordered (Lagrange-multiplier) row.
pub fn solve_data_weak_fd(rho: &GridDensity, g_values: &[f64]) -> Result<GainField> {
    let grid = rho.grid();
    let n = grid.len();
    if g_values.len() != n {
        return Err(Error::GridMismatch);
    }
    if n < 128 {
        return Err(Error::InvalidInput("weak fd solve needs at least 128 nodes"));
    }
    let g_hat = rho.expectation_of_values(g_values)?;
    let values = rho.values();
    let w = math::trapezoid_weights(grid);

    // Stiffness: per-cell contribution of int rho psi_i' psi_j' with the
    // midpoint density value; symmetric tridiagonal, null space = constants.
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for k in 0..n - 1 {
        let h = grid[k + 1] - grid[k];
        let a = 0.5 * (values[k] + values[k + 1]) / h;
        diag[k] += a;
        diag[k + 1] += a;
        off[k] -= a;
    }
    // Mass-lumped load and constraint column.
    let mut rhs = vec![0.0; n + 1];
    let mut border = vec![0.0; n];
    for i in 0..n {
        rhs[i] = w[i] * (g_values[i] - g_hat) * values[i];
        border[i] = w[i] * values[i];
    }

    let phi = solve_bordered_tridiagonal(&mut diag, &mut off, &mut border, &mut rhs)?;
    Ok(grid_field(grid.to_vec(), phi, GainMethod::WeakFd))
}

/// Weak-form finite-difference solve with `g = h`.
pub fn solve_gain_weak_fd(rho: &GridDensity, model: &ObservationModel) -> Result<GainField> {
    solve_data_weak_fd(rho, &model.h_values(rho.grid()))
}

/// Solves the (n+1) x (n+1) system
///
/// ```text
/// [ T  m ] [ x  ]   [ b ]
/// [ m' 0 ] [ mu ] = [ 0 ]
/// ```
///
/// for a symmetric tridiagonal `T` whose null space is spanned by constants.
/// Gaussian elimination without pivoting is stable here: every leading block
/// of `T` is positive definite, and the border column repairs the final
/// (rank-deficient) pivot. Destroys its inputs; returns `x`.
fn solve_bordered_tridiagonal(
    diag: &mut [f64],
    off: &mut [f64],
    border: &mut [f64],
    rhs: &mut [f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    // brow mirrors the border row as it fills in during elimination.
    let mut brow = border.to_vec();
    let mut corner = 0.0;

    for i in 0..n - 1 {
        let piv = diag[i];
        if piv.abs() < 1e-300 {
            return Err(Error::SolverFailure);
        }
        // Row i+1 of the tridiagonal part.
        let f = off[i] / piv;
        diag[i + 1] -= f * off[i];
        border[i + 1] -= f * border[i];
        rhs[i + 1] -= f * rhs[i];
        // The border row.
        let fb = brow[i] / piv;
        brow[i + 1] -= fb * off[i];
        corner -= fb * border[i];
        rhs[n] -= fb * rhs[i];
    }

    // Trailing 2x2 block in (x[n-1], mu).
    let det = diag[n - 1] * corner - border[n - 1] * brow[n - 1];
    if det.abs() < 1e-300 {
        return Err(Error::SolverFailure);
    }
    let mut x = vec![0.0; n];
    x[n - 1] = (rhs[n - 1] * corner - border[n - 1] * rhs[n]) / det;
    let mu = (diag[n - 1] * rhs[n] - brow[n - 1] * rhs[n - 1]) / det;

    for i in (0..n - 1).rev() {
        x[i] = (rhs[i] - off[i] * x[i + 1] - border[i] * mu) / diag[i];
    }
    Ok(x)
}

/// Galerkin coefficients `c` solving `A c = b` with `A_jk = E[psi_j' psi_k']`
/// and `b_j = E[(g - g_hat) psi_j]`; expectations are quadrature for a grid
/// source and fixed-order particle averages for an ensemble.
pub fn galerkin_coefficients(
    source: DensitySource<'_>,
    g: impl Fn(f64) -> f64,
    basis: &[BasisFn],
) -> Result<Vec<f64>> {
    let m = basis.len();
    if m == 0 {
        return Err(Error::EmptyBasis);
    }
    let g_hat = source.expectation(&g)?;
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    for j in 0..m {
        for k in j..m {
            let v = source.expectation(|x| basis[j].deriv(x) * basis[k].deriv(x))?;
            a[j * m + k] = v;
            a[k * m + j] = v;
        }
        b[j] = source.expectation(|x| (g(x) - g_hat) * basis[j].eval(x))?;
    }
    solve_dense(&mut a, &mut b, m)?;
    Ok(b)
}

/// Dense Gauss elimination with partial pivoting; `b` becomes the solution.
fn solve_dense(a: &mut [f64], b: &mut [f64], m: usize) -> Result<()> {
    let scale = a
        .iter()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max)
        .max(1e-30);
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if a[r * m + col].abs() > a[piv * m + col].abs() {
                piv = r;
            }
        }
        if a[piv * m + col].abs() < 1e-12 * scale {
            return Err(Error::SingularGram);
        }
        if piv != col {
            for c in 0..m {
                a.swap(col * m + c, piv * m + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..m {
            let f = a[r * m + col] / a[col * m + col];
            for c in col..m {
                a[r * m + c] -= f * a[col * m + c];
            }
            b[r] -= f * b[col];
        }
    }
    for r in (0..m).rev() {
        let mut s = b[r];
        for c in r + 1..m {
            s -= a[r * m + c] * b[c];
        }
        b[r] = s / a[r * m + r];
    }
    Ok(())
}

/// Particle (or grid) Galerkin solve with `g = h`. The returned field is
/// sampled on `grid` for inspection but evaluates analytically off-grid.
pub fn solve_gain_galerkin(
    source: DensitySource<'_>,
    model: &ObservationModel,
    basis: Vec<BasisFn>,
    grid: &[f64],
) -> Result<GainField> {
    let coefficients = galerkin_coefficients(source, |x| model.h(x), &basis)?;
    let combine = |f: &dyn Fn(&BasisFn, f64) -> f64, x: f64| -> f64 {
        coefficients
            .iter()
            .zip(&basis)
            .map(|(&c, b)| c * f(b, x))
            .sum()
    };
    let phi_offset = source.expectation(|x| combine(&|b, x| b.eval(x), x))?;
    let phi: Vec<f64> = grid
        .iter()
        .map(|&x| combine(&|b, x| b.eval(x), x) - phi_offset)
        .collect();
    let gain: Vec<f64> = grid.iter().map(|&x| combine(&|b, x| b.deriv(x), x)).collect();
    let gain_slope: Vec<f64> = grid
        .iter()
        .map(|&x| combine(&|b, x| b.second_deriv(x), x))
        .collect();
    let data = GalerkinData {
        coefficients,
        basis,
        phi_offset,
    };
    Ok(GainField {
        grid: grid.to_vec(),
        phi,
        gain,
        gain_slope,
        method: GainMethod::Galerkin,
        galerkin: Some(data),
    })
}

/// Residual of the defining weak form for a probe `psi`:
/// `int K psi' rho - int (g - g_hat) psi rho`.
pub fn weak_form_residual(
    field: &GainField,
    rho: &GridDensity,
    g_values: &[f64],
    psi: impl Fn(f64) -> f64,
    dpsi: impl Fn(f64) -> f64,
) -> Result<f64> {
    let g_hat = rho.expectation_of_values(g_values)?;
    let lhs_vals: Vec<f64> = rho.grid().iter().map(|&x| field.gain_at(x) * dpsi(x)).collect();
    let rhs_vals: Vec<f64> = rho
        .grid()
        .iter()
        .enumerate()
        .map(|(i, &x)| (g_values[i] - g_hat) * psi(x))
        .collect();
    Ok(rho.expectation_of_values(&lhs_vals)? - rho.expectation_of_values(&rhs_vals)?)
}

/// Both a-priori energy bounds for a solved field, with their two sides
/// reported so tests can check equality cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `int |phi'|^2 rho` vs `(1/lambda) int |g - g_hat|^2 rho`.
    pub energy_lhs: f64,
    pub energy_rhs: f64,
    pub energy_ok: bool,
    /// `int |phi''|^2 rho` vs `lambda^-2 (lambda + sup |G''|) int |g'|^2 rho`
    /// where `G = -ln rho`.
    pub hessian_lhs: f64,
    pub hessian_rhs: f64,
    pub hessian_ok: bool,
}

/// Evaluates the two a-priori bounds for `field` against `rho` and the
/// caller-supplied Poincaré constant `lambda`.
pub fn verify_poisson_bounds(
    field: &GainField,
    rho: &GridDensity,
    model: &ObservationModel,
    lambda: f64,
) -> Result<BoundReport> {
    if !(lambda > 0.0) {
        return Err(Error::BadConstant);
    }
    let grid = rho.grid();
    let h_vals = model.h_values(grid);
    let h_hat = rho.expectation_of_values(&h_vals)?;

    let gain_sq: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let k = field.gain_at(x);
            k * k
        })
        .collect();
    let energy_lhs = rho.expectation_of_values(&gain_sq)?;
    let data_sq: Vec<f64> = h_vals.iter().map(|&h| (h - h_hat) * (h - h_hat)).collect();
    let energy_rhs = rho.expectation_of_values(&data_sq)? / lambda;

    // D^2 phi from the gain samples; D^2 G from -log rho, sup over nodes
    // that carry meaningful mass (tail log-density is numerical noise).
    let gain_vals: Vec<f64> = grid.iter().map(|&x| field.gain_at(x)).collect();
    let hess_phi = math::gradient(grid, &gain_vals);
    let hess_sq: Vec<f64> = hess_phi.iter().map(|&v| v * v).collect();
    let hessian_lhs = rho.expectation_of_values(&hess_sq)?;

    let neg_log: Vec<f64> = rho.log_values().iter().map(|&l| -l).collect();
    let hess_g = math::second_derivative(grid, &neg_log);
    let mut hess_g_sup = 0.0f64;
    for i in 0..grid.len() {
        if rho.log_values()[i] > -500.0 {
            hess_g_sup = hess_g_sup.max(hess_g[i].abs());
        }
    }
    let grad_sq: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let d = model.grad_h(x);
            d * d
        })
        .collect();
    let hessian_rhs =
        (lambda + hess_g_sup) / (lambda * lambda) * rho.expectation_of_values(&grad_sq)?;

    const SLACK: f64 = 1e-8;
    Ok(BoundReport {
        energy_lhs,
        energy_rhs,
        energy_ok: energy_lhs <= energy_rhs * (1.0 + SLACK) + SLACK,
        hessian_lhs,
        hessian_rhs,
        hessian_ok: hessian_lhs <= hessian_rhs * (1.0 + SLACK) + SLACK,
    })
}

/// Smallest nonzero eigenvalue of the weighted Laplacian, i.e. the Poincaré
/// constant of `rho` on its grid: inverse iteration on the generalized
/// problem `A v = lambda M v` (FEM stiffness vs lumped mass) with constants
/// deflated through the mean-zero bordered solve.
pub fn spectral_gap(rho: &GridDensity) -> Result<f64> {
    let grid = rho.grid();
    let n = grid.len();
    let values = rho.values();
    let w = math::trapezoid_weights(grid);
    let mass: Vec<f64> = (0..n).map(|i| w[i] * values[i]).collect();

    let stiffness_apply = |v: &[f64], out: &mut [f64]| {
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for k in 0..n - 1 {
            let h = grid[k + 1] - grid[k];
            let a = 0.5 * (values[k] + values[k + 1]) / h;
            let d = v[k + 1] - v[k];
            out[k] -= a * d;
            out[k + 1] += a * d;
        }
    };

    let mean = rho.expectation(|x| x)?;
    let mut v: Vec<f64> = grid.iter().map(|&x| x - mean).collect();
    let mut lambda = 0.0;
    let mut av = vec![0.0; n];
    for _ in 0..200 {
        // Solve A y = M v with the mean-zero constraint.
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for k in 0..n - 1 {
            let h = grid[k + 1] - grid[k];
            let a = 0.5 * (values[k] + values[k + 1]) / h;
            diag[k] += a;
            diag[k + 1] += a;
            off[k] -= a;
        }
        let mut border = mass.clone();
        let mut rhs = vec![0.0; n + 1];
        for i in 0..n {
            rhs[i] = mass[i] * v[i];
        }
        let y = solve_bordered_tridiagonal(&mut diag, &mut off, &mut border, &mut rhs)?;

        // M-normalize and take the Rayleigh quotient.
        let norm_sq: f64 = y.iter().zip(&mass).map(|(&yi, &mi)| mi * yi * yi).sum();
        if !(norm_sq > 0.0) {
            return Err(Error::SolverFailure);
        }
        let norm = norm_sq.sqrt();
        let next: Vec<f64> = y.iter().map(|&yi| yi / norm).collect();
        stiffness_apply(&next, &mut av);
        let new_lambda: f64 = next.iter().zip(&av).map(|(&vi, &ai)| vi * ai).sum();
        let done = (new_lambda - lambda).abs() <= 1e-12 * new_lambda.abs().max(1.0);
        lambda = new_lambda;
        v = next;
        if done {
            break;
        }
    }
    if !(lambda > 0.0) {
        return Err(Error::SolverFailure);
    }
    Ok(lambda)
}
