//! Float math shim (the crate is `no_std`, so `f64` lacks the usual inherent
//! methods) plus small shared numeric helpers.

use alloc::vec::Vec;

/// Method-syntax access to libm for `f64`. With std linked the inherent
/// methods win name resolution and the shim goes unused by design.
#[cfg_attr(any(test, feature = "std"), allow(dead_code))]
pub(crate) trait FloatExt {
    fn exp(self) -> f64;
    fn ln(self) -> f64;
    fn sqrt(self) -> f64;
    fn tanh(self) -> f64;
    fn cosh(self) -> f64;
    fn atan(self) -> f64;
    fn powi(self, n: i32) -> f64;
    fn powf(self, e: f64) -> f64;
}

impl FloatExt for f64 {
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    fn ln(self) -> f64 {
        libm::log(self)
    }
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    fn tanh(self) -> f64 {
        libm::tanh(self)
    }
    fn cosh(self) -> f64 {
        libm::cosh(self)
    }
    fn atan(self) -> f64 {
        libm::atan(self)
    }
    fn powi(self, n: i32) -> f64 {
        libm::pow(self, n as f64)
    }
    fn powf(self, e: f64) -> f64 {
        libm::pow(self, e)
    }
}

/// log(sum exp(terms)) without overflow; returns -inf for an empty or
/// all -inf input.
pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for t in terms.clone() {
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for t in terms {
        sum += (t - max).exp();
    }
    max + sum.ln()
}

/// Trapezoid quadrature weights for a (possibly non-uniform) ascending grid.
pub(crate) fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = alloc::vec![0.0; n];
    for i in 0..n - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Second-order first derivative on a non-uniform grid: three-point central
/// differences in the interior, one-sided at the endpoints.
pub(crate) fn gradient(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let n = grid.len();
    debug_assert_eq!(values.len(), n);
    let mut out = alloc::vec![0.0; n];
    if n < 2 {
        return out;
    }
    for i in 1..n - 1 {
        let hl = grid[i] - grid[i - 1];
        let hr = grid[i + 1] - grid[i];
        // Non-uniform three-point formula, exact for quadratics.
        out[i] = (values[i + 1] * hl * hl - values[i - 1] * hr * hr
            + values[i] * (hr * hr - hl * hl))
            / (hl * hr * (hl + hr));
    }
    // One-sided second-order at the ends.
    {
        let h0 = grid[1] - grid[0];
        if n >= 3 {
            let h1 = grid[2] - grid[1];
            out[0] = -(2.0 * h0 + h1) / (h0 * (h0 + h1)) * values[0]
                + (h0 + h1) / (h0 * h1) * values[1]
                - h0 / (h1 * (h0 + h1)) * values[2];
            let hm = grid[n - 1] - grid[n - 2];
            let hmm = grid[n - 2] - grid[n - 3];
            out[n - 1] = (2.0 * hm + hmm) / (hm * (hm + hmm)) * values[n - 1]
                - (hm + hmm) / (hm * hmm) * values[n - 2]
                + hm / (hmm * (hm + hmm)) * values[n - 3];
        } else {
            out[0] = (values[1] - values[0]) / h0;
            out[1] = out[0];
        }
    }
    out
}

/// Second derivative by central differences (one-sided copies at the ends).
pub(crate) fn second_derivative(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut out = alloc::vec![0.0; n];
    for i in 1..n - 1 {
        let hl = grid[i] - grid[i - 1];
        let hr = grid[i + 1] - grid[i];
        out[i] = 2.0
            * (values[i - 1] * hr - values[i] * (hl + hr) + values[i + 1] * hl)
            / (hl * hr * (hl + hr));
    }
    if n >= 3 {
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    }
    out
}

/// Cumulative trapezoid integral starting at 0 on the first node.
pub(crate) fn cumulative_trapezoid(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut out = alloc::vec![0.0; n];
    let mut acc = 0.0;
    for i in 1..n {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
        out[i] = acc;
    }
    out
}

/// Piecewise-linear interpolation with constant extrapolation outside the grid.
pub(crate) fn interp_linear(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let n = grid.len();
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[n - 1] {
        return values[n - 1];
    }
    // binary search for the bracketing cell
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if grid[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = (x - grid[lo]) / (grid[hi] - grid[lo]);
    values[lo] + t * (values[hi] - values[lo])
}

/// Least-squares slope of y against x (order fits in refinement tests).
#[cfg(test)]
pub(crate) fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}
