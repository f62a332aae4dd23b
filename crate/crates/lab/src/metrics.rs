//! Distribution comparison between a particle ensemble and a grid reference.

use fpf_core::{density, fpf, GridDensity, ParticleEnsemble};

fn trapezoid_l1_weights(grid: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; grid.len()];
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Signed moment errors plus the KS and KDE-smoothed L1 distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport {
    pub ks_distance: f64,
    pub l1_after_kde: f64,
    /// Empirical mean minus reference mean.
    pub mean_error: f64,
    /// Empirical variance minus reference variance.
    pub var_error: f64,
}

/// Compares an ensemble against a normalized grid density. KS distance is
/// the sup gap between the empirical CDF (both step sides) and the grid
/// CDF; moment errors are signed.
pub fn compare_distributions(
    sample: &ParticleEnsemble,
    reference: &GridDensity,
) -> fpf_core::Result<DistanceReport> {
    // a degenerate sample has zero Silverman bandwidth; fall back to the
    // grid spacing so the KDE still exists
    let l1 = match fpf::l1_after_kde(sample, reference) {
        Ok(v) => v,
        Err(fpf_core::Error::BadBandwidth) => {
            let grid = reference.grid();
            let bw = (grid[1] - grid[0]).max(f64::MIN_POSITIVE);
            let kde = density::kde_estimate(sample, bw, grid)?;
            let w = trapezoid_l1_weights(grid);
            kde.values()
                .iter()
                .zip(reference.values())
                .zip(&w)
                .map(|((&a, b), &wi)| wi * (a - b).abs())
                .sum()
        }
        Err(e) => return Err(e),
    };
    Ok(DistanceReport {
        ks_distance: fpf::ks_distance(sample, reference),
        l1_after_kde: l1,
        mean_error: sample.mean() - reference.mean(),
        var_error: sample.variance() - reference.variance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fpf_core::density::uniform_grid;
    use fpf_core::sim;
    use fpf_core::Prior;

    #[test]
    fn iid_sample_passes_kolmogorov_band() {
        // D_n < 1.63/sqrt(n) is the 99% Kolmogorov quantile; allow the
        // usual failure rate over seeds.
        let grid = uniform_grid(-8.0, 8.0, 4096);
        let rho = GridDensity::gaussian(0.0, 1.0, &grid).unwrap();
        let n = 10_000;
        let band = 1.63 / (n as f64).sqrt();
        let mut hits = 0;
        let seeds = 20;
        for seed in 0..seeds {
            let e = sim::sample_prior(&Prior::Gaussian { mean: 0.0, std: 1.0 }, n, 400 + seed)
                .unwrap();
            let report = compare_distributions(&e, &rho).unwrap();
            assert!(report.ks_distance >= 0.0 && report.ks_distance <= 1.0);
            if report.ks_distance < band {
                hits += 1;
            }
        }
        assert!(hits >= seeds - 1, "only {hits}/{seeds} inside the 99% band");
    }

    #[test]
    fn degenerate_sample_at_median_scores_half() {
        let grid = uniform_grid(-8.0, 8.0, 4096);
        let rho = GridDensity::gaussian(0.0, 1.0, &grid).unwrap();
        let e = ParticleEnsemble::new(vec![0.0; 64]).unwrap();
        let report = compare_distributions(&e, &rho).unwrap();
        assert!((report.ks_distance - 0.5).abs() < 0.01);
        assert!((report.mean_error - 0.0).abs() < 1e-12);
        assert!((report.var_error + 1.0).abs() < 1e-3);
    }

    #[test]
    fn quantile_points_score_near_zero() {
        let grid = uniform_grid(-8.0, 8.0, 4096);
        let rho = GridDensity::gaussian(0.3, 0.9, &grid).unwrap();
        let cdf = rho.cdf();
        let n = 500;
        let q: Vec<f64> = (0..n)
            .map(|i| sim::inverse_cdf(&grid, &cdf, (i as f64 + 0.5) / n as f64))
            .collect();
        let e = ParticleEnsemble::new(q).unwrap();
        let report = compare_distributions(&e, &rho).unwrap();
        assert!(report.ks_distance <= 1.0 / n as f64 + 0.005);
    }
}
