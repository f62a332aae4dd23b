//! Experiment orchestration and persistence: single runs, seed sweeps,
//! time-step refinement studies, the gain solver demo, and the invariant
//! verifier.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use fpf_core::density::uniform_grid;
use fpf_core::{bayes, fpf, gain, sim};
use fpf_core::{
    DensitySource, FpfRun, GridDensity, ObservationModel, ObservationPath, Prior, StepRecord,
    TrueState,
};

use crate::config::{observation_by_name, ConfigError, ScenarioFile};
use crate::LabError;

/// The pinned per-run CSV header.
pub const RUN_CSV_HEADER: &str =
    "step,t,z,h_hat,emp_mean,emp_var,ref_mean,ref_var,ks_dist,l1_dist,gain_flux_residual";

fn numeric(context: &str, e: fpf_core::Error) -> LabError {
    LabError::Numeric(format!("{context}: {e}"))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.t,
        r.z,
        r.h_hat,
        r.emp_mean,
        r.emp_var,
        r.ref_mean,
        r.ref_var,
        opt_cell(r.ks_dist),
        opt_cell(r.l1_dist),
        r.gain_flux_residual
    )
}

/// Hex SHA-256 of the canonical (serialized, defaults-filled) config.
pub fn config_hash(file: &ScenarioFile) -> String {
    let canonical = serde_json::to_string(file).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn write_manifest(file: &ScenarioFile, out_dir: &Path) -> Result<(), LabError> {
    let manifest = serde_json::json!({
        "config": file,
        "seed": file.seed,
        "config_hash": config_hash(file),
        "versions": {
            "fpf-core": env!("CARGO_PKG_VERSION"),
            "fpf-lab": env!("CARGO_PKG_VERSION"),
        },
    });
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| LabError::Io(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn write_density_csv(path: &Path, d: &GridDensity) -> Result<(), LabError> {
    let mut out = String::from("x,rho\n");
    for (&x, v) in d.grid().iter().zip(d.values()) {
        out.push_str(&format!("{x},{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs one scenario and persists `run.csv`, `manifest.json`, and density
/// snapshots (`density_<step>.csv`) under `out_dir`. Byte-identical outputs
/// for identical config and seed.
pub fn run_experiment(file: &ScenarioFile, out_dir: &Path) -> Result<FpfRun, LabError> {
    let scenario = file.to_scenario()?;
    let run = fpf::run_fpf(&scenario)
        .map_err(|e| numeric(&format!("run (seed {})", scenario.seed), e))?;

    fs::create_dir_all(out_dir)?;
    let mut csv = String::from(RUN_CSV_HEADER);
    csv.push('\n');
    for r in &run.records {
        csv.push_str(&record_row(r));
        csv.push('\n');
    }
    fs::write(out_dir.join("run.csv"), csv)?;
    write_manifest(file, out_dir)?;
    for (step, d) in &run.posteriors {
        write_density_csv(&out_dir.join(format!("density_{step:06}.csv")), d)?;
    }
    Ok(run)
}

/// Terminal metrics of one sweep member.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub seed: u64,
    pub h_hat: f64,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub ref_mean: f64,
    pub ref_var: f64,
    pub ks_dist: f64,
    pub l1_dist: f64,
}

impl SweepRow {
    fn metrics(&self) -> [f64; 7] {
        [
            self.h_hat,
            self.emp_mean,
            self.emp_var,
            self.ref_mean,
            self.ref_var,
            self.ks_dist,
            self.l1_dist,
        ]
    }
}

/// Runs the scenario once per seed and writes `sweep.csv`: one metric row
/// per seed plus a final `aggregate` row whose cells are `mean/sd`.
pub fn run_seed_sweep(
    file: &ScenarioFile,
    seeds: &[u64],
    out_path: &Path,
) -> Result<Vec<SweepRow>, LabError> {
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut member = file.clone();
        member.seed = seed;
        let scenario = member.to_scenario()?;
        let run = fpf::run_fpf(&scenario).map_err(|e| numeric(&format!("sweep seed {seed}"), e))?;
        let t = run.terminal();
        rows.push(SweepRow {
            seed,
            h_hat: t.h_hat,
            emp_mean: t.emp_mean,
            emp_var: t.emp_var,
            ref_mean: t.ref_mean,
            ref_var: t.ref_var,
            ks_dist: t.ks_dist.unwrap_or(f64::NAN),
            l1_dist: t.l1_dist.unwrap_or(f64::NAN),
        });
    }

    let mut csv =
        String::from("seed,h_hat,emp_mean,emp_var,ref_mean,ref_var,ks_dist,l1_dist\n");
    for r in &rows {
        let m = r.metrics();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.seed, m[0], m[1], m[2], m[3], m[4], m[5], m[6]
        ));
    }
    let n = rows.len() as f64;
    let mut agg = String::from("aggregate");
    for k in 0..7 {
        let mean = rows.iter().map(|r| r.metrics()[k]).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|r| (r.metrics()[k] - mean).powi(2))
            .sum::<f64>()
            / n;
        agg.push_str(&format!(",{}/{}", mean, var.sqrt()));
    }
    csv.push_str(&agg);
    csv.push('\n');
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out_path, csv)?;
    Ok(rows)
}

/// One level of a time-step refinement study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub level: usize,
    pub steps: usize,
    pub dt: f64,
    /// Sup over finest-path times and grid nodes of |rho_run/rho_ref - 1|,
    /// the reference being the exact posterior on the finest path.
    pub sup_rel_error: f64,
}

/// Delta-t halving study on a fixed Brownian observation path: each level
/// halves the step via bridge midpoints and reruns the time-stepping
/// recursion; the error is measured against the exact posterior on the
/// finest path.
pub fn run_convergence(
    file: &ScenarioFile,
    refinements: usize,
) -> Result<Vec<ConvergenceRow>, LabError> {
    let scenario = file.to_scenario()?;
    let grid = scenario.build_grid();
    let prior = scenario
        .prior
        .grid_density(&grid)
        .map_err(|e| numeric("prior density", e))?;
    let model = &scenario.model;
    let x0 = match scenario.true_state {
        TrueState::Value(v) => v,
        // the study holds the signal fixed; center it for sampled scenarios
        TrueState::Sample => scenario.prior.mean(),
    };

    let times = sim::uniform_times(scenario.horizon, scenario.steps);
    let x_path = sim::SignalPath::constant(x0, times).map_err(|e| numeric("signal", e))?;
    let mut paths = vec![sim::simulate_observation_path(&x_path, model, scenario.seed)];
    // one extra level beyond the reported ones serves as the reference, so
    // the finest reported row still carries a real error
    for _ in 0..=refinements {
        let next = paths.last().unwrap().refine_bridge(scenario.seed);
        paths.push(next);
    }
    let finest = paths.pop().unwrap();

    let mut rows = Vec::with_capacity(paths.len());
    for (level, path) in paths.iter().enumerate() {
        let run = bayes::run_time_stepping(&prior, path, model)
            .map_err(|e| numeric(&format!("refinement level {level}"), e))?;
        let err = interpolant_error(&run, &prior, &finest, model)?;
        rows.push(ConvergenceRow {
            level,
            steps: path.steps(),
            dt: scenario.horizon / path.steps() as f64,
            sup_rel_error: err,
        });
    }
    Ok(rows)
}

fn interpolant_error(
    run: &bayes::TimeSteppingRun,
    prior: &GridDensity,
    fine: &ObservationPath,
    model: &ObservationModel,
) -> Result<f64, LabError> {
    let mut worst = 0.0f64;
    for m in 0..fine.times().len() - 1 {
        let t = fine.times()[m];
        let z_span = fine.z_values()[m] - fine.z_values()[0];
        let truth = bayes::closed_form_posterior(prior, z_span, t, model)
            .map_err(|e| numeric("closed-form reference", e))?;
        let held = run.density_at(t);
        for (lh, lt) in held.log_values().iter().zip(truth.log_values()) {
            worst = worst.max(((lh - lt).exp() - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Parses a prior spec of the form `gaussian:MEAN,STD` or
/// `mixture:W,M,S;W,M,S;...`.
pub fn parse_prior_spec(spec: &str) -> Result<Prior, ConfigError> {
    let bad = |msg: &str| ConfigError::new("prior", msg.to_string());
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| bad("expected gaussian:MEAN,STD or mixture:W,M,S;..."))?;
    let nums = |s: &str| -> Result<Vec<f64>, ConfigError> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad("malformed number")))
            .collect()
    };
    match kind {
        "gaussian" => {
            let v = nums(rest)?;
            if v.len() != 2 || !(v[1] > 0.0) {
                return Err(bad("gaussian takes MEAN,STD with STD > 0"));
            }
            Ok(Prior::Gaussian { mean: v[0], std: v[1] })
        }
        "mixture" => {
            let mut comps = vec![];
            for part in rest.split(';') {
                let v = nums(part)?;
                if v.len() != 3 || !(v[0] > 0.0 && v[2] > 0.0) {
                    return Err(bad("each mixture component is W,M,S with W,S > 0"));
                }
                comps.push((v[0], v[1], v[2]));
            }
            if comps.is_empty() {
                return Err(bad("mixture needs at least one component"));
            }
            Ok(Prior::Mixture(comps))
        }
        other => Err(bad(&format!("unknown prior kind \"{other}\""))),
    }
}

/// Dumps the gain K(x) from all three solvers on a common grid as CSV.
pub fn gain_demo(
    prior_spec: &str,
    obs_name: &str,
    out: &mut impl Write,
) -> Result<(), LabError> {
    let prior = parse_prior_spec(prior_spec)?;
    let model = observation_by_name(obs_name)?;
    let grid = uniform_grid(
        prior.mean() - 8.0 * prior.std(),
        prior.mean() + 8.0 * prior.std(),
        1024,
    );
    let rho = prior.grid_density(&grid).map_err(|e| numeric("prior density", e))?;
    let exact = gain::solve_gain_exact_1d(&rho, &model).map_err(|e| numeric("exact1d", e))?;
    let fd = gain::solve_gain_weak_fd(&rho, &model).map_err(|e| numeric("fd", e))?;
    let basis = gain::default_basis(3, rho.mean(), rho.variance().sqrt());
    let galerkin = gain::solve_gain_galerkin(DensitySource::Grid(&rho), &model, basis, &grid)
        .map_err(|e| numeric("galerkin", e))?;

    writeln!(out, "x,exact1d,fd,galerkin").map_err(LabError::from)?;
    for (i, &x) in grid.iter().enumerate() {
        writeln!(
            out,
            "{x},{},{},{}",
            exact.gain()[i],
            fd.gain()[i],
            galerkin.gain_at(x)
        )
        .map_err(LabError::from)?;
    }
    Ok(())
}

/// Runs the invariant suite, printing one `ok`/`FAIL` line per check.
/// Returns whether everything passed.
pub fn verify(out: &mut impl Write) -> Result<bool, LabError> {
    let mut all_ok = true;
    let mut check = |name: &str, result: Result<(), String>, out: &mut dyn Write| {
        match result {
            Ok(()) => {
                let _ = writeln!(out, "ok   {name}");
            }
            Err(detail) => {
                all_ok = false;
                let _ = writeln!(out, "FAIL {name}: {detail}");
            }
        }
    };

    check("telescoping-exactness", check_telescoping(), out);
    check("jensen-minimizer", check_jensen(), out);
    check("gaussian-linear-gain", check_gaussian_gain(), out);
    check("poisson-energy-bounds", check_poisson_bounds(), out);
    check("exactness-identity", check_exactness(), out);
    check("likelihood-ratio-bound", check_ratio_bound(), out);
    check("run-determinism", check_determinism(), out);
    Ok(all_ok)
}

fn err_str(e: fpf_core::Error) -> String {
    e.to_string()
}

fn check_telescoping() -> Result<(), String> {
    let grid = uniform_grid(-8.0, 8.0, 512);
    let prior = GridDensity::gaussian(0.0, 1.0, &grid).map_err(err_str)?;
    let model = ObservationModel::tanh();
    let times = sim::uniform_times(0.5, 300);
    let x = sim::SignalPath::constant(0.4, times).map_err(err_str)?;
    let path = sim::simulate_observation_path(&x, &model, 11);
    let run = bayes::run_time_stepping(&prior, &path, &model).map_err(err_str)?;
    for (n, &t) in path.times().iter().enumerate() {
        let z_span = path.z_values()[n] - path.z_values()[0];
        let truth = bayes::closed_form_posterior(&prior, z_span, t, &model).map_err(err_str)?;
        let gap = run.densities()[n]
            .log_values()
            .iter()
            .zip(truth.log_values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if gap > 1e-9 {
            return Err(format!("log gap {gap:.3e} at step {n}"));
        }
    }
    Ok(())
}

fn check_jensen() -> Result<(), String> {
    let grid = uniform_grid(-8.0, 8.0, 512);
    let prev = GridDensity::gaussian(0.2, 1.1, &grid).map_err(err_str)?;
    let model = ObservationModel::tanh();
    let (y, dt) = (0.7, 0.05);
    let post = bayes::bayes_update(&prev, y * dt, dt, &model).map_err(err_str)?;
    let at_min = bayes::energy_functional(&post, &prev, y, dt, &model).map_err(err_str)?;
    for k in 1..=10 {
        let amp = 0.03 * k as f64;
        let logs: Vec<f64> = grid
            .iter()
            .zip(post.log_values())
            .map(|(&x, &lv)| lv + amp * (1.3 * x).sin())
            .collect();
        let cand = GridDensity::from_log_values(grid.clone(), logs)
            .map_err(err_str)?
            .normalize()
            .map_err(err_str)?;
        let energy = bayes::energy_functional(&cand, &prev, y, dt, &model).map_err(err_str)?;
        let gap = energy - at_min;
        let kl = cand.kl_divergence(&post).map_err(err_str)?;
        let rel = (gap - kl).abs() / at_min.abs().max(1.0);
        if rel > 1e-8 {
            return Err(format!("identity off by {rel:.3e} at amp {amp}"));
        }
    }
    Ok(())
}

fn check_gaussian_gain() -> Result<(), String> {
    // quadrature error goes like h^2 x^2, so hitting 1e-6 out at |x| = 4
    // needs a fine grid
    let grid = uniform_grid(-8.0, 8.0, 32768);
    let rho = GridDensity::gaussian(0.0, 1.0, &grid).map_err(err_str)?;
    let field = gain::solve_gain_exact_1d(&rho, &ObservationModel::linear()).map_err(err_str)?;
    for (i, &x) in grid.iter().enumerate() {
        if x.abs() <= 4.0 {
            let rel = (field.gain()[i] - 1.0).abs();
            if rel > 1e-6 {
                return Err(format!("K(x)={} at x={x}", field.gain()[i]));
            }
        }
    }
    Ok(())
}

fn check_poisson_bounds() -> Result<(), String> {
    let grid = uniform_grid(-8.0, 8.0, 1024);
    let model = ObservationModel::tanh();
    let gaussian = GridDensity::gaussian(0.0, 1.0, &grid).map_err(err_str)?;
    let bimodal =
        GridDensity::gaussian_mixture(&[(0.5, -1.0, 0.5), (0.5, 1.0, 0.5)], &grid)
            .map_err(err_str)?;
    for (name, rho, lambda) in [
        ("gaussian", &gaussian, 1.0),
        ("bimodal", &bimodal, gain::spectral_gap(&bimodal).map_err(err_str)?),
    ] {
        let field = gain::solve_gain_exact_1d(rho, &model).map_err(err_str)?;
        let report = gain::verify_poisson_bounds(&field, rho, &model, lambda).map_err(err_str)?;
        if !report.energy_ok || !report.hessian_ok {
            return Err(format!("{name}: {report:?}"));
        }
    }
    Ok(())
}

fn check_exactness() -> Result<(), String> {
    let grid = uniform_grid(-8.0, 8.0, 2048);
    let rho = GridDensity::gaussian(0.0, 1.0, &grid).map_err(err_str)?;
    let model = ObservationModel::linear();
    let field = gain::solve_gain_exact_1d(&rho, &model).map_err(err_str)?;
    let law = fpf::compute_control(&field, DensitySource::Grid(&rho), &model).map_err(err_str)?;
    let res = fpf_core::ks::exactness_identity_residual(&rho, &field, law.u(), &model)
        .map_err(err_str)?;
    if res.gain_equation > 1e-5 || res.control_equation > 1e-5 {
        return Err(format!("{res:?}"));
    }
    Ok(())
}

fn check_ratio_bound() -> Result<(), String> {
    let grid = uniform_grid(-8.0, 8.0, 256);
    let prior = GridDensity::gaussian(0.0, 1.0, &grid).map_err(err_str)?;
    let model = ObservationModel::tanh();
    let times = sim::uniform_times(0.5, 100);
    let x = sim::SignalPath::constant(0.3, times).map_err(err_str)?;
    let path = sim::simulate_observation_path(&x, &model, 29);
    let run = bayes::run_time_stepping(&prior, &path, &model).map_err(err_str)?;
    let margin = run.ratio_bound_margin(&model);
    if margin > 1e-9 {
        return Err(format!("margin {margin:.3e}"));
    }
    Ok(())
}

fn check_determinism() -> Result<(), String> {
    let make = || fpf_core::ScenarioConfig {
        prior: Prior::Gaussian { mean: 0.0, std: 1.0 },
        model: ObservationModel::tanh(),
        true_state: TrueState::Sample,
        horizon: 0.1,
        steps: 20,
        particles: 200,
        solver: fpf_core::GainSolverChoice::Galerkin { degree: 2 },
        mode: fpf_core::FilterMode::Algorithmic,
        seed: 3,
        grid_nodes: 256,
        grid_half_width: 8.0,
        dist_stride: 5,
        posterior_stride: 0,
    };
    let a = fpf::run_fpf(&make()).map_err(err_str)?;
    let b = fpf::run_fpf(&make()).map_err(err_str)?;
    if a.records != b.records {
        return Err("records differ across identical runs".into());
    }
    Ok(())
}
