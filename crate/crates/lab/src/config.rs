//! JSON scenario files: schema, defaults, validation, and the mapping onto
//! the core `ScenarioConfig`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fpf_core::{FilterMode, GainSolverChoice, ObservationModel, Prior, ScenarioConfig, TrueState};

/// A configuration problem, pinned to the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian { mean: f64, std: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Either a fixed real state or the word "sample" (draw from the prior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrueStateSpec {
    Value(f64),
    Named(String),
}

fn default_true_state() -> TrueStateSpec {
    TrueStateSpec::Named("sample".to_string())
}

/// Either a bare solver name ("exact1d", "fd", "galerkin") or
/// `{"galerkin": {"degree": d}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SolverSpec {
    Name(String),
    Detailed { galerkin: GalerkinSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalerkinSpec {
    pub degree: u32,
}

fn default_solver() -> SolverSpec {
    SolverSpec::Detailed {
        galerkin: GalerkinSpec { degree: 3 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_grid_nodes")]
    pub nodes: usize,
    /// Half-width of the grid in prior standard deviations.
    #[serde(default = "default_grid_half_width")]
    pub half_width: f64,
}

fn default_grid_nodes() -> usize {
    512
}

fn default_grid_half_width() -> f64 {
    8.0
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nodes: default_grid_nodes(),
            half_width: default_grid_half_width(),
        }
    }
}

fn default_mode() -> String {
    "algorithmic".to_string()
}

/// The on-disk scenario schema. Unknown keys are rejected; optional fields
/// get the documented defaults (gain_solver: galerkin degree 3, mode:
/// algorithmic, true_state: "sample", grid: 512 nodes spanning 8 prior
/// standard deviations, dist_stride: steps/20, posterior_stride: terminal
/// only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub prior: PriorSpec,
    pub observation: String,
    #[serde(default = "default_true_state")]
    pub true_state: TrueStateSpec,
    pub horizon: f64,
    pub steps: usize,
    pub particles: usize,
    #[serde(default = "default_solver")]
    pub gain_solver: SolverSpec,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Stride (in steps) for the KS/L1 distance columns; the terminal step
    /// is always evaluated.
    #[serde(default)]
    pub dist_stride: Option<usize>,
    /// Stride for density snapshot files; the terminal posterior is always
    /// written.
    #[serde(default)]
    pub posterior_stride: Option<usize>,
}

impl ScenarioFile {
    /// Fills the step-dependent defaults so a loaded config serializes with
    /// every knob explicit.
    pub fn fill_defaults(&mut self) {
        if self.dist_stride.is_none() {
            self.dist_stride = Some((self.steps / 20).max(1));
        }
        if self.posterior_stride.is_none() {
            self.posterior_stride = Some(0);
        }
    }

    /// Validates and converts to the core scenario type.
    pub fn to_scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let prior = match &self.prior {
            PriorSpec::Gaussian { mean, std } => {
                if !(std.is_finite() && *std > 0.0) || !mean.is_finite() {
                    return Err(ConfigError::new("prior", "gaussian needs finite mean, std > 0"));
                }
                Prior::Gaussian {
                    mean: *mean,
                    std: *std,
                }
            }
            PriorSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(ConfigError::new("prior", "mixture needs at least one component"));
                }
                for c in components {
                    if !(c.weight > 0.0 && c.std > 0.0 && c.mean.is_finite()) {
                        return Err(ConfigError::new(
                            "prior",
                            "each mixture component needs weight > 0, std > 0",
                        ));
                    }
                }
                Prior::Mixture(components.iter().map(|c| (c.weight, c.mean, c.std)).collect())
            }
        };

        let model = observation_by_name(&self.observation)?;

        let true_state = match &self.true_state {
            TrueStateSpec::Value(v) if v.is_finite() => TrueState::Value(*v),
            TrueStateSpec::Value(_) => {
                return Err(ConfigError::new("true_state", "must be finite"));
            }
            TrueStateSpec::Named(w) if w == "sample" => TrueState::Sample,
            TrueStateSpec::Named(w) => {
                return Err(ConfigError::new(
                    "true_state",
                    format!("expected a number or \"sample\", got \"{w}\""),
                ));
            }
        };

        let solver = match &self.gain_solver {
            SolverSpec::Name(name) => match name.as_str() {
                "exact1d" => GainSolverChoice::Exact1d,
                "fd" => GainSolverChoice::WeakFd,
                "galerkin" => GainSolverChoice::Galerkin { degree: 3 },
                other => {
                    return Err(ConfigError::new(
                        "gain_solver",
                        format!("unknown solver \"{other}\" (exact1d, fd, galerkin)"),
                    ));
                }
            },
            SolverSpec::Detailed { galerkin } => {
                if !(1..=8).contains(&galerkin.degree) {
                    return Err(ConfigError::new(
                        "gain_solver",
                        "galerkin degree must be between 1 and 8",
                    ));
                }
                GainSolverChoice::Galerkin {
                    degree: galerkin.degree,
                }
            }
        };

        let mode = match self.mode.as_str() {
            "algorithmic" => FilterMode::Algorithmic,
            "oracle" => FilterMode::Oracle,
            other => {
                return Err(ConfigError::new(
                    "mode",
                    format!("expected \"algorithmic\" or \"oracle\", got \"{other}\""),
                ));
            }
        };

        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::new("horizon", "must be > 0"));
        }
        if self.steps == 0 {
            return Err(ConfigError::new("steps", "must be >= 1"));
        }
        if self.particles < 2 {
            return Err(ConfigError::new("particles", "need at least 2 particles"));
        }
        if self.grid.nodes < 128 {
            return Err(ConfigError::new("grid", "nodes must be >= 128"));
        }
        if !(self.grid.half_width.is_finite() && self.grid.half_width > 0.0) {
            return Err(ConfigError::new("grid", "half_width must be > 0"));
        }

        Ok(ScenarioConfig {
            prior,
            model,
            true_state,
            horizon: self.horizon,
            steps: self.steps,
            particles: self.particles,
            solver,
            mode,
            seed: self.seed,
            grid_nodes: self.grid.nodes,
            grid_half_width: self.grid.half_width,
            dist_stride: self.dist_stride.unwrap_or_else(|| (self.steps / 20).max(1)),
            posterior_stride: self.posterior_stride.unwrap_or(0),
        })
    }
}

/// The named observation functions. "linear" sits outside the bounded-h
/// assumptions but is kept for Kalman cross-checks.
pub fn observation_by_name(name: &str) -> Result<ObservationModel, ConfigError> {
    match name {
        "linear" => Ok(ObservationModel::linear()),
        "tanh" => Ok(ObservationModel::tanh()),
        "atan" => Ok(ObservationModel::atan()),
        other => Err(ConfigError::new(
            "observation",
            format!("unknown observation function \"{other}\" (linear, tanh, atan)"),
        )),
    }
}

fn serde_field(e: &serde_json::Error) -> String {
    // serde_json spells field problems as ... field `name` ...; fall back
    // to the whole config when the message has no backticked name.
    let msg = e.to_string();
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

/// Parses a scenario from a JSON string, fills defaults, and validates.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ConfigError> {
    let mut file: ScenarioFile = serde_json::from_str(text)
        .map_err(|e| ConfigError::new(&serde_field(&e), e.to_string()))?;
    file.fill_defaults();
    file.to_scenario()?;
    Ok(file)
}

/// Loads a scenario file from disk.
pub fn load_scenario(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("scenario", format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "prior": {"type": "gaussian", "mean": 0.0, "std": 1.0},
        "observation": "tanh",
        "horizon": 1.0,
        "steps": 1000,
        "particles": 5000,
        "seed": 7
    }"#;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let file = parse_scenario(MINIMAL).unwrap();
        assert_eq!(file.mode, "algorithmic");
        assert_eq!(file.true_state, TrueStateSpec::Named("sample".into()));
        assert_eq!(file.grid.nodes, 512);
        assert_eq!(file.grid.half_width, 8.0);
        assert_eq!(file.dist_stride, Some(50));
        assert_eq!(file.posterior_stride, Some(0));
        let scenario = file.to_scenario().unwrap();
        assert_eq!(scenario.solver, GainSolverChoice::Galerkin { degree: 3 });
        assert_eq!(scenario.mode, FilterMode::Algorithmic);
    }

    #[test]
    fn zero_steps_is_a_steps_error() {
        let text = MINIMAL.replace("\"steps\": 1000", "\"steps\": 0");
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.field, "steps");
    }

    #[test]
    fn missing_field_error_names_the_field() {
        let text = MINIMAL.replace("\"horizon\": 1.0,", "");
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.field, "horizon");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"bogus\": 1");
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.field, "bogus");
    }

    #[test]
    fn unknown_observation_name_is_rejected() {
        let text = MINIMAL.replace("\"tanh\"", "\"cosine\"");
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.field, "observation");
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let file = parse_scenario(MINIMAL).unwrap();
        let text = serde_json::to_string_pretty(&file).unwrap();
        let again = parse_scenario(&text).unwrap();
        assert_eq!(file, again);
    }

    #[test]
    fn detailed_galerkin_and_named_solvers_parse() {
        for (spec, want) in [
            ("\"exact1d\"", GainSolverChoice::Exact1d),
            ("\"fd\"", GainSolverChoice::WeakFd),
            ("\"galerkin\"", GainSolverChoice::Galerkin { degree: 3 }),
            (
                "{\"galerkin\": {\"degree\": 2}}",
                GainSolverChoice::Galerkin { degree: 2 },
            ),
        ] {
            let text = MINIMAL.replace(
                "\"seed\": 7",
                &format!("\"seed\": 7, \"gain_solver\": {spec}"),
            );
            let file = parse_scenario(&text).unwrap();
            assert_eq!(file.to_scenario().unwrap().solver, want);
        }
    }

    #[test]
    fn mixture_prior_parses() {
        let text = MINIMAL.replace(
            "{\"type\": \"gaussian\", \"mean\": 0.0, \"std\": 1.0}",
            "{\"type\": \"mixture\", \"components\": [
                {\"weight\": 0.5, \"mean\": -1.0, \"std\": 0.5},
                {\"weight\": 0.5, \"mean\": 1.0, \"std\": 0.5}
            ]}",
        );
        let scenario = parse_scenario(&text).unwrap().to_scenario().unwrap();
        assert_eq!(
            scenario.prior,
            Prior::Mixture(vec![(0.5, -1.0, 0.5), (0.5, 1.0, 0.5)])
        );
    }
}
