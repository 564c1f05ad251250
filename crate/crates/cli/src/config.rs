//! TOML experiment configuration. Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Stationary,
    Classify,
    Evolve,
    Compare,
    Hormander,
    Population,
    Experiment,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Stationary => "stationary",
            Command::Classify => "classify",
            Command::Evolve => "evolve",
            Command::Compare => "compare",
            Command::Hormander => "hormander",
            Command::Population => "population",
            Command::Experiment => "experiment",
        }
    }
}

/// A parameter is a number or an expression in `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x: Vec<f64>,
    #[serde(default)]
    pub regime: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationConfig {
    /// Fraction of the horizon discarded before sampling.
    #[serde(default = "half")]
    pub burn_in_fraction: f64,
    /// Sampling interval after burn-in.
    pub step: f64,
    #[serde(default)]
    pub coord: usize,
}

fn half() -> f64 {
    0.5
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub horizon: f64,
    #[serde(default = "one")]
    pub n_paths: usize,
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
    /// Write every segment and jump of every path.
    #[serde(default)]
    pub trajectories: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<OccupationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_budget: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default)]
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Run to steady state with this tolerance, `t_end` acting as `t_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Interval between steady-state checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<f64>,
    /// Age cells of the two-phase solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_age: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
    /// Initial density per regime; normalised to unit total mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<Param>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    Stationary,
    Evolve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub against: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HormanderConfig {
    pub points: Vec<Vec<f64>>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_rank_tol")]
    pub tol: f64,
    /// Scalar vector fields in `x` replacing those of the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<String>>,
}

fn default_depth() -> usize {
    3
}

fn default_rank_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub horizon: f64,
    pub initial: Vec<f64>,
    #[serde(default = "one")]
    pub n_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
    /// Write the per-event log; off for large ensembles.
    #[serde(default = "yes")]
    pub events: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    DwellTime,
    GeneStationarity,
    LongTime,
    TwoPhaseRecursion,
    DensitySuite,
    Convergence,
    HormanderInvariance,
    Reproducibility,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_sweep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_sizes: Option<Vec<usize>>,
    /// Cells of the Monte Carlo histogram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram_bins: Option<usize>,
    /// Decay rate `μ` of the linear test flow `x' = −μx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// `dt·max|g|/h` used by the convergence study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub courant: Option<f64>,
    /// Configs re-run by the reproducibility experiment, relative to this file.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub configs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde_l1_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_mass_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_defect_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hormander: Option<HormanderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    /// Directory of the file this config was read from.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            CliError::Config { key: offending_key(&message), message }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn section<'a, T>(&self, name: &str, s: &'a Option<T>) -> Result<&'a T, CliError> {
        s.as_ref().ok_or_else(|| CliError::config(name, format!("section [{name}] is required by `{}`", self.command.name())))
    }

    pub fn model(&self) -> Result<&ModelConfig, CliError> {
        self.section("model", &self.model)
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds.clone().unwrap_or_default()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Field name quoted in a serde message such as "unknown field `foo`".
fn offending_key(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
# gene expression, compare against the closed form
command = "compare"
seed = 42
output = "out/gene"

[model]
name = "gene_expression"
params = { P = 1.0, mu = 1.0, q0 = "1 + x", q1 = 1 }

[simulate]
horizon = 1e4
n_paths = 2
initial = { x = [0.5], regime = 1 }
snapshot_times = [1.0, 2.5]
occupation = { burn_in_fraction = 0.5, step = 0.25 }

[grid]
n = 64
x_max = 1.0
dt = 0.001
t_end = 50.0
tol = 1e-8
initial = ["1", "0"]

[compare]
against = "stationary"

[thresholds]
l1_max = 0.03
"#;

    #[test]
    fn parses_full_config() {
        let cfg = Config::parse(FULL).unwrap();
        assert_eq!(cfg.command, Command::Compare);
        assert_eq!(cfg.seed, 42);
        let m = cfg.model().unwrap();
        assert_eq!(m.params["q0"], Param::Text("1 + x".into()));
        assert_eq!(m.params["q1"], Param::Number(1.0));
        assert_eq!(cfg.simulate.as_ref().unwrap().initial.regime, 1);
        assert_eq!(cfg.thresholds().l1_max, Some(0.03));
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = Config::parse(FULL).unwrap();
        let again = Config::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml(), again.to_toml());
    }

    #[test]
    fn float_bits_survive_round_trip() {
        let v: f64 = 0.1 + 0.2;
        let text = format!("command = \"classify\"\n[model]\nname = \"gene_expression\"\nparams = {{ P = {v:?} }}\n");
        let cfg = Config::parse(&text).unwrap();
        let again = Config::parse(&cfg.to_toml()).unwrap();
        match &again.model.unwrap().params["P"] {
            Param::Number(p) => assert_eq!(p.to_bits(), v.to_bits()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = Config::parse("command = \"classify\"\nsede = 3\n").unwrap_err();
        match err {
            CliError::Config { key, .. } => assert_eq!(key.as_deref(), Some("sede")),
            other => panic!("{other:?}"),
        }
        let nested = "command = \"simulate\"\n[simulate]\nhorizon = 1.0\ninitial = { x = [0.0] }\nhorizn = 2.0\n";
        assert!(matches!(Config::parse(nested), Err(CliError::Config { .. })));
    }

    #[test]
    fn missing_section_names_it() {
        let cfg = Config::parse("command = \"classify\"\n").unwrap();
        match cfg.model() {
            Err(CliError::Config { key, .. }) => assert_eq!(key.as_deref(), Some("model")),
            other => panic!("{other:?}"),
        }
    }
}
