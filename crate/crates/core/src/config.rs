//! Experiment configuration.
//!
//! ```toml
//! task = "clt"
//!
//! [model]
//! name = "cyclic-keep-switch"
//!
//! [environment]
//! kind = "iid"
//!
//! [seeds]
//! environment = 1
//! run = 7
//!
//! [run]
//! n_steps = 2000
//! n_trajectories = 5000
//! patterns = ["11", "11,22"]
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Seeds have no defaults: every run is reproducible from its config alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Disorder, InitialState};
use crate::zoo::{EnvironmentSpec, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Validate,
    Esp,
    Stationary,
    Forgetting,
    Clt,
    Couple,
    #[serde(alias = "full-report")]
    Report,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Validate => "validate",
            Task::Esp => "esp",
            Task::Stationary => "stationary",
            Task::Forgetting => "forgetting",
            Task::Clt => "clt",
            Task::Couple => "couple",
            Task::Report => "report",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub environment: u64,
    pub run: u64,
}

impl Seeds {
    pub fn both(seed: u64) -> Self {
        Self { environment: seed, run: seed }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisorderMode {
    Quenched,
    #[default]
    Annealed,
}

impl From<DisorderMode> for Disorder {
    fn from(m: DisorderMode) -> Self {
        match m {
            DisorderMode::Quenched => Disorder::Quenched,
            DisorderMode::Annealed => Disorder::Annealed,
        }
    }
}

/// Written as `"maximally-mixed"`, `"stationary"` or `{ basis = 0 }`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialSpec {
    #[default]
    MaximallyMixed,
    Stationary,
    Basis(usize),
}

impl InitialSpec {
    pub fn resolve(self) -> InitialState {
        match self {
            InitialSpec::MaximallyMixed => InitialState::MaximallyMixed,
            InitialSpec::Stationary => InitialState::Stationary,
            InitialSpec::Basis(i) => InitialState::Basis(i),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub n_steps: usize,
    pub n_trajectories: usize,
    /// Patterns in the model alphabet; empty means every single symbol.
    pub patterns: Vec<String>,
    pub disorder: DisorderMode,
    pub initial: InitialSpec,
    pub validate_envs: usize,
    pub esp_n_max: usize,
    pub esp_envs: usize,
    pub stationary_depth: usize,
    pub forgetting_n_max: usize,
    pub forgetting_envs: usize,
    pub coupling_runs: usize,
    pub coupling_blocks: usize,
    pub block_len: Option<usize>,
    pub lag_window: Option<usize>,
    pub batch_len: Option<usize>,
    pub threads: Option<usize>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            n_steps: 2000,
            n_trajectories: 1000,
            patterns: Vec::new(),
            disorder: DisorderMode::default(),
            initial: InitialSpec::default(),
            validate_envs: 1000,
            esp_n_max: 20,
            esp_envs: 5,
            stationary_depth: 4096,
            forgetting_n_max: 15,
            forgetting_envs: 2000,
            coupling_runs: 10_000,
            coupling_blocks: 60,
            block_len: None,
            lag_window: None,
            batch_len: None,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub stationary: f64,
    /// Significance level of the normality test.
    pub level: f64,
    /// Width, in standard errors, of Monte Carlo comparisons.
    pub sigmas: f64,
    /// Allowed relative gap between series and batch variance estimates.
    pub estimator_rel: f64,
    /// Allowed relative gap between `Var(S_n/√n)` and `Σ̂²`.
    pub variance_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { stationary: crate::tol::STATIONARY, level: 0.01, sigmas: 3.0, estimator_rel: 0.15, variance_rel: 0.10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: PathBuf::from("qtraj-out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelSpec,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    pub seeds: Seeds,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Output,
}

impl ExperimentConfig {
    pub fn new(task: Task, model: ModelSpec, seeds: Seeds) -> Self {
        Self {
            task,
            model,
            environment: EnvironmentSpec::default(),
            seeds,
            run: RunParams::default(),
            tolerances: Tolerances::default(),
            output: Output::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks that do not need the model to be built.
    pub fn check(&self) -> Result<()> {
        let r = &self.run;
        let positive = [
            ("run.n_steps", r.n_steps),
            ("run.n_trajectories", r.n_trajectories),
            ("run.validate_envs", r.validate_envs),
            ("run.esp_n_max", r.esp_n_max),
            ("run.esp_envs", r.esp_envs),
            ("run.forgetting_n_max", r.forgetting_n_max),
            ("run.forgetting_envs", r.forgetting_envs),
            ("run.coupling_runs", r.coupling_runs),
            ("run.coupling_blocks", r.coupling_blocks),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if r.stationary_depth < 2 {
            return Err(Error::Config("run.stationary_depth must be at least 2".into()));
        }
        if r.threads == Some(0) || r.block_len == Some(0) {
            return Err(Error::Config("run.threads and run.block_len must be positive".into()));
        }
        if r.n_steps < 2 {
            return Err(Error::Config("run.n_steps must be at least 2".into()));
        }
        let t = &self.tolerances;
        if !(t.level > 0.0 && t.level < 1.0) {
            return Err(Error::Config(format!("tolerances.level = {} outside (0, 1)", t.level)));
        }
        if [t.stationary, t.sigmas, t.estimator_rel, t.variance_rel].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
        task = "clt"
        [model]
        name = "cyclic-keep-switch"
        [seeds]
        environment = 1
        run = 7
        [run]
        n_steps = 2000
        n_trajectories = 5000
        patterns = ["11", "11,22"]
        initial = { basis = 1 }
    "#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(cfg.task, Task::Clt);
        assert_eq!(cfg.run.n_trajectories, 5000);
        assert_eq!(cfg.run.initial, InitialSpec::Basis(1));
        assert_eq!(cfg.environment, EnvironmentSpec::Iid);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seeds_are_mandatory() {
        let text = EXAMPLE.replace("[seeds]\n        environment = 1\n        run = 7", "");
        let e = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(e.to_string().contains("seeds"), "{e}");
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_config_errors() {
        let e = ExperimentConfig::from_toml_str(&EXAMPLE.replace("n_steps = 2000", "n_stepz = 2000")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = ExperimentConfig::from_toml_str(&EXAMPLE.replace("n_steps = 2000", "n_steps = 0")).unwrap_err();
        assert!(e.to_string().contains("n_steps"));
        let e = ExperimentConfig::from_toml_str(&EXAMPLE.replace("task = \"clt\"", "task = \"dance\"")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn full_report_alias() {
        let cfg = ExperimentConfig::from_toml_str(&EXAMPLE.replace("\"clt\"", "\"full-report\"")).unwrap();
        assert_eq!(cfg.task, Task::Report);
    }
}
