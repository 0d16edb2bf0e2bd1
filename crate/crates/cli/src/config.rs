//! Experiment configuration files.
//!
//! A configuration is a TOML document with a `config-version` key and
//! optional sections. Relative network paths resolve against the directory
//! of the configuration file. The full grammar with defaults is in
//! `configs/README.md`.

use std::path::{Path, PathBuf};

use gridtune::probetune::{AdamOptions, InnerOptions, ProblemSettings, TuneOptions};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Config {
    pub config_version: u32,
    pub network: Option<NetworkSection>,
    pub initial_gains: Option<InitialGains>,
    #[serde(default)]
    pub scenarios: ScenarioSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub distance: DistanceSection,
    pub simulate: Option<SimulateSection>,
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// System and specification network description files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NetworkSection {
    pub system: PathBuf,
    pub specification: PathBuf,
}

/// Uniform draw of the tunable gain at every bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GainDraw {
    pub seed: u64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct InitialGains {
    pub system: Option<GainDraw>,
    pub specification: Option<GainDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub seed: u64,
    pub count: usize,
    pub sigma: f64,
    /// Candidate buses; empty means every bus.
    pub buses: Vec<usize>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection { seed: 0, count: 10, sigma: 0.1, buses: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SimulationSection {
    pub horizon: f64,
    pub samples: usize,
    pub step: f64,
    pub tunable: String,
    pub output: String,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = ProblemSettings::default();
        SimulationSection { horizon: d.horizon, samples: d.samples, step: d.step, tunable: d.tunable, output: d.output }
    }
}

impl SimulationSection {
    pub fn settings(&self) -> ProblemSettings {
        ProblemSettings {
            horizon: self.horizon,
            samples: self.samples,
            step: self.step,
            tunable: self.tunable.clone(),
            output: self.output.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct TuningSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub window: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub log_scale: bool,
}

impl Default for TuningSection {
    fn default() -> Self {
        let d = TuneOptions::default();
        TuningSection {
            lr: d.adam.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            max_iters: d.max_iters,
            window: d.window,
            rel_tol: d.rel_tol,
            grad_tol: d.grad_tol,
            log_scale: d.log_scale,
        }
    }
}

impl TuningSection {
    pub fn options(&self) -> TuneOptions {
        TuneOptions {
            adam: AdamOptions { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            max_iters: self.max_iters,
            window: self.window,
            rel_tol: self.rel_tol,
            grad_tol: self.grad_tol,
            log_scale: self.log_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct DistanceSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub patience: usize,
    pub min_lr_ratio: f64,
    pub log_scale: bool,
}

impl Default for DistanceSection {
    fn default() -> Self {
        let d = InnerOptions::default();
        DistanceSection {
            lr: d.adam.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            max_iters: d.max_iters,
            grad_tol: d.grad_tol,
            patience: d.patience,
            min_lr_ratio: d.min_lr_ratio,
            log_scale: d.log_scale,
        }
    }
}

impl DistanceSection {
    pub fn options(&self) -> InnerOptions {
        InnerOptions {
            adam: AdamOptions { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            patience: self.patience,
            min_lr_ratio: self.min_lr_ratio,
            log_scale: self.log_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LabeledNetwork {
    pub label: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Disturbance {
    pub bus: usize,
    pub delta_p: f64,
    #[serde(default)]
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    Rk4,
    Dopri45,
    Trapezoid,
}

fn default_method() -> SolverMethod {
    SolverMethod::Dopri45
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateSection {
    pub networks: Vec<LabeledNetwork>,
    pub disturbance: Option<Disturbance>,
    #[serde(default = "default_method")]
    pub method: SolverMethod,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
}

/// Load step for `compare`, applied at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CompareDisturbance {
    pub bus: usize,
    pub delta_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CompareSection {
    pub disturbance: Option<CompareDisturbance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be nonnegative and finite, got {v}")))
    }
}

fn unit_open(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie strictly between 0 and 1, got {v}")))
    }
}

impl Config {
    pub fn from_toml(src: &str) -> Result<Config, CliError> {
        let c: Config = toml::from_str(src).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&src)
    }

    /// Field checks that need no network. Bus ids are checked once the
    /// networks are loaded.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.config_version != CONFIG_VERSION {
            return Err(invalid(
                "config-version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.config_version),
            ));
        }
        let s = &self.simulation;
        positive("simulation.horizon", s.horizon)?;
        positive("simulation.step", s.step)?;
        if s.step > s.horizon {
            return Err(invalid("simulation.step", format!("must not exceed the horizon {}", s.horizon)));
        }
        if s.samples < 2 {
            return Err(invalid("simulation.samples", format!("must be at least 2, got {}", s.samples)));
        }
        let sc = &self.scenarios;
        if sc.count == 0 {
            return Err(invalid("scenarios.count", "must be at least 1"));
        }
        positive("scenarios.sigma", sc.sigma)?;
        if sc.buses.contains(&0) {
            return Err(invalid("scenarios.buses", "bus ids start at 1"));
        }
        let t = &self.tuning;
        positive("tuning.lr", t.lr)?;
        unit_open("tuning.beta1", t.beta1)?;
        unit_open("tuning.beta2", t.beta2)?;
        positive("tuning.eps", t.eps)?;
        nonnegative("tuning.rel-tol", t.rel_tol)?;
        nonnegative("tuning.grad-tol", t.grad_tol)?;
        if t.window == 0 {
            return Err(invalid("tuning.window", "must be at least 1"));
        }
        let d = &self.distance;
        positive("distance.lr", d.lr)?;
        unit_open("distance.beta1", d.beta1)?;
        unit_open("distance.beta2", d.beta2)?;
        positive("distance.eps", d.eps)?;
        nonnegative("distance.grad-tol", d.grad_tol)?;
        unit_open("distance.min-lr-ratio", d.min_lr_ratio)?;
        if d.patience == 0 {
            return Err(invalid("distance.patience", "must be at least 1"));
        }
        if let Some(g) = &self.initial_gains {
            for (name, draw) in [("system", g.system), ("specification", g.specification)] {
                if let Some(draw) = draw {
                    let field = format!("initial-gains.{name}");
                    nonnegative(&format!("{field}.low"), draw.low)?;
                    if !(draw.high > draw.low && draw.high.is_finite()) {
                        return Err(invalid(&format!("{field}.high"), format!("must exceed low = {}", draw.low)));
                    }
                }
            }
        }
        if let Some(sim) = &self.simulate {
            if sim.networks.is_empty() {
                return Err(invalid("simulate.networks", "must list at least one network"));
            }
            positive("simulate.rel-tol", sim.rel_tol)?;
            positive("simulate.abs-tol", sim.abs_tol)?;
            if let Some(dist) = sim.disturbance {
                if !dist.delta_p.is_finite() {
                    return Err(invalid("simulate.disturbance.delta-p", "must be finite"));
                }
                if !(dist.time >= 0.0 && dist.time < s.horizon) {
                    return Err(invalid("simulate.disturbance.time", format!("must lie in [0, {})", s.horizon)));
                }
            }
        }
        if let Some(CompareSection { disturbance: Some(d) }) = self.compare {
            if !d.delta_p.is_finite() {
                return Err(invalid("compare.disturbance.delta-p", "must be finite"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(src: &str) -> String {
        match Config::from_toml(src) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = Config::from_toml("config-version = 1").unwrap();
        assert_eq!(c.simulation.horizon, 30.0);
        assert_eq!(c.simulation.samples, 100);
        assert_eq!(c.scenarios.count, 10);
        assert_eq!(c.tuning.options(), TuneOptions::default());
        assert_eq!(c.distance.options(), InnerOptions::default());
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn round_trip() {
        let src = "config-version = 1\n[network]\nsystem = \"a.toml\"\nspecification = \"b.toml\"\n\
                   [scenarios]\nseed = 4\ncount = 3\nbuses = [1, 2]\n\
                   [simulate]\nnetworks = [{ label = \"x\", file = \"a.toml\" }]\n\
                   disturbance = { bus = 1, delta-p = -0.1, time = 1.0 }\nmethod = \"rk4\"\n";
        let c = Config::from_toml(src).unwrap();
        assert_eq!(Config::from_toml(&toml::to_string(&c).unwrap()).unwrap(), c);
        assert_eq!(c.simulate.unwrap().method, SolverMethod::Rk4);
    }

    #[test]
    fn field_specific_messages() {
        assert!(err("config-version = 2").starts_with("config-version"));
        assert!(err("config-version = 1\n[simulation]\nhorizon = -1.0").starts_with("simulation.horizon"));
        assert!(err("config-version = 1\n[simulation]\nsamples = 1").starts_with("simulation.samples"));
        assert!(err("config-version = 1\n[scenarios]\ncount = 0").starts_with("scenarios.count"));
        assert!(err("config-version = 1\n[scenarios]\nsigma = 0.0").starts_with("scenarios.sigma"));
        assert!(err("config-version = 1\n[tuning]\nbeta2 = 1.0").starts_with("tuning.beta2"));
        assert!(err("config-version = 1\n[initial-gains]\nsystem = { seed = 1, low = 1.0, high = 0.5 }")
            .starts_with("initial-gains.system.high"));
        assert!(err("config-version = 1\n[simulate]\nnetworks = []").starts_with("simulate.networks"));
        assert!(err("config-version = 1\n[tuning]\nlearning-rate = 1.0").contains("unknown field"));
    }
}
