//! Experiment configuration files.
//!
//! A config is a TOML document with a few common keys and exactly one section
//! naming the experiment kind. Parsing is strict: unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{Model, NormalizationScheme};
use crate::integrate::{IntegratorSpec, Method, RescaleMode};

fn default_tau() -> f64 {
    0.999
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed; replicate `r` uses `seed + r` unless `seeds` is given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Synchronization threshold on pairwise inner products.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equiangular: Option<EquiangularConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longcontext: Option<LongContextConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<ModesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy: Option<NoisyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staircase: Option<StaircaseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<NormsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateConfig>,
}

/// Overrides for the integrator; unset keys take per-experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rotation_per_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Sweep,
    Equiangular,
    Longcontext,
    Modes,
    Noisy,
    Staircase,
    Norms,
    Validate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Equiangular => "equiangular",
            ExperimentKind::Longcontext => "longcontext",
            ExperimentKind::Modes => "modes",
            ExperimentKind::Noisy => "noisy",
            ExperimentKind::Staircase => "staircase",
            ExperimentKind::Norms => "norms",
            ExperimentKind::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Uniform,
    Equiangular,
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    #[default]
    None,
    Diagnostics,
    Full,
}

fn default_model() -> Model {
    Model::Sa
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_model")]
    pub model: Model,
    pub beta: f64,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub d: usize,
    pub horizon: f64,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<NormalizationScheme>,
    /// Switches to the noisy flow with this inverse noise strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Switches to SA in rescaled time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescale: Option<RescaleMode>,
    #[serde(default)]
    pub snapshots: SnapshotMode,
}

fn default_t_points() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_model")]
    pub model: Model,
    pub n: usize,
    pub d: usize,
    pub betas: Vec<f64>,
    /// Time grid `linspace(0, t_max, t_points)` unless `times` is given.
    pub t_max: f64,
    #[serde(default = "default_t_points")]
    pub t_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl SweepConfig {
    pub fn time_grid(&self) -> Vec<f64> {
        match &self.times {
            Some(t) => t.clone(),
            None => linspace(0.0, self.t_max, self.t_points),
        }
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn default_eq_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquiangularConfig {
    #[serde(default = "default_model")]
    pub model: Model,
    pub n: usize,
    pub beta: f64,
    #[serde(default)]
    pub rho0: f64,
    pub t_final: f64,
    #[serde(default = "default_eq_points")]
    pub t_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongContextConfig {
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    pub n: usize,
    pub betas: Vec<f64>,
}

fn default_noisy_n() -> usize {
    2000
}
fn default_two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyConfig {
    #[serde(default = "default_noisy_n")]
    pub n: usize,
    #[serde(default = "default_two")]
    pub d: usize,
    #[serde(default)]
    pub beta: f64,
    pub kappas: Vec<f64>,
    pub horizon: f64,
    /// Averaging starts here.
    pub burn_in: f64,
}

fn default_window_fraction() -> f64 {
    0.05
}
fn default_rel_threshold() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseConfig {
    pub beta: f64,
    pub horizon: f64,
    /// Initial cluster directions; renormalized after a unit-norm check.
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default = "default_window_fraction")]
    pub window_fraction: f64,
    #[serde(default = "default_rel_threshold")]
    pub rel_threshold: f64,
}

fn all_schemes() -> Vec<NormalizationScheme> {
    NormalizationScheme::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsConfig {
    pub n: usize,
    pub d: usize,
    pub rho0: f64,
    pub beta: f64,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<NormalizationScheme>,
    pub horizon: f64,
    /// Exponential fit window for Post-LN.
    pub post_window: [f64; 2],
    /// Power-law fit window for Pre-LN.
    pub pre_window: [f64; 2],
}

fn default_fit_gaps() -> [f64; 2] {
    [1e-11, 1e-3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_model")]
    pub model: Model,
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub horizon: f64,
    /// The exponential fit uses samples whose largest gap `1 - <x_i, x_j>` lies
    /// in this range.
    #[serde(default = "default_fit_gaps")]
    pub fit_gaps: [f64; 2],
}

impl ExperimentConfig {
    /// An otherwise empty config for one kind; used by the CLI when no file is
    /// given.
    pub fn empty() -> Self {
        ExperimentConfig {
            seed: 0,
            replicates: 1,
            seeds: None,
            output: None,
            tau: default_tau(),
            integrator: None,
            simulate: None,
            sweep: None,
            equiangular: None,
            longcontext: None,
            modes: None,
            noisy: None,
            staircase: None,
            norms: None,
            validate: None,
        }
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        let present = [
            (self.simulate.is_some(), ExperimentKind::Simulate),
            (self.sweep.is_some(), ExperimentKind::Sweep),
            (self.equiangular.is_some(), ExperimentKind::Equiangular),
            (self.longcontext.is_some(), ExperimentKind::Longcontext),
            (self.modes.is_some(), ExperimentKind::Modes),
            (self.noisy.is_some(), ExperimentKind::Noisy),
            (self.staircase.is_some(), ExperimentKind::Staircase),
            (self.norms.is_some(), ExperimentKind::Norms),
            (self.validate.is_some(), ExperimentKind::Validate),
        ];
        let kinds: Vec<ExperimentKind> = present.iter().filter(|p| p.0).map(|p| p.1).collect();
        match kinds.as_slice() {
            [k] => Ok(*k),
            [] => Err(Error::Config("no experiment section (e.g. [sweep]) found".into())),
            many => Err(Error::Config(format!(
                "exactly one experiment section allowed, found {}",
                many.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.replicates as u64)
                .map(|r| self.seed.wrapping_add(r))
                .collect(),
        }
    }

    /// Integrator spec with this config's overrides on top of the defaults.
    pub(crate) fn integrator_spec(
        &self,
        method: Method,
        dt: f64,
        t_final: f64,
        record_every: Option<usize>,
    ) -> Result<IntegratorSpec> {
        let o = self.integrator.clone().unwrap_or_default();
        let mut spec = IntegratorSpec::new(o.method.unwrap_or(method), o.dt.unwrap_or(dt), t_final)
            .map_err(config_err("integrator"))?;
        if let Some(every) = o.record_every.or(record_every) {
            spec.record_every = every;
        }
        if let Some(cap) = o.max_rotation_per_step {
            spec.max_rotation_per_step = cap;
        }
        spec.validate().map_err(config_err("integrator"))?;
        Ok(spec)
    }

    /// Range checks shared by every kind.
    pub fn validate(&self) -> Result<()> {
        self.kind()?;
        if self.seed_list().is_empty() {
            return Err(Error::Config("`seeds`/`replicates` must give at least one seed".into()));
        }
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("`tau` must lie in (-1, 1), got {}", self.tau)));
        }
        if let Some(s) = &self.sweep {
            nonempty("sweep.betas", &s.betas)?;
            if s.times.as_ref().map_or(s.t_points == 0, |t| t.is_empty()) {
                return Err(Error::Config("`sweep.times` must be nonempty".into()));
            }
        }
        if let Some(l) = &self.longcontext {
            nonempty("longcontext.rho", &l.rho)?;
            nonempty("longcontext.gamma", &l.gamma)?;
            nonempty("longcontext.n", &l.n)?;
        }
        if let Some(m) = &self.modes {
            nonempty("modes.betas", &m.betas)?;
        }
        if let Some(nz) = &self.noisy {
            nonempty("noisy.kappas", &nz.kappas)?;
            if !(nz.burn_in >= 0.0 && nz.burn_in < nz.horizon) {
                return Err(Error::Config("`noisy.burn_in` must lie in [0, horizon)".into()));
            }
        }
        if let Some(nm) = &self.norms {
            nonempty("norms.schemes", &nm.schemes)?;
        }
        if let Some(st) = &self.staircase {
            nonempty("staircase.points", &st.points)?;
        }
        Ok(())
    }

    /// Canonical TOML serialization.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical serialization with `output` removed, so moving
    /// the output does not change the digest.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = None;
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }
}

fn nonempty<T>(key: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("`{key}` must be nonempty")));
    }
    Ok(())
}

pub(crate) fn config_err(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidArgument(msg) => Error::Config(format!("[{section}] {msg}")),
        other => other,
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file. Every failure, including a missing file, is
/// a config error naming the path.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
