//! Run configuration: TOML parsing, schema and physics validation, canonical
//! form and content hash.

use std::fmt;
use std::path::Path;

use selkov_core::forcing::{validate_growth_bound, ForcingSpec, LevyConfig, SeedSpec, SpatialProfile};
use selkov_core::integrator::{EnsembleConfig, InitialLaw, SchemeVariant, System, TimeGrid};
use selkov_core::lattice::{LatticeState, ModelParams, TruncationConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiments::ExperimentSpec;

/// One problem found in a configuration, located by a JSON-pointer path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{} configuration violation(s):\n{}", .0.len(), list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Save every `save_every`-th step.
    #[serde(default = "one")]
    pub save_every: u64,
    #[serde(default)]
    pub variant: SchemeVariant,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

impl GridConfig {
    pub fn time_grid(&self) -> Result<TimeGrid, selkov_core::integrator::GridError> {
        TimeGrid::new(self.t_start, self.t_end, self.dt)
    }
}

/// Initial law: a deterministic profile, optionally with iid Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `u_i = u profile(i)`, `v_i = v profile(i)`.
    PointMass {
        u: f64,
        v: f64,
        #[serde(default)]
        profile: SpatialProfile,
    },
    /// The point mass above plus `N(0, sd^2)` on every coordinate.
    GaussianCloud {
        #[serde(default)]
        u: f64,
        #[serde(default)]
        v: f64,
        #[serde(default)]
        profile: SpatialProfile,
        sd: f64,
    },
}

impl InitialSpec {
    pub fn law(&self, trunc: &TruncationConfig) -> InitialLaw {
        let state = |u: f64, v: f64, profile: &SpatialProfile| {
            let w: Vec<f64> = (0..trunc.sites()).map(|k| profile.value(trunc.site(k))).collect();
            LatticeState { u: w.iter().map(|x| u * x).collect(), v: w.iter().map(|x| v * x).collect() }
        };
        match self {
            InitialSpec::PointMass { u, v, profile } => InitialLaw::PointMass(state(*u, *v, profile)),
            InitialSpec::GaussianCloud { u, v, profile, sd } => {
                InitialLaw::GaussianCloud { mean: state(*u, *v, profile), sd: *sd }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
    pub initial: InitialSpec,
    #[serde(default = "yes")]
    pub common_noise: bool,
}

/// Sampling grid for the coefficient growth check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    /// States `s` in `[-bound, bound]` are sampled.
    pub growth_state_bound: f64,
    pub growth_samples: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { growth_state_bound: 3.0, growth_samples: 41 }
    }
}

/// Largest master seed a config can hold; TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// At most [`MAX_SEED`].
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub model: ModelParams,
    pub truncation: TruncationConfig,
    pub forcing: ForcingSpec,
    pub levy: LevyConfig,
    pub grid: GridConfig,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSpec>,
}

const REQUIRED: [&str; 7] = ["seed", "model", "truncation", "forcing", "levy", "grid", "ensemble"];
const OPTIONAL: [&str; 3] = ["output", "validation", "experiment"];

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{key}")),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

fn section<T: DeserializeOwned>(table: &toml::Table, key: &str, out: &mut Vec<Violation>) -> Option<T> {
    let value = table.get(key)?.clone();
    match serde_path_to_error::deserialize::<_, T>(value) {
        Ok(v) => Some(v),
        Err(e) => {
            let inner = pointer(e.path());
            let inner = if inner == "/?" { String::new() } else { inner };
            out.push(Violation::new(format!("/{key}{inner}"), e.into_inner().to_string()));
            None
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Parse and validate, reporting every violation found.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = match text.parse() {
            Ok(t) => t,
            Err(e) => return Err(ConfigError::Invalid(vec![Violation::new("", e.to_string())])),
        };
        let mut out = Vec::new();
        for key in table.keys() {
            if !REQUIRED.contains(&key.as_str()) && !OPTIONAL.contains(&key.as_str()) {
                out.push(Violation::new(format!("/{key}"), "unknown key"));
            }
        }
        for key in REQUIRED {
            if !table.contains_key(key) {
                out.push(Violation::new(format!("/{key}"), "missing required section"));
            }
        }
        let seed = section::<u64>(&table, "seed", &mut out);
        let output = section::<String>(&table, "output", &mut out);
        let model = section::<ModelParams>(&table, "model", &mut out);
        let truncation = section::<TruncationConfig>(&table, "truncation", &mut out);
        let forcing = section::<ForcingSpec>(&table, "forcing", &mut out);
        let levy = section::<LevyConfig>(&table, "levy", &mut out);
        let grid = section::<GridConfig>(&table, "grid", &mut out);
        let ensemble = section::<EnsembleSection>(&table, "ensemble", &mut out);
        let validation = section::<ValidationSection>(&table, "validation", &mut out).unwrap_or_default();
        let experiment = section::<ExperimentSpec>(&table, "experiment", &mut out);
        let (Some(seed), Some(model), Some(truncation), Some(forcing), Some(levy), Some(grid), Some(ensemble)) =
            (seed, model, truncation, forcing, levy, grid, ensemble)
        else {
            return Err(ConfigError::Invalid(out));
        };
        if !out.is_empty() {
            return Err(ConfigError::Invalid(out));
        }
        let cfg = RunConfig { seed, output, model, truncation, forcing, levy, grid, ensemble, validation, experiment };
        let violations = cfg.violations();
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// Physics and consistency checks on an already well-formed config.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for v in self.model.violations() {
            let field = v.field();
            let path = if ["eps1", "eps2", "gamma1", "gamma2"].contains(&field) {
                format!("/model/lambda/{field}")
            } else {
                format!("/model/{field}")
            };
            out.push(Violation::new(path, v.to_string()));
        }
        if let Err(e) = self.truncation.validate() {
            out.push(Violation::new("/truncation/half_width", e.to_string()));
        }
        for v in self.forcing.violations() {
            out.push(Violation::new(format!("/forcing/{}", v.field()), v.to_string()));
        }
        for v in self.levy.violations(self.forcing.modes) {
            out.push(Violation::new(format!("/levy/{}", v.field()), v.to_string()));
        }
        match self.grid.time_grid() {
            Err(e) => out.push(Violation::new("/grid", e.to_string())),
            Ok(_) if self.grid.save_every == 0 => out.push(Violation::new("/grid/save_every", "must be at least 1")),
            Ok(_) => {}
        }
        if self.ensemble.members == 0 {
            out.push(Violation::new("/ensemble/members", "must be at least 1"));
        }
        if let InitialSpec::GaussianCloud { sd, .. } = self.ensemble.initial {
            if !(sd >= 0.0 && sd.is_finite()) {
                out.push(Violation::new("/ensemble/initial/sd", format!("must be nonnegative (got {sd})")));
            }
        }
        let v = self.validation;
        if !(v.growth_state_bound > 0.0) || v.growth_samples < 2 {
            out.push(Violation::new("/validation", "growth grid needs a positive bound and at least 2 samples"));
        } else if out.is_empty() {
            let report = validate_growth_bound(&self.forcing, &self.levy, &self.truncation, &self.growth_times(), &self.growth_states());
            if !report.passes {
                let (k, i, t, s) = report.worst.unwrap_or((0, 0, 0.0, 0.0));
                out.push(Violation::new(
                    "/forcing/alpha",
                    format!(
                        "noise kernels exceed the growth bound alpha (1 + |s|): ratio {:.6} at mode {k}, site {i}, t = {t}, s = {s}",
                        report.max_sigma_ratio.max(report.max_jump_ratio)
                    ),
                ));
            }
        }
        if let Some(exp) = &self.experiment {
            out.extend(exp.violations(self));
        }
        out
    }

    fn growth_times(&self) -> Vec<f64> {
        let n = self.validation.growth_samples;
        let (a, b) = (self.grid.t_start, self.grid.t_end);
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    fn growth_states(&self) -> Vec<f64> {
        let n = self.validation.growth_samples;
        let b = self.validation.growth_state_bound;
        (0..n).map(|k| -b + 2.0 * b * k as f64 / (n - 1) as f64).collect()
    }

    pub fn system(&self) -> System {
        System {
            params: self.model,
            forcing: self.forcing.clone(),
            levy: self.levy,
            trunc: self.truncation,
            variant: self.grid.variant,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            members: self.ensemble.members,
            initial: self.ensemble.initial.law(&self.truncation),
            seed: SeedSpec { master_seed: self.seed },
            common_noise: self.ensemble.common_noise,
        }
    }

    /// Canonical TOML text: every field spelled out, fixed key order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    /// Hex SHA-256 of the canonical text with the seed excluded, then the seed.
    pub fn content_hash(&self) -> String {
        let mut body = self.clone();
        body.seed = 0;
        body.output = None;
        let mut h = Sha256::new();
        h.update(body.canonical().as_bytes());
        h.update(self.seed.to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short directory name derived from [`Self::content_hash`].
    pub fn run_id(&self) -> String {
        self.content_hash()[..16].to_string()
    }
}
