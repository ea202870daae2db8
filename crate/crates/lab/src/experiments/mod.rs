//! Config-driven numerical experiments, each ending in a verdict.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{RunConfig, Violation};
use crate::output::SeriesRow;

pub mod absorption;
pub mod checks;
pub mod moments;
pub mod periodicity;
pub mod section7;
pub mod strong;
pub mod tails;
pub mod usc;

pub use absorption::AbsorptionParams;
pub use checks::{DissipativityParams, DistanceParams, OperatorParams};
pub use moments::MomentParams;
pub use periodicity::PeriodicityParams;
pub use section7::Section7Params;
pub use strong::StrongParams;
pub use tails::TailParams;
pub use usc::UscParams;

/// The `[experiment]` section: an `id` plus that experiment's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    OperatorIdentity(OperatorParams),
    DissipativityInequality(DissipativityParams),
    Section7(Section7Params),
    StrongConvergence(StrongParams),
    MomentDecay(MomentParams),
    TailUniformity(TailParams),
    Absorption(AbsorptionParams),
    DistanceValidation(DistanceParams),
    UpperSemicontinuity(UscParams),
    Periodicity(PeriodicityParams),
}

impl ExperimentSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ExperimentSpec::OperatorIdentity(_) => "operator-identity",
            ExperimentSpec::DissipativityInequality(_) => "dissipativity-inequality",
            ExperimentSpec::Section7(_) => "section7",
            ExperimentSpec::StrongConvergence(_) => "strong-convergence",
            ExperimentSpec::MomentDecay(_) => "moment-decay",
            ExperimentSpec::TailUniformity(_) => "tail-uniformity",
            ExperimentSpec::Absorption(_) => "absorption",
            ExperimentSpec::DistanceValidation(_) => "distance-validation",
            ExperimentSpec::UpperSemicontinuity(_) => "upper-semicontinuity",
            ExperimentSpec::Periodicity(_) => "periodicity",
        }
    }

    pub fn violations(&self, cfg: &RunConfig) -> Vec<Violation> {
        match self {
            ExperimentSpec::StrongConvergence(p) => p.violations(cfg),
            ExperimentSpec::MomentDecay(p) => p.violations(cfg),
            ExperimentSpec::TailUniformity(p) => p.violations(cfg),
            ExperimentSpec::Absorption(p) => p.violations(cfg),
            ExperimentSpec::UpperSemicontinuity(p) => p.violations(cfg),
            ExperimentSpec::Periodicity(p) => p.violations(cfg),
            ExperimentSpec::Section7(p) => p.violations(cfg),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Process exit code for this verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
            Verdict::Inconclusive => 3,
        }
    }

    pub fn from_checks(checks: &[Check]) -> Self {
        if checks.iter().all(|c| c.passed) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// One thresholded comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config has no [experiment] section")]
    Missing,
    #[error(transparent)]
    Ensemble(#[from] selkov_core::integrator::EnsembleError),
    #[error(transparent)]
    Measure(#[from] selkov_core::MeasureError),
    #[error(transparent)]
    Lattice(#[from] selkov_core::LatticeError),
    #[error("{0}")]
    Refused(String),
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub id: &'static str,
    pub verdict: Verdict,
    pub claim: &'static str,
    pub thresholds: Map<String, Value>,
    pub statistics: Map<String, Value>,
    pub checks: Vec<Check>,
    pub series: Vec<SeriesRow>,
    /// Additional files `(name, bytes)` written next to the result.
    pub files: Vec<(String, Vec<u8>)>,
}

impl ExperimentOutput {
    /// The `result.json` document.
    pub fn result_json(&self, cfg: &RunConfig) -> Value {
        json!({
            "experiment": self.id,
            "claim": self.claim,
            "verdict": self.verdict,
            "thresholds": self.thresholds,
            "threshold_source": "configuration defaults chosen for this harness, not constants from the analysis",
            "statistics": self.statistics,
            "checks": self.checks,
            "seed": cfg.seed,
            "config_hash": cfg.content_hash(),
        })
    }

    /// Every reproducible output file: `result.json`, `series.csv` and the
    /// experiment's extra files.
    pub fn result_files(&self, cfg: &RunConfig) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![
            ("result.json".to_string(), crate::output::json_bytes(&self.result_json(cfg))),
            ("series.csv".to_string(), crate::output::series_csv(&self.series)),
        ];
        out.extend(self.files.iter().cloned());
        out
    }
}

/// Build a JSON object from `(key, value)` pairs.
pub fn obj<I: IntoIterator<Item = (&'static str, Value)>>(items: I) -> Map<String, Value> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// JSON number, with non-finite values mapped to null.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn run(cfg: &RunConfig) -> Result<ExperimentOutput, ExperimentError> {
    let spec = cfg.experiment.as_ref().ok_or(ExperimentError::Missing)?;
    match spec {
        ExperimentSpec::OperatorIdentity(p) => Ok(checks::operator_identity(cfg, p)),
        ExperimentSpec::DissipativityInequality(p) => Ok(checks::dissipativity(cfg, p)),
        ExperimentSpec::DistanceValidation(p) => checks::distance_validation(cfg, p),
        ExperimentSpec::Section7(p) => section7::run(cfg, p),
        ExperimentSpec::StrongConvergence(p) => strong::run(cfg, p),
        ExperimentSpec::MomentDecay(p) => moments::run(cfg, p),
        ExperimentSpec::TailUniformity(p) => tails::run(cfg, p),
        ExperimentSpec::Absorption(p) => absorption::run(cfg, p),
        ExperimentSpec::UpperSemicontinuity(p) => usc::run(cfg, p),
        ExperimentSpec::Periodicity(p) => periodicity::run(cfg, p),
    }
}

/// Blow-up guard shared by the ensemble experiments.
pub fn blow_up_check(lost: usize, members: usize, max_fraction: f64) -> Check {
    let frac = lost as f64 / members.max(1) as f64;
    Check::new(
        "blow_up_fraction",
        frac < max_fraction,
        format!("{lost} of {members} paths blew up ({frac:.4}); limit {max_fraction}"),
    )
}

/// Maximum tolerated fraction of blown-up paths in ensemble experiments.
pub const MAX_BLOW_UP_FRACTION: f64 = 0.001;
