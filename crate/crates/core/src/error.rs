use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("vector length {found} does not match window of {expected} sites")]
    LengthMismatch { expected: usize, found: usize },
    #[error("truncation half width must be at least 1")]
    EmptyWindow,
    #[error("non-finite state at site {site}{}", step.map(|s| alloc::format!(" (step {s})")).unwrap_or_default())]
    BlowUp { site: i64, step: Option<u64> },
    #[error("invalid model parameters: {}", join(.0))]
    InvalidParams(Vec<ParamViolation>),
}

/// One violated constraint on [`crate::lattice::ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum ParamViolation {
    NotPositive { name: &'static str, value: f64 },
    Negative { name: &'static str, value: f64 },
    ExponentTooSmall { p: u32 },
    IntensityOutOfRange { name: &'static str, value: f64 },
}

impl ParamViolation {
    /// Name of the offending field.
    pub fn field(&self) -> &'static str {
        match self {
            ParamViolation::NotPositive { name, .. }
            | ParamViolation::Negative { name, .. }
            | ParamViolation::IntensityOutOfRange { name, .. } => name,
            ParamViolation::ExponentTooSmall { .. } => "p",
        }
    }
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamViolation::NotPositive { name, value } => {
                write!(f, "{name} must be positive (got {value}); the model constants are positive constants")
            }
            ParamViolation::Negative { name, value } => write!(f, "{name} must be nonnegative (got {value})"),
            ParamViolation::ExponentTooSmall { p } => write!(f, "p must be an integer >= 1 (got {p})"),
            ParamViolation::IntensityOutOfRange { name, value } => {
                write!(f, "{name} must lie in [0, 1] (got {value})")
            }
        }
    }
}

/// One violated constraint on the forcing or Levy configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForcingViolation {
    #[error("alpha must be positive (got {alpha})")]
    AlphaNotPositive { alpha: f64 },
    #[error("at least one noise mode is required")]
    NoModes,
    #[error("delta envelope must be nonnegative for all times")]
    NegativeDelta,
    #[error("{field}.mode_ratio must lie in [0, 1] (got {ratio})")]
    ModeRatio { field: &'static str, ratio: f64 },
    #[error("period chi must be positive (got {chi})")]
    PeriodNotPositive { chi: f64 },
    #[error("{field} is not periodic with period {chi}")]
    NotPeriodic { field: &'static str, chi: f64 },
    #[error("growth bound violated at mode {mode}, site {site}, t = {t}, s = {s}")]
    GrowthBound { mode: usize, site: i64, t: f64, s: f64 },
    #[error("poisson intensity must be nonnegative (got {intensity})")]
    Intensity { intensity: f64 },
    #[error("invalid jump law: {reason}")]
    JumpLaw { reason: &'static str },
    #[error("jump activity {total} exceeds m_jump_bound {bound}")]
    JumpActivity { total: f64, bound: f64 },
}

impl ForcingViolation {
    /// Config field the violation refers to.
    pub fn field(&self) -> &'static str {
        match self {
            ForcingViolation::AlphaNotPositive { .. } | ForcingViolation::GrowthBound { .. } => "alpha",
            ForcingViolation::NoModes => "modes",
            ForcingViolation::NegativeDelta => "delta",
            ForcingViolation::ModeRatio { field, .. } | ForcingViolation::NotPeriodic { field, .. } => field,
            ForcingViolation::PeriodNotPositive { .. } => "chi",
            ForcingViolation::Intensity { .. } => "intensity",
            ForcingViolation::JumpLaw { .. } => "jump_law",
            ForcingViolation::JumpActivity { .. } => "m_jump_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("atoms have inconsistent dimensions")]
    DimensionMismatch,
    #[error("weights must be nonnegative and sum to one (sum = {sum})")]
    Weights { sum: f64 },
    #[error("{atoms} atoms exceed the solver budget of {budget}; subsample first")]
    BudgetExceeded { atoms: usize, budget: usize },
    #[error("closed form requires two point masses")]
    NotDirac,
    #[error("tail index {n} outside 1..={max}")]
    TailIndex { n: usize, max: usize },
    #[error("dissipativity rate {varpi} is not positive")]
    HypothesisViolated { varpi: f64 },
    #[error("forcing grows backward at rate {growth} >= dissipativity rate {varpi}; the integral diverges")]
    NonIntegrable { growth: f64, varpi: f64 },
    #[error("linear program failed: {0}")]
    Solver(#[from] crate::lp::LpError),
}

fn join<T: fmt::Display>(items: &[T]) -> alloc::string::String {
    use core::fmt::Write;
    let mut out = alloc::string::String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{item}");
    }
    out
}
