//! Periodic forcing gives periodic pullback laws; a decaying forcing does not.

use serde::{Deserialize, Serialize};
use serde_json::json;

use selkov_core::forcing::TimeEnvelope;
use selkov_core::integrator::System;
use selkov_core::measure::EmpiricalMeasure;

use super::usc::{case_seed, null_floor, observed};
use super::{blow_up_check, num, nums, obj, Check, ExperimentError, ExperimentOutput, Verdict, MAX_BLOW_UP_FRACTION};
use crate::config::{RunConfig, Violation};
use crate::output::SeriesRow;
use crate::runner::pullback;
use crate::stats::percentile_interval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeriodicityParams {
    pub tau: f64,
    pub horizon: f64,
    /// Laws at `tau + k chi` are compared with the law at `tau`.
    pub shifts: Vec<u32>,
    pub per_measure: usize,
    pub replicates: usize,
    pub floor_replicates: usize,
    pub floor_quantile: f64,
    /// The control must exceed its noise floor by this factor.
    pub control_multiple: f64,
    /// Decay rate of the control forcing `f = e^{-rate t}`.
    pub control_rate: f64,
}

impl Default for PeriodicityParams {
    fn default() -> Self {
        Self {
            tau: 0.0,
            horizon: 3.0,
            shifts: vec![1, 2],
            per_measure: 80,
            replicates: 8,
            floor_replicates: 40,
            floor_quantile: 0.95,
            control_multiple: 3.0,
            control_rate: 1.0,
        }
    }
}

impl PeriodicityParams {
    pub fn violations(&self, cfg: &RunConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if cfg.forcing.chi.is_none() {
            out.push(Violation::new("/forcing/chi", "periodicity needs a forcing period"));
        }
        if cfg.ensemble.common_noise {
            out.push(Violation::new("/ensemble/common_noise", "laws at different times must be sampled independently"));
        }
        if self.shifts.is_empty() || self.shifts.contains(&0) {
            out.push(Violation::new("/experiment/shifts", "need positive period multiples"));
        }
        if cfg.ensemble.members < self.per_measure || self.per_measure == 0 {
            out.push(Violation::new("/experiment/per_measure", "must be positive and at most the member count"));
        }
        if self.replicates == 0 || self.floor_replicates < 2 {
            out.push(Violation::new("/experiment/replicates", "need replicates and at least two floor replicates"));
        }
        if !(self.horizon > 0.0) {
            out.push(Violation::new("/experiment/horizon", "must be positive"));
        }
        out
    }
}

fn pooled(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<EmpiricalMeasure, ExperimentError> {
    let samples = a.samples.iter().chain(&b.samples).cloned().collect();
    Ok(EmpiricalMeasure::uniform(samples, a.origin)?)
}

/// Observed distance between the laws at `tau` and `tau + shift`, its
/// replicates, and the permutation floor of the pooled sample.
struct Comparison {
    distance: f64,
    replicates: Vec<f64>,
    floor: f64,
}

fn compare(
    system: &System,
    cfg: &RunConfig,
    p: &PeriodicityParams,
    base: &EmpiricalMeasure,
    shift: f64,
    case: u64,
    lost: &mut usize,
) -> Result<Comparison, ExperimentError> {
    let ens = cfg.ensemble_config();
    let out = pullback(system, &ens, p.tau + shift, p.horizon, cfg.grid.dt)?;
    *lost = (*lost).max(out.blown_up);
    let mu = &out.measures[0];
    let seed = case_seed(cfg.seed, case);
    let (distance, replicates) = observed(base, mu, p.per_measure, p.replicates, seed)?;
    let floor = null_floor(&pooled(base, mu)?, p.per_measure, p.floor_replicates, p.floor_quantile, seed ^ 1)?;
    Ok(Comparison { distance, replicates, floor })
}

pub fn run(cfg: &RunConfig, p: &PeriodicityParams) -> Result<ExperimentOutput, ExperimentError> {
    let chi = cfg.forcing.chi.ok_or(ExperimentError::Missing)?;
    let system = cfg.system();
    let ens = cfg.ensemble_config();
    let dt = cfg.grid.dt;
    let mut lost = 0;

    let at_tau = pullback(&system, &ens, p.tau, p.horizon, dt)?;
    lost = lost.max(at_tau.blown_up);
    let mut periodic = Vec::new();
    for (j, &k) in p.shifts.iter().enumerate() {
        periodic.push(compare(&system, cfg, p, &at_tau.measures[0], k as f64 * chi, j as u64, &mut lost)?);
    }

    let mut control = system.clone();
    let decay = TimeEnvelope::ExpDecay { amplitude: 1.0, rate: p.control_rate };
    control.forcing.f1.envelope = decay;
    control.forcing.f2.envelope = decay;
    control.forcing.chi = None;
    let c_tau = pullback(&control, &ens, p.tau, p.horizon, dt)?;
    lost = lost.max(c_tau.blown_up);
    let ctrl = compare(&control, cfg, p, &c_tau.measures[0], chi, 1000, &mut lost)?;

    let mut checks = vec![blow_up_check(lost, ens.members, MAX_BLOW_UP_FRACTION)];
    for (k, c) in p.shifts.iter().zip(&periodic) {
        checks.push(Check::new(
            format!("periodic_shift_{k}"),
            c.distance <= c.floor,
            format!("distance {:.4e} between tau and tau + {k} chi vs noise floor {:.4e}", c.distance, c.floor),
        ));
    }
    checks.push(Check::new(
        "control_exceeds_floor",
        ctrl.distance >= p.control_multiple * ctrl.floor,
        format!(
            "control distance {:.4e} vs {} x noise floor {:.4e} (ratio {:.3})",
            ctrl.distance,
            p.control_multiple,
            ctrl.floor,
            ctrl.distance / ctrl.floor
        ),
    ));

    let mut series = Vec::new();
    for (k, c) in p.shifts.iter().zip(&periodic) {
        let x = *k as f64;
        series.push(SeriesRow::new(x, c.distance, percentile_interval(&c.replicates, 0.95), "periodic_distance"));
        series.push(SeriesRow::point(x, c.floor, "periodic_floor"));
    }
    series.push(SeriesRow::new(1.0, ctrl.distance, percentile_interval(&ctrl.replicates, 0.95), "control_distance"));
    series.push(SeriesRow::point(1.0, ctrl.floor, "control_floor"));

    Ok(ExperimentOutput {
        id: "periodicity",
        verdict: Verdict::from_checks(&checks),
        claim: "periodic forcing yields a periodic pullback measure attractor",
        thresholds: obj([("floor_quantile", num(p.floor_quantile)), ("control_multiple", num(p.control_multiple))]),
        statistics: obj([
            ("chi", num(chi)),
            ("shifts", json!(p.shifts)),
            ("periodic_distance", nums(&periodic.iter().map(|c| c.distance).collect::<Vec<_>>())),
            ("periodic_floor", nums(&periodic.iter().map(|c| c.floor).collect::<Vec<_>>())),
            ("control_distance", num(ctrl.distance)),
            ("control_floor", num(ctrl.floor)),
            ("members", json!(ens.members)),
            ("blown_up", json!(lost)),
        ]),
        checks,
        series,
        files: Vec::new(),
    })
}
