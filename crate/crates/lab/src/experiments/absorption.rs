//! Entry of pullback laws into the absorbing ball, and the empirical
//! calibration of its radius.

use serde::{Deserialize, Serialize};
use serde_json::json;

use selkov_core::integrator::{EnsembleConfig, InitialLaw, TimeGrid};
use selkov_core::lattice::LatticeState;
use selkov_core::measure::compute_absorbing_radius;
use selkov_core::MeasureError;

use super::{blow_up_check, num, nums, obj, Check, ExperimentError, ExperimentOutput, Verdict, MAX_BLOW_UP_FRACTION};
use crate::config::{RunConfig, Violation};
use crate::output::SeriesRow;
use crate::runner::run_ensemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsorptionParams {
    /// Second moments of the initial laws; 0 is the point mass at zero.
    pub moments: Vec<f64>,
    pub envelope_factor: f64,
    /// Every law must have entered the envelope for good by this time.
    pub absorb_by: f64,
}

impl Default for AbsorptionParams {
    fn default() -> Self {
        Self { moments: vec![0.0, 1.0, 10.0, 100.0, 1000.0], envelope_factor: 1.5, absorb_by: 3.0 }
    }
}

impl AbsorptionParams {
    pub fn violations(&self, cfg: &RunConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.moments.is_empty() || self.moments.iter().any(|m| !(*m >= 0.0)) {
            out.push(Violation::new("/experiment/moments", "need nonnegative second moments"));
        }
        if !(self.envelope_factor >= 1.0) {
            out.push(Violation::new("/experiment/envelope_factor", "must be at least 1"));
        }
        let span = cfg.grid.t_end - cfg.grid.t_start;
        if !(self.absorb_by > 0.0 && self.absorb_by <= span) {
            out.push(Violation::new("/experiment/absorb_by", format!("must lie in (0, {span}]")));
        }
        if !cfg.forcing.is_autonomous() {
            out.push(Violation::new(
                "/forcing",
                "pullback horizons are read off one forward run, which needs time-independent coefficients",
            ));
        }
        out
    }
}

/// Initial law with the given second moment: the point mass at zero for 0,
/// otherwise a centred Gaussian cloud.
pub fn law_with_moment(cfg: &RunConfig, moment: f64) -> InitialLaw {
    let trunc = &cfg.truncation;
    if moment == 0.0 {
        InitialLaw::PointMass(LatticeState::zeros(trunc))
    } else {
        let sd = (moment / (2 * trunc.sites()) as f64).sqrt();
        InitialLaw::GaussianCloud { mean: LatticeState::zeros(trunc), sd }
    }
}

/// `L1(tau) = C R(tau)` with `C` fitted on a reference run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub varpi: f64,
    pub r_tau: f64,
    pub constant: f64,
    pub l1: f64,
    /// Largest second moment seen on the reference run.
    pub reference_sup: f64,
    pub reference_lost: usize,
}

/// Calibrate `C` as the smallest constant for which the zero initial law
/// satisfies `E|phi|^2 <= C R(tau)` on a reference ensemble with its own
/// seed. Refuses when the dissipativity rate is not positive.
pub fn calibrate_envelope(cfg: &RunConfig, grid: &TimeGrid, stride: u64) -> Result<Envelope, ExperimentError> {
    let system = cfg.system();
    let tau = grid.t_end();
    let times: Vec<f64> = grid.every(stride).iter().map(|&s| grid.time(s)).collect();
    let report = compute_absorbing_radius(tau, &system.params, &system.forcing, &system.trunc, &times, 1e-3, 1.0)
        .map_err(|e| match e {
            MeasureError::HypothesisViolated { varpi } => {
                ExperimentError::Refused(format!("dissipativity rate {varpi} is not positive; the absorption bound does not apply"))
            }
            other => other.into(),
        })?;
    let mut ens = cfg.ensemble_config();
    ens.seed.master_seed = cfg.seed ^ 0xC0FF_EE00_CA1B_0000;
    let reference = run_ensemble(
        &system,
        &EnsembleConfig { initial: law_with_moment(cfg, 0.0), ..ens },
        grid,
        &grid.every(stride),
    )?;
    let sup = reference.measures.iter().map(|m| m.second_moment()).fold(0.0, f64::max);
    let constant = sup / report.r_tau;
    Ok(Envelope {
        varpi: report.varpi,
        r_tau: report.r_tau,
        constant,
        l1: sup,
        reference_sup: sup,
        reference_lost: reference.blown_up,
    })
}

/// First saved time after which every later moment stays within `bound`.
pub fn entry_time(times: &[f64], moments: &[f64], bound: f64) -> Option<f64> {
    let last_out = moments.iter().rposition(|&m| !(m <= bound));
    match last_out {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

pub fn run(cfg: &RunConfig, p: &AbsorptionParams) -> Result<ExperimentOutput, ExperimentError> {
    let system = cfg.system();
    let grid = cfg.grid.time_grid().map_err(selkov_core::integrator::EnsembleError::from)?;
    let stride = cfg.grid.save_every;
    let envelope = calibrate_envelope(cfg, &grid, stride)?;
    let bound = p.envelope_factor * envelope.l1;
    let steps = grid.every(stride);
    let times: Vec<f64> = steps.iter().map(|&s| grid.time(s) - grid.t_start).collect();
    let ens = cfg.ensemble_config();

    let mut series = Vec::new();
    let mut entries = Vec::new();
    let mut lost = envelope.reference_lost;
    let mut curves = Vec::new();
    for &m0 in &p.moments {
        let out = run_ensemble(&system, &EnsembleConfig { initial: law_with_moment(cfg, m0), ..ens.clone() }, &grid, &steps)?;
        lost = lost.max(out.blown_up);
        let moments: Vec<f64> = out.measures.iter().map(|m| m.second_moment()).collect();
        for (t, m) in times.iter().zip(&moments) {
            series.push(SeriesRow::point(*t, *m, format!("m0_{m0}")));
        }
        entries.push(entry_time(&times, &moments, bound));
        curves.push(moments);
    }
    for &t in &times {
        series.push(SeriesRow::point(t, bound, "envelope"));
    }

    let mut checks = vec![blow_up_check(lost, ens.members, MAX_BLOW_UP_FRACTION)];
    for (m0, e) in p.moments.iter().zip(&entries) {
        let ok = matches!(e, Some(t) if *t <= p.absorb_by + 1e-9);
        let detail = match e {
            Some(t) => format!("within {bound:.4} from t = {t} onwards"),
            None => format!("still above {bound:.4} at the last saved time"),
        };
        checks.push(Check::new(format!("absorbed_m0_{m0}"), ok, detail));
    }
    let entry_json: Vec<serde_json::Value> = entries.iter().map(|e| e.map_or(serde_json::Value::Null, num)).collect();

    Ok(ExperimentOutput {
        id: "absorption",
        verdict: Verdict::from_checks(&checks),
        claim: "pullback laws from any bounded initial second moment enter and stay in the absorbing ball of radius L1(tau)",
        thresholds: obj([("envelope_factor", num(p.envelope_factor)), ("absorb_by", num(p.absorb_by))]),
        statistics: obj([
            ("initial_moments", nums(&p.moments)),
            ("entry_times", json!(entry_json)),
            ("final_moments", nums(&curves.iter().map(|c| *c.last().unwrap_or(&f64::NAN)).collect::<Vec<_>>())),
            ("varpi", num(envelope.varpi)),
            ("r_tau", num(envelope.r_tau)),
            ("calibrated_constant", num(envelope.constant)),
            ("l1_tau", num(envelope.l1)),
            ("members", json!(ens.members)),
            ("blown_up", json!(lost)),
        ]),
        checks,
        series,
        files: Vec::new(),
    })
}
