//! Single-site demonstration: the deterministic limit path and stochastic
//! paths at several intensities, all driven by the same noise.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use selkov_core::integrator::{integrate_path, SavedState, TimeGrid, TrajectoryRecord};
use selkov_core::lattice::NoiseIntensity;

use super::{num, nums, obj, Check, ExperimentError, ExperimentOutput, Verdict};
use crate::config::{RunConfig, Violation};
use crate::output::{trajectory_csv, SeriesRow};
use crate::runner::lockstep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Section7Params {
    /// Diagonal intensities `c (1, 1, 1, 1)` of the stochastic paths.
    pub c_values: Vec<f64>,
    pub halving_tolerance: f64,
}

impl Default for Section7Params {
    fn default() -> Self {
        Self { c_values: vec![0.05, 0.4], halving_tolerance: 1e-3 }
    }
}

impl Section7Params {
    pub fn violations(&self, _cfg: &RunConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.c_values.is_empty() || self.c_values.iter().any(|c| !(0.0..=1.0).contains(c)) {
            out.push(Violation::new("/experiment/c_values", "need at least one value, each in [0, 1]"));
        }
        out
    }
}

/// Everything the demo computes, before verdicts.
pub struct Section7Run {
    pub deterministic: TrajectoryRecord,
    pub stochastic: Vec<TrajectoryRecord>,
    /// `sup_t |phi^c(t) - phi^0(t)|` over every grid step, per intensity.
    pub sup_distance: Vec<f64>,
    pub halving_shift: f64,
}

pub fn simulate(cfg: &RunConfig, p: &Section7Params) -> Result<Section7Run, ExperimentError> {
    let base = cfg.system();
    let grid = cfg.grid.time_grid().map_err(selkov_core::integrator::EnsembleError::from)?;
    let ens = cfg.ensemble_config();
    let stream = ens.stream(&NoiseIntensity::ZERO, grid.t_start, 0);
    let x0 = ens.initial.sample(&mut stream.initial_rng());
    let stride = cfg.grid.save_every;

    let mut systems = vec![base.with_lambda(NoiseIntensity::ZERO)];
    systems.extend(p.c_values.iter().map(|&c| base.with_lambda(NoiseIntensity::diagonal(c))));
    let mut saves: Vec<Vec<SavedState>> = vec![Vec::new(); systems.len()];
    let mut sup = vec![0.0f64; systems.len()];
    lockstep(&systems, &x0, &grid, &stream, |n, t, states| {
        for k in 1..states.len() {
            sup[k] = sup[k].max(states[k].distance(&states[0]));
        }
        if n % stride == 0 || n == grid.n_steps {
            for (k, s) in states.iter().enumerate() {
                saves[k].push(SavedState { step: n, t, state: s.clone() });
            }
        }
    })
    .map_err(|b| {
        let c = if b.system == 0 { 0.0 } else { p.c_values[b.system - 1] };
        ExperimentError::Refused(format!(
            "path with c = {c} blew up at step {} (t = {}), site {}",
            b.step,
            grid.time(b.step),
            b.site
        ))
    })?;
    let mut records: Vec<TrajectoryRecord> = saves
        .into_iter()
        .enumerate()
        .map(|(k, saves)| TrajectoryRecord { trajectory: k as u64, saves, blow_up: None })
        .collect();
    let deterministic = records.remove(0);

    let fine = TimeGrid { dt: grid.dt / 2.0, n_steps: 2 * grid.n_steps, ..grid };
    let det = &systems[0];
    let end = integrate_path(&x0, &fine, det, None, &[fine.n_steps], 0)?;
    let halving_shift = match (&end.blow_up, end.last(), deterministic.last()) {
        (None, Some(a), Some(b)) => a.state.distance(&b.state),
        _ => f64::INFINITY,
    };
    Ok(Section7Run { deterministic, stochastic: records, sup_distance: sup[1..].to_vec(), halving_shift })
}

pub fn run(cfg: &RunConfig, p: &Section7Params) -> Result<ExperimentOutput, ExperimentError> {
    let r = simulate(cfg, p)?;
    let mut order: Vec<usize> = (0..p.c_values.len()).collect();
    order.sort_by(|&a, &b| p.c_values[a].total_cmp(&p.c_values[b]));
    let monotone = order.windows(2).all(|w| r.sup_distance[w[0]] < r.sup_distance[w[1]]);

    let checks = vec![
        Check::new("deterministic_completes", true, "no blow-up on the configured grid"),
        Check::new(
            "dt_halving",
            r.halving_shift < p.halving_tolerance,
            format!("endpoint shift under dt/2 = {:e}", r.halving_shift),
        ),
        Check::new(
            "monotone_sup_distance",
            monotone,
            format!("sup distances {:?} for c = {:?}", r.sup_distance, p.c_values),
        ),
    ];

    let mut series: Vec<SeriesRow> =
        p.c_values.iter().zip(&r.sup_distance).map(|(&c, &d)| SeriesRow::point(c, d, "sup_distance")).collect();
    series.push(SeriesRow::point(cfg.grid.dt, r.halving_shift, "dt_halving_shift"));

    let mut paths = vec![(0u64, &r.deterministic)];
    paths.extend(r.stochastic.iter().enumerate().map(|(k, rec)| (k as u64 + 1, rec)));
    let trajectories = trajectory_csv(paths, &cfg.truncation);
    let end = r.deterministic.last().map(|s| json!({"t": num(s.t), "u": nums(&s.state.u), "v": nums(&s.state.v)}));

    Ok(ExperimentOutput {
        id: "section7",
        verdict: Verdict::from_checks(&checks),
        claim: "single-site demonstration: the deterministic limit path and common-noise stochastic paths approach it as the intensity shrinks",
        thresholds: obj([("halving_tolerance", num(p.halving_tolerance))]),
        statistics: obj([
            ("c_values", nums(&p.c_values)),
            ("sup_distance", nums(&r.sup_distance)),
            ("dt_halving_shift", num(r.halving_shift)),
            ("deterministic_end", end.unwrap_or(Value::Null)),
            ("path_ids", json!("0 = deterministic limit, k = k-th entry of c_values")),
        ]),
        checks,
        series,
        files: vec![("trajectories.csv".into(), trajectories)],
    })
}
