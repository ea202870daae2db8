//! Mean-square convergence rate of paths as the intensity shrinks.

use serde::{Deserialize, Serialize};
use serde_json::json;

use selkov_core::integrator::TimeGrid;
use selkov_core::lattice::NoiseIntensity;

use super::{blow_up_check, num, nums, obj, Check, ExperimentError, ExperimentOutput, Verdict, MAX_BLOW_UP_FRACTION};
use crate::config::{RunConfig, Violation};
use crate::output::SeriesRow;
use crate::runner::{lockstep, par_members};
use crate::stats::{fit_line, mean, percentile_interval, replicate_rng, resample_indices};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrongParams {
    pub c_values: Vec<f64>,
    /// Length `T1` of the window over which the supremum is taken.
    pub horizon: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub bootstrap: usize,
    pub ci_level: f64,
    /// Inconclusive when the slope interval is wider than this fraction of
    /// the fitted slope.
    pub max_ci_fraction: f64,
}

impl Default for StrongParams {
    fn default() -> Self {
        Self {
            c_values: vec![0.4, 0.2, 0.1, 0.05],
            horizon: 1.0,
            slope_min: 1.6,
            slope_max: 2.4,
            bootstrap: 400,
            ci_level: 0.95,
            max_ci_fraction: 0.5,
        }
    }
}

impl StrongParams {
    pub fn violations(&self, cfg: &RunConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if !cfg.ensemble.common_noise {
            out.push(Violation::new("/ensemble/common_noise", "pathwise comparison needs common noise"));
        }
        if self.c_values.len() < 2 || self.c_values.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            out.push(Violation::new("/experiment/c_values", "need at least two values in (0, 1]"));
        }
        if TimeGrid::new(cfg.grid.t_start, cfg.grid.t_start + self.horizon, cfg.grid.dt).is_err() {
            out.push(Violation::new("/experiment/horizon", "must be a positive multiple of the grid step"));
        }
        if self.bootstrap < 10 {
            out.push(Violation::new("/experiment/bootstrap", "need at least 10 resamples"));
        }
        out
    }
}

/// Per-member `sup_t |phi^c - phi^0|^2` for each `c`; `None` for blown-up
/// members.
pub fn member_sups(cfg: &RunConfig, p: &StrongParams, members: usize) -> Result<Vec<Option<Vec<f64>>>, ExperimentError> {
    let base = cfg.system();
    let grid = TimeGrid::new(cfg.grid.t_start, cfg.grid.t_start + p.horizon, cfg.grid.dt)
        .map_err(selkov_core::integrator::EnsembleError::from)?;
    let ens = cfg.ensemble_config();
    let mut systems = vec![base.with_lambda(NoiseIntensity::ZERO)];
    systems.extend(p.c_values.iter().map(|&c| base.with_lambda(NoiseIntensity::diagonal(c))));
    Ok(par_members(members, |m| {
        let stream = ens.stream(&NoiseIntensity::ZERO, grid.t_start, m);
        let x0 = ens.initial.sample(&mut stream.initial_rng());
        let mut sup = vec![0.0f64; systems.len() - 1];
        lockstep(&systems, &x0, &grid, &stream, |_, _, states| {
            for (k, s) in sup.iter_mut().enumerate() {
                *s = s.max(states[k + 1].distance_sq(&states[0]));
            }
        })
        .ok()
        .map(|_| sup)
    }))
}

pub fn run(cfg: &RunConfig, p: &StrongParams) -> Result<ExperimentOutput, ExperimentError> {
    let members = cfg.ensemble.members;
    let raw = member_sups(cfg, p, members)?;
    let kept: Vec<Vec<f64>> = raw.iter().flatten().cloned().collect();
    let lost = members - kept.len();
    if kept.is_empty() {
        return Err(ExperimentError::Refused("every path blew up".into()));
    }
    let nc = p.c_values.len();
    let log_c: Vec<f64> = p.c_values.iter().map(|c| c.ln()).collect();
    let means_of = |idx: &[usize]| -> Vec<f64> {
        (0..nc).map(|k| idx.iter().map(|&i| kept[i][k]).sum::<f64>() / idx.len() as f64).collect()
    };
    let all: Vec<usize> = (0..kept.len()).collect();
    let means = means_of(&all);
    let slope_of = |m: &[f64]| fit_line(&log_c, &m.iter().map(|x| x.ln()).collect::<Vec<_>>()).slope;
    let slope = slope_of(&means);

    let boot: Vec<Vec<f64>> = (0..p.bootstrap)
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed ^ 0x5354_524f_4e47, r as u64);
            means_of(&resample_indices(&mut rng, kept.len()))
        })
        .collect();
    let boot_slopes: Vec<f64> = boot.iter().map(|m| slope_of(m)).collect();
    let (lo, hi) = percentile_interval(&boot_slopes, p.ci_level);
    let width = hi - lo;
    let sd_slope = {
        let m = mean(&boot_slopes);
        (boot_slopes.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (boot_slopes.len() - 1) as f64).sqrt()
    };

    let mut series = Vec::new();
    for k in 0..nc {
        let col: Vec<f64> = boot.iter().map(|m| m[k]).collect();
        series.push(SeriesRow::new(p.c_values[k], means[k], percentile_interval(&col, p.ci_level), "mean_sup_sq"));
    }
    series.push(SeriesRow::new(0.0, slope, (lo, hi), "slope"));

    let in_range = (p.slope_min..=p.slope_max).contains(&slope);
    let checks = vec![
        blow_up_check(lost, members, MAX_BLOW_UP_FRACTION),
        Check::new(
            "slope_in_range",
            in_range,
            format!("fitted slope {slope:.4}, {:.0}% interval [{lo:.4}, {hi:.4}]", 100.0 * p.ci_level),
        ),
    ];
    let too_wide = width > p.max_ci_fraction * slope.abs();
    let verdict = if too_wide && checks[0].passed { Verdict::Inconclusive } else { Verdict::from_checks(&checks) };

    Ok(ExperimentOutput {
        id: "strong-convergence",
        verdict,
        claim: "mean-square convergence of paths: E sup |phi^lambda - phi^lambda0|^2 scales like |lambda - lambda0|^2",
        thresholds: obj([
            ("slope_min", num(p.slope_min)),
            ("slope_max", num(p.slope_max)),
            ("max_ci_fraction", num(p.max_ci_fraction)),
            ("ci_level", num(p.ci_level)),
        ]),
        statistics: obj([
            ("c_values", nums(&p.c_values)),
            ("mean_sup_sq", nums(&means)),
            ("slope", num(slope)),
            ("slope_ci", nums(&[lo, hi])),
            ("slope_ci_width", num(width)),
            ("slope_bootstrap_sd", num(sd_slope)),
            ("members", json!(members)),
            ("blown_up", json!(lost)),
            ("ci_too_wide", json!(too_wide)),
        ]),
        checks,
        series,
        files: Vec::new(),
    })
}
