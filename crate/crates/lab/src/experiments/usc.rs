//! Convergence of pullback laws as the noise intensity tends to the limit
//! intensity, measured in the bounded-Lipschitz distance.

use serde::{Deserialize, Serialize};
use serde_json::json;

use selkov_core::lattice::NoiseIntensity;
use selkov_core::measure::{split_replicate, subsample_replicate, EmpiricalMeasure};

use super::{blow_up_check, num, nums, obj, Check, ExperimentError, ExperimentOutput, Verdict, MAX_BLOW_UP_FRACTION};
use crate::config::{RunConfig, Violation};
use crate::output::SeriesRow;
use crate::runner::{par_members, pullback};
use crate::stats::{mean, percentile_interval, quantile, spearman};

/// Mean and replicates of the subsampled distance between `mu` and `nu`.
pub fn observed(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, k: usize, replicates: usize, seed: u64) -> Result<(f64, Vec<f64>), ExperimentError> {
    let values = par_members(replicates, |r| subsample_replicate(mu, nu, k, seed, r as u64))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok((mean(&values), values))
}

/// Upper `q`-quantile of the distance between disjoint `k`-subsets of one
/// pool: the level the estimator reaches when both sides share a law.
pub fn null_floor(pool: &EmpiricalMeasure, k: usize, replicates: usize, q: f64, seed: u64) -> Result<f64, ExperimentError> {
    let values = par_members(replicates, |r| split_replicate(pool, k, seed, r as u64))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(quantile(&values, q))
}

/// Per-case stream base for replicate generators.
pub fn case_seed(seed: u64, case: u64) -> u64 {
    seed ^ case.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UscParams {
    pub c_values: Vec<f64>,
    pub tau: f64,
    pub horizon: f64,
    /// Atoms per side in each distance replicate.
    pub per_measure: usize,
    pub replicates: usize,
    pub floor_replicates: usize,
    pub floor_quantile: f64,
    pub min_spearman: f64,
    pub floor_multiple: f64,
}

impl Default for UscParams {
    fn default() -> Self {
        Self {
            c_values: vec![0.8, 0.4, 0.2, 0.1, 0.05],
            tau: 0.0,
            horizon: 6.0,
            per_measure: 80,
            replicates: 8,
            floor_replicates: 40,
            floor_quantile: 0.95,
            min_spearman: 0.8,
            floor_multiple: 3.0,
        }
    }
}

impl UscParams {
    pub fn violations(&self, cfg: &RunConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if cfg.ensemble.common_noise {
            out.push(Violation::new("/ensemble/common_noise", "laws at different intensities must be sampled independently"));
        }
        if self.c_values.len() < 3 || self.c_values.iter().any(|c| !(*c > 0.0)) {
            out.push(Violation::new("/experiment/c_values", "need at least three positive values"));
        }
        if cfg.ensemble.members < 2 * self.per_measure || self.per_measure == 0 {
            out.push(Violation::new(
                "/experiment/per_measure",
                format!("the null distribution needs two disjoint subsets: members must be at least {}", 2 * self.per_measure),
            ));
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

struct Case {
    distance: f64,
    replicates: Vec<f64>,
    floor: f64,
    doubling: f64,
}

pub fn run(cfg: &RunConfig, p: &UscParams) -> Result<ExperimentOutput, ExperimentError> {
    let base = cfg.system();
    let ens = cfg.ensemble_config();
    let dt = cfg.grid.dt;
    let limit = pullback(&base.with_lambda(cfg.model.lambda), &ens, p.tau, p.horizon, dt)?;
    let mut lost = limit.blown_up;
    let mu0 = &limit.measures[0];
    let (k, r) = (p.per_measure, p.replicates);

    let mut cases = Vec::new();
    for (j, &c) in p.c_values.iter().enumerate() {
        let sys = base.with_lambda(NoiseIntensity::diagonal(c));
        let one = pullback(&sys, &ens, p.tau, p.horizon, dt)?;
        let two = pullback(&sys, &ens, p.tau, 2.0 * p.horizon, dt)?;
        lost = lost.max(one.blown_up).max(two.blown_up);
        let mu = &one.measures[0];
        let seed = case_seed(cfg.seed, j as u64);
        let (distance, replicates) = observed(mu, mu0, k, r, seed)?;
        let floor = null_floor(mu, k, p.floor_replicates, p.floor_quantile, seed ^ 1)?;
        let (doubling, _) = observed(mu, &two.measures[0], k, r, seed ^ 2)?;
        cases.push(Case { distance, replicates, floor, doubling });
    }

    let d: Vec<f64> = cases.iter().map(|c| c.distance).collect();
    let floors: Vec<f64> = cases.iter().map(|c| c.floor).collect();
    let doubling: Vec<f64> = cases.iter().map(|c| c.doubling).collect();
    let rho = spearman(&p.c_values, &d);
    let jmin = (0..p.c_values.len()).min_by(|&a, &b| p.c_values[a].total_cmp(&p.c_values[b])).unwrap_or(0);
    let converged = cases.iter().all(|c| c.doubling <= c.floor);

    let checks = vec![
        blow_up_check(lost, ens.members, MAX_BLOW_UP_FRACTION),
        Check::new("spearman", rho >= p.min_spearman, format!("Spearman rank correlation of (c, distance) = {rho:.4}")),
        Check::new(
            "smallest_intensity_near_floor",
            d[jmin] < p.floor_multiple * floors[jmin],
            format!("distance {:.4e} at c = {} vs noise floor {:.4e}", d[jmin], p.c_values[jmin], floors[jmin]),
        ),
    ];
    let verdict = if checks[0].passed && !converged { Verdict::Inconclusive } else { Verdict::from_checks(&checks) };

    let mut series = Vec::new();
    for (j, &c) in p.c_values.iter().enumerate() {
        series.push(SeriesRow::new(c, d[j], percentile_interval(&cases[j].replicates, 0.95), "distance"));
        series.push(SeriesRow::point(c, floors[j], "noise_floor"));
        series.push(SeriesRow::point(c, doubling[j], "horizon_doubling"));
    }

    Ok(ExperimentOutput {
        id: "upper-semicontinuity",
        verdict,
        claim: "pullback measure attractors converge to the limit attractor as the noise intensity tends to the limit intensity",
        thresholds: obj([
            ("min_spearman", num(p.min_spearman)),
            ("floor_multiple", num(p.floor_multiple)),
            ("floor_quantile", num(p.floor_quantile)),
        ]),
        statistics: obj([
            ("c_values", nums(&p.c_values)),
            ("distance", nums(&d)),
            ("noise_floor", nums(&floors)),
            ("horizon_doubling_distance", nums(&doubling)),
            ("surrogate_converged", json!(converged)),
            ("spearman", num(rho)),
            ("per_measure", json!(k)),
            ("replicates", json!(r)),
            ("members", json!(ens.members)),
            ("blown_up", json!(lost)),
        ]),
        checks,
        series,
        files: Vec::new(),
    })
}
