//! Uniform smallness of the far-field second moment of pullback laws.

use serde::{Deserialize, Serialize};
use serde_json::json;

use selkov_core::measure::{tail_mass, CutoffProfile, TailMass};

use super::{blow_up_check, num, nums, obj, Check, ExperimentError, ExperimentOutput, Verdict, MAX_BLOW_UP_FRACTION};
use crate::config::{RunConfig, Violation};
use crate::output::SeriesRow;
use crate::runner::pullback_series;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailParams {
    pub tau: f64,
    pub horizons: Vec<f64>,
    /// Tail indices `n`, increasing; the last one carries the thresholds.
    pub cutoffs: Vec<usize>,
    pub max_fraction: f64,
    pub max_ratio: f64,
}

impl Default for TailParams {
    fn default() -> Self {
        Self { tau: 0.0, horizons: vec![5.0, 10.0, 20.0], cutoffs: vec![8, 16, 32], max_fraction: 0.01, max_ratio: 2.0 }
    }
}

impl TailParams {
    pub fn violations(&self, cfg: &RunConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        let half = cfg.truncation.half_width;
        if self.cutoffs.is_empty() || self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Violation::new("/experiment/cutoffs", "need strictly increasing tail indices"));
        } else if self.cutoffs[0] == 0 || *self.cutoffs.last().unwrap() > half {
            out.push(Violation::new("/experiment/cutoffs", format!("tail indices must lie in 1..={half}")));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(*h > 0.0)) {
            out.push(Violation::new("/experiment/horizons", "need positive horizons"));
        }
        out
    }
}

/// Ratio of the largest to the smallest value, with an all-zero set counted
/// as constant.
fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

pub fn run(cfg: &RunConfig, p: &TailParams) -> Result<ExperimentOutput, ExperimentError> {
    let system = cfg.system();
    let ens = cfg.ensemble_config();
    let (measures, lost) = pullback_series(&system, &ens, p.tau, &p.horizons, cfg.grid.dt)?;
    let cutoff = CutoffProfile;

    let mut tails: Vec<Vec<TailMass>> = Vec::new();
    let mut totals = Vec::new();
    for mu in &measures {
        tails.push(p.cutoffs.iter().map(|&n| tail_mass(mu, n, &cutoff)).collect::<Result<_, _>>()?);
        totals.push(mu.second_moment());
    }
    let last = p.cutoffs.len() - 1;
    let fractions: Vec<f64> = tails.iter().zip(&totals).map(|(t, &m)| if m > 0.0 { t[last].hard / m } else { 0.0 }).collect();
    let hard_last: Vec<f64> = tails.iter().map(|t| t[last].hard).collect();
    let ratio = spread(&hard_last);
    let monotone = tails
        .iter()
        .all(|t| t.windows(2).all(|w| w[1].hard <= w[0].hard && w[1].smooth <= w[0].smooth));
    let max_fraction = fractions.iter().copied().fold(0.0, f64::max);

    let n_last = p.cutoffs[last];
    let checks = vec![
        blow_up_check(lost, ens.members, MAX_BLOW_UP_FRACTION),
        Check::new("monotone_in_n", monotone, "hard and smooth tail masses are non-increasing in n at every horizon"),
        Check::new(
            "tail_fraction",
            max_fraction < p.max_fraction,
            format!("max hard tail at n = {n_last} over total second moment = {max_fraction:.4e}"),
        ),
        Check::new(
            "uniform_in_time",
            ratio < p.max_ratio,
            format!("max / min hard tail at n = {n_last} across horizons = {ratio:.4}"),
        ),
    ];

    let mut series = Vec::new();
    for (k, &h) in p.horizons.iter().enumerate() {
        for (j, &n) in p.cutoffs.iter().enumerate() {
            series.push(SeriesRow::point(h, tails[k][j].hard, format!("hard_n{n}")));
            series.push(SeriesRow::point(h, tails[k][j].smooth, format!("smooth_n{n}")));
        }
        series.push(SeriesRow::point(h, totals[k], "total"));
    }

    Ok(ExperimentOutput {
        id: "tail-uniformity",
        verdict: Verdict::from_checks(&checks),
        claim: "far-field second moments of pullback laws are uniformly small for decaying forcing",
        thresholds: obj([("max_fraction", num(p.max_fraction)), ("max_ratio", num(p.max_ratio))]),
        statistics: obj([
            ("horizons", nums(&p.horizons)),
            ("cutoffs", json!(p.cutoffs)),
            ("total_second_moment", nums(&totals)),
            ("hard_tail_last_cutoff", nums(&hard_last)),
            ("tail_fraction", nums(&fractions)),
            ("time_ratio", num(ratio)),
            ("members", json!(ens.members)),
            ("blown_up", json!(lost)),
        ]),
        checks,
        series,
        files: Vec::new(),
    })
}
