//! Empirical measures on truncated lattice states: moments, tails,
//! bounded-Lipschitz and Wasserstein distances, and the dissipativity
//! constants of the forcing.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::forcing::ForcingSpec;
use crate::lattice::{LatticeState, ModelParams, NoiseIntensity, TruncationConfig};
use crate::lp::bounded_lipschitz;
use crate::transport::transport;
use crate::MeasureError;

/// Atom budget of the exact bounded-Lipschitz program.
pub const LP_ATOM_BUDGET: usize = 200;
/// Atom budget of the exact transport solver.
pub const TRANSPORT_ATOM_BUDGET: usize = 2000;

/// Where a measure came from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasureOrigin {
    pub tau: f64,
    pub horizon: f64,
    pub lambda: NoiseIntensity,
    pub master_seed: u64,
}

/// Weighted cloud of lattice states.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub samples: Vec<LatticeState>,
    pub weights: Vec<f64>,
    pub origin: MeasureOrigin,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<LatticeState>, weights: Vec<f64>, origin: MeasureOrigin) -> Result<Self, MeasureError> {
        let first = samples.first().ok_or(MeasureError::Empty)?;
        let dim = first.u.len();
        if weights.len() != samples.len() || samples.iter().any(|s| s.u.len() != dim || s.v.len() != dim) {
            return Err(MeasureError::DimensionMismatch);
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || libm::fabs(sum - 1.0) > 1e-12 {
            return Err(MeasureError::Weights { sum });
        }
        Ok(Self { samples, weights, origin })
    }

    pub fn uniform(samples: Vec<LatticeState>, origin: MeasureOrigin) -> Result<Self, MeasureError> {
        let n = samples.len();
        Self::new(samples, vec![1.0 / n as f64; n], origin)
    }

    pub fn dirac(state: LatticeState) -> Self {
        Self { samples: vec![state], weights: vec![1.0], origin: MeasureOrigin::default() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Half width `N` of the window the atoms live on.
    pub fn half_width(&self) -> usize {
        self.samples[0].u.len() / 2
    }

    /// Index of the atom whose cumulative weight first exceeds `x` in `[0, 1)`.
    pub fn atom_at_quantile(&self, x: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if x < acc {
                return k;
            }
        }
        self.samples.len() - 1
    }

    /// Sub-measure on the given atoms with renormalized weights.
    pub fn restrict(&self, atoms: &[usize]) -> Result<Self, MeasureError> {
        let total: f64 = atoms.iter().map(|&k| self.weights[k]).sum();
        let samples = atoms.iter().map(|&k| self.samples[k].clone()).collect();
        let weights = atoms.iter().map(|&k| self.weights[k] / total).collect();
        Self::new(samples, weights, self.origin).or_else(|e| match e {
            // renormalization can miss 1 by a few ulps
            MeasureError::Weights { .. } => {
                let samples = atoms.iter().map(|&k| self.samples[k].clone()).collect();
                Self::uniform(samples, self.origin)
            }
            other => Err(other),
        })
    }

    /// `sum_j w_j (|u_j|^2 + |v_j|^2)`.
    pub fn second_moment(&self) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(s, w)| w * s.norm_sq()).sum()
    }

    /// `sum_j w_j (b2 |u_j|^2 + b1 |v_j|^2)`.
    pub fn weighted_second_moment(&self, params: &ModelParams) -> f64 {
        self.samples
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * crate::lattice::energy(s, params))
            .sum()
    }

    /// Mean of the atoms.
    pub fn mean(&self) -> LatticeState {
        let dim = self.samples[0].u.len();
        let mut u = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        for (s, w) in self.samples.iter().zip(&self.weights) {
            for i in 0..dim {
                u[i] += w * s.u[i];
                v[i] += w * s.v[i];
            }
        }
        LatticeState { u, v }
    }
}

/// Smooth cutoff `theta` vanishing on `|s| <= 1` and equal to one on
/// `|s| >= 2`, with a quintic smoothstep in between.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CutoffProfile;

impl CutoffProfile {
    pub fn theta(&self, s: f64) -> f64 {
        let x = libm::fabs(s) - 1.0;
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    /// `sum_j w_j sum_{|i| >= n} (u_{j,i}^2 + v_{j,i}^2)`
    pub hard: f64,
    /// `sum_j w_j sum_i theta(i / n)^2 (u_{j,i}^2 + v_{j,i}^2)`
    pub smooth: f64,
}

/// Hard and cutoff-weighted tail second moments beyond index `n`.
pub fn tail_mass(mu: &EmpiricalMeasure, n: usize, cutoff: &CutoffProfile) -> Result<TailMass, MeasureError> {
    let half = mu.half_width();
    if n == 0 || n > half {
        return Err(MeasureError::TailIndex { n, max: half });
    }
    let dim = 2 * half + 1;
    let mut hard_w = vec![0.0; dim];
    let mut smooth_w = vec![0.0; dim];
    for idx in 0..dim {
        let site = idx as i64 - half as i64;
        hard_w[idx] = if site.unsigned_abs() as usize >= n { 1.0 } else { 0.0 };
        let th = cutoff.theta(site as f64 / n as f64);
        smooth_w[idx] = th * th;
    }
    let (mut hard, mut smooth) = (0.0, 0.0);
    for (s, w) in mu.samples.iter().zip(&mu.weights) {
        for idx in 0..dim {
            let e = s.u[idx] * s.u[idx] + s.v[idx] * s.v[idx];
            hard += w * hard_w[idx] * e;
            smooth += w * smooth_w[idx] * e;
        }
    }
    Ok(TailMass { hard, smooth })
}

/// Estimator for the bounded-Lipschitz distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceMethod {
    /// Exact for two point masses.
    ClosedFormDiracs,
    /// Exact linear program, at most [`LP_ATOM_BUDGET`] atoms in total.
    LpOracle,
    /// Best of `functions` random admissible test functions (a lower bound).
    RandomTestFunctions { functions: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub value: f64,
    /// Bound on `|value - d_BL|`. For random test functions this is the
    /// optimality gap against the exact program on a subsample.
    pub error_bound: f64,
}

/// `2 d / (2 + d)`, the distance between point masses `d` apart.
pub fn dirac_distance(d: f64) -> f64 {
    2.0 * d / (2.0 + d)
}

/// Union of the supports with signed masses `mu - nu`, identical atoms
/// merged and cancelled atoms dropped.
fn signed_support<'a>(mu: &'a EmpiricalMeasure, nu: &'a EmpiricalMeasure) -> (Vec<&'a LatticeState>, Vec<f64>) {
    let mut atoms: Vec<&LatticeState> = Vec::new();
    let mut sigma: Vec<f64> = Vec::new();
    let entries = mu
        .samples
        .iter()
        .zip(mu.weights.iter().copied())
        .chain(nu.samples.iter().zip(nu.weights.iter().map(|w| -w)));
    for (s, w) in entries {
        match atoms.iter().position(|a| *a == s) {
            Some(k) => sigma[k] += w,
            None => {
                atoms.push(s);
                sigma.push(w);
            }
        }
    }
    let keep: Vec<usize> = (0..atoms.len()).filter(|&k| libm::fabs(sigma[k]) > 1e-15).collect();
    (keep.iter().map(|&k| atoms[k]).collect(), keep.iter().map(|&k| sigma[k]).collect())
}

fn distance_matrix(atoms: &[&LatticeState]) -> Vec<f64> {
    let n = atoms.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let x = atoms[i].distance(atoms[j]);
            d[i * n + j] = x;
            d[j * n + i] = x;
        }
    }
    d
}

fn check_dims(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(), MeasureError> {
    if mu.is_empty() || nu.is_empty() {
        return Err(MeasureError::Empty);
    }
    if mu.samples[0].u.len() != nu.samples[0].u.len() {
        return Err(MeasureError::DimensionMismatch);
    }
    Ok(())
}

fn lp_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    let atoms = mu.len() + nu.len();
    if atoms > LP_ATOM_BUDGET {
        return Err(MeasureError::BudgetExceeded { atoms, budget: LP_ATOM_BUDGET });
    }
    let (support, sigma) = signed_support(mu, nu);
    if support.len() < 2 {
        return Ok(0.0);
    }
    let dist = distance_matrix(&support);
    Ok(bounded_lipschitz(&sigma, &dist)?.value.clamp(0.0, 2.0))
}

/// Value of the best random admissible test function.
fn random_test_functions(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, functions: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (support, sigma) = signed_support(mu, nu);
    let n = support.len();
    if n < 2 {
        return 0.0;
    }
    let dist = distance_matrix(&support);
    let mut best: f64 = 0.0;
    let mut phi = vec![0.0; n];
    for r in 0..functions {
        let a: f64 = rng.random_range(0.02..0.98);
        let lip = 1.0 - a;
        if r % 2 == 0 {
            // inf-convolution of the sign pattern, the shape of optimal test functions
            for i in 0..n {
                let mut m = f64::INFINITY;
                for k in 0..n {
                    let target = if sigma[k] > 0.0 { a } else { -a };
                    m = m.min(target + lip * dist[i * n + k]);
                }
                phi[i] = m.clamp(-a, a);
            }
        } else {
            // clipped distance bump around a random atom
            let c = rng.random_range(0..n);
            let radius = dist[c * n + rng.random_range(0..n)] * rng.random::<f64>();
            for i in 0..n {
                phi[i] = (lip * (radius - dist[c * n + i])).clamp(-a, a);
            }
        }
        let value: f64 = sigma.iter().zip(&phi).map(|(s, p)| s * p).sum();
        best = best.max(libm::fabs(value));
    }
    best
}

/// Draw at most `k` atoms of `mu` without replacement.
fn subsample(mu: &EmpiricalMeasure, k: usize, rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure, MeasureError> {
    if mu.len() <= k {
        return Ok(mu.clone());
    }
    let mut atoms = index::sample(rng, mu.len(), k).into_vec();
    atoms.sort_unstable();
    mu.restrict(&atoms)
}

/// Bounded-Lipschitz distance
/// `sup { int phi d(mu - nu) : |phi|_inf + Lip(phi) <= 1 }`.
pub fn dual_lipschitz_distance(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    method: DistanceMethod,
) -> Result<DistanceEstimate, MeasureError> {
    check_dims(mu, nu)?;
    match method {
        DistanceMethod::ClosedFormDiracs => {
            if mu.len() != 1 || nu.len() != 1 {
                return Err(MeasureError::NotDirac);
            }
            let d = mu.samples[0].distance(&nu.samples[0]);
            Ok(DistanceEstimate { value: dirac_distance(d), error_bound: 0.0 })
        }
        DistanceMethod::LpOracle => {
            let value = lp_distance(mu, nu)?;
            Ok(DistanceEstimate { value, error_bound: 1e-9 })
        }
        DistanceMethod::RandomTestFunctions { functions, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let value = random_test_functions(mu, nu, functions, &mut rng);
            let half = LP_ATOM_BUDGET / 2;
            let gap = if mu.len() + nu.len() <= LP_ATOM_BUDGET {
                lp_distance(mu, nu)? - value
            } else {
                let a = subsample(mu, half, &mut rng)?;
                let b = subsample(nu, half, &mut rng)?;
                lp_distance(&a, &b)? - random_test_functions(&a, &b, functions, &mut rng)
            };
            Ok(DistanceEstimate { value, error_bound: gap.max(0.0) })
        }
    }
}

/// Summary of repeated subsampled estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicates: Vec<f64>,
}

impl BootstrapEstimate {
    /// Mean, standard deviation and a central percentile interval.
    pub fn from_replicates(mut replicates: Vec<f64>, level: f64) -> Self {
        let r = replicates.len() as f64;
        let mean = replicates.iter().sum::<f64>() / r;
        let var = if replicates.len() > 1 {
            replicates.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        let mut sorted = replicates.clone();
        sorted.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        let ci_lo = quantile_sorted(&sorted, tail);
        let ci_hi = quantile_sorted(&sorted, 1.0 - tail);
        replicates.shrink_to_fit();
        Self { mean, sd: libm::sqrt(var), ci_lo, ci_hi, replicates }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Exact distance between random subsamples of `per_measure` atoms each,
/// repeated `replicates` times.
pub fn subsampled_distance(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    per_measure: usize,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapEstimate, MeasureError> {
    let values = (0..replicates)
        .map(|r| subsample_replicate(mu, nu, per_measure, seed, r as u64))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BootstrapEstimate::from_replicates(values, 0.95))
}

/// Replicate `replicate` of [`subsampled_distance`]; each replicate has its
/// own generator stream, so replicates can be evaluated in any order.
pub fn subsample_replicate(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    per_measure: usize,
    seed: u64,
    replicate: u64,
) -> Result<f64, MeasureError> {
    check_dims(mu, nu)?;
    let per_measure = per_measure.min(LP_ATOM_BUDGET / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let a = subsample(mu, per_measure, &mut rng)?;
    let b = subsample(nu, per_measure, &mut rng)?;
    lp_distance(&a, &b)
}

/// Distance between two disjoint random subsamples of one measure: a draw
/// from the estimator's null distribution when both sides share a law.
pub fn split_replicate(pool: &EmpiricalMeasure, per_measure: usize, seed: u64, replicate: u64) -> Result<f64, MeasureError> {
    let per_measure = per_measure.min(LP_ATOM_BUDGET / 2).min(pool.len() / 2);
    if per_measure == 0 {
        return Err(MeasureError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let atoms = index::sample(&mut rng, pool.len(), 2 * per_measure).into_vec();
    let (mut left, mut right) = (atoms[..per_measure].to_vec(), atoms[per_measure..].to_vec());
    left.sort_unstable();
    right.sort_unstable();
    lp_distance(&pool.restrict(&left)?, &pool.restrict(&right)?)
}

/// Exact `W1` with the product-norm ground distance.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_dims(mu, nu)?;
    let atoms = mu.len() + nu.len();
    if atoms > TRANSPORT_ATOM_BUDGET {
        return Err(MeasureError::BudgetExceeded { atoms, budget: TRANSPORT_ATOM_BUDGET });
    }
    let plan = transport(&mu.weights, &nu.weights, |i, j| mu.samples[i].distance(&nu.samples[j]))?;
    Ok(plan.cost)
}

/// Bounded-Lipschitz distance computed as
/// `max_{a in [0, 1]} W(mu, nu)` under the truncated ground cost
/// `min((1 - a) d, 2a)`, which is concave in `a`. Independent of the LP.
pub fn dual_lipschitz_by_transport(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_dims(mu, nu)?;
    let atoms = mu.len() + nu.len();
    if atoms > TRANSPORT_ATOM_BUDGET {
        return Err(MeasureError::BudgetExceeded { atoms, budget: TRANSPORT_ATOM_BUDGET });
    }
    let n = mu.len();
    let m = nu.len();
    let dist: Vec<f64> = (0..n * m).map(|k| mu.samples[k / m].distance(&nu.samples[k % m])).collect();
    let value = |a: f64| -> Result<f64, MeasureError> {
        Ok(transport(&mu.weights, &nu.weights, |i, j| ((1.0 - a) * dist[i * m + j]).min(2.0 * a))?.cost)
    };
    let g = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = value(x1)?;
    let mut f2 = value(x2)?;
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = value(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = value(x1)?;
        }
    }
    Ok(f1.max(f2))
}

/// `inf_t (a1 ^ a2) - 1/2 - 4 alpha^2 |delta(t)|^2 (b1 + b2)` over `times`.
pub fn compute_varpi(params: &ModelParams, forcing: &ForcingSpec, trunc: &TruncationConfig, times: &[f64]) -> f64 {
    let base = params.a1.min(params.a2) - 0.5;
    let k = 4.0 * forcing.alpha * forcing.alpha * (params.b1 + params.b2);
    times
        .iter()
        .map(|&t| base - k * forcing.delta_norm_sq(t, trunc))
        .fold(f64::INFINITY, f64::min)
}

/// The same infimum over the whole real line, when `delta` is bounded.
pub fn compute_varpi_exact(params: &ModelParams, forcing: &ForcingSpec, trunc: &TruncationConfig) -> Option<f64> {
    let sup = forcing.delta_norm_sq_sup(trunc)?;
    let k = 4.0 * forcing.alpha * forcing.alpha * (params.b1 + params.b2);
    Some(params.a1.min(params.a2) - 0.5 - k * sup)
}

/// Quadrature value of the forcing functional and its error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingIntegral {
    pub value: f64,
    /// Bound on the part of the integral below the truncated lower limit.
    pub truncation_bound: f64,
    /// The lower limit actually used.
    pub lower_limit: f64,
}

/// `int_{-inf}^tau e^{-varpi (tau - s)} g(s) ds` with
/// `g = sum_k |kappa_k|^2 + sum_k |h_k|^2 + |f1|^2 + |f2|^2 + |delta|^2`,
/// by the trapezoid rule with step `step`.
///
/// The lower limit is placed where the weight, corrected for the backward
/// growth of `g`, drops below `1e-12`; the remaining tail is bounded
/// analytically.
pub fn compute_r_tau(
    tau: f64,
    varpi: f64,
    forcing: &ForcingSpec,
    trunc: &TruncationConfig,
    step: f64,
) -> Result<ForcingIntegral, MeasureError> {
    if !(varpi > 0.0) {
        return Err(MeasureError::HypothesisViolated { varpi });
    }
    let bounds = forcing.backward_bounds(tau, trunc);
    if bounds.is_empty() {
        return Ok(ForcingIntegral { value: 0.0, truncation_bound: 0.0, lower_limit: tau });
    }
    let growth = bounds.iter().map(|b| b.1).fold(0.0, f64::max);
    if growth >= varpi {
        return Err(MeasureError::NonIntegrable { growth, varpi });
    }
    let rate = varpi - growth;
    let span = libm::log(1e12) / rate;
    let n = libm::ceil(span / step).max(1.0) as usize;
    let h = span / n as f64;
    let g = |r: f64| {
        let s = tau - r;
        libm::exp(-varpi * r) * (forcing.forcing_norm_sq(s, trunc) + forcing.delta_norm_sq(s, trunc))
    };
    let mut sum = 0.5 * (g(0.0) + g(span));
    for k in 1..n {
        sum += g(k as f64 * h);
    }
    let truncation_bound = bounds
        .iter()
        .map(|&(c, gk)| c * libm::exp(-(varpi - gk) * span) / (varpi - gk))
        .sum();
    Ok(ForcingIntegral { value: sum * h, truncation_bound, lower_limit: tau - span })
}

/// Dissipativity constants at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub varpi: f64,
    pub r_tau: f64,
    /// Squared radius `C R(tau)` of the absorbing ball.
    pub l1_tau: f64,
    pub k_radius: f64,
    /// Calibrated constant `C`.
    pub constant: f64,
    pub hypothesis_holds: bool,
}

/// Assemble `varpi`, `R(tau)` and `L1(tau) = C R(tau)`. `varpi` is taken
/// over the whole line when `delta` is bounded and over `times` otherwise.
pub fn compute_absorbing_radius(
    tau: f64,
    params: &ModelParams,
    forcing: &ForcingSpec,
    trunc: &TruncationConfig,
    times: &[f64],
    step: f64,
    constant: f64,
) -> Result<DissipativityReport, MeasureError> {
    let varpi = compute_varpi_exact(params, forcing, trunc).unwrap_or_else(|| compute_varpi(params, forcing, trunc, times));
    let r = compute_r_tau(tau, varpi, forcing, trunc, step)?;
    let l1_tau = constant * r.value;
    Ok(DissipativityReport {
        varpi,
        r_tau: r.value,
        l1_tau,
        k_radius: libm::sqrt(l1_tau),
        constant,
        hypothesis_holds: true,
    })
}
