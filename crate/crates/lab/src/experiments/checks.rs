//! Deterministic identity and solver suites on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use selkov_core::lattice::{
    apply_a, b_norm_sq, check_sign_inequality, dot, eval_f, eval_g, local_lipschitz_constants, Boundary, LatticeState,
    TruncationConfig,
};
use selkov_core::measure::{
    dirac_distance, dual_lipschitz_distance, wasserstein1, DistanceMethod, EmpiricalMeasure, MeasureOrigin,
};

use super::{num, obj, Check, ExperimentError, ExperimentOutput, Verdict};
use crate::config::RunConfig;
use crate::output::SeriesRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorParams {
    pub vectors: usize,
    pub max_half_width: usize,
    pub tolerance: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self { vectors: 1000, max_half_width: 40, tolerance: 1e-12 }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn operator_identity(cfg: &RunConfig, p: &OperatorParams) -> ExperimentOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut series = Vec::new();
    let mut worst: f64 = 0.0;
    for (label, boundary) in [("zero_dirichlet", Boundary::ZeroDirichlet), ("periodic", Boundary::Periodic)] {
        let mut worst_rule: f64 = 0.0;
        for k in 0..p.vectors {
            let half = rng.random_range(1..=p.max_half_width.max(1));
            let trunc = TruncationConfig::new(half, boundary).expect("half width >= 1");
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let u: Vec<f64> = (0..trunc.sites()).map(|_| scale * gaussian(&mut rng)).collect();
            let au = apply_a(&u, &trunc).expect("window length");
            let lhs = dot(&au, &u);
            let rhs = b_norm_sq(&u, &trunc).expect("window length");
            let rel = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
            worst_rule = worst_rule.max(rel);
            series.push(SeriesRow::point(k as f64, rel, label));
        }
        worst = worst.max(worst_rule);
    }
    let checks = vec![Check::new(
        "relative_error",
        worst <= p.tolerance,
        format!("max |<Au,u> - |Bu|^2| / |Bu|^2 = {worst:e} over {} vectors per boundary rule", p.vectors),
    )];
    ExperimentOutput {
        id: "operator-identity",
        verdict: Verdict::from_checks(&checks),
        claim: "discrete Laplacian identity <Au, u> = |Bu|^2 under both boundary rules",
        thresholds: obj([("relative_tolerance", num(p.tolerance))]),
        statistics: obj([("max_relative_error", num(worst)), ("vectors_per_rule", json!(p.vectors))]),
        checks,
        series,
        files: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DissipativityParams {
    pub predicate_samples: usize,
    pub lipschitz_pairs: usize,
    pub max_p: u32,
    pub value_range: f64,
}

impl Default for DissipativityParams {
    fn default() -> Self {
        Self { predicate_samples: 100_000, lipschitz_pairs: 10_000, max_p: 3, value_range: 10.0 }
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dissipativity(cfg: &RunConfig, p: &DissipativityParams) -> ExperimentOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = p.value_range;
    let mut failures = 0usize;
    for _ in 0..p.predicate_samples {
        let x = rng.random_range(-r..r);
        let y = rng.random_range(-r..r);
        let pp = rng.random_range(1..=p.max_p);
        let b1 = rng.random_range(1e-3..5.0);
        let b2 = rng.random_range(1e-3..5.0);
        if !check_sign_inequality(x, y, pp, b1, b2) {
            failures += 1;
        }
    }

    // local Lipschitz bounds on balls of random radius, several window sizes
    let mut worst_f: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    let mut series = Vec::new();
    for k in 0..p.lipschitz_pairs {
        let pp = rng.random_range(1..=p.max_p);
        let n = rng.random_range(0.1..2.0);
        let sites = rng.random_range(1..=9);
        let ball = |rng: &mut ChaCha8Rng| LatticeState {
            u: (0..sites).map(|_| rng.random_range(-n..n)).collect(),
            v: (0..sites).map(|_| rng.random_range(-n..n)).collect(),
        };
        let (a, b) = (ball(&mut rng), ball(&mut rng));
        let den_f = sq(&a.u, &b.u) + sq(&a.v, &b.v);
        let den_g = sq(&a.u, &b.u);
        let (c1, c2) = local_lipschitz_constants(n, pp);
        let rf = sq(&eval_f(&a, pp), &eval_f(&b, pp)) / den_f / c1;
        let rg = sq(&eval_g(&a.u, pp), &eval_g(&b.u, pp)) / den_g / c2;
        worst_f = worst_f.max(rf);
        worst_g = worst_g.max(rg);
        if k < 200 {
            series.push(SeriesRow::point(n, rf, "f_ratio"));
            series.push(SeriesRow::point(n, rg, "g_ratio"));
        }
    }
    let checks = vec![
        Check::new(
            "sign_condition",
            failures == 0,
            format!("{failures} of {} random (X, Y, p, b1, b2) violate the sign condition", p.predicate_samples),
        ),
        Check::new("lipschitz_f", worst_f <= 1.0, format!("max |F(a)-F(b)|^2 / (c1 |a-b|^2) = {worst_f:.6}")),
        Check::new("lipschitz_g", worst_g <= 1.0, format!("max |G(a)-G(b)|^2 / (c2 |a-b|^2) = {worst_g:.6}")),
    ];
    ExperimentOutput {
        id: "dissipativity-inequality",
        verdict: Verdict::from_checks(&checks),
        claim: "sign condition on the reaction cross terms and local Lipschitz bounds of F and G",
        thresholds: obj([("max_ratio", num(1.0)), ("allowed_sign_failures", json!(0))]),
        statistics: obj([
            ("sign_failures", json!(failures)),
            ("max_f_ratio", num(worst_f)),
            ("max_g_ratio", num(worst_g)),
        ]),
        checks,
        series,
        files: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceParams {
    pub dirac_separations: Vec<f64>,
    pub pairs: usize,
    pub triples: usize,
    pub tolerance: f64,
}

impl Default for DistanceParams {
    fn default() -> Self {
        Self { dirac_separations: vec![0.1, 1.0, 2.0, 10.0], pairs: 100, triples: 20, tolerance: 1e-9 }
    }
}

fn random_measure(rng: &mut ChaCha8Rng, sites: usize) -> EmpiricalMeasure {
    let atoms = rng.random_range(1..=15);
    let spread = 10f64.powf(rng.random_range(-1.5..1.5));
    let shift = rng.random_range(-1.0..1.0) * spread;
    let samples = (0..atoms)
        .map(|_| LatticeState {
            u: (0..sites).map(|_| shift + spread * gaussian(rng)).collect(),
            v: (0..sites).map(|_| spread * gaussian(rng)).collect(),
        })
        .collect();
    EmpiricalMeasure::uniform(samples, MeasureOrigin::default()).expect("nonempty")
}

pub fn distance_validation(cfg: &RunConfig, p: &DistanceParams) -> Result<ExperimentOutput, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sites = cfg.truncation.sites();
    let lp = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| -> Result<f64, ExperimentError> {
        Ok(dual_lipschitz_distance(a, b, DistanceMethod::LpOracle)?.value)
    };
    let mut series = Vec::new();

    let mut dirac_err: f64 = 0.0;
    for &d in &p.dirac_separations {
        let mut x = LatticeState::zeros(&cfg.truncation);
        let a = EmpiricalMeasure::dirac(x.clone());
        x.u[0] = d;
        let b = EmpiricalMeasure::dirac(x);
        let value = lp(&a, &b)?;
        dirac_err = dirac_err.max((value - dirac_distance(d)).abs());
        series.push(SeriesRow::point(d, value, "dirac_lp"));
        series.push(SeriesRow::point(d, dirac_distance(d), "dirac_closed_form"));
    }

    let mut bound_excess = f64::NEG_INFINITY;
    for k in 0..p.pairs {
        let a = random_measure(&mut rng, sites);
        let b = random_measure(&mut rng, sites);
        let bl = lp(&a, &b)?;
        let w1 = wasserstein1(&a, &b)?;
        bound_excess = bound_excess.max(bl - w1.min(2.0));
        series.push(SeriesRow::point(k as f64, bl, "pair_bl"));
        series.push(SeriesRow::point(k as f64, w1, "pair_w1"));
    }

    let (mut identity, mut asym, mut triangle) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..p.triples {
        let a = random_measure(&mut rng, sites);
        let b = random_measure(&mut rng, sites);
        let c = random_measure(&mut rng, sites);
        identity = identity.max(lp(&a, &a)?.abs());
        let (ab, ba) = (lp(&a, &b)?, lp(&b, &a)?);
        asym = asym.max((ab - ba).abs());
        triangle = triangle.max(lp(&a, &c)? - ab - lp(&b, &c)?);
    }

    let tol = p.tolerance;
    let checks = vec![
        Check::new("dirac_closed_form", dirac_err <= tol, format!("max |LP - 2d/(2+d)| = {dirac_err:e}")),
        Check::new(
            "bounded_by_min_two_w1",
            bound_excess <= tol,
            format!("max d_BL - min(2, W1) = {bound_excess:e} over {} pairs", p.pairs),
        ),
        Check::new("identity", identity <= tol, format!("max d(a, a) = {identity:e}")),
        Check::new("symmetry", asym <= tol, format!("max |d(a, b) - d(b, a)| = {asym:e}")),
        Check::new("triangle", triangle <= tol, format!("max d(a, c) - d(a, b) - d(b, c) = {triangle:e}")),
    ];
    Ok(ExperimentOutput {
        id: "distance-validation",
        verdict: Verdict::from_checks(&checks),
        claim: "bounded-Lipschitz distance solver: closed form on point masses, W1 bound and metric axioms",
        thresholds: obj([("tolerance", num(tol))]),
        statistics: obj([
            ("max_dirac_error", num(dirac_err)),
            ("max_bound_excess", num(bound_excess)),
            ("max_identity", num(identity)),
            ("max_asymmetry", num(asym)),
            ("max_triangle_excess", num(triangle)),
        ]),
        checks,
        series,
        files: Vec::new(),
    })
}
