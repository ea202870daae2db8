use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use selkov_core::lattice::LatticeState;
use selkov_core::measure::{
    dirac_distance, dual_lipschitz_by_transport, dual_lipschitz_distance, split_replicate, subsample_replicate,
    subsampled_distance, wasserstein1,
    DistanceMethod, EmpiricalMeasure, MeasureOrigin,
};
use selkov_core::MeasureError;

fn cloud(rng: &mut ChaCha8Rng, atoms: usize, sites: usize, shift: f64, spread: f64) -> EmpiricalMeasure {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..sites).map(|_| shift + spread * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let samples = (0..atoms).map(|_| LatticeState { u: draw(rng), v: draw(rng) }).collect();
    EmpiricalMeasure::uniform(samples, MeasureOrigin::default()).unwrap()
}

fn weighted_cloud(rng: &mut ChaCha8Rng, atoms: usize, sites: usize, spread: f64) -> EmpiricalMeasure {
    let mu = cloud(rng, atoms, sites, 0.0, spread);
    let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[..atoms - 1].iter().sum();
    weights[atoms - 1] = 1.0 - head;
    EmpiricalMeasure::new(mu.samples, weights, MeasureOrigin::default()).unwrap()
}

fn point(x: f64) -> LatticeState {
    LatticeState { u: vec![0.0, x, 0.0], v: vec![0.0; 3] }
}

#[test]
fn dirac_pairs_match_closed_form() {
    for d in [0.1, 1.0, 2.0, 10.0] {
        let a = EmpiricalMeasure::dirac(point(0.0));
        let b = EmpiricalMeasure::dirac(point(d));
        let lp = dual_lipschitz_distance(&a, &b, DistanceMethod::LpOracle).unwrap().value;
        let cf = dual_lipschitz_distance(&a, &b, DistanceMethod::ClosedFormDiracs).unwrap().value;
        assert!((lp - dirac_distance(d)).abs() < 1e-9);
        assert!((cf - lp).abs() < 1e-9);
        assert!((dual_lipschitz_by_transport(&a, &b).unwrap() - cf).abs() < 1e-9);
    }
}

#[test]
fn lp_matches_transport_characterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30 {
        let (n, m) = (1 + trial % 7, 2 + trial % 5);
        let spread = [0.1, 0.5, 2.0][trial % 3];
        let mu = weighted_cloud(&mut rng, n, 3, spread);
        let nu = cloud(&mut rng, m, 3, 0.3, spread);
        let lp = dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle).unwrap().value;
        let ot = dual_lipschitz_by_transport(&mu, &nu).unwrap();
        assert!((lp - ot).abs() < 1e-8, "trial {trial}: lp {lp} vs transport {ot}");
    }
}

#[test]
fn lp_at_full_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = cloud(&mut rng, 100, 5, 0.0, 1.0);
    let nu = cloud(&mut rng, 100, 5, 0.4, 1.0);
    let lp = dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle).unwrap().value;
    let ot = dual_lipschitz_by_transport(&mu, &nu).unwrap();
    assert!((lp - ot).abs() < 1e-8, "{lp} vs {ot}");
    let big = cloud(&mut rng, 101, 5, 0.0, 1.0);
    assert!(matches!(
        dual_lipschitz_distance(&big, &nu, DistanceMethod::LpOracle),
        Err(MeasureError::BudgetExceeded { atoms: 201, budget: 200 })
    ));
}

#[test]
fn bounded_by_wasserstein_and_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let spread = [0.05, 0.5, 3.0, 20.0][trial % 4];
        let mu = cloud(&mut rng, 3 + trial % 9, 2, 0.0, spread);
        let nu = cloud(&mut rng, 2 + trial % 11, 2, spread * 0.3, spread);
        let bl = dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle).unwrap().value;
        let w1 = wasserstein1(&mu, &nu).unwrap();
        assert!(bl <= w1.min(2.0) + 1e-9, "trial {trial}: {bl} > min(2, {w1})");
    }
}

#[test]
fn metric_axioms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let a = cloud(&mut rng, 6, 2, 0.0, 1.0);
        let b = cloud(&mut rng, 7, 2, 0.5, 1.0);
        let c = cloud(&mut rng, 5, 2, -0.5, 2.0);
        let d = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| {
            dual_lipschitz_distance(x, y, DistanceMethod::LpOracle).unwrap().value
        };
        assert_eq!(d(&a, &a), 0.0);
        assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
        assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }
}

#[test]
fn random_test_functions_bound_from_below() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mu = cloud(&mut rng, 40, 3, 0.0, 1.0);
    let nu = cloud(&mut rng, 40, 3, 0.5, 1.0);
    let exact = dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle).unwrap().value;
    let est = dual_lipschitz_distance(&mu, &nu, DistanceMethod::RandomTestFunctions { functions: 200, seed: 1 }).unwrap();
    assert!(est.value <= exact + 1e-12);
    assert!((exact - est.value - est.error_bound).abs() < 1e-9);
    assert!(est.value > 0.8 * exact, "{} vs {exact}", est.value);
}

#[test]
fn subsampled_estimates_are_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mu = cloud(&mut rng, 500, 2, 0.0, 1.0);
    let nu = cloud(&mut rng, 500, 2, 1.0, 1.0);
    let a = subsampled_distance(&mu, &nu, 50, 8, 4).unwrap();
    let b = subsampled_distance(&mu, &nu, 50, 8, 4).unwrap();
    assert_eq!(a, b);
    assert!(a.ci_lo <= a.mean && a.mean <= a.ci_hi);
    assert_eq!(a.replicates.len(), 8);
}

#[test]
fn split_replicates_separate_disjoint_halves() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pool = cloud(&mut rng, 60, 2, 0.0, 1.0);
    let a = split_replicate(&pool, 30, 5, 0).unwrap();
    assert_eq!(a, split_replicate(&pool, 30, 5, 0).unwrap());
    assert_ne!(a, split_replicate(&pool, 30, 5, 1).unwrap());
    assert!(a > 0.0 && a <= 2.0);
    // both halves together use every atom of a 2-atom pool
    let two = EmpiricalMeasure::uniform(vec![point(0.0), point(1.0)], MeasureOrigin::default()).unwrap();
    assert!((split_replicate(&two, 5, 0, 0).unwrap() - dirac_distance(1.0)).abs() < 1e-9);
    assert!(matches!(split_replicate(&EmpiricalMeasure::dirac(point(0.0)), 1, 0, 0), Err(MeasureError::Empty)));
}

#[test]
fn subsample_replicates_match_the_summary() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mu = cloud(&mut rng, 50, 2, 0.0, 1.0);
    let nu = cloud(&mut rng, 50, 2, 0.5, 1.0);
    let est = subsampled_distance(&mu, &nu, 20, 4, 9).unwrap();
    let mean: f64 = (0..4).map(|r| subsample_replicate(&mu, &nu, 20, 9, r).unwrap()).sum::<f64>() / 4.0;
    assert!((est.mean - mean).abs() < 1e-12);
}

#[test]
fn wasserstein_one_dimensional_oracle() {
    // on a line W1 between equal-size uniform clouds pairs sorted atoms
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in [5, 40, 300] {
        let xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = (0..n).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal) + 0.3).collect();
        let mu = EmpiricalMeasure::uniform(xs.iter().map(|&x| point(x)).collect(), MeasureOrigin::default()).unwrap();
        let nu = EmpiricalMeasure::uniform(ys.iter().map(|&y| point(y)).collect(), MeasureOrigin::default()).unwrap();
        let (mut a, mut b) = (xs.clone(), ys.clone());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let oracle: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
        let w = wasserstein1(&mu, &nu).unwrap();
        assert!((w - oracle).abs() < 1e-10 * (1.0 + oracle), "n = {n}: {w} vs {oracle}");
    }
}

#[test]
fn wasserstein_dirac_and_translation() {
    let a = EmpiricalMeasure::dirac(point(0.0));
    let b = EmpiricalMeasure::dirac(point(3.5));
    assert!((wasserstein1(&a, &b).unwrap() - 3.5).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mu = cloud(&mut rng, 30, 2, 0.0, 0.2);
    let shift = [0.6, -0.8];
    let moved: Vec<LatticeState> = mu
        .samples
        .iter()
        .map(|s| LatticeState { u: s.u.iter().zip(shift).map(|(x, c)| x + c).collect(), v: s.v.clone() })
        .collect();
    let nu = EmpiricalMeasure::uniform(moved, MeasureOrigin::default()).unwrap();
    assert!((wasserstein1(&mu, &nu).unwrap() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_never_exceeds_two(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, spread in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = cloud(&mut rng, n, 2, 0.0, spread);
        let nu = cloud(&mut rng, m, 2, spread, spread);
        let d = dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle).unwrap().value;
        prop_assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn wasserstein_is_symmetric(seed in any::<u64>(), n in 1usize..15, m in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = weighted_cloud(&mut rng, n, 2, 1.0);
        let nu = weighted_cloud(&mut rng, m, 2, 2.0);
        let ab = wasserstein1(&mu, &nu).unwrap();
        let ba = wasserstein1(&nu, &mu).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10 * (1.0 + ab));
    }
}
