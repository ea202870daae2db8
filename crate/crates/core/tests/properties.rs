use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selkov_core::forcing::{ForcingSpec, ModeField, SiteField, SpatialProfile, TimeEnvelope};
use selkov_core::lattice::{
    eval_f, eval_g, local_lipschitz_constants, Boundary, LatticeState, ModelParams, NoiseIntensity, TruncationConfig,
};
use selkov_core::measure::{
    compute_absorbing_radius, compute_r_tau, compute_varpi, compute_varpi_exact, tail_mass, CutoffProfile,
    EmpiricalMeasure, MeasureOrigin,
};
use selkov_core::quad::adaptive_simpson;

fn in_ball(rng: &mut ChaCha8Rng, sites: usize, radius: f64) -> LatticeState {
    let mut u: Vec<f64> = (0..sites).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut v: Vec<f64> = (0..sites).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = (u.iter().chain(&v).map(|x| x * x).sum::<f64>()).sqrt();
    let scale = radius * rng.random::<f64>().powf(0.25) / norm;
    u.iter_mut().chain(v.iter_mut()).for_each(|x| *x *= scale);
    LatticeState { u, v }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn lipschitz_constants_bound_measured_ratios() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (p, n) in [(1u32, 2.0), (1, 1.0), (2, 1.5), (3, 1.0)] {
        let (c1, c2) = local_lipschitz_constants(n, p);
        let (mut worst_f, mut worst_g) = (0.0f64, 0.0f64);
        for _ in 0..2_500 {
            let a = in_ball(&mut rng, 3, n);
            // nearby pairs probe the derivative, far pairs the secant
            let b = if rng.random::<bool>() {
                in_ball(&mut rng, 3, n)
            } else {
                let mut b = a.clone();
                b.u.iter_mut().chain(b.v.iter_mut()).for_each(|x| *x += 1e-4 * rng.random_range(-1.0..1.0));
                if b.norm_sq().sqrt() > n {
                    continue;
                }
                b
            };
            let den = sq_dist(&a.u, &b.u) + sq_dist(&a.v, &b.v);
            if den == 0.0 {
                continue;
            }
            worst_f = worst_f.max(sq_dist(&eval_f(&a, p), &eval_f(&b, p)) / den);
            let den_g = sq_dist(&a.u, &b.u);
            if den_g > 0.0 {
                worst_g = worst_g.max(sq_dist(&eval_g(&a.u, p), &eval_g(&b.u, p)) / den_g);
            }
        }
        assert!(worst_f <= c1, "p = {p}, n = {n}: F ratio {worst_f} > {c1}");
        assert!(worst_g <= c2, "p = {p}, n = {n}: G ratio {worst_g} > {c2}");
    }
}

#[test]
fn identical_pairs_have_zero_lipschitz_numerator() {
    let s = LatticeState { u: vec![0.3, -1.2, 0.5], v: vec![1.0, 0.0, -0.4] };
    assert_eq!(sq_dist(&eval_f(&s, 2), &eval_f(&s, 2)), 0.0);
    assert_eq!(sq_dist(&eval_g(&s.u, 2), &eval_g(&s.u, 2)), 0.0);
}

fn one_site_forcing(f: TimeEnvelope, h: TimeEnvelope, kappa: TimeEnvelope, delta: TimeEnvelope) -> ForcingSpec {
    let here = SpatialProfile::Compact { radius: 0 };
    ForcingSpec {
        f1: SiteField { envelope: f, profile: here },
        f2: SiteField { envelope: f, profile: here },
        h: ModeField { envelope: h, profile: here, mode_ratio: 1.0 },
        kappa: ModeField { envelope: kappa, profile: here, mode_ratio: 1.0 },
        delta: ModeField { envelope: delta, profile: here, mode_ratio: 1.0 },
        ..ForcingSpec::zero()
    }
}

#[test]
fn forcing_integral_matches_refined_quadrature() {
    let trunc = TruncationConfig::new(1, Boundary::ZeroDirichlet).unwrap();
    let forcing = one_site_forcing(
        TimeEnvelope::ExpDecay { amplitude: 1.0, rate: 1.0 },
        TimeEnvelope::Cos { amplitude: 1.0, omega: 2.0, phase: 0.0 },
        TimeEnvelope::Sin { amplitude: 1.0, omega: 2.0, phase: 0.0 },
        TimeEnvelope::Gaussian { amplitude: 1.0, width: 1.0 },
    );
    let varpi = 3.0;
    let r = compute_r_tau(0.0, varpi, &forcing, &trunc, 0.001).unwrap();
    // e^{-3r} (2 e^{2r} + cos^2 + sin^2 + e^{-2 r^2}), integrated adaptively
    let integrand = |r: f64| {
        let s = -r;
        (-varpi * r).exp()
            * (2.0 * (-2.0 * s).exp() + (2.0 * s).cos().powi(2) + (2.0 * s).sin().powi(2) + (-2.0 * s * s).exp())
    };
    let oracle = adaptive_simpson(&integrand, 0.0, 40.0, 1e-14);
    assert!((r.value - oracle).abs() < 1e-6 * oracle, "{} vs {oracle}", r.value);
    // closed form: 2 + 1/3 + int_0^inf e^{-3r - 2r^2} dr
    let gauss_part = adaptive_simpson(&|r: f64| (-3.0 * r - 2.0 * r * r).exp(), 0.0, 20.0, 1e-15);
    assert!((oracle - (2.0 + 1.0 / 3.0 + gauss_part)).abs() < 1e-10);
}

#[test]
fn forcing_integral_refuses_divergence() {
    let trunc = TruncationConfig::new(1, Boundary::ZeroDirichlet).unwrap();
    let forcing = one_site_forcing(
        TimeEnvelope::ExpDecay { amplitude: 1.0, rate: 1.0 },
        TimeEnvelope::ZERO,
        TimeEnvelope::ZERO,
        TimeEnvelope::ZERO,
    );
    // |f(tau - r)|^2 grows like e^{2r}
    assert!(compute_r_tau(0.0, 1.5, &forcing, &trunc, 0.01).is_err());
    assert!(compute_r_tau(0.0, 2.5, &forcing, &trunc, 0.01).is_ok());
}

#[test]
fn forcing_integral_scales_quadratically() {
    let trunc = TruncationConfig::new(2, Boundary::ZeroDirichlet).unwrap();
    let base = |s: f64| {
        one_site_forcing(
            TimeEnvelope::Constant { value: 0.7 * s },
            TimeEnvelope::Cos { amplitude: 0.4 * s, omega: 2.0, phase: 0.0 },
            TimeEnvelope::Sin { amplitude: 0.2 * s, omega: 2.0, phase: 0.0 },
            TimeEnvelope::Constant { value: 0.3 * s },
        )
    };
    let r1 = compute_r_tau(1.0, 1.2, &base(1.0), &trunc, 0.001).unwrap().value;
    let r3 = compute_r_tau(1.0, 1.2, &base(3.0), &trunc, 0.001).unwrap().value;
    assert!((r3 / r1 - 9.0).abs() < 1e-9);
}

#[test]
fn absorbing_radius_of_unforced_system_is_zero() {
    let trunc = TruncationConfig::new(2, Boundary::ZeroDirichlet).unwrap();
    let params = ModelParams::section7(NoiseIntensity::ZERO);
    let report = compute_absorbing_radius(0.0, &params, &ForcingSpec::zero(), &trunc, &[0.0], 0.01, 4.0).unwrap();
    assert_eq!(report.l1_tau, 0.0);
    assert_eq!(report.k_radius, 0.0);
    assert!(report.varpi > 0.0);
}

#[test]
fn varpi_grid_minimum_matches_dense_oracle() {
    let trunc = TruncationConfig::new(1, Boundary::ZeroDirichlet).unwrap();
    let mut forcing = ForcingSpec::zero();
    forcing.alpha = 0.3;
    forcing.delta = ModeField {
        envelope: TimeEnvelope::Gaussian { amplitude: 1.0, width: 2.0 },
        profile: SpatialProfile::Uniform,
        mode_ratio: 1.0,
    };
    let params = ModelParams { a1: 2.0, a2: 3.0, ..ModelParams::section7(NoiseIntensity::ZERO) };
    let coarse: Vec<f64> = (0..=40).map(|k| -5.0 + 0.25 * k as f64 + 0.1).collect();
    let dense: Vec<f64> = (0..=100_000).map(|k| -5.0 + 1e-4 * k as f64).collect();
    let v_coarse = compute_varpi(&params, &forcing, &trunc, &coarse);
    let v_dense = compute_varpi(&params, &forcing, &trunc, &dense);
    let exact = compute_varpi_exact(&params, &forcing, &trunc).unwrap();
    // the envelope peaks at t = 0; a grid 0.1 away misses at most the curvature term
    let k = 4.0 * 0.09 * 2.0 * 3.0;
    assert!(v_coarse >= v_dense && v_coarse - v_dense <= k * (1.0 - (-2.0 * 0.01f64 / 4.0).exp()) + 1e-12);
    assert!((v_dense - exact).abs() < 1e-12);
    assert_eq!(compute_varpi(&params, &ForcingSpec { alpha: 0.0, ..forcing }, &trunc, &coarse), 1.5);
}

fn random_cloud(seed: u64, atoms: usize, half: usize) -> EmpiricalMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2 * half + 1;
    let samples = (0..atoms)
        .map(|_| LatticeState {
            u: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            v: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        })
        .collect();
    EmpiricalMeasure::uniform(samples, MeasureOrigin::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tail_mass_is_monotone_and_sandwiched(seed in any::<u64>(), atoms in 1usize..20, half in 2usize..24) {
        let mu = random_cloud(seed, atoms, half);
        let mut prev = f64::INFINITY;
        for n in 1..=half {
            let t = tail_mass(&mu, n, &CutoffProfile).unwrap();
            prop_assert!(t.hard <= prev);
            prev = t.hard;
            prop_assert!(t.smooth <= t.hard + 1e-12);
            if 2 * n <= half {
                let far = tail_mass(&mu, 2 * n, &CutoffProfile).unwrap();
                prop_assert!(far.hard <= t.smooth + 1e-12);
            }
        }
        prop_assert!(tail_mass(&mu, 1, &CutoffProfile).unwrap().hard <= mu.second_moment() + 1e-12);
    }

    #[test]
    fn second_moment_matches_dense_sum(seed in any::<u64>(), atoms in 1usize..30) {
        let mu = random_cloud(seed, atoms, 3);
        let mut oracle = 0.0;
        for s in mu.samples.iter().rev() {
            for x in s.v.iter().chain(&s.u).rev() {
                oracle += x * x / atoms as f64;
            }
        }
        prop_assert!((mu.second_moment() - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn varpi_decreases_with_alpha_and_delta(a1 in 0.6f64..5.0, alpha in 0.0f64..2.0, extra in 0.0f64..1.0, amp in 0.0f64..2.0) {
        let trunc = TruncationConfig::new(1, Boundary::ZeroDirichlet).unwrap();
        let params = ModelParams { a1, ..ModelParams::section7(NoiseIntensity::ZERO) };
        let forcing = |alpha: f64, amp: f64| ForcingSpec {
            alpha,
            delta: ModeField::uniform(TimeEnvelope::Constant { value: amp }),
            ..ForcingSpec::zero()
        };
        let t = [0.0];
        let base = compute_varpi(&params, &forcing(alpha, amp), &trunc, &t);
        prop_assert!(compute_varpi(&params, &forcing(alpha + extra, amp), &trunc, &t) <= base);
        prop_assert!(compute_varpi(&params, &forcing(alpha, amp + extra), &trunc, &t) <= base);
    }
}
