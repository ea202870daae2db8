//! Deterministic skeleton of the reversible Selkov lattice system.
//!
//! States live on a symmetric window `{-N, ..., N}` of the integer lattice.
//! Vectors are stored with index `0` holding site `-N`, so site `i` sits at
//! position `i + N`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::forcing::ForcingSpec;
use crate::{LatticeError, ParamViolation};

/// How out-of-window neighbours are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Sites outside the window hold zero.
    #[default]
    ZeroDirichlet,
    /// The window wraps around onto itself.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub half_width: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl TruncationConfig {
    pub fn new(half_width: usize, boundary: Boundary) -> Result<Self, LatticeError> {
        let trunc = Self { half_width, boundary };
        trunc.validate()?;
        Ok(trunc)
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        if self.half_width == 0 {
            return Err(LatticeError::EmptyWindow);
        }
        Ok(())
    }

    /// Number of lattice sites, `2N + 1`.
    pub fn sites(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Lattice site of a storage position.
    pub fn site(&self, index: usize) -> i64 {
        index as i64 - self.half_width as i64
    }

    /// Storage position of a lattice site, if it lies inside the window.
    pub fn index(&self, site: i64) -> Option<usize> {
        let idx = site + self.half_width as i64;
        (0..self.sites() as i64).contains(&idx).then_some(idx as usize)
    }

    fn check_len(&self, len: usize) -> Result<(), LatticeError> {
        if len != self.sites() {
            return Err(LatticeError::LengthMismatch { expected: self.sites(), found: len });
        }
        Ok(())
    }

    #[inline]
    fn left(&self, u: &[f64], idx: usize) -> f64 {
        match (idx, self.boundary) {
            (0, Boundary::ZeroDirichlet) => 0.0,
            (0, Boundary::Periodic) => u[u.len() - 1],
            _ => u[idx - 1],
        }
    }

    #[inline]
    fn right(&self, u: &[f64], idx: usize) -> f64 {
        let last = u.len() - 1;
        match self.boundary {
            Boundary::ZeroDirichlet if idx == last => 0.0,
            Boundary::Periodic if idx == last => u[0],
            _ => u[idx + 1],
        }
    }
}

/// Noise intensities `(eps1, eps2, gamma1, gamma2)`.
///
/// `eps*` scale the Wiener and jump terms of the `u` equation, `gamma*` those
/// of the `v` equation. The all-zero tuple is the deterministic limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseIntensity {
    pub eps1: f64,
    pub eps2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl NoiseIntensity {
    pub const ZERO: Self = Self { eps1: 0.0, eps2: 0.0, gamma1: 0.0, gamma2: 0.0 };

    /// The diagonal direction `c * (1, 1, 1, 1)`.
    pub fn diagonal(c: f64) -> Self {
        Self { eps1: c, eps2: c, gamma1: c, gamma2: c }
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|&c| c == 0.0)
    }

    pub fn components(&self) -> [f64; 4] {
        [self.eps1, self.eps2, self.gamma1, self.gamma2]
    }

    /// Euclidean distance to another intensity tuple.
    pub fn distance(&self, other: &Self) -> f64 {
        let a = self.components();
        let b = other.components();
        libm::sqrt(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
    }
}

/// Deterministic model constants plus the noise intensity tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub d1: f64,
    pub d2: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub p: u32,
    #[serde(default)]
    pub lambda: NoiseIntensity,
}

impl ModelParams {
    /// The single-site demo model `du = (-2.5u + u^2 v - u^3 + f) dt + ...`,
    /// `dv = (-v - u^2 v + u^3 + f) dt + ...`.
    pub fn section7(lambda: NoiseIntensity) -> Self {
        Self { d1: 0.0, d2: 0.0, a1: 2.5, a2: 1.0, b1: 1.0, b2: 1.0, p: 1, lambda }
    }

    /// Collects every violated constraint. Diffusion may be zero for
    /// single-site runs, where the coupling has no effect.
    pub fn violations(&self) -> Vec<ParamViolation> {
        let mut out = Vec::new();
        let positive = [("a1", self.a1), ("a2", self.a2), ("b1", self.b1), ("b2", self.b2)];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                out.push(ParamViolation::NotPositive { name, value });
            }
        }
        for (name, value) in [("d1", self.d1), ("d2", self.d2)] {
            if !(value >= 0.0 && value.is_finite()) {
                out.push(ParamViolation::Negative { name, value });
            }
        }
        if self.p < 1 {
            out.push(ParamViolation::ExponentTooSmall { p: self.p });
        }
        let lambda = [
            ("eps1", self.lambda.eps1),
            ("eps2", self.lambda.eps2),
            ("gamma1", self.lambda.gamma1),
            ("gamma2", self.lambda.gamma2),
        ];
        for (name, value) in lambda {
            if !(0.0..=1.0).contains(&value) {
                out.push(ParamViolation::IntensityOutOfRange { name, value });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(LatticeError::InvalidParams(v))
        }
    }

    pub fn with_lambda(mut self, lambda: NoiseIntensity) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Truncated `(u, v)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LatticeState {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self, LatticeError> {
        if u.len() != v.len() {
            return Err(LatticeError::LengthMismatch { expected: u.len(), found: v.len() });
        }
        Ok(Self { u, v })
    }

    pub fn zeros(trunc: &TruncationConfig) -> Self {
        Self { u: vec![0.0; trunc.sites()], v: vec![0.0; trunc.sites()] }
    }

    /// Same value at every site.
    pub fn constant(trunc: &TruncationConfig, u: f64, v: f64) -> Self {
        Self { u: vec![u; trunc.sites()], v: vec![v; trunc.sites()] }
    }

    pub fn sites(&self) -> usize {
        self.u.len()
    }

    /// Squared product norm `|u|^2 + |v|^2`.
    pub fn norm_sq(&self) -> f64 {
        dot(&self.u, &self.u) + dot(&self.v, &self.v)
    }

    /// Product-norm distance to another state of the same shape.
    pub fn distance(&self, other: &Self) -> f64 {
        libm::sqrt(self.distance_sq(other))
    }

    pub fn distance_sq(&self, other: &Self) -> f64 {
        let du: f64 = self.u.iter().zip(&other.u).map(|(a, b)| (a - b) * (a - b)).sum();
        let dv: f64 = self.v.iter().zip(&other.v).map(|(a, b)| (a - b) * (a - b)).sum();
        du + dv
    }

    /// Storage index of the first non-finite entry in either component.
    pub fn first_non_finite(&self) -> Option<usize> {
        first_non_finite(&self.u).into_iter().chain(first_non_finite(&self.v)).min()
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn check_shape(&self, trunc: &TruncationConfig) -> Result<(), LatticeError> {
        trunc.check_len(self.u.len())?;
        trunc.check_len(self.v.len())
    }
}

pub(crate) fn first_non_finite(x: &[f64]) -> Option<usize> {
    x.iter().position(|a| !a.is_finite())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x^n` by repeated squaring.
#[inline]
pub fn powi(x: f64, mut n: u32) -> f64 {
    let mut base = x;
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

/// Discrete negative Laplacian `(Au)_i = -u_{i-1} + 2u_i - u_{i+1}`.
pub fn apply_a(u: &[f64], trunc: &TruncationConfig) -> Result<Vec<f64>, LatticeError> {
    trunc.check_len(u.len())?;
    let mut out = vec![0.0; u.len()];
    apply_a_into(u, trunc, &mut out);
    Ok(out)
}

pub(crate) fn apply_a_into(u: &[f64], trunc: &TruncationConfig, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = -trunc.left(u, i) + 2.0 * u[i] - trunc.right(u, i);
    }
}

/// Forward difference `(Bu)_i = u_{i+1} - u_i` on the window sites.
///
/// Under `ZeroDirichlet` the full-lattice `Bu` also has one entry outside the
/// window, `(Bu)_{-N-1} = u_{-N}`; [`b_norm_sq`] accounts for it.
pub fn apply_b(u: &[f64], trunc: &TruncationConfig) -> Result<Vec<f64>, LatticeError> {
    trunc.check_len(u.len())?;
    Ok((0..u.len()).map(|i| trunc.right(u, i) - u[i]).collect())
}

/// `||Bu||^2` of the full-lattice forward difference of the window state.
pub fn b_norm_sq(u: &[f64], trunc: &TruncationConfig) -> Result<f64, LatticeError> {
    b_inner(u, u, trunc)
}

/// `<Bu, Bw>` over the full lattice.
pub fn b_inner(u: &[f64], w: &[f64], trunc: &TruncationConfig) -> Result<f64, LatticeError> {
    let bu = apply_b(u, trunc)?;
    let bw = apply_b(w, trunc)?;
    let mut acc = dot(&bu, &bw);
    if trunc.boundary == Boundary::ZeroDirichlet {
        acc += u[0] * w[0];
    }
    Ok(acc)
}

/// `F(u, v)_i = u_i^{2p} v_i`.
pub fn eval_f(state: &LatticeState, p: u32) -> Vec<f64> {
    state.u.iter().zip(&state.v).map(|(&u, &v)| powi(u, 2 * p) * v).collect()
}

/// `G(u)_i = u_i^{2p+1}`.
pub fn eval_g(u: &[f64], p: u32) -> Vec<f64> {
    u.iter().map(|&x| powi(x, 2 * p + 1)).collect()
}

/// Drift of both components at time `t`.
pub fn eval_drift(
    state: &LatticeState,
    t: f64,
    params: &ModelParams,
    forcing: &ForcingSpec,
    trunc: &TruncationConfig,
) -> Result<(Vec<f64>, Vec<f64>), LatticeError> {
    state.check_shape(trunc)?;
    let f1 = forcing.f1.sample(t, trunc);
    let f2 = forcing.f2.sample(t, trunc);
    let mut du = vec![0.0; trunc.sites()];
    let mut dv = vec![0.0; trunc.sites()];
    drift_into(state, &f1, &f2, params, trunc, &mut du, &mut dv);
    if let Some(idx) = first_non_finite(&du).into_iter().chain(first_non_finite(&dv)).min() {
        return Err(LatticeError::BlowUp { site: trunc.site(idx), step: None });
    }
    Ok((du, dv))
}

/// Allocation-free drift kernel; the caller checks finiteness.
pub(crate) fn drift_into(
    state: &LatticeState,
    f1: &[f64],
    f2: &[f64],
    params: &ModelParams,
    trunc: &TruncationConfig,
    du: &mut [f64],
    dv: &mut [f64],
) {
    let (u, v) = (&state.u, &state.v);
    let two_p = 2 * params.p;
    for i in 0..u.len() {
        let lap_u = -trunc.left(u, i) + 2.0 * u[i] - trunc.right(u, i);
        let lap_v = -trunc.left(v, i) + 2.0 * v[i] - trunc.right(v, i);
        let even = powi(u[i], two_p);
        let f = even * v[i];
        let g = even * u[i];
        let react = params.b1 * f - params.b2 * g;
        du[i] = -params.d1 * lap_u - params.a1 * u[i] + react + f1[i];
        dv[i] = -params.d2 * lap_v - params.a2 * v[i] - react + f2[i];
    }
}

/// Lyapunov functional `b2 |u|^2 + b1 |v|^2`.
pub fn energy(state: &LatticeState, params: &ModelParams) -> f64 {
    params.b2 * dot(&state.u, &state.u) + params.b1 * dot(&state.v, &state.v)
}

/// Site-wise sign condition on the reaction cross terms:
/// `2 b1 b2 X^{2p+1} Y - X^{2p} (b2^2 X^2 + b1^2 Y^2) <= 0`, with a slack of
/// `1e-12` times the magnitude of the terms.
pub fn check_sign_inequality(x: f64, y: f64, p: u32, b1: f64, b2: f64) -> bool {
    let even = powi(x, 2 * p);
    let cross = 2.0 * b1 * b2 * even * x * y;
    let square = even * (b2 * b2 * x * x + b1 * b1 * y * y);
    cross - square <= 1e-12 * (1.0 + libm::fabs(cross) + libm::fabs(square))
}

/// Local Lipschitz constants of `F` and `G` on balls of radius `n`.
///
/// With `|x|, |y| <= n` the mean value theorem gives
/// `|x^r - y^r| <= r n^{r-1} |x - y|`, from which
/// `|F_1 - F_2|^2 <= 8 p^2 n^{4p} (|du|^2 + |dv|^2)` and
/// `|G_1 - G_2|^2 <= (2p+1)^2 n^{4p} |du|^2`. The `1 + n^{4p}` form keeps both
/// constants above one so the inner-product bounds follow from Cauchy-Schwarz.
pub fn local_lipschitz_constants(n: f64, p: u32) -> (f64, f64) {
    let grow = 1.0 + powi(n, 4 * p);
    let pf = p as f64;
    let c1 = 8.0 * pf * pf * grow;
    let c2 = (2.0 * pf + 1.0) * (2.0 * pf + 1.0) * grow;
    (c1, c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{ForcingSpec, SiteField, TimeEnvelope};
    use proptest::prelude::*;

    fn dirichlet(n: usize) -> TruncationConfig {
        TruncationConfig::new(n, Boundary::ZeroDirichlet).unwrap()
    }

    fn periodic(n: usize) -> TruncationConfig {
        TruncationConfig::new(n, Boundary::Periodic).unwrap()
    }

    fn dense_a(trunc: &TruncationConfig) -> Vec<Vec<f64>> {
        let n = trunc.sites();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = 2.0;
            if i > 0 {
                m[i][i - 1] = -1.0;
            } else if trunc.boundary == Boundary::Periodic {
                m[i][n - 1] -= 1.0;
            }
            if i + 1 < n {
                m[i][i + 1] = -1.0;
            } else if trunc.boundary == Boundary::Periodic {
                m[i][0] -= 1.0;
            }
        }
        m
    }

    #[test]
    fn a_on_unit_vector() {
        let t = dirichlet(2);
        let e0 = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(apply_a(&e0, &t).unwrap(), vec![0.0, -1.0, 2.0, -1.0, 0.0]);
    }

    #[test]
    fn a_annihilates_constants_when_periodic() {
        assert_eq!(apply_a(&[1.0, 1.0, 1.0], &periodic(1)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn a_matches_dense_matrix() {
        let t = dirichlet(1);
        let u = [1.0, 2.0, 4.0];
        let m = dense_a(&t);
        let dense: Vec<f64> = m.iter().map(|row| dot(row, &u)).collect();
        assert_eq!(dense, vec![0.0, -1.0, 6.0]);
        assert_eq!(apply_a(&u, &t).unwrap(), dense);
    }

    #[test]
    fn b_on_unit_vector() {
        assert_eq!(apply_b(&[0.0, 1.0, 0.0], &dirichlet(1)).unwrap(), vec![1.0, -1.0, 0.0]);
        assert_eq!(apply_b(&[3.0, 3.0, 3.0], &periodic(1)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let err = apply_a(&[1.0, 2.0], &dirichlet(1)).unwrap_err();
        assert_eq!(err, LatticeError::LengthMismatch { expected: 3, found: 2 });
        assert!(apply_b(&[1.0; 5], &dirichlet(1)).is_err());
        assert!(TruncationConfig::new(0, Boundary::Periodic).is_err());
    }

    #[test]
    fn nonlinearities() {
        let s = LatticeState::new(vec![2.0], vec![3.0]).unwrap();
        assert_eq!(eval_f(&s, 1), vec![12.0]);
        let s = LatticeState::new(vec![-2.0], vec![3.0]).unwrap();
        assert_eq!(eval_f(&s, 1), vec![12.0]);
        let s = LatticeState::new(vec![5.0], vec![0.0]).unwrap();
        assert_eq!(eval_f(&s, 3), vec![0.0]);
        assert_eq!(eval_g(&[2.0], 1), vec![8.0]);
        assert_eq!(eval_g(&[-2.0], 1), vec![-8.0]);
    }

    #[test]
    fn section7_drift_at_origin_time() {
        let params = ModelParams::section7(NoiseIntensity::ZERO);
        let trunc = dirichlet(1);
        let mut forcing = ForcingSpec::zero();
        let decay = SiteField::uniform(TimeEnvelope::ExpDecay { amplitude: 1.0, rate: 1.0 });
        forcing.f1 = decay.clone();
        forcing.f2 = decay;
        let state = LatticeState::constant(&trunc, 2.0, 0.0);
        let (du, dv) = eval_drift(&state, 0.0, &params, &forcing, &trunc).unwrap();
        // scalar reference: -2.5*2 + 2^2*0 - 2^3 + e^0, -0 - 0 + 2^3 + e^0
        let su = -2.5 * 2.0 + 4.0 * 0.0 - 8.0 + 1.0;
        let sv = -0.0 - 4.0 * 0.0 + 8.0 + 1.0;
        assert_eq!((su, sv), (-12.0, 9.0));
        assert!(du.iter().all(|&x| x == su));
        assert!(dv.iter().all(|&x| x == sv));
    }

    #[test]
    fn zero_state_zero_drift() {
        let trunc = dirichlet(3);
        let params = ModelParams { d1: 1.0, d2: 1.0, a1: 1.0, a2: 1.0, b1: 1.0, b2: 1.0, p: 2, lambda: NoiseIntensity::ZERO };
        let (du, dv) =
            eval_drift(&LatticeState::zeros(&trunc), 1.3, &params, &ForcingSpec::zero(), &trunc).unwrap();
        assert!(du.iter().chain(&dv).all(|&x| x == 0.0));
    }

    #[test]
    fn drift_reports_blow_up_site() {
        let trunc = dirichlet(1);
        let params = ModelParams::section7(NoiseIntensity::ZERO);
        let state = LatticeState::new(vec![1e200, 0.0, 0.0], vec![0.0; 3]).unwrap();
        let err = eval_drift(&state, 0.0, &params, &ForcingSpec::zero(), &trunc).unwrap_err();
        assert_eq!(err, LatticeError::BlowUp { site: -1, step: None });
    }

    #[test]
    fn energy_values() {
        let params = ModelParams::section7(NoiseIntensity::ZERO);
        let trunc = dirichlet(2);
        assert_eq!(energy(&LatticeState::zeros(&trunc), &params), 0.0);
        let mut s = LatticeState::zeros(&trunc);
        s.u[2] = 2.0;
        s.v[2] = 3.0;
        assert_eq!(energy(&s, &params), 13.0);
    }

    #[test]
    fn sign_inequality_cases() {
        assert!(check_sign_inequality(0.0, 7.0, 1, 1.0, 1.0));
        assert!(check_sign_inequality(1.0, 1.0, 1, 1.0, 1.0));
        assert!(check_sign_inequality(-3.0, 2.0, 2, 0.5, 4.0));
    }

    #[test]
    fn lipschitz_constants_grow_with_radius() {
        let (c1a, c2a) = local_lipschitz_constants(1.0, 1);
        let (c1b, c2b) = local_lipschitz_constants(2.0, 1);
        assert!(c1b > c1a && c2b > c2a);
        assert!(c1a >= 1.0 && c2a >= 1.0);
    }

    #[test]
    fn param_violations_are_all_listed() {
        let bad = ModelParams {
            d1: 1.0,
            d2: 1.0,
            a1: -1.0,
            a2: 0.0,
            b1: 1.0,
            b2: 1.0,
            p: 0,
            lambda: NoiseIntensity { eps1: 1.5, ..NoiseIntensity::ZERO },
        };
        let v = bad.violations();
        assert_eq!(v.len(), 4);
        assert!(v.contains(&ParamViolation::NotPositive { name: "a1", value: -1.0 }));
        assert!(v.contains(&ParamViolation::ExponentTooSmall { p: 0 }));
    }

    fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, len)
    }

    proptest! {
        #[test]
        fn summation_by_parts(n in 1usize..12, seed in vec_strategy(25), periodic_rule: bool) {
            let trunc = if periodic_rule { periodic(n) } else { dirichlet(n) };
            let u: Vec<f64> = seed.iter().cycle().take(trunc.sites()).copied().collect();
            let au = apply_a(&u, &trunc).unwrap();
            let lhs = dot(&au, &u);
            let rhs = b_norm_sq(&u, &trunc).unwrap();
            prop_assert!(rhs >= 0.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn a_is_symmetric(u in vec_strategy(9), w in vec_strategy(9), periodic_rule: bool) {
            let trunc = if periodic_rule { periodic(4) } else { dirichlet(4) };
            let lhs = dot(&apply_a(&u, &trunc).unwrap(), &w);
            let rhs = dot(&u, &apply_a(&w, &trunc).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let bb = b_inner(&u, &w, &trunc).unwrap();
            prop_assert!((lhs - bb).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn g_matches_naive_product(u in vec_strategy(7)) {
            let g = eval_g(&u, 2);
            for (x, gx) in u.iter().zip(&g) {
                let naive = x * x * x * x * x;
                prop_assert!((gx - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
            }
        }

        #[test]
        fn drift_is_odd(u in vec_strategy(7), v in vec_strategy(7)) {
            let trunc = dirichlet(3);
            let params = ModelParams { d1: 0.7, d2: 1.3, a1: 2.0, a2: 1.0, b1: 0.5, b2: 1.5, p: 1, lambda: NoiseIntensity::ZERO };
            let s = LatticeState::new(u.clone(), v.clone()).unwrap();
            let neg = LatticeState::new(u.iter().map(|x| -x).collect(), v.iter().map(|x| -x).collect()).unwrap();
            let forcing = ForcingSpec::zero();
            let (du, dv) = eval_drift(&s, 0.0, &params, &forcing, &trunc).unwrap();
            let (nu, nv) = eval_drift(&neg, 0.0, &params, &forcing, &trunc).unwrap();
            for (a, b) in du.iter().zip(&nu).chain(dv.iter().zip(&nv)) {
                prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn energy_matches_reverse_sum(u in vec_strategy(9), v in vec_strategy(9)) {
            let params = ModelParams { d1: 1.0, d2: 1.0, a1: 1.0, a2: 1.0, b1: 0.3, b2: 2.0, p: 1, lambda: NoiseIntensity::ZERO };
            let s = LatticeState::new(u.clone(), v.clone()).unwrap();
            let mut oracle = 0.0;
            for i in (0..u.len()).rev() {
                oracle += 2.0 * u[i] * u[i] + 0.3 * v[i] * v[i];
            }
            let e = energy(&s, &params);
            prop_assert!(e >= 0.0);
            prop_assert!((e - oracle).abs() <= 1e-12 * (1.0 + oracle));
        }

        #[test]
        fn sign_inequality_sweep(x in -10.0f64..10.0, y in -10.0f64..10.0, p in 1u32..4, b1 in 0.1f64..3.0, b2 in 0.1f64..3.0) {
            prop_assert!(check_sign_inequality(x, y, p, b1, b2));
        }
    }
}
