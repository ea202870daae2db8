//! Forcing terms, noise coefficients and Levy/Wiener increment generation.
//!
//! Coefficient functions come from a closed catalog of named kernels, each a
//! product of a time envelope and a spatial or state-dependent shape, so that
//! configurations stay serializable and every bound below can be checked.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::lattice::TruncationConfig;
use crate::quad::adaptive_simpson;
use crate::ForcingViolation;

/// Scalar function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeEnvelope {
    Constant { value: f64 },
    /// `amplitude * cos(omega t + phase)`
    Cos {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * sin(omega t + phase)`
    Sin {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * exp(-rate t)`
    ExpDecay { amplitude: f64, rate: f64 },
    /// `amplitude * exp(-(t / width)^2)`
    Gaussian { amplitude: f64, width: f64 },
}

/// Periodicity class of an envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Periodicity {
    /// Constant in time, periodic with every period.
    Constant,
    Period(f64),
    None,
}

impl TimeEnvelope {
    pub const ZERO: Self = TimeEnvelope::Constant { value: 0.0 };
    pub const ONE: Self = TimeEnvelope::Constant { value: 1.0 };

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeEnvelope::Constant { value } => value,
            TimeEnvelope::Cos { amplitude, omega, phase } => amplitude * libm::cos(omega * t + phase),
            TimeEnvelope::Sin { amplitude, omega, phase } => amplitude * libm::sin(omega * t + phase),
            TimeEnvelope::ExpDecay { amplitude, rate } => amplitude * libm::exp(-rate * t),
            TimeEnvelope::Gaussian { amplitude, width } => {
                let s = t / width;
                amplitude * libm::exp(-s * s)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            TimeEnvelope::Constant { value } => value == 0.0,
            TimeEnvelope::Cos { amplitude, .. }
            | TimeEnvelope::Sin { amplitude, .. }
            | TimeEnvelope::ExpDecay { amplitude, .. }
            | TimeEnvelope::Gaussian { amplitude, .. } => amplitude == 0.0,
        }
    }

    pub fn periodicity(&self) -> Periodicity {
        if self.is_zero() {
            return Periodicity::Constant;
        }
        match *self {
            TimeEnvelope::Constant { .. } => Periodicity::Constant,
            TimeEnvelope::ExpDecay { rate, .. } if rate == 0.0 => Periodicity::Constant,
            TimeEnvelope::Cos { omega, .. } | TimeEnvelope::Sin { omega, .. } if omega != 0.0 => {
                Periodicity::Period(2.0 * PI / libm::fabs(omega))
            }
            TimeEnvelope::Cos { .. } | TimeEnvelope::Sin { .. } => Periodicity::Constant,
            _ => Periodicity::None,
        }
    }

    /// Whether the envelope repeats after `chi`.
    pub fn has_period(&self, chi: f64) -> bool {
        match self.periodicity() {
            Periodicity::Constant => true,
            Periodicity::Period(p) => {
                let ratio = chi / p;
                let nearest = libm::round(ratio);
                nearest >= 1.0 && libm::fabs(ratio - nearest) <= 1e-9 * ratio.max(1.0)
            }
            Periodicity::None => false,
        }
    }

    /// `sup_t |value(t)|`, or `None` when unbounded on the real line.
    pub fn sup_abs(&self) -> Option<f64> {
        match *self {
            TimeEnvelope::Constant { value } => Some(libm::fabs(value)),
            TimeEnvelope::Cos { amplitude, .. }
            | TimeEnvelope::Sin { amplitude, .. }
            | TimeEnvelope::Gaussian { amplitude, .. } => Some(libm::fabs(amplitude)),
            TimeEnvelope::ExpDecay { amplitude, rate } => {
                (amplitude == 0.0 || rate == 0.0).then_some(libm::fabs(amplitude))
            }
        }
    }

    /// Constants `(c, g)` with `value(tau - r)^2 <= c * exp(g r)` for `r >= 0`.
    pub fn backward_square_bound(&self, tau: f64) -> (f64, f64) {
        match *self {
            TimeEnvelope::ExpDecay { amplitude, rate } => {
                let c = amplitude * amplitude * libm::exp(-2.0 * rate * tau);
                (c, (2.0 * rate).max(0.0))
            }
            _ => {
                let s = self.sup_abs().unwrap_or(0.0);
                (s * s, 0.0)
            }
        }
    }

    fn nonnegative(&self) -> bool {
        match *self {
            TimeEnvelope::Constant { value } => value >= 0.0,
            TimeEnvelope::ExpDecay { amplitude, .. } | TimeEnvelope::Gaussian { amplitude, .. } => {
                amplitude >= 0.0
            }
            TimeEnvelope::Cos { amplitude, .. } | TimeEnvelope::Sin { amplitude, .. } => amplitude == 0.0,
        }
    }
}

/// Site dependence of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialProfile {
    /// One at every site.
    #[default]
    Uniform,
    /// `exp(-rate |i|)`
    Exponential { rate: f64 },
    /// One for `|i| <= radius`, zero beyond.
    Compact { radius: u64 },
}

impl SpatialProfile {
    #[inline]
    pub fn value(&self, site: i64) -> f64 {
        match *self {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Exponential { rate } => libm::exp(-rate * site.unsigned_abs() as f64),
            SpatialProfile::Compact { radius } => {
                if site.unsigned_abs() <= radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `sum_i profile(i)^2` over the window.
    pub fn window_sum_sq(&self, trunc: &TruncationConfig) -> f64 {
        (0..trunc.sites()).map(|k| self.value(trunc.site(k))).map(|x| x * x).sum()
    }
}

/// Deterministic per-site field `envelope(t) * profile(i)`, used for `f1`, `f2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteField {
    pub envelope: TimeEnvelope,
    #[serde(default)]
    pub profile: SpatialProfile,
}

impl SiteField {
    pub fn zero() -> Self {
        Self { envelope: TimeEnvelope::ZERO, profile: SpatialProfile::Uniform }
    }

    pub fn uniform(envelope: TimeEnvelope) -> Self {
        Self { envelope, profile: SpatialProfile::Uniform }
    }

    #[inline]
    pub fn value(&self, t: f64, site: i64) -> f64 {
        self.envelope.value(t) * self.profile.value(site)
    }

    pub fn sample(&self, t: f64, trunc: &TruncationConfig) -> Vec<f64> {
        let mut out = vec![0.0; trunc.sites()];
        self.sample_into(t, trunc, &mut out);
        out
    }

    pub(crate) fn sample_into(&self, t: f64, trunc: &TruncationConfig, out: &mut [f64]) {
        let e = self.envelope.value(t);
        for (k, o) in out.iter_mut().enumerate() {
            *o = e * self.profile.value(trunc.site(k));
        }
    }

    pub fn norm_sq(&self, t: f64, trunc: &TruncationConfig) -> f64 {
        let e = self.envelope.value(t);
        e * e * self.profile.window_sum_sq(trunc)
    }
}

/// Per-mode, per-site field `envelope(t) * profile(i) * mode_ratio^k`
/// (modes counted from zero); used for `h`, `kappa` and `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeField {
    pub envelope: TimeEnvelope,
    #[serde(default)]
    pub profile: SpatialProfile,
    #[serde(default = "one")]
    pub mode_ratio: f64,
}

fn one() -> f64 {
    1.0
}

impl ModeField {
    pub fn zero() -> Self {
        Self::uniform(TimeEnvelope::ZERO)
    }

    pub fn uniform(envelope: TimeEnvelope) -> Self {
        Self { envelope, profile: SpatialProfile::Uniform, mode_ratio: 1.0 }
    }

    #[inline]
    pub fn mode_factor(&self, mode: usize) -> f64 {
        crate::lattice::powi(self.mode_ratio, mode as u32)
    }

    #[inline]
    pub fn value(&self, t: f64, mode: usize, site: i64) -> f64 {
        self.envelope.value(t) * self.profile.value(site) * self.mode_factor(mode)
    }

    pub(crate) fn sample_into(&self, t: f64, mode: usize, trunc: &TruncationConfig, out: &mut [f64]) {
        let e = self.envelope.value(t) * self.mode_factor(mode);
        for (k, o) in out.iter_mut().enumerate() {
            *o = e * self.profile.value(trunc.site(k));
        }
    }

    /// `sum_k sum_i value(t, k, i)^2` over retained modes and window sites.
    pub fn norm_sq(&self, t: f64, modes: usize, trunc: &TruncationConfig) -> f64 {
        let e = self.envelope.value(t);
        let modal: f64 = (0..modes).map(|k| self.mode_factor(k)).map(|m| m * m).sum();
        e * e * modal * self.profile.window_sum_sq(trunc)
    }

    fn spatial_modal_sum_sq(&self, modes: usize, trunc: &TruncationConfig) -> f64 {
        let modal: f64 = (0..modes).map(|k| self.mode_factor(k)).map(|m| m * m).sum();
        modal * self.profile.window_sum_sq(trunc)
    }
}

/// State dependence of a noise kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateShape {
    Zero,
    /// `s`
    Linear,
    /// `s^2`
    Quadratic,
    /// `sin(s)`
    Sine,
    /// `s / sqrt(1 + s^2)`
    Saturating,
}

impl StateShape {
    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match self {
            StateShape::Zero => 0.0,
            StateShape::Linear => s,
            StateShape::Quadratic => s * s,
            StateShape::Sine => libm::sin(s),
            StateShape::Saturating => s / libm::sqrt(1.0 + s * s),
        }
    }
}

/// `sigma~(t, s) = envelope(t) * shape(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateKernel {
    pub envelope: TimeEnvelope,
    pub shape: StateShape,
}

impl StateKernel {
    pub fn zero() -> Self {
        Self { envelope: TimeEnvelope::ZERO, shape: StateShape::Zero }
    }

    #[inline]
    pub fn value(&self, t: f64, s: f64) -> f64 {
        self.envelope.value(t) * self.shape.value(s)
    }

    pub fn is_zero(&self) -> bool {
        self.envelope.is_zero() || self.shape == StateShape::Zero
    }
}

/// Jump-size dependence of the jump kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JumpFactor {
    #[default]
    One,
    /// `1 / (1 + y^2)`
    InverseOnePlusSquare,
}

impl JumpFactor {
    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        match self {
            JumpFactor::One => 1.0,
            JumpFactor::InverseOnePlusSquare => 1.0 / (1.0 + y * y),
        }
    }
}

/// `q~(t, s, y) = envelope(t) * shape(s) * factor(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpKernel {
    pub envelope: TimeEnvelope,
    pub shape: StateShape,
    #[serde(default)]
    pub factor: JumpFactor,
}

impl JumpKernel {
    pub fn zero() -> Self {
        Self { envelope: TimeEnvelope::ZERO, shape: StateShape::Zero, factor: JumpFactor::One }
    }

    #[inline]
    pub fn value(&self, t: f64, s: f64, y: f64) -> f64 {
        self.envelope.value(t) * self.shape.value(s) * self.factor.value(y)
    }

    pub fn is_zero(&self) -> bool {
        self.envelope.is_zero() || self.shape == StateShape::Zero
    }
}

/// All time-dependent coefficients of the lattice system.
///
/// The noise coefficients act site-wise as `sigma_{k,i}(t, s) = delta_{k,i}(t)
/// sigma~(t, s)` and `q_{k,i}(t, s, y) = delta_{k,i}(t) q~(t, s, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSpec {
    pub f1: SiteField,
    pub f2: SiteField,
    pub h: ModeField,
    pub kappa: ModeField,
    pub delta: ModeField,
    pub sigma: StateKernel,
    pub q: JumpKernel,
    /// Growth constant of the noise kernels.
    pub alpha: f64,
    /// Common period of all time-dependent coefficients, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    /// Number of retained noise modes.
    pub modes: usize,
}

impl ForcingSpec {
    /// No forcing and no noise coefficients.
    pub fn zero() -> Self {
        Self {
            f1: SiteField::zero(),
            f2: SiteField::zero(),
            h: ModeField::zero(),
            kappa: ModeField::zero(),
            delta: ModeField::zero(),
            sigma: StateKernel::zero(),
            q: JumpKernel::zero(),
            alpha: 1.0,
            chi: None,
            modes: 1,
        }
    }

    /// Single-mode coefficients of the one-site demo:
    /// `f = e^{-t}`, `h = cos 2t`, `kappa = sin 2t`, `delta = 1`,
    /// `sigma(t, x) = e^{-t^2} x^2`, `q(t, x, y) = e^{-t^2} x^2 / (1 + y^2)`.
    pub fn section7(alpha: f64) -> Self {
        let f = SiteField::uniform(TimeEnvelope::ExpDecay { amplitude: 1.0, rate: 1.0 });
        let gauss = TimeEnvelope::Gaussian { amplitude: 1.0, width: 1.0 };
        Self {
            f1: f.clone(),
            f2: f,
            h: ModeField::uniform(TimeEnvelope::Cos { amplitude: 1.0, omega: 2.0, phase: 0.0 }),
            kappa: ModeField::uniform(TimeEnvelope::Sin { amplitude: 1.0, omega: 2.0, phase: 0.0 }),
            delta: ModeField::uniform(TimeEnvelope::ONE),
            sigma: StateKernel { envelope: gauss, shape: StateShape::Quadratic },
            q: JumpKernel { envelope: gauss, shape: StateShape::Quadratic, factor: JumpFactor::InverseOnePlusSquare },
            alpha,
            chi: None,
            modes: 1,
        }
    }

    fn envelopes(&self) -> [(&'static str, TimeEnvelope); 7] {
        [
            ("f1", self.f1.envelope),
            ("f2", self.f2.envelope),
            ("h", self.h.envelope),
            ("kappa", self.kappa.envelope),
            ("delta", self.delta.envelope),
            ("sigma", self.sigma.envelope),
            ("q", self.q.envelope),
        ]
    }

    /// Whether every coefficient is constant in time.
    pub fn is_autonomous(&self) -> bool {
        self.envelopes().iter().all(|(_, e)| e.periodicity() == Periodicity::Constant)
    }

    /// Structural checks; all violations are reported.
    pub fn violations(&self) -> Vec<ForcingViolation> {
        let mut out = Vec::new();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            out.push(ForcingViolation::AlphaNotPositive { alpha: self.alpha });
        }
        if self.modes == 0 {
            out.push(ForcingViolation::NoModes);
        }
        if !self.delta.envelope.nonnegative() {
            out.push(ForcingViolation::NegativeDelta);
        }
        for (field, ratio) in [("h", self.h.mode_ratio), ("kappa", self.kappa.mode_ratio), ("delta", self.delta.mode_ratio)] {
            if !(0.0..=1.0).contains(&ratio) {
                out.push(ForcingViolation::ModeRatio { field, ratio });
            }
        }
        if let Some(chi) = self.chi {
            if !(chi > 0.0 && chi.is_finite()) {
                out.push(ForcingViolation::PeriodNotPositive { chi });
            } else {
                for (field, env) in self.envelopes() {
                    if !env.has_period(chi) {
                        out.push(ForcingViolation::NotPeriodic { field, chi });
                    }
                }
            }
        }
        out
    }

    /// `sigma_k(t, x)_i = delta_{k,i}(t) sigma~(t, x_i)` for every retained mode,
    /// checked against the growth bound `|sigma~(t, s)| <= alpha (1 + |s|)`.
    pub fn eval_sigma(
        &self,
        t: f64,
        x: &[f64],
        trunc: &TruncationConfig,
    ) -> Result<Vec<Vec<f64>>, ForcingViolation> {
        let mut out = Vec::with_capacity(self.modes);
        for k in 0..self.modes {
            let mut row = Vec::with_capacity(x.len());
            for (idx, &s) in x.iter().enumerate() {
                let site = trunc.site(idx);
                let d = self.delta.value(t, k, site);
                let kernel = self.sigma.value(t, s);
                if d > 0.0 && libm::fabs(kernel) > self.alpha * (1.0 + libm::fabs(s)) * (1.0 + 1e-9) {
                    return Err(ForcingViolation::GrowthBound { mode: k, site, t, s });
                }
                row.push(d * kernel);
            }
            out.push(row);
        }
        Ok(out)
    }

    /// `q_k(t, x, y)_i = delta_{k,i}(t) q~(t, x_i, y)` for every retained mode,
    /// checked against `int_{|y|<1} |q~(t, s, y)| nu(dy) <= alpha (1 + |s|)`.
    pub fn eval_q(
        &self,
        t: f64,
        x: &[f64],
        y: f64,
        levy: &LevyConfig,
        trunc: &TruncationConfig,
    ) -> Result<Vec<Vec<f64>>, ForcingViolation> {
        let mass = levy.small_jump_integral(|y| libm::fabs(self.q.factor.value(y)));
        let mut out = Vec::with_capacity(self.modes);
        for k in 0..self.modes {
            let mut row = Vec::with_capacity(x.len());
            for (idx, &s) in x.iter().enumerate() {
                let site = trunc.site(idx);
                let d = self.delta.value(t, k, site);
                let integral = libm::fabs(self.q.envelope.value(t) * self.q.shape.value(s)) * mass;
                if d > 0.0 && integral > self.alpha * (1.0 + libm::fabs(s)) * (1.0 + 1e-9) {
                    return Err(ForcingViolation::GrowthBound { mode: k, site, t, s });
                }
                row.push(d * self.q.value(t, s, y));
            }
            out.push(row);
        }
        Ok(out)
    }

    /// `||delta(t)||^2 = sum_k sum_i delta_{k,i}(t)^2`.
    pub fn delta_norm_sq(&self, t: f64, trunc: &TruncationConfig) -> f64 {
        self.delta.norm_sq(t, self.modes, trunc)
    }

    /// `sup_t ||delta(t)||^2`, or `None` if unbounded on the real line.
    pub fn delta_norm_sq_sup(&self, trunc: &TruncationConfig) -> Option<f64> {
        let s = self.delta.envelope.sup_abs()?;
        Some(s * s * self.delta.spatial_modal_sum_sq(self.modes, trunc))
    }

    /// `sum_k ||kappa_k||^2 + sum_k ||h_k||^2 + ||f1||^2 + ||f2||^2` at time `t`.
    pub fn forcing_norm_sq(&self, t: f64, trunc: &TruncationConfig) -> f64 {
        self.kappa.norm_sq(t, self.modes, trunc)
            + self.h.norm_sq(t, self.modes, trunc)
            + self.f1.norm_sq(t, trunc)
            + self.f2.norm_sq(t, trunc)
    }

    /// Terms `(c, g)` bounding the integrand of the forcing functional:
    /// `forcing_norm_sq(tau - r) + delta_norm_sq(tau - r) <= sum c e^{g r}`.
    pub fn backward_bounds(&self, tau: f64, trunc: &TruncationConfig) -> Vec<(f64, f64)> {
        let modal = |m: &ModeField| m.spatial_modal_sum_sq(self.modes, trunc);
        let parts = [
            (self.kappa.envelope, modal(&self.kappa)),
            (self.h.envelope, modal(&self.h)),
            (self.delta.envelope, modal(&self.delta)),
            (self.f1.envelope, self.f1.profile.window_sum_sq(trunc)),
            (self.f2.envelope, self.f2.profile.window_sum_sq(trunc)),
        ];
        parts
            .iter()
            .map(|(env, weight)| {
                let (c, g) = env.backward_square_bound(tau);
                (c * weight, g)
            })
            .filter(|(c, _)| *c > 0.0)
            .collect()
    }

    /// Largest deviation `|x(t + chi) - x(t)|` over the deterministic
    /// coefficients sampled at `times`; zero if no period is declared.
    pub fn periodicity_defect(&self, times: &[f64], trunc: &TruncationConfig) -> f64 {
        let Some(chi) = self.chi else { return 0.0 };
        let mut worst: f64 = 0.0;
        for &t in times {
            for idx in 0..trunc.sites() {
                let i = trunc.site(idx);
                for k in 0..self.modes {
                    for field in [&self.h, &self.kappa, &self.delta] {
                        worst = worst.max(libm::fabs(field.value(t + chi, k, i) - field.value(t, k, i)));
                    }
                }
                for field in [&self.f1, &self.f2] {
                    worst = worst.max(libm::fabs(field.value(t + chi, i) - field.value(t, i)));
                }
            }
            for s in [-1.0, 0.5, 2.0] {
                worst = worst.max(libm::fabs(self.sigma.value(t + chi, s) - self.sigma.value(t, s)));
                worst = worst.max(libm::fabs(self.q.value(t + chi, s, 0.5) - self.q.value(t, s, 0.5)));
            }
        }
        worst
    }
}

/// Jump-size distribution of the compound Poisson driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    Gaussian { sd: f64 },
    /// Uniform on `(-bound, bound)` with `bound < 1`.
    UniformSmall { bound: f64 },
}

/// Compound Poisson Levy measure `nu = intensity * law`, one per mode.
///
/// With `truncate_small` the law is conditioned on `|y| < 1` (rejection
/// sampling), so all jumps are small; otherwise jumps are drawn verbatim and
/// only the small ones are compensated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    pub intensity: f64,
    pub jump_law: JumpLaw,
    pub truncate_small: bool,
    pub m_jump_bound: f64,
}

impl LevyConfig {
    /// Poisson rate 2, standard Gaussian jump sizes, no truncation.
    pub fn section7() -> Self {
        Self { intensity: 2.0, jump_law: JumpLaw::Gaussian { sd: 1.0 }, truncate_small: false, m_jump_bound: 2.0 }
    }

    pub fn none() -> Self {
        Self { intensity: 0.0, jump_law: JumpLaw::Gaussian { sd: 1.0 }, truncate_small: true, m_jump_bound: 0.0 }
    }

    fn density(&self, y: f64) -> f64 {
        match self.jump_law {
            JumpLaw::Gaussian { sd } => {
                let z = y / sd;
                libm::exp(-0.5 * z * z) / (sd * libm::sqrt(2.0 * PI))
            }
            JumpLaw::UniformSmall { bound } => {
                if libm::fabs(y) < bound {
                    0.5 / bound
                } else {
                    0.0
                }
            }
        }
    }

    /// Integration range of the law restricted to `|y| < 1`.
    fn small_range(&self) -> f64 {
        match self.jump_law {
            JumpLaw::Gaussian { .. } => 1.0,
            JumpLaw::UniformSmall { bound } => bound.min(1.0),
        }
    }

    fn law_integral<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> f64 {
        adaptive_simpson(&|y| f(y) * self.density(y), lo, hi, 1e-15)
    }

    /// `P(|Y| < 1)` under the untruncated law.
    fn small_probability(&self) -> f64 {
        let r = self.small_range();
        self.law_integral(|_| 1.0, -r, r)
    }

    /// `int_{|y|<1} g(y) nu(dy)` for one mode.
    pub fn small_jump_integral<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        let r = self.small_range();
        let raw = self.law_integral(g, -r, r);
        if self.truncate_small {
            self.intensity * raw / self.small_probability()
        } else {
            self.intensity * raw
        }
    }

    /// `int (|y|^2 ^ 1) nu(dy)` for one mode.
    pub fn jump_activity(&self) -> f64 {
        if self.intensity == 0.0 {
            return 0.0;
        }
        let small = self.small_jump_integral(|y| y * y);
        if self.truncate_small {
            return small;
        }
        let large = match self.jump_law {
            JumpLaw::Gaussian { .. } => 1.0 - self.small_probability(),
            JumpLaw::UniformSmall { .. } => 0.0,
        };
        small + self.intensity * large
    }

    pub fn violations(&self, modes: usize) -> Vec<ForcingViolation> {
        let mut out = Vec::new();
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            out.push(ForcingViolation::Intensity { intensity: self.intensity });
        }
        match self.jump_law {
            JumpLaw::Gaussian { sd } if !(sd > 0.0 && sd.is_finite()) => {
                out.push(ForcingViolation::JumpLaw { reason: "gaussian sd must be positive" })
            }
            JumpLaw::UniformSmall { bound } if !(bound > 0.0 && bound < 1.0) => {
                out.push(ForcingViolation::JumpLaw { reason: "uniform bound must lie in (0, 1)" })
            }
            _ => {}
        }
        if out.is_empty() {
            let total = modes as f64 * self.jump_activity();
            if total > self.m_jump_bound * (1.0 + 1e-12) {
                out.push(ForcingViolation::JumpActivity { total, bound: self.m_jump_bound });
            }
        }
        out
    }

    /// One jump size from the (possibly truncated) law.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let y = match self.jump_law {
                JumpLaw::Gaussian { sd } => sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
                JumpLaw::UniformSmall { bound } => {
                    Uniform::new(-bound, bound).map(|u| u.sample(rng)).unwrap_or(0.0)
                }
            };
            if !self.truncate_small || libm::fabs(y) < 1.0 {
                return y;
            }
        }
    }
}

/// Per-mode constants entering the jump compensator
/// `dt * int_{|y|<1} (kappa + q(t, s, y)) nu(dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensator {
    /// `nu(|y| < 1)`
    pub small_mass: f64,
    /// `int_{|y|<1} factor(y) nu(dy)` for the configured jump factor.
    pub factor_mass: f64,
}

impl Compensator {
    pub fn new(levy: &LevyConfig, forcing: &ForcingSpec) -> Self {
        Self {
            small_mass: levy.small_jump_integral(|_| 1.0),
            factor_mass: levy.small_jump_integral(|y| forcing.q.factor.value(y)),
        }
    }

    /// `int_{|y|<1} (kappa + delta q~(t, s, y)) nu(dy)` at one site.
    #[inline]
    pub fn site_integral(&self, kappa: f64, delta: f64, q_env: f64, shape: f64) -> f64 {
        kappa * self.small_mass + delta * q_env * shape * self.factor_mass
    }
}

/// Result of sampling the growth bound on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// `max |sigma~(t, s)| / (alpha (1 + |s|))`
    pub max_sigma_ratio: f64,
    /// `max int |q~(t, s, y)| nu(dy) / (alpha (1 + |s|))`
    pub max_jump_ratio: f64,
    /// `(mode, site, t, s)` of the largest ratio.
    pub worst: Option<(usize, i64, f64, f64)>,
    pub passes: bool,
}

/// Sample the growth bound over `times x states`.
pub fn validate_growth_bound(
    forcing: &ForcingSpec,
    levy: &LevyConfig,
    trunc: &TruncationConfig,
    times: &[f64],
    states: &[f64],
) -> GrowthReport {
    let mass = levy.small_jump_integral(|y| libm::fabs(forcing.q.factor.value(y)));
    let mut max_sigma: f64 = 0.0;
    let mut max_jump: f64 = 0.0;
    let mut worst = None;
    let mut worst_ratio = 0.0;
    for &t in times {
        // locate a (mode, site) where delta is active at t
        let active = (0..forcing.modes)
            .flat_map(|k| (0..trunc.sites()).map(move |idx| (k, idx)))
            .map(|(k, idx)| (k, trunc.site(idx)))
            .find(|&(k, i)| forcing.delta.value(t, k, i) > 0.0);
        let Some((k, i)) = active else { continue };
        for &s in states {
            let denom = forcing.alpha * (1.0 + libm::fabs(s));
            let rs = libm::fabs(forcing.sigma.value(t, s)) / denom;
            let rj = libm::fabs(forcing.q.envelope.value(t) * forcing.q.shape.value(s)) * mass / denom;
            max_sigma = max_sigma.max(rs);
            max_jump = max_jump.max(rj);
            let r = rs.max(rj);
            if r > worst_ratio {
                worst_ratio = r;
                worst = Some((k, i, t, s));
            }
        }
    }
    GrowthReport {
        max_sigma_ratio: max_sigma,
        max_jump_ratio: max_jump,
        worst,
        passes: max_sigma <= 1.0 + 1e-9 && max_jump <= 1.0 + 1e-9,
    }
}

/// Master seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Words reserved per step in each ChaCha stream.
const STEP_STRIDE_BITS: u32 = 24;
/// Stream id reserved for initial-law sampling.
const INITIAL_STREAM: u64 = u64::MAX;

/// Counter-based noise source of one trajectory.
///
/// Every draw is a pure function of `(master seed, salt, trajectory, mode,
/// step)`: the ChaCha key is derived from the first three, the stream id is the
/// mode and the word position is the step, so results do not depend on the
/// order in which trajectories or steps are evaluated.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: [u8; 32],
}

impl NoiseStream {
    pub fn new(seed: SeedSpec, salt: u64, trajectory: u64) -> Self {
        let mut state = seed.master_seed;
        state = splitmix64(&mut state) ^ salt;
        state = splitmix64(&mut state) ^ trajectory;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { key }
    }

    fn rng(&self, stream: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        rng.set_word_pos((step as u128) << STEP_STRIDE_BITS);
        rng
    }

    /// Generator for initial-law sampling.
    pub fn initial_rng(&self) -> ChaCha8Rng {
        self.rng(INITIAL_STREAM, 0)
    }

    /// Wiener increment and jump batch of one mode at one step.
    pub fn mode_step(&self, mode: usize, step: u64, dt: f64, levy: &LevyConfig, jumps: &mut Vec<f64>) -> f64 {
        let mut rng = self.rng(mode as u64, step);
        let z: f64 = StandardNormal.sample(&mut rng);
        jumps.clear();
        let mean = levy.intensity * dt;
        if mean > 0.0 {
            let count = Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(0.0) as usize;
            for _ in 0..count {
                jumps.push(levy.sample_jump(&mut rng));
            }
        }
        z * libm::sqrt(dt)
    }
}

/// Noise of one step for all retained modes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepNoise {
    /// Wiener increments, one per mode, each `N(0, dt)`.
    pub dw: Vec<f64>,
    /// Jump sizes per mode.
    pub jumps: Vec<Vec<f64>>,
}

impl StepNoise {
    pub fn zero(modes: usize) -> Self {
        Self { dw: vec![0.0; modes], jumps: vec![Vec::new(); modes] }
    }

    pub fn fill(&mut self, stream: &NoiseStream, step: u64, dt: f64, levy: &LevyConfig, modes: usize) {
        self.dw.resize(modes, 0.0);
        self.jumps.resize(modes, Vec::new());
        for k in 0..modes {
            self.dw[k] = stream.mode_step(k, step, dt, levy, &mut self.jumps[k]);
        }
    }
}

/// `K` independent `N(0, dt)` draws at step `step`.
pub fn sample_wiener_increments(stream: &NoiseStream, step: u64, dt: f64, modes: usize) -> Vec<f64> {
    let mut scratch = Vec::new();
    let quiet = LevyConfig::none();
    (0..modes).map(|k| stream.mode_step(k, step, dt, &quiet, &mut scratch)).collect()
}

/// Jump sizes of every mode at step `step`: a `Poisson(intensity dt)` count
/// followed by that many draws from the jump law.
pub fn sample_jump_batch(stream: &NoiseStream, step: u64, dt: f64, levy: &LevyConfig, modes: usize) -> Vec<Vec<f64>> {
    let mut noise = StepNoise::zero(modes);
    noise.fill(stream, step, dt, levy, modes);
    noise.jumps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;

    fn one_site() -> TruncationConfig {
        TruncationConfig::new(1, Boundary::ZeroDirichlet).unwrap()
    }

    #[test]
    fn section7_sigma_values() {
        let f = ForcingSpec::section7(10.0);
        let trunc = one_site();
        let s = f.eval_sigma(0.0, &[2.0, 0.0, 2.0], &trunc).unwrap();
        assert_eq!(s, vec![vec![4.0, 0.0, 4.0]]);
        let s = f.eval_sigma(1.0, &[2.0, 2.0, 2.0], &trunc).unwrap();
        assert!((s[0][0] - 1.471_517_764_685_769).abs() < 1e-12);
        assert!((s[0][0] - 4.0 * libm::exp(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn section7_q_values() {
        let f = ForcingSpec::section7(10.0);
        let trunc = one_site();
        let levy = LevyConfig::section7();
        let q = f.eval_q(0.0, &[2.0, 0.0, 3.0], 1.0, &levy, &trunc).unwrap();
        assert_eq!(q[0][0], 2.0);
        assert_eq!(q[0][1], 0.0);
        let q = f.eval_q(0.0, &[3.0, 3.0, 3.0], 2.0, &levy, &trunc).unwrap();
        assert!((q[0][0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn growth_violation_is_located() {
        let mut f = ForcingSpec::section7(0.1);
        f.delta = ModeField::uniform(TimeEnvelope::ONE);
        let err = f.eval_sigma(0.0, &[0.0, 5.0, 0.0], &one_site()).unwrap_err();
        assert_eq!(err, ForcingViolation::GrowthBound { mode: 0, site: 0, t: 0.0, s: 5.0 });
    }

    #[test]
    fn growth_report() {
        let levy = LevyConfig::section7();
        let trunc = one_site();
        let times: Vec<f64> = (0..=20).map(|k| -2.0 + 0.2 * k as f64).collect();
        let states: Vec<f64> = (0..=100).map(|k| -5.0 + 0.1 * k as f64).collect();

        // alpha chosen as the grid supremum passes by construction
        let probe = ForcingSpec::section7(1.0);
        let r = validate_growth_bound(&probe, &levy, &trunc, &times, &states);
        let alpha = r.max_sigma_ratio.max(r.max_jump_ratio);
        let ok = validate_growth_bound(&ForcingSpec::section7(alpha), &levy, &trunc, &times, &states);
        assert!(ok.passes, "{ok:?}");

        let mut zero = ForcingSpec::section7(1.0);
        zero.sigma = StateKernel::zero();
        zero.q = JumpKernel::zero();
        let z = validate_growth_bound(&zero, &levy, &trunc, &times, &states);
        assert_eq!((z.max_sigma_ratio, z.max_jump_ratio), (0.0, 0.0));
        assert!(z.passes);

        let mut bad = ForcingSpec::zero();
        bad.alpha = 0.1;
        bad.delta = ModeField::uniform(TimeEnvelope::ONE);
        bad.sigma = StateKernel { envelope: TimeEnvelope::ONE, shape: StateShape::Quadratic };
        let grid: Vec<f64> = (0..=100).map(|k| 0.1 * k as f64).collect();
        let b = validate_growth_bound(&bad, &levy, &trunc, &[0.0], &grid);
        assert!(!b.passes);
        // sup of s^2 / (0.1 (1 + s)) on [0, 10] is at s = 10
        assert!((b.max_sigma_ratio - 100.0 / 1.1).abs() < 1e-9);
        assert_eq!(b.worst.map(|w| w.3), Some(10.0));
    }

    #[test]
    fn periodic_catalog() {
        let mut f = ForcingSpec::zero();
        f.h = ModeField::uniform(TimeEnvelope::Cos { amplitude: 1.0, omega: 2.0, phase: 0.0 });
        f.kappa = ModeField::uniform(TimeEnvelope::Sin { amplitude: 1.0, omega: 2.0, phase: 0.0 });
        f.f1 = SiteField::uniform(TimeEnvelope::Constant { value: 0.5 });
        f.chi = Some(PI);
        assert!(f.violations().is_empty());
        let times: Vec<f64> = (0..100).map(|n| n as f64 * PI / 100.0).collect();
        assert!(f.periodicity_defect(&times, &one_site()) < 1e-12);

        f.f1 = SiteField::uniform(TimeEnvelope::ExpDecay { amplitude: 1.0, rate: 1.0 });
        assert!(f.violations().contains(&ForcingViolation::NotPeriodic { field: "f1", chi: PI }));
    }

    #[test]
    fn delta_sum_matches_geometric_closed_form() {
        let trunc = TruncationConfig::new(30, Boundary::ZeroDirichlet).unwrap();
        let mut f = ForcingSpec::zero();
        f.modes = 3;
        f.delta = ModeField {
            envelope: TimeEnvelope::Constant { value: 0.5 },
            profile: SpatialProfile::Exponential { rate: 1.0 },
            mode_ratio: 0.5,
        };
        let direct: f64 = (0..3)
            .flat_map(|k| (-30i64..=30).map(move |i| (k, i)))
            .map(|(k, i)| f.delta.value(0.0, k, i).powi(2))
            .sum();
        let q = (-2.0f64).exp();
        let spatial = 1.0 + 2.0 * q * (1.0 - q.powi(30)) / (1.0 - q);
        let modal = 1.0 + 0.25 + 0.0625;
        let closed = 0.25 * spatial * modal;
        assert!((direct - closed).abs() < 1e-12 * closed);
        assert!((f.delta_norm_sq(0.0, &trunc) - closed).abs() < 1e-12 * closed);
        assert_eq!(f.delta_norm_sq_sup(&trunc), Some(f.delta_norm_sq(0.0, &trunc)));
    }

    #[test]
    fn compensator_against_closed_forms() {
        // uniform law: int_{-b}^{b} 1/(1+y^2) dy / (2b) = atan(b) / b
        let levy = LevyConfig {
            intensity: 3.0,
            jump_law: JumpLaw::UniformSmall { bound: 0.5 },
            truncate_small: true,
            m_jump_bound: 1.0,
        };
        let mut f = ForcingSpec::zero();
        f.q.factor = JumpFactor::InverseOnePlusSquare;
        let c = Compensator::new(&levy, &f);
        assert!((c.small_mass - 3.0).abs() < 3e-12);
        let exact = 3.0 * libm::atan(0.5) / 0.5;
        assert!((c.factor_mass - exact).abs() < 1e-6 * exact);

        // untruncated gaussian: mass of |y| < 1 is intensity * erf(1 / (sd sqrt 2))
        let g = LevyConfig::section7();
        let c = Compensator::new(&g, &ForcingSpec::zero());
        let exact = 2.0 * libm::erf(1.0 / libm::sqrt(2.0));
        assert!((c.small_mass - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn jump_activity_bound() {
        let g = LevyConfig::section7();
        // E[min(Y^2, 1)] for a standard normal, times intensity 2
        let act = g.jump_activity();
        assert!(act > 0.0 && act < 2.0);
        assert!(g.violations(1).is_empty());
        let tight = LevyConfig { m_jump_bound: 0.1, ..g };
        assert!(matches!(tight.violations(1)[0], ForcingViolation::JumpActivity { .. }));
    }

    #[test]
    fn wiener_moments() {
        let dt = 1e-3;
        let n = 1_000_000u64;
        let stream = NoiseStream::new(SeedSpec { master_seed: 7 }, 0, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for step in 0..n {
            let w = sample_wiener_increments(&stream, step, dt, 1)[0];
            sum += w;
            sum_sq += w * w;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((0.00097..=0.00103).contains(&var), "{var}");
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn draws_are_deterministic() {
        let s1 = NoiseStream::new(SeedSpec { master_seed: 11 }, 3, 5);
        let s2 = NoiseStream::new(SeedSpec { master_seed: 11 }, 3, 5);
        let levy = LevyConfig { intensity: 500.0, ..LevyConfig::section7() };
        assert_eq!(sample_wiener_increments(&s1, 42, 0.01, 3), sample_wiener_increments(&s2, 42, 0.01, 3));
        assert_eq!(sample_jump_batch(&s1, 42, 0.01, &levy, 2), sample_jump_batch(&s2, 42, 0.01, &levy, 2));
        let other = NoiseStream::new(SeedSpec { master_seed: 11 }, 3, 6);
        assert_ne!(sample_wiener_increments(&s1, 42, 0.01, 3), sample_wiener_increments(&other, 42, 0.01, 3));
    }

    #[test]
    fn poisson_zero_frequency() {
        let levy = LevyConfig::section7();
        let stream = NoiseStream::new(SeedSpec { master_seed: 3 }, 0, 0);
        let n = 1_000_000u64;
        let mut jumps = Vec::new();
        let zeros = (0..n)
            .filter(|&s| {
                stream.mode_step(0, s, 1e-3, &levy, &mut jumps);
                jumps.is_empty()
            })
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - (-0.002f64).exp()).abs() < 5e-4, "{freq}");
    }

    #[test]
    fn zero_intensity_has_no_jumps() {
        let levy = LevyConfig::none();
        let stream = NoiseStream::new(SeedSpec { master_seed: 3 }, 0, 0);
        assert!((0..1000).all(|s| sample_jump_batch(&stream, s, 1.0, &levy, 2).iter().all(|j| j.is_empty())));
    }

    #[test]
    fn gaussian_jump_variance() {
        let levy = LevyConfig::section7();
        let stream = NoiseStream::new(SeedSpec { master_seed: 9 }, 0, 0);
        let mut rng = stream.initial_rng();
        let n = 100_000;
        let ys: Vec<f64> = (0..n).map(|_| levy.sample_jump(&mut rng)).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        assert!((0.97..=1.03).contains(&var), "{var}");

        let small = LevyConfig { truncate_small: true, ..levy };
        assert!((0..10_000).all(|_| small.sample_jump(&mut rng).abs() < 1.0));
    }
}
