//! Parallel ensemble execution. Members are independent and their noise is
//! counter-based, so results are collected in member order and are identical
//! to the sequential runner for any thread count.

use rayon::prelude::*;
use selkov_core::forcing::{NoiseStream, StepNoise};
use selkov_core::integrator::{
    assemble_ensemble, origin_of, simulate_member, EnsembleConfig, EnsembleError, EnsembleOutcome, Stepper, System,
    TimeGrid,
};
use selkov_core::lattice::LatticeState;
use selkov_core::measure::EmpiricalMeasure;
use selkov_core::LatticeError;

/// Evaluate `f` for every member index in parallel, in member order.
pub fn par_members<T: Send, F: Fn(usize) -> T + Sync + Send>(members: usize, f: F) -> Vec<T> {
    (0..members).into_par_iter().map(f).collect()
}

/// Ensemble run saving at the given grid steps. No validation is done here;
/// callers validate the system (or deliberately build one outside the
/// validated parameter range).
pub fn run_ensemble(
    system: &System,
    ensemble: &EnsembleConfig,
    grid: &TimeGrid,
    save_steps: &[u64],
) -> Result<EnsembleOutcome, EnsembleError> {
    let records = par_members(ensemble.members, |m| simulate_member(system, ensemble, grid, save_steps, m))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_ensemble(records, grid, save_steps, origin_of(system, ensemble))?)
}

/// Law at `tau` started from the initial law at `tau - horizon`.
pub fn pullback(
    system: &System,
    ensemble: &EnsembleConfig,
    tau: f64,
    horizon: f64,
    dt: f64,
) -> Result<EnsembleOutcome, EnsembleError> {
    let grid = TimeGrid::pullback(tau, horizon, dt)?;
    run_ensemble(system, ensemble, &grid, &[grid.n_steps])
}

/// Pullback laws at `tau` for several horizons, plus the number of members
/// lost to blow-up (worst horizon).
///
/// With time-independent coefficients the law at `tau` after horizon `t`
/// equals the law at `tau - t_max + t` of a single run started at
/// `tau - t_max`, so one run serves all horizons. Otherwise every horizon is
/// a separate run.
pub fn pullback_series(
    system: &System,
    ensemble: &EnsembleConfig,
    tau: f64,
    horizons: &[f64],
    dt: f64,
) -> Result<(Vec<EmpiricalMeasure>, usize), EnsembleError> {
    if system.forcing.is_autonomous() {
        let t_max = horizons.iter().copied().fold(0.0, f64::max);
        let grid = TimeGrid::pullback(tau, t_max, dt)?;
        let steps: Vec<u64> = horizons.iter().map(|&h| (h / dt).round() as u64).collect();
        let mut sorted = steps.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let out = run_ensemble(system, ensemble, &grid, &sorted)?;
        let measures = steps
            .iter()
            .zip(horizons)
            .map(|(s, &h)| {
                let slot = sorted.binary_search(s).expect("saved step");
                let mut mu = out.measures[slot].clone();
                mu.origin.tau = tau;
                mu.origin.horizon = h;
                mu
            })
            .collect();
        Ok((measures, out.blown_up))
    } else {
        let mut measures = Vec::with_capacity(horizons.len());
        let mut lost = 0;
        for &h in horizons {
            let out = pullback(system, ensemble, tau, h, dt)?;
            lost = lost.max(out.blown_up);
            measures.extend(out.measures);
        }
        Ok((measures, lost))
    }
}

/// Blow-up inside a lockstep run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockstepBlowUp {
    /// Index of the offending system.
    pub system: usize,
    pub step: u64,
    pub site: i64,
}

/// Step several systems from the same initial state, all driven by the same
/// noise increments. The systems must share their Levy law and mode count.
/// `visit(step, t, states)` sees the initial states and the states after
/// every step.
pub fn lockstep<F: FnMut(u64, f64, &[LatticeState])>(
    systems: &[System],
    initial: &LatticeState,
    grid: &TimeGrid,
    stream: &NoiseStream,
    mut visit: F,
) -> Result<(), LockstepBlowUp> {
    let first = &systems[0];
    let modes = first.forcing.modes;
    debug_assert!(systems.iter().all(|s| s.levy == first.levy && s.forcing.modes == modes));
    let mut steppers: Vec<Stepper> = systems.iter().map(Stepper::new).collect();
    let mut states = vec![initial.clone(); systems.len()];
    let mut noise = StepNoise::zero(modes);
    let noisy = systems.iter().any(|s| !s.params.lambda.is_zero());
    visit(0, grid.t_start, &states);
    for n in 0..grid.n_steps {
        if noisy {
            noise.fill(stream, n, grid.dt, &first.levy, modes);
        }
        let t = grid.time(n);
        for (k, (stepper, state)) in steppers.iter_mut().zip(states.iter_mut()).enumerate() {
            if let Err(LatticeError::BlowUp { site, .. }) = stepper.step(state, t, grid.dt, &noise) {
                return Err(LockstepBlowUp { system: k, step: n, site });
            }
        }
        visit(n + 1, grid.time(n + 1), &states);
    }
    Ok(())
}
