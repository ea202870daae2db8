//! Simulation and measure analysis for stochastic reversible Selkov lattice
//! systems driven by Wiener and compound Poisson noise.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; file formats, configuration and parallel
//! execution live in the companion `selkov-lab` crate.
//!
//! * [`lattice`] state, discrete operators, reaction terms and drift.
//! * [`forcing`] coefficient catalog, Levy measures and counter-based noise.
//! * [`integrator`] Euler-Maruyama stepping with jumps, paths and ensembles.
//! * [`measure`] empirical measures, tails, transport distances and the
//!   dissipativity constants.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod forcing;
pub mod integrator;
pub mod lattice;
pub mod lp;
pub mod measure;
pub mod quad;
pub mod transport;

pub use error::{ForcingViolation, LatticeError, MeasureError, ParamViolation};
