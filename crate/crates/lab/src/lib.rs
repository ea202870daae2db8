//! Configuration, file formats, parallel execution and the experiment suite
//! for the `selkov-core` simulator.

pub mod config;
pub mod experiments;
pub mod output;
pub mod runner;
pub mod stats;
