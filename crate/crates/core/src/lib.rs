//! Quantum Otto machine with a two-level working fluid charging an `M`-level
//! battery through repeated cycles.

pub mod analytic;
pub mod config;
pub mod dynamics;
pub mod exec;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod output;
pub mod runner;
pub mod switching;
pub mod validation;
