//! Experiment harness for the beamalign simulator: configuration files,
//! seeded Monte-Carlo runs, and deterministic CSV artifacts.

pub mod config;
pub mod runner;
