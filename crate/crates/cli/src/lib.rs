//! Scenario files, run orchestration, and the self-check reports behind the
//! `springnet` binary.

pub mod checks;
pub mod runner;
pub mod scenario;
