//! Batch verification of the lattice, averaging, gauge and flow identities.
//!
//! A [`RunConfig`] selects instances and suites; [`run_suite`] builds one
//! [`runner::Check`] per identity and instance, runs them in a work pool and
//! collects a [`Report`].

pub mod config;
pub mod report;
pub mod runner;
pub mod suites;

pub use config::{ConfigError, Instance, RunConfig, Suite, Tolerances};
pub use report::{Bound, CheckRecord, Report, Status};
pub use runner::run_suite;
pub use suites::build;
