//! Experiment drivers: synthetic data, update cycles, streaming workloads
//! and report tables.

pub mod cycles;
pub mod disk_cycles;
pub mod report;
pub mod spec;
pub mod stream;
pub mod synthetic;

pub use report::RunReport;
pub use spec::{DataSource, ExperimentSpec, Workers};
