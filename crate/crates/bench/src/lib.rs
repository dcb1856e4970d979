//! Monte Carlo benchmark harness for cascaded channel estimators.

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod emit;
pub mod error;
pub mod presets;
pub mod runner;
pub mod table;

pub use config::{EstimatorKind, ExperimentSpec, Format, Scale, SweepVar};
pub use error::{BenchError, Result};
pub use runner::run_experiment;
pub use table::{AggregateRow, RawRow, ResultTable, TimingRow};
