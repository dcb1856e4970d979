//! Hybrid-field RIS cascaded channel synthesis and estimation.
//!
//! The user–RIS link is modelled in the near field with per-path visible
//! regions, the RIS–BS link in the far field. Channels are recovered by a
//! turbo-structured joint Bayesian estimator that alternates sparse gain
//! inference, visible-region message passing and off-grid refinement.

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod dictionary;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod grid_refine;
pub mod metrics;
pub mod sensing;
pub mod turbo;
pub mod vbi;
pub mod verify;

pub use error::{Error, Result};
