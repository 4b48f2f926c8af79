//! AIPW estimation of average treatment effects in randomized trials, a
//! Monte Carlo harness for Wald-CI coverage and variance-estimator bias, and
//! calculators for Berry-Esseen-type coverage bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod learners;
pub mod model;
pub mod rng;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
pub use model::{Dataset, Observation, OutcomePredictor, Predict, PropensitySpec};
