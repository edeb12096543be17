//! Survivor average causal effect (SACE) estimation for a time-dependent
//! binary treatment under censoring by death and missing outcomes.
//!
//! The pipeline: a Cox model for time to treatment yields a generalized
//! propensity score; a principal-stratification mixture (strata model,
//! per-stratum normal outcome regressions, stratum-dependent missingness)
//! is fitted by data augmentation MCMC; posterior summaries, DIC and
//! convergence diagnostics follow. A simulator with known truth supports
//! validation.

pub mod cli;
pub mod data;
pub mod design;
pub mod draws;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod pipeline;
pub mod propensity;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
