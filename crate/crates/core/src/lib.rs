//! Estimation and interpretation of heterogeneous treatment effects from
//! multi-level observational data.
//!
//! The library implements a three-stage pipeline over student/school style
//! data, where treatment is assigned at the individual level but individuals
//! are clustered into groups ("schools") that carry their own covariates:
//!
//! 1. [`splitting`] — a cluster-aware train/validation partition that keeps
//!    every school intact on one side and balances covariate moments between
//!    sides.
//! 2. [`learners`], [`tlearner`], [`repnet`] — potential-outcome estimation:
//!    from-scratch base regressors (ridge, CART, random forest, gradient
//!    boosting, MLP) composed into T-learners, plus a shared-representation
//!    network with two outcome heads and an optional MMD balance penalty.
//! 3. [`interpret`] — post-hoc characterization of imputed effects through
//!    split-frequency feature importance, covariate stratification, and
//!    leaf-constrained regression trees exported as decision rules.
//!
//! [`inference`] aggregates imputed effects into point estimates with
//! school-level cluster bootstrap confidence intervals, and [`diagnostics`]
//! reports covariate balance and overlap before any model is fit.

pub mod dataset;
pub mod diagnostics;
mod error;
pub mod inference;
pub mod interpret;
pub mod learners;
pub mod repnet;
pub mod rng;
pub mod splitting;
pub mod tlearner;

pub use error::{Error, Result};

/// Library version, recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
