//! Causal effect estimation on tabular cohort data.
//!
//! The crate separates observational prediction from interventional
//! estimation: effects are identified through a user-supplied DAG with the
//! back-door criterion, estimated with g-computation, propensity score
//! matching, inverse probability weighting and R-/T-learner CATE models,
//! and stress-tested with permutation and placebo refutations and E-values.

pub mod dag;
pub mod regress;
pub mod cate;
pub mod dataset;
pub mod gboost;
pub mod seeds;
pub mod synth;
pub mod effects;
pub mod resample;
pub mod refute;
pub mod sensitivity;
pub mod pipeline;
