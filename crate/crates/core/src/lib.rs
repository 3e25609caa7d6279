//! Fairness-aware policy learning with interpretable policy trees.
//!
//! The pipeline takes per-treatment scores, removes the dependence between
//! decision-relevant features (and optionally the scores) and a sensitive
//! group label through marginal-quantile adjustment, fits a globally optimal
//! shallow policy tree, and translates cdf-scale trees back into group
//! specific trees on the original feature scale with probabilistic splits.
//! Any allocation can be audited for policy value and action fairness.

pub mod adjust;
pub mod analysis;
pub mod data;
pub mod error;
pub mod metrics;
pub mod probsplit;
pub mod rng;
pub mod scores;
pub mod synthetic;
pub mod tree;

pub use data::{
    validate_dataset, Assignment, Dataset, FeatureColumn, FeatureKind, FeatureTable,
    NuisanceEstimates, ScoreMatrix, SensitiveVector, Violation,
};
pub use error::{Error, Result};
