//! Benchmark harness for disentangled uncertainty in small stochastic classifiers.
//!
//! The crate trains compact MLP classifiers under four stochastic
//! approximations (MC-Dropout, MC-DropConnect, Flipout, deep ensembles),
//! splits predictive uncertainty into aleatoric and epistemic parts with two
//! estimators (information-theoretic and Gaussian-logits), and scores how
//! faithfully each combination tracks controlled shifts in data volume,
//! label noise, and class coverage.
//!
//! Modules follow the pipeline order: [`nn`] is the deterministic network
//! engine, [`bayes`] adds the stochastic wrappers, [`disentangle`] computes
//! the uncertainty decompositions, [`data`] generates and corrupts datasets,
//! [`experiments`] runs the controlled studies, and [`metrics`] turns run
//! records into correlation scores and the disentanglement error.

pub mod bayes;
pub mod data;
pub mod disentangle;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod seed;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
