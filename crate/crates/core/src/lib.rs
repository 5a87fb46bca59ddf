//! Separation-constrained clustering of real-valued data.
//!
//! The crate provides two families of estimators for sorted one-dimensional
//! samples:
//!
//! * exact K-means by dynamic programming, with an optional lower bound on the
//!   gap between adjacent cluster centers ([`kmeans_1d`], [`kmeans_1d_sep`]);
//! * Gaussian mixture fitting by EM, with an ECM variant whose mean update is a
//!   chain-constrained quadratic program ([`fit`], [`constrained_qp::solve`]).
//!
//! The [`experiments`] module wires both into a seeded simulation harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod dd;
mod error;

pub mod constrained_qp;
pub mod experiments;
pub mod gmm_em;
pub mod kmeans_dp;
pub mod metrics;
pub mod prefix_stats;

pub use constrained_qp::{ChainQp, GapBound, QpSolution};
pub use error::{Error, Result};
pub use gmm_em::{fit, fit_from, EmConfig, FitResult, GmmParams, SeparationBand};
pub use kmeans_dp::{kmeans_1d, kmeans_1d_sep, KmeansSolution, ScanRule, SeparationDp};
pub use prefix_stats::{PrefixStats, SortedSample};
