//! Correlation-network analytics for stable versus volatile market periods.
//!
//! The crate is organised bottom-up:
//!
//! * [`market_data`] loads prices, computes gap-filtered log returns, slices
//!   rolling windows and produces synthetic or surrogate data.
//! * [`corrnet`] builds correlation and distance matrices and the planar
//!   maximally filtered graph (PMFG) with an exact planarity test.
//! * [`netmeasures`] holds the shortest-path, betweenness, clustering and
//!   communicability measures.
//! * [`hypembed`] embeds each PMFG in the Poincaré disc and re-weights it by
//!   hyperbolic distance.
//! * [`sigtest`] runs permutation and rank-sum tests on per-pair measures.
//! * [`classifier`] extracts features and cross-validates a linear SVM with
//!   recursive feature elimination.
//! * [`pipeline`] wires the per-window stages together without any IO.

pub mod classifier;
pub mod corrnet;
pub mod error;
pub mod hypembed;
pub mod market_data;
pub mod netmeasures;
pub mod pipeline;
pub mod rng;
pub mod sigtest;

pub use error::{Error, Result};
