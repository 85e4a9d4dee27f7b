//! Concept-vector discovery for polysemantic neurons.
//!
//! Given pooled activations of one layer over a dataset, this crate takes the
//! top activating inputs of a neuron, groups their embeddings with Ward
//! agglomerative clustering cut at a distance threshold, refines the groups
//! with Lloyd k-means, removes outliers and undersized clusters, and returns
//! one unit-norm concept vector per surviving cluster.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! HTTP service live in the `concept-forge` crate.
//!
//! # Overview
//!
//! * [`store`] holds validated activation matrices and manifests.
//! * [`distance`], [`ward`] and [`kmeans`] are the clustering engine.
//! * [`pipeline`] runs the full discovery for one neuron.
//! * [`metrics`] and [`report`] compute evaluation artifacts.
//! * [`synth`] plants ground-truth concepts for benchmarking.
#![no_std]
// `!(x > 0.0)` is the NaN-rejecting form used throughout validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod distance;
pub mod error;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod synth;
pub mod ward;

pub use error::{Error, Result};
pub use linalg::Matrix;
