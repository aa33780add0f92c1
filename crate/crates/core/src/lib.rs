//! Spectrum-preserving graph sparsification for scalable spectral clustering.
//!
//! The pipeline runs in five stages:
//!
//! 1. build a kNN similarity graph ([`graph::knn`]) and a spanning tree of it
//!    ([`tree`]), then recover spectrally critical off-tree edges until the
//!    bottom eigenvalues of the sparsifier stabilize ([`sparsify`]);
//! 2. rescale the sparsifier's edge weights with momentum SGD under a floor on
//!    the smallest generalized eigenvalue ([`scale`]);
//! 3. compute the bottom eigenvectors of the scaled sparsifier ([`eig`]);
//! 4. smooth those eigenvectors against the original graph with weighted
//!    Jacobi sweeps ([`eig::filter_eigenvectors`]);
//! 5. run k-means on the embedding ([`cluster`]) and score it ([`eval`]).
//!
//! [`pipeline`] wires the stages together and owns the on-disk artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cluster;
pub mod dataio;
pub mod eig;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod scale;
pub mod sparsify;
pub mod tree;

pub use error::{Error, Result};
pub use graph::{EdgeVector, WeightedGraph};
