//! CPU engine for efficient graph convolution.
//!
//! Isotropic message passing is expressed as sparse-matrix × dense-matrix
//! products over CSR adjacency, so no per-edge message is ever
//! materialized. The [`kernels`] module holds plain SpMM and a fused kernel
//! that applies several aggregators in one CSR traversal; [`layers`] builds
//! the basis-combination layers on top of it; [`training`] supplies
//! gradients, a finite-difference oracle and Adam; [`bench`] times the
//! kernels against each other.

pub mod bench;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod matrix;
pub mod scalar;
pub mod training;

pub use error::{EgcError, Result};
pub use graph::{CsrGraph, GraphSpec, NodeTypedGraph};
pub use kernels::{Aggregator, BasisLayout, ExecOptions, FusionStrategy};
pub use matrix::{FeatureMatrix, Matrix};
pub use scalar::Real;
