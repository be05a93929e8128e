//! Node sparsification by spectral alignment.
//!
//! A stack of joint graph evolution layers produces per-node keep logits; a
//! Gumbel-sigmoid relaxation makes the mask differentiable, and the training
//! loss aligns the top eigenvalues of the masked graph's shifted Laplacian and
//! feature Gram matrix with those of the original. Classical edge sparsifiers
//! and the structural/spectral metrics used to compare them live alongside.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod head;
pub mod io;
pub mod jge;
pub mod loss;
pub mod metrics;
pub mod sparse;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{FeatureMatrix, Graph};
