//! Data-race detection toolkit.
//!
//! The pipeline synthesizes labeled corpora of C/OpenMP/pthread sources,
//! deletes synchronization primitives to create racy variants, turns each
//! unit into a DFS-preorder vector of AST node classes, trains a
//! multi-window convolutional classifier over those vectors, and projects
//! class activation maps back onto source lines.
//!
//! Numerical code is generic over [`Scalar`]; training runs in `f32` and
//! gradient checking in `f64`. The aliases below name the common choices.

pub mod cam;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod frontend;
pub mod model;
pub mod mutator;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision model, used for training and inference.
pub type Model = model::ModelParams<f32>;
/// Double-precision model, used for gradient checking.
pub type Model64 = model::ModelParams<f64>;
/// Single-precision forward cache.
pub type Cache = model::ForwardCache<f32>;
/// Single-precision gradient set.
pub type Gradients = model::Weights<f32>;
/// Single-precision class activation result.
pub type Cam = cam::CamResult<f32>;
