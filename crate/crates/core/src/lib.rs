//! Loss-landscape engine for small fully-connected regression networks.
//!
//! The crate trains dense networks on user-defined functions `f(x, y)` and
//! exposes the resulting loss surface `L(θ)` through four kinds of views:
//!
//! - axis-parallel slice charts through a target point and its focus points
//!   ([`landscape::axis_slices`]),
//! - linear interpolation paths between two weight vectors
//!   ([`landscape::interpolate`]),
//! - random 2D plane slices ([`landscape::plane_slice`]),
//! - slices along Hessian eigenvectors ([`landscape::ev_slices`], with
//!   eigenpairs from [`hessian::top_eigenpairs`]).
//!
//! All arithmetic is `f64`. Every computation is a pure function of its
//! inputs and seeds, so any view can be regenerated bit-identically.

pub mod control;
pub mod dataset;
pub mod error;
pub mod expr;
pub mod hessian;
pub mod landscape;
pub mod network;
pub mod optimizer;
pub mod rng;
pub mod sampling;
pub mod store;

pub use error::{Error, Result};
pub use network::{Activation, Dataset, LossKind, NetworkArch, ParamLabel, WeightVector};
