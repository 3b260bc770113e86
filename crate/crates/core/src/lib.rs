//! Riemannian automatic differentiation for fixed-rank matrices and
//! tensor trains.
//!
//! The crate computes Riemannian gradients and approximate Riemannian
//! Hessian-by-vector products of user-programmed objectives by
//! differentiating the objective at a tangent-space parametrization of the
//! current point, never forming the dense Euclidean gradient.

#![allow(clippy::needless_range_loop)]

pub mod ad;
pub mod baselines;
pub mod checks;
pub mod error;
pub mod io;
pub mod linalg;
pub mod matrix_manifold;
pub mod objectives;
pub mod taped;
pub mod tensor;
pub mod tt;
pub mod tt_manifold;

pub use error::{Error, Result};
pub use tensor::{contract, DenseTensor};
pub use tt::{MuOrthogonal, TtMatrix, TtTensor};
