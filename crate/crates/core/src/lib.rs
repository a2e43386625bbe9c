//! Rotation-equivariant linear operators on scalar, vector and rank-2 tensor fields.
//!
//! Every operator is a tensor-field convolution `v = u * h` where the kernel is radially
//! symmetric, `h(r) = R(|r|) Y_l(r_hat)`, and the pointwise multiply is a tensor product
//! chosen by the orders involved. The crate covers forward use (differential operators,
//! Green's functions, PDE stepping) and inverse use (fitting radial functions and PDE
//! coefficients from field data).

pub mod check;
pub mod conv;
mod error;
pub mod field;
pub mod kernel;
pub mod learn;
pub mod operators;
pub mod sim;
pub mod util;

pub use error::{Error, Result, RuleTriple};
pub use field::{Boundary, Grid, LatticeRotation, ProductKind, ProductRule, TensorField};
