//! Trainable equivariant operators and pointwise layers.
//!
//! A [`NeuralOp`] convolves with `h_p = sum_n p_n K_n`, where each `K_n` is a fixed radial
//! basis function times a harmonic (or a small stencil). The output is linear in `p`, so
//! fitting reduces to linear least squares; gradient descent is offered as well.

mod basis;
mod layers;
mod manifest;
mod neural;

pub use basis::{default_basis, BasisTerm, ParamRadial};
pub use layers::{Activation, AttentionLayer, NonlinearLayer, Operand, Pair};
pub use manifest::{from_manifest, load_model, save_model, to_manifest};
pub use neural::{
    fit_gradient_descent, fit_least_squares, grad_params, gradient_descent_on, loss, relative_error,
    BasisResponses, Dataset, GdFit, LstsqFit, LstsqOptions, NeuralOp,
};
