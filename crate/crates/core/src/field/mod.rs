//! Grids, tensor fields, pointwise tensor algebra and lattice rotations.

pub mod eqf;
mod grid;
pub mod harmonic;
pub(crate) mod product;
mod rotation;
mod tensor;

pub use grid::{Boundary, Grid};
pub use harmonic::{components_for, unit_harmonic};
pub use product::{all_rules, field_norm, pointwise_product, Coefficient, ProductKind, ProductRule};
pub use rotation::{permute_field, rotate_field, shift_field, LatticeRotation};
pub use tensor::TensorField;
