//! Unit harmonic tensors `Y_l` and the component basis used for each rotation order.
//!
//! Order-2 tensors (3d only) are traceless symmetric 3x3 matrices stored as five
//! coefficients against a Frobenius-orthonormal basis:
//!
//! ```text
//! E0 = (xx - yy) / sqrt(2)          = diag(1, -1, 0) / sqrt(2)
//! E1 = (2zz - xx - yy) / sqrt(6)    = diag(-1, -1, 2) / sqrt(6)
//! E2 = (xy + yx) / sqrt(2)
//! E3 = (xz + zx) / sqrt(2)
//! E4 = (yz + zy) / sqrt(2)
//! ```
//!
//! Orthonormality makes the Euclidean norm of the five coefficients equal the
//! Frobenius norm of the matrix, and the coefficient dot product equal the
//! Frobenius inner product.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Number of stored components for rotation order `l` in `dim` dimensions.
pub fn components_for(l: u8, dim: usize) -> Result<usize> {
    match (l, dim) {
        (0, 2 | 3) => Ok(1),
        (1, 2 | 3) => Ok(dim),
        (2, 3) => Ok(5),
        _ => Err(Error::UnsupportedOrder { l, dim }),
    }
}

/// The five basis matrices of the order-2 component basis.
pub fn l2_basis() -> [Mat3; 5] {
    use std::f64::consts::FRAC_1_SQRT_2 as S2;
    let s6 = 1.0 / 6f64.sqrt();
    [
        [[S2, 0.0, 0.0], [0.0, -S2, 0.0], [0.0, 0.0, 0.0]],
        [[-s6, 0.0, 0.0], [0.0, -s6, 0.0], [0.0, 0.0, 2.0 * s6]],
        [[0.0, S2, 0.0], [S2, 0.0, 0.0], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, S2], [0.0, 0.0, 0.0], [S2, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, S2], [0.0, S2, 0.0]],
    ]
}

/// Coefficients of a traceless symmetric matrix in the order-2 basis.
/// Any trace or antisymmetric part is projected away.
pub fn matrix_to_l2(m: &Mat3) -> [f64; 5] {
    let basis = l2_basis();
    std::array::from_fn(|k| frobenius(m, &basis[k]))
}

pub fn l2_to_matrix(c: &[f64]) -> Mat3 {
    let basis = l2_basis();
    let mut m = [[0.0; 3]; 3];
    for (ck, e) in c.iter().zip(&basis) {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += ck * e[i][j];
            }
        }
    }
    m
}

pub fn frobenius(a: &Mat3, b: &Mat3) -> f64 {
    (0..3).map(|i| (0..3).map(|j| a[i][j] * b[i][j]).sum::<f64>()).sum()
}

/// Evaluates `Y_l(r_hat)` into `out` (length `components_for(l, dim)`).
///
/// `Y_0 = 1`, `Y_1 = r_hat`, `Y_2 = 3 r_hat r_hat^T - I`. The direction need not be
/// normalized; a zero direction yields zero for `l >= 1`.
pub fn unit_harmonic(l: u8, direction: &[f64], out: &mut [f64]) {
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    match l {
        0 => out[0] = 1.0,
        1 => {
            for (o, d) in out.iter_mut().zip(direction) {
                *o = if norm > 0.0 { d / norm } else { 0.0 };
            }
        }
        2 => {
            if norm == 0.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                return;
            }
            let r: Vec<f64> = direction.iter().map(|d| d / norm).collect();
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = 3.0 * r[i] * r[j] - if i == j { 1.0 } else { 0.0 };
                }
            }
            out.copy_from_slice(&matrix_to_l2(&m));
        }
        _ => unreachable!("orders above 2 are rejected by components_for"),
    }
}
