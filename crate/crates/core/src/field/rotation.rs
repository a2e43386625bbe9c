//! Proper rotations that map a cubic (square) lattice onto itself.

use super::harmonic::{l2_basis, matrix_to_l2, Mat3};
use super::tensor::TensorField;
use crate::error::{Error, Result};

/// A signed permutation matrix with determinant +1.
///
/// 2d rotations are stored embedded in 3x3 with `m[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeRotation {
    m: [[i32; 3]; 3],
    dim: usize,
}

impl LatticeRotation {
    pub fn identity(dim: usize) -> Self {
        LatticeRotation { m: [[1, 0, 0], [0, 1, 0], [0, 0, 1]], dim }
    }

    /// All proper lattice rotations: 4 in 2d, 24 in 3d. The identity comes first.
    pub fn all(dim: usize) -> Vec<Self> {
        let perms: &[[usize; 3]] = if dim == 2 {
            &[[0, 1, 2], [1, 0, 2]]
        } else {
            &[[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
        };
        let mut out = Vec::new();
        for p in perms {
            for signs in 0..(1 << dim) {
                let mut m = [[0; 3]; 3];
                for row in 0..3 {
                    let s = if row < dim && signs & (1 << row) != 0 { -1 } else { 1 };
                    m[row][p[row]] = s;
                }
                if det(&m) == 1 {
                    out.push(LatticeRotation { m, dim });
                }
            }
        }
        out
    }

    /// Rotation by `quarter_turns * 90deg` about axis `axis` (0=x, 1=y, 2=z).
    /// In 2d only `axis = 2` is meaningful.
    pub fn quarter_turn(dim: usize, axis: usize, quarter_turns: i32) -> Self {
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        let mut g = LatticeRotation::identity(dim);
        let mut step = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        step[a][a] = 0;
        step[b][b] = 0;
        step[b][a] = 1;
        step[a][b] = -1;
        let step = LatticeRotation { m: step, dim };
        for _ in 0..quarter_turns.rem_euclid(4) {
            g = step.compose(&g);
        }
        g
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> [[i32; 3]; 3] {
        self.m
    }

    /// `self * other` (apply `other` first).
    pub fn compose(&self, other: &LatticeRotation) -> Self {
        let mut m = [[0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        LatticeRotation { m, dim: self.dim }
    }

    pub fn inverse(&self) -> Self {
        let mut m = [[0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.m[j][i];
            }
        }
        LatticeRotation { m, dim: self.dim }
    }

    pub fn apply_int(&self, v: [i64; 3]) -> [i64; 3] {
        std::array::from_fn(|i| (0..3).map(|k| i64::from(self.m[i][k]) * v[k]).sum())
    }

    fn mat_f64(&self) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| f64::from(self.m[i][j])))
    }

    /// Representation matrix acting on stored components of order `l`.
    pub fn representation(&self, l: u8) -> Vec<Vec<f64>> {
        let r = self.mat_f64();
        match l {
            0 => vec![vec![1.0]],
            1 => (0..self.dim).map(|i| (0..self.dim).map(|j| r[i][j]).collect()).collect(),
            2 => {
                // column j = coefficients of R E_j R^T
                let basis = l2_basis();
                let cols: Vec<[f64; 5]> = basis
                    .iter()
                    .map(|e| matrix_to_l2(&conjugate(&r, e)))
                    .collect();
                (0..5).map(|k| (0..5).map(|j| cols[j][k]).collect()).collect()
            }
            _ => unreachable!("orders above 2 are rejected at field construction"),
        }
    }

    /// Rotates a single tensor value of order `l`.
    pub fn rotate_value(&self, l: u8, value: &[f64]) -> Vec<f64> {
        let rep = self.representation(l);
        rep.iter()
            .map(|row| row.iter().zip(value).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn det(m: &[[i32; 3]; 3]) -> i32 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn conjugate(r: &Mat3, e: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += r[i][a] * e[a][b] * r[j][b];
                }
            }
            *x = s;
        }
    }
    out
}

fn check_rotatable(u: &TensorField, g: &LatticeRotation) -> Result<()> {
    let grid = u.grid();
    if g.dim() != grid.dim() {
        return Err(Error::IncompatibleRotation(format!(
            "{}d rotation applied to {}d field",
            g.dim(),
            grid.dim()
        )));
    }
    let n = grid.shape()[0];
    if grid.shape().iter().any(|&m| m != n) {
        return Err(Error::IncompatibleRotation(format!(
            "domain {:?} is not a square/cube",
            grid.shape()
        )));
    }
    let s = grid.spacing()[0];
    if grid.spacing().iter().any(|&t| (t - s).abs() > 1e-12 * s) {
        return Err(Error::IncompatibleRotation("spacing differs between axes".into()));
    }
    Ok(())
}

/// Rotates a field about the center of its domain: voxel positions move by `g` and each
/// tensor value is transformed by the order-`l` representation of `g`.
///
/// `out(x) = rho_l(g) u(g^-1 x)`.
pub fn rotate_field(u: &TensorField, g: &LatticeRotation) -> Result<TensorField> {
    check_rotatable(u, g)?;
    let grid = u.grid();
    let dim = grid.dim();
    let n = grid.shape()[0] as i64;
    let ginv = g.inverse();
    let rep = g.representation(u.l());
    let c = u.components();
    let mut out = TensorField::zeros(grid, u.l())?;
    let mut src_val = vec![0.0; c];
    let mut dst_val = vec![0.0; c];
    for (flat, idx) in grid.indices3().enumerate() {
        // doubled centered coordinates keep even extents on the integer lattice
        let mut d = [0i64; 3];
        for a in 0..dim {
            d[a] = 2 * idx[a] as i64 - (n - 1);
        }
        let s = ginv.apply_int(d);
        let mut src = [0usize; 3];
        for a in 0..dim {
            src[a] = ((s[a] + n - 1) / 2) as usize;
        }
        let src_flat = grid.flat_index(&src[..dim]);
        u.value_into(src_flat, &mut src_val);
        for (row, dv) in rep.iter().zip(dst_val.iter_mut()) {
            *dv = row.iter().zip(&src_val).map(|(a, b)| a * b).sum();
        }
        out.set(flat, &dst_val);
    }
    Ok(out)
}

/// Moves voxels by `g` without transforming tensor values.
pub fn permute_field(u: &TensorField, g: &LatticeRotation) -> Result<TensorField> {
    let scalarlike = TensorField::zeros(u.grid(), 0)?;
    check_rotatable(&scalarlike, g)?;
    let mut out = u.clone();
    for c in 0..u.components() {
        let comp = TensorField::from_data(u.grid(), 0, u.component(c).to_vec())?;
        let moved = rotate_field(&comp, g)?;
        out.component_mut(c).copy_from_slice(moved.data());
    }
    Ok(out)
}

/// Cyclic shift of a field by an integer number of voxels per axis (periodic wrap).
pub fn shift_field(u: &TensorField, shift: &[i64]) -> TensorField {
    let grid = u.grid();
    let dim = grid.dim();
    let shape = grid.shape();
    let mut out = u.clone();
    for (flat, idx) in grid.indices3().enumerate() {
        let mut dst = [0usize; 3];
        for a in 0..dim {
            let n = shape[a] as i64;
            dst[a] = (idx[a] as i64 + shift[a]).rem_euclid(n) as usize;
        }
        let dflat = grid.flat_index(&dst[..dim]);
        for c in 0..u.components() {
            out.component_mut(c)[dflat] = u.component(c)[flat];
        }
    }
    out
}
