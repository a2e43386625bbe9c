use rand::Rng;

use super::grid::Grid;
use super::harmonic::components_for;
use crate::error::{Error, Result};

/// A field of rotation-order-`l` tensors sampled on a [`Grid`].
///
/// Components are the leading axis: `data[c * grid.len() + voxel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    l: u8,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &Grid, l: u8) -> Result<Self> {
        let c = components_for(l, grid.dim())?;
        Ok(TensorField {
            grid: grid.clone(),
            l,
            data: vec![0.0; c * grid.len()],
        })
    }

    pub fn from_data(grid: &Grid, l: u8, data: Vec<f64>) -> Result<Self> {
        let c = components_for(l, grid.dim())?;
        if data.len() != c * grid.len() {
            return Err(Error::Format(format!(
                "expected {} values for l={l} on {:?}, got {}",
                c * grid.len(),
                grid.shape(),
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("field contains non-finite values".into()));
        }
        Ok(TensorField { grid: grid.clone(), l, data })
    }

    /// Field whose value at every voxel is `value`.
    pub fn constant(grid: &Grid, l: u8, value: &[f64]) -> Result<Self> {
        let c = components_for(l, grid.dim())?;
        if value.len() != c {
            return Err(Error::InvalidParameter(format!(
                "l={l} value needs {c} components, got {}",
                value.len()
            )));
        }
        let n = grid.len();
        let data = value.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        TensorField::from_data(grid, l, data)
    }

    /// Field built by evaluating `f(world_position, out)` at every voxel.
    pub fn from_fn(grid: &Grid, l: u8, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut field = TensorField::zeros(grid, l)?;
        let c = field.components();
        let mut value = vec![0.0; c];
        for flat in 0..grid.len() {
            let idx = grid.unflatten3(flat);
            let pos = grid.position(&idx[..grid.dim()]);
            value.iter_mut().for_each(|v| *v = 0.0);
            f(&pos, &mut value);
            field.set(flat, &value);
        }
        if field.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("field contains non-finite values".into()));
        }
        Ok(field)
    }

    /// Independent uniform values in `[-1, 1)` per voxel and component.
    pub fn random(grid: &Grid, l: u8, rng: &mut impl Rng) -> Result<Self> {
        let mut field = TensorField::zeros(grid, l)?;
        field.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn l(&self) -> u8 {
        self.l
    }

    pub fn components(&self) -> usize {
        self.data.len() / self.grid.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Tensor value at a flat voxel offset.
    pub fn value(&self, voxel: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.components()];
        self.value_into(voxel, &mut out);
        out
    }

    pub fn value_into(&self, voxel: usize, out: &mut [f64]) {
        let n = self.grid.len();
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data[c * n + voxel];
        }
    }

    pub fn set(&mut self, voxel: usize, value: &[f64]) {
        let n = self.grid.len();
        for (c, &v) in value.iter().enumerate() {
            self.data[c * n + voxel] = v;
        }
    }

    /// Same values on a different grid of identical shape (e.g. toggling the boundary).
    pub fn with_grid(&self, grid: &Grid) -> Result<Self> {
        if grid.shape() != self.grid.shape() {
            return Err(Error::GridMismatch(format!(
                "cannot move field of shape {:?} to grid of shape {:?}",
                self.grid.shape(),
                grid.shape()
            )));
        }
        Ok(TensorField { grid: grid.clone(), l: self.l, data: self.data.clone() })
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &TensorField) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += a * y);
        Ok(())
    }

    pub fn sub(&self, other: &TensorField) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn check_same(&self, other: &TensorField) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid.shape(),
                other.grid.shape()
            )));
        }
        if self.l != other.l {
            return Err(Error::OrderMismatch { expected: self.l, found: other.l });
        }
        Ok(())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Sum over voxels of each component.
    pub fn component_sums(&self) -> Vec<f64> {
        (0..self.components()).map(|c| self.component(c).iter().sum()).collect()
    }

    /// Integral of each component (sum times voxel volume).
    pub fn integral(&self) -> Vec<f64> {
        let vol = self.grid.voxel_volume();
        self.component_sums().into_iter().map(|s| s * vol).collect()
    }

    /// Largest absolute difference relative to the largest magnitude in `reference`.
    pub fn max_rel_deviation(&self, reference: &TensorField) -> f64 {
        let scale = reference.max_abs();
        let diff = self
            .data
            .iter()
            .zip(&reference.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    /// Like [`max_rel_deviation`](Self::max_rel_deviation) but restricted to voxels at least
    /// `margin` voxels from every face.
    pub fn max_rel_deviation_interior(&self, reference: &TensorField, margin: usize) -> f64 {
        let n = self.grid.len();
        let mut diff = 0.0_f64;
        let mut scale = 0.0_f64;
        for flat in 0..n {
            if self.grid.distance_to_face(self.grid.unflatten3(flat)) < margin {
                continue;
            }
            for c in 0..self.components() {
                let (a, b) = (self.data[c * n + flat], reference.data[c * n + flat]);
                diff = diff.max((a - b).abs());
                scale = scale.max(b.abs());
            }
        }
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid::Boundary;

    #[test]
    fn constant_field_layout_is_component_major() {
        let g = Grid::centered(2, 3, 1.0, Boundary::ZeroPad).unwrap();
        let f = TensorField::constant(&g, 1, &[1.0, 2.0]).unwrap();
        assert_eq!(f.components(), 2);
        assert!(f.component(0).iter().all(|&x| x == 1.0));
        assert!(f.component(1).iter().all(|&x| x == 2.0));
        assert_eq!(f.value(4), vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_wrong_lengths_and_nan() {
        let g = Grid::centered(3, 3, 1.0, Boundary::ZeroPad).unwrap();
        assert!(TensorField::from_data(&g, 1, vec![0.0; 27]).is_err());
        let mut d = vec![0.0; 27];
        d[3] = f64::NAN;
        assert!(TensorField::from_data(&g, 0, d).is_err());
        let g2 = Grid::centered(2, 3, 1.0, Boundary::ZeroPad).unwrap();
        assert!(TensorField::zeros(&g2, 2).is_err());
    }

    #[test]
    fn from_fn_sees_world_positions() {
        let g = Grid::centered(3, 5, 0.5, Boundary::ZeroPad).unwrap();
        let f = TensorField::from_fn(&g, 0, |p, out| out[0] = p[0]).unwrap();
        assert_eq!(f.component(0)[0], -1.0);
        assert_eq!(f.component(0)[g.len() - 1], 1.0);
    }
}
