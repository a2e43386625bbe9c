use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How values outside the sampled domain are treated by convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Values outside the domain are zero (free space).
    ZeroPad,
    /// The domain tiles space periodically.
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::ZeroPad => "zero",
            Boundary::Periodic => "periodic",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "zero-pad" | "zeropad" => Ok(Boundary::ZeroPad),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Format(format!("unknown boundary `{other}`"))),
        }
    }
}

/// Regular, axis-aligned sampling lattice in 2d or 3d.
///
/// Voxel `i` sits at world coordinate `origin + i * spacing` (per axis).
/// Data on a grid is stored row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    boundary: Boundary,
}

impl Grid {
    pub fn new(
        shape: &[usize],
        spacing: &[f64],
        origin: &[f64],
        boundary: Boundary,
    ) -> Result<Self> {
        let dim = shape.len();
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if spacing.len() != dim || origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "shape, spacing and origin lengths differ ({}, {}, {})",
                dim,
                spacing.len(),
                origin.len()
            )));
        }
        if let Some(n) = shape.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidGrid(format!("axis extent {n} < 3")));
        }
        if let Some(s) = spacing.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!("spacing {s} is not a positive finite number")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Grid {
            shape: shape.to_vec(),
            spacing: spacing.to_vec(),
            origin: origin.to_vec(),
            boundary,
        })
    }

    /// Grid of `n` voxels per axis with uniform spacing, centered on the world origin.
    pub fn centered(dim: usize, n: usize, spacing: f64, boundary: Boundary) -> Result<Self> {
        let half = (n as f64 - 1.0) / 2.0;
        Grid::new(
            &vec![n; dim],
            &vec![spacing; dim],
            &vec![-half * spacing; dim],
            boundary,
        )
    }

    /// Odd-extent kernel grid with `radius[a]` voxels either side of a center voxel at the
    /// world origin. Kernel grids always use zero-pad boundaries.
    pub fn kernel(spacing: &[f64], radius: &[usize]) -> Result<Self> {
        let shape: Vec<usize> = radius.iter().map(|r| 2 * r + 1).collect();
        let origin: Vec<f64> = radius
            .iter()
            .zip(spacing)
            .map(|(&r, &s)| -(r as f64) * s)
            .collect();
        Grid::new(&shape, spacing, &origin, Boundary::ZeroPad)
    }

    /// Kernel grid covering every voxel offset that can couple two voxels of `self`
    /// under its boundary mode: `n - 1` for zero-pad, `(n - 1) / 2` for periodic.
    pub fn full_kernel_grid(&self) -> Grid {
        let radius: Vec<usize> = self
            .shape
            .iter()
            .map(|&n| match self.boundary {
                Boundary::ZeroPad => n - 1,
                Boundary::Periodic => (n - 1) / 2,
            })
            .collect();
        Grid::kernel(&self.spacing, &radius).expect("derived from a valid grid")
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_boundary(&self, boundary: Boundary) -> Grid {
        Grid { boundary, ..self.clone() }
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Shape padded to three axes with trailing unit extents.
    pub fn shape3(&self) -> [usize; 3] {
        let mut s = [1; 3];
        s[..self.dim()].copy_from_slice(&self.shape);
        s
    }

    /// World coordinate of a voxel index.
    pub fn position(&self, index: &[usize]) -> Vec<f64> {
        index
            .iter()
            .zip(&self.origin)
            .zip(&self.spacing)
            .map(|((&i, &o), &s)| o + i as f64 * s)
            .collect()
    }

    /// Flat (row-major) offset of a multi-index.
    pub fn flat_index(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Multi-index of a flat offset, padded to three axes.
    pub fn unflatten3(&self, flat: usize) -> [usize; 3] {
        let [_, n1, n2] = self.shape3();
        [flat / (n1 * n2), (flat / n2) % n1, flat % n2]
    }

    /// Iterator over all voxel multi-indices (padded to three axes) in storage order.
    pub fn indices3(&self) -> impl Iterator<Item = [usize; 3]> {
        let [n0, n1, n2] = self.shape3();
        (0..n0).flat_map(move |i| (0..n1).flat_map(move |j| (0..n2).map(move |k| [i, j, k])))
    }

    /// True when both grids have identical geometry (shape, spacing, origin, boundary).
    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }

    /// True when two grids share dimension and spacing (to 1e-12 relative), the
    /// compatibility needed to convolve a field on `self` with a kernel on `other`.
    pub fn spacing_matches(&self, other: &Grid) -> bool {
        self.dim() == other.dim()
            && self
                .spacing
                .iter()
                .zip(&other.spacing)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()))
    }

    /// Number of voxels between `index` and the nearest face, minimum over axes.
    pub fn distance_to_face(&self, index: [usize; 3]) -> usize {
        (0..self.dim())
            .map(|a| index[a].min(self.shape[a] - 1 - index[a]))
            .min()
            .unwrap_or(0)
    }
}
