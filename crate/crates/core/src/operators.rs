//! Named equivariant operators: differential stencils and Green's functions.
//!
//! Units follow Gaussian conventions with `eps_0 = 1`: `inverse_laplacian(u)` returns the
//! potential `v` with `laplacian(v) = -u`, and `gauss_law(u) = -grad(v)` is the
//! curl-free (Coulomb) field with `div E = u`. Divergence has a null space, so this is one
//! of many fields with that divergence.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::conv::{conv_with, ConvPath, ConvPlan, FourierConv};
use crate::error::{Error, Result};
use crate::field::{Boundary, Grid, ProductKind, ProductRule, TensorField};
use crate::kernel::{
    delta_stencil, gradient_stencil, laplacian_stencil, sample_kernel, KernelField, NamedProfile,
};

/// A kernel, product rule and convolution path bundled for one field grid.
#[derive(Clone)]
pub struct EquivariantOp {
    name: String,
    kernel: KernelField,
    plan: ConvPlan,
    grid: Grid,
    /// Green's functions are free-space operators; inputs are treated as zero outside
    /// the domain whatever the grid's boundary says.
    free_space: bool,
    prepared: Option<Arc<FourierConv>>,
}

impl fmt::Debug for EquivariantOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EquivariantOp")
            .field("name", &self.name)
            .field("rule", self.plan.rule())
            .field("path", &self.plan.path())
            .field("kernel_shape", &self.kernel.grid().shape())
            .finish()
    }
}

impl EquivariantOp {
    pub fn new(
        name: impl Into<String>,
        grid: &Grid,
        kernel: KernelField,
        rule: ProductRule,
        path: ConvPath,
    ) -> Result<Self> {
        EquivariantOp::build(name, grid, kernel, rule, path, false)
    }

    fn build(
        name: impl Into<String>,
        grid: &Grid,
        kernel: KernelField,
        rule: ProductRule,
        path: ConvPath,
        free_space: bool,
    ) -> Result<Self> {
        let probe = TensorField::zeros(grid, rule.lu())?;
        crate::field::product::check_orders(&rule, probe.l(), kernel.l_h(), grid.dim())?;
        if !grid.spacing_matches(kernel.grid()) {
            return Err(Error::GridMismatch("kernel spacing differs from field grid".into()));
        }
        let mut op = EquivariantOp {
            name: name.into(),
            kernel,
            plan: ConvPlan::new(rule, path),
            grid: grid.clone(),
            free_space,
            prepared: None,
        };
        op.prepare()?;
        Ok(op)
    }

    fn prepare(&mut self) -> Result<()> {
        self.prepared = match self.plan.path() {
            ConvPath::Fourier => Some(Arc::new(FourierConv::new(
                &self.working_grid(&self.grid),
                &self.kernel,
                *self.plan.rule(),
            )?)),
            ConvPath::Direct => None,
        };
        Ok(())
    }

    fn working_grid(&self, grid: &Grid) -> Grid {
        if self.free_space {
            grid.with_boundary(Boundary::ZeroPad)
        } else {
            grid.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel(&self) -> &KernelField {
        &self.kernel
    }

    pub fn rule(&self) -> &ProductRule {
        self.plan.rule()
    }

    pub fn path(&self) -> ConvPath {
        self.plan.path()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Same operator with a different convolution path.
    pub fn with_path(&self, path: ConvPath) -> Result<Self> {
        let mut op = self.clone();
        op.plan = ConvPlan::new(*self.plan.rule(), path);
        op.prepare()?;
        Ok(op)
    }

    /// Same operator with its kernel replaced (used for negative controls).
    pub fn with_kernel(&self, kernel: KernelField) -> Result<Self> {
        let mut op = self.clone();
        op.kernel = kernel;
        op.prepare()?;
        Ok(op)
    }

    pub fn apply(&self, u: &TensorField) -> Result<TensorField> {
        if u.l() != self.rule().lu() {
            return Err(Error::OrderMismatch { expected: self.rule().lu(), found: u.l() });
        }
        let work = self.working_grid(u.grid());
        let input = u.with_grid(&work)?;
        let out = match &self.prepared {
            Some(p) if u.grid().same_as(&self.grid) => p.apply(&input)?,
            _ => conv_with(&input, &self.kernel, &self.plan)?,
        };
        out.with_grid(u.grid())
    }
}

/// Identity: delta stencil with the `(l,0)->l` scalar product.
pub fn identity(grid: &Grid, l: u8) -> Result<EquivariantOp> {
    let rule = ProductRule::infer(l, 0, l, grid.dim())?;
    EquivariantOp::new("identity", grid, delta_stencil(grid), rule, ConvPath::Direct)
}

pub fn grad(grid: &Grid) -> Result<EquivariantOp> {
    let rule = ProductRule::infer(0, 1, 1, grid.dim())?;
    EquivariantOp::new("grad", grid, gradient_stencil(grid), rule, ConvPath::Direct)
}

pub fn div(grid: &Grid) -> Result<EquivariantOp> {
    let rule = ProductRule::new(1, 1, 0, ProductKind::Dot, grid.dim())?;
    EquivariantOp::new("div", grid, gradient_stencil(grid), rule, ConvPath::Direct)
}

/// Curl: vector in 3d, pseudo-scalar in 2d.
///
/// The product is `u x h` with the field on the left, which reverses the sign of
/// `grad x u`; the kernel is therefore the negated gradient stencil.
pub fn curl(grid: &Grid) -> Result<EquivariantOp> {
    let lv = if grid.dim() == 3 { 1 } else { 0 };
    let rule = ProductRule::new(1, 1, lv, ProductKind::Cross, grid.dim())?;
    EquivariantOp::new("curl", grid, gradient_stencil(grid).scaled(-1.0), rule, ConvPath::Direct)
}

pub fn laplacian(grid: &Grid) -> Result<EquivariantOp> {
    let rule = ProductRule::infer(0, 0, 0, grid.dim())?;
    EquivariantOp::new("laplacian", grid, laplacian_stencil(grid), rule, ConvPath::Direct)
}

/// Electric potential of a charge density: `1/(4 pi r)` in 3d, `-ln(r)/(2 pi)` in 2d.
pub fn inverse_laplacian(grid: &Grid) -> Result<EquivariantOp> {
    let profile = if grid.dim() == 3 { NamedProfile::InverseR } else { NamedProfile::LogR }.profile()?;
    let zero = grid.with_boundary(Boundary::ZeroPad);
    let kernel = sample_kernel(&zero.full_kernel_grid(), &profile, 0)?;
    let rule = ProductRule::infer(0, 0, 0, grid.dim())?;
    EquivariantOp::build("inverse_laplacian", grid, kernel, rule, ConvPath::Fourier, true)
}

/// Electric field of a charge density (3d): outward hedgehog kernel `r_hat / (4 pi r^2)`.
pub fn gauss_law(grid: &Grid) -> Result<EquivariantOp> {
    if grid.dim() != 3 {
        return Err(Error::InvalidParameter("gauss_law is defined in 3d only".into()));
    }
    let zero = grid.with_boundary(Boundary::ZeroPad);
    let kernel = sample_kernel(&zero.full_kernel_grid(), &NamedProfile::InverseR2.profile()?, 1)?;
    let rule = ProductRule::infer(0, 1, 1, 3)?;
    EquivariantOp::build("gauss_law", grid, kernel, rule, ConvPath::Fourier, true)
}

/// Heat-kernel smoothing for time `t` at diffusivity `D`.
///
/// The sampled kernel is rescaled to unit discrete mass (`sum * V = 1`), the quadrature
/// factor that makes the operator conserve total mass exactly on periodic grids.
pub fn diffusion(grid: &Grid, diffusivity: f64, time: f64) -> Result<EquivariantOp> {
    let profile = NamedProfile::GaussianDiffusion { diffusivity, time, dim: grid.dim() }.profile()?;
    let kernel = sample_kernel(&grid.full_kernel_grid(), &profile, 0)?;
    let mass = kernel.field().integral()[0];
    let kernel = kernel.scaled(1.0 / mass);
    let rule = ProductRule::infer(0, 0, 0, grid.dim())?;
    EquivariantOp::new("diffusion", grid, kernel, rule, ConvPath::Fourier)
}

/// Names accepted by [`build`].
pub const REGISTRY: &[&str] = &[
    "identity",
    "grad",
    "div",
    "curl",
    "laplacian",
    "inverse_laplacian",
    "gauss_law",
    "diffusion",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorName {
    Identity,
    Grad,
    Div,
    Curl,
    Laplacian,
    InverseLaplacian,
    GaussLaw,
    Diffusion,
}

impl FromStr for OperatorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => OperatorName::Identity,
            "grad" => OperatorName::Grad,
            "div" => OperatorName::Div,
            "curl" => OperatorName::Curl,
            "laplacian" => OperatorName::Laplacian,
            "inverse_laplacian" => OperatorName::InverseLaplacian,
            "gauss_law" => OperatorName::GaussLaw,
            "diffusion" => OperatorName::Diffusion,
            other => {
                return Err(Error::UnknownOperator {
                    name: other.to_string(),
                    registry: REGISTRY.join(", "),
                })
            }
        })
    }
}

/// Extra parameters some registry entries need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorParams {
    /// Input order for `identity`.
    pub l: u8,
    pub diffusivity: f64,
    pub time: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        OperatorParams { l: 0, diffusivity: 1.0, time: 1.0 }
    }
}

/// Builds a registry operator by name for a field grid.
pub fn build(name: &str, grid: &Grid, params: &OperatorParams) -> Result<EquivariantOp> {
    match name.parse::<OperatorName>()? {
        OperatorName::Identity => identity(grid, params.l),
        OperatorName::Grad => grad(grid),
        OperatorName::Div => div(grid),
        OperatorName::Curl => curl(grid),
        OperatorName::Laplacian => laplacian(grid),
        OperatorName::InverseLaplacian => inverse_laplacian(grid),
        OperatorName::GaussLaw => gauss_law(grid),
        OperatorName::Diffusion => diffusion(grid, params.diffusivity, params.time),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{rotate_field, LatticeRotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn point_charge(grid: &Grid, idx: &[usize], q: f64) -> TensorField {
        let mut u = TensorField::zeros(grid, 0).unwrap();
        u.component_mut(0)[grid.flat_index(idx)] = q / grid.voxel_volume();
        u
    }

    #[test]
    fn grad_of_quadratic_is_exact() {
        let g = Grid::new(&[7, 7], &[1.0; 2], &[-3.0, -3.0], Boundary::ZeroPad).unwrap();
        let f = TensorField::from_fn(&g, 0, |p, o| o[0] = p[0] * p[0] + p[1] * p[1]).unwrap();
        let gf = grad(&g).unwrap().apply(&f).unwrap();
        let v = gf.value(g.flat_index(&[4, 5]));
        assert!((v[0] - 2.0).abs() < 1e-14 && (v[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn grad_of_constant_vanishes_in_interior() {
        let g = Grid::centered(3, 6, 0.5, Boundary::Periodic).unwrap();
        let f = TensorField::constant(&g, 0, &[3.0]).unwrap();
        assert!(grad(&g).unwrap().apply(&f).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn curl_sign_matches_vector_calculus() {
        // v = (-y, x, 0) has curl (0, 0, 2)
        let g = Grid::centered(3, 5, 1.0, Boundary::ZeroPad).unwrap();
        let v = TensorField::from_fn(&g, 1, |p, o| {
            o[0] = -p[1];
            o[1] = p[0];
        })
        .unwrap();
        let c = curl(&g).unwrap().apply(&v).unwrap();
        assert_eq!(c.value(g.flat_index(&[2, 2, 2])), vec![0.0, 0.0, 2.0]);
        let g2 = Grid::centered(2, 5, 1.0, Boundary::ZeroPad).unwrap();
        let v2 = TensorField::from_fn(&g2, 1, |p, o| {
            o[0] = -p[1];
            o[1] = p[0];
        })
        .unwrap();
        let c2 = curl(&g2).unwrap().apply(&v2).unwrap();
        assert_eq!(c2.value(g2.flat_index(&[2, 2])), vec![2.0]);
    }

    #[test]
    fn point_charge_potential() {
        let g = Grid::centered(3, 33, 1.0, Boundary::ZeroPad).unwrap();
        let u = point_charge(&g, &[16, 16, 16], 1.0);
        let v = inverse_laplacian(&g).unwrap().apply(&u).unwrap();
        let got = v.value(g.flat_index(&[20, 16, 16]))[0];
        let want = 1.0 / (16.0 * PI);
        assert!(((got - want) / want).abs() < 0.05);
        assert!(inverse_laplacian(&g).unwrap().apply(&TensorField::zeros(&g, 0).unwrap()).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn potential_is_linear_in_charges() {
        let g = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
        let op = inverse_laplacian(&g).unwrap();
        let a = point_charge(&g, &[2, 4, 4], 1.0);
        let b = point_charge(&g, &[6, 3, 5], 1.0);
        let mut both = a.clone();
        both.axpy(1.0, &b).unwrap();
        let mut sum = op.apply(&a).unwrap();
        sum.axpy(1.0, &op.apply(&b).unwrap()).unwrap();
        assert!(op.apply(&both).unwrap().max_rel_deviation(&sum) < 1e-12);
    }

    #[test]
    fn coulomb_field_of_point_charge() {
        let g = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
        let e = gauss_law(&g).unwrap().apply(&point_charge(&g, &[4, 4, 4], 1.0)).unwrap();
        let v = e.value(g.flat_index(&[6, 4, 4]));
        let want = 1.0 / (16.0 * PI);
        assert!((v[0] - want).abs() < 1e-12 * want + 1e-15);
        assert!(v[1].abs() < 1e-15 && v[2].abs() < 1e-15);
        assert!(gauss_law(&Grid::centered(2, 5, 1.0, Boundary::ZeroPad).unwrap()).is_err());
    }

    #[test]
    fn gauss_law_commutes_with_quarter_turn() {
        let g = Grid::centered(3, 7, 1.0, Boundary::ZeroPad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = TensorField::random(&g, 0, &mut rng).unwrap();
        let op = gauss_law(&g).unwrap();
        let rot = LatticeRotation::quarter_turn(3, 2, 1);
        let lhs = op.apply(&rotate_field(&u, &rot).unwrap()).unwrap();
        let rhs = rotate_field(&op.apply(&u).unwrap(), &rot).unwrap();
        assert!(lhs.max_rel_deviation(&rhs) < 1e-10);
    }

    #[test]
    fn diffusion_conserves_mass_and_peaks_at_heat_kernel() {
        let g = Grid::centered(3, 16, 1.0, Boundary::Periodic).unwrap();
        let (d, t) = (0.5, 2.0);
        let op = diffusion(&g, d, t).unwrap();
        let u = point_charge(&g, &[8, 8, 8], 1.0);
        let v = op.apply(&u).unwrap();
        assert!((v.integral()[0] - 1.0).abs() < 1e-10);
        // peak = (4 pi D t)^(-3/2) / (discrete mass of the sampled kernel)
        let profile = NamedProfile::GaussianDiffusion { diffusivity: d, time: t, dim: 3 }.profile().unwrap();
        let raw = sample_kernel(&g.full_kernel_grid(), &profile, 0).unwrap();
        let quadrature = raw.field().integral()[0];
        let want = (4.0 * PI * d * t).powf(-1.5) / quadrature;
        let peak = v.value(g.flat_index(&[8, 8, 8]))[0];
        assert!((peak - want).abs() < 1e-12 * want);
        // quadrature factor is close to one for sigma = 2 spacings
        assert!((quadrature - 1.0).abs() < 1e-6);
        assert!(diffusion(&g, 0.0, 1.0).is_err());
        assert!(diffusion(&g, 1.0, -1.0).is_err());
    }

    #[test]
    fn short_time_diffusion_is_near_identity() {
        // sigma = sqrt(2 D t) = 0.5 spacing
        let g = Grid::centered(3, 24, 1.0, Boundary::Periodic).unwrap();
        let blob = TensorField::from_fn(&g, 0, |p, o| {
            o[0] = (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * 16.0)).exp()
        })
        .unwrap();
        let v = diffusion(&g, 0.125, 1.0).unwrap().apply(&blob).unwrap();
        assert!(v.max_rel_deviation(&blob) < 0.05);
    }

    #[test]
    fn registry_lookup() {
        let g = Grid::centered(3, 5, 1.0, Boundary::ZeroPad).unwrap();
        for name in REGISTRY {
            let op = build(name, &g, &OperatorParams::default()).unwrap();
            assert_eq!(op.name(), *name);
        }
        let err = build("stokeslet", &g, &OperatorParams::default()).unwrap_err();
        assert!(err.to_string().contains("gauss_law"));
        let v = TensorField::zeros(&g, 1).unwrap();
        assert!(matches!(laplacian(&g).unwrap().apply(&v), Err(Error::OrderMismatch { .. })));
    }
}
