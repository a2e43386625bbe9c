//! Radially symmetric kernel fields `h = R(|r|) Y_l(r_hat)` and finite-difference stencils.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::eqf::{self, EqfFile};
use crate::field::{unit_harmonic, Grid, TensorField};

/// What a kernel takes at `r = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OriginRule {
    /// Evaluate the profile at zero. Invalid for singular profiles.
    Evaluate,
    /// Zero at the origin; for singular Green's functions this drops the self-interaction.
    Zero,
    /// A fixed value (scalar kernels only).
    Value(f64),
}

/// Scalar radial function `R(r)`.
///
/// The rule only ever sees `|r|`, so kernels built from it are isotropic by construction.
#[derive(Clone)]
pub struct RadialProfile {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    support_radius: f64,
    singular_at_origin: bool,
    origin: OriginRule,
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile")
            .field("name", &self.name)
            .field("support_radius", &self.support_radius)
            .field("singular_at_origin", &self.singular_at_origin)
            .field("origin", &self.origin)
            .finish()
    }
}

impl RadialProfile {
    pub fn new(name: impl Into<String>, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RadialProfile {
            name: name.into(),
            eval: Arc::new(eval),
            support_radius: f64::INFINITY,
            singular_at_origin: false,
            origin: OriginRule::Evaluate,
        }
    }

    /// Marks the profile singular at `r = 0`, resetting the origin rule to
    /// [`OriginRule::Evaluate`] (which sampling rejects) until one is chosen.
    pub fn singular(mut self) -> Self {
        self.singular_at_origin = true;
        self.origin = OriginRule::Evaluate;
        self
    }

    pub fn with_origin(mut self, origin: OriginRule) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_support(mut self, radius: f64) -> Self {
        self.support_radius = radius;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn is_singular(&self) -> bool {
        self.singular_at_origin
    }

    pub fn origin_rule(&self) -> OriginRule {
        self.origin
    }

    /// `R(r)` for `r > 0`, zero beyond the support radius.
    pub fn eval(&self, r: f64) -> f64 {
        if r > self.support_radius {
            0.0
        } else {
            (self.eval)(r)
        }
    }

    /// Value used at `r = 0`.
    pub fn origin_value(&self) -> Result<f64> {
        match self.origin {
            OriginRule::Evaluate if self.singular_at_origin => {
                Err(Error::MissingOriginRule(self.name.clone()))
            }
            OriginRule::Evaluate => Ok((self.eval)(0.0)),
            OriginRule::Zero => Ok(0.0),
            OriginRule::Value(v) => Ok(v),
        }
    }
}

/// The library of named radial profiles, with normalization constants included so that
/// the operators built from them invert each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NamedProfile {
    /// `exp(-r^2 / (2 sigma^2))`, peak 1.
    Gaussian { sigma: f64 },
    /// `1 / (4 pi r)`: free-space Green's function of `-laplacian` in 3d.
    InverseR,
    /// `1 / (4 pi r^2)`: Coulomb field magnitude of a unit charge in 3d.
    InverseR2,
    /// `-ln(r) / (2 pi)`: free-space Green's function of `-laplacian` in 2d.
    LogR,
    /// Heat kernel `(4 pi D t)^(-dim/2) exp(-r^2 / (4 D t))`.
    GaussianDiffusion { diffusivity: f64, time: f64, dim: usize },
}

pub const PROFILE_NAMES: &[&str] = &["gaussian", "inverse_r", "inverse_r2", "log_r", "gaussian_diffusion"];

impl NamedProfile {
    pub fn profile(&self) -> Result<RadialProfile> {
        Ok(match *self {
            NamedProfile::Gaussian { sigma } => {
                if !(sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!("gaussian width {sigma} <= 0")));
                }
                RadialProfile::new(format!("gaussian({sigma})"), move |r| {
                    (-r * r / (2.0 * sigma * sigma)).exp()
                })
            }
            NamedProfile::InverseR => RadialProfile::new("inverse_r", |r| 1.0 / (4.0 * PI * r))
                .singular()
                .with_origin(OriginRule::Zero),
            NamedProfile::InverseR2 => {
                RadialProfile::new("inverse_r2", |r| 1.0 / (4.0 * PI * r * r))
                    .singular()
                    .with_origin(OriginRule::Zero)
            }
            NamedProfile::LogR => RadialProfile::new("log_r", |r| -r.ln() / (2.0 * PI))
                .singular()
                .with_origin(OriginRule::Zero),
            NamedProfile::GaussianDiffusion { diffusivity, time, dim } => {
                if !(diffusivity > 0.0 && time > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "diffusion needs D > 0 and t > 0 (got D={diffusivity}, t={time})"
                    )));
                }
                let four_dt = 4.0 * diffusivity * time;
                let norm = (PI * four_dt).powf(-(dim as f64) / 2.0);
                RadialProfile::new(format!("gaussian_diffusion({diffusivity},{time})"), move |r| {
                    norm * (-r * r / four_dt).exp()
                })
            }
        })
    }

    /// Parses `name` or `name:p1,p2` (e.g. `gaussian:1.5`, `gaussian_diffusion:0.1,2`).
    /// `dim` is only used by `gaussian_diffusion`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n, crate::util::parse_f64_list(n, a)?),
            None => (spec, Vec::new()),
        };
        let need = |k: usize| {
            if args.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("`{name}` takes {k} parameter(s)")))
            }
        };
        match name {
            "gaussian" => need(1).map(|_| NamedProfile::Gaussian { sigma: args[0] }),
            "inverse_r" => need(0).map(|_| NamedProfile::InverseR),
            "inverse_r2" => need(0).map(|_| NamedProfile::InverseR2),
            "log_r" => need(0).map(|_| NamedProfile::LogR),
            "gaussian_diffusion" => need(2).map(|_| NamedProfile::GaussianDiffusion {
                diffusivity: args[0],
                time: args[1],
                dim,
            }),
            other => Err(Error::UnknownProfile(format!(
                "{other} (known: {})",
                PROFILE_NAMES.join(", ")
            ))),
        }
    }
}

/// Looks up a profile by name; see [`NamedProfile::parse`] for the syntax.
pub fn named_profile(spec: &str, dim: usize) -> Result<RadialProfile> {
    NamedProfile::parse(spec, dim)?.profile()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Sampled,
    Stencil,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Sampled => "sampled",
            KernelKind::Stencil => "stencil",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(KernelKind::Sampled),
            "stencil" => Ok(KernelKind::Stencil),
            other => Err(Error::Format(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// A kernel on an odd, centered grid (the center voxel sits at offset zero).
#[derive(Debug, Clone)]
pub struct KernelField {
    field: TensorField,
    profile: Option<RadialProfile>,
    kind: KernelKind,
}

fn check_kernel_grid(grid: &Grid) -> Result<Vec<usize>> {
    let mut radius = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let n = grid.shape()[a];
        if n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("kernel extent {n} along axis {a} is even")));
        }
        let r = n / 2;
        let center = grid.origin()[a] + r as f64 * grid.spacing()[a];
        if center.abs() > 1e-9 * grid.spacing()[a] {
            return Err(Error::InvalidGrid(format!(
                "kernel grid center along axis {a} is at {center}, not 0"
            )));
        }
        radius.push(r);
    }
    Ok(radius)
}

impl KernelField {
    /// Wraps an arbitrary field as a kernel. The grid must be odd and centered.
    pub fn from_field(field: TensorField, kind: KernelKind) -> Result<Self> {
        check_kernel_grid(field.grid())?;
        Ok(KernelField { field, profile: None, kind })
    }

    pub fn field(&self) -> &TensorField {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn l_h(&self) -> u8 {
        self.field.l()
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn profile(&self) -> Option<&RadialProfile> {
        self.profile.as_ref()
    }

    /// Half-extent per axis.
    pub fn radius(&self) -> Vec<usize> {
        self.grid().shape().iter().map(|n| n / 2).collect()
    }

    /// Integer offset (padded to three axes) of a flat kernel voxel from the center.
    pub fn offset3(&self, flat: usize) -> [i64; 3] {
        let idx = self.grid().unflatten3(flat);
        let r = self.radius();
        std::array::from_fn(|a| if a < r.len() { idx[a] as i64 - r[a] as i64 } else { 0 })
    }

    pub fn scaled(&self, a: f64) -> Self {
        KernelField { field: self.field.scaled(a), profile: None, kind: self.kind }
    }

    /// Copy of this kernel placed at the center of a larger (or equal) kernel grid.
    pub fn embed(&self, target: &Grid) -> Result<Self> {
        let target_radius = check_kernel_grid(target)?;
        if !target.spacing_matches(self.grid()) {
            return Err(Error::GridMismatch("kernel spacing differs from target".into()));
        }
        let r = self.radius();
        if r.iter().zip(&target_radius).any(|(a, b)| a > b) {
            return Err(Error::GridMismatch(format!(
                "kernel radius {r:?} exceeds target radius {target_radius:?}"
            )));
        }
        let mut out = TensorField::zeros(target, self.l_h())?;
        let dim = target.dim();
        for flat in 0..self.grid().len() {
            let off = self.offset3(flat);
            let idx: Vec<usize> =
                (0..dim).map(|a| (off[a] + target_radius[a] as i64) as usize).collect();
            let dst = target.flat_index(&idx);
            for c in 0..self.field.components() {
                out.component_mut(c)[dst] = self.field.component(c)[flat];
            }
        }
        Ok(KernelField { field: out, profile: None, kind: self.kind })
    }

    /// Sum of two kernels on the union of their supports. The result is a stencil only
    /// when both inputs are.
    pub fn add(&self, other: &KernelField) -> Result<Self> {
        if self.l_h() != other.l_h() {
            return Err(Error::OrderMismatch { expected: self.l_h(), found: other.l_h() });
        }
        let radius: Vec<usize> = self
            .radius()
            .iter()
            .zip(other.radius())
            .map(|(a, b)| (*a).max(b))
            .collect();
        let target = Grid::kernel(self.grid().spacing(), &radius)?;
        let mut a = self.embed(&target)?;
        let b = other.embed(&target)?;
        a.field.axpy(1.0, &b.field)?;
        if other.kind == KernelKind::Sampled {
            a.kind = KernelKind::Sampled;
        }
        Ok(a)
    }

    /// Nonzero entries `(flat index, offset, component values)`, used by the direct path.
    pub fn support(&self) -> Vec<(usize, [i64; 3], Vec<f64>)> {
        (0..self.grid().len())
            .filter_map(|flat| {
                let v = self.field.value(flat);
                v.iter()
                    .any(|&x| x != 0.0)
                    .then(|| (flat, self.offset3(flat), v))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let kind = self.kind.to_string();
        eqf::save_with(path, &self.field, &[("kind", &kind)])
    }

    pub fn from_eqf(file: EqfFile) -> Result<Self> {
        let kind = file
            .extra("kind")
            .ok_or_else(|| Error::Format("kernel file lacks `kind`".into()))?
            .parse()?;
        KernelField::from_field(file.field, kind)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        KernelField::from_eqf(eqf::load_file(path)?)
    }
}

/// Samples `R(|r|) Y_{l_h}(r_hat)` on a centered odd kernel grid.
///
/// At `r = 0` the value follows the profile's origin rule for `l_h = 0`; for `l_h >= 1`
/// the harmonic has no direction there and the value is zero.
pub fn sample_kernel(grid: &Grid, profile: &RadialProfile, l_h: u8) -> Result<KernelField> {
    let radius = check_kernel_grid(grid)?;
    let origin_value = profile.origin_value()?;
    let mut field = TensorField::zeros(grid, l_h)?;
    let dim = grid.dim();
    let spacing = grid.spacing();
    let mut y = vec![0.0; field.components()];
    let mut offset = vec![0.0; dim];
    for (flat, idx) in grid.indices3().enumerate() {
        for a in 0..dim {
            offset[a] = (idx[a] as i64 - radius[a] as i64) as f64 * spacing[a];
        }
        let r = offset.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r == 0.0 {
            if l_h == 0 {
                field.set(flat, &[origin_value]);
            }
            continue;
        }
        let rv = profile.eval(r);
        unit_harmonic(l_h, &offset, &mut y);
        y.iter_mut().for_each(|v| *v *= rv);
        field.set(flat, &y);
    }
    if field.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "profile `{}` produced non-finite kernel values",
            profile.name()
        )));
    }
    Ok(KernelField { field, profile: Some(profile.clone()), kind: KernelKind::Sampled })
}

fn stencil_grid(grid: &Grid, r: usize) -> Result<Grid> {
    Grid::kernel(grid.spacing(), &vec![r; grid.dim()])
}

/// Identity kernel: a single center weight `1 / voxel_volume`.
pub fn delta_stencil(grid: &Grid) -> KernelField {
    let kg = stencil_grid(grid, 1).expect("spacing from a valid grid");
    let mut f = TensorField::zeros(&kg, 0).expect("scalar");
    let center = kg.len() / 2;
    f.component_mut(0)[center] = 1.0 / kg.voxel_volume();
    KernelField { field: f, profile: None, kind: KernelKind::Stencil }
}

/// Central-difference gradient kernel (`l_h = 1`).
///
/// Component `a` carries `+1 / (2 s_a V)` at offset `-e_a` and `-1 / (2 s_a V)` at `+e_a`,
/// so that convolving a scalar with it yields `(u[i+1] - u[i-1]) / (2 s_a)`.
pub fn gradient_stencil(grid: &Grid) -> KernelField {
    let kg = stencil_grid(grid, 1).expect("spacing from a valid grid");
    let dim = kg.dim();
    let vol = kg.voxel_volume();
    let mut f = TensorField::zeros(&kg, 1).expect("vector");
    for a in 0..dim {
        let w = 1.0 / (2.0 * kg.spacing()[a] * vol);
        let mut idx = vec![1usize; dim];
        idx[a] = 0;
        f.component_mut(a)[kg.flat_index(&idx)] = w;
        idx[a] = 2;
        f.component_mut(a)[kg.flat_index(&idx)] = -w;
    }
    KernelField { field: f, profile: None, kind: KernelKind::Stencil }
}

/// Laplacian kernel equal to the composition of two central differences:
/// `(u[i+2e_a] - 2u[i] + u[i-2e_a]) / (4 s_a^2)` summed over axes.
pub fn laplacian_stencil(grid: &Grid) -> KernelField {
    let kg = stencil_grid(grid, 2).expect("spacing from a valid grid");
    let dim = kg.dim();
    let vol = kg.voxel_volume();
    let mut f = TensorField::zeros(&kg, 0).expect("scalar");
    let center = vec![2usize; dim];
    let data = f.component_mut(0);
    for a in 0..dim {
        let w = 1.0 / (4.0 * kg.spacing()[a].powi(2) * vol);
        let mut idx = center.clone();
        idx[a] = 0;
        data[kg.flat_index(&idx)] += w;
        idx[a] = 4;
        data[kg.flat_index(&idx)] += w;
        data[kg.flat_index(&center)] -= 2.0 * w;
    }
    KernelField { field: f, profile: None, kind: KernelKind::Stencil }
}
