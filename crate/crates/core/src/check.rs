//! Property suites: equivariance, linearity, path equivalence and vector-calculus
//! identities, each reported as a maximum deviation against a fixed tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvPath;
use crate::error::Result;
use crate::field::{all_rules, field_norm, rotate_field, LatticeRotation, TensorField};
use crate::kernel::KernelField;
use crate::learn::{default_basis, NeuralOp};
use crate::operators::{self, EquivariantOp, OperatorParams, REGISTRY};

pub const EQUIVARIANCE_TOL: f64 = 1e-10;
pub const LINEARITY_TOL: f64 = 1e-10;
pub const PATH_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyResult {
    pub fn new(name: impl Into<String>, max_deviation: f64, tolerance: f64) -> Self {
        PropertyResult {
            name: name.into(),
            max_deviation,
            tolerance,
            passed: max_deviation < tolerance,
        }
    }
}

/// Max over all lattice rotations of `|L(g u) - g L(u)| / max|g L(u)|`.
pub fn equivariance_deviation(apply: impl Fn(&TensorField) -> Result<TensorField>, u: &TensorField) -> Result<f64> {
    let v = apply(u)?;
    let mut worst = 0.0_f64;
    for g in LatticeRotation::all(u.grid().dim()) {
        let a = apply(&rotate_field(u, &g)?)?;
        let b = rotate_field(&v, &g)?;
        worst = worst.max(a.max_rel_deviation(&b));
    }
    Ok(worst)
}

pub fn equivariance(op: &EquivariantOp, u: &TensorField) -> Result<PropertyResult> {
    let dev = equivariance_deviation(|x| op.apply(x), u)?;
    Ok(PropertyResult::new(format!("equivariance/{}", op.name()), dev, EQUIVARIANCE_TOL))
}

/// `L(a u + b w)` against `a L(u) + b L(w)`.
pub fn linearity(op: &EquivariantOp, u: &TensorField, w: &TensorField, a: f64, b: f64) -> Result<PropertyResult> {
    let mut mix = u.scaled(a);
    mix.axpy(b, w)?;
    let lhs = op.apply(&mix)?;
    let mut rhs = op.apply(u)?.scaled(a);
    rhs.axpy(b, &op.apply(w)?)?;
    Ok(PropertyResult::new(format!("linearity/{}", op.name()), lhs.max_rel_deviation(&rhs), LINEARITY_TOL))
}

/// Direct against Fourier evaluation of the same operator.
pub fn path_equivalence(op: &EquivariantOp, u: &TensorField) -> Result<PropertyResult> {
    let d = op.with_path(ConvPath::Direct)?.apply(u)?;
    let f = op.with_path(ConvPath::Fourier)?.apply(u)?;
    Ok(PropertyResult::new(format!("path/{}", op.name()), f.max_rel_deviation(&d), PATH_TOL))
}

fn interior_ratio(x: &TensorField, scale_of: &TensorField, margin: usize) -> f64 {
    let zero = TensorField::zeros(x.grid(), x.l()).expect("same grid and order");
    let abs = x.max_rel_deviation_interior(&zero, margin);
    // against a zero reference this is the plain interior max of abs(x)
    let scale = scale_of.max_abs();
    if scale > 0.0 {
        abs / scale
    } else {
        abs
    }
}

/// `curl(grad s) = 0`, `div(curl v) = 0` (3d) and `div(grad s) = laplacian(s)` on voxels
/// at least two away from every face.
pub fn calculus_identities(s: &TensorField, v: &TensorField) -> Result<Vec<PropertyResult>> {
    let grid = s.grid();
    let margin = 2;
    let (grad, div, curl, lap) = (
        operators::grad(grid)?,
        operators::div(grid)?,
        operators::curl(grid)?,
        operators::laplacian(grid)?,
    );
    let gs = grad.apply(s)?;
    let mut out = vec![PropertyResult::new(
        "identity/curl_grad",
        interior_ratio(&curl.apply(&gs)?, &gs, margin),
        IDENTITY_TOL,
    )];
    if grid.dim() == 3 {
        let cv = curl.apply(v)?;
        out.push(PropertyResult::new(
            "identity/div_curl",
            interior_ratio(&div.apply(&cv)?, &cv, margin),
            IDENTITY_TOL,
        ));
    }
    let dg = div.apply(&gs)?;
    out.push(PropertyResult::new(
        "identity/div_grad_laplacian",
        dg.max_rel_deviation_interior(&lap.apply(s)?, margin),
        IDENTITY_TOL,
    ));
    Ok(out)
}

/// Perturbs one off-center kernel voxel so that the kernel loses its rotational symmetry.
pub fn corrupt_kernel(op: &EquivariantOp) -> Result<EquivariantOp> {
    let k = op.kernel();
    let mut f = k.field().clone();
    let r = k.radius();
    let mut idx = r.clone();
    idx[0] += 1;
    let flat = f.grid().flat_index(&idx);
    let scale = f.max_abs().max(1.0);
    for c in 0..f.components() {
        f.component_mut(c)[flat] += 0.25 * scale * (c + 1) as f64;
    }
    op.with_kernel(KernelField::from_field(f, k.kind())?)
}

/// Named operators that make sense on the grid, by name.
pub fn named_operators(grid: &crate::field::Grid, identity_order: u8) -> Result<Vec<EquivariantOp>> {
    let params = OperatorParams { l: identity_order, diffusivity: 0.5, time: 1.0 };
    REGISTRY
        .iter()
        .filter(|&&name| !(name == "gauss_law" && grid.dim() != 3))
        .map(|name| operators::build(name, grid, &params))
        .collect()
}

/// Neural operators with random amplitudes on the default basis, cycling through the rules
/// supported in the grid's dimension.
pub fn random_neural_ops(grid: &crate::field::Grid, count: usize, rng: &mut impl Rng) -> Result<Vec<NeuralOp>> {
    let rules = all_rules(grid.dim());
    (0..count)
        .map(|i| {
            let rule = rules[(i * 7 + rng.random_range(0..rules.len())) % rules.len()];
            let mut p = default_basis(grid, rule.lh());
            let amps: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.set_amplitudes(&amps)?;
            NeuralOp::new(p, rule, grid, ConvPath::Fourier)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    pub neural_ops: usize,
    /// Negative control: run the suite on deliberately asymmetric kernels.
    pub corrupt_kernel: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 0, neural_ops: 2, corrupt_kernel: false }
    }
}

/// Runs every property on `u`. Operators needing a different input order get a random
/// field of that order drawn from the seed.
pub fn run_suite(u: &TensorField, opts: &SuiteOptions) -> Result<Vec<PropertyResult>> {
    let grid = u.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let input_for = |l: u8, rng: &mut ChaCha8Rng| -> Result<TensorField> {
        if l == u.l() {
            Ok(u.clone())
        } else {
            TensorField::random(grid, l, rng)
        }
    };
    let mut results = Vec::new();
    let mut ops = named_operators(grid, u.l())?;
    if opts.corrupt_kernel {
        ops = ops.iter().map(corrupt_kernel).collect::<Result<_>>()?;
    }
    for op in &ops {
        let x = input_for(op.rule().lu(), &mut rng)?;
        let y = TensorField::random(grid, op.rule().lu(), &mut rng)?;
        results.push(equivariance(op, &x)?);
        results.push(linearity(op, &x, &y, 1.7, -0.6)?);
        results.push(path_equivalence(op, &x)?);
    }
    for (i, nop) in random_neural_ops(grid, opts.neural_ops, &mut rng)?.iter().enumerate() {
        let x = input_for(nop.rule().lu(), &mut rng)?;
        let dev = equivariance_deviation(|f| nop.apply(f), &x)?;
        results.push(PropertyResult::new(
            format!("equivariance/neural{i}[{}]", nop.rule().spec_string()),
            dev,
            EQUIVARIANCE_TOL,
        ));
    }
    let s = if u.l() == 0 { u.clone() } else { field_norm(u) };
    let v = if u.l() == 1 { u.clone() } else { TensorField::random(grid, 1, &mut rng)? };
    results.extend(calculus_identities(&s, &v)?);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Boundary, Grid};

    #[test]
    fn random_scalar_field_passes_everything() {
        let g = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = TensorField::random(&g, 0, &mut rng).unwrap();
        let results = run_suite(&u, &SuiteOptions::default()).unwrap();
        assert!(results.len() > 20);
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn two_dimensional_subset() {
        let g = Grid::centered(2, 9, 1.0, Boundary::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = TensorField::random(&g, 1, &mut rng).unwrap();
        let results = run_suite(&u, &SuiteOptions::default()).unwrap();
        assert!(results.iter().all(|r| r.passed), "{results:?}");
        assert!(!results.iter().any(|r| r.name.contains("gauss_law") || r.name == "identity/div_curl"));
    }

    #[test]
    fn corrupted_kernels_fail_equivariance() {
        let g = Grid::centered(3, 7, 1.0, Boundary::ZeroPad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = TensorField::random(&g, 0, &mut rng).unwrap();
        let opts = SuiteOptions { corrupt_kernel: true, neural_ops: 0, ..Default::default() };
        let results = run_suite(&u, &opts).unwrap();
        let eq: Vec<_> = results.iter().filter(|r| r.name.starts_with("equivariance/")).collect();
        assert!(!eq.is_empty());
        assert!(eq.iter().all(|r| !r.passed), "{eq:?}");
        assert!(results.iter().filter(|r| r.name.starts_with("linearity/")).all(|r| r.passed));
    }
}
