//! Tensor-field convolution.
//!
//! `v[p] = V * sum_{m,n} C_mnp (u[m] * h[n])` where `*` is discrete scalar convolution
//! with the kernel indexed by `r - r~`, `C_mnp` expands the tensor product in the
//! component basis and `V` is the voxel volume (so the sum approximates the integral).
//!
//! Two paths produce the same result: a direct loop over the kernel support for compact
//! stencils, and an FFT path for long-range kernels. Zero-pad boundaries transform at a
//! padded linear-convolution size; periodic boundaries transform at the field size with
//! the kernel folded onto the torus.

mod fft;

use num_complex::Complex64;
use rayon::prelude::*;

pub use fft::{next_fast_len, NdFft};

use crate::error::{Error, Result};
use crate::field::{Boundary, Coefficient, Grid, ProductRule, TensorField};
use crate::kernel::{KernelField, KernelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPath {
    Direct,
    Fourier,
}

impl std::str::FromStr for ConvPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ConvPath::Direct),
            "fourier" => Ok(ConvPath::Fourier),
            other => Err(Error::Format(format!("unknown convolution path `{other}`"))),
        }
    }
}

impl std::fmt::Display for ConvPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvPath::Direct => "direct",
            ConvPath::Fourier => "fourier",
        })
    }
}

/// A product rule with its expansion coefficients and chosen path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPlan {
    rule: ProductRule,
    path: ConvPath,
    coefficients: Vec<Coefficient>,
}

impl ConvPlan {
    pub fn new(rule: ProductRule, path: ConvPath) -> Self {
        ConvPlan { rule, path, coefficients: rule.coefficients() }
    }

    /// Direct path for stencils, Fourier path for sampled kernels.
    pub fn for_kernel(rule: ProductRule, kernel: &KernelField) -> Self {
        let path = match kernel.kind() {
            KernelKind::Stencil => ConvPath::Direct,
            KernelKind::Sampled => ConvPath::Fourier,
        };
        ConvPlan::new(rule, path)
    }

    pub fn rule(&self) -> &ProductRule {
        &self.rule
    }

    pub fn path(&self) -> ConvPath {
        self.path
    }

    pub fn coefficients(&self) -> &[Coefficient] {
        &self.coefficients
    }
}

fn check(u: &TensorField, h: &KernelField, rule: &ProductRule) -> Result<()> {
    if !u.grid().spacing_matches(h.grid()) {
        return Err(Error::GridMismatch(format!(
            "field spacing {:?} vs kernel spacing {:?}",
            u.grid().spacing(),
            h.grid().spacing()
        )));
    }
    crate::field::product::check_orders(rule, u.l(), h.l_h(), u.grid().dim())
}

/// Convolves with the path suited to the kernel kind.
pub fn conv(u: &TensorField, h: &KernelField, rule: &ProductRule) -> Result<TensorField> {
    conv_with(u, h, &ConvPlan::for_kernel(*rule, h))
}

pub fn conv_with(u: &TensorField, h: &KernelField, plan: &ConvPlan) -> Result<TensorField> {
    match plan.path {
        ConvPath::Direct => conv_direct(u, h, plan),
        ConvPath::Fourier => conv_fourier(u, h, plan),
    }
}

/// Per-axis source index for output `i` and kernel offset `k`, or `None` when it falls
/// outside a zero-padded domain.
fn source_index(i: usize, k: i64, n: usize, boundary: Boundary) -> Option<usize> {
    let j = i as i64 - k;
    match boundary {
        Boundary::ZeroPad => (0..n as i64).contains(&j).then_some(j as usize),
        Boundary::Periodic => Some(j.rem_euclid(n as i64) as usize),
    }
}

/// Direct summation over the kernel's nonzero entries, `O(N * |support|)`.
pub fn conv_direct(u: &TensorField, h: &KernelField, plan: &ConvPlan) -> Result<TensorField> {
    check(u, h, &plan.rule)?;
    let grid = u.grid();
    let [n0, n1, n2] = grid.shape3();
    let boundary = grid.boundary();
    let vol = grid.voxel_volume();
    let mut out = TensorField::zeros(grid, plan.rule.lv())?;
    let support = h.support();

    // per-axis source maps for each distinct offset
    let map = |k: i64, n: usize| -> Vec<Option<usize>> {
        (0..n).map(|i| source_index(i, k, n, boundary)).collect()
    };
    for (_, off, hv) in &support {
        let (m0, m1, m2) = (map(off[0], n0), map(off[1], n1), map(off[2], n2));
        for c in &plan.coefficients {
            let w = vol * c.c * hv[c.n];
            if w == 0.0 {
                continue;
            }
            let src = u.component(c.m);
            let dst = out.component_mut(c.p);
            for (i0, j0) in m0.iter().enumerate() {
                let Some(j0) = j0 else { continue };
                for (i1, j1) in m1.iter().enumerate() {
                    let Some(j1) = j1 else { continue };
                    let obase = (i0 * n1 + i1) * n2;
                    let sbase = (j0 * n1 + j1) * n2;
                    for (i2, j2) in m2.iter().enumerate() {
                        if let Some(j2) = j2 {
                            dst[obase + i2] += w * src[sbase + j2];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transform size per axis for a field grid and kernel radius.
fn fourier_shape(grid: &Grid, radius: &[usize]) -> [usize; 3] {
    let shape = grid.shape3();
    std::array::from_fn(|a| {
        if a >= grid.dim() {
            1
        } else {
            match grid.boundary() {
                Boundary::ZeroPad => next_fast_len(shape[a] + radius[a]),
                Boundary::Periodic => shape[a],
            }
        }
    })
}

/// Spectrum of one kernel component, laid out with offset zero at index zero.
fn kernel_spectrum(h: &KernelField, comp: usize, fft: &NdFft) -> Vec<Complex64> {
    let shape = fft.shape();
    let mut buf = vec![Complex64::default(); fft.len()];
    let values = h.field().component(comp);
    for (flat, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let off = h.offset3(flat);
        let idx: [usize; 3] = std::array::from_fn(|a| off[a].rem_euclid(shape[a] as i64) as usize);
        buf[(idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]] += v;
    }
    fft.process(&mut buf, false);
    buf
}

fn field_spectrum(src: &[f64], grid_shape: [usize; 3], fft: &NdFft) -> Vec<Complex64> {
    let shape = fft.shape();
    let mut buf = vec![Complex64::default(); fft.len()];
    for i0 in 0..grid_shape[0] {
        for i1 in 0..grid_shape[1] {
            let s = (i0 * grid_shape[1] + i1) * grid_shape[2];
            let d = (i0 * shape[1] + i1) * shape[2];
            for i2 in 0..grid_shape[2] {
                buf[d + i2] = Complex64::new(src[s + i2], 0.0);
            }
        }
    }
    fft.process(&mut buf, false);
    buf
}

/// FFT-based convolution: each output component is
/// `IFFT(sum_{m,n} C_mnp FFT(u[m]) FFT(h[n]))`, `O(N log N)`.
pub fn conv_fourier(u: &TensorField, h: &KernelField, plan: &ConvPlan) -> Result<TensorField> {
    check(u, h, &plan.rule)?;
    let grid = u.grid();
    let fft = NdFft::new(fourier_shape(grid, &h.radius()));
    let spectra = KernelSpectra::new(h, &fft);
    Ok(convolve_spectra(u, &spectra, plan, &fft))
}

/// Precomputed kernel spectra for repeated Fourier-path convolutions on one grid.
pub struct FourierConv {
    plan: ConvPlan,
    fft: NdFft,
    spectra: KernelSpectra,
    grid: Grid,
}

struct KernelSpectra(Vec<Vec<Complex64>>);

impl KernelSpectra {
    fn new(h: &KernelField, fft: &NdFft) -> Self {
        let comps = h.field().components();
        KernelSpectra((0..comps).into_par_iter().map(|c| kernel_spectrum(h, c, fft)).collect())
    }
}

impl FourierConv {
    pub fn new(grid: &Grid, h: &KernelField, rule: ProductRule) -> Result<Self> {
        let probe = TensorField::zeros(grid, rule.lu())?;
        check(&probe, h, &rule)?;
        let fft = NdFft::new(fourier_shape(grid, &h.radius()));
        let spectra = KernelSpectra::new(h, &fft);
        Ok(FourierConv { plan: ConvPlan::new(rule, ConvPath::Fourier), fft, spectra, grid: grid.clone() })
    }

    pub fn apply(&self, u: &TensorField) -> Result<TensorField> {
        if !u.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("field grid differs from the prepared grid".into()));
        }
        if u.l() != self.plan.rule.lu() {
            return Err(Error::OrderMismatch { expected: self.plan.rule.lu(), found: u.l() });
        }
        Ok(convolve_spectra(u, &self.spectra, &self.plan, &self.fft))
    }
}

fn convolve_spectra(u: &TensorField, spectra: &KernelSpectra, plan: &ConvPlan, fft: &NdFft) -> TensorField {
    let grid = u.grid();
    let gshape = grid.shape3();
    let shape = fft.shape();
    let u_hat: Vec<Vec<Complex64>> = (0..u.components())
        .into_par_iter()
        .map(|c| field_spectrum(u.component(c), gshape, fft))
        .collect();
    let scale = grid.voxel_volume() / fft.len() as f64;
    let out_components = plan.rule.out_components();
    let outputs: Vec<Vec<f64>> = (0..out_components)
        .into_par_iter()
        .map(|p| {
            let mut acc = vec![Complex64::default(); fft.len()];
            for c in plan.coefficients.iter().filter(|c| c.p == p) {
                let (a, b) = (&u_hat[c.m], &spectra.0[c.n]);
                for ((x, ua), hb) in acc.iter_mut().zip(a).zip(b) {
                    *x += c.c * ua * hb;
                }
            }
            fft.process(&mut acc, true);
            let mut comp = vec![0.0; grid.len()];
            for i0 in 0..gshape[0] {
                for i1 in 0..gshape[1] {
                    let s = (i0 * shape[1] + i1) * shape[2];
                    let d = (i0 * gshape[1] + i1) * gshape[2];
                    for i2 in 0..gshape[2] {
                        comp[d + i2] = acc[s + i2].re * scale;
                    }
                }
            }
            comp
        })
        .collect();
    let mut out = TensorField::zeros(grid, plan.rule.lv()).expect("validated rule");
    for (p, comp) in outputs.into_iter().enumerate() {
        out.component_mut(p).copy_from_slice(&comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{rotate_field, shift_field, LatticeRotation, ProductKind};
    use crate::kernel::{delta_stencil, gradient_stencil, named_profile, sample_kernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_stencil(grid: &Grid, l: u8, rng: &mut ChaCha8Rng) -> KernelField {
        let kg = Grid::kernel(grid.spacing(), &vec![1; grid.dim()]).unwrap();
        KernelField::from_field(TensorField::random(&kg, l, rng).unwrap(), KernelKind::Stencil).unwrap()
    }

    /// Brute-force oracle written straight from the definition, independent of both paths.
    fn naive_conv(u: &TensorField, h: &KernelField, rule: &ProductRule) -> TensorField {
        let grid = u.grid();
        let dim = grid.dim();
        let vol = grid.voxel_volume();
        let mut out = TensorField::zeros(grid, rule.lv()).unwrap();
        let shape = grid.shape();
        for (i, idx) in grid.indices3().enumerate() {
            let mut acc = vec![0.0; rule.out_components()];
            for k in 0..h.grid().len() {
                let off = h.offset3(k);
                let mut src = vec![0usize; dim];
                let mut inside = true;
                for a in 0..dim {
                    let j = idx[a] as i64 - off[a];
                    match grid.boundary() {
                        Boundary::ZeroPad if !(0..shape[a] as i64).contains(&j) => inside = false,
                        Boundary::ZeroPad => src[a] = j as usize,
                        Boundary::Periodic => src[a] = j.rem_euclid(shape[a] as i64) as usize,
                    }
                }
                if !inside {
                    continue;
                }
                let p = rule.product(&u.value(grid.flat_index(&src)), &h.field().value(k));
                acc.iter_mut().zip(p).for_each(|(a, b)| *a += vol * b);
            }
            out.set(i, &acc);
        }
        out
    }

    #[test]
    fn delta_is_identity() {
        let mut r = rng(1);
        for boundary in [Boundary::ZeroPad, Boundary::Periodic] {
            let g = Grid::centered(3, 6, 0.5, boundary).unwrap();
            for l in 0..=2u8 {
                let u = TensorField::random(&g, l, &mut r).unwrap();
                let rule = ProductRule::infer(l, 0, l, 3).unwrap();
                let d = delta_stencil(&g);
                let direct = conv(&u, &d, &rule).unwrap();
                assert!(direct.max_rel_deviation(&u) < 1e-14);
                let fourier = conv_with(&u, &d, &ConvPlan::new(rule, ConvPath::Fourier)).unwrap();
                assert!(fourier.max_rel_deviation(&u) < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let g = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
        let mut u = TensorField::zeros(&g, 0).unwrap();
        let center = g.flat_index(&[4, 4, 4]);
        u.component_mut(0)[center] = 1.0 / g.voxel_volume();
        let kg = Grid::kernel(g.spacing(), &[4, 4, 4]).unwrap();
        let k = sample_kernel(&kg, &named_profile("gaussian:1.2", 3).unwrap(), 0).unwrap();
        let v = conv(&u, &k, &ProductRule::infer(0, 0, 0, 3).unwrap()).unwrap();
        for (a, b) in v.data().iter().zip(k.field().data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn point_charge_field_matches_coulomb() {
        let g = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
        let mut u = TensorField::zeros(&g, 0).unwrap();
        u.component_mut(0)[g.flat_index(&[4, 4, 4])] = 1.0;
        let k = sample_kernel(&g.full_kernel_grid(), &named_profile("inverse_r2", 3).unwrap(), 1).unwrap();
        let v = conv(&u, &k, &ProductRule::infer(0, 1, 1, 3).unwrap()).unwrap();
        let e = v.value(g.flat_index(&[6, 4, 4]));
        let want = 1.0 / (16.0 * PI);
        assert!((e[0] - want).abs() < 1e-15 * want.max(1.0));
        assert!(e[1].abs() < 1e-15 && e[2].abs() < 1e-15);
    }

    #[test]
    fn gradient_orientation_is_forward() {
        let g = Grid::centered(3, 5, 0.5, Boundary::ZeroPad).unwrap();
        let f = TensorField::from_fn(&g, 0, |p, o| o[0] = p[0]).unwrap();
        let grad = conv(&f, &gradient_stencil(&g), &ProductRule::infer(0, 1, 1, 3).unwrap()).unwrap();
        let center = g.flat_index(&[2, 2, 2]);
        let v = grad.value(center);
        assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14 && v[2].abs() < 1e-14);
        // x^2 at x=1, spacing 1: ((x+1)^2 - (x-1)^2)/2 = 2
        let g1 = Grid::new(&[5, 5, 5], &[1.0; 3], &[-2.0; 3], Boundary::ZeroPad).unwrap();
        let sq = TensorField::from_fn(&g1, 0, |p, o| o[0] = p[0] * p[0]).unwrap();
        let d = conv(&sq, &gradient_stencil(&g1), &ProductRule::infer(0, 1, 1, 3).unwrap()).unwrap();
        assert!((d.value(g1.flat_index(&[3, 2, 2]))[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn paths_agree_with_brute_force() {
        let mut r = rng(5);
        for boundary in [Boundary::ZeroPad, Boundary::Periodic] {
            for dim in [2, 3] {
                let g = Grid::centered(dim, 5, 0.7, boundary).unwrap();
                for rule in crate::field::all_rules(dim) {
                    let u = TensorField::random(&g, rule.lu(), &mut r).unwrap();
                    let h = random_stencil(&g, rule.lh(), &mut r);
                    let want = naive_conv(&u, &h, &rule);
                    let d = conv_direct(&u, &h, &ConvPlan::new(rule, ConvPath::Direct)).unwrap();
                    let f = conv_fourier(&u, &h, &ConvPlan::new(rule, ConvPath::Fourier)).unwrap();
                    assert!(d.max_rel_deviation(&want) < 1e-13, "{rule} {boundary}");
                    assert!(f.max_rel_deviation(&want) < 1e-12, "{rule} {boundary}");
                }
            }
        }
    }

    #[test]
    fn periodic_constant_field_scales_by_kernel_mass() {
        let g = Grid::centered(3, 8, 1.0, Boundary::Periodic).unwrap();
        let u = TensorField::constant(&g, 0, &[2.0]).unwrap();
        let kg = Grid::kernel(g.spacing(), &[3, 3, 3]).unwrap();
        let k = sample_kernel(&kg, &named_profile("gaussian:1", 3).unwrap(), 0).unwrap();
        let mass = k.field().integral()[0];
        let v = conv(&u, &k, &ProductRule::infer(0, 0, 0, 3).unwrap()).unwrap();
        assert!(v.data().iter().all(|x| (x - 2.0 * mass).abs() < 1e-12));
    }

    #[test]
    fn rejects_incompatible_inputs() {
        let g = Grid::centered(3, 5, 1.0, Boundary::ZeroPad).unwrap();
        let u = TensorField::zeros(&g, 0).unwrap();
        let g2 = Grid::centered(3, 5, 0.5, Boundary::ZeroPad).unwrap();
        let rule = ProductRule::infer(0, 1, 1, 3).unwrap();
        assert!(matches!(conv(&u, &gradient_stencil(&g2), &rule), Err(Error::GridMismatch(_))));
        let bad = ProductRule::infer(0, 0, 0, 3).unwrap();
        assert!(matches!(conv(&u, &gradient_stencil(&g), &bad), Err(Error::UnsupportedRule { .. })));
        let v = TensorField::zeros(&g, 1).unwrap();
        assert!(conv(&v, &gradient_stencil(&g), &rule).is_err());
    }

    #[test]
    fn translation_invariance_periodic() {
        let mut r = rng(9);
        let g = Grid::centered(3, 7, 1.0, Boundary::Periodic).unwrap();
        let u = TensorField::random(&g, 1, &mut r).unwrap();
        let k = sample_kernel(&g.full_kernel_grid(), &named_profile("gaussian:1.5", 3).unwrap(), 1).unwrap();
        let rule = ProductRule::infer(1, 1, 1, 3).unwrap();
        let base = conv(&u, &k, &rule).unwrap();
        for shift in [[1, 0, 0], [0, -2, 3], [3, 3, 3]] {
            let lhs = conv(&shift_field(&u, &shift), &k, &rule).unwrap();
            let rhs = shift_field(&base, &shift);
            assert!(lhs.max_rel_deviation(&rhs) < 1e-12);
        }
    }

    #[test]
    fn rotation_equivariance_all_rules() {
        let mut r = rng(13);
        for boundary in [Boundary::ZeroPad, Boundary::Periodic] {
            for dim in [2, 3] {
                let g = Grid::centered(dim, 5, 1.0, boundary).unwrap();
                for rule in crate::field::all_rules(dim) {
                    let profile = named_profile("gaussian:1.1", dim).unwrap();
                    let k = sample_kernel(&g.full_kernel_grid(), &profile, rule.lh()).unwrap();
                    let u = TensorField::random(&g, rule.lu(), &mut r).unwrap();
                    let base = conv(&u, &k, &rule).unwrap();
                    for rot in LatticeRotation::all(dim) {
                        let lhs = conv(&rotate_field(&u, &rot).unwrap(), &k, &rule).unwrap();
                        let rhs = rotate_field(&base, &rot).unwrap();
                        assert!(lhs.max_rel_deviation(&rhs) < 1e-10, "{rule} {boundary}");
                    }
                }
            }
        }
    }

    #[test]
    fn linearity() {
        let mut r = rng(17);
        let g = Grid::centered(3, 6, 1.0, Boundary::ZeroPad).unwrap();
        let rule = ProductRule::new(1, 1, 1, ProductKind::Cross, 3).unwrap();
        let k = sample_kernel(&g.full_kernel_grid(), &named_profile("inverse_r2", 3).unwrap(), 1).unwrap();
        let u = TensorField::random(&g, 1, &mut r).unwrap();
        let w = TensorField::random(&g, 1, &mut r).unwrap();
        let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let mut mix = u.scaled(a);
        mix.axpy(b, &w).unwrap();
        let lhs = conv(&mix, &k, &rule).unwrap();
        let mut rhs = conv(&u, &k, &rule).unwrap().scaled(a);
        rhs.axpy(b, &conv(&w, &k, &rule).unwrap()).unwrap();
        assert!(lhs.max_rel_deviation(&rhs) < 1e-12);
    }

    #[test]
    fn prepared_fourier_matches_one_shot() {
        let mut r = rng(21);
        let g = Grid::centered(3, 6, 1.0, Boundary::ZeroPad).unwrap();
        let rule = ProductRule::infer(0, 0, 0, 3).unwrap();
        let k = sample_kernel(&g.full_kernel_grid(), &named_profile("inverse_r", 3).unwrap(), 0).unwrap();
        let prepared = FourierConv::new(&g, &k, rule).unwrap();
        let u = TensorField::random(&g, 0, &mut r).unwrap();
        assert_eq!(
            prepared.apply(&u).unwrap(),
            conv_fourier(&u, &k, &ConvPlan::new(rule, ConvPath::Fourier)).unwrap()
        );
    }
}
