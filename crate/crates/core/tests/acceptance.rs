//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero if any fail.

use std::f64::consts::PI;
use std::time::Instant;

use eqop::check::{self, calculus_identities, equivariance_deviation};
use eqop::conv::{conv_direct, conv_fourier, ConvPath, ConvPlan};
use eqop::field::all_rules;
use eqop::kernel::{named_profile, sample_kernel, KernelField, KernelKind};
use eqop::learn::{
    default_basis, fit_least_squares, grad_params, loss, relative_error, LstsqOptions, NeuralOp,
};
use eqop::operators::{self, EquivariantOp};
use eqop::sim::{add_noise, estimate_parameters, point_emitter, DiffusionAdvectionModel};
use eqop::{Boundary, Grid, ProductRule, TensorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_TOL: f64 = 0.002;
const TEST_TOL: f64 = 0.01;
const FIT_RUNTIME_S: f64 = 30.0;
const RADIAL_TOL: f64 = 0.05;
const ESTIMATE_NOISELESS_TOL: f64 = 1e-6;
const ESTIMATE_NOISY_TOL: f64 = 0.05;
const ESTIMATE_RUNTIME_S: f64 = 10.0;
const EQUIVARIANCE_TOL: f64 = 1e-10;
const PATH_TOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-6;
const SCALING_FACTOR_MAX: f64 = 16.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(n: usize, title: &str, o: &Outcome) {
    let tag = if o.passed { "PASS" } else { "FAIL" };
    println!("criterion {n} [{title}]: {tag} {}", o.detail);
}

fn dipole(grid: &Grid) -> TensorField {
    let mut u = TensorField::zeros(grid, 0).unwrap();
    let q = 1.0 / grid.voxel_volume();
    u.component_mut(0)[grid.flat_index(&[6, 8, 8])] = q;
    u.component_mut(0)[grid.flat_index(&[10, 8, 8])] = -q;
    u
}

struct OneShot {
    train: f64,
    test: f64,
    seconds: f64,
    op: NeuralOp,
}

/// Fit one dipole pair of `target`, then score on 20 random charge densities.
fn one_shot(target: &EquivariantOp, rule: ProductRule) -> OneShot {
    let start = Instant::now();
    let grid = target.grid().clone();
    let u = dipole(&grid);
    let train = vec![(u.clone(), target.apply(&u).unwrap())];
    let op = NeuralOp::new(default_basis(&grid, rule.lh()), rule, &grid, ConvPath::Fourier).unwrap();
    let fit = fit_least_squares(&op, &train, &LstsqOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let test: Vec<_> = (0..20)
        .map(|_| {
            let x = TensorField::random(&grid, 0, &mut rng).unwrap();
            let y = target.apply(&x).unwrap();
            (x, y)
        })
        .collect();
    let train_err = relative_error(&fit.op, &train).unwrap();
    let test_err = test
        .iter()
        .map(|pair| relative_error(&fit.op, std::slice::from_ref(pair)).unwrap())
        .fold(0.0, f64::max);
    OneShot { train: train_err, test: test_err, seconds: start.elapsed().as_secs_f64(), op: fit.op }
}

fn grid16() -> Grid {
    Grid::centered(3, 16, 1.0, Boundary::ZeroPad).unwrap()
}

fn one_shot_outcome(r: &OneShot) -> Outcome {
    Outcome {
        passed: r.train < TRAIN_TOL && r.test < TEST_TOL && r.seconds < FIT_RUNTIME_S,
        detail: format!(
            "train={:.3e} (<{TRAIN_TOL}) max_test={:.3e} (<{TEST_TOL}) time={:.2}s (<{FIT_RUNTIME_S}s)",
            r.train, r.test, r.seconds
        ),
    }
}

fn radial_outcome(fits: &[(&str, &OneShot, fn(f64) -> f64)]) -> Outcome {
    let h = 1.0;
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (name, fit, reference) in fits {
        let mut w = 0.0_f64;
        for k in 0..=8 {
            let r = h * (2.0 + 0.25 * k as f64);
            let want = reference(r);
            w = w.max((fit.op.param().radial(r) - want).abs() / want.abs());
        }
        parts.push(format!("{name}={w:.3e}"));
        worst = worst.max(w);
    }
    Outcome {
        passed: worst < RADIAL_TOL,
        detail: format!("max relative deviation on [2h,4h]: {} (<{RADIAL_TOL})", parts.join(" ")),
    }
}

fn estimation_outcome() -> Outcome {
    let start = Instant::now();
    let grid = Grid::centered(2, 32, 1.0, Boundary::Periodic).unwrap();
    let (d, w) = (0.1, vec![0.2, -0.1]);
    let dt = 1.0;
    let src = point_emitter(&grid, &[10, 20]).unwrap();
    let model = DiffusionAdvectionModel::new(&grid, d, w.clone(), Some(src.clone()), dt).unwrap();
    let frames = model.simulate(&TensorField::zeros(&grid, 0).unwrap(), 49).unwrap();
    let rel = |e: &eqop::sim::Estimate| {
        let mut m = ((e.diffusivity - d) / d).abs();
        for (a, b) in e.wind.iter().zip(&w) {
            m = m.max(((a - b) / b).abs());
        }
        m
    };
    let clean = rel(&estimate_parameters(&frames, dt, Some(&src)).unwrap());
    let mut noisy_frames = frames.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    add_noise(&mut noisy_frames, 0.01, &mut rng).unwrap();
    let noisy_est = estimate_parameters(&noisy_frames, dt, Some(&src)).unwrap();
    let noisy = rel(&noisy_est);
    let seconds = start.elapsed().as_secs_f64();
    Outcome {
        passed: clean < ESTIMATE_NOISELESS_TOL && noisy < ESTIMATE_NOISY_TOL && seconds < ESTIMATE_RUNTIME_S,
        detail: format!(
            "frames={} noiseless={clean:.3e} (<{ESTIMATE_NOISELESS_TOL:e}) noisy={noisy:.3e} (<{ESTIMATE_NOISY_TOL}) \
             D_hat={:.6} w_hat=({:.6},{:.6}) time={seconds:.2}s (<{ESTIMATE_RUNTIME_S}s)",
            frames.len(),
            noisy_est.diffusivity,
            noisy_est.wind[0],
            noisy_est.wind[1]
        ),
    }
}

fn equivariance_outcome() -> Outcome {
    let grid = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    let mut count = 0;
    for op in check::named_operators(&grid, 0).unwrap() {
        let u = TensorField::random(&grid, op.rule().lu(), &mut rng).unwrap();
        worst = worst.max(equivariance_deviation(|x| op.apply(x), &u).unwrap());
        count += 1;
    }
    for op in check::random_neural_ops(&grid, 5, &mut rng).unwrap() {
        let u = TensorField::random(&grid, op.rule().lu(), &mut rng).unwrap();
        worst = worst.max(equivariance_deviation(|x| op.apply(x), &u).unwrap());
        count += 1;
    }
    Outcome {
        passed: worst < EQUIVARIANCE_TOL,
        detail: format!("{count} operators x 24 rotations, max={worst:.3e} (<{EQUIVARIANCE_TOL:e})"),
    }
}

fn path_outcome() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for i in 0..10 {
        let dim = if i % 3 == 2 { 2 } else { 3 };
        let boundary = if i % 2 == 0 { Boundary::ZeroPad } else { Boundary::Periodic };
        let n = rng.random_range(6..12);
        let grid = Grid::centered(dim, n, 1.0, boundary).unwrap();
        let rules = all_rules(dim);
        let rule = rules[rng.random_range(0..rules.len())];
        let radius = rng.random_range(1..3);
        let kg = Grid::kernel(grid.spacing(), &vec![radius; dim]).unwrap();
        let h = KernelField::from_field(TensorField::random(&kg, rule.lh(), &mut rng).unwrap(), KernelKind::Stencil)
            .unwrap();
        let u = TensorField::random(&grid, rule.lu(), &mut rng).unwrap();
        let d = conv_direct(&u, &h, &ConvPlan::new(rule, ConvPath::Direct)).unwrap();
        let f = conv_fourier(&u, &h, &ConvPlan::new(rule, ConvPath::Fourier)).unwrap();
        worst = worst.max(f.max_rel_deviation(&d));
    }
    Outcome { passed: worst < PATH_TOL, detail: format!("10 pairs, max={worst:.3e} (<{PATH_TOL:e})") }
}

fn identity_outcome() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut parts = Vec::new();
    let mut passed = true;
    for boundary in [Boundary::ZeroPad, Boundary::Periodic] {
        let grid = Grid::centered(3, 12, 0.7, boundary).unwrap();
        let s = TensorField::random(&grid, 0, &mut rng).unwrap();
        let v = TensorField::random(&grid, 1, &mut rng).unwrap();
        for r in calculus_identities(&s, &v).unwrap() {
            passed &= r.max_deviation < IDENTITY_TOL;
            parts.push(format!("{}[{boundary}]={:.3e}", r.name.trim_start_matches("identity/"), r.max_deviation));
        }
    }
    Outcome { passed, detail: format!("{} (<{IDENTITY_TOL:e}, interior)", parts.join(" ")) }
}

fn gradient_outcome() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = Grid::centered(3, 9, 1.0, Boundary::ZeroPad).unwrap();
    let rules = [
        ProductRule::parse("0,0,0", 3).unwrap(),
        ProductRule::parse("0,1,1", 3).unwrap(),
        ProductRule::parse("1,1,0:dot", 3).unwrap(),
        ProductRule::parse("1,1,1:cross", 3).unwrap(),
        ProductRule::parse("2,1,1:matvec", 3).unwrap(),
    ];
    let mut worst = 0.0_f64;
    for rule in rules {
        let base = default_basis(&grid, rule.lh());
        let k = base.len();
        let truth_amps: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let truth = NeuralOp::new(base, rule, &grid, ConvPath::Fourier)
            .unwrap()
            .with_amplitudes(&truth_amps)
            .unwrap();
        let u = TensorField::random(&grid, rule.lu(), &mut rng).unwrap();
        let mut t = truth.apply(&u).unwrap();
        for x in t.component_mut(0) {
            *x += 0.1 * rng.random_range(-1.0..1.0);
        }
        let data = vec![(u, t)];
        let p: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = truth.with_amplitudes(&p).unwrap();
        let g = grad_params(&op, &data).unwrap();
        for i in 0..k {
            let step = 1e-5 * p[i].abs();
            let mut plus = p.clone();
            plus[i] += step;
            let mut minus = p.clone();
            minus[i] -= step;
            let fd = (loss(&op.with_amplitudes(&plus).unwrap(), &data).unwrap()
                - loss(&op.with_amplitudes(&minus).unwrap(), &data).unwrap())
                / (2.0 * step);
            worst = worst.max((fd - g[i]).abs() / g[i].abs());
        }
    }
    Outcome {
        passed: worst < GRADIENT_TOL,
        detail: format!("5 configurations, max per-component relative error={worst:.3e} (<{GRADIENT_TOL:e})"),
    }
}

fn time_fourier(n: usize) -> f64 {
    let grid = Grid::centered(3, n, 1.0, Boundary::ZeroPad).unwrap();
    let profile = named_profile("gaussian:4", 3).unwrap();
    let h = sample_kernel(&Grid::kernel(grid.spacing(), &[8, 8, 8]).unwrap(), &profile, 0).unwrap();
    let plan = ConvPlan::new(ProductRule::parse("0,0,0", 3).unwrap(), ConvPath::Fourier);
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let u = TensorField::random(&grid, 0, &mut rng).unwrap();
    conv_fourier(&u, &h, &plan).unwrap();
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(conv_fourier(&u, &h, &plan).unwrap());
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[2]
}

fn scaling_outcome() -> Outcome {
    let small = time_fourier(32);
    let large = time_fourier(64);
    let factor = large / small;
    Outcome {
        passed: factor < SCALING_FACTOR_MAX,
        detail: format!(
            "32^3={:.2}ms 64^3={:.2}ms factor={factor:.2} (<{SCALING_FACTOR_MAX}; quadratic would be 64)",
            small * 1e3,
            large * 1e3
        ),
    }
}

fn main() {
    let grid = grid16();
    let potential = one_shot(&operators::inverse_laplacian(&grid).unwrap(), ProductRule::parse("0,0,0", 3).unwrap());
    let field = one_shot(&operators::gauss_law(&grid).unwrap(), ProductRule::parse("0,1,1", 3).unwrap());
    let outcomes = [
        (1, "one-shot potential fit (0,0)->0 at 16^3", one_shot_outcome(&potential)),
        (2, "one-shot field fit (0,1)->1 at 16^3", one_shot_outcome(&field)),
        (
            3,
            "fitted radial functions vs 1/(4 pi r) and 1/(4 pi r^2)",
            radial_outcome(&[
                ("potential", &potential, |r| 1.0 / (4.0 * PI * r)),
                ("field", &field, |r| 1.0 / (4.0 * PI * r * r)),
            ]),
        ),
        (4, "diffusion-advection parameter recovery at 32^2", estimation_outcome()),
        (5, "equivariance of named and random neural operators at 9^3", equivariance_outcome()),
        (6, "direct vs Fourier path equivalence", path_outcome()),
        (7, "vector-calculus identities", identity_outcome()),
        (8, "analytic gradient vs central differences", gradient_outcome()),
        (9, "Fourier path scaling 32^3 -> 64^3", scaling_outcome()),
    ];
    let mut failed = 0;
    for (n, title, o) in &outcomes {
        report(*n, title, o);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
