//! `eqop`: apply, fit, simulate, estimate and check equivariant operators on EQF files.
//!
//! Exit codes: 0 success, 2 input or format error, 3 shape or rule mismatch, 4 numerical
//! guard (unstable step, singular fit, failed property check).

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use eqop::check::{run_suite, SuiteOptions};
use eqop::conv::ConvPath;
use eqop::field::eqf;
use eqop::kernel::named_profile;
use eqop::learn::{
    default_basis, fit_gradient_descent, fit_least_squares, load_model, relative_error, save_model, BasisResponses,
    BasisTerm, LstsqOptions, NeuralOp, ParamRadial,
};
use eqop::operators::{self, OperatorParams};
use eqop::sim::{self, DiffusionAdvectionModel};
use eqop::util::KeyValues;
use eqop::{Boundary, Error, Grid, ProductRule, TensorField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use report::RunReport;

#[derive(Parser)]
#[command(name = "eqop", version, about = "Rotation-equivariant tensor-field operators on EQF grids")]
struct Cli {
    /// Seed for every random draw (test fields, noise).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write the key=value report block to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a named operator or a fitted model manifest to a field.
    Apply(ApplyArgs),
    /// Fit a neural operator to input/target pairs listed in a dataset manifest.
    Fit(FitArgs),
    /// Run an explicit diffusion-advection simulation and write a trajectory.
    Simulate(SimulateArgs),
    /// Recover diffusivity and wind from a trajectory manifest.
    Estimate(EstimateArgs),
    /// Run the property suites on a field file or a random field.
    Check(CheckArgs),
}

#[derive(Args)]
struct ApplyArgs {
    /// Registry name (identity, grad, div, curl, laplacian, inverse_laplacian, gauss_law,
    /// diffusion) or path to a model manifest.
    operator: String,
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    path: Option<ConvPath>,
    /// Override the input grid's boundary mode.
    #[arg(long)]
    boundary: Option<Boundary>,
    #[arg(long, default_value_t = 1.0)]
    diffusivity: f64,
    #[arg(long, default_value_t = 1.0)]
    time: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Manifest with `pair=input.eqf,target.eqf` lines (and optional `test=` lines and `rule=`).
    dataset: PathBuf,
    /// Product rule `lu,lh,lv[:kind]`; defaults to the manifest's `rule` or is inferred.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long, default_value = "model.txt")]
    model: PathBuf,
    /// CSV of the fitted radial function.
    #[arg(long, default_value = "radial.csv")]
    csv: PathBuf,
    /// Named profile to print alongside the fit, e.g. `inverse_r`.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, default_value_t = 8)]
    gaussians: usize,
    #[arg(long)]
    no_powers: bool,
    #[arg(long)]
    no_stencil: bool,
    /// `lstsq` or `gd`.
    #[arg(long, default_value = "lstsq")]
    method: String,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Gradient-descent step; defaults to 1/Lipschitz of the loss.
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    ridge: f64,
    #[arg(long)]
    path: Option<ConvPath>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Source rate field (l=0), or `none`.
    source: String,
    /// Initial state (l=0).
    u0: PathBuf,
    outdir: PathBuf,
    #[arg(long = "D")]
    diffusivity: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    wx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    wy: f64,
    #[arg(long, allow_negative_numbers = true)]
    wz: Option<f64>,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value = "periodic")]
    boundary: Boundary,
}

#[derive(Args)]
struct EstimateArgs {
    manifest: PathBuf,
    /// Add Gaussian noise at this fraction of each frame's RMS before estimating.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct CheckArgs {
    input: Option<PathBuf>,
    /// Random field shape, e.g. `9,9,9`, used when no input is given.
    #[arg(long, default_value = "9,9,9")]
    shape: String,
    #[arg(long, default_value_t = 0)]
    l: u8,
    #[arg(long, default_value = "zero")]
    boundary: Boundary,
    #[arg(long, default_value_t = 2)]
    neural: usize,
    /// Negative control: break kernel symmetry before testing.
    #[arg(long)]
    corrupt_kernel: bool,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Format(_) | Error::Io(_) | Error::UnknownOperator { .. } | Error::UnknownProfile(_) => 2,
            Error::Singular(..)
            | Error::RankDeficient(_)
            | Error::Unstable { .. }
            | Error::NonFinite(_)
            | Error::Diverged { .. } => 4,
            _ => 3,
        };
        let message = match &e {
            Error::Unstable { max_dt, .. } => format!("{e}; suggested --dt {}", eqop::util::fmt_f64(*max_dt)),
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::Io(e))
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn load_field(path: &Path) -> Result<TensorField, Failure> {
    eqf::load(path).map_err(|e| match e {
        Error::Io(io) => input_error(format!("{}: {io}", path.display())),
        other => {
            let mut f = Failure::from(other);
            f.message = format!("{}: {}", path.display(), f.message);
            f
        }
    })
}

fn l2(f: &TensorField) -> f64 {
    f.sum_squares().sqrt()
}

fn cmd_apply(a: &ApplyArgs, rep: &mut RunReport) -> Result<(), Failure> {
    let start = Instant::now();
    if !Path::new(&a.operator).is_file() && !operators::REGISTRY.contains(&a.operator.as_str()) {
        return Err(Error::UnknownOperator { name: a.operator.clone(), registry: operators::REGISTRY.join(", ") }.into());
    }
    let mut u = load_field(&a.input)?;
    rep.input(&a.input);
    if let Some(b) = a.boundary {
        u = u.with_grid(&u.grid().with_boundary(b))?;
    }
    rep.param("boundary", u.grid().boundary());
    let v = if Path::new(&a.operator).is_file() {
        rep.input(&a.operator);
        let mut model = load_model(&a.operator)?;
        if let Some(p) = a.path {
            model = model.with_path(p)?;
        }
        rep.param("operator", "model");
        rep.param("rule", model.rule().spec_string());
        rep.param("path", model.path());
        model.apply(&u)?
    } else {
        let params = OperatorParams { l: u.l(), diffusivity: a.diffusivity, time: a.time };
        let mut op = operators::build(&a.operator, u.grid(), &params)?;
        if let Some(p) = a.path {
            op = op.with_path(p)?;
        }
        rep.param("operator", op.name());
        rep.param("rule", op.rule().spec_string());
        rep.param("path", op.path());
        op.apply(&u)?
    };
    eqf::save(&a.output, &v)?;
    rep.output(&a.output);
    rep.metric("input_l2", l2(&u));
    rep.metric("output_l2", l2(&v));
    rep.metric("output_max_abs", v.max_abs());
    let norms = eqop::field::field_norm(&v);
    let (idx, peak) = norms
        .component(0)
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) });
    let pos = v.grid().unflatten3(idx);
    rep.param("max_norm_voxel", pos[..v.grid().dim()].iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
    rep.metric("max_norm", peak);
    rep.metric("wall_time_s", start.elapsed().as_secs_f64());
    Ok(())
}

fn read_pairs(kv: &KeyValues, key: &str, dir: &Path) -> Result<Vec<(TensorField, TensorField)>, Failure> {
    kv.get_all(key)
        .map(|line| {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| input_error(format!("`{key}={line}` needs input.eqf,target.eqf")))?;
            Ok((load_field(&dir.join(a.trim()))?, load_field(&dir.join(b.trim()))?))
        })
        .collect()
}

fn fit_basis(a: &FitArgs, grid: &Grid, l_h: u8) -> Result<ParamRadial, Failure> {
    let default = default_basis(grid, l_h);
    let mut terms: Vec<BasisTerm> = Vec::new();
    let sigmas: Vec<f64> = default
        .terms()
        .iter()
        .filter_map(|t| match t {
            BasisTerm::Gaussian { sigma } => Some(*sigma),
            _ => None,
        })
        .collect();
    let (lo, hi) = (sigmas[0], sigmas[sigmas.len() - 1]);
    for k in 0..a.gaussians {
        let t = if a.gaussians == 1 { 0.0 } else { k as f64 / (a.gaussians - 1) as f64 };
        terms.push(BasisTerm::Gaussian { sigma: lo * (hi / lo).powf(t) });
    }
    for t in default.terms() {
        match t {
            BasisTerm::Power { .. } if !a.no_powers => terms.push(*t),
            BasisTerm::Stencil { .. } if !a.no_stencil => terms.push(*t),
            _ => {}
        }
    }
    Ok(ParamRadial::new(terms)?)
}

fn cmd_fit(a: &FitArgs, rep: &mut RunReport) -> Result<(), Failure> {
    let start = Instant::now();
    let kv = KeyValues::read(&a.dataset).map_err(|e| input_error(format!("{}: {e}", a.dataset.display())))?;
    rep.input(&a.dataset);
    let dir = a.dataset.parent().unwrap_or_else(|| Path::new("."));
    let train = read_pairs(&kv, "pair", dir)?;
    let test = read_pairs(&kv, "test", dir)?;
    let Some((u0, t0)) = train.first() else {
        return Err(Failure::from(Error::EmptyDataset));
    };
    let grid = u0.grid().clone();
    for (u, t) in train.iter().chain(&test) {
        if !u.grid().same_as(&grid) || !t.grid().same_as(&grid) {
            return Err(Error::GridMismatch("dataset fields are not all on one grid".into()).into());
        }
    }
    let rule = match a.rule.as_deref().or(kv.get("rule")) {
        Some(s) => ProductRule::parse(s, grid.dim())?,
        None => {
            let lh = if u0.l() == t0.l() { 0 } else { 1 };
            ProductRule::infer(u0.l(), lh, t0.l(), grid.dim())?
        }
    };
    let path = a.path.unwrap_or(ConvPath::Fourier);
    rep.param("rule", rule.spec_string());
    rep.param("path", path);
    rep.param("method", &a.method);
    rep.param("train_pairs", train.len());
    rep.param("test_pairs", test.len());
    let param = fit_basis(a, &grid, rule.lh())?;
    rep.param("terms", param.terms().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "));
    let op = NeuralOp::new(param, rule, &grid, path)?;
    let fitted = match a.method.as_str() {
        "lstsq" => {
            let opts = LstsqOptions { ridge: a.ridge, ..Default::default() };
            let fit = fit_least_squares(&op, &train, &opts)?;
            rep.metric("condition", fit.condition);
            fit.op
        }
        "gd" => {
            let step = match a.step_size {
                Some(s) => s,
                None => BasisResponses::compute(&op, &train)?.suggested_step(op.param().trainable()),
            };
            rep.param("step_size", eqop::util::fmt_f64(step));
            rep.param("steps", a.steps);
            let fit = fit_gradient_descent(&op, &train, a.steps, step)?;
            rep.metric("initial_loss", fit.trace[0]);
            fit.op
        }
        other => return Err(input_error(format!("unknown fit method `{other}` (lstsq, gd)"))),
    };
    rep.metric("train_error", relative_error(&fitted, &train)?);
    if !test.is_empty() {
        rep.metric("test_error", relative_error(&fitted, &test)?);
    }
    for (i, amp) in fitted.param().amplitudes().iter().enumerate() {
        rep.metric(&format!("amplitude{i}"), *amp);
    }
    save_model(&a.model, &fitted)?;
    rep.output(&a.model);
    write_radial_csv(a, &fitted, &grid, rep)?;
    rep.metric("wall_time_s", start.elapsed().as_secs_f64());
    Ok(())
}

fn write_radial_csv(a: &FitArgs, op: &NeuralOp, grid: &Grid, rep: &mut RunReport) -> Result<(), Failure> {
    let reference = a.reference.as_deref().map(|s| named_profile(s, grid.dim())).transpose()?;
    let h = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let extent = grid.shape().iter().zip(grid.spacing()).map(|(&n, &s)| n as f64 * s).fold(f64::INFINITY, f64::min);
    let mut csv = String::from(if reference.is_some() { "r,R_fitted,R_reference\n" } else { "r,R_fitted\n" });
    let mut worst = 0.0_f64;
    let mut r = h;
    while r <= extent / 2.0 + 1e-12 {
        let fitted = op.param().radial(r);
        csv.push_str(&format!("{},{}", eqop::util::fmt_f64(r), eqop::util::fmt_f64(fitted)));
        if let Some(p) = &reference {
            let want = p.eval(r);
            csv.push_str(&format!(",{}", eqop::util::fmt_f64(want)));
            if r >= 2.0 * h - 1e-12 && r <= 4.0 * h + 1e-12 && want != 0.0 {
                worst = worst.max(((fitted - want) / want).abs());
            }
        }
        csv.push('\n');
        r += h / 4.0;
    }
    std::fs::write(&a.csv, csv)?;
    rep.output(&a.csv);
    if reference.is_some() {
        rep.metric("radial_rel_error_2h_4h", worst);
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, rep: &mut RunReport) -> Result<(), Failure> {
    let start = Instant::now();
    let u0 = load_field(&a.u0)?;
    rep.input(&a.u0);
    let grid = u0.grid().with_boundary(a.boundary);
    let u0 = u0.with_grid(&grid)?;
    let source = if a.source == "none" {
        None
    } else {
        rep.input(&a.source);
        Some(load_field(Path::new(&a.source))?.with_grid(&grid)?)
    };
    let mut wind = vec![a.wx, a.wy];
    if grid.dim() == 3 {
        wind.push(a.wz.unwrap_or(0.0));
    } else if a.wz.is_some() {
        return Err(Error::InvalidParameter("--wz given for a 2d field".into()).into());
    }
    rep.param("D", eqop::util::fmt_f64(a.diffusivity));
    rep.param("w", eqop::util::fmt_list(&wind));
    rep.param("dt", eqop::util::fmt_f64(a.dt));
    rep.param("steps", a.steps);
    rep.param("boundary", grid.boundary());
    let model = DiffusionAdvectionModel::new(&grid, a.diffusivity, wind, source.clone(), a.dt)?;
    rep.metric("max_stable_dt", sim::max_stable_dt(&grid, a.diffusivity, model.wind()));
    let frames = model.simulate(&u0, a.steps)?;
    let manifest = sim::write_trajectory(&a.outdir, &frames, a.dt, Some(&model), source.as_ref())?;
    let vol = grid.voxel_volume();
    let mass = |f: &TensorField| f.component_sums()[0] * vol;
    let m0 = mass(&frames[0]);
    let rate = source.as_ref().map_or(0.0, mass);
    let scale = frames.iter().map(|f| mass(f).abs()).fold(m0.abs(), f64::max);
    let drift = frames
        .iter()
        .enumerate()
        .map(|(k, f)| (mass(f) - m0 - k as f64 * a.dt * rate).abs())
        .fold(0.0, f64::max);
    rep.metric("mass_initial", m0);
    rep.metric("mass_final", mass(frames.last().expect("at least u0")));
    rep.metric("mass_drift", if scale > 0.0 { drift / scale } else { drift });
    rep.metric("frames", frames.len() as f64);
    rep.output(&manifest);
    rep.metric("wall_time_s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs, seed: u64, rep: &mut RunReport) -> Result<(), Failure> {
    let start = Instant::now();
    let mut t = sim::read_trajectory(&a.manifest)?;
    rep.input(&a.manifest);
    rep.param("frames", t.frames.len());
    rep.param("boundary", t.boundary);
    if a.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sim::add_noise(&mut t.frames, a.noise, &mut rng)?;
        rep.param("noise", eqop::util::fmt_f64(a.noise));
    }
    let e = sim::estimate_parameters(&t.frames, t.dt, t.source.as_ref())?;
    rep.metric("D_hat", e.diffusivity);
    let axes = ["x", "y", "z"];
    for (ax, w) in e.wind.iter().enumerate() {
        rep.metric(&format!("w_hat_{}", axes[ax]), *w);
    }
    rep.metric("residual", e.residual);
    rep.metric("condition", e.condition);
    if let Some(d) = t.diffusivity {
        rep.metric("D_rel_error", ((e.diffusivity - d) / d).abs());
    }
    if let Some(w) = &t.wind {
        for (ax, (a, b)) in e.wind.iter().zip(w).enumerate() {
            let err = if *b != 0.0 { ((a - b) / b).abs() } else { (a - b).abs() };
            rep.metric(&format!("w_{}_error", axes[ax]), err);
        }
    }
    rep.metric("wall_time_s", start.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_check(a: &CheckArgs, seed: u64, rep: &mut RunReport) -> Result<bool, Failure> {
    let start = Instant::now();
    let u = match &a.input {
        Some(p) => {
            rep.input(p);
            load_field(p)?
        }
        None => {
            let shape = a
                .shape
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| input_error(format!("bad --shape `{}`", a.shape)))?;
            let dim = shape.len();
            let origin: Vec<f64> = shape.iter().map(|&n| -(n as f64 - 1.0) / 2.0).collect();
            let grid = Grid::new(&shape, &vec![1.0; dim], &origin, a.boundary)?;
            rep.param("random_shape", &a.shape);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            TensorField::random(&grid, a.l, &mut rng)?
        }
    };
    rep.param("l", u.l());
    rep.param("dim", u.grid().dim());
    rep.param("corrupt_kernel", a.corrupt_kernel);
    let opts = SuiteOptions { seed, neural_ops: a.neural, corrupt_kernel: a.corrupt_kernel };
    let results = run_suite(&u, &opts)?;
    let mut all = true;
    for r in &results {
        rep.metric(&r.name, r.max_deviation);
        let tag = if r.passed { "PASS" } else { "FAIL" };
        rep.note(format!("{tag} {} max_deviation={:.3e} tolerance={:e}", r.name, r.max_deviation, r.tolerance));
        all &= r.passed;
    }
    rep.metric("failed", results.iter().filter(|r| !r.passed).count() as f64);
    rep.metric("wall_time_s", start.elapsed().as_secs_f64());
    Ok(all)
}

fn run(cli: &Cli) -> Result<(RunReport, bool), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| input_error(format!("--threads: {e}")))?;
    }
    let name = match &cli.command {
        Command::Apply(_) => "apply",
        Command::Fit(_) => "fit",
        Command::Simulate(_) => "simulate",
        Command::Estimate(_) => "estimate",
        Command::Check(_) => "check",
    };
    let mut rep = RunReport::new(name);
    rep.param("seed", cli.seed);
    let mut ok = true;
    match &cli.command {
        Command::Apply(a) => cmd_apply(a, &mut rep)?,
        Command::Fit(a) => cmd_fit(a, &mut rep)?,
        Command::Simulate(a) => cmd_simulate(a, &mut rep)?,
        Command::Estimate(a) => cmd_estimate(a, cli.seed, &mut rep)?,
        Command::Check(a) => ok = cmd_check(a, cli.seed, &mut rep)?,
    }
    Ok((rep, ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (rep, ok) = match run(&cli) {
        Ok(r) => r,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    rep.print();
    if let Some(path) = &cli.report {
        if let Err(e) = std::fs::write(path, rep.key_values().render()) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: property check failed");
        ExitCode::from(4)
    }
}
