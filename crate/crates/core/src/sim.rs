//! Explicit diffusion-advection stepping and recovery of `(D, w)` from trajectories.
//!
//! The model is `du/dt = D laplacian(u) - w . grad(u) + s`, built from the stencil
//! operators. Time stepping is forward Euler.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::eqf;
use crate::field::{Boundary, Grid, TensorField};
use crate::operators::{self, EquivariantOp};
use crate::util::{fmt_f64, fmt_list, parse_f64, parse_f64_list, KeyValues};

/// Safety factor applied to the explicit stability bound.
pub const CFL_SAFETY: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct DiffusionAdvectionModel {
    diffusivity: f64,
    wind: Vec<f64>,
    source: Option<TensorField>,
    dt: f64,
    grid: Grid,
    laplacian: EquivariantOp,
    grad: EquivariantOp,
}

/// Largest stable step: `0.5 * min(h^2 / (2 dim D), h / |w|)`, infinite when both terms
/// vanish.
pub fn max_stable_dt(grid: &Grid, diffusivity: f64, wind: &[f64]) -> f64 {
    let h = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let speed = wind.iter().map(|w| w * w).sum::<f64>().sqrt();
    let diff = if diffusivity > 0.0 {
        h * h / (2.0 * grid.dim() as f64 * diffusivity)
    } else {
        f64::INFINITY
    };
    let adv = if speed > 0.0 { h / speed } else { f64::INFINITY };
    CFL_SAFETY * diff.min(adv)
}

impl DiffusionAdvectionModel {
    pub fn new(grid: &Grid, diffusivity: f64, wind: Vec<f64>, source: Option<TensorField>, dt: f64) -> Result<Self> {
        if !(diffusivity >= 0.0 && diffusivity.is_finite()) {
            return Err(Error::InvalidParameter(format!("diffusivity {diffusivity} must be >= 0")));
        }
        if wind.len() != grid.dim() || wind.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wind needs {} finite components, got {:?}",
                grid.dim(),
                wind
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        if let Some(s) = &source {
            if s.l() != 0 {
                return Err(Error::OrderMismatch { expected: 0, found: s.l() });
            }
            if !s.grid().same_as(grid) {
                return Err(Error::GridMismatch("source is not on the model grid".into()));
            }
        }
        let max_dt = max_stable_dt(grid, diffusivity, &wind);
        if dt > max_dt {
            return Err(Error::Unstable { dt, max_dt });
        }
        Ok(DiffusionAdvectionModel {
            diffusivity,
            wind,
            source,
            dt,
            grid: grid.clone(),
            laplacian: operators::laplacian(grid)?,
            grad: operators::grad(grid)?,
        })
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn wind(&self) -> &[f64] {
        &self.wind
    }

    pub fn source(&self) -> Option<&TensorField> {
        self.source.as_ref()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time_derivative(&self, u: &TensorField) -> Result<TensorField> {
        if !u.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("state is not on the model grid".into()));
        }
        let mut out = self.laplacian.apply(u)?;
        out.scale(self.diffusivity);
        let g = self.grad.apply(u)?;
        let acc = out.component_mut(0);
        for (a, &w) in self.wind.iter().enumerate() {
            if w != 0.0 {
                for (o, ga) in acc.iter_mut().zip(g.component(a)) {
                    *o -= w * ga;
                }
            }
        }
        if let Some(s) = &self.source {
            out.axpy(1.0, s)?;
        }
        Ok(out)
    }

    pub fn step_euler(&self, u: &TensorField) -> Result<TensorField> {
        let mut next = u.clone();
        next.axpy(self.dt, &self.time_derivative(u)?)?;
        Ok(next)
    }

    /// `n_steps + 1` frames starting with `u0`. Aborts on the first non-finite value.
    pub fn simulate(&self, u0: &TensorField, n_steps: usize) -> Result<Vec<TensorField>> {
        if u0.l() != 0 {
            return Err(Error::OrderMismatch { expected: 0, found: u0.l() });
        }
        let mut frames = Vec::with_capacity(n_steps + 1);
        frames.push(u0.clone());
        for step in 1..=n_steps {
            let next = self.step_euler(&frames[step - 1])?;
            if next.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(step));
            }
            frames.push(next);
        }
        Ok(frames)
    }
}

/// Scalar field with a single voxel emitting at unit total rate (`1 / voxel_volume`).
pub fn point_emitter(grid: &Grid, index: &[usize]) -> Result<TensorField> {
    let mut s = TensorField::zeros(grid, 0)?;
    let flat = grid.flat_index(index);
    s.component_mut(0)[flat] = 1.0 / grid.voxel_volume();
    Ok(s)
}

/// Adds independent Gaussian noise with standard deviation `level * rms(frame)` to each
/// frame.
pub fn add_noise(frames: &mut [TensorField], level: f64, rng: &mut impl Rng) -> Result<()> {
    for f in frames.iter_mut() {
        let rms = (f.sum_squares() / f.data().len() as f64).sqrt();
        let std = level * rms;
        if std == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for c in 0..f.components() {
            for x in f.component_mut(c) {
                *x += normal.sample(rng);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub diffusivity: f64,
    pub wind: Vec<f64>,
    /// `|A x - b| / |b|` over all frame pairs.
    pub residual: f64,
    /// Ratio of extreme singular values of the column-normalized feature matrix.
    pub condition: f64,
}

/// Least-squares fit of `(D, w)` to forward differences `(u[k+1] - u[k]) / dt`, with the
/// features `laplacian(u[k])` and `-grad(u[k])` computed by the same stencils the model uses.
pub fn estimate_parameters(frames: &[TensorField], dt: f64, source: Option<&TensorField>) -> Result<Estimate> {
    if frames.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "estimation needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
    }
    let grid = frames[0].grid().clone();
    for f in frames {
        if !f.grid().same_as(&grid) {
            return Err(Error::GridMismatch("frames differ in grid".into()));
        }
        if f.l() != 0 {
            return Err(Error::OrderMismatch { expected: 0, found: f.l() });
        }
    }
    if let Some(s) = source {
        if !s.grid().same_as(&grid) {
            return Err(Error::GridMismatch("source is not on the frame grid".into()));
        }
    }
    let dim = grid.dim();
    let lap = operators::laplacian(&grid)?;
    let grad = operators::grad(&grid)?;
    let n = grid.len();
    let rows = n * (frames.len() - 1);
    let mut a = nalgebra::DMatrix::<f64>::zeros(rows, 1 + dim);
    let mut b = nalgebra::DVector::<f64>::zeros(rows);
    for (k, pair) in frames.windows(2).enumerate() {
        let off = k * n;
        let l = lap.apply(&pair[0])?;
        let g = grad.apply(&pair[0])?;
        for i in 0..n {
            a[(off + i, 0)] = l.component(0)[i];
            for ax in 0..dim {
                a[(off + i, 1 + ax)] = -g.component(ax)[i];
            }
            let s = source.map_or(0.0, |s| s.component(0)[i]);
            b[off + i] = (pair[1].component(0)[i] - pair[0].component(0)[i]) / dt - s;
        }
    }
    let mut scales = Vec::with_capacity(1 + dim);
    for c in 0..1 + dim {
        let s = a.column(c).norm();
        if s == 0.0 {
            let name = if c == 0 { "laplacian".to_string() } else { format!("gradient axis {}", c - 1) };
            return Err(Error::RankDeficient(format!("{name} feature is identically zero")));
        }
        a.column_mut(c).scale_mut(1.0 / s);
        scales.push(s);
    }
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let condition = sv.max() / sv.min();
    if !(condition < 1e10) {
        return Err(Error::RankDeficient(format!("feature matrix condition {condition:e}")));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let bnorm = b.norm();
    let residual = if bnorm > 0.0 { (&a * &x - &b).norm() / bnorm } else { (&a * &x).norm() };
    Ok(Estimate {
        diffusivity: x[0] / scales[0],
        wind: (0..dim).map(|ax| x[1 + ax] / scales[1 + ax]).collect(),
        residual,
        condition,
    })
}

const TRAJECTORY_FORMAT: &str = "eqop-trajectory-1";

/// Frames read back from a trajectory manifest, with the generating parameters if recorded.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub frames: Vec<TensorField>,
    pub source: Option<TensorField>,
    pub diffusivity: Option<f64>,
    pub wind: Option<Vec<f64>>,
    pub boundary: Boundary,
}

pub fn frame_name(k: usize) -> String {
    format!("frame_{k:05}.eqf")
}

/// Writes `frame_00000.eqf`, ... and `trajectory.txt` into `dir`. The source, if any, is
/// written as `source.eqf`. Returns the manifest path.
pub fn write_trajectory(
    dir: impl AsRef<Path>,
    frames: &[TensorField],
    dt: f64,
    model: Option<&DiffusionAdvectionModel>,
    source: Option<&TensorField>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let first = frames.first().ok_or(Error::EmptyDataset)?;
    let mut kv = KeyValues::new();
    kv.push("format", TRAJECTORY_FORMAT);
    kv.push("dt", fmt_f64(dt));
    if let Some(m) = model {
        kv.push("D", fmt_f64(m.diffusivity()));
        kv.push("w", fmt_list(m.wind()));
    }
    match source {
        Some(s) => {
            eqf::save(dir.join("source.eqf"), s)?;
            kv.push("source", "source.eqf");
        }
        None => kv.push("source", "none"),
    }
    kv.push("n_steps", (frames.len() - 1).to_string());
    kv.push("boundary", first.grid().boundary().to_string());
    for (k, f) in frames.iter().enumerate() {
        let name = frame_name(k);
        eqf::save(dir.join(&name), f)?;
        kv.push("frame", name);
    }
    let path = dir.join("trajectory.txt");
    std::fs::write(&path, kv.render())?;
    Ok(path)
}

pub fn read_trajectory(manifest: impl AsRef<Path>) -> Result<Trajectory> {
    let manifest = manifest.as_ref();
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let kv = KeyValues::read(manifest)?;
    if kv.require("format")? != TRAJECTORY_FORMAT {
        return Err(Error::Format(format!("expected format={TRAJECTORY_FORMAT}")));
    }
    let dt = parse_f64("dt", kv.require("dt")?)?;
    let frames = kv
        .get_all("frame")
        .map(|name| eqf::load(dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let source = match kv.get("source") {
        None | Some("none") => None,
        Some(name) => Some(eqf::load(dir.join(name))?),
    };
    let diffusivity = kv.get("D").map(|v| parse_f64("D", v)).transpose()?;
    let wind = kv.get("w").map(|v| parse_f64_list("w", v)).transpose()?;
    let boundary = match kv.get("boundary") {
        Some(b) => b.parse()?,
        None => frames.first().map_or(Boundary::Periodic, |f| f.grid().boundary()),
    };
    if let Some(n) = kv.get("n_steps") {
        let n: usize = n.parse().map_err(|_| Error::Format(format!("bad n_steps `{n}`")))?;
        if n + 1 != frames.len() {
            return Err(Error::Format(format!("n_steps={n} but {} frames listed", frames.len())));
        }
    }
    Ok(Trajectory { dt, frames, source, diffusivity, wind, boundary })
}
