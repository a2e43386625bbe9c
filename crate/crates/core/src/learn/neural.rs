//! Operators whose kernel is a trainable combination of basis kernels.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::basis::ParamRadial;
use crate::conv::ConvPath;
use crate::error::{Error, Result};
use crate::field::{Grid, ProductRule, TensorField};
use crate::kernel::{KernelField, KernelKind};
use crate::operators::EquivariantOp;

/// Input/target pairs sharing one grid.
pub type Dataset = [(TensorField, TensorField)];

/// `L_p(u) = u * h_p` with `h_p = sum_n p_n K_n`.
#[derive(Clone)]
pub struct NeuralOp {
    param: ParamRadial,
    rule: ProductRule,
    grid: Grid,
    path: ConvPath,
    basis: Arc<Vec<KernelField>>,
    op: EquivariantOp,
}

impl fmt::Debug for NeuralOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NeuralOp")
            .field("rule", &self.rule)
            .field("path", &self.path)
            .field("param", &self.param)
            .finish()
    }
}

impl NeuralOp {
    /// Builds the operator for fields on `grid`. Basis kernels cover every offset that can
    /// couple two voxels of the grid.
    pub fn new(param: ParamRadial, rule: ProductRule, grid: &Grid, path: ConvPath) -> Result<Self> {
        let kernel_grid = grid.full_kernel_grid();
        let l_h = rule.lh();
        let basis: Vec<KernelField> = param
            .terms()
            .par_iter()
            .map(|t| t.kernel(&kernel_grid, l_h))
            .collect::<Result<_>>()?;
        NeuralOp::assemble(param, rule, grid, path, Arc::new(basis))
    }

    fn assemble(
        param: ParamRadial,
        rule: ProductRule,
        grid: &Grid,
        path: ConvPath,
        basis: Arc<Vec<KernelField>>,
    ) -> Result<Self> {
        let kernel = combine(&basis, param.amplitudes())?;
        let op = EquivariantOp::new("neural", grid, kernel, rule, path)?;
        Ok(NeuralOp { param, rule, grid: grid.clone(), path, basis, op })
    }

    pub fn param(&self) -> &ParamRadial {
        &self.param
    }

    pub fn rule(&self) -> &ProductRule {
        &self.rule
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn path(&self) -> ConvPath {
        self.path
    }

    pub fn l_h(&self) -> u8 {
        self.rule.lh()
    }

    /// Unit-amplitude kernel of each basis term.
    pub fn basis_kernels(&self) -> &[KernelField] {
        &self.basis
    }

    /// Current combined kernel.
    pub fn kernel(&self) -> &KernelField {
        self.op.kernel()
    }

    /// Same basis with new amplitudes (basis kernels are shared, not resampled).
    pub fn with_amplitudes(&self, amplitudes: &[f64]) -> Result<Self> {
        let mut param = self.param.clone();
        param.set_amplitudes(amplitudes)?;
        NeuralOp::assemble(param, self.rule, &self.grid, self.path, self.basis.clone())
    }

    pub fn with_path(&self, path: ConvPath) -> Result<Self> {
        NeuralOp::assemble(self.param.clone(), self.rule, &self.grid, path, self.basis.clone())
    }

    pub fn apply(&self, u: &TensorField) -> Result<TensorField> {
        if !u.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch(format!(
                "operator built for {:?}, field on {:?}",
                self.grid.shape(),
                u.grid().shape()
            )));
        }
        self.op.apply(u)
    }

    /// The operator with its current amplitudes frozen into a plain convolution.
    pub fn as_equivariant(&self) -> &EquivariantOp {
        &self.op
    }

    /// `conv(u, K_n)` for every basis term: the derivative of the output in each amplitude.
    pub fn basis_responses(&self, u: &TensorField) -> Result<Vec<TensorField>> {
        self.basis
            .par_iter()
            .map(|k| EquivariantOp::new("basis", &self.grid, k.clone(), self.rule, self.path)?.apply(u))
            .collect()
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, (u, t)) in data.iter().enumerate() {
            for f in [u, t] {
                if !f.grid().same_as(&self.grid) {
                    return Err(Error::GridMismatch(format!("sample {i} is not on the operator grid")));
                }
            }
            if u.l() != self.rule.lu() {
                return Err(Error::OrderMismatch { expected: self.rule.lu(), found: u.l() });
            }
            if t.l() != self.rule.lv() {
                return Err(Error::OrderMismatch { expected: self.rule.lv(), found: t.l() });
            }
        }
        Ok(())
    }
}

fn combine(basis: &[KernelField], amplitudes: &[f64]) -> Result<KernelField> {
    let first = &basis[0];
    let mut acc = TensorField::zeros(first.grid(), first.l_h())?;
    for (k, &a) in basis.iter().zip(amplitudes) {
        if a != 0.0 {
            acc.axpy(a, k.field())?;
        }
    }
    KernelField::from_field(acc, KernelKind::Sampled)
}

fn dot(a: &TensorField, b: &TensorField) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn target_energy(data: &Dataset) -> Result<f64> {
    let e: f64 = data.iter().map(|(_, t)| t.sum_squares()).sum();
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::InvalidParameter("all targets are identically zero".into()))
    }
}

/// Relative mean squared error: `sum |L(u) - t|^2 / sum |t|^2` over samples, voxels and
/// components. The zero operator scores 1.
pub fn loss(op: &NeuralOp, data: &Dataset) -> Result<f64> {
    op.check_dataset(data)?;
    let norm = target_energy(data)?;
    let mut err = 0.0;
    for (u, t) in data {
        err += op.apply(u)?.sub(t)?.sum_squares();
    }
    Ok(err / norm)
}

/// Relative L2 error `sqrt(loss)`.
pub fn relative_error(op: &NeuralOp, data: &Dataset) -> Result<f64> {
    Ok(loss(op, data)?.sqrt())
}

/// Exact gradient of [`loss`] in the amplitudes. Frozen amplitudes get zero.
pub fn grad_params(op: &NeuralOp, data: &Dataset) -> Result<Vec<f64>> {
    op.check_dataset(data)?;
    let norm = target_energy(data)?;
    let mut g = vec![0.0; op.param.len()];
    for (u, t) in data {
        let residual = op.apply(u)?.sub(t)?;
        for (gn, r) in g.iter_mut().zip(op.basis_responses(u)?) {
            *gn += 2.0 * dot(&residual, &r) / norm;
        }
    }
    for (gn, &train) in g.iter_mut().zip(op.param.trainable()) {
        if !train {
            *gn = 0.0;
        }
    }
    Ok(g)
}

/// Basis responses for a whole dataset, reduced to the quadratic form of the loss:
/// `loss(p) = (p' G p - 2 b' p + c) / c`.
#[derive(Debug, Clone)]
pub struct BasisResponses {
    pub gram: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub target_energy: f64,
}

impl BasisResponses {
    pub fn compute(op: &NeuralOp, data: &Dataset) -> Result<Self> {
        op.check_dataset(data)?;
        let k = op.param.len();
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for (u, t) in data {
            let r = op.basis_responses(u)?;
            for i in 0..k {
                rhs[i] += dot(&r[i], t);
                for j in i..k {
                    let v = dot(&r[i], &r[j]);
                    gram[i][j] += v;
                    if j != i {
                        gram[j][i] += v;
                    }
                }
            }
        }
        Ok(BasisResponses { gram, rhs, target_energy: target_energy(data)? })
    }

    pub fn loss(&self, p: &[f64]) -> f64 {
        let mut q = 0.0;
        for (i, row) in self.gram.iter().enumerate() {
            let gp: f64 = row.iter().zip(p).map(|(g, x)| g * x).sum();
            q += p[i] * (gp - 2.0 * self.rhs[i]);
        }
        (q + self.target_energy) / self.target_energy
    }

    pub fn gradient(&self, p: &[f64], mask: &[bool]) -> Vec<f64> {
        self.gram
            .iter()
            .zip(&self.rhs)
            .zip(mask)
            .map(|((row, b), &m)| {
                if !m {
                    return 0.0;
                }
                let gp: f64 = row.iter().zip(p).map(|(g, x)| g * x).sum();
                2.0 * (gp - b) / self.target_energy
            })
            .collect()
    }

    /// `1 / Lipschitz` of the masked gradient: the largest step that keeps plain gradient
    /// descent monotone on this quadratic.
    pub fn suggested_step(&self, mask: &[bool]) -> f64 {
        let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let n = idx.len();
        if n == 0 {
            return 0.0;
        }
        let sub = nalgebra::DMatrix::from_fn(n, n, |a, b| self.gram[idx[a]][idx[b]]);
        let top = sub.symmetric_eigenvalues().iter().cloned().fold(0.0_f64, f64::max);
        if top > 0.0 {
            self.target_energy / (2.0 * top)
        } else {
            0.0
        }
    }
}

/// Options for [`fit_least_squares`].
#[derive(Debug, Clone, Copy)]
pub struct LstsqOptions {
    /// Ridge weight relative to the mean squared column norm of the design matrix.
    pub ridge: f64,
    /// The ridge is only applied once the column-normalized condition number exceeds this;
    /// better-conditioned systems are solved exactly.
    pub rescue_condition: f64,
}

impl Default for LstsqOptions {
    fn default() -> Self {
        LstsqOptions { ridge: 1e-10, rescue_condition: 1e8 }
    }
}

#[derive(Debug, Clone)]
pub struct LstsqFit {
    pub op: NeuralOp,
    /// Relative MSE on the training data.
    pub loss: f64,
    /// Ratio of extreme singular values of the column-normalized design matrix.
    pub condition: f64,
}

/// Solves for the trainable amplitudes by ridge-regularized linear least squares.
///
/// The design matrix has one column of stacked basis responses per trainable term.
/// Columns are normalized before an SVD, so the ridge weight is scale free. A fully
/// dependent column (zero singular value) without the ridge is reported as singular.
pub fn fit_least_squares(op: &NeuralOp, data: &Dataset, opts: &LstsqOptions) -> Result<LstsqFit> {
    op.check_dataset(data)?;
    let train: Vec<usize> = (0..op.param.len()).filter(|&i| op.param.trainable()[i]).collect();
    if train.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let rows: usize = data.iter().map(|(_, t)| t.data().len()).sum();
    let mut a = nalgebra::DMatrix::<f64>::zeros(rows, train.len());
    let mut y = nalgebra::DVector::<f64>::zeros(rows);
    let mut offset = 0;
    for (u, t) in data {
        let responses = op.basis_responses(u)?;
        let n = t.data().len();
        for (i, &v) in t.data().iter().enumerate() {
            y[offset + i] = v;
        }
        for (n_term, r) in responses.iter().enumerate() {
            let amp = op.param.amplitudes()[n_term];
            match train.iter().position(|&c| c == n_term) {
                Some(col) => {
                    for (i, &v) in r.data().iter().enumerate() {
                        a[(offset + i, col)] = v;
                    }
                }
                None if amp != 0.0 => {
                    for (i, &v) in r.data().iter().enumerate() {
                        y[offset + i] -= amp * v;
                    }
                }
                None => {}
            }
        }
        offset += n;
    }
    let mut scales = Vec::with_capacity(train.len());
    for (col, &term) in train.iter().enumerate() {
        let s = a.column(col).norm();
        if s == 0.0 {
            return Err(Error::RankDeficient(format!(
                "basis term {} has zero response on the dataset",
                op.param.terms()[term]
            )));
        }
        a.column_mut(col).scale_mut(1.0 / s);
        scales.push(s);
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let lambda = if condition > opts.rescue_condition { opts.ridge } else { 0.0 };
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let uty = u.transpose() * &y;
    let mut x = nalgebra::DVector::<f64>::zeros(train.len());
    for k in 0..sv.len() {
        let s = sv[k];
        if s <= f64::EPSILON * smax * (rows as f64) && lambda == 0.0 {
            return Err(Error::Singular("dependent basis responses".into(), condition));
        }
        let f = s / (s * s + lambda);
        if f.is_finite() && s > 0.0 {
            x += vt.row(k).transpose() * (f * uty[k]);
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into(), condition));
    }
    let mut amplitudes = op.param.amplitudes().to_vec();
    for (col, &term) in train.iter().enumerate() {
        amplitudes[term] = x[col] / scales[col];
    }
    let fitted = op.with_amplitudes(&amplitudes)?;
    let l = loss(&fitted, data)?;
    Ok(LstsqFit { op: fitted, loss: l, condition })
}

#[derive(Debug, Clone)]
pub struct GdFit {
    pub op: NeuralOp,
    /// Loss before the first step and after each step.
    pub trace: Vec<f64>,
}

/// Plain gradient descent on the trainable amplitudes.
///
/// Aborts with [`Error::Diverged`] (carrying the trace) once the loss exceeds a million
/// times its initial value.
pub fn fit_gradient_descent(op: &NeuralOp, data: &Dataset, steps: usize, step_size: f64) -> Result<GdFit> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size {step_size} must be positive")));
    }
    let q = BasisResponses::compute(op, data)?;
    gradient_descent_on(op, &q, steps, step_size)
}

pub fn gradient_descent_on(op: &NeuralOp, q: &BasisResponses, steps: usize, step_size: f64) -> Result<GdFit> {
    let mask = op.param.trainable().to_vec();
    let mut p = op.param.amplitudes().to_vec();
    let initial = q.loss(&p);
    let mut trace = vec![initial];
    let limit = 1e6 * initial.max(f64::MIN_POSITIVE);
    for step in 1..=steps {
        let g = q.gradient(&p, &mask);
        for (x, gi) in p.iter_mut().zip(&g) {
            *x -= step_size * gi;
        }
        let l = q.loss(&p);
        trace.push(l);
        if !l.is_finite() || l > limit {
            return Err(Error::Diverged { step, loss: l, trace });
        }
    }
    Ok(GdFit { op: op.with_amplitudes(&p)?, trace })
}
