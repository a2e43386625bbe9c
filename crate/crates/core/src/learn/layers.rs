//! Pointwise layers: norm nonlinearity and pairwise tensor-product attention.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{all_rules, pointwise_product, ProductRule, TensorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

/// Rescales each channel voxel-wise as `sigma(a |u| + b) u_hat`.
///
/// Only the norm passes through the activation, so directions are preserved and the
/// layer commutes with rotations. Voxels where `|u| = 0` map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearLayer {
    affine: Vec<(f64, f64)>,
    activation: Activation,
}

impl NonlinearLayer {
    /// One `(a, b)` per channel.
    pub fn new(affine: Vec<(f64, f64)>, activation: Activation) -> Self {
        NonlinearLayer { affine, activation }
    }

    pub fn channels(&self) -> usize {
        self.affine.len()
    }

    pub fn apply(&self, fields: &[TensorField]) -> Result<Vec<TensorField>> {
        if fields.len() != self.affine.len() {
            return Err(Error::ChannelMismatch { expected: self.affine.len(), found: fields.len() });
        }
        fields
            .iter()
            .zip(&self.affine)
            .map(|(u, &(a, b))| {
                let n = u.grid().len();
                let comps = u.components();
                let mut out = u.clone();
                for voxel in 0..n {
                    let norm = (0..comps).map(|c| u.component(c)[voxel].powi(2)).sum::<f64>().sqrt();
                    let s = if norm > 0.0 { self.activation.eval(a * norm + b) / norm } else { 0.0 };
                    for c in 0..comps {
                        out.component_mut(c)[voxel] *= s;
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// One side of an attention pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Input(usize),
    /// The constant scalar field 1.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub a: Operand,
    pub b: Operand,
    pub rule: ProductRule,
}

/// `out_j = sum_k w_jk (x_a ⊗ x_b)_k` over a list of operand pairs, each with a product
/// rule. A pair only feeds outputs whose order equals its rule's output order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    dim: usize,
    input_orders: Vec<u8>,
    output_orders: Vec<u8>,
    pairs: Vec<Pair>,
    weights: Vec<Vec<f64>>,
}

fn operand_order(op: Operand, inputs: &[u8]) -> Result<u8> {
    match op {
        Operand::Identity => Ok(0),
        Operand::Input(i) => inputs
            .get(i)
            .copied()
            .ok_or(Error::ChannelMismatch { expected: inputs.len(), found: i + 1 }),
    }
}

impl AttentionLayer {
    /// Layer with an explicit pair list and zero weights. Every pair's rule must match the
    /// orders of its operands and produce one of the output orders.
    pub fn new(dim: usize, input_orders: Vec<u8>, output_orders: Vec<u8>, pairs: Vec<Pair>) -> Result<Self> {
        for p in &pairs {
            let (la, lb) = (operand_order(p.a, &input_orders)?, operand_order(p.b, &input_orders)?);
            crate::field::product::check_orders(&p.rule, la, lb, dim)?;
            if !output_orders.contains(&p.rule.lv()) {
                return Err(Error::InvalidParameter(format!(
                    "pair rule {} produces l={} but outputs are {:?}",
                    p.rule,
                    p.rule.lv(),
                    output_orders
                )));
            }
        }
        let weights = vec![vec![0.0; pairs.len()]; output_orders.len()];
        Ok(AttentionLayer { dim, input_orders, output_orders, pairs, weights })
    }

    /// Every unordered operand pair (inputs plus the identity scalar) with every rule that
    /// links their orders to some output order. Combinations with no valid rule are skipped.
    pub fn auto(dim: usize, input_orders: Vec<u8>, output_orders: Vec<u8>) -> Result<Self> {
        let mut operands: Vec<Operand> = (0..input_orders.len()).map(Operand::Input).collect();
        operands.push(Operand::Identity);
        let rules = all_rules(dim);
        let mut pairs = Vec::new();
        for (i, &a) in operands.iter().enumerate() {
            for &b in &operands[i..] {
                if a == Operand::Identity && b == Operand::Identity {
                    continue;
                }
                let (la, lb) = (operand_order(a, &input_orders)?, operand_order(b, &input_orders)?);
                for rule in &rules {
                    if rule.lu() == la && rule.lh() == lb && output_orders.contains(&rule.lv()) {
                        pairs.push(Pair { a, b, rule: *rule });
                    }
                }
            }
        }
        AttentionLayer::new(dim, input_orders, output_orders, pairs)
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn set_weight(&mut self, output: usize, pair: usize, w: f64) -> Result<()> {
        let lv = self
            .pairs
            .get(pair)
            .ok_or_else(|| Error::InvalidParameter(format!("no pair {pair}")))?
            .rule
            .lv();
        let lj = *self
            .output_orders
            .get(output)
            .ok_or_else(|| Error::InvalidParameter(format!("no output channel {output}")))?;
        if lv != lj {
            return Err(Error::OrderMismatch { expected: lj, found: lv });
        }
        self.weights[output][pair] = w;
        Ok(())
    }

    pub fn apply(&self, fields: &[TensorField]) -> Result<Vec<TensorField>> {
        if fields.len() != self.input_orders.len() {
            return Err(Error::ChannelMismatch { expected: self.input_orders.len(), found: fields.len() });
        }
        let Some(first) = fields.first() else {
            return Err(Error::ChannelMismatch { expected: 1, found: 0 });
        };
        let grid = first.grid();
        if grid.dim() != self.dim {
            return Err(Error::GridMismatch(format!("layer is {}d, fields are {}d", self.dim, grid.dim())));
        }
        for (f, &l) in fields.iter().zip(&self.input_orders) {
            if f.l() != l {
                return Err(Error::OrderMismatch { expected: l, found: f.l() });
            }
            if !f.grid().same_as(grid) {
                return Err(Error::GridMismatch("attention inputs differ in grid".into()));
            }
        }
        let ones = TensorField::constant(grid, 0, &[1.0])?;
        let pick = |o: Operand| match o {
            Operand::Input(i) => &fields[i],
            Operand::Identity => &ones,
        };
        let mut products: Vec<Option<TensorField>> = vec![None; self.pairs.len()];
        let mut outputs = Vec::with_capacity(self.output_orders.len());
        for (j, &lj) in self.output_orders.iter().enumerate() {
            let mut out = TensorField::zeros(grid, lj)?;
            for (k, p) in self.pairs.iter().enumerate() {
                let w = self.weights[j][k];
                if w == 0.0 || p.rule.lv() != lj {
                    continue;
                }
                if products[k].is_none() {
                    products[k] = Some(pointwise_product(pick(p.a), pick(p.b), &p.rule)?);
                }
                out.axpy(w, products[k].as_ref().expect("just filled"))?;
            }
            outputs.push(out);
        }
        Ok(outputs)
    }
}
