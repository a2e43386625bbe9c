//! Text manifest for fitted neural operators.
//!
//! ```text
//! format=eqop-model-1
//! rule=0,1,1:scalar
//! path=fourier
//! shape=16,16,16
//! spacing=1.0000000000000000e0,...
//! origin=...
//! boundary=zero
//! term=gaussian,1.0000000000000000e0
//! term=power,1,1.0000000000000000e0
//! term=stencil,1
//! amplitudes=...
//! trainable=1,1,...
//! ```

use std::path::Path;

use super::basis::{BasisTerm, ParamRadial};
use super::neural::NeuralOp;
use crate::error::{Error, Result};
use crate::field::{Boundary, Grid, ProductRule};
use crate::util::{fmt_f64, fmt_list, parse_f64, parse_f64_list, KeyValues};

const FORMAT: &str = "eqop-model-1";

fn term_line(t: &BasisTerm) -> String {
    match *t {
        BasisTerm::Gaussian { sigma } => format!("gaussian,{}", fmt_f64(sigma)),
        BasisTerm::Power { exponent, r_min } => format!("power,{exponent},{}", fmt_f64(r_min)),
        BasisTerm::Stencil { order } => format!("stencil,{order}"),
    }
}

fn parse_term(s: &str) -> Result<BasisTerm> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || Error::Format(format!("malformed term `{s}`"));
    match parts.as_slice() {
        ["gaussian", sigma] => Ok(BasisTerm::Gaussian { sigma: parse_f64("term", sigma)? }),
        ["power", e, r_min] => Ok(BasisTerm::Power {
            exponent: e.parse().map_err(|_| bad())?,
            r_min: parse_f64("term", r_min)?,
        }),
        ["stencil", o] => Ok(BasisTerm::Stencil { order: o.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

pub fn to_manifest(op: &NeuralOp) -> KeyValues {
    let g = op.grid();
    let p = op.param();
    let mut kv = KeyValues::new();
    kv.push("format", FORMAT);
    kv.push("rule", op.rule().spec_string());
    kv.push("path", op.path().to_string());
    kv.push("shape", g.shape().iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
    kv.push("spacing", fmt_list(g.spacing()));
    kv.push("origin", fmt_list(g.origin()));
    kv.push("boundary", g.boundary().to_string());
    for t in p.terms() {
        kv.push("term", term_line(t));
    }
    kv.push("amplitudes", fmt_list(p.amplitudes()));
    kv.push(
        "trainable",
        p.trainable().iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(","),
    );
    kv
}

pub fn from_manifest(kv: &KeyValues) -> Result<NeuralOp> {
    if kv.require("format")? != FORMAT {
        return Err(Error::Format(format!("expected format={FORMAT}")));
    }
    let shape = kv
        .require("shape")?
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad shape entry `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let boundary: Boundary = kv.require("boundary")?.parse()?;
    let grid = Grid::new(
        &shape,
        &parse_f64_list("spacing", kv.require("spacing")?)?,
        &parse_f64_list("origin", kv.require("origin")?)?,
        boundary,
    )?;
    let rule = ProductRule::parse(kv.require("rule")?, grid.dim())?;
    let path = kv.require("path")?.parse()?;
    let terms = kv.get_all("term").map(parse_term).collect::<Result<Vec<_>>>()?;
    let amplitudes = parse_f64_list("amplitudes", kv.require("amplitudes")?)?;
    let trainable = kv
        .require("trainable")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| match s.trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(Error::Format(format!("bad trainable flag `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let param = ParamRadial::with_amplitudes(terms, amplitudes, trainable)?;
    NeuralOp::new(param, rule, &grid, path)
}

pub fn save_model(path: impl AsRef<Path>, op: &NeuralOp) -> Result<()> {
    std::fs::write(path, to_manifest(op).render())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NeuralOp> {
    from_manifest(&KeyValues::read(path)?)
}
