//! EQF binary field files.
//!
//! One ASCII header line followed by little-endian `f64` payload, component-major and
//! row-major within each component:
//!
//! ```text
//! EQF1 dim=3 l=1 shape=16,16,16 spacing=1,1,1 origin=-7.5,-7.5,-7.5 boundary=zero\n
//! <3 * 16^3 little-endian f64>
//! ```
//!
//! Extra `key=value` tokens may follow `boundary` (kernels add `kind=`). Floats in the
//! header use the shortest representation that round-trips exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::grid::{Boundary, Grid};
use super::harmonic::components_for;
use super::tensor::TensorField;
use crate::error::{Error, Result};

const MAGIC: &str = "EQF1";
const MAX_HEADER: usize = 4096;

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn header_line(field: &TensorField, extra: &[(&str, &str)]) -> String {
    let g = field.grid();
    let mut line = format!(
        "{MAGIC} dim={} l={} shape={} spacing={} origin={} boundary={}",
        g.dim(),
        field.l(),
        join(g.shape()),
        join(g.spacing()),
        join(g.origin()),
        g.boundary()
    );
    for (k, v) in extra {
        line.push_str(&format!(" {k}={v}"));
    }
    line.push('\n');
    line
}

pub fn write_eqf<W: Write>(field: &TensorField, mut w: W, extra: &[(&str, &str)]) -> Result<()> {
    w.write_all(header_line(field, extra).as_bytes())?;
    let mut buf = Vec::with_capacity(field.data().len() * 8);
    for x in field.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Parsed EQF content: the field plus any extra header tokens, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct EqfFile {
    pub field: TensorField,
    pub extra: Vec<(String, String)>,
}

impl EqfFile {
    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::Format(format!("bad value `{t}` for `{key}`")))
        })
        .collect()
}

pub fn read_eqf<R: BufRead>(mut r: R) -> Result<EqfFile> {
    let mut header = Vec::new();
    r.by_ref().take(MAX_HEADER as u64).read_until(b'\n', &mut header)?;
    if header.last() != Some(&b'\n') {
        return Err(Error::Format("missing or oversized EQF header line".into()));
    }
    let header = std::str::from_utf8(&header[..header.len() - 1])
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some(MAGIC) {
        return Err(Error::Format("not an EQF1 file".into()));
    }
    let (mut dim, mut l, mut shape, mut spacing, mut origin, mut boundary) =
        (None, None, None, None, None, None);
    let mut extra = Vec::new();
    for tok in tokens.filter(|t| !t.is_empty()) {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header token `{tok}`")))?;
        match k {
            "dim" => dim = Some(v.parse::<usize>().map_err(|_| Error::Format("bad dim".into()))?),
            "l" => l = Some(v.parse::<u8>().map_err(|_| Error::Format("bad l".into()))?),
            "shape" => shape = Some(parse_list::<usize>(k, v)?),
            "spacing" => spacing = Some(parse_list::<f64>(k, v)?),
            "origin" => origin = Some(parse_list::<f64>(k, v)?),
            "boundary" => boundary = Some(v.parse::<Boundary>()?),
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    let missing = |name: &str| Error::Format(format!("header lacks `{name}`"));
    let dim = dim.ok_or_else(|| missing("dim"))?;
    let l = l.ok_or_else(|| missing("l"))?;
    let shape = shape.ok_or_else(|| missing("shape"))?;
    if shape.len() != dim {
        return Err(Error::Format(format!("dim={dim} but shape has {} axes", shape.len())));
    }
    let grid = Grid::new(
        &shape,
        &spacing.ok_or_else(|| missing("spacing"))?,
        &origin.ok_or_else(|| missing("origin"))?,
        boundary.ok_or_else(|| missing("boundary"))?,
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    let c = components_for(l, dim).map_err(|e| Error::Format(e.to_string()))?;
    let count = c * grid.len();
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("payload shorter than {count} values")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let field = TensorField::from_data(&grid, l, data)?;
    Ok(EqfFile { field, extra })
}

pub fn save(path: impl AsRef<Path>, field: &TensorField) -> Result<()> {
    save_with(path, field, &[])
}

pub fn save_with(path: impl AsRef<Path>, field: &TensorField, extra: &[(&str, &str)]) -> Result<()> {
    write_eqf(field, BufWriter::new(File::create(path)?), extra)
}

pub fn load(path: impl AsRef<Path>) -> Result<TensorField> {
    Ok(load_file(path)?.field)
}

pub fn load_file(path: impl AsRef<Path>) -> Result<EqfFile> {
    read_eqf(BufReader::new(File::open(path)?))
}
