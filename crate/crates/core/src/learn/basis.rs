//! Linear radial parameterization: Gaussians, inverse powers and small stencils.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::kernel::{delta_stencil, gradient_stencil, sample_kernel, KernelField, OriginRule, RadialProfile};

/// One basis function. Widths, exponents and cutoffs are fixed; only amplitudes train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisTerm {
    /// `exp(-r^2 / sigma^2)`.
    Gaussian { sigma: f64 },
    /// `r^-exponent` for `r >= r_min`, zero inside the cutoff.
    Power { exponent: u32, r_min: f64 },
    /// Order 0 is the delta stencil (scalar kernels), order 1 the central-difference
    /// gradient stencil (vector kernels).
    Stencil { order: u8 },
}

impl BasisTerm {
    fn rank(&self) -> u8 {
        match self {
            BasisTerm::Gaussian { .. } => 0,
            BasisTerm::Power { .. } => 1,
            BasisTerm::Stencil { .. } => 2,
        }
    }

    /// The term's contribution to `R(r)` at unit amplitude. Stencils contribute nothing
    /// to the continuous profile.
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            BasisTerm::Gaussian { sigma } => (-r * r / (sigma * sigma)).exp(),
            BasisTerm::Power { exponent, r_min } => {
                if r >= r_min * (1.0 - 1e-12) && r > 0.0 {
                    r.powi(-(exponent as i32))
                } else {
                    0.0
                }
            }
            BasisTerm::Stencil { .. } => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BasisTerm::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidParameter(format!("gaussian width {sigma} must be positive")))
            }
            BasisTerm::Power { exponent, r_min } if exponent == 0 || !(r_min > 0.0 && r_min.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "power term needs exponent >= 1 and r_min > 0 (got {exponent}, {r_min})"
                )))
            }
            BasisTerm::Stencil { order } if order > 1 => {
                Err(Error::InvalidParameter(format!("stencil order {order} not in {{0, 1}}")))
            }
            _ => Ok(()),
        }
    }

    /// Unit-amplitude kernel of this term on `kernel_grid` for harmonic order `l_h`.
    pub fn kernel(&self, kernel_grid: &Grid, l_h: u8) -> Result<KernelField> {
        match *self {
            BasisTerm::Stencil { order } => {
                if order != l_h {
                    return Err(Error::InvalidParameter(format!(
                        "stencil of order {order} cannot build an l_h={l_h} kernel"
                    )));
                }
                let s = if order == 0 { delta_stencil(kernel_grid) } else { gradient_stencil(kernel_grid) };
                s.embed(kernel_grid)
            }
            term => {
                let profile = RadialProfile::new(term.to_string(), move |r| term.eval(r));
                let profile = match term {
                    BasisTerm::Power { .. } => profile.singular().with_origin(OriginRule::Zero),
                    _ => profile,
                };
                sample_kernel(kernel_grid, &profile, l_h)
            }
        }
    }
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisTerm::Gaussian { sigma } => write!(f, "gaussian({sigma})"),
            BasisTerm::Power { exponent, r_min } => write!(f, "power({exponent},{r_min})"),
            BasisTerm::Stencil { order } => write!(f, "stencil({order})"),
        }
    }
}

/// `R(r; p) = sum_n p_n phi_n(r)`, plus stencil terms, with a per-amplitude training mask.
///
/// Terms are kept in the order Gaussians, powers, stencils; amplitudes follow that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRadial {
    terms: Vec<BasisTerm>,
    amplitudes: Vec<f64>,
    trainable: Vec<bool>,
}

impl ParamRadial {
    /// All-trainable parameterization with zero amplitudes.
    pub fn new(terms: Vec<BasisTerm>) -> Result<Self> {
        let n = terms.len();
        ParamRadial::with_amplitudes(terms, vec![0.0; n], vec![true; n])
    }

    pub fn with_amplitudes(terms: Vec<BasisTerm>, amplitudes: Vec<f64>, trainable: Vec<bool>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyBasis);
        }
        if amplitudes.len() != terms.len() || trainable.len() != terms.len() {
            return Err(Error::InvalidParameter(format!(
                "{} terms but {} amplitudes and {} mask entries",
                terms.len(),
                amplitudes.len(),
                trainable.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        for t in &terms {
            t.validate()?;
        }
        let mut order: Vec<usize> = (0..terms.len()).collect();
        order.sort_by_key(|&i| terms[i].rank());
        Ok(ParamRadial {
            terms: order.iter().map(|&i| terms[i]).collect(),
            amplitudes: order.iter().map(|&i| amplitudes[i]).collect(),
            trainable: order.iter().map(|&i| trainable[i]).collect(),
        })
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn set_amplitudes(&mut self, amplitudes: &[f64]) -> Result<()> {
        if amplitudes.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} amplitudes, got {}",
                self.len(),
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        self.amplitudes.copy_from_slice(amplitudes);
        Ok(())
    }

    pub fn set_trainable(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} mask entries, got {}",
                self.len(),
                mask.len()
            )));
        }
        self.trainable.copy_from_slice(mask);
        Ok(())
    }

    /// Continuous part of the radial function (stencils excluded).
    pub fn radial(&self, r: f64) -> f64 {
        self.terms.iter().zip(&self.amplitudes).map(|(t, a)| a * t.eval(r)).sum()
    }
}

/// Default basis for a field grid and kernel order: 8 Gaussians with widths log-spaced
/// over `[h, L/4]`, powers `r^-1` and `r^-2` cut off below `h`, and the stencil whose order
/// matches `l_h` (if any). `h` is the smallest spacing and `L` the shortest domain extent.
pub fn default_basis(grid: &Grid, l_h: u8) -> ParamRadial {
    let h = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let extent = grid
        .shape()
        .iter()
        .zip(grid.spacing())
        .map(|(&n, &s)| n as f64 * s)
        .fold(f64::INFINITY, f64::min);
    let hi = (extent / 4.0).max(h * 1.5);
    let count = 8;
    let mut terms: Vec<BasisTerm> = (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            BasisTerm::Gaussian { sigma: h * (hi / h).powf(t) }
        })
        .collect();
    terms.push(BasisTerm::Power { exponent: 1, r_min: h });
    terms.push(BasisTerm::Power { exponent: 2, r_min: h });
    if l_h <= 1 {
        terms.push(BasisTerm::Stencil { order: l_h });
    }
    ParamRadial::new(terms).expect("default terms are valid")
}
