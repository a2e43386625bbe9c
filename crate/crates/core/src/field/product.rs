//! Tensor products between rotation orders and their component expansions.

use std::fmt;
use std::str::FromStr;

use super::harmonic::{components_for, l2_to_matrix};
use super::tensor::TensorField;
use crate::error::{Error, Result, RuleTriple};

/// Elementary product used by a [`ProductRule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProductKind {
    /// Scalar times tensor, either side.
    Scalar,
    /// Dot product (Frobenius for order 2).
    Dot,
    /// Cross product. In 2d this is the pseudo-scalar `u_x h_y - u_y h_x`.
    Cross,
    /// Traceless symmetric matrix times vector.
    MatVec,
}

impl fmt::Display for ProductKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProductKind::Scalar => "scalar",
            ProductKind::Dot => "dot",
            ProductKind::Cross => "cross",
            ProductKind::MatVec => "matvec",
        })
    }
}

/// A validated `(l_u, l_h) -> l_v` product rule for a given dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProductRule {
    lu: u8,
    lh: u8,
    lv: u8,
    kind: ProductKind,
    dim: usize,
}

const RULES_2D: &str = "(0,l)->l, (l,0)->l scalar; (1,1)->0 dot; (1,1)->0 cross (pseudo-scalar)";
const RULES_3D: &str =
    "(0,l)->l, (l,0)->l scalar; (1,1)->0, (2,2)->0 dot; (1,1)->1 cross; (2,1)->1 matvec";

impl ProductRule {
    pub fn new(lu: u8, lh: u8, lv: u8, kind: ProductKind, dim: usize) -> Result<Self> {
        let supported = |l: u8| components_for(l, dim).is_ok();
        let ok = supported(lu)
            && supported(lh)
            && supported(lv)
            && match kind {
                ProductKind::Scalar => (lu == 0 && lh == lv) || (lh == 0 && lu == lv),
                ProductKind::Dot => lu == lh && lv == 0 && lu >= 1,
                ProductKind::Cross => {
                    lu == 1 && lh == 1 && lv == if dim == 3 { 1 } else { 0 }
                }
                ProductKind::MatVec => dim == 3 && lu == 2 && lh == 1 && lv == 1,
            };
        if !ok {
            return Err(Error::UnsupportedRule {
                rule: RuleTriple(lu, lh, lv),
                dim,
                allowed: if dim == 2 { RULES_2D } else { RULES_3D }.to_string(),
            });
        }
        Ok(ProductRule { lu, lh, lv, kind, dim })
    }

    /// Picks the product implied by the orders. `(1,1)->0` resolves to the dot product;
    /// use [`ProductRule::new`] with [`ProductKind::Cross`] for the 2d pseudo-scalar cross.
    pub fn infer(lu: u8, lh: u8, lv: u8, dim: usize) -> Result<Self> {
        let kind = match (lu, lh, lv) {
            (0, _, _) | (_, 0, _) => ProductKind::Scalar,
            (a, b, 0) if a == b => ProductKind::Dot,
            (1, 1, 1) => ProductKind::Cross,
            (2, 1, 1) => ProductKind::MatVec,
            _ => ProductKind::Scalar, // rejected by validation below
        };
        ProductRule::new(lu, lh, lv, kind, dim)
    }

    /// Parses `"lu,lh,lv"` or `"lu,lh,lv:kind"` for a given dimension.
    pub fn parse(s: &str, dim: usize) -> Result<Self> {
        let (orders, kind) = match s.split_once(':') {
            Some((o, k)) => (o, Some(k.parse::<ProductKind>()?)),
            None => (s, None),
        };
        let ls: Vec<u8> = orders
            .trim_matches(|c| c == '(' || c == ')')
            .split(',')
            .map(|t| t.trim().parse::<u8>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad rule `{s}`: {e}")))?;
        if ls.len() != 3 {
            return Err(Error::Format(format!("rule `{s}` must list three orders")));
        }
        match kind {
            Some(k) => ProductRule::new(ls[0], ls[1], ls[2], k, dim),
            None => ProductRule::infer(ls[0], ls[1], ls[2], dim),
        }
    }

    pub fn lu(&self) -> u8 {
        self.lu
    }
    pub fn lh(&self) -> u8 {
        self.lh
    }
    pub fn lv(&self) -> u8 {
        self.lv
    }
    pub fn kind(&self) -> ProductKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Canonical text form, accepted by [`ProductRule::parse`].
    pub fn spec_string(&self) -> String {
        format!("{},{},{}:{}", self.lu, self.lh, self.lv, self.kind)
    }

    /// `out = u (x) h` for single tensor values.
    pub fn apply(&self, u: &[f64], h: &[f64], out: &mut [f64]) {
        match self.kind {
            ProductKind::Scalar if self.lu == 0 => {
                for (o, hv) in out.iter_mut().zip(h) {
                    *o = u[0] * hv;
                }
            }
            ProductKind::Scalar => {
                for (o, uv) in out.iter_mut().zip(u) {
                    *o = uv * h[0];
                }
            }
            ProductKind::Dot => out[0] = u.iter().zip(h).map(|(a, b)| a * b).sum(),
            ProductKind::Cross if self.dim == 2 => out[0] = u[0] * h[1] - u[1] * h[0],
            ProductKind::Cross => {
                out[0] = u[1] * h[2] - u[2] * h[1];
                out[1] = u[2] * h[0] - u[0] * h[2];
                out[2] = u[0] * h[1] - u[1] * h[0];
            }
            ProductKind::MatVec => {
                let m = l2_to_matrix(u);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..3).map(|j| m[i][j] * h[j]).sum();
                }
            }
        }
    }

    pub fn product(&self, u: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_components()];
        self.apply(u, h, &mut out);
        out
    }

    pub fn in_components(&self) -> (usize, usize) {
        (
            components_for(self.lu, self.dim).expect("validated"),
            components_for(self.lh, self.dim).expect("validated"),
        )
    }

    pub fn out_components(&self) -> usize {
        components_for(self.lv, self.dim).expect("validated")
    }

    /// Nonzero expansion coefficients `(m, n, p, C_mnp)` with
    /// `(u (x) h)[p] = sum_{m,n} C_mnp u[m] h[n]`.
    ///
    /// Products are bilinear, so `C_mnp` is the `p`-th component of `e_m (x) e_n`.
    pub fn coefficients(&self) -> Vec<Coefficient> {
        let (cu, ch) = self.in_components();
        let mut out = Vec::new();
        let mut em = vec![0.0; cu];
        let mut en = vec![0.0; ch];
        for m in 0..cu {
            em.iter_mut().enumerate().for_each(|(i, x)| *x = f64::from(i == m));
            for n in 0..ch {
                en.iter_mut().enumerate().for_each(|(i, x)| *x = f64::from(i == n));
                for (p, c) in self.product(&em, &en).into_iter().enumerate() {
                    if c.abs() > 1e-15 {
                        out.push(Coefficient { m, n, p, c });
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for ProductRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})->{} {}", self.lu, self.lh, self.lv, self.kind)
    }
}

impl FromStr for ProductKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scalar" => Ok(ProductKind::Scalar),
            "dot" => Ok(ProductKind::Dot),
            "cross" => Ok(ProductKind::Cross),
            "matvec" => Ok(ProductKind::MatVec),
            other => Err(Error::Format(format!("unknown product kind `{other}`"))),
        }
    }
}

/// One entry of a product expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub c: f64,
}

/// Voxel-wise tensor product of two fields on the same grid.
pub fn pointwise_product(u: &TensorField, w: &TensorField, rule: &ProductRule) -> Result<TensorField> {
    if !u.grid().same_as(w.grid()) {
        return Err(Error::GridMismatch("pointwise product operands differ in grid".into()));
    }
    check_orders(rule, u.l(), w.l(), u.grid().dim())?;
    let grid = u.grid();
    let mut out = TensorField::zeros(grid, rule.lv())?;
    let n = grid.len();
    let (cu, cw) = rule.in_components();
    let mut a = vec![0.0; cu];
    let mut b = vec![0.0; cw];
    let mut v = vec![0.0; rule.out_components()];
    for voxel in 0..n {
        u.value_into(voxel, &mut a);
        w.value_into(voxel, &mut b);
        rule.apply(&a, &b, &mut v);
        out.set(voxel, &v);
    }
    Ok(out)
}

pub(crate) fn check_orders(rule: &ProductRule, lu: u8, lh: u8, dim: usize) -> Result<()> {
    if rule.dim() != dim || rule.lu() != lu || rule.lh() != lh {
        return Err(Error::UnsupportedRule {
            rule: RuleTriple(lu, lh, rule.lv()),
            dim,
            allowed: format!("operands must match rule {rule} in {}d", rule.dim()),
        });
    }
    Ok(())
}

/// Per-voxel Euclidean norm of the component tuple (Frobenius norm for order 2).
pub fn field_norm(u: &TensorField) -> TensorField {
    let n = u.grid().len();
    let data = (0..n)
        .map(|voxel| {
            (0..u.components())
                .map(|c| u.component(c)[voxel].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    TensorField::from_data(u.grid(), 0, data).expect("norms of finite values are finite")
}

/// Every rule supported in `dim` dimensions.
pub fn all_rules(dim: usize) -> Vec<ProductRule> {
    let orders: &[u8] = if dim == 3 { &[0, 1, 2] } else { &[0, 1] };
    let kinds = [ProductKind::Scalar, ProductKind::Dot, ProductKind::Cross, ProductKind::MatVec];
    let mut rules = Vec::new();
    for &lu in orders {
        for &lh in orders {
            for &lv in orders {
                for kind in kinds {
                    if let Ok(r) = ProductRule::new(lu, lh, lv, kind, dim) {
                        if !rules.contains(&r) {
                            rules.push(r);
                        }
                    }
                }
            }
        }
    }
    rules
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::harmonic::unit_harmonic;
    use crate::field::{Boundary, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_times_vector() {
        let r = ProductRule::infer(0, 1, 1, 3).unwrap();
        assert_eq!(r.product(&[2.0], &[1.0, 0.0, 0.0]), vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_follows_right_hand_rule() {
        let r = ProductRule::infer(1, 1, 1, 3).unwrap();
        assert_eq!(r.product(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), vec![0.0, 0.0, 1.0]);
        let r2 = ProductRule::new(1, 1, 0, ProductKind::Cross, 2).unwrap();
        assert_eq!(r2.product(&[1.0, 0.0], &[0.0, 1.0]), vec![1.0]);
    }

    #[test]
    fn dot_product() {
        let r = ProductRule::infer(1, 1, 0, 3).unwrap();
        assert_eq!(r.kind(), ProductKind::Dot);
        assert_eq!(r.product(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), vec![14.0]);
    }

    #[test]
    fn matvec_on_y2_of_z() {
        // (3 z z^T - I) z = 2 z
        let mut y2 = [0.0; 5];
        unit_harmonic(2, &[0.0, 0.0, 1.0], &mut y2);
        let r = ProductRule::infer(2, 1, 1, 3).unwrap();
        let v = r.product(&y2, &[0.0, 0.0, 1.0]);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        assert!((v[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_unsupported_rules() {
        assert!(ProductRule::infer(1, 1, 1, 2).is_err());
        assert!(ProductRule::infer(2, 1, 1, 2).is_err());
        assert!(ProductRule::infer(1, 2, 1, 3).is_err());
        assert!(ProductRule::infer(0, 1, 0, 3).is_err());
        let err = ProductRule::infer(1, 2, 2, 3).unwrap_err().to_string();
        assert!(err.contains("matvec"), "{err}");
    }

    #[test]
    fn parse_round_trips() {
        for dim in [2, 3] {
            for r in all_rules(dim) {
                assert_eq!(ProductRule::parse(&r.spec_string(), dim).unwrap(), r);
            }
        }
        assert_eq!(ProductRule::parse("0,1,1", 3).unwrap().kind(), ProductKind::Scalar);
    }

    #[test]
    fn coefficients_expand_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [2, 3] {
            for rule in all_rules(dim) {
                let (cu, ch) = rule.in_components();
                let coeffs = rule.coefficients();
                for _ in 0..20 {
                    let u: Vec<f64> = (0..cu).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let h: Vec<f64> = (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let direct = rule.product(&u, &h);
                    let mut expanded = vec![0.0; rule.out_components()];
                    for c in &coeffs {
                        expanded[c.p] += c.c * u[c.m] * h[c.n];
                    }
                    for (a, b) in direct.iter().zip(&expanded) {
                        assert!((a - b).abs() < 1e-12, "{rule}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn pointwise_identities() {
        let g = Grid::centered(3, 4, 1.0, Boundary::ZeroPad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = TensorField::random(&g, 1, &mut rng).unwrap();
        let one = TensorField::constant(&g, 0, &[1.0]).unwrap();

        let same = pointwise_product(&one, &v, &ProductRule::infer(0, 1, 1, 3).unwrap()).unwrap();
        assert_eq!(same, v);

        let sq = pointwise_product(&v, &v, &ProductRule::infer(1, 1, 0, 3).unwrap()).unwrap();
        let norm = field_norm(&v);
        for (a, b) in sq.data().iter().zip(norm.data()) {
            assert!((a - b * b).abs() < 1e-14);
        }

        let cross = pointwise_product(&v, &v, &ProductRule::infer(1, 1, 1, 3).unwrap()).unwrap();
        assert_eq!(cross.max_abs(), 0.0);

        let g2 = Grid::centered(3, 5, 1.0, Boundary::ZeroPad).unwrap();
        let w = TensorField::zeros(&g2, 1).unwrap();
        assert!(pointwise_product(&v, &w, &ProductRule::infer(1, 1, 0, 3).unwrap()).is_err());
    }

    #[test]
    fn norms() {
        let g = Grid::centered(3, 3, 1.0, Boundary::ZeroPad).unwrap();
        let v = TensorField::constant(&g, 1, &[3.0, 4.0, 0.0]).unwrap();
        assert!(field_norm(&v).data().iter().all(|&x| x == 5.0));
        let s = TensorField::constant(&g, 0, &[-2.5]).unwrap();
        assert!(field_norm(&s).data().iter().all(|&x| x == 2.5));
        assert_eq!(field_norm(&TensorField::zeros(&g, 2).unwrap()).max_abs(), 0.0);
    }
}
