//! Fields on sites, bonds and plaquettes, the discrete exterior calculus and
//! explicit linear maps between field spaces.
//!
//! Derivatives are divided differences and every inner product carries the
//! weight `η^dim`, so on a single lattice the adjoint of a map is its plain
//! transpose while maps between lattices of different spacing pick up the
//! ratio of weights.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeSpec, Path};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Site,
    Bond,
    Plaquette,
}

/// A field space: a lattice plus the kind of element the values live on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Space {
    pub lattice: LatticeSpec,
    pub kind: ElementKind,
    pub len: usize,
}

impl Space {
    pub fn sites(lat: &Lattice) -> Space {
        Space { lattice: *lat.spec(), kind: ElementKind::Site, len: lat.num_sites() }
    }

    pub fn bonds(lat: &Lattice) -> Space {
        Space { lattice: *lat.spec(), kind: ElementKind::Bond, len: lat.num_bonds() }
    }

    pub fn plaquettes(lat: &Lattice) -> Space {
        Space { lattice: *lat.spec(), kind: ElementKind::Plaquette, len: lat.num_plaquettes() }
    }

    /// Unit-weight space; the lattice descriptor is a placeholder at spacing 1.
    pub fn plain(len: usize) -> Space {
        Space { lattice: LatticeSpec::torus(2, 3, 0, 0), kind: ElementKind::Site, len }
    }

    pub fn weight(&self) -> f64 {
        self.lattice.volume_weight()
    }
}

macro_rules! field_type {
    ($name:ident, $kind:expr, $count:ident) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        pub struct $name {
            #[serde(rename = "lattice")]
            pub spec: LatticeSpec,
            pub values: Vec<f64>,
        }

        impl $name {
            pub const KIND: ElementKind = $kind;

            pub fn zeros(lat: &Lattice) -> Self {
                $name { spec: *lat.spec(), values: vec![0.0; lat.$count()] }
            }

            pub fn from_values(lat: &Lattice, values: Vec<f64>) -> Result<Self> {
                if values.len() != lat.$count() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} values for {} elements",
                        values.len(),
                        lat.$count()
                    )));
                }
                Ok($name { spec: *lat.spec(), values })
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn to_json(&self) -> Result<String> {
                Ok(serde_json::to_string(self)?)
            }

            pub fn from_json(s: &str) -> Result<Self> {
                Ok(serde_json::from_str(s)?)
            }

            /// Raw little-endian `f64` values in canonical ordinal order.
            pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
                for v in &self.values {
                    w.write_all(&v.to_le_bytes())?;
                }
                Ok(())
            }

            pub fn read_binary<R: Read>(lat: &Lattice, mut r: R) -> Result<Self> {
                let mut values = Vec::with_capacity(lat.$count());
                let mut buf = [0u8; 8];
                for _ in 0..lat.$count() {
                    r.read_exact(&mut buf)?;
                    values.push(f64::from_le_bytes(buf));
                }
                Ok($name { spec: *lat.spec(), values })
            }

            pub(crate) fn check_on(&self, lat: &Lattice) -> Result<()> {
                if self.spec != *lat.spec() || self.values.len() != lat.$count() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} does not live on this lattice",
                        stringify!($name)
                    )));
                }
                Ok(())
            }
        }
    };
}

field_type!(ScalarField, ElementKind::Site, num_sites);
field_type!(BondField, ElementKind::Bond, num_bonds);
field_type!(PlaquetteField, ElementKind::Plaquette, num_plaquettes);

impl BondField {
    /// Value on the oriented bond `(b, sign)`.
    pub fn oriented(&self, bond: usize, sign: i8) -> f64 {
        sign as f64 * self.values[bond]
    }
}

/// Dense linear map between field spaces.
#[derive(Clone, Debug)]
pub struct LinearMap {
    pub domain: Space,
    pub codomain: Space,
    pub matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(domain: Space, codomain: Space, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != codomain.len || matrix.ncols() != domain.len {
            return Err(Error::DimensionMismatch(format!(
                "matrix {}x{} for spaces {} -> {}",
                matrix.nrows(),
                matrix.ncols(),
                domain.len,
                codomain.len
            )));
        }
        Ok(LinearMap { domain, codomain, matrix })
    }

    pub fn identity(space: Space) -> Self {
        LinearMap { domain: space, codomain: space, matrix: DMatrix::identity(space.len, space.len) }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for map with {} columns",
                v.len(),
                self.ncols()
            )));
        }
        Ok((&self.matrix * DVector::from_column_slice(v)).as_slice().to_vec())
    }

    /// Adjoint with respect to the weighted inner products of the two spaces.
    pub fn adjoint(&self) -> LinearMap {
        let ratio = self.codomain.weight() / self.domain.weight();
        LinearMap {
            domain: self.codomain,
            codomain: self.domain,
            matrix: self.matrix.transpose() * ratio,
        }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &LinearMap) -> Result<LinearMap> {
        if inner.nrows() != self.ncols() {
            return Err(Error::DimensionMismatch("composition of incompatible maps".into()));
        }
        Ok(LinearMap {
            domain: inner.domain,
            codomain: self.codomain,
            matrix: &self.matrix * &inner.matrix,
        })
    }

    pub fn nonzeros(&self) -> usize {
        self.matrix.iter().filter(|v| **v != 0.0).count()
    }

    /// Nonzero entries as `(row, col, value)`, row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                let v = self.matrix[(i, j)];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// Sparse-triplet text export: a `# rows cols nnz` header then `row col value` lines.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        let t = self.triplets();
        writeln!(w, "# {} {} {}", self.nrows(), self.ncols(), t.len())?;
        for (i, j, v) in t {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// Stack maps with a common domain vertically.
pub fn stack_rows(maps: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let ncols = maps.first().map_or(0, |m| m.ncols());
    let nrows: usize = maps.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for m in maps {
        out.view_mut((r, 0), (m.nrows(), ncols)).copy_from(*m);
        r += m.nrows();
    }
    out
}

fn grad_matrix(lat: &Lattice) -> DMatrix<f64> {
    let inv = 1.0 / lat.spec().spacing();
    let mut m = DMatrix::zeros(lat.num_bonds(), lat.num_sites());
    for b in 0..lat.num_bonds() {
        let (u, v) = lat.bond_endpoints(b);
        m[(b, v)] += inv;
        m[(b, u)] -= inv;
    }
    m
}

fn ext_d_matrix(lat: &Lattice) -> DMatrix<f64> {
    let inv = 1.0 / lat.spec().spacing();
    let mut m = DMatrix::zeros(lat.num_plaquettes(), lat.num_bonds());
    for p in 0..lat.num_plaquettes() {
        for (b, s) in lat.plaquette_boundary(p) {
            m[(p, b)] += s as f64 * inv;
        }
    }
    m
}

/// `∂ : scalars -> bonds`, `(∂λ)(x, x+ηe_μ) = (λ(x+ηe_μ) − λ(x))/η`.
pub fn grad_map(lat: &Lattice) -> LinearMap {
    LinearMap { domain: Space::sites(lat), codomain: Space::bonds(lat), matrix: grad_matrix(lat) }
}

/// `d : bonds -> plaquettes`, `dA(p) = η^{-1} Σ_{b∈∂p} A(b)`.
pub fn ext_d_map(lat: &Lattice) -> LinearMap {
    LinearMap {
        domain: Space::bonds(lat),
        codomain: Space::plaquettes(lat),
        matrix: ext_d_matrix(lat),
    }
}

/// Adjoint of `∂` (from bonds) or of `d` (from plaquettes).
pub fn codiff_map(lat: &Lattice, from: ElementKind) -> Result<LinearMap> {
    match from {
        ElementKind::Bond => Ok(grad_map(lat).adjoint()),
        ElementKind::Plaquette => Ok(ext_d_map(lat).adjoint()),
        ElementKind::Site => Err(Error::DimensionMismatch("no codifferential on scalars".into())),
    }
}

/// The lattice Laplacian `Δ = −δ∂` on scalars.
pub fn laplacian_map(lat: &Lattice) -> LinearMap {
    let g = grad_map(lat);
    let mut l = g.adjoint().compose(&g).expect("shapes match");
    l.matrix *= -1.0;
    l
}

pub fn grad(lat: &Lattice, lambda: &ScalarField) -> Result<BondField> {
    lambda.check_on(lat)?;
    let inv = 1.0 / lat.spec().spacing();
    let values = (0..lat.num_bonds())
        .map(|b| {
            let (u, v) = lat.bond_endpoints(b);
            (lambda.values[v] - lambda.values[u]) * inv
        })
        .collect();
    Ok(BondField { spec: *lat.spec(), values })
}

pub fn ext_d(lat: &Lattice, a: &BondField) -> Result<PlaquetteField> {
    a.check_on(lat)?;
    let inv = 1.0 / lat.spec().spacing();
    let values = (0..lat.num_plaquettes())
        .map(|p| lat.plaquette_boundary(p).iter().map(|&(b, s)| a.oriented(b, s)).sum::<f64>() * inv)
        .collect();
    Ok(PlaquetteField { spec: *lat.spec(), values })
}

/// Divergence `δA` of a bond field, the adjoint of [`grad`].
pub fn codiff_bond(lat: &Lattice, a: &BondField) -> Result<ScalarField> {
    a.check_on(lat)?;
    let inv = 1.0 / lat.spec().spacing();
    let mut values = vec![0.0; lat.num_sites()];
    for (b, v) in a.values.iter().enumerate() {
        let (u, w) = lat.bond_endpoints(b);
        values[w] += v * inv;
        values[u] -= v * inv;
    }
    Ok(ScalarField { spec: *lat.spec(), values })
}

/// `δP` of a plaquette field, the adjoint of [`ext_d`].
pub fn codiff_plaquette(lat: &Lattice, p: &PlaquetteField) -> Result<BondField> {
    p.check_on(lat)?;
    let inv = 1.0 / lat.spec().spacing();
    let mut values = vec![0.0; lat.num_bonds()];
    for (i, v) in p.values.iter().enumerate() {
        for (b, s) in lat.plaquette_boundary(i) {
            values[b] += s as f64 * v * inv;
        }
    }
    Ok(BondField { spec: *lat.spec(), values })
}

/// `A^λ = A − ∂λ`.
pub fn gauge_transform(lat: &Lattice, a: &BondField, lambda: &ScalarField) -> Result<BondField> {
    a.check_on(lat)?;
    let g = grad(lat, lambda)?;
    let values = a.values.iter().zip(&g.values).map(|(x, y)| x - y).collect();
    Ok(BondField { spec: *lat.spec(), values })
}

/// `A(Γ) = Σ_{b∈Γ} A(b)`, multiplied by `η` when `weighted`.
pub fn path_sum(lat: &Lattice, a: &BondField, path: &Path, weighted: bool) -> Result<f64> {
    a.check_on(lat)?;
    let s: f64 = path.steps.iter().map(|&(b, s)| a.oriented(b, s)).sum();
    Ok(if weighted { s * lat.spec().spacing() } else { s })
}

/// `γ = (dim − 2)/2`, the field scaling exponent that keeps `‖dA‖²` invariant.
pub fn scaling_exponent(dim: usize) -> f64 {
    (dim as f64 - 2.0) / 2.0
}

/// `A_{L^{-n}}(b) = L^{nγ} A(L^n b)`: same ordinals on the lattice with spacing
/// `L^{-n}η` and the same number of sites. Negative `n` coarsens.
pub fn scale_field(a: &BondField, n: i32) -> BondField {
    let spec = a.spec.rescaled(-n);
    let f = (a.spec.block_side as f64).powf(n as f64 * scaling_exponent(a.spec.dim));
    BondField { spec, values: a.values.iter().map(|v| v * f).collect() }
}

/// The inverse of [`scale_field`].
pub fn unscale_field(a: &BondField, n: i32) -> BondField {
    scale_field(a, -n)
}

/// `⟨f, g⟩ = η^dim Σ f·g`.
pub fn inner(spec: &LatticeSpec, f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::DimensionMismatch("inner product of different lengths".into()));
    }
    Ok(spec.volume_weight() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
}

pub fn inner_bond(a: &BondField, b: &BondField) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::DimensionMismatch("bond fields on different lattices".into()));
    }
    inner(&a.spec, &a.values, &b.values)
}

pub fn inner_plaquette(a: &PlaquetteField, b: &PlaquetteField) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::DimensionMismatch("plaquette fields on different lattices".into()));
    }
    inner(&a.spec, &a.values, &b.values)
}

pub fn inner_scalar(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::DimensionMismatch("scalar fields on different lattices".into()));
    }
    inner(&a.spec, &a.values, &b.values)
}

/// Operators that can be assembled as explicit matrices on a fine lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    Grad,
    ExtD,
    CodiffBond,
    CodiffPlaquette,
    Laplacian,
    /// Scalar block average over `n` levels.
    QScalar(usize),
    /// Bond block average over `n` levels.
    QBond(usize),
    /// Path-averaged axial map against the level-`n` blocks.
    Tau(usize),
    /// Identity-ordered axial map against the level-`n` blocks.
    Tau0(usize),
    /// Toron average on a torus.
    QToron,
}

/// Thread-safe cache of assembled operators keyed by lattice and operator.
#[derive(Default)]
pub struct OperatorCache {
    maps: Mutex<HashMap<(LatticeSpec, Operator), Arc<LinearMap>>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, lat: &Lattice, op: Operator) -> Result<Arc<LinearMap>> {
        let key = (*lat.spec(), op);
        if let Some(m) = self.maps.lock().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(as_matrix(lat, op)?);
        self.maps.lock().expect("cache lock").insert(key, m.clone());
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.maps.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn as_matrix(lat: &Lattice, op: Operator) -> Result<LinearMap> {
    use crate::averaging;
    Ok(match op {
        Operator::Grad => grad_map(lat),
        Operator::ExtD => ext_d_map(lat),
        Operator::CodiffBond => codiff_map(lat, ElementKind::Bond)?,
        Operator::CodiffPlaquette => codiff_map(lat, ElementKind::Plaquette)?,
        Operator::Laplacian => laplacian_map(lat),
        Operator::QScalar(n) => averaging::q_scalar_map(lat, n)?,
        Operator::QBond(n) => averaging::q_bond_map(lat, n)?,
        Operator::Tau(n) => averaging::tau_map(lat, n)?,
        Operator::Tau0(n) => averaging::tau0_map(lat, n)?,
        Operator::QToron => averaging::q_toron_map(lat)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Site;

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn grad_of_indicator() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        let x0 = lat.site_index(&Site::origin()).unwrap();
        let mut l = ScalarField::zeros(&lat);
        l.values[x0] = 1.0;
        let g = grad(&lat, &l).unwrap();
        for b in 0..lat.num_bonds() {
            let (u, v) = lat.bond_endpoints(b);
            let want = if v == x0 { 1.0 } else if u == x0 { -1.0 } else { 0.0 };
            assert_eq!(g.values[b], want);
        }
    }

    #[test]
    fn d_of_grad_vanishes() {
        for spec in [LatticeSpec::torus(3, 3, 1, 0), LatticeSpec::unit_cube(2, 5)] {
            let lat = Lattice::new(spec).unwrap();
            let prod = &ext_d_map(&lat).matrix * &grad_map(&lat).matrix;
            assert_eq!(prod.amax(), 0.0);
            assert!(grad_map(&lat).triplets().len() == 2 * lat.num_bonds());
        }
    }

    #[test]
    fn single_bond_field_strength() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 0, 1)).unwrap();
        let mut a = BondField::zeros(&lat);
        a.values[5] = 1.0;
        let da = ext_d(&lat, &a).unwrap();
        let nz: Vec<_> = da.values.iter().filter(|v| **v != 0.0).collect();
        assert_eq!(nz.len(), 4);
        assert!(nz.iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn stokes_on_torus() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        let a = BondField::from_values(&lat, lcg(3, lat.num_bonds())).unwrap();
        let total: f64 = ext_d(&lat, &a).unwrap().values.iter().sum();
        assert!(total.abs() < 1e-13);
    }

    #[test]
    fn adjointness_weighted() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 1, 1)).unwrap();
        let a = BondField::from_values(&lat, lcg(1, lat.num_bonds())).unwrap();
        let p = PlaquetteField::from_values(&lat, lcg(2, lat.num_plaquettes())).unwrap();
        let lhs = inner_plaquette(&ext_d(&lat, &a).unwrap(), &p).unwrap();
        let rhs = inner_bond(&a, &codiff_plaquette(&lat, &p).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn laplacian_is_divided_difference() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 1, 0)).unwrap();
        let lap = laplacian_map(&lat);
        let eta2 = lat.spec().spacing().powi(2);
        for s in 0..lat.num_sites() {
            assert!((lap.matrix[(s, s)] + 4.0 / eta2).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_path_sum_telescopes() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 1, 1)).unwrap();
        let l = ScalarField::from_values(&lat, lcg(9, lat.num_sites())).unwrap();
        let g = grad(&lat, &l).unwrap();
        let y = Site::origin();
        let x = Site::new(&[1, -1]);
        let p = lat.rectilinear_path(&y, &x, &[0, 1]).unwrap();
        let s = path_sum(&lat, &g, &p, false).unwrap();
        let want = 3.0 * (l.values[p.end] - l.values[p.start]);
        assert!((s - want).abs() < 1e-12);
        let w = path_sum(&lat, &g, &p, true).unwrap();
        assert!((w - want / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_invariance_of_field_strength() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 0, 1)).unwrap();
        let a = BondField::from_values(&lat, lcg(4, lat.num_bonds())).unwrap();
        let l = ScalarField::from_values(&lat, lcg(5, lat.num_sites())).unwrap();
        let da = ext_d(&lat, &a).unwrap();
        let db = ext_d(&lat, &gauge_transform(&lat, &a, &l).unwrap()).unwrap();
        for (x, y) in da.values.iter().zip(&db.values) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn scale_invariant_action() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 0, 1)).unwrap();
        let a = BondField::from_values(&lat, lcg(6, lat.num_bonds())).unwrap();
        let s = scale_field(&a, 1);
        let fine = Lattice::new(s.spec).unwrap();
        assert_eq!(fine.spec().spacing(), 1.0 / 3.0);
        let n0 = ext_d(&lat, &a).unwrap();
        let n1 = ext_d(&fine, &s).unwrap();
        let e0 = inner_plaquette(&n0, &n0).unwrap();
        let e1 = inner_plaquette(&n1, &n1).unwrap();
        assert!((e0 - e1).abs() <= 1e-12 * e0);
        assert!((s.values[0] / a.values[0] - 3f64.sqrt()).abs() < 1e-12);
        let back = unscale_field(&s, 1);
        assert_eq!(back.spec, a.spec);
        assert!(crate::linalg::rel_diff_vec(&back.values, &a.values) < 1e-15);
    }

    #[test]
    fn serialization_round_trip() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        let a = BondField::from_values(&lat, lcg(7, lat.num_bonds())).unwrap();
        let j = a.to_json().unwrap();
        assert!(j.contains("\"L\":3"));
        assert_eq!(BondField::from_json(&j).unwrap(), a);
        let mut buf = Vec::new();
        a.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * lat.num_bonds());
        assert_eq!(BondField::read_binary(&lat, &buf[..]).unwrap(), a);
    }

    #[test]
    fn adjoint_between_spacings() {
        let fine = Lattice::new(LatticeSpec::torus(2, 3, 1, 0)).unwrap();
        let m = LinearMap {
            domain: Space::sites(&fine),
            codomain: Space::plain(2),
            matrix: DMatrix::from_fn(2, fine.num_sites(), |i, j| (i + j) as f64),
        };
        let x = lcg(1, fine.num_sites());
        let y = lcg(2, 2);
        let lhs = m.codomain.weight() * dot(&m.apply(&x).unwrap(), &y);
        let rhs = m.domain.weight() * dot(&x, &m.adjoint().apply(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}
