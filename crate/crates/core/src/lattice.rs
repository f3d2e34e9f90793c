//! Finite lattices: the open cube `B(0)` and the periodic torus.
//!
//! Coordinates are integers in units of the lattice spacing `η = L^{-scale_exp}`.
//! Both boundary types use a fundamental domain centred on the origin, so a
//! site has coordinates in `[-(n-1)/2, (n-1)/2]^dim` where `n` is the number
//! of sites per side. Ordinals are lexicographic in the coordinates (first axis
//! most significant); bonds and plaquettes are ordered by base site, then axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::BondField;

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Torus,
    OpenCube,
}

/// Geometry descriptor. Serialized as `{dim, L, scale_exp, size_exp, boundary}`.
///
/// A torus has `L^(size_exp + scale_exp)` sites per side; an open cube has
/// `L^(size_exp + scale_exp + 1)` so that `size_exp = scale_exp = 0` is the
/// unit cube `B(0)` of side `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dim: usize,
    #[serde(rename = "L")]
    pub block_side: usize,
    pub scale_exp: i32,
    pub size_exp: i32,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn torus(dim: usize, block_side: usize, scale_exp: i32, size_exp: i32) -> Self {
        LatticeSpec { dim, block_side, scale_exp, size_exp, boundary: Boundary::Torus }
    }

    /// The unit cube `B(0)` with `L` sites per side.
    pub fn unit_cube(dim: usize, block_side: usize) -> Self {
        LatticeSpec { dim, block_side, scale_exp: 0, size_exp: 0, boundary: Boundary::OpenCube }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_DIM).contains(&self.dim) {
            return Err(Error::InvalidLattice(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.block_side < 3 || self.block_side.is_multiple_of(2) {
            return Err(Error::InvalidLattice(format!(
                "L must be an odd integer >= 3, got {}",
                self.block_side
            )));
        }
        if self.side_exponent() < 0 {
            return Err(Error::InvalidLattice("lattice has fewer than one site per side".into()));
        }
        Ok(())
    }

    fn side_exponent(&self) -> i32 {
        match self.boundary {
            Boundary::Torus => self.size_exp + self.scale_exp,
            Boundary::OpenCube => self.size_exp + self.scale_exp + 1,
        }
    }

    pub fn sites_per_side(&self) -> usize {
        self.block_side.pow(self.side_exponent().max(0) as u32)
    }

    /// Lattice spacing `η = L^{-scale_exp}`.
    pub fn spacing(&self) -> f64 {
        (self.block_side as f64).powi(-self.scale_exp)
    }

    /// Weight `η^dim` of the inner product on every element kind.
    pub fn volume_weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// The lattice `n` blocking levels coarser: spacing multiplied by `L^n`.
    pub fn coarsened(&self, levels: usize) -> LatticeSpec {
        LatticeSpec { scale_exp: self.scale_exp - levels as i32, ..*self }
    }

    /// Same site structure with spacing multiplied by `L^n` and volume by `L^{n·dim}`.
    pub fn rescaled(&self, n: i32) -> LatticeSpec {
        LatticeSpec { scale_exp: self.scale_exp - n, size_exp: self.size_exp + n, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub coords: [i64; MAX_DIM],
}

impl Site {
    pub fn new(coords: &[i64]) -> Self {
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site { coords: c }
    }

    pub fn origin() -> Self {
        Site { coords: [0; MAX_DIM] }
    }

    pub fn shifted(&self, axis: usize, by: i64) -> Site {
        let mut s = *self;
        s.coords[axis] += by;
        s
    }
}

/// Canonical positively oriented bond `(x, x + η e_axis)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub site: usize,
    pub axis: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Plaquette {
    pub site: usize,
    pub axes: (usize, usize),
}

/// Sequence of oriented bonds; each step is `(bond ordinal, ±1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub start: usize,
    pub end: usize,
    pub steps: Vec<(usize, i8)>,
}

impl Path {
    pub fn is_closed(&self) -> bool {
        self.start == self.end
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Linking bonds `B(y,y')` between neighbouring blocks and the central one.
#[derive(Clone, Debug)]
pub struct LinkingBonds {
    pub axis: usize,
    pub bonds: Vec<usize>,
    pub central: usize,
}

#[derive(Clone, Debug)]
pub struct Lattice {
    spec: LatticeSpec,
    n: usize,
    half: i64,
    n_sites: usize,
    bonds: Vec<Bond>,
    bond_index: Vec<Option<usize>>,
    plaquettes: Vec<Plaquette>,
    plaquette_index: Vec<Option<usize>>,
}

fn axis_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for mu in 0..dim {
        for nu in mu + 1..dim {
            out.push((mu, nu));
        }
    }
    out
}

impl Lattice {
    pub fn new(spec: LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.sites_per_side();
        let dim = spec.dim;
        let n_sites = n.pow(dim as u32);
        let mut lat = Lattice {
            spec,
            n,
            half: ((n - 1) / 2) as i64,
            n_sites,
            bonds: Vec::new(),
            bond_index: vec![None; n_sites * dim],
            plaquettes: Vec::new(),
            plaquette_index: Vec::new(),
        };
        let pairs = axis_pairs(dim);
        lat.plaquette_index = vec![None; n_sites * pairs.len()];
        for s in 0..n_sites {
            for axis in 0..dim {
                if lat.neighbor(s, axis, 1).is_some() {
                    lat.bond_index[s * dim + axis] = Some(lat.bonds.len());
                    lat.bonds.push(Bond { site: s, axis });
                }
            }
            for (pi, &(mu, nu)) in pairs.iter().enumerate() {
                let ok = lat
                    .neighbor(s, mu, 1)
                    .and_then(|a| lat.neighbor(a, nu, 1))
                    .is_some();
                if ok {
                    lat.plaquette_index[s * pairs.len() + pi] = Some(lat.plaquettes.len());
                    lat.plaquettes.push(Plaquette { site: s, axes: (mu, nu) });
                }
            }
        }
        Ok(lat)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn block_side(&self) -> usize {
        self.spec.block_side
    }

    pub fn is_torus(&self) -> bool {
        self.spec.boundary == Boundary::Torus
    }

    pub fn sites_per_side(&self) -> usize {
        self.n
    }

    pub fn num_sites(&self) -> usize {
        self.n_sites
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn num_plaquettes(&self) -> usize {
        self.plaquettes.len()
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    fn wrap(&self, c: i64) -> Option<i64> {
        if self.is_torus() {
            let n = self.n as i64;
            Some((c + self.half).rem_euclid(n) - self.half)
        } else if c.abs() <= self.half {
            Some(c)
        } else {
            None
        }
    }

    pub fn site_index(&self, site: &Site) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..self.dim() {
            let c = self.wrap(site.coords[i])?;
            idx = idx * self.n + (c + self.half) as usize;
        }
        Some(idx)
    }

    pub fn site(&self, index: usize) -> Site {
        let mut coords = [0; MAX_DIM];
        let mut rest = index;
        for i in (0..self.dim()).rev() {
            coords[i] = (rest % self.n) as i64 - self.half;
            rest /= self.n;
        }
        Site { coords }
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.n_sites).map(|i| self.site(i))
    }

    /// Site one step along `axis` in direction `sign`, if it exists.
    pub fn neighbor(&self, site: usize, axis: usize, sign: i64) -> Option<usize> {
        let s = self.site(site).shifted(axis, sign);
        self.site_index(&s)
    }

    pub fn bond_ordinal(&self, site: usize, axis: usize) -> Option<usize> {
        self.bond_index[site * self.dim() + axis]
    }

    /// The oriented bond leaving `site` along `axis` in direction `sign`.
    pub fn oriented_bond(&self, site: usize, axis: usize, sign: i64) -> Option<(usize, i8)> {
        if sign > 0 {
            self.bond_ordinal(site, axis).map(|b| (b, 1))
        } else {
            let back = self.neighbor(site, axis, -1)?;
            self.bond_ordinal(back, axis).map(|b| (b, -1))
        }
    }

    pub fn bond_endpoints(&self, bond: usize) -> (usize, usize) {
        let b = self.bonds[bond];
        (b.site, self.neighbor(b.site, b.axis, 1).expect("bond endpoint"))
    }

    pub fn plaquette_ordinal(&self, site: usize, axes: (usize, usize)) -> Option<usize> {
        let pairs = axis_pairs(self.dim());
        let pi = pairs.iter().position(|&p| p == axes)?;
        self.plaquette_index[site * pairs.len() + pi]
    }

    /// Oriented boundary of a plaquette: the loop `x, x+e_μ, x+e_μ+e_ν, x+e_ν, x`.
    pub fn plaquette_boundary(&self, plaquette: usize) -> [(usize, i8); 4] {
        let p = self.plaquettes[plaquette];
        let (mu, nu) = p.axes;
        let x = p.site;
        let xm = self.neighbor(x, mu, 1).expect("plaquette corner");
        let xn = self.neighbor(x, nu, 1).expect("plaquette corner");
        let b = |s, a| self.bond_ordinal(s, a).expect("plaquette edge");
        [(b(x, mu), 1), (b(xm, nu), 1), (b(xn, mu), -1), (b(x, nu), -1)]
    }

    /// Coarse lattice `levels` blocking steps up (spacing `L^levels η`).
    pub fn coarse_lattice(&self, levels: usize) -> Result<Lattice> {
        let f = self.block_side().pow(levels as u32);
        if !self.n.is_multiple_of(f) {
            return Err(Error::InvalidLattice(format!(
                "{} sites per side cannot be blocked {} times",
                self.n, levels
            )));
        }
        Lattice::new(self.spec.coarsened(levels))
    }

    /// Fine-site ordinal of the coarse site with the given coarse ordinal.
    pub fn coarse_to_fine(&self, coarse: &Lattice, levels: usize, coarse_site: usize) -> usize {
        let f = self.block_side().pow(levels as u32) as i64;
        let mut s = coarse.site(coarse_site);
        for c in s.coords.iter_mut() {
            *c *= f;
        }
        self.site_index(&s).expect("coarse site on fine lattice")
    }

    fn check_coarse_site(&self, y: &Site, levels: usize) -> Result<usize> {
        let f = self.block_side().pow(levels as u32) as i64;
        let idx = self.site_index(y).ok_or_else(|| Error::NotASite(y.coords.to_vec()))?;
        let canon = self.site(idx);
        if canon.coords[..self.dim()].iter().any(|c| c % f != 0) {
            return Err(Error::NotASite(y.coords[..self.dim()].to_vec()));
        }
        Ok(idx)
    }

    /// The `L^{levels·dim}` fine sites of the block of side `L^levels` centred on `y`.
    pub fn block_members(&self, y: &Site, levels: usize) -> Result<Vec<usize>> {
        let yi = self.check_coarse_site(y, levels)?;
        let y = self.site(yi);
        let side = self.block_side().pow(levels as u32) as i64;
        let h = (side - 1) / 2;
        let dim = self.dim();
        let count = (side as usize).pow(dim as u32);
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let mut rest = k;
            let mut s = y;
            for i in (0..dim).rev() {
                s.coords[i] += (rest % side as usize) as i64 - h;
                rest /= side as usize;
            }
            let idx = self.site_index(&s).ok_or_else(|| Error::NotASite(s.coords.to_vec()))?;
            out.push(idx);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Fine sites that are centres of level-`levels` blocks, in coarse canonical order.
    pub fn block_centers(&self, levels: usize) -> Result<Vec<usize>> {
        let coarse = self.coarse_lattice(levels)?;
        Ok((0..coarse.num_sites()).map(|c| self.coarse_to_fine(&coarse, levels, c)).collect())
    }

    /// Rectilinear path from `y` to `x` taking coordinates to their final values
    /// in the axis order `perm`. Does not wrap around a torus.
    pub fn rectilinear_path(&self, y: &Site, x: &Site, perm: &[usize]) -> Result<Path> {
        let start = self.site_index(y).ok_or_else(|| Error::NotASite(y.coords.to_vec()))?;
        let end = self.site_index(x).ok_or_else(|| Error::NotASite(x.coords.to_vec()))?;
        let mut cur = *y;
        let mut steps = Vec::new();
        for &axis in perm {
            while cur.coords[axis] != x.coords[axis] {
                let sign = if x.coords[axis] > cur.coords[axis] { 1 } else { -1 };
                let here = self
                    .site_index(&cur)
                    .ok_or_else(|| Error::NotASite(cur.coords.to_vec()))?;
                let step = self
                    .oriented_bond(here, axis, sign)
                    .ok_or_else(|| Error::NotASite(cur.coords.to_vec()))?;
                steps.push(step);
                cur = cur.shifted(axis, sign);
            }
        }
        Ok(Path { start, end, steps })
    }

    /// One path per axis permutation (a multiset of size `dim!`).
    pub fn path_family(&self, y: &Site, x: &Site) -> Result<Vec<Path>> {
        permutations(self.dim())
            .iter()
            .map(|p| self.rectilinear_path(y, x, p))
            .collect()
    }

    /// Straight path of `len` positive steps along `axis` from `start`; wraps on a torus.
    pub fn straight_path(&self, start: usize, axis: usize, len: usize) -> Result<Path> {
        let mut cur = start;
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let b = self
                .bond_ordinal(cur, axis)
                .ok_or_else(|| Error::NotASite(self.site(cur).coords.to_vec()))?;
            steps.push((b, 1));
            cur = self.neighbor(cur, axis, 1).expect("bond endpoint");
        }
        Ok(Path { start, end: cur, steps })
    }

    /// Closed path winding once around the torus through `x` along `axis`.
    pub fn toron_loop(&self, x: &Site, axis: usize) -> Result<Path> {
        if !self.is_torus() {
            return Err(Error::WrongBoundary { required: "torus" });
        }
        let start = self.site_index(x).ok_or_else(|| Error::NotASite(x.coords.to_vec()))?;
        self.straight_path(start, axis, self.n)
    }

    /// Union of the bonds of the identity-ordered paths `Γ_{0x}`, sorted.
    pub fn axial_tree(&self) -> Result<Vec<usize>> {
        if self.is_torus() {
            return Err(Error::WrongBoundary { required: "open cube" });
        }
        let origin = Site::origin();
        let id: Vec<usize> = (0..self.dim()).collect();
        let mut in_tree = vec![false; self.num_bonds()];
        for x in self.sites() {
            for (b, _) in self.rectilinear_path(&origin, &x, &id)?.steps {
                in_tree[b] = true;
            }
        }
        Ok((0..self.num_bonds()).filter(|&b| in_tree[b]).collect())
    }

    /// Linking bonds from the block at `y` to its neighbour in direction `+axis`.
    pub fn forward_linking_bonds(&self, y: &Site, axis: usize) -> Result<LinkingBonds> {
        let yi = self.check_coarse_site(y, 1)?;
        let y = self.site(yi);
        let h = ((self.block_side() - 1) / 2) as i64;
        let dim = self.dim();
        let side = self.block_side();
        let transverse: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
        let mut bonds = Vec::with_capacity(side.pow(dim as u32 - 1));
        let mut central = None;
        for k in 0..side.pow(transverse.len() as u32) {
            let mut s = y;
            s.coords[axis] += h;
            let mut rest = k;
            let mut is_center = true;
            for &a in transverse.iter().rev() {
                let off = (rest % side) as i64 - h;
                rest /= side;
                s.coords[a] += off;
                is_center &= off == 0;
            }
            let si = self.site_index(&s).ok_or_else(|| Error::NotASite(s.coords.to_vec()))?;
            let b = self
                .bond_ordinal(si, axis)
                .ok_or_else(|| Error::NotASite(s.coords.to_vec()))?;
            bonds.push(b);
            if is_center {
                central = Some(b);
            }
        }
        bonds.sort_unstable();
        Ok(LinkingBonds { axis, bonds, central: central.expect("odd L has a central bond") })
    }

    /// `B(y,y')` for nearest-neighbour block centres `y`, `y'`.
    pub fn linking_bonds(&self, y: &Site, y_prime: &Site) -> Result<LinkingBonds> {
        let yi = self.check_coarse_site(y, 1)?;
        let ypi = self.check_coarse_site(y_prime, 1)?;
        let coarse = self.coarse_lattice(1)?;
        if coarse.sites_per_side() < 3 && self.is_torus() {
            return Err(Error::NotAdjacent);
        }
        let l = self.block_side() as i64;
        for axis in 0..self.dim() {
            for sign in [1i64, -1] {
                let probe = self.site(yi).shifted(axis, sign * l);
                if self.site_index(&probe) == Some(ypi) {
                    let base = if sign > 0 { self.site(yi) } else { self.site(ypi) };
                    return self.forward_linking_bonds(&base, axis);
                }
            }
        }
        Err(Error::NotAdjacent)
    }
}

/// All permutations of `0..n` in lexicographic order, identity first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Signed permutation of the axes fixing the origin: `(r x)_i = signs[i] · x_{perm[i]}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeSymmetry {
    pub perm: Vec<usize>,
    pub signs: Vec<i64>,
}

impl LatticeSymmetry {
    pub fn identity(dim: usize) -> Self {
        LatticeSymmetry { perm: (0..dim).collect(), signs: vec![1; dim] }
    }

    /// The full hyperoctahedral group, `2^dim · dim!` elements.
    pub fn all(dim: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for perm in permutations(dim) {
            for mask in 0..(1usize << dim) {
                let signs = (0..dim).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
                out.push(LatticeSymmetry { perm: perm.clone(), signs });
            }
        }
        out
    }

    pub fn matrix(&self) -> Vec<Vec<i64>> {
        let d = self.perm.len();
        let mut m = vec![vec![0; d]; d];
        for i in 0..d {
            m[i][self.perm[i]] = self.signs[i];
        }
        m
    }

    pub fn inverse(&self) -> Self {
        let d = self.perm.len();
        let mut perm = vec![0; d];
        let mut signs = vec![1; d];
        for i in 0..d {
            perm[self.perm[i]] = i;
            signs[self.perm[i]] = self.signs[i];
        }
        LatticeSymmetry { perm, signs }
    }

    pub fn compose(&self, other: &Self) -> Self {
        // (self ∘ other) x
        let d = self.perm.len();
        let perm = (0..d).map(|i| other.perm[self.perm[i]]).collect();
        let signs = (0..d).map(|i| self.signs[i] * other.signs[self.perm[i]]).collect();
        LatticeSymmetry { perm, signs }
    }

    pub fn apply_site(&self, x: &Site) -> Site {
        let mut out = Site::origin();
        for i in 0..self.perm.len() {
            out.coords[i] = self.signs[i] * x.coords[self.perm[i]];
        }
        out
    }

    /// Image of the unit vector `e_axis`: `(axis', sign)` with `r e_axis = sign · e_axis'`.
    pub fn apply_axis(&self, axis: usize) -> (usize, i64) {
        let i = self.perm.iter().position(|&p| p == axis).expect("axis in range");
        (i, self.signs[i])
    }

    /// Oriented image `r b` of the canonical bond `b`.
    pub fn apply_bond(&self, lattice: &Lattice, bond: usize) -> (usize, i8) {
        let b = lattice.bonds()[bond];
        let x = self.apply_site(&lattice.site(b.site));
        let (axis, sign) = self.apply_axis(b.axis);
        let xi = lattice.site_index(&x).expect("symmetry maps lattice to itself");
        lattice.oriented_bond(xi, axis, sign).expect("symmetry maps bonds to bonds")
    }

    pub fn apply_path(&self, lattice: &Lattice, path: &Path) -> Path {
        let start = lattice.site_index(&self.apply_site(&lattice.site(path.start))).unwrap();
        let end = lattice.site_index(&self.apply_site(&lattice.site(path.end))).unwrap();
        let steps = path
            .steps
            .iter()
            .map(|&(b, s)| {
                let (rb, rs) = self.apply_bond(lattice, b);
                (rb, rs * s)
            })
            .collect();
        Path { start, end, steps }
    }
}

/// `A_r(b) = A(r^{-1} b)`, with the orientation sign of `r^{-1} b` applied.
pub fn apply_symmetry(r: &LatticeSymmetry, lattice: &Lattice, a: &BondField) -> Result<BondField> {
    if a.values.len() != lattice.num_bonds() {
        return Err(Error::DimensionMismatch("bond field does not match lattice".into()));
    }
    let inv = r.inverse();
    let values = (0..lattice.num_bonds())
        .map(|b| {
            let (src, s) = inv.apply_bond(lattice, b);
            s as f64 * a.values[src]
        })
        .collect();
    Ok(BondField { spec: *lattice.spec(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_cube_counts() {
        let lat = Lattice::new(LatticeSpec::unit_cube(2, 5)).unwrap();
        assert_eq!((lat.num_sites(), lat.num_bonds(), lat.num_plaquettes()), (25, 40, 16));
    }

    #[test]
    fn torus_counts() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 0, 1)).unwrap();
        assert_eq!((lat.num_sites(), lat.num_bonds(), lat.num_plaquettes()), (27, 81, 81));
    }

    #[test]
    fn rejects_even_or_bad_dim() {
        assert!(Lattice::new(LatticeSpec::unit_cube(2, 4)).is_err());
        assert!(Lattice::new(LatticeSpec::unit_cube(4, 3)).is_err());
        assert!(Lattice::new(LatticeSpec::unit_cube(1, 3)).is_err());
    }

    #[test]
    fn block_members_examples() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 2)).unwrap();
        let b = lat.block_members(&Site::origin(), 1).unwrap();
        let mut coords: Vec<_> = b.iter().map(|&s| lat.site(s).coords).collect();
        coords.sort();
        let mut want = Vec::new();
        for i in -1..=1 {
            for j in -1..=1 {
                want.push([i, j, 0]);
            }
        }
        assert_eq!(coords, want);
        assert_eq!(lat.block_members(&Site::new(&[1, 0]), 0).unwrap().len(), 1);
        assert!(lat.block_members(&Site::new(&[1, 0]), 1).is_err());

        let lat3 = Lattice::new(LatticeSpec::torus(3, 3, 0, 2)).unwrap();
        assert_eq!(lat3.block_members(&Site::origin(), 2).unwrap().len(), 729);
    }

    #[test]
    fn blocks_partition() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 1, 1)).unwrap();
        for levels in 0..=2 {
            let mut seen = vec![0; lat.num_sites()];
            for y in lat.block_centers(levels).unwrap() {
                for s in lat.block_members(&lat.site(y), levels).unwrap() {
                    seen[s] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn rectilinear_paths() {
        let lat = Lattice::new(LatticeSpec::unit_cube(3, 5)).unwrap();
        let x = Site::new(&[2, -1, 1]);
        let p = lat.rectilinear_path(&Site::origin(), &x, &[0, 1, 2]).unwrap();
        assert_eq!(p.len(), 4);
        // passes through (x1,0,0) and (x1,x2,0)
        let (a, _) = lat.bond_endpoints(p.steps[1].0);
        assert_eq!(lat.site(a).coords, [1, 0, 0]);
        let (b_, _) = lat.bond_endpoints(p.steps[2].0);
        assert_eq!(lat.site(b_).coords, [2, -1, 0]);
        assert!(lat.rectilinear_path(&x, &x, &[0, 1, 2]).unwrap().is_empty());

        let lat2 = Lattice::new(LatticeSpec::unit_cube(2, 3)).unwrap();
        let p = lat2.rectilinear_path(&Site::origin(), &Site::new(&[1, 1]), &[1, 0]).unwrap();
        let first = lat2.bonds()[p.steps[0].0];
        assert_eq!(first.axis, 1);
        assert_eq!(lat2.site(lat2.bond_endpoints(p.steps[0].0).1).coords, [0, 1, 0]);
    }

    #[test]
    fn path_family_sizes() {
        let lat = Lattice::new(LatticeSpec::unit_cube(2, 3)).unwrap();
        let f = lat.path_family(&Site::origin(), &Site::new(&[1, 1])).unwrap();
        assert_eq!(f.len(), 2);
        assert_ne!(f[0], f[1]);
        let lat3 = Lattice::new(LatticeSpec::unit_cube(3, 3)).unwrap();
        assert_eq!(lat3.path_family(&Site::origin(), &Site::new(&[1, 1, 1])).unwrap().len(), 6);
        let axis = lat3.path_family(&Site::origin(), &Site::new(&[0, 1, 0])).unwrap();
        assert_eq!(axis.len(), 6);
        assert!(axis.iter().all(|p| *p == axis[0]));
    }

    #[test]
    fn toron_loops() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        let l = lat.toron_loop(&Site::origin(), 0).unwrap();
        assert_eq!(l.len(), 3);
        assert!(l.is_closed());
        let lat3 = Lattice::new(LatticeSpec::torus(3, 3, 0, 1)).unwrap();
        let a = lat3.toron_loop(&Site::origin(), 1).unwrap();
        let b = lat3.toron_loop(&Site::new(&[1, 0, 0]), 1).unwrap();
        assert!(a.steps.iter().all(|s| !b.steps.contains(s)));
        let cube = Lattice::new(LatticeSpec::unit_cube(2, 3)).unwrap();
        assert!(cube.toron_loop(&Site::origin(), 0).is_err());
    }

    fn is_spanning_tree(lat: &Lattice, tree: &[usize]) -> bool {
        // union-find acyclicity + size
        let mut parent: Vec<usize> = (0..lat.num_sites()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &b in tree {
            let (u, v) = lat.bond_endpoints(b);
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru == rv {
                return false;
            }
            parent[ru] = rv;
        }
        tree.len() == lat.num_sites() - 1
    }

    #[test]
    fn axial_tree_is_comb() {
        let lat = Lattice::new(LatticeSpec::unit_cube(2, 5)).unwrap();
        let t = lat.axial_tree().unwrap();
        assert_eq!(t.len(), 24);
        assert!(is_spanning_tree(&lat, &t));
        // x1-axis row plus all lines along x2
        for &b in &t {
            let bond = lat.bonds()[b];
            if bond.axis == 0 {
                assert_eq!(lat.site(bond.site).coords[1], 0);
            }
        }
        assert_eq!(t.iter().filter(|&&b| lat.bonds()[b].axis == 1).count(), 20);

        let lat3 = Lattice::new(LatticeSpec::unit_cube(3, 3)).unwrap();
        let t3 = lat3.axial_tree().unwrap();
        assert_eq!(t3.len(), 26);
        assert!(is_spanning_tree(&lat3, &t3));
        let torus = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        assert!(torus.axial_tree().is_err());
    }

    #[test]
    fn linking_bonds_partition() {
        for dim in [2, 3] {
            let lat = Lattice::new(LatticeSpec::torus(dim, 3, 0, 2)).unwrap();
            let lb = lat.linking_bonds(&Site::origin(), &Site::new(&[3])).unwrap();
            assert_eq!(lb.bonds.len(), 3usize.pow(dim as u32 - 1));
            let c = lat.bonds()[lb.central];
            let mut want = Site::origin();
            want.coords[0] = 1;
            assert_eq!(lat.site(c.site), want);
            // reversed order gives the same set
            let back = lat.linking_bonds(&Site::new(&[3]), &Site::origin()).unwrap();
            assert_eq!(back.bonds, lb.bonds);

            let mut count = vec![0; lat.num_bonds()];
            let centers = lat.block_centers(1).unwrap();
            for &y in &centers {
                let members = lat.block_members(&lat.site(y), 1).unwrap();
                for (bi, b) in lat.bonds().iter().enumerate() {
                    let (u, v) = lat.bond_endpoints(bi);
                    let _ = b;
                    if members.binary_search(&u).is_ok() && members.binary_search(&v).is_ok() {
                        count[bi] += 1;
                    }
                }
                for axis in 0..dim {
                    for b in lat.forward_linking_bonds(&lat.site(y), axis).unwrap().bonds {
                        count[b] += 1;
                    }
                }
            }
            assert!(count.iter().all(|&c| c == 1));
        }
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 2)).unwrap();
        assert!(lat.linking_bonds(&Site::origin(), &Site::new(&[3, 3])).is_err());
    }

    #[test]
    fn symmetry_group() {
        let g = LatticeSymmetry::all(3);
        assert_eq!(g.len(), 48);
        for r in &g {
            let id = r.compose(&r.inverse());
            assert_eq!(id, LatticeSymmetry::identity(3));
        }
    }

    #[test]
    fn path_family_covariance() {
        // r G(0,x) = G(0, r x) as multisets of oriented bond sequences' bond sets
        let lat = Lattice::new(LatticeSpec::unit_cube(3, 3)).unwrap();
        for r in LatticeSymmetry::all(3) {
            for x in lat.sites() {
                let fam = lat.path_family(&Site::origin(), &x).unwrap();
                let rx = r.apply_site(&x);
                let target = lat.path_family(&Site::origin(), &rx).unwrap();
                let key = |p: &Path| {
                    let mut v = p.steps.clone();
                    v.sort();
                    v
                };
                let mut a: Vec<_> = fam.iter().map(|p| key(&r.apply_path(&lat, p))).collect();
                let mut b: Vec<_> = target.iter().map(key).collect();
                a.sort();
                b.sort();
                assert_eq!(a, b);
            }
        }
    }
}
