//! Averaging and gauge-fixing operators: scalar and bond block averages, toron
//! averages, the axial maps, the hierarchical constraint stack, the scalar
//! recovery operator and the fluctuation parametrization.

use std::io::Write;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{stack_rows, BondField, LinearMap, ScalarField, Space};
use crate::lattice::{permutations, Lattice};
use crate::linalg::{kernel_basis, lu_solve, RANK_TOL};

fn lpow(lat: &Lattice, e: usize) -> usize {
    lat.block_side().pow(e as u32)
}

/// Dense matrix from entries produced by a row visitor.
fn dense(nrows: usize, ncols: usize, visit: impl FnOnce(&mut dyn FnMut(usize, usize, f64)) -> Result<()>) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(nrows, ncols);
    visit(&mut |r, c, v| m[(r, c)] += v)?;
    Ok(m)
}

/// Matrix-free application of the entries produced by a row visitor.
fn apply(nrows: usize, x: &[f64], visit: impl FnOnce(&mut dyn FnMut(usize, usize, f64)) -> Result<()>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; nrows];
    visit(&mut |r, c, v| out[r] += v * x[c])?;
    Ok(out)
}

fn visit_q_scalar(lat: &Lattice, coarse: &Lattice, levels: usize, f: &mut dyn FnMut(usize, usize, f64)) -> Result<()> {
    let w = 1.0 / lpow(lat, levels * lat.dim()) as f64;
    for c in 0..coarse.num_sites() {
        let y = lat.site(lat.coarse_to_fine(coarse, levels, c));
        for x in lat.block_members(&y, levels)? {
            f(c, x, w);
        }
    }
    Ok(())
}

/// `Q_n`: scalar block average over `B^n(y)` with weight `L^{-dim·n}`.
pub fn q_scalar_map(lat: &Lattice, levels: usize) -> Result<LinearMap> {
    let coarse = lat.coarse_lattice(levels)?;
    let m = dense(coarse.num_sites(), lat.num_sites(), |f| visit_q_scalar(lat, &coarse, levels, f))?;
    LinearMap::new(Space::sites(lat), Space::sites(&coarse), m)
}

pub fn q_scalar(lat: &Lattice, lambda: &ScalarField, levels: usize) -> Result<ScalarField> {
    lambda.check_on(lat)?;
    let coarse = lat.coarse_lattice(levels)?;
    let v = apply(coarse.num_sites(), &lambda.values, |f| visit_q_scalar(lat, &coarse, levels, f))?;
    ScalarField::from_values(&coarse, v)
}

/// `Q_n^*`, the weighted adjoint of [`q_scalar`]: the block value copied to every member.
pub fn q_scalar_adjoint(lat: &Lattice, mu: &ScalarField, levels: usize) -> Result<ScalarField> {
    let coarse = lat.coarse_lattice(levels)?;
    mu.check_on(&coarse)?;
    let ratio = coarse.spec().volume_weight() / lat.spec().volume_weight();
    let mut out = vec![0.0; lat.num_sites()];
    visit_q_scalar(lat, &coarse, levels, &mut |c, x, w| out[x] += ratio * w * mu.values[c])?;
    ScalarField::from_values(lat, out)
}

fn visit_q_bond(lat: &Lattice, coarse: &Lattice, levels: usize, f: &mut dyn FnMut(usize, usize, f64)) -> Result<()> {
    let len = lpow(lat, levels);
    let w = 1.0 / lpow(lat, levels * (lat.dim() + 1)) as f64;
    for (cb, bond) in coarse.bonds().iter().enumerate() {
        let y = lat.site(lat.coarse_to_fine(coarse, levels, bond.site));
        for x in lat.block_members(&y, levels)? {
            for (b, s) in lat.straight_path(x, bond.axis, len)?.steps {
                f(cb, b, w * s as f64);
            }
        }
    }
    Ok(())
}

/// `𝒬_n`: for each coarse bond `(y, y + L^n η e_μ)`, the average with weight
/// `L^{-(dim+1)n}` of the unweighted sums along the straight paths of length
/// `L^n` starting at the sites of `B^n(y)`.
pub fn q_bond_map(lat: &Lattice, levels: usize) -> Result<LinearMap> {
    let coarse = lat.coarse_lattice(levels)?;
    let m = dense(coarse.num_bonds(), lat.num_bonds(), |f| visit_q_bond(lat, &coarse, levels, f))?;
    LinearMap::new(Space::bonds(lat), Space::bonds(&coarse), m)
}

pub fn q_bond(lat: &Lattice, a: &BondField, levels: usize) -> Result<BondField> {
    a.check_on(lat)?;
    let coarse = lat.coarse_lattice(levels)?;
    let v = apply(coarse.num_bonds(), &a.values, |f| visit_q_bond(lat, &coarse, levels, f))?;
    BondField::from_values(&coarse, v)
}

/// `𝒬•`: component `μ` is the site average of the toron-loop sums in direction `μ`.
pub fn q_toron_map(lat: &Lattice) -> Result<LinearMap> {
    if !lat.is_torus() {
        return Err(Error::WrongBoundary { required: "torus" });
    }
    let w = 1.0 / lat.num_sites() as f64;
    let mut m = DMatrix::zeros(lat.dim(), lat.num_bonds());
    for mu in 0..lat.dim() {
        for x in lat.sites() {
            for (b, s) in lat.toron_loop(&x, mu)?.steps {
                m[(mu, b)] += w * s as f64;
            }
        }
    }
    LinearMap::new(Space::bonds(lat), Space::plain(lat.dim()), m)
}

pub fn q_toron(lat: &Lattice, a: &BondField) -> Result<Vec<f64>> {
    q_toron_map(lat)?.apply(&a.values)
}

/// `𝒬•_n = 𝒬• ∘ 𝒬_n`, the toron average taken after `n` blocking levels.
pub fn q_toron_after(lat: &Lattice, levels: usize) -> Result<LinearMap> {
    let q = if levels == 0 {
        LinearMap::identity(Space::bonds(lat))
    } else {
        q_bond_map(lat, levels)?
    };
    let coarse = lat.coarse_lattice(levels)?;
    q_toron_map(&coarse)?.compose(&q)
}

/// Row labels `(y, x)` of the axial maps: block centre then non-centre member.
pub fn tau_rows(lat: &Lattice, levels: usize) -> Result<Vec<(usize, usize)>> {
    let mut rows = Vec::new();
    for y in lat.block_centers(levels)? {
        for x in lat.block_members(&lat.site(y), levels)? {
            if x != y {
                rows.push((y, x));
            }
        }
    }
    Ok(rows)
}

fn visit_axial(lat: &Lattice, rows: &[(usize, usize)], perms: &[Vec<usize>], f: &mut dyn FnMut(usize, usize, f64)) -> Result<()> {
    let w = 1.0 / perms.len() as f64;
    for (r, &(y, x)) in rows.iter().enumerate() {
        let (ys, xs) = (lat.site(y), lat.site(x));
        for p in perms {
            for (b, s) in lat.rectilinear_path(&ys, &xs, p)?.steps {
                f(r, b, w * s as f64);
            }
        }
    }
    Ok(())
}

fn axial_map(lat: &Lattice, levels: usize, perms: &[Vec<usize>]) -> Result<LinearMap> {
    let rows = tau_rows(lat, levels)?;
    let m = dense(rows.len(), lat.num_bonds(), |f| visit_axial(lat, &rows, perms, f))?;
    LinearMap::new(Space::bonds(lat), Space::plain(rows.len()), m)
}

/// `τ`: for each block and non-centre member, the average over the `dim!`
/// rectilinear paths from the centre of the unweighted bond sums.
pub fn tau_map(lat: &Lattice, levels: usize) -> Result<LinearMap> {
    axial_map(lat, levels, &permutations(lat.dim()))
}

/// `τ⁰`: as [`tau_map`] with only the identity-ordered path.
pub fn tau0_map(lat: &Lattice, levels: usize) -> Result<LinearMap> {
    axial_map(lat, levels, &[(0..lat.dim()).collect()])
}

/// `τA` in the row order of [`tau_rows`], without assembling the matrix.
pub fn tau(lat: &Lattice, a: &BondField, levels: usize) -> Result<Vec<f64>> {
    a.check_on(lat)?;
    let rows = tau_rows(lat, levels)?;
    apply(rows.len(), &a.values, |f| visit_axial(lat, &rows, &permutations(lat.dim()), f))
}

/// The hierarchical axial constraints `𝒜 ↦ (τ𝒬_j𝒜)_{j<k}`.
#[derive(Clone, Debug)]
pub struct ConstraintStack {
    pub levels: Vec<LinearMap>,
    pub matrix: DMatrix<f64>,
}

impl ConstraintStack {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn level_rows(&self) -> Vec<usize> {
        self.levels.iter().map(|m| m.nrows()).collect()
    }

    pub fn write_triplets<W: Write>(&self, w: W) -> Result<()> {
        let dom = self.levels.first().map_or(Space::plain(self.matrix.ncols()), |m| m.domain);
        LinearMap { domain: dom, codomain: Space::plain(self.rows()), matrix: self.matrix.clone() }
            .write_triplets(w)
    }
}

pub fn axial_stack(lat: &Lattice, k: usize) -> Result<ConstraintStack> {
    let mut levels = Vec::with_capacity(k);
    for j in 0..k {
        let coarse = lat.coarse_lattice(j)?;
        let t = tau_map(&coarse, 1)?;
        let map = if j == 0 { t } else { t.compose(&q_bond_map(lat, j)?)? };
        levels.push(map);
    }
    let mats: Vec<&DMatrix<f64>> = levels.iter().map(|m| &m.matrix).collect();
    let matrix = if mats.is_empty() { DMatrix::zeros(0, lat.num_bonds()) } else { stack_rows(&mats) };
    Ok(ConstraintStack { levels, matrix })
}

/// `𝓜`: the scalar `μ` with `τ(Z + ∂μ) = 0` off block centres and `Qμ = 0`.
pub fn m_operator_map(lat: &Lattice) -> Result<LinearMap> {
    let t = tau_map(lat, 1)?;
    let rows = tau_rows(lat, 1)?;
    let eta = lat.spec().spacing();
    let w = 1.0 / lpow(lat, lat.dim()) as f64;
    let mut m = DMatrix::zeros(lat.num_sites(), lat.num_bonds());
    for (r, &(y, x)) in rows.iter().enumerate() {
        let row = t.matrix.row(r).clone_owned();
        // μ(y) = η L^{-d} Σ_{x'} τZ(y,x');  μ(x) = μ(y) − η τZ(y,x)
        m.row_mut(x).add_assign(&(&row * -eta));
        m.row_mut(y).add_assign(&(&row * (eta * w)));
    }
    // add μ(y) to every non-centre member
    for &(y, x) in &rows {
        let my = m.row(y).clone_owned();
        m.row_mut(x).add_assign(&my);
    }
    LinearMap::new(Space::bonds(lat), Space::sites(lat), m)
}

pub fn m_operator(lat: &Lattice, z: &BondField) -> Result<ScalarField> {
    let rows = tau_rows(lat, 1)?;
    let tz = tau(lat, z, 1)?;
    let eta = lat.spec().spacing();
    let w = 1.0 / lpow(lat, lat.dim()) as f64;
    let mut mu = vec![0.0; lat.num_sites()];
    for (&(y, _), t) in rows.iter().zip(&tz) {
        mu[y] += eta * w * t;
    }
    for (&(y, x), t) in rows.iter().zip(&tz) {
        mu[x] = mu[y] - eta * t;
    }
    ScalarField::from_values(lat, mu)
}

/// Split of the bonds of a lattice with one blocking level into in-block bonds
/// and linking bonds, with one central linking bond per coarse bond.
#[derive(Clone, Debug)]
pub struct FluctuationSplit {
    pub in_block: Vec<usize>,
    pub linking: Vec<usize>,
    /// Linking bonds other than the central ones.
    pub noncentral: Vec<usize>,
    /// Central bond of each coarse bond, indexed by coarse bond ordinal.
    pub central: Vec<usize>,
    /// Diagonal 0/1 map that zeroes exactly the central bonds.
    pub chi_star: LinearMap,
}

pub fn fluctuation_split(lat: &Lattice) -> Result<FluctuationSplit> {
    let coarse = lat.coarse_lattice(1)?;
    let mut is_linking = vec![false; lat.num_bonds()];
    let mut central = Vec::with_capacity(coarse.num_bonds());
    for bond in coarse.bonds() {
        let y = lat.site(lat.coarse_to_fine(&coarse, 1, bond.site));
        let lb = lat.forward_linking_bonds(&y, bond.axis)?;
        for &b in &lb.bonds {
            if is_linking[b] {
                return Err(Error::InvalidLattice("linking bond sets overlap".into()));
            }
            is_linking[b] = true;
        }
        central.push(lb.central);
    }
    let mut is_central = vec![false; lat.num_bonds()];
    for &c in &central {
        is_central[c] = true;
    }
    let in_block = (0..lat.num_bonds()).filter(|&b| !is_linking[b]).collect();
    let linking = (0..lat.num_bonds()).filter(|&b| is_linking[b]).collect();
    let noncentral = (0..lat.num_bonds()).filter(|&b| is_linking[b] && !is_central[b]).collect();
    let diag = DVector::from_iterator(
        lat.num_bonds(),
        (0..lat.num_bonds()).map(|b| if is_central[b] { 0.0 } else { 1.0 }),
    );
    let chi_star = LinearMap::new(Space::bonds(lat), Space::bonds(lat), DMatrix::from_diagonal(&diag))?;
    Ok(FluctuationSplit { in_block, linking, noncentral, central, chi_star })
}

/// The fluctuation parametrization `Z = C Z̃`: `Z̃₁` in an orthonormal basis of
/// `ker τ` on the in-block bonds, `Z̃₂` the non-central linking bonds, and the
/// central bonds solved from `𝒬Z = 0`.
#[derive(Clone, Debug)]
pub struct FluctuationParam {
    pub split: FluctuationSplit,
    /// Orthonormal basis of `ker τ` restricted to in-block bonds (rows follow `split.in_block`).
    pub kernel: DMatrix<f64>,
    /// `S`: central values from the full bond vector with central entries ignored.
    pub s_matrix: DMatrix<f64>,
    /// `C`: bonds × (kernel coordinates, non-central linking values).
    pub c_matrix: DMatrix<f64>,
    tau: DMatrix<f64>,
}

impl FluctuationParam {
    pub fn new(lat: &Lattice) -> Result<Self> {
        let split = fluctuation_split(lat)?;
        let q = q_bond_map(lat, 1)?.matrix;
        let t = tau_map(lat, 1)?.matrix;
        let nb = lat.num_bonds();

        let qc = DMatrix::from_fn(q.nrows(), split.central.len(), |i, j| q[(i, split.central[j])]);
        if qc.diagonal().iter().any(|v| *v == 0.0) {
            return Err(Error::SingularOperator("central bond has zero averaging weight".into()));
        }
        let mut q_rest = q.clone();
        for &c in &split.central {
            q_rest.column_mut(c).fill(0.0);
        }
        let s_matrix = -lu_solve(&qc, &q_rest, "central-bond system")?;

        let t_in = DMatrix::from_fn(t.nrows(), split.in_block.len(), |i, j| t[(i, split.in_block[j])]);
        let kernel = kernel_basis(&t_in, RANK_TOL);

        let n1 = kernel.ncols();
        let n2 = split.noncentral.len();
        let mut embed = DMatrix::zeros(nb, n1 + n2);
        for (r, &b) in split.in_block.iter().enumerate() {
            for c in 0..n1 {
                embed[(b, c)] = kernel[(r, c)];
            }
        }
        for (c, &b) in split.noncentral.iter().enumerate() {
            embed[(b, n1 + c)] = 1.0;
        }
        let central_rows = &s_matrix * &embed;
        let mut c_matrix = embed;
        for (i, &b) in split.central.iter().enumerate() {
            c_matrix.row_mut(b).copy_from(&central_rows.row(i));
        }
        Ok(FluctuationParam { split, kernel, s_matrix, c_matrix, tau: t })
    }

    pub fn dim(&self) -> usize {
        self.c_matrix.ncols()
    }

    /// Central values making `𝒬Z = 0`; central entries of `z` are ignored.
    pub fn s_solve(&self, z: &[f64]) -> Vec<f64> {
        (&self.s_matrix * DVector::from_column_slice(z)).as_slice().to_vec()
    }

    pub fn apply_coords(&self, coords: &[f64]) -> Vec<f64> {
        (&self.c_matrix * DVector::from_column_slice(coords)).as_slice().to_vec()
    }

    /// `C(Z̃₁, Z̃₂)` with `Z̃₁` given on the in-block bonds and `Z̃₂` on the
    /// non-central linking bonds. `Z̃₁` must lie in `ker τ`.
    pub fn apply_fields(&self, z1: &[f64], z2: &[f64], tol: f64) -> Result<Vec<f64>> {
        if z1.len() != self.split.in_block.len() || z2.len() != self.split.noncentral.len() {
            return Err(Error::DimensionMismatch("fluctuation field sizes".into()));
        }
        let mut full = vec![0.0; self.c_matrix.nrows()];
        for (v, &b) in z1.iter().zip(&self.split.in_block) {
            full[b] = *v;
        }
        let tz = &self.tau * DVector::from_column_slice(&full);
        let scale = z1.iter().map(|v| v.abs()).fold(1.0, f64::max);
        if tz.amax() > tol * scale {
            return Err(Error::Inadmissible(format!("τ Z̃₁ = {:e}, not in ker τ", tz.amax())));
        }
        for (v, &b) in z2.iter().zip(&self.split.noncentral) {
            full[b] = *v;
        }
        let s = self.s_solve(&full);
        for (v, &b) in s.iter().zip(&self.split.central) {
            full[b] = *v;
        }
        Ok(full)
    }
}

/// The change of variables `λ ↦ (Q_Nλ, {Q_jλ(x) − Q_jλ(y)})` on a lattice
/// blocked `levels` times down to a single site.
pub fn fadeev_popov_map(lat: &Lattice, levels: usize) -> Result<DMatrix<f64>> {
    let top = q_scalar_map(lat, levels)?;
    if top.nrows() != 1 {
        return Err(Error::InvalidLattice("lattice does not block to a single site".into()));
    }
    let mut rows: Vec<DMatrix<f64>> = Vec::new();
    for j in 0..levels {
        let qj = if j == 0 {
            DMatrix::identity(lat.num_sites(), lat.num_sites())
        } else {
            q_scalar_map(lat, j)?.matrix
        };
        let cj = lat.coarse_lattice(j)?;
        for (y, x) in tau_rows(&cj, 1)? {
            let diff = qj.row(x) - qj.row(y);
            rows.push(DMatrix::from_row_slice(1, diff.len(), diff.as_slice()));
        }
    }
    rows.push(top.matrix);
    let refs: Vec<&DMatrix<f64>> = rows.iter().collect();
    Ok(stack_rows(&refs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ext_d_map, grad, grad_map, scale_field};
    use crate::lattice::{apply_symmetry, LatticeSpec, LatticeSymmetry};

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
    fn q_scalar_preserves_constants_and_composes() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 2, 0)).unwrap();
        let c = ScalarField::from_values(&lat, vec![2.5; lat.num_sites()]).unwrap();
        let top = q_scalar(&lat, &c, 2).unwrap();
        assert_eq!(top.values.len(), 1);
        assert!((top.values[0] - 2.5).abs() < 1e-14);
        let q1 = q_scalar_map(&lat, 1).unwrap();
        let q1c = q_scalar_map(&lat.coarse_lattice(1).unwrap(), 1).unwrap();
        let q2 = q_scalar_map(&lat, 2).unwrap();
        assert!((&q1c.matrix * &q1.matrix - &q2.matrix).amax() < 1e-15);
    }

    #[test]
    fn q_bond_constants_and_composition() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 2, 0)).unwrap();
        let q = q_bond_map(&lat, 1).unwrap();
        let ones = vec![1.0; lat.num_bonds()];
        assert!(q.apply(&ones).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-14));
        let qc = q_bond_map(&lat.coarse_lattice(1).unwrap(), 1).unwrap();
        let q2 = q_bond_map(&lat, 2).unwrap();
        assert!((&qc.matrix * &q.matrix - &q2.matrix).amax() < 1e-15);
    }

    #[test]
    fn q_bond_intertwines_gradient() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 2, 0)).unwrap();
        for n in 1..=2 {
            let coarse = lat.coarse_lattice(n).unwrap();
            let lhs = &q_bond_map(&lat, n).unwrap().matrix * &grad_map(&lat).matrix;
            let rhs = &grad_map(&coarse).matrix * &q_scalar_map(&lat, n).unwrap().matrix;
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn q_bond_scale_invariant() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 0, 2)).unwrap();
        let a = BondField::from_values(&lat, lcg(2, lat.num_bonds())).unwrap();
        let fine = Lattice::new(scale_field(&a, 1).spec).unwrap();
        let lhs = q_bond(&fine, &scale_field(&a, 1), 1).unwrap();
        let rhs = scale_field(&q_bond(&lat, &a, 1).unwrap(), 1);
        assert_eq!(lhs.spec, rhs.spec);
        for (x, y) in lhs.values.iter().zip(&rhs.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn stokes_closure() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 2)).unwrap();
        let l = ScalarField::from_values(&lat, lcg(3, lat.num_sites())).unwrap();
        let mut z = grad(&lat, &l).unwrap();
        for b in 0..lat.num_bonds() {
            if lat.bonds()[b].axis == 1 {
                z.values[b] += 0.7;
            }
        }
        assert!(ext_d_map(&lat).apply(&z.values).unwrap().iter().all(|v| v.abs() < 1e-12));
        let coarse = lat.coarse_lattice(1).unwrap();
        let qz = q_bond(&lat, &z, 1).unwrap();
        assert!(ext_d_map(&coarse).apply(&qz.values).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn toron_average() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        let l = ScalarField::from_values(&lat, lcg(8, lat.num_sites())).unwrap();
        let g = grad(&lat, &l).unwrap();
        assert!(q_toron(&lat, &g).unwrap().iter().all(|v| v.abs() < 1e-13));
        let mut a = g.clone();
        for b in 0..lat.num_bonds() {
            if lat.bonds()[b].axis == 0 {
                a.values[b] += 0.25;
            }
        }
        let t = q_toron(&lat, &a).unwrap();
        assert!((t[0] - 0.75).abs() < 1e-13 && t[1].abs() < 1e-13);
        let cube = Lattice::new(LatticeSpec::unit_cube(2, 3)).unwrap();
        assert!(q_toron_map(&cube).is_err());
    }

    #[test]
    fn q_on_single_site_torus_is_scaled_toron_average() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 1)).unwrap();
        let q = q_bond_map(&lat, 1).unwrap();
        let t = q_toron_map(&lat).unwrap();
        assert!((q.matrix - t.matrix / 3.0).amax() < 1e-15);
    }

    #[test]
    fn tau_of_gradient() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 1, 1)).unwrap();
        let l = ScalarField::from_values(&lat, lcg(4, lat.num_sites())).unwrap();
        let t = tau(&lat, &grad(&lat, &l).unwrap(), 1).unwrap();
        for (r, (y, x)) in tau_rows(&lat, 1).unwrap().into_iter().enumerate() {
            assert!((t[r] - 3.0 * (l.values[x] - l.values[y])).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_equals_tau0_on_closed_fields() {
        let lat = Lattice::new(LatticeSpec::unit_cube(3, 3)).unwrap();
        let l = ScalarField::from_values(&lat, lcg(5, lat.num_sites())).unwrap();
        let g = grad(&lat, &l).unwrap();
        let a = tau_map(&lat, 1).unwrap().apply(&g.values).unwrap();
        let b = tau0_map(&lat, 1).unwrap().apply(&g.values).unwrap();
        assert!(crate::linalg::rel_diff_vec(&a, &b) < 1e-13);
    }

    #[test]
    fn tau_covariance() {
        let lat = Lattice::new(LatticeSpec::unit_cube(3, 3)).unwrap();
        let a = BondField::from_values(&lat, lcg(6, lat.num_bonds())).unwrap();
        let rows = tau_rows(&lat, 1).unwrap();
        let t = tau(&lat, &a, 1).unwrap();
        for r in LatticeSymmetry::all(3) {
            let ar = apply_symmetry(&r, &lat, &a).unwrap();
            let tr = tau(&lat, &ar, 1).unwrap();
            let inv = r.inverse();
            for (i, &(_, x)) in rows.iter().enumerate() {
                let src = lat.site_index(&inv.apply_site(&lat.site(x))).unwrap();
                let j = rows.iter().position(|&(_, xx)| xx == src).unwrap();
                assert!((tr[i] - t[j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stack_row_counts() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 2, 0)).unwrap();
        let s = axial_stack(&lat, 2).unwrap();
        assert_eq!(s.level_rows(), vec![729 - 27, 27 - 1]);
        assert_eq!(s.rows(), 728);
        let one = axial_stack(&Lattice::new(LatticeSpec::unit_cube(2, 3)).unwrap(), 1).unwrap();
        assert_eq!(one.rows(), 8);
    }

    #[test]
    fn m_operator_defining_equations() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 2)).unwrap();
        let z = BondField::from_values(&lat, lcg(7, lat.num_bonds())).unwrap();
        let mu = m_operator(&lat, &z).unwrap();
        let g = grad(&lat, &mu).unwrap();
        let sum: Vec<f64> = z.values.iter().zip(&g.values).map(|(a, b)| a + b).collect();
        let t = tau_map(&lat, 1).unwrap().apply(&sum).unwrap();
        assert!(t.iter().all(|v| v.abs() < 1e-12));
        let q = q_scalar(&lat, &mu, 1).unwrap();
        assert!(q.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn m_operator_inverts_gradient() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 2)).unwrap();
        let mut nu = lcg(9, lat.num_sites());
        let q = q_scalar_map(&lat, 1).unwrap();
        // remove block averages so Qν = 0
        let qn = q.apply(&nu).unwrap();
        for (c, y) in lat.block_centers(1).unwrap().into_iter().enumerate() {
            for x in lat.block_members(&lat.site(y), 1).unwrap() {
                nu[x] -= qn[c];
            }
        }
        let nu = ScalarField::from_values(&lat, nu).unwrap();
        let mu = m_operator(&lat, &grad(&lat, &nu).unwrap()).unwrap();
        for (a, b) in mu.values.iter().zip(&nu.values) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_and_parametrization() {
        for dim in [2, 3] {
            let lat = Lattice::new(LatticeSpec::torus(dim, 3, 0, 2)).unwrap();
            let p = FluctuationParam::new(&lat).unwrap();
            let s = &p.split;
            assert_eq!(s.in_block.len() + s.linking.len(), lat.num_bonds());
            let coarse = lat.coarse_lattice(1).unwrap();
            assert_eq!(s.linking.len(), coarse.num_bonds() * 3usize.pow(dim as u32 - 1));
            assert_eq!(s.noncentral.len() + s.central.len(), s.linking.len());
            let x = p.split.chi_star.apply(&{
                let mut e = vec![0.0; lat.num_bonds()];
                e[s.central[0]] = 1.0;
                e
            });
            assert!(x.unwrap().iter().all(|v| *v == 0.0));

            let q = q_bond_map(&lat, 1).unwrap().matrix;
            let t = tau_map(&lat, 1).unwrap().matrix;
            assert!((&q * &p.c_matrix).amax() < 1e-12);
            assert!((&t * &p.c_matrix).amax() < 1e-12);
            let stacked = stack_rows(&[&q, &t]);
            let kdim = kernel_basis(&stacked, RANK_TOL).ncols();
            // CᵀC = I + SᵀS, so C is injective
            let ctc = p.c_matrix.transpose() * &p.c_matrix;
            assert!(crate::linalg::min_eigenvalue(&ctc) > 1.0 - 1e-10);
            assert_eq!(p.dim(), kdim);
        }
    }

    #[test]
    fn s_is_local() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 0, 2)).unwrap();
        let p = FluctuationParam::new(&lat).unwrap();
        let coarse = lat.coarse_lattice(1).unwrap();
        for (cb, bond) in coarse.bonds().iter().enumerate() {
            let y = lat.site(lat.coarse_to_fine(&coarse, 1, bond.site));
            let yp = y.shifted(bond.axis, 3);
            let mut allowed = vec![false; lat.num_bonds()];
            let by = lat.block_members(&y, 1).unwrap();
            let byp = lat.block_members(&yp, 1).unwrap();
            for b in 0..lat.num_bonds() {
                let (u, v) = lat.bond_endpoints(b);
                let inside = |s: &Vec<usize>| s.contains(&u) && s.contains(&v);
                allowed[b] = inside(&by) || inside(&byp);
            }
            for b in lat.forward_linking_bonds(&y, bond.axis).unwrap().bonds {
                allowed[b] = true;
            }
            for b in 0..lat.num_bonds() {
                if !allowed[b] {
                    assert_eq!(p.s_matrix[(cb, b)], 0.0);
                }
            }
        }
    }

    #[test]
    fn fadeev_popov_square() {
        let lat = Lattice::new(LatticeSpec::torus(2, 3, 2, 0)).unwrap();
        let m = fadeev_popov_map(&lat, 2).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (81, 81));
        assert_eq!(crate::linalg::numerical_rank(&m, RANK_TOL), 81);
    }
}
