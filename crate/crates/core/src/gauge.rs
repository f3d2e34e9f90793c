//! Gauge-fixed minimizers, the effective form `Δ_k`, Feynman/Landau regularized
//! Green's functions, the fluctuation covariance and its representations.
//!
//! A context at level `k` of an `N`-level flow pairs the fine torus with
//! spacing `L^{-k}` and `L^N` sites per side with its `k`-fold blocking, the
//! unit torus with `L^{N-k}` sites per side. Matrices represent operators on the
//! weighted field spaces, so adjoints between lattices carry weight ratios.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::averaging::{self, FluctuationParam};
use crate::error::{Error, Result};
use crate::field::{ext_d_map, grad_map, stack_rows};
use crate::gaussian::{self, AffineSurface, QuadraticDensity, SurfaceGaussian};
use crate::lattice::{Lattice, LatticeSpec};
use crate::linalg::{self, kernel_basis, row_space_basis, RANK_TOL};

/// Default cap on the ambient dimension of any dense operator.
pub const DEFAULT_MAX_DIM: usize = 2500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeSpec {
    pub dim: usize,
    #[serde(rename = "L")]
    pub block_side: usize,
    /// Total number of blocking levels `N`.
    pub levels: usize,
    /// Current level `k`, `0 ≤ k ≤ N`.
    pub k: usize,
    /// Regulator `a` of `G_k`.
    pub a: f64,
    /// Feynman parameter `α`.
    pub alpha: f64,
    pub max_dim: usize,
}

impl GaugeSpec {
    pub fn new(dim: usize, block_side: usize, levels: usize, k: usize) -> Self {
        GaugeSpec { dim, block_side, levels, k, a: 1.0, alpha: 1.0, max_dim: DEFAULT_MAX_DIM }
    }

    pub fn fine_spec(&self) -> LatticeSpec {
        LatticeSpec::torus(self.dim, self.block_side, self.k as i32, (self.levels - self.k) as i32)
    }

    /// Number of bonds of the fine lattice.
    pub fn ambient_dim(&self) -> usize {
        self.dim * self.block_side.pow((self.dim * self.levels) as u32)
    }
}

pub struct GaugeContext {
    pub spec: GaugeSpec,
    pub fine: Lattice,
    pub coarse: Lattice,
    /// `η^dim` on the fine lattice.
    pub weight: f64,
    /// `d` on the fine lattice (plaquettes × bonds).
    pub d: DMatrix<f64>,
    /// `∂` on the fine lattice (bonds × sites).
    pub grad: DMatrix<f64>,
    /// Scalar `Q_k` and bond `𝒬_k` onto the unit lattice.
    pub q_k: DMatrix<f64>,
    pub qb_k: DMatrix<f64>,
    /// Axial constraint stack `(τ𝒬_j)_{j<k}` on the fine lattice.
    pub stack: DMatrix<f64>,
    g: OnceLock<DMatrix<f64>>,
    r: OnceLock<DMatrix<f64>>,
    h_axial: OnceLock<DMatrix<f64>>,
    h_feynman: OnceLock<DMatrix<f64>>,
    fluct: OnceLock<FluctuationParam>,
    coarse_ops: OnceLock<CoarseOps>,
}

/// Operators on the unit lattice with one blocking level.
pub struct CoarseOps {
    pub grad: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub tau: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

impl GaugeContext {
    pub fn new(spec: GaugeSpec) -> Result<Self> {
        if spec.k > spec.levels {
            return Err(Error::InvalidLattice(format!("level {} beyond {}", spec.k, spec.levels)));
        }
        if spec.a < 0.0 || spec.alpha < 0.0 {
            return Err(Error::InvalidLattice("regulator and α must be nonnegative".into()));
        }
        let n = spec.ambient_dim();
        if n > spec.max_dim {
            return Err(Error::ResourceCap { dim: n, cap: spec.max_dim });
        }
        let fine = Lattice::new(spec.fine_spec())?;
        let coarse = fine.coarse_lattice(spec.k)?;
        let weight = fine.spec().volume_weight();
        let d = ext_d_map(&fine).matrix;
        let grad = grad_map(&fine).matrix;
        let (q_k, qb_k) = if spec.k == 0 {
            (
                DMatrix::identity(fine.num_sites(), fine.num_sites()),
                DMatrix::identity(fine.num_bonds(), fine.num_bonds()),
            )
        } else {
            (
                averaging::q_scalar_map(&fine, spec.k)?.matrix,
                averaging::q_bond_map(&fine, spec.k)?.matrix,
            )
        };
        let stack = averaging::axial_stack(&fine, spec.k)?.matrix;
        Ok(GaugeContext {
            spec,
            fine,
            coarse,
            weight,
            d,
            grad,
            q_k,
            qb_k,
            stack,
            g: OnceLock::new(),
            r: OnceLock::new(),
            h_axial: OnceLock::new(),
            h_feynman: OnceLock::new(),
            fluct: OnceLock::new(),
            coarse_ops: OnceLock::new(),
        })
    }

    /// Same geometry with a different regulator `a`.
    pub fn with_regulator(&self, a: f64) -> Result<Self> {
        GaugeContext::new(GaugeSpec { a, ..self.spec })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        GaugeContext::new(GaugeSpec { alpha, ..self.spec })
    }

    /// Weight ratio `L^{dim·k}` making `Q_k^* = L^{dim·k} Q_kᵀ`.
    pub fn adjoint_factor(&self) -> f64 {
        1.0 / self.weight
    }

    /// `−Δ = δ∂` on fine scalars.
    pub fn neg_laplacian(&self) -> DMatrix<f64> {
        self.grad.transpose() * &self.grad
    }

    /// `‖d𝒜‖²` as a matrix in fine bond coordinates.
    pub fn action_form(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(self.d.transpose() * &self.d * self.weight))
    }

    /// `G_k = (−Δ + a Q_k^* Q_k)⁻¹`.
    pub fn g_k(&self) -> Result<&DMatrix<f64>> {
        if let Some(g) = self.g.get() {
            return Ok(g);
        }
        if self.spec.a == 0.0 {
            return Err(Error::SingularOperator(
                "−Δ has the constants in its kernel on a torus; a > 0 is required".into(),
            ));
        }
        let op = self.neg_laplacian() + &self.q_k.transpose() * &self.q_k * (self.spec.a * self.adjoint_factor());
        let g = linalg::spd_inverse(&op).map_err(|_| Error::SingularOperator("−Δ + aQ*Q".into()))?;
        Ok(self.g.get_or_init(|| g))
    }

    /// `P_k = G Q^* (Q G² Q^*)⁻¹ Q G`.
    pub fn p_k(&self) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.fine.num_sites(), self.fine.num_sites()) - self.r_k()?)
    }

    /// `R_k = I − P_k`.
    pub fn r_k(&self) -> Result<&DMatrix<f64>> {
        if let Some(r) = self.r.get() {
            return Ok(r);
        }
        let g = self.g_k()?;
        let qg = &self.q_k * g;
        // the weight factor of Q^* cancels between Q^* and (QG²Q^*)⁻¹
        let inner = &qg * &qg.transpose();
        let p = &qg.transpose() * linalg::spd_solve(&inner, &qg)?;
        let n = self.fine.num_sites();
        let r = linalg::symmetrize(&(DMatrix::identity(n, n) - p));
        Ok(self.r.get_or_init(|| r))
    }

    /// Orthonormal basis of `range(R_k)` from the eigenvectors with eigenvalue one.
    pub fn range_basis_r(&self) -> Result<DMatrix<f64>> {
        let (vals, vecs) = linalg::sym_eigen(self.r_k()?);
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.5).collect();
        Ok(vecs.select_columns(&keep))
    }

    /// Orthogonal projector onto `Δ(ker Q_k)` built directly from a kernel basis.
    pub fn laplacian_image_projector(&self) -> DMatrix<f64> {
        let kq = kernel_basis(&self.q_k, RANK_TOL);
        let img = self.neg_laplacian() * kq;
        let u = row_space_basis(&img.transpose(), RANK_TOL);
        &u * u.transpose()
    }

    /// `λ₀ = G²Q^*(QG²Q^*)⁻¹(I − aQGQ^*)μ + aGQ^*μ`.
    pub fn lambda0(&self, mu: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.g_k()?;
        let c = self.adjoint_factor();
        let qadj = self.q_k.transpose() * c;
        let g2 = g * g;
        let inner = &self.q_k * &g2 * &qadj;
        let ncoarse = self.q_k.nrows();
        let mid = (DMatrix::identity(ncoarse, ncoarse) - &self.q_k * g * &qadj * self.spec.a) * mu;
        let sol = linalg::spd_solve(&inner, &DMatrix::from_column_slice(ncoarse, 1, mid.as_slice()))?;
        Ok(&g2 * &qadj * sol.column(0) + g * &qadj * mu * self.spec.a)
    }

    /// `ℋˣ_k`: minimizer of `‖d𝒜‖²` on `{𝒬_k𝒜 = A_k, τ𝒬_j𝒜 = 0 (j<k)}`, as a matrix.
    pub fn h_axial(&self) -> Result<&DMatrix<f64>> {
        if let Some(h) = self.h_axial.get() {
            return Ok(h);
        }
        let h = minimizer_map(&self.action_form(), &self.qb_k, &self.stack)?;
        Ok(self.h_axial.get_or_init(|| h))
    }

    /// Form `‖d𝒜‖² ± α⁻¹⟨δ𝒜, R_kδ𝒜⟩` in fine bond coordinates.
    pub fn feynman_form(&self, sign: f64) -> Result<DMatrix<f64>> {
        let r = self.r_k()?;
        let gt = self.grad.transpose();
        let gauge = gt.transpose() * r * &gt;
        Ok(linalg::symmetrize(
            &((self.d.transpose() * &self.d + gauge * (sign / self.spec.alpha)) * self.weight),
        ))
    }

    /// `ℋ_k`: minimizer of `½‖d𝒜‖² + (2α)⁻¹⟨δ𝒜, R_kδ𝒜⟩` subject to `𝒬_k𝒜 = A_k`.
    pub fn h_feynman(&self) -> Result<&DMatrix<f64>> {
        if let Some(h) = self.h_feynman.get() {
            return Ok(h);
        }
        let empty = DMatrix::zeros(0, self.fine.num_bonds());
        let h = minimizer_map(&self.feynman_form(1.0)?, &self.qb_k, &empty)?;
        Ok(self.h_feynman.get_or_init(|| h))
    }

    /// Stationary point of the action with the gauge term entering with a minus sign,
    /// from the full KKT system.
    pub fn h_feynman_minus(&self) -> Result<DMatrix<f64>> {
        stationary_map(&self.feynman_form(-1.0)?, &self.qb_k)
    }

    /// `Δ_k = ℋᵀ (δd) ℋ` built from the axial minimizer.
    pub fn delta_k(&self) -> Result<DMatrix<f64>> {
        let h = self.h_axial()?;
        Ok(linalg::symmetrize(&(h.transpose() * self.action_form() * h)))
    }

    /// `Δ_k` built from the Feynman minimizer.
    pub fn delta_k_feynman(&self) -> Result<DMatrix<f64>> {
        let h = self.h_feynman()?;
        Ok(linalg::symmetrize(&(h.transpose() * self.action_form() * h)))
    }

    pub fn coarse_ops(&self) -> Result<&CoarseOps> {
        if let Some(c) = self.coarse_ops.get() {
            return Ok(c);
        }
        let c = CoarseOps {
            grad: grad_map(&self.coarse).matrix,
            q: averaging::q_bond_map(&self.coarse, 1)?.matrix,
            tau: averaging::tau_map(&self.coarse, 1)?.matrix,
            m: averaging::m_operator_map(&self.coarse)?.matrix,
        };
        Ok(self.coarse_ops.get_or_init(|| c))
    }

    /// The fluctuation parametrization `C` on the unit lattice.
    pub fn fluctuation(&self) -> Result<&FluctuationParam> {
        if let Some(f) = self.fluct.get() {
            return Ok(f);
        }
        let f = FluctuationParam::new(&self.coarse)?;
        Ok(self.fluct.get_or_init(|| f))
    }

    /// Surface `{𝒬Z = 0, τZ = 0}` on the unit lattice.
    pub fn fluctuation_surface(&self) -> Result<AffineSurface> {
        let c = self.coarse_ops()?;
        AffineSurface::homogeneous(stack_rows(&[&c.q, &c.tau]))
    }

    /// Smallest eigenvalue of `Δ_k` on `{𝒬A = 0, τA = 0}`: the constant of the lower bound.
    pub fn delta_lower_bound(&self) -> Result<f64> {
        let s = self.fluctuation_surface()?;
        Ok(gaussian::min_eig_on_kernel(&self.delta_k()?, &s.kernel))
    }

    /// `CᵀΔ_kC`.
    pub fn c_form(&self) -> Result<DMatrix<f64>> {
        let c = &self.fluctuation()?.c_matrix;
        Ok(linalg::symmetrize(&(c.transpose() * self.delta_k()? * c)))
    }

    /// `C_{k,x} = (CᵀΔ_kC + x)⁻¹`; `x = 0` gives `C_k`.
    pub fn c_k_x(&self, x: f64) -> Result<DMatrix<f64>> {
        let f = self.c_form()?;
        let n = f.nrows();
        linalg::spd_inverse(&(f + DMatrix::identity(n, n) * x))
    }

    pub fn c_k(&self) -> Result<DMatrix<f64>> {
        self.c_k_x(0.0)
    }

    /// `(I + ∂𝓜)` on the unit lattice.
    pub fn recovery(&self) -> Result<DMatrix<f64>> {
        let c = self.coarse_ops()?;
        let n = self.coarse.num_bonds();
        Ok(DMatrix::identity(n, n) + &c.grad * &c.m)
    }

    /// `𝒢_{k,x}⁻¹ = δd + dR_{k+1}δ + a𝒬^*_{k+1}𝒬_{k+1} + x𝒬_k^*(I+∂𝓜)ᵀχ*(I+∂𝓜)𝒬_k`.
    pub fn fine_green_inverse(&self, x: f64) -> Result<DMatrix<f64>> {
        let next = self.next_level()?;
        let r1 = next.r_k()?;
        let grad = &self.grad;
        let q1 = &next.qb_k;
        let q1_adj_factor = (self.fine.block_side() as f64).powi(self.fine.dim() as i32) / self.weight;
        let mut op = self.d.transpose() * &self.d
            + grad * r1 * grad.transpose()
            + q1.transpose() * q1 * (self.spec.a * q1_adj_factor);
        if x != 0.0 {
            let rec = self.recovery()? * &self.qb_k;
            let chi = &self.fluctuation()?.split.chi_star.matrix;
            op += rec.transpose() * chi * &rec * (x * self.adjoint_factor());
        }
        Ok(linalg::symmetrize(&op))
    }

    /// Context one level further on the same fine lattice, providing `𝒬_{k+1}` and `R_{k+1}`.
    fn next_level(&self) -> Result<GaugeContext> {
        if self.spec.k >= self.spec.levels {
            return Err(Error::InvalidLattice("no further blocking level".into()));
        }
        let fine = &self.fine;
        let q1 = averaging::q_scalar_map(fine, self.spec.k + 1)?.matrix;
        let qb1 = averaging::q_bond_map(fine, self.spec.k + 1)?.matrix;
        let coarse = fine.coarse_lattice(self.spec.k + 1)?;
        let ctx = GaugeContext {
            spec: self.spec,
            fine: fine.clone(),
            coarse,
            weight: self.weight,
            d: self.d.clone(),
            grad: self.grad.clone(),
            q_k: q1,
            qb_k: qb1,
            stack: DMatrix::zeros(0, fine.num_bonds()),
            g: OnceLock::new(),
            r: OnceLock::new(),
            h_axial: OnceLock::new(),
            h_feynman: OnceLock::new(),
            fluct: OnceLock::new(),
            coarse_ops: OnceLock::new(),
        };
        Ok(ctx)
    }

    /// `(𝒢_{k,x}, G̃_{k,x})`.
    pub fn green_pair(&self, x: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let ginv = self.fine_green_inverse(x)?;
        let g = linalg::spd_inverse(&ginv)
            .map_err(|_| Error::SingularOperator("fine Green's function operator".into()))?;
        let q1 = averaging::q_bond_map(&self.fine, self.spec.k + 1)?.matrix;
        let gq = &g * q1.transpose();
        let inner = &q1 * &gq;
        let corr = &gq * linalg::spd_solve(&inner, &gq.transpose())?;
        let tilde = linalg::symmetrize(&(&g - corr));
        Ok((g, tilde))
    }

    /// Both sides of `CC_{k,x}Cᵀ = (I+∂𝓜)𝒬_kG̃_{k,x}𝒬_k^*(I+∂𝓜)ᵀ`.
    pub fn representation_sides(&self, x: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let c = &self.fluctuation()?.c_matrix;
        let lhs = linalg::symmetrize(&(c * self.c_k_x(x)? * c.transpose()));
        let (_, tilde) = self.green_pair(x)?;
        let rec = self.recovery()? * &self.qb_k;
        let rhs = linalg::symmetrize(&(&rec * tilde * rec.transpose() * self.adjoint_factor()));
        Ok((lhs, rhs))
    }

    /// Relative spectral-norm residual of the representation identity.
    pub fn rep_check(&self, x: f64) -> Result<f64> {
        let (l, r) = self.representation_sides(x)?;
        Ok(linalg::op_norm(&(&l - &r)) / linalg::op_norm(&l).max(f64::MIN_POSITIVE))
    }

    /// `C_k^{1/2}` by eigen-decomposition.
    pub fn ck_sqrt_spectral(&self) -> Result<DMatrix<f64>> {
        Ok(linalg::spd_sqrt(&self.c_k()?))
    }

    /// `C_k^{1/2} = π⁻¹∫₀^∞ x^{-1/2} C_{k,x} dx` by Gauss–Legendre quadrature after
    /// `x = t²`, `t = s·tan θ`, with `s² = tr(CᵀΔC)/n`.
    pub fn ck_sqrt_quadrature(&self, npoints: usize) -> Result<DMatrix<f64>> {
        sqrt_inverse_quadrature(&self.c_form()?, npoints)
    }
}

/// `H^{-1/2} = (2/π)∫₀^∞ (H + t²)⁻¹ dt` evaluated on `θ ∈ [0, π/2]`.
pub fn sqrt_inverse_quadrature(h: &DMatrix<f64>, npoints: usize) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    let s = (h.trace() / n.max(1) as f64).sqrt();
    let (nodes, weights) = linalg::gauss_legendre(npoints);
    let half = std::f64::consts::FRAC_PI_4;
    let mut acc = DMatrix::zeros(n, n);
    for (z, w) in nodes.iter().zip(&weights) {
        let theta = half * (z + 1.0);
        let (sin, cos) = theta.sin_cos();
        // (H + s² tan²θ)⁻¹ s sec²θ = s (H cos²θ + s² sin²θ)⁻¹
        let m = h * (cos * cos) + DMatrix::identity(n, n) * (s * s * sin * sin);
        acc += linalg::spd_inverse(&m)? * (w * half * s);
    }
    Ok(linalg::symmetrize(&(acc * (2.0 / std::f64::consts::PI))))
}

/// Matrix of the map `A ↦ argmin{½vᵀFv : K_out v = A, K_fix v = 0}`.
pub fn minimizer_map(form: &DMatrix<f64>, k_out: &DMatrix<f64>, k_fix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = stack_rows(&[k_out, k_fix]);
    let gram = &k * k.transpose();
    let mut sel = DMatrix::zeros(k.nrows(), k_out.nrows());
    for i in 0..k_out.nrows() {
        sel[(i, i)] = 1.0;
    }
    let p = k.transpose() * linalg::spd_solve(&gram, &sel)
        .map_err(|_| Error::SingularOperator("constraints are not surjective".into()))?;
    let b = kernel_basis(&k, RANK_TOL);
    if b.ncols() == 0 {
        return Ok(p);
    }
    let fb = form * &b;
    let m = b.transpose() * &fb;
    let corr = linalg::spd_solve(&m, &(fb.transpose() * &p))?;
    Ok(&p - &b * corr)
}

/// Stationary point map of `½vᵀFv` on `{K v = A}` via the KKT system.
pub fn stationary_map(form: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = form.nrows();
    let m = k.nrows();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(form);
    kkt.view_mut((0, n), (n, m)).copy_from(&k.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(k);
    let mut rhs = DMatrix::zeros(n + m, m);
    for i in 0..m {
        rhs[(n + i, i)] = 1.0;
    }
    let sol = linalg::lu_solve(&kkt, &rhs, "KKT system")?;
    Ok(sol.rows(0, n).clone_owned())
}

/// Least-squares fit of `v` by gradients and constant (toron) fields; returns
/// the relative residual `‖v − ∂λ − Σ c_μ e_μ‖ / ‖v‖`.
pub fn pure_gauge_residual(lat: &Lattice, v: &DVector<f64>) -> Result<f64> {
    let grad = grad_map(lat).matrix;
    let mut basis = DMatrix::zeros(lat.num_bonds(), grad.ncols() + lat.dim());
    basis.view_mut((0, 0), (grad.nrows(), grad.ncols())).copy_from(&grad);
    for (b, bond) in lat.bonds().iter().enumerate() {
        basis[(b, grad.ncols() + bond.axis)] = 1.0;
    }
    let cols = row_space_basis(&basis.transpose(), RANK_TOL);
    let proj = &cols * (cols.transpose() * v);
    let nv = v.norm();
    Ok(if nv == 0.0 { 0.0 } else { (v - proj).norm() / nv })
}

/// Landau vs Feynman comparison: the square map `λ ↦ (Q_kλ, UᵀΔλ)` and the
/// moments of the two Gaussians.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChangeOfGauge {
    pub coarse_sites: usize,
    pub range_rank: usize,
    pub fine_sites: usize,
    pub condition: f64,
    pub mean_residual: f64,
    pub cov_residual: f64,
}

impl GaugeContext {
    pub fn change_of_gauge_check(&self, a_k: &DVector<f64>) -> Result<ChangeOfGauge> {
        let r = self.r_k()?;
        let u = self.range_basis_r()?;
        let lap = -self.neg_laplacian();
        let map = stack_rows(&[&self.q_k, &(u.transpose() * &lap)]);
        let condition = if map.is_square() {
            let (lo, hi) = linalg::singular_range(&map);
            hi / lo
        } else {
            f64::INFINITY
        };

        let delta = self.grad.transpose();
        // Landau surface {𝒬_k𝒜 = A_k, UᵀR_kδ𝒜 = 0}
        let landau_k = stack_rows(&[&self.qb_k, &(u.transpose() * r * &delta)]);
        let mut off = DVector::zeros(landau_k.nrows());
        off.rows_mut(0, a_k.len()).copy_from(a_k);
        let landau_s = AffineSurface::new(landau_k, off)?;
        let action = QuadraticDensity::centered(self.action_form())?;
        let lg = SurfaceGaussian::new(&action, &landau_s)?;
        let (m_l, c_l) = (lg.minimizer(), lg.covariance());

        let feyn = QuadraticDensity::centered(self.feynman_form(1.0)?)?;
        let feyn_s = AffineSurface::new(self.qb_k.clone(), a_k.clone())?;
        let fg = SurfaceGaussian::new(&feyn, &feyn_s)?;
        let n = self.fine.num_bonds();
        let t = DMatrix::identity(n, n) - &self.grad * self.g_k()? * r * &delta;
        let m_f = &t * fg.minimizer();
        let c_f = &t * fg.covariance() * t.transpose();

        Ok(ChangeOfGauge {
            coarse_sites: self.q_k.nrows(),
            range_rank: u.ncols(),
            fine_sites: self.fine.num_sites(),
            condition,
            mean_residual: linalg::rel_diff_vec(m_f.as_slice(), m_l.as_slice()),
            cov_residual: linalg::rel_diff(&c_f, &c_l),
        })
    }
}

impl GaugeContext {
    /// Decay profile of the `ℋ_k` kernel, binned in fine lattice units.
    pub fn h_feynman_decay(&self) -> Result<DecayProfile> {
        let period = self.coarse.sites_per_side() as f64;
        decay_profile(
            self.h_feynman()?,
            &bond_positions(&self.fine),
            &bond_positions(&self.coarse),
            period,
            self.fine.spec().spacing(),
        )
    }
}

/// `G_k` and `R_k` applied without dense fine-lattice matrices, for lattices
/// beyond the dense cap. `R_k` is the orthogonal projector onto the complement
/// of `range(G_kQ_k^*)`, held through the columns `W = G_kQ_k^*` (one
/// conjugate-gradient solve per coarse site).
pub struct MatrixFreeProjection {
    pub fine: Lattice,
    pub levels: usize,
    pub a: f64,
    pub tol: f64,
    /// Coarse site of each fine site.
    block_of: Vec<usize>,
    block_size: f64,
    w: DMatrix<f64>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl MatrixFreeProjection {
    pub fn new(fine: Lattice, levels: usize, a: f64, tol: f64) -> Result<Self> {
        if a <= 0.0 {
            return Err(Error::SingularOperator("a > 0 is required".into()));
        }
        let coarse = fine.coarse_lattice(levels)?;
        let nc = coarse.num_sites();
        let mut w = DMatrix::zeros(fine.num_sites(), nc);
        let mut block_of = vec![usize::MAX; fine.num_sites()];
        for c in 0..nc {
            let y = fine.site(fine.coarse_to_fine(&coarse, levels, c));
            for x in fine.block_members(&y, levels)? {
                block_of[x] = c;
            }
        }
        let block_size = fine.block_side().pow((fine.dim() * levels) as u32) as f64;
        let mut proto = Self {
            fine,
            levels,
            a,
            tol,
            block_of,
            block_size,
            w: DMatrix::zeros(0, 0),
            gram: DMatrix::<f64>::identity(1, 1).cholesky().expect("spd"),
        };
        for c in 0..nc {
            let mut e = vec![0.0; nc];
            e[c] = 1.0;
            let mu = crate::field::ScalarField::from_values(&coarse, e)?;
            let qs = averaging::q_scalar_adjoint(&proto.fine, &mu, levels)?;
            let col = proto.g_apply(&DVector::from_vec(qs.values))?;
            w.set_column(c, &col);
        }
        proto.gram = linalg::cholesky(&(w.transpose() * &w))?;
        proto.w = w;
        Ok(proto)
    }

    /// `(−Δ + aQ^*Q)λ`.
    pub fn op_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        use crate::field::{codiff_bond, grad, ScalarField};
        let lam = ScalarField::from_values(&self.fine, v.as_slice().to_vec())?;
        let lap = codiff_bond(&self.fine, &grad(&self.fine, &lam)?)?;
        // Q^*Q is the block mean
        let mut sums = vec![0.0; self.w.ncols().max(self.block_of.iter().max().map_or(0, |m| m + 1))];
        for (x, &c) in self.block_of.iter().enumerate() {
            sums[c] += v[x];
        }
        Ok(DVector::from_iterator(
            v.len(),
            lap.values.iter().zip(&self.block_of).map(|(l, &c)| l + self.a * sums[c] / self.block_size),
        ))
    }

    pub fn g_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut err = None;
        let (x, _) = linalg::conjugate_gradient(
            |p| match self.op_apply(p) {
                Ok(y) => y,
                Err(e) => {
                    err = Some(e);
                    DVector::zeros(p.len())
                }
            },
            v,
            self.tol,
            20 * v.len().max(100),
        )?;
        match err {
            Some(e) => Err(e),
            None => Ok(x),
        }
    }

    pub fn r_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let wt = self.w.transpose() * v;
        let y = self.gram.solve(&wt);
        v - &self.w * y
    }

    pub fn q_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let lam = crate::field::ScalarField::from_values(&self.fine, v.as_slice().to_vec())?;
        Ok(DVector::from_vec(averaging::q_scalar(&self.fine, &lam, self.levels)?.values))
    }

    /// `‖Q_kG_kR_kv‖/‖v‖`, `‖R_k²v − R_kv‖/‖v‖` and `‖R_kΔλ − Δλ‖/‖Δλ‖` for `λ = v − Q^*Qv ∈ ker Q_k`.
    pub fn residuals(&self, v: &DVector<f64>) -> Result<[f64; 3]> {
        use crate::field::{codiff_bond, grad, ScalarField};
        let n = v.norm();
        let rv = self.r_apply(v);
        let qgr = self.q_apply(&self.g_apply(&rv)?)?;
        let idem = self.r_apply(&rv) - &rv;
        let lam = ScalarField::from_values(&self.fine, v.as_slice().to_vec())?;
        let q = averaging::q_scalar(&self.fine, &lam, self.levels)?;
        let back = averaging::q_scalar_adjoint(&self.fine, &q, self.levels)?;
        let kq = ScalarField::from_values(&self.fine, lam.values.iter().zip(&back.values).map(|(a, b)| a - b).collect())?;
        let lap = DVector::from_vec(codiff_bond(&self.fine, &grad(&self.fine, &kq)?)?.values) * -1.0;
        let rl = self.r_apply(&lap) - &lap;
        Ok([qgr.norm() / n, idem.norm() / n, rl.norm() / lap.norm()])
    }
}

/// Largest value of `‖A‖²/‖dA‖²` on `ker τ` within the single block `B(0)`.
pub fn block_poincare_constant(dim: usize, block_side: usize) -> Result<f64> {
    let lat = Lattice::new(LatticeSpec::unit_cube(dim, block_side))?;
    let d = ext_d_map(&lat).matrix;
    let tau = averaging::tau_map(&lat, 1)?.matrix;
    let kernel = kernel_basis(&tau, RANK_TOL);
    let lo = gaussian::min_eig_on_kernel(&(d.transpose() * d), &kernel);
    if lo <= 0.0 {
        return Err(Error::IndefiniteOnSurface { min_eig: lo });
    }
    Ok(1.0 / lo)
}

/// Smallest eigenvalue of `‖dA‖² + ‖𝒬A‖²` on `ker τ` for the unit torus with
/// `L^levels` sites per side, blocked once.
pub fn global_lower_bound(dim: usize, block_side: usize, levels: usize) -> Result<f64> {
    let lat = Lattice::new(LatticeSpec::torus(dim, block_side, 0, levels as i32))?;
    let d = ext_d_map(&lat).matrix;
    let q = averaging::q_bond_map(&lat, 1)?.matrix;
    let tau = averaging::tau_map(&lat, 1)?.matrix;
    let coarse_weight = (block_side as f64).powi(dim as i32);
    let form = d.transpose() * d + q.transpose() * q * coarse_weight;
    let kernel = kernel_basis(&tau, RANK_TOL);
    Ok(gaussian::min_eig_on_kernel(&form, &kernel))
}

/// Distance profile of an operator kernel on a torus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayProfile {
    /// `(distance, max |entry|, count)` per distance class.
    pub rows: Vec<(f64, f64, usize)>,
    pub slope: f64,
    /// Pearson correlation of `log max|entry|` against distance.
    pub correlation: f64,
}

impl DecayProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("distance,max_abs,count\n");
        for (d, m, c) in &self.rows {
            s.push_str(&format!("{d},{m:e},{c}\n"));
        }
        s
    }
}

/// Bin kernel entries by torus distance between row and column positions
/// (physical units, bin width `unit`) and fit `log max` linearly.
pub fn decay_profile(
    op: &DMatrix<f64>,
    row_pos: &[Vec<f64>],
    col_pos: &[Vec<f64>],
    period: f64,
    unit: f64,
) -> Result<DecayProfile> {
    if op.nrows() != row_pos.len() || op.ncols() != col_pos.len() {
        return Err(Error::DimensionMismatch("positions do not match operator".into()));
    }
    let mut bins: Vec<(f64, usize)> = Vec::new();
    for i in 0..op.nrows() {
        for j in 0..op.ncols() {
            let d2: f64 = row_pos[i]
                .iter()
                .zip(&col_pos[j])
                .map(|(a, b)| {
                    let mut t = (a - b).rem_euclid(period);
                    if t > period / 2.0 {
                        t = period - t;
                    }
                    t * t
                })
                .sum();
            let bin = (d2.sqrt() / unit).round() as usize;
            if bins.len() <= bin {
                bins.resize(bin + 1, (0.0, 0));
            }
            let v = op[(i, j)].abs();
            bins[bin].0 = bins[bin].0.max(v);
            bins[bin].1 += 1;
        }
    }
    let rows: Vec<(f64, f64, usize)> = bins
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(b, &(m, c))| (b as f64 * unit, m, c))
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 > 1e-13).map(|r| (r.0, r.1.ln())).collect();
    let (slope, correlation) = linear_fit(&pts);
    Ok(DecayProfile { rows, slope, correlation })
}

fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (0.0, 0.0);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let corr = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    (slope, corr)
}

/// Physical positions of sites (`Site`) or bond midpoints on a lattice.
pub fn site_positions(lat: &Lattice) -> Vec<Vec<f64>> {
    let eta = lat.spec().spacing();
    lat.sites().map(|s| s.coords[..lat.dim()].iter().map(|&c| c as f64 * eta).collect()).collect()
}

pub fn bond_positions(lat: &Lattice) -> Vec<Vec<f64>> {
    let eta = lat.spec().spacing();
    lat.bonds()
        .iter()
        .map(|b| {
            let s = lat.site(b.site);
            (0..lat.dim())
                .map(|i| (s.coords[i] as f64 + if i == b.axis { 0.5 } else { 0.0 }) * eta)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(levels: usize, k: usize) -> GaugeContext {
        GaugeContext::new(GaugeSpec::new(2, 3, levels, k)).unwrap()
    }

    fn probe(n: usize, seed: u64) -> DVector<f64> {
        let mut s = seed;
        DVector::from_iterator(
            n,
            (0..n).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            }),
        )
    }

    #[test]
    fn g0_inverts() {
        let c = ctx(1, 0);
        let g = c.g_k().unwrap();
        let n = c.fine.num_sites();
        let op = c.neg_laplacian() + DMatrix::identity(n, n);
        assert!((g * op - DMatrix::identity(n, n)).amax() < 1e-10);
        assert!(linalg::asymmetry(g) < 1e-12);
    }

    #[test]
    fn zero_regulator_rejected() {
        let c = GaugeContext::new(GaugeSpec { a: 0.0, ..GaugeSpec::new(2, 3, 1, 0) }).unwrap();
        assert!(matches!(c.g_k(), Err(Error::SingularOperator(_))));
    }

    #[test]
    fn projection_properties() {
        let c = ctx(2, 1);
        let r = c.r_k().unwrap();
        assert!((r * r - r).amax() < 1e-10);
        assert!((&c.q_k * c.g_k().unwrap() * r).amax() < 1e-10);
        assert!((r - c.laplacian_image_projector()).amax() < 1e-9);
        let r2 = c.with_regulator(2.0).unwrap();
        assert!((r - r2.r_k().unwrap()).amax() < 1e-9);
    }

    #[test]
    fn lambda0_solves_its_equations() {
        let c = ctx(2, 1);
        let mu = probe(c.q_k.nrows(), 3);
        let l0 = c.lambda0(&mu).unwrap();
        assert!((&c.q_k * &l0 - &mu).amax() < 1e-9);
        let lap = -c.neg_laplacian();
        assert!((c.r_k().unwrap() * lap * &l0).amax() < 1e-9);
        let l2 = c.with_regulator(2.0).unwrap().lambda0(&mu).unwrap();
        assert!((l0 - l2).amax() < 1e-9);
    }

    #[test]
    fn minimizers_agree_up_to_gauge() {
        let c = ctx(2, 1);
        let a = probe(c.coarse.num_bonds(), 5);
        let hx = c.h_axial().unwrap() * &a;
        assert!((&c.qb_k * &hx - &a).amax() < 1e-10);
        assert!((&c.stack * &hx).amax() < 1e-10);
        let hf = c.h_feynman().unwrap() * &a;
        let half = c.with_alpha(0.5).unwrap();
        let hf2 = half.h_feynman().unwrap() * &a;
        assert!((&hf - &hf2).norm() <= 1e-9 * a.norm());
        assert!(pure_gauge_residual(&c.fine, &(&hx - &hf)).unwrap() < 1e-9);
        assert!(linalg::rel_diff(&c.delta_k().unwrap(), &c.delta_k_feynman().unwrap()) < 1e-9);
    }

    #[test]
    fn delta_is_gauge_invariant_and_bounded_below() {
        let c = ctx(2, 1);
        let dk = c.delta_k().unwrap();
        let g = grad_map(&c.coarse).matrix;
        assert!((&dk * g).amax() < 1e-9);
        assert!(c.delta_lower_bound().unwrap() > 1e-3);
    }

    #[test]
    fn representation_identity_small() {
        let c = ctx(1, 0);
        for x in [0.0, 1.0] {
            assert!(c.rep_check(x).unwrap() < 1e-8, "x = {x}: {}", c.rep_check(x).unwrap());
        }
    }

    #[test]
    fn matrix_free_projection_matches_dense() {
        let c = ctx(2, 1);
        let mf = MatrixFreeProjection::new(c.fine.clone(), 1, 1.0, 1e-14).unwrap();
        let v = probe(c.fine.num_sites(), 9);
        let dense = c.r_k().unwrap() * &v;
        assert!((mf.r_apply(&v) - dense).amax() < 1e-10);
        assert!(mf.residuals(&v).unwrap().iter().all(|r| *r < 1e-10));
    }

    #[test]
    fn sqrt_of_identity() {
        let h = DMatrix::identity(3, 3);
        let r = sqrt_inverse_quadrature(&h, 10).unwrap();
        assert!((r - h).amax() < 1e-13);
    }

    #[test]
    fn decay_of_massive_green_function() {
        let lat = Lattice::new(LatticeSpec::torus(3, 3, 0, 1)).unwrap();
        let g = grad_map(&lat).matrix;
        let n = lat.num_sites();
        let op = linalg::spd_inverse(&(g.transpose() * &g + DMatrix::identity(n, n))).unwrap();
        let pos = site_positions(&lat);
        let p = decay_profile(&op, &pos, &pos, 3.0, 1.0).unwrap();
        assert!(p.slope < 0.0);
        let diag = DMatrix::identity(4, 4);
        let pos4: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let pd = decay_profile(&diag, &pos4, &pos4, 4.0, 1.0).unwrap();
        assert!(pd.rows.iter().all(|r| r.0 == 0.0 || r.1 == 0.0));
    }
}
