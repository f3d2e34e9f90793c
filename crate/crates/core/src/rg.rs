//! The block-averaging flow of Gaussian densities on the bonds of a torus.
//!
//! Level `k` of an `N`-level flow lives on the unit torus with `L^{N-k}` sites
//! per side. One step integrates over the fibres `{𝒬A_k = A', τA_k = 0}`, then
//! substitutes `A' = L^{-γ}A_{k+1}` and multiplies by `L^{γ c_{k+1}}`, where
//! `γ = (dim−2)/2` and `c_{k+1}` counts the integrated directions of the whole
//! fine lattice. Delta functions are coarea-normalized, so the iterated flow and
//! the one-shot integral over the finest field agree including constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::averaging::{self};
use crate::error::{Error, Result};
use crate::field::{ext_d_map, grad_map, scaling_exponent, stack_rows};
use crate::gauge::{minimizer_map, GaugeContext, GaugeSpec, DEFAULT_MAX_DIM};
use crate::gaussian::{self, push_constraint_detailed, AffineSurface, QuadraticDensity, SurfaceGaussian};
use crate::lattice::{Lattice, LatticeSpec};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    #[serde(rename = "L")]
    pub block_side: usize,
    pub levels: usize,
    pub max_dim: usize,
}

impl FlowSpec {
    pub fn new(dim: usize, block_side: usize, levels: usize) -> Self {
        FlowSpec { dim, block_side, levels, max_dim: DEFAULT_MAX_DIM }
    }

    /// `T⁰_{N−k}`, where the level-`k` density lives.
    pub fn level_spec(&self, k: usize) -> LatticeSpec {
        LatticeSpec::torus(self.dim, self.block_side, 0, (self.levels - k) as i32)
    }

    /// `T^{-k}_{N−k}`, the fine lattice of the one-shot representation at level `k`.
    pub fn fine_spec(&self, k: usize) -> LatticeSpec {
        LatticeSpec::torus(self.dim, self.block_side, k as i32, (self.levels - k) as i32)
    }

    pub fn gamma(&self) -> f64 {
        scaling_exponent(self.dim)
    }

    pub fn log_l(&self) -> f64 {
        (self.block_side as f64).ln()
    }

    /// Number of bonds `b_M = dim·L^{dim·M}`.
    pub fn bonds(&self, m: usize) -> usize {
        self.dim * self.sites(m)
    }

    /// Number of sites `s_M = L^{dim·M}`.
    pub fn sites(&self, m: usize) -> usize {
        self.block_side.pow((self.dim * m) as u32)
    }

    /// `c_k = (b_N − b_{N−k}) − (s_N − s_{N−k})`.
    pub fn c(&self, k: usize) -> usize {
        let n = self.levels;
        (self.bonds(n) - self.bonds(n - k)) - (self.sites(n) - self.sites(n - k))
    }

    fn check(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidLattice("a flow needs at least one level".into()));
        }
        self.level_spec(0).validate()?;
        let n = self.bonds(self.levels);
        if n > self.max_dim {
            return Err(Error::ResourceCap { dim: n, cap: self.max_dim });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Recursion,
    OneShot,
}

/// `F₀`: either `1` or the exponential tilt `e^{⟨A,J⟩}`, whose linear term
/// carries the first-moment functional `⟨A,J⟩` through the flow.
#[derive(Clone, Debug)]
pub enum InitialFunctional {
    Unit,
    Linear(DVector<f64>),
}

#[derive(Clone, Debug)]
pub struct RGState {
    pub k: usize,
    pub flow: FlowSpec,
    pub density: QuadraticDensity,
    pub provenance: Provenance,
    /// Smallest eigenvalue of the integrated form on the fibre that produced this state.
    pub fibre_min_eig: Option<f64>,
    pub fibre_dim: Option<usize>,
}

impl RGState {
    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.flow.level_spec(self.k))
    }

    /// `‖F∂‖ / (‖F‖‖∂‖)`; zero for a gauge-invariant form.
    pub fn gauge_residual(&self) -> Result<f64> {
        if self.k == self.flow.levels {
            return Ok(0.0);
        }
        let g = grad_map(&self.lattice()?).matrix;
        let f = &self.density.form;
        let scale = f.norm() * g.norm();
        Ok(if scale == 0.0 { 0.0 } else { (f * &g).norm() / scale })
    }
}

/// `ρ₀(A) = F₀(A) exp(−½‖dA‖²)` on `T⁰_N`.
pub fn init_rho0(flow: FlowSpec, f0: &InitialFunctional) -> Result<RGState> {
    flow.check()?;
    let lat = Lattice::new(flow.level_spec(0))?;
    let d = ext_d_map(&lat).matrix;
    let form = linalg::symmetrize(&(d.transpose() * d));
    let linear = match f0 {
        InitialFunctional::Unit => DVector::zeros(lat.num_bonds()),
        InitialFunctional::Linear(j) => {
            if j.len() != lat.num_bonds() {
                return Err(Error::DimensionMismatch("J must be a bond field on the finest lattice".into()));
            }
            j.clone()
        }
    };
    Ok(RGState {
        k: 0,
        flow,
        density: QuadraticDensity::new(form, linear, 0.0)?,
        provenance: Provenance::Recursion,
        fibre_min_eig: None,
        fibre_dim: None,
    })
}

/// Constraint rows of the step out of the lattice `lat`: `(K_out, K_fix)`.
/// The last step has no output and fixes the toron average instead.
fn step_constraints(lat: &Lattice, last: bool) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let tau = averaging::tau_map(lat, 1)?.matrix;
    if last {
        let qt = averaging::q_toron_map(lat)?.matrix;
        Ok((DMatrix::zeros(0, lat.num_bonds()), stack_rows(&[&qt, &tau])))
    } else {
        Ok((averaging::q_bond_map(lat, 1)?.matrix, tau))
    }
}

fn rescale(density: QuadraticDensity, flow: &FlowSpec, k_next: usize) -> Result<QuadraticDensity> {
    let g = flow.gamma();
    let s = (flow.block_side as f64).powf(-g);
    QuadraticDensity::new(
        &density.form * (s * s),
        &density.linear * s,
        density.log_const + g * flow.c(k_next) as f64 * flow.log_l(),
    )
}

/// One blocking step `ρ_k ↦ ρ_{k+1}`.
pub fn rg_step(state: &RGState) -> Result<RGState> {
    let flow = state.flow;
    if state.k >= flow.levels {
        return Err(Error::InvalidLattice("flow already at its last level".into()));
    }
    let lat = state.lattice()?;
    let last = state.k + 1 == flow.levels;
    let (k_out, k_fix) = step_constraints(&lat, last)?;
    let pushed = push_constraint_detailed(&state.density, &k_out, &k_fix)?;
    Ok(RGState {
        k: state.k + 1,
        flow,
        density: rescale(pushed.density, &flow, state.k + 1)?,
        provenance: Provenance::Recursion,
        fibre_min_eig: Some(pushed.fibre_min_eig),
        fibre_dim: Some(pushed.fibre_dim),
    })
}

/// `ρ₀, ρ₁, …, ρ_N`.
pub fn run_flow(flow: FlowSpec, f0: &InitialFunctional) -> Result<Vec<RGState>> {
    let mut states = vec![init_rho0(flow, f0)?];
    for _ in 0..flow.levels {
        let next = rg_step(states.last().expect("nonempty"))?;
        states.push(next);
    }
    Ok(states)
}

/// `ρ_k(A_k) = ∫ δ(A_k − 𝒬_k𝒜) δˣ_k(𝒜) ρ_{0,L^{-k}}(𝒜) D𝒜` on `T^{-k}_{N−k}`;
/// for `k = N` the block constraint is replaced by `δ(𝒬•𝒜)` on the last coarse lattice.
pub fn one_shot_rho(flow: FlowSpec, k: usize, f0: &InitialFunctional) -> Result<RGState> {
    flow.check()?;
    if k > flow.levels {
        return Err(Error::InvalidLattice(format!("level {k} beyond {}", flow.levels)));
    }
    let fine = Lattice::new(flow.fine_spec(k))?;
    let w = fine.spec().volume_weight();
    let d = ext_d_map(&fine).matrix;
    let form = linalg::symmetrize(&(d.transpose() * d * w));
    // ⟨A₀, J⟩ with A₀ the field on T⁰_N whose raw values are L^{-kγ} those of 𝒜
    let linear = match f0 {
        InitialFunctional::Unit => DVector::zeros(fine.num_bonds()),
        InitialFunctional::Linear(j) => j * (flow.block_side as f64).powf(-(k as f64) * flow.gamma()),
    };
    let density = QuadraticDensity::new(form, linear, 0.0)?;
    let stack = averaging::axial_stack(&fine, k)?.matrix;
    let (k_out, k_fix) = if k == flow.levels {
        let qt = averaging::q_toron_after(&fine, k - 1)?.matrix;
        (DMatrix::zeros(0, fine.num_bonds()), stack_rows(&[&qt, &stack]))
    } else if k == 0 {
        (DMatrix::identity(fine.num_bonds(), fine.num_bonds()), stack)
    } else {
        (averaging::q_bond_map(&fine, k)?.matrix, stack)
    };
    let pushed = push_constraint_detailed(&density, &k_out, &k_fix)?;
    Ok(RGState {
        k,
        flow,
        density: pushed.density,
        provenance: Provenance::OneShot,
        fibre_min_eig: Some(pushed.fibre_min_eig),
        fibre_dim: Some(pushed.fibre_dim),
    })
}

/// Comparison of two states at the same level.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StateComparison {
    pub form: f64,
    pub linear: f64,
    pub log_const: f64,
}

pub fn compare_states(a: &RGState, b: &RGState) -> Result<StateComparison> {
    if a.k != b.k || a.density.dim() != b.density.dim() {
        return Err(Error::DimensionMismatch("states at different levels".into()));
    }
    Ok(StateComparison {
        form: linalg::rel_diff(&a.density.form, &b.density.form),
        linear: linalg::rel_diff_vec(a.density.linear.as_slice(), b.density.linear.as_slice()),
        log_const: a.density.log_const - b.density.log_const,
    })
}

/// One row of the flow trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowLevel {
    pub k: usize,
    pub dim_ambient: usize,
    #[serde(rename = "logZ_k")]
    pub log_z: f64,
    #[serde(rename = "logZf_k")]
    pub log_zf: Option<f64>,
    pub c_k: usize,
    pub min_eig_surface: Option<f64>,
    pub gauge_residual: f64,
}

/// `log Z^f` of a level-`k` form: `∫ δ(𝒬Z) δ(τZ) exp(−½⟨Z, F Z⟩) DZ`,
/// with `δ(𝒬•Z)` at the last level.
pub fn log_zf(form: &DMatrix<f64>, lat: &Lattice, last: bool) -> Result<f64> {
    let (k_out, k_fix) = step_constraints(lat, last)?;
    let surface = AffineSurface::homogeneous(stack_rows(&[&k_out, &k_fix]))?;
    let density = QuadraticDensity::centered(form.clone())?;
    SurfaceGaussian::new(&density, &surface)?.log_delta_integral()
}

/// Trace of a flow started from `F₀ = 1`.
pub fn flow_trace(states: &[RGState]) -> Result<Vec<FlowLevel>> {
    let mut out = Vec::with_capacity(states.len());
    for s in states {
        let flow = s.flow;
        let log_zf = if s.k < flow.levels {
            Some(log_zf(&s.density.form, &s.lattice()?, s.k + 1 == flow.levels)?)
        } else {
            None
        };
        out.push(FlowLevel {
            k: s.k,
            dim_ambient: s.density.dim(),
            log_z: s.density.log_const,
            log_zf,
            c_k: flow.c(s.k),
            min_eig_surface: s.fibre_min_eig,
            gauge_residual: s.gauge_residual()?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RGConstants {
    pub b: Vec<usize>,
    pub s: Vec<usize>,
    pub c: Vec<usize>,
    /// `log Z_k` from the one-shot integrals, `k = 0..=N`.
    pub log_z: Vec<f64>,
    /// `log Z^f_k` from `Δ_k` of the gauge context, `k = 0..N`.
    pub log_zf: Vec<f64>,
    /// `log Z_{k+1} − log Z_k − log Z^f_k − γ c_{k+1} log L`.
    pub recursion_residuals: Vec<f64>,
}

/// `Z_k` and `Z^f_k` computed independently of the iterated flow, and the
/// residuals of `Z_{k+1} = Z_k Z^f_k L^{γ c_{k+1}}`.
pub fn z_constants(flow: FlowSpec) -> Result<RGConstants> {
    flow.check()?;
    let n = flow.levels;
    let mut log_z = Vec::with_capacity(n + 1);
    for k in 0..=n {
        log_z.push(if k == 0 { 0.0 } else { one_shot_rho(flow, k, &InitialFunctional::Unit)?.density.log_const });
    }
    let mut log_zf = Vec::with_capacity(n);
    for k in 0..n {
        let ctx = GaugeContext::new(GaugeSpec { max_dim: flow.max_dim, ..GaugeSpec::new(flow.dim, flow.block_side, n, k) })?;
        log_zf.push(log_zf_of(&ctx, k + 1 == n)?);
    }
    let recursion_residuals = (0..n)
        .map(|k| log_z[k + 1] - log_z[k] - log_zf[k] - flow.gamma() * flow.c(k + 1) as f64 * flow.log_l())
        .collect();
    Ok(RGConstants {
        b: (0..=n).map(|m| flow.bonds(m)).collect(),
        s: (0..=n).map(|m| flow.sites(m)).collect(),
        c: (0..=n).map(|k| flow.c(k)).collect(),
        log_z,
        log_zf,
        recursion_residuals,
    })
}

fn log_zf_of(ctx: &GaugeContext, last: bool) -> Result<f64> {
    log_zf(&ctx.delta_k()?, &ctx.coarse, last)
}

/// Residuals of `ℋˣ_kHˣ_kA_{k+1,L} = (ℋˣ_{k+1}A_{k+1})_L`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CompositionCheck {
    /// Relative residual of the two sides as maps of `A_{k+1}`.
    pub identity: f64,
    /// Relative residual of a linear functional transported both ways.
    pub functional: f64,
}

/// `Hˣ_k`: minimizer of `⟨A_k, Δ_kA_k⟩` on `{𝒬A_k = A', τA_k = 0}`.
pub fn h_axial_coarse(ctx: &GaugeContext) -> Result<DMatrix<f64>> {
    let c = ctx.coarse_ops()?;
    minimizer_map(&ctx.delta_k()?, &c.q, &c.tau)
}

pub fn minimizer_composition_check(flow: FlowSpec, k: usize, probe: &DVector<f64>) -> Result<CompositionCheck> {
    if k + 1 >= flow.levels {
        return Err(Error::InvalidLattice("composition needs level k+1 below the last".into()));
    }
    let spec = |k| GaugeSpec { max_dim: flow.max_dim, ..GaugeSpec::new(flow.dim, flow.block_side, flow.levels, k) };
    let ctx_k = GaugeContext::new(spec(k))?;
    let ctx_k1 = GaugeContext::new(spec(k + 1))?;
    let s = (flow.block_side as f64).powf(-flow.gamma());
    // left: ℋˣ_k Hˣ_k (s·A); right: s·ℋˣ_{k+1} A, raw values on the common index set
    let left = ctx_k.h_axial()? * h_axial_coarse(&ctx_k)? * s;
    let right = ctx_k1.h_axial()? * s;
    let identity = linalg::rel_diff(&left, &right);
    if probe.len() != ctx_k.fine.num_bonds() {
        return Err(Error::DimensionMismatch("probe must be a fine bond field".into()));
    }
    // F_k(𝒜) = ⟨𝒜, J⟩ on T^{-k}; F_{k+1}(𝒜'') = F_k(𝒜''_L)
    let fl = left.transpose() * probe;
    let fr = right.transpose() * probe;
    let functional = linalg::rel_diff_vec(fl.as_slice(), fr.as_slice());
    Ok(CompositionCheck { identity, functional })
}

/// Transport of `F_k(𝒜) = ⟨𝒜, J⟩` and `⟨𝒜, J⟩²` through one fluctuation integral.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FluctuationMoments {
    /// `F_{k+1}(𝒜) − F_k(𝒜_L)` for the linear functional; zero since the Gaussian is centered.
    pub mean_shift: f64,
    /// `E⟨ℋˣZ, J⟩²` with `Z` on `{𝒬Z = 0, τZ = 0}`.
    pub variance_z: f64,
    /// `E⟨ℋ_kCC_k^{1/2}W̃, J⟩²` with `W̃` standard normal.
    pub variance_w: f64,
    /// Normalization `log(∫ … / Z^f_k)` for `F_k = 1`.
    pub log_norm: f64,
}

/// `J` is a fine bond field on `T^{-k}_{N−k}`, paired with the weighted inner product.
/// It should be co-closed so that `F_k` is gauge invariant.
pub fn fluctuation_step(ctx: &GaugeContext, j: &DVector<f64>) -> Result<FluctuationMoments> {
    if j.len() != ctx.fine.num_bonds() {
        return Err(Error::DimensionMismatch("J must be a fine bond field".into()));
    }
    let jw = j * ctx.weight;
    let delta = ctx.delta_k()?;
    let surface = ctx.fluctuation_surface()?;
    let density = QuadraticDensity::centered(delta.clone())?;
    let sg = SurfaceGaussian::new(&density, &surface)?;
    let hx = ctx.h_axial()?;
    let a = hx.transpose() * &jw;
    let mean_shift = sg.minimizer().dot(&a);
    let variance_z = a.dot(&(sg.covariance() * &a));

    let c = &ctx.fluctuation()?.c_matrix;
    let root = ctx.ck_sqrt_spectral()?;
    let b = root.transpose() * c.transpose() * ctx.h_feynman()?.transpose() * &jw;
    let variance_w = b.norm_squared();

    let zf = sg.log_delta_integral()?;
    let log_norm = gaussian::log_partition(&density, &surface)? - 0.5 * surface.log_det_gram()? - zf;
    Ok(FluctuationMoments { mean_shift, variance_z, variance_w, log_norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting() {
        let f = FlowSpec::new(3, 3, 1);
        assert_eq!(f.c(1), 52);
        let f2 = FlowSpec::new(2, 3, 3);
        assert!((0..3).all(|k| f2.c(k) < f2.c(k + 1)));
        assert_eq!(f2.c(0), 0);
        for k in 1..=2 {
            let s = one_shot_rho(FlowSpec::new(2, 3, 2), k, &InitialFunctional::Unit).unwrap();
            assert_eq!(s.fibre_dim, Some(FlowSpec::new(2, 3, 2).c(k)));
        }
    }

    #[test]
    fn rho0_is_the_plaquette_action() {
        let s = init_rho0(FlowSpec::new(2, 3, 1), &InitialFunctional::Unit).unwrap();
        assert_eq!(s.density.dim(), 18);
        assert!(s.gauge_residual().unwrap() < 1e-12);
    }

    #[test]
    fn resource_cap() {
        let f = FlowSpec { max_dim: 100, ..FlowSpec::new(2, 3, 2) };
        assert!(matches!(init_rho0(f, &InitialFunctional::Unit), Err(Error::ResourceCap { .. })));
    }

    #[test]
    fn iterated_matches_one_shot() {
        let flow = FlowSpec::new(2, 3, 2);
        let states = run_flow(flow, &InitialFunctional::Unit).unwrap();
        for k in 1..=2 {
            let one = one_shot_rho(flow, k, &InitialFunctional::Unit).unwrap();
            let c = compare_states(&states[k], &one).unwrap();
            assert!(c.form < 1e-9, "k={k}: {c:?}");
            assert!(c.log_const.abs() < 1e-8, "k={k}: {c:?}");
        }
        for s in &states {
            assert!(s.gauge_residual().unwrap() < 1e-9);
        }
    }

    #[test]
    fn z_recursion() {
        let z = z_constants(FlowSpec::new(2, 3, 2)).unwrap();
        for r in &z.recursion_residuals {
            assert!(r.abs() < 1e-8, "{z:?}");
        }
    }

    #[test]
    fn composition() {
        let flow = FlowSpec::new(2, 3, 2);
        let probe = DVector::from_fn(162, |i, _| ((i * 37) % 11) as f64 - 5.0);
        let c = minimizer_composition_check(flow, 0, &probe).unwrap();
        assert!(c.identity < 1e-8 && c.functional < 1e-8, "{c:?}");
    }
}
