//! Exact Gaussian integration over affine constraint surfaces.
//!
//! A density is `c · exp(−½⟨v, F v⟩ + ⟨j, v⟩)` in raw field coordinates with the
//! plain Euclidean pairing; callers fold lattice weights into `F` and `j`.
//! Surfaces `{K v = b}` carry an orthonormal kernel basis, and integrals over a
//! surface use the Lebesgue measure that basis induces. Delta functions
//! `δ(K v − b)` add the coarea factor `det(K Kᵀ)^{-1/2}`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, kernel_basis, RANK_TOL};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct QuadraticDensity {
    pub form: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub log_const: f64,
}

impl QuadraticDensity {
    pub fn new(form: DMatrix<f64>, linear: DVector<f64>, log_const: f64) -> Result<Self> {
        if !form.is_square() || form.nrows() != linear.len() {
            return Err(Error::DimensionMismatch("form and linear term sizes".into()));
        }
        let asym = linalg::asymmetry(&form);
        if asym > 1e-12 {
            return Err(Error::DimensionMismatch(format!("form is not symmetric ({asym:e})")));
        }
        Ok(QuadraticDensity { form: linalg::symmetrize(&form), linear, log_const })
    }

    pub fn centered(form: DMatrix<f64>) -> Result<Self> {
        let n = form.nrows();
        Self::new(form, DVector::zeros(n), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.form.nrows()
    }

    /// `log_const − ½⟨v, F v⟩ + ⟨j, v⟩`.
    pub fn log_value(&self, v: &DVector<f64>) -> f64 {
        self.log_const - 0.5 * v.dot(&(&self.form * v)) + self.linear.dot(v)
    }
}

/// `{v : K v = b}` with an orthonormal kernel basis and one particular solution.
#[derive(Clone, Debug)]
pub struct AffineSurface {
    pub constraint: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub kernel: DMatrix<f64>,
    pub particular: DVector<f64>,
}

impl AffineSurface {
    pub fn new(constraint: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let kernel = kernel_basis(&constraint, RANK_TOL);
        Self::with_kernel(constraint, offset, kernel)
    }

    pub fn homogeneous(constraint: DMatrix<f64>) -> Result<Self> {
        let b = DVector::zeros(constraint.nrows());
        Self::new(constraint, b)
    }

    /// The whole space, no constraints.
    pub fn unconstrained(n: usize) -> Self {
        AffineSurface {
            constraint: DMatrix::zeros(0, n),
            offset: DVector::zeros(0),
            kernel: DMatrix::identity(n, n),
            particular: DVector::zeros(n),
        }
    }

    /// Surface with a caller-supplied orthonormal kernel basis.
    pub fn with_kernel(
        constraint: DMatrix<f64>,
        offset: DVector<f64>,
        kernel: DMatrix<f64>,
    ) -> Result<Self> {
        if constraint.nrows() != offset.len() || kernel.nrows() != constraint.ncols() {
            return Err(Error::DimensionMismatch("surface data sizes".into()));
        }
        let particular = linalg::min_norm_solve(&constraint, &offset, RANK_TOL);
        let s = AffineSurface { constraint, offset, kernel, particular };
        s.validate()?;
        Ok(s)
    }

    /// Parallel surface `{K v = b'}` sharing this kernel basis.
    pub fn translated(&self, offset: DVector<f64>) -> Result<Self> {
        Self::with_kernel(self.constraint.clone(), offset, self.kernel.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self.constraint.amax().max(1.0) * self.offset.amax().max(1.0);
        let res = (&self.constraint * &self.particular - &self.offset).amax();
        if res > 1e-10 * scale {
            return Err(Error::Inadmissible(format!("surface is empty (residual {res:e})")));
        }
        let m = self.kernel.ncols();
        let orth = (self.kernel.transpose() * &self.kernel - DMatrix::identity(m, m)).amax();
        if orth > 1e-12 * (m.max(1) as f64).sqrt().max(1.0) * 10.0 {
            return Err(Error::DimensionMismatch(format!("kernel basis not orthonormal ({orth:e})")));
        }
        let ann = (&self.constraint * &self.kernel).amax();
        if ann > 1e-10 * self.constraint.amax().max(1.0) {
            return Err(Error::DimensionMismatch(format!("kernel basis not in ker K ({ann:e})")));
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn dim(&self) -> usize {
        self.kernel.ncols()
    }

    /// `log det(K Kᵀ)`, the coarea factor of `δ(K v − b)`; requires full row rank.
    pub fn log_det_gram(&self) -> Result<f64> {
        if self.constraint.nrows() == 0 {
            return Ok(0.0);
        }
        let gram = &self.constraint * self.constraint.transpose();
        linalg::logdet_spd(&gram).map_err(|_| {
            Error::SingularOperator("constraint map is not surjective; delta function undefined".into())
        })
    }
}

/// A density restricted to a surface, with the reduced form factored once.
pub struct SurfaceGaussian<'a> {
    pub density: &'a QuadraticDensity,
    pub surface: &'a AffineSurface,
    reduced: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl<'a> SurfaceGaussian<'a> {
    pub fn new(density: &'a QuadraticDensity, surface: &'a AffineSurface) -> Result<Self> {
        if density.dim() != surface.ambient_dim() {
            return Err(Error::DimensionMismatch("density and surface live on different spaces".into()));
        }
        let n = &surface.kernel;
        let reduced = linalg::symmetrize(&(n.transpose() * &density.form * n));
        let chol = if reduced.nrows() == 0 { None } else { Some(linalg::cholesky(&reduced)?) };
        Ok(SurfaceGaussian { density, surface, reduced, chol })
    }

    /// Reduced form `NᵀFN` in kernel coordinates.
    pub fn reduced_form(&self) -> &DMatrix<f64> {
        &self.reduced
    }

    fn reduced_solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => DMatrix::zeros(0, rhs.ncols()),
        }
    }

    /// Smallest eigenvalue of the reduced form.
    pub fn min_eig(&self) -> f64 {
        linalg::min_eigenvalue(&self.reduced)
    }

    pub fn minimizer(&self) -> DVector<f64> {
        let n = &self.surface.kernel;
        let p = &self.surface.particular;
        let g = n.transpose() * (&self.density.linear - &self.density.form * p);
        let c = self.reduced_solve(&DMatrix::from_column_slice(g.len(), 1, g.as_slice()));
        p + n * c.column(0)
    }

    /// Relative first-order optimality residual `‖Nᵀ(F v − j)‖ / ‖Nᵀ j‖ + ‖F‖‖v‖`.
    pub fn optimality_residual(&self, v: &DVector<f64>) -> f64 {
        let n = &self.surface.kernel;
        let r = n.transpose() * (&self.density.form * v - &self.density.linear);
        let scale = self.density.form.amax() * v.amax() + self.density.linear.amax();
        if scale == 0.0 {
            r.amax()
        } else {
            r.amax() / scale
        }
    }

    pub fn log_det_reduced(&self) -> f64 {
        match &self.chol {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => 0.0,
        }
    }

    /// Log of the integral over the surface with its own Lebesgue measure.
    pub fn log_partition(&self) -> f64 {
        let m = self.surface.dim() as f64;
        let v = self.minimizer();
        0.5 * m * LOG_2PI - 0.5 * self.log_det_reduced() + self.density.log_value(&v)
    }

    /// Log of `∫ δ(K v − b) ρ(v) dv`.
    pub fn log_delta_integral(&self) -> Result<f64> {
        Ok(self.log_partition() - 0.5 * self.surface.log_det_gram()?)
    }

    /// Ambient covariance `N (NᵀFN)⁻¹ Nᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = &self.surface.kernel;
        let inv = self.reduced_solve(&n.transpose());
        linalg::symmetrize(&(n * inv))
    }

    /// `log E[e^{⟨v, J⟩}] = ⟨mean, J⟩ + ½⟨J, Cov J⟩`.
    pub fn moment_generating(&self, j: &DVector<f64>) -> f64 {
        let n = &self.surface.kernel;
        let nj = n.transpose() * j;
        let c = self.reduced_solve(&DMatrix::from_column_slice(nj.len(), 1, nj.as_slice()));
        self.minimizer().dot(j) + 0.5 * nj.dot(&c.column(0))
    }
}

pub fn constrained_minimize(density: &QuadraticDensity, surface: &AffineSurface) -> Result<DVector<f64>> {
    Ok(SurfaceGaussian::new(density, surface)?.minimizer())
}

pub fn log_partition(density: &QuadraticDensity, surface: &AffineSurface) -> Result<f64> {
    Ok(SurfaceGaussian::new(density, surface)?.log_partition())
}

pub fn subspace_covariance(density: &QuadraticDensity, surface: &AffineSurface) -> Result<DMatrix<f64>> {
    Ok(SurfaceGaussian::new(density, surface)?.covariance())
}

pub fn moment_generating(
    density: &QuadraticDensity,
    surface: &AffineSurface,
    j: &DVector<f64>,
) -> Result<f64> {
    Ok(SurfaceGaussian::new(density, surface)?.moment_generating(j))
}

/// Smallest eigenvalue of the form restricted to the kernel of `k`.
pub fn min_eig_on_kernel(form: &DMatrix<f64>, kernel: &DMatrix<f64>) -> f64 {
    linalg::min_eigenvalue(&(kernel.transpose() * form * kernel))
}

/// Integrate a density over the fibres `{K_out v = A', K_fix v = 0}`:
///
/// `ρ'(A') = ∫ δ(A' − K_out v) δ(K_fix v) ρ(v) dv`,
///
/// returned as a density in `A'`. The fibres are parallel, so one reduced
/// factorization serves all of them.
pub fn push_constraint(
    density: &QuadraticDensity,
    k_out: &DMatrix<f64>,
    k_fix: &DMatrix<f64>,
) -> Result<QuadraticDensity> {
    Ok(push_constraint_detailed(density, k_out, k_fix)?.density)
}

/// Result of [`push_constraint_detailed`].
#[derive(Clone, Debug)]
pub struct Pushed {
    pub density: QuadraticDensity,
    /// Dimension of each fibre.
    pub fibre_dim: usize,
    /// Smallest eigenvalue of the form restricted to a fibre.
    pub fibre_min_eig: f64,
}

/// [`push_constraint`] together with fibre data.
pub fn push_constraint_detailed(
    density: &QuadraticDensity,
    k_out: &DMatrix<f64>,
    k_fix: &DMatrix<f64>,
) -> Result<Pushed> {
    let n = density.dim();
    if k_out.ncols() != n || k_fix.ncols() != n {
        return Err(Error::DimensionMismatch("constraint maps and density sizes".into()));
    }
    let r_out = k_out.nrows();
    let k = crate::field::stack_rows(&[k_out, k_fix]);
    let gram = &k * k.transpose();
    let gram_chol = linalg::cholesky(&gram).map_err(|_| {
        Error::SingularOperator("fibre constraints are not surjective".into())
    })?;
    let log_det_gram = 2.0 * gram_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    // minimum-norm right inverse restricted to the output block
    let mut sel = DMatrix::zeros(k.nrows(), r_out);
    for i in 0..r_out {
        sel[(i, i)] = 1.0;
    }
    let p = k.transpose() * gram_chol.solve(&sel);

    let b = kernel_basis(&k, RANK_TOL);
    let f = &density.form;
    let fb = f * &b;
    let m = linalg::symmetrize(&(b.transpose() * &fb));
    let (m_chol, log_det_m) = if m.nrows() == 0 {
        (None, 0.0)
    } else {
        let c = linalg::cholesky(&m)?;
        let ld = 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        (Some(c), ld)
    };
    let solve = |rhs: &DMatrix<f64>| match &m_chol {
        Some(c) => c.solve(rhs),
        None => DMatrix::zeros(0, rhs.ncols()),
    };

    let btfp = fb.transpose() * &p;
    let bt_j = b.transpose() * &density.linear;
    let minv_btfp = solve(&btfp);
    let minv_btj = solve(&DMatrix::from_column_slice(bt_j.len(), 1, bt_j.as_slice()));

    let form = p.transpose() * f * &p - btfp.transpose() * &minv_btfp;
    let linear = p.transpose() * &density.linear - btfp.transpose() * minv_btj.column(0);
    let log_const = density.log_const + 0.5 * b.ncols() as f64 * LOG_2PI - 0.5 * log_det_m
        + 0.5 * bt_j.dot(&minv_btj.column(0))
        - 0.5 * log_det_gram;
    let fibre_min_eig = if m.nrows() == 0 { f64::INFINITY } else { linalg::min_eigenvalue(&m) };
    Ok(Pushed {
        density: QuadraticDensity::new(linalg::symmetrize(&form), linear, log_const)?,
        fibre_dim: b.ncols(),
        fibre_min_eig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_partition() {
        let d = QuadraticDensity::centered(DMatrix::from_element(1, 1, 4.0)).unwrap();
        let s = AffineSurface::unconstrained(1);
        let lp = log_partition(&d, &s).unwrap();
        assert!((lp - 0.5 * (2.0 * std::f64::consts::PI / 4.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn unconstrained_minimizer() {
        let f = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let j = DVector::from_vec(vec![1.0, -1.0]);
        let d = QuadraticDensity::new(f.clone(), j.clone(), 0.0).unwrap();
        let v = constrained_minimize(&d, &AffineSurface::unconstrained(2)).unwrap();
        let want = f.lu().solve(&j).unwrap();
        assert!((v - want).amax() < 1e-14);
    }

    #[test]
    fn homogeneous_minimum_is_zero() {
        let d = QuadraticDensity::centered(DMatrix::identity(3, 3)).unwrap();
        let k = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let s = AffineSurface::homogeneous(k).unwrap();
        assert!(constrained_minimize(&d, &s).unwrap().amax() < 1e-15);
        let cov = subspace_covariance(&d, &s).unwrap();
        assert!((&s.constraint * &cov).amax() < 1e-14);
    }

    #[test]
    fn indefinite_is_reported() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let d = QuadraticDensity::centered(f).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let s = AffineSurface::homogeneous(k).unwrap();
        match SurfaceGaussian::new(&d, &s) {
            Err(Error::IndefiniteOnSurface { min_eig }) => assert!(min_eig < 0.0),
            _ => panic!("expected IndefiniteOnSurface"),
        }
    }

    #[test]
    fn push_of_independent_block() {
        // ρ(x, y) = exp(−½(x² + 2y²)); integrate δ(a − x): ρ'(a) = exp(−a²/2)·sqrt(2π/2)
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let d = QuadraticDensity::centered(f).unwrap();
        let out = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let fix = DMatrix::zeros(0, 2);
        let r = push_constraint(&d, &out, &fix).unwrap();
        assert!((r.form[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((r.log_const - 0.5 * (std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn push_matches_surface_integral() {
        let f = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.5]);
        let j = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let d = QuadraticDensity::new(f, j, 0.7).unwrap();
        let out = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 0.0]);
        let fix = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0]);
        let pushed = push_constraint(&d, &out, &fix).unwrap();
        for a in [0.0, 0.4, -1.3] {
            let k = crate::field::stack_rows(&[&out, &fix]);
            let s = AffineSurface::new(k, DVector::from_vec(vec![a, 0.0])).unwrap();
            let direct = SurfaceGaussian::new(&d, &s).unwrap().log_delta_integral().unwrap();
            let via = pushed.log_value(&DVector::from_element(1, a));
            assert!((direct - via).abs() < 1e-12, "{direct} vs {via}");
        }
    }
}
