//! Dense linear-algebra helpers shared by the Gaussian and operator modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `RANK_TOL · σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Orthonormal basis of the numerical null space of `k`, as columns.
///
/// The row space is taken from a thin SVD; its orthogonal complement is then
/// produced by applying the Householder reflectors of that basis to the trailing
/// unit vectors, which makes the result deterministic.
pub fn kernel_basis(k: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = k.ncols();
    let row_space = row_space_basis(k, tol);
    orthogonal_complement(&row_space, n)
}

/// Orthonormal basis of the row space of `k` (columns of length `k.ncols()`).
pub fn row_space_basis(k: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = k.ncols();
    if k.nrows() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    // The thin SVD is taken on the tall orientation, where it is markedly faster.
    let (basis, sv) = if k.nrows() < n {
        let svd = k.transpose().svd(true, false);
        (svd.u.expect("requested U"), svd.singular_values)
    } else {
        let svd = k.clone().svd(false, true);
        (svd.v_t.expect("requested V^T").transpose(), svd.singular_values)
    };
    let smax = sv.max();
    if smax == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > tol * smax).collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.column_mut(c).copy_from(&basis.column(i));
    }
    out
}

pub fn numerical_rank(k: &DMatrix<f64>, tol: f64) -> usize {
    if k.nrows() == 0 || k.ncols() == 0 {
        return 0;
    }
    let sv = k.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Smallest and largest singular values.
pub fn singular_range(k: &DMatrix<f64>) -> (f64, f64) {
    let sv = k.singular_values();
    (sv.min(), sv.max())
}

/// Columns spanning the orthogonal complement of the orthonormal columns `v`.
///
/// With `Q = H_1⋯H_r = I − W T Wᵀ` the Householder factor of `v`, the
/// complement is `Q[:, r..]`.
pub fn orthogonal_complement(v: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let r = v.ncols();
    let mut work = v.clone();
    let mut w = DMatrix::zeros(n, r);
    let mut betas = vec![0.0; r];
    for j in 0..r {
        let mut u = DVector::zeros(n);
        u.rows_mut(j, n - j).copy_from(&work.view((j, j), (n - j, 1)));
        let alpha = u.norm();
        u[j] += if u[j] >= 0.0 { alpha } else { -alpha };
        let unorm2 = u.norm_squared();
        if unorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / unorm2;
        let uj = u.rows(j, n - j).clone_owned();
        let mut tail = work.view_mut((j, j), (n - j, r - j));
        let proj = tail.tr_mul(&uj);
        tail.ger(-beta, &uj, &proj, 1.0);
        w.set_column(j, &u);
        betas[j] = beta;
    }
    let mut t = DMatrix::zeros(r, r);
    for j in 0..r {
        if j > 0 {
            let wtv = w.columns(0, j).tr_mul(&w.column(j));
            let z = t.view((0, 0), (j, j)) * wtv * (-betas[j]);
            t.view_mut((0, j), (j, 1)).copy_from(&z);
        }
        t[(j, j)] = betas[j];
    }
    let mut e = DMatrix::zeros(n, n - r);
    for c in 0..n - r {
        e[(r + c, c)] = 1.0;
    }
    let lower = w.rows(r, n - r).transpose();
    e -= &w * (t * lower);
    e
}

/// Minimum-norm solution of `k v = b` by the truncated pseudo-inverse.
pub fn min_norm_solve(k: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    if k.nrows() == 0 {
        return DVector::zeros(k.ncols());
    }
    // nalgebra's SVD loses accuracy on wide matrices, so factor the tall orientation.
    if k.nrows() < k.ncols() {
        let svd = k.transpose().svd(true, true);
        let (u, vt, sv) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"), svd.singular_values);
        let cut = tol * sv.max();
        let mut coeff = vt * b;
        for i in 0..sv.len() {
            coeff[i] = if sv[i] > cut { coeff[i] / sv[i] } else { 0.0 };
        }
        return u * coeff;
    }
    let svd = k.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, tol * smax).expect("both factors computed")
}

/// Symmetric eigen-decomposition with eigenvalues in ascending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(m);
    let e = sym.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| e.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.column_mut(c).copy_from(&e.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖m − mᵀ‖_F / ‖m‖_F`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / n
    }
}

/// Cholesky factor of a positive definite matrix, or the smallest eigenvalue on failure.
pub fn cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::IndefiniteOnSurface { min_eig: min_eigenvalue(m) })
}

pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky(m)?;
    Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `m⁻¹ b` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(m)?.solve(b))
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m)?.inverse()))
}

/// General solve by LU; errors if singular.
pub fn lu_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularOperator(what.to_string()))
}

/// `‖a − b‖_F / max(‖b‖_F, floor)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm().max(a.norm());
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

pub fn rel_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = na.max(nb);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Spectral norm via the largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    symmetrize(&(&vecs * d * vecs.transpose()))
}

/// Conjugate gradients for a symmetric positive definite operator given by its action.
/// Returns the solution and the iteration count; fails if `‖r‖ ≤ tol‖b‖` is not reached.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let bn = b.norm();
    let mut x = DVector::zeros(b.len());
    if bn == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 1..=max_iter {
        let ap = apply(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.norm_squared();
        if rr_new.sqrt() <= tol * bn {
            return Ok((x, it));
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Err(Error::SingularOperator(format!(
        "conjugate gradients did not reach {tol:e} in {max_iter} iterations"
    )))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
