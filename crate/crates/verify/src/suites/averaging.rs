use caxial::averaging::{m_operator, q_bond, q_scalar, q_scalar_adjoint, q_toron_map, tau, tau0_map, tau_map, tau_rows};
use caxial::field::{ext_d, ext_d_map, grad, stack_rows, BondField, ScalarField};
use caxial::lattice::{apply_symmetry, Lattice, LatticeSpec, LatticeSymmetry};
use serde_json::json;

use super::{diff_norm, inverse_condition, norm, rel, Builder};
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Env, Measured};

/// `Z = ∂λ + Σ c_μ e_μ`: a closed field with toron components.
fn closed_field(lat: &Lattice, env: &mut Env) -> anyhow::Result<BondField> {
    let l = ScalarField::from_values(lat, env.probe_vec(lat.num_sites()))?;
    let c = env.probe_vec(lat.dim());
    let mut z = grad(lat, &l)?;
    for (i, bond) in lat.bonds().iter().enumerate() {
        z.values[i] += c[bond.axis];
    }
    Ok(z)
}

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let rank_tol = b.cfg.tolerances.rank_tol;
    let (dim, l, levels) = (inst.dim, inst.block_side, inst.levels);
    // L^N sites per side with all N levels of blocks
    let finest = LatticeSpec::torus(dim, l, levels as i32, 0);
    let one_level = LatticeSpec::torus(dim, l, 1, levels as i32 - 1);
    let cube = LatticeSpec::unit_cube(dim, l);

    for n in 1..=levels {
        b.push(Check::new(format!("averaging.intertwining[n={n}]"), "𝒬∂ = ∂Q", &label, Bound::AtMost, tol, 0, move |env| {
            let lat = Lattice::new(finest)?;
            let coarse = lat.coarse_lattice(n)?;
            let lam = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
            let g = grad(&lat, &lam)?;
            let lhs = q_bond(&lat, &g, n)?;
            let rhs = grad(&coarse, &q_scalar(&lat, &lam, n)?)?;
            // scale by 𝒬|∂λ|: at n = N the coarse torus is one site and both sides vanish
            let abs = BondField::from_values(&lat, g.values.iter().map(|v| v.abs()).collect())?;
            let scale = norm(&q_bond(&lat, &abs, n)?.values);
            Ok(Measured::new(diff_norm(&lhs.values, &rhs.values) / scale))
        }));
    }

    if levels >= 2 {
        b.push(Check::new("averaging.composition", "𝒬_1∘𝒬_1 = 𝒬_2 and Q_1∘Q_1 = Q_2", &label, Bound::AtMost, tol, 0, move |env| {
            let lat = Lattice::new(finest)?;
            let mid = lat.coarse_lattice(1)?;
            let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
            let lam = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
            let bond = rel(&q_bond(&mid, &q_bond(&lat, &a, 1)?, 1)?.values, &q_bond(&lat, &a, 2)?.values);
            let scalar = rel(&q_scalar(&mid, &q_scalar(&lat, &lam, 1)?, 1)?.values, &q_scalar(&lat, &lam, 2)?.values);
            Ok(Measured::with(bond.max(scalar), json!({ "bond": bond, "scalar": scalar })))
        }));
    }

    b.push(Check::new("averaging.constants", "𝒬 and Q preserve constant fields", &label, Bound::AtMost, tol, 0, move |_| {
        let lat = Lattice::new(finest)?;
        let ones = BondField::from_values(&lat, vec![1.0; lat.num_bonds()])?;
        let q = q_bond(&lat, &ones, levels)?;
        let c = ScalarField::from_values(&lat, vec![1.0; lat.num_sites()])?;
        let s = q_scalar(&lat, &c, levels)?;
        let worst = q.values.iter().chain(&s.values).map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        Ok(Measured::new(worst))
    }));

    b.push(Check::new("averaging.stokes_closure", "d𝒬Z = 0 for closed Z", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(finest)?;
        let z = closed_field(&lat, env)?;
        let mut worst = 0.0f64;
        for n in 1..=levels {
            let coarse = lat.coarse_lattice(n)?;
            let qz = q_bond(&lat, &z, n)?;
            let dq = ext_d(&coarse, &qz)?;
            worst = worst.max(norm(&dq.values) / (norm(&qz.values) / coarse.spec().spacing()));
        }
        Ok(Measured::new(worst))
    }));

    b.push(Check::new("averaging.tau_covariance", "τ(rA)(x) = τA(r⁻¹x) under lattice symmetries", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(cube)?;
        let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
        let rows = tau_rows(&lat, 1)?;
        let t = tau(&lat, &a, 1)?;
        let scale = norm(&t);
        let mut worst = 0.0f64;
        for r in LatticeSymmetry::all(dim) {
            let tr = tau(&lat, &apply_symmetry(&r, &lat, &a)?, 1)?;
            let inv = r.inverse();
            for (i, &(_, x)) in rows.iter().enumerate() {
                let src = lat.site_index(&inv.apply_site(&lat.site(x))).expect("symmetry maps the cube to itself");
                let j = rows.iter().position(|&(_, xx)| xx == src).expect("every site has a row");
                worst = worst.max((tr[i] - t[j]).abs() / scale);
            }
        }
        Ok(Measured::new(worst))
    }));

    b.push(Check::new("averaging.tau_closed", "τ = τ⁰ on closed fields", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(cube)?;
        let l = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
        let g = grad(&lat, &l)?;
        let a = tau_map(&lat, 1)?.apply(&g.values)?;
        let b0 = tau0_map(&lat, 1)?.apply(&g.values)?;
        Ok(Measured::new(rel(&a, &b0)))
    }));

    b.push(Check::new("averaging.m_gradient", "𝓜∂ν = −ν when Qν = 0", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(one_level)?;
        let nu = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
        let back = q_scalar_adjoint(&lat, &q_scalar(&lat, &nu, 1)?, 1)?;
        let nu: Vec<f64> = nu.values.iter().zip(&back.values).map(|(x, y)| x - y).collect();
        let nu = ScalarField::from_values(&lat, nu)?;
        let mu = m_operator(&lat, &grad(&lat, &nu)?)?;
        let sum: Vec<f64> = mu.values.iter().zip(&nu.values).map(|(x, y)| x + y).collect();
        Ok(Measured::new(norm(&sum) / norm(&nu.values)))
    }));

    b.push(Check::new("averaging.m_equations", "τ(Z + ∂𝓜Z) = 0 and Q𝓜Z = 0", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(one_level)?;
        let z = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
        let mu = m_operator(&lat, &z)?;
        let g = grad(&lat, &mu)?;
        let sum = BondField::from_values(&lat, z.values.iter().zip(&g.values).map(|(a, b)| a + b).collect())?;
        let t = tau(&lat, &sum, 1)?;
        let tz = tau(&lat, &z, 1)?;
        let q = q_scalar(&lat, &mu, 1)?;
        let tau_res = norm(&t) / norm(&tz);
        let q_res = norm(&q.values) / norm(&mu.values);
        Ok(Measured::with(tau_res.max(q_res), json!({ "tau": tau_res, "q": q_res })))
    }));

    b.push(Check::new("averaging.q_adjoint", "Q^* is the weighted adjoint of Q", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(one_level)?;
        let coarse = lat.coarse_lattice(1)?;
        let nu = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
        let mu = ScalarField::from_values(&coarse, env.probe_vec(coarse.num_sites()))?;
        let lhs = coarse.spec().volume_weight() * dot(&q_scalar(&lat, &nu, 1)?.values, &mu.values);
        let rhs = lat.spec().volume_weight() * dot(&nu.values, &q_scalar_adjoint(&lat, &mu, 1)?.values);
        Ok(Measured::new((lhs - rhs).abs() / lhs.abs().max(rhs.abs())))
    }));

    // One torus of side L: a single block, where τ⁰ and 𝒬• together fix a closed field.
    let unit = LatticeSpec::torus(dim, l, 0, 1);
    b.push(Check::new("averaging.toron_closure", "ker(d; τ⁰; 𝒬•) = {0} on the torus", &label, Bound::Above, rank_tol, dim * l.pow(dim as u32), move |_| {
        let lat = Lattice::new(unit)?;
        let d = ext_d_map(&lat).matrix;
        let t0 = tau0_map(&lat, 1)?.matrix;
        let qt = q_toron_map(&lat)?.matrix;
        let m = stack_rows(&[&d, &t0, &qt]);
        let ic = inverse_condition(&m);
        Ok(Measured::with(ic, json!({ "rows": m.nrows(), "cols": m.ncols() })))
    }));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
