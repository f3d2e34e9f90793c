use caxial::field::{
    codiff_bond, codiff_plaquette, ext_d, gauge_transform, grad, inner_bond, inner_plaquette, inner_scalar,
    scale_field, BondField, PlaquetteField, ScalarField,
};
use caxial::lattice::{Boundary, Lattice};
use serde_json::json;

use super::geometry::suite_lattice;
use super::{diff_norm, norm, Builder};
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured};

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let spec = suite_lattice(inst, b.cfg.boundary);
    let tol = b.tol();

    b.push(Check::new("calculus.d_grad", "d∘∂ = 0", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(spec)?;
        let l = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
        let g = grad(&lat, &l)?;
        let dg = ext_d(&lat, &g)?;
        let scale = norm(&g.values) / spec.spacing();
        Ok(Measured::new(norm(&dg.values) / scale))
    }));

    b.push(Check::new("calculus.adjoint_grad", "⟨∂λ, A⟩ = ⟨λ, δA⟩", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(spec)?;
        let l = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
        let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
        let g = grad(&lat, &l)?;
        let lhs = inner_bond(&g, &a)?;
        let rhs = inner_scalar(&l, &codiff_bond(&lat, &a)?)?;
        let scale = inner_bond(&g, &g)?.sqrt() * inner_bond(&a, &a)?.sqrt();
        Ok(Measured::with((lhs - rhs).abs() / scale, json!({ "lhs": lhs, "rhs": rhs })))
    }));

    b.push(Check::new("calculus.adjoint_d", "⟨dA, P⟩ = ⟨A, δP⟩", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(spec)?;
        let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
        let p = PlaquetteField::from_values(&lat, env.probe_vec(lat.num_plaquettes()))?;
        let da = ext_d(&lat, &a)?;
        let lhs = inner_plaquette(&da, &p)?;
        let rhs = inner_bond(&a, &codiff_plaquette(&lat, &p)?)?;
        let scale = inner_plaquette(&da, &da)?.sqrt() * inner_plaquette(&p, &p)?.sqrt();
        Ok(Measured::with((lhs - rhs).abs() / scale, json!({ "lhs": lhs, "rhs": rhs })))
    }));

    b.push(Check::new("calculus.gauge_invariance", "d(A + ∂λ) = dA", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(spec)?;
        let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
        let l = ScalarField::from_values(&lat, env.probe_vec(lat.num_sites()))?;
        let da = ext_d(&lat, &a)?;
        let db = ext_d(&lat, &gauge_transform(&lat, &a, &l)?)?;
        Ok(Measured::new(diff_norm(&da.values, &db.values) / norm(&da.values)))
    }));

    b.push(Check::new("calculus.scale_invariance", "‖dA_{L^{-1}}‖² = ‖dA‖²", &label, Bound::AtMost, tol, 0, move |env| {
        let lat = Lattice::new(spec)?;
        let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
        let s = scale_field(&a, 1);
        let fine = Lattice::new(s.spec)?;
        let (n0, n1) = (ext_d(&lat, &a)?, ext_d(&fine, &s)?);
        let e0 = inner_plaquette(&n0, &n0)?;
        let e1 = inner_plaquette(&n1, &n1)?;
        Ok(Measured::with((e0 - e1).abs() / e0, json!({ "action": e0, "rescaled_action": e1 })))
    }));

    if spec.boundary == Boundary::Torus {
        b.push(Check::new("calculus.stokes", "Σ dA = 0 over the torus", &label, Bound::AtMost, tol, 0, move |env| {
            let lat = Lattice::new(spec)?;
            let a = BondField::from_values(&lat, env.probe_vec(lat.num_bonds()))?;
            let da = ext_d(&lat, &a)?;
            let total: f64 = da.values.iter().sum();
            let abs: f64 = da.values.iter().map(|v| v.abs()).sum();
            Ok(Measured::new(total.abs() / abs))
        }));
    }
}
