use caxial::field::{ext_d, inner_plaquette, BondField};
use caxial::gauge::{pure_gauge_residual, MatrixFreeProjection};
use caxial::lattice::Lattice;
use caxial::linalg::rel_diff;
use caxial::rg::minimizer_composition_check;
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured, Shared};

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let k = inst.probe_level();
    let cost = inst.fine_bonds();
    let ctx = b.gauge(inst, k);
    let tag = |name: &str| format!("feynman_landau.{name}[k={k}]");

    let alphas = b.cfg.alpha_list.clone();
    if alphas.len() >= 2 {
        let c = ctx.clone();
        let spec = b.gauge_spec(inst, k);
        b.push(Check::new(tag("alpha_independence"), "ℋ_k does not depend on α", &label, Bound::AtMost, tol, cost, move |_| {
            let h0 = c.get()?.h_feynman()?.clone();
            let mut worst = 0.0f64;
            let mut per = Vec::new();
            for &alpha in alphas.iter().filter(|&&a| a != spec.alpha) {
                let other = caxial::gauge::GaugeContext::new(caxial::gauge::GaugeSpec { alpha, ..spec })?;
                let r = rel_diff(other.h_feynman()?, &h0);
                per.push(json!({ "alpha": alpha, "residual": r }));
                worst = worst.max(r);
            }
            Ok(Measured::with(worst, json!(per)))
        }));
    }

    let c = ctx.clone();
    b.push(Check::new(tag("pure_gauge"), "ℋˣ_k − ℋ_k is a gauge transformation", &label, Bound::AtMost, tol, cost, move |env| {
        let c = c.get()?;
        let a = env.probe(c.coarse.num_bonds());
        let hx = c.h_axial()? * &a;
        let v = &hx - c.h_feynman()? * &a;
        let r = pure_gauge_residual(&c.fine, &v)? * v.norm() / hx.norm();
        Ok(Measured::with(r, json!({ "difference_norm": v.norm() / hx.norm() })))
    }));

    let c = ctx.clone();
    b.push(Check::new(tag("axial_constraints"), "𝒬_kℋˣ_kA = A and τ𝒬_jℋˣ_kA = 0", &label, Bound::AtMost, tol, cost, move |env| {
        let c = c.get()?;
        let a = env.probe(c.coarse.num_bonds());
        let hx = c.h_axial()? * &a;
        let q = (&c.qb_k * &hx - &a).norm() / a.norm();
        let t = (&c.stack * &hx).norm() / hx.norm();
        let hf = c.h_feynman()? * &a;
        let f = (&c.qb_k * &hf - &a).norm() / a.norm();
        Ok(Measured::with(q.max(t).max(f), json!({ "q_axial": q, "tau": t, "q_feynman": f })))
    }));

    let c = ctx.clone();
    b.push(Check::new(tag("delta_agreement"), "Δ_k from the axial and Feynman minimizers agree", &label, Bound::AtMost, tol, cost, move |_| {
        let c = c.get()?;
        Ok(Measured::new(rel_diff(&c.delta_k()?, &c.delta_k_feynman()?)))
    }));

    let c = ctx.clone();
    b.push(Check::new(tag("minus_sign"), "the minus-sign gauge term gives the same Δ_k", &label, Bound::AtMost, tol, cost, move |_| {
        let c = c.get()?;
        let h = c.h_feynman_minus()?;
        let delta = caxial::linalg::symmetrize(&(h.transpose() * c.action_form() * &h));
        Ok(Measured::new(rel_diff(&delta, &c.delta_k()?)))
    }));

    let c = ctx.clone();
    b.push(Check::new(tag("delta_gauge_invariance"), "Δ_k∂ = 0", &label, Bound::AtMost, tol, cost, move |_| {
        let c = c.get()?;
        let g = caxial::field::grad_map(&c.coarse).matrix;
        let dk = c.delta_k()?;
        Ok(Measured::new((&dk * &g).norm() / (dk.norm() * g.norm())))
    }));

    let c = ctx.clone();
    b.push(Check::new(tag("delta_form"), "⟨A, Δ_kA⟩ = ‖dℋˣ_kA‖²", &label, Bound::AtMost, tol, cost, move |env| {
        let c = c.get()?;
        let a = env.probe(c.coarse.num_bonds());
        let lhs = a.dot(&(c.delta_k()? * &a));
        let field = BondField::from_values(&c.fine, (c.h_axial()? * &a).as_slice().to_vec())?;
        let da = ext_d(&c.fine, &field)?;
        let rhs = inner_plaquette(&da, &da)?;
        Ok(Measured::with((lhs - rhs).abs() / rhs, json!({ "form": lhs, "action": rhs })))
    }));

    let c = ctx.clone();
    b.push(Check::new(tag("lambda0"), "λ₀ solves Q_kλ = μ and R_kΔλ = 0", &label, Bound::AtMost, tol, cost, move |env| {
        let c = c.get()?;
        let mu = env.probe(c.q_k.nrows());
        let l0 = c.lambda0(&mu)?;
        let q = (&c.q_k * &l0 - &mu).norm() / mu.norm();
        let lap = -c.neg_laplacian();
        let lap_l0 = &lap * &l0;
        let r = (c.r_k()? * &lap_l0).norm() / lap_l0.norm().max(f64::MIN_POSITIVE);
        Ok(Measured::with(q.max(r), json!({ "q": q, "r": r })))
    }));

    let regs = b.cfg.a_list.clone();
    if regs.len() >= 2 {
        let ctxs: Vec<(f64, Shared<_>)> = regs.iter().map(|&a| (a, b.gauge_with(inst, k, a))).collect();
        b.push(Check::new(tag("r_regulator_independence"), "R_k does not depend on a", &label, Bound::AtMost, tol, cost, move |_| {
            // projectors are compared on the scale of the identity; R_0 = 0
            let r0 = ctxs[0].1.get()?.r_k()?.clone();
            let scale = (r0.nrows() as f64).sqrt();
            let mut worst = 0.0f64;
            for (_, c) in &ctxs[1..] {
                worst = worst.max((c.get()?.r_k()? - &r0).norm() / scale);
            }
            Ok(Measured::new(worst))
        }));
    }

    if inst.levels >= 2 {
        let flow = b.flow(inst);
        for kc in 0..inst.levels - 1 {
            b.push(Check::new(
                format!("feynman_landau.composition[k={kc}]"),
                "ℋˣ_kHˣ_kA_{k+1,L} = (ℋˣ_{k+1}A_{k+1})_L",
                &label,
                Bound::AtMost,
                tol,
                cost,
                move |env| {
                    let probe = env.probe(flow.bonds(flow.levels));
                    let c = minimizer_composition_check(flow, kc, &probe)?;
                    Ok(Measured::with(c.identity.max(c.functional), json!(c)))
                },
            ));
        }
    }

    projection_checks(b, inst);
}

/// `R_k² = R_k` and `Q_kG_kR_k = 0` at `k = N − 1`, dense within the cap and
/// matrix-free beyond it.
fn projection_checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let k = inst.levels - 1;
    if inst.fine_bonds() <= b.cfg.max_dim {
        let ctx = b.gauge(inst, k);
        let c = ctx.clone();
        b.push(Check::new(format!("feynman_landau.r_idempotent[k={k}]"), "R_k² = R_k", &label, Bound::AtMost, tol, 0, move |_| {
            let r = c.get()?.r_k()?;
            let scale = (r.nrows() as f64).sqrt();
            Ok(Measured::with((r * r - r).norm() / scale, json!({ "route": "dense", "rank": r.trace().round() })))
        }));
        b.push(Check::new(format!("feynman_landau.qgr_zero[k={k}]"), "Q_kG_kR_k = 0", &label, Bound::AtMost, tol, 0, move |_| {
            let c = ctx.get()?;
            let (q, g, r) = (&c.q_k, c.g_k()?, c.r_k()?);
            let scale = (q * g).norm();
            Ok(Measured::with((q * g * r).norm() / scale, json!({ "route": "dense" })))
        }));
    } else {
        let spec = b.gauge_spec(inst, k);
        let mf = Shared::new(move || {
            let fine = Lattice::new(spec.fine_spec())?;
            Ok(MatrixFreeProjection::new(fine, k, spec.a, 1e-14)?)
        });
        for (i, name, anchor) in [(1usize, "r_idempotent", "R_k² = R_k"), (0, "qgr_zero", "Q_kG_kR_k = 0")] {
            let mf = mf.clone();
            b.push(Check::new(format!("feynman_landau.{name}[k={k}]"), anchor, &label, Bound::AtMost, tol, 0, move |env| {
                let p = mf.get()?;
                let v = env.probe(p.fine.num_sites());
                let res = p.residuals(&v)?;
                Ok(Measured::with(res[i], json!({ "route": "matrix_free", "residuals": res })))
            }));
        }
    }
}
