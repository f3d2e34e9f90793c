use caxial::linalg::min_eigenvalue;
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured};

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let k = inst.probe_level();
    let cost = inst.fine_bonds();
    let mut xs = vec![0.0];
    xs.extend(b.cfg.x_list.iter().copied().filter(|&x| x != 0.0));

    for a in b.cfg.a_list.clone() {
        let ctx = b.gauge_with(inst, k, a);
        for &x in &xs {
            let c = ctx.clone();
            b.push(Check::new(
                format!("representation.identity[k={k},a={a},x={x}]"),
                "CC_{k,x}Cᵀ = (I + ∂𝓜)𝒬_kG̃_{k,x}𝒬_k^*(I + ∂𝓜)ᵀ",
                &label,
                Bound::AtMost,
                tol,
                cost,
                move |_| Ok(Measured::new(c.get()?.rep_check(x)?)),
            ));
        }
    }

    let ctx = b.gauge(inst, k);
    b.push(Check::new(format!("representation.c_positive[k={k}]"), "C_k is positive definite", &label, Bound::Above, 0.0, cost, move |_| {
        let c = ctx.get()?;
        let ck = c.c_k()?;
        let lo = min_eigenvalue(&ck);
        Ok(Measured::with(lo, json!({ "dim": ck.nrows() })))
    }));
}
