use caxial::linalg::rel_diff;
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured};

/// Node counts `25·2^j` up to `max`, always ending at `max`.
pub fn node_schedule(max: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut n = 25;
    while n < max {
        v.push(n);
        n *= 2;
    }
    v.push(max);
    v
}

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let k = inst.probe_level();
    let cost = inst.fine_bonds();
    let ctx = b.gauge(inst, k);

    let c = ctx.clone();
    b.push(Check::new(format!("sqrt.spectral_square[k={k}]"), "(C_k^{1/2})² = C_k", &label, Bound::AtMost, tol, cost, move |_| {
        let c = c.get()?;
        let s = c.ck_sqrt_spectral()?;
        Ok(Measured::new(rel_diff(&(&s * &s), &c.c_k()?)))
    }));

    let npoints = b.cfg.npoints;
    let sqrt_tol = b.cfg.tolerances.sqrt_tol;
    b.push(Check::new(format!("sqrt.quadrature[k={k}]"), "quadrature representation of C_k^{1/2}", &label, Bound::AtMost, sqrt_tol, cost, move |_| {
        let c = ctx.get()?;
        let spectral = c.ck_sqrt_spectral()?;
        let nodes = node_schedule(npoints);
        let mut errors = Vec::with_capacity(nodes.len());
        for &n in &nodes {
            errors.push(rel_diff(&c.ck_sqrt_quadrature(n)?, &spectral));
        }
        // observed order log2(e_n / e_2n) between consecutive doublings
        let orders: Vec<Option<f64>> = errors
            .windows(2)
            .zip(nodes.windows(2))
            .map(|(e, n)| {
                let ratio = (n[1] as f64 / n[0] as f64).log2();
                (e[0] > 0.0 && e[1] > 0.0).then(|| (e[0] / e[1]).log2() / ratio)
            })
            .collect();
        let last = *errors.last().expect("at least one node count");
        Ok(Measured::with(last, json!({ "nodes": nodes, "errors": errors, "orders": orders })))
    }));
}
