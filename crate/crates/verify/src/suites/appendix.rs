use caxial::gauge::ChangeOfGauge;
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured, Shared};

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let rank_tol = b.cfg.tolerances.rank_tol;
    let k = inst.probe_level();
    let cost = inst.fine_bonds();
    let ctx = b.gauge(inst, k);
    let a_k = b.seeded_probe(&format!("appendix.a_k@{label}"), inst.dim * inst.block_side.pow((inst.dim * (inst.levels - k)) as u32));
    let cog: Shared<ChangeOfGauge> = Shared::new(move || Ok(ctx.get()?.change_of_gauge_check(&a_k)?));
    let id = |name: &str| format!("appendix.{name}[k={k}]");

    let c = cog.clone();
    b.push(Check::new(id("dimensions"), "coarse sites plus rank R_k equals fine sites", &label, Bound::AtMost, 0.0, cost, move |_| {
        let c = c.get()?;
        let mismatch = (c.coarse_sites + c.range_rank) as f64 - c.fine_sites as f64;
        Ok(Measured::with(mismatch.abs(), json!(c)))
    }));
    let c = cog.clone();
    b.push(Check::new(id("bijection"), "λ ↦ (Q_kλ, UᵀΔλ) is invertible", &label, Bound::Above, rank_tol, cost, move |_| {
        let c = c.get()?;
        Ok(Measured::with(1.0 / c.condition, json!({ "condition": c.condition })))
    }));
    let c = cog.clone();
    b.push(Check::new(id("moments_mean"), "Feynman and Landau Gaussians have the same mean", &label, Bound::AtMost, tol, cost, move |_| {
        Ok(Measured::new(c.get()?.mean_residual))
    }));
    b.push(Check::new(id("moments_covariance"), "Feynman and Landau Gaussians have the same covariance", &label, Bound::AtMost, tol, cost, move |_| {
        Ok(Measured::new(cog.get()?.cov_residual))
    }));
}
