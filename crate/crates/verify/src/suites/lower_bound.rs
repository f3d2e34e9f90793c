use caxial::gauge::{block_poincare_constant, global_lower_bound};
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured};

/// Instance-independent checks, run once per `(dim, L)`.
pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = format!("d{}L{}", inst.dim, inst.block_side);
    let (dim, l) = (inst.dim, inst.block_side);
    let lf = l as f64;

    // dim·L^dim, which is 3L³ in three dimensions
    let block_bound = dim as f64 * lf.powi(dim as i32);
    b.push(Check::new(
        "lower_bound.block_poincare",
        "‖A‖² ≤ 3L³‖dA‖² on ker τ within a block",
        &label,
        Bound::AtMost,
        block_bound,
        dim * l.pow(dim as u32),
        move |_| Ok(Measured::new(block_poincare_constant(dim, l)?)),
    ));

    // Blocked once on the torus of side L², so that several blocks interact.
    let global_bound = 1.0 / (108.0 * lf.powi(4));
    b.push(Check::new(
        "lower_bound.global",
        "‖dA‖² + ‖𝒬A‖² ≥ (108L⁴)⁻¹‖A‖² on ker τ",
        &label,
        Bound::AtLeast,
        global_bound,
        dim * l.pow(2 * dim as u32),
        move |_| {
            let v = global_lower_bound(dim, l, 2)?;
            Ok(Measured::with(v, json!({ "margin": v / global_bound })))
        },
    ));
}
