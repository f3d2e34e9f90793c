use caxial::averaging::{fadeev_popov_map, tau0_map, tau_map};
use caxial::field::{ext_d_map, stack_rows};
use caxial::lattice::{Lattice, LatticeSpec};
use serde_json::json;

use super::{inverse_condition, Builder};
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured};

pub(crate) fn checks(b: &mut Builder, inst: &Instance, first_for_block: bool) {
    let label = inst.label();
    let rank_tol = b.cfg.tolerances.rank_tol;
    let (dim, l, levels) = (inst.dim, inst.block_side, inst.levels);

    if first_for_block {
        let cube = LatticeSpec::unit_cube(dim, l);
        let cost = Lattice::new(cube).map(|c| c.num_bonds()).unwrap_or(0);
        for (name, anchor, averaged) in [
            ("gauge_surface.uniqueness_tau0", "dA = 0 and τ⁰A = 0 on the block imply A = 0", false),
            ("gauge_surface.uniqueness_tau", "dA = 0 and τA = 0 on the block imply A = 0", true),
        ] {
            b.push(Check::new(name, anchor, &label, Bound::Above, rank_tol, cost, move |_| {
                let lat = Lattice::new(cube)?;
                let d = ext_d_map(&lat).matrix;
                let t = if averaged { tau_map(&lat, 1)? } else { tau0_map(&lat, 1)? }.matrix;
                let m = stack_rows(&[&d, &t]);
                let ic = inverse_condition(&m);
                Ok(Measured::with(ic, json!({ "rows": m.nrows(), "cols": m.ncols() })))
            }));
        }
    }

    let fine = LatticeSpec::torus(dim, l, levels as i32, 0);
    let n = inst.fine_sites();
    b.push(Check::new("gauge_surface.fadeev_popov_square", "the change of variables is square of size L^{dim·N}", &label, Bound::AtMost, 0.0, n, move |_| {
        let lat = Lattice::new(fine)?;
        let m = fadeev_popov_map(&lat, levels)?;
        let bad = usize::from(m.nrows() != n) + usize::from(m.ncols() != n);
        Ok(Measured::with(bad as f64, json!({ "rows": m.nrows(), "cols": m.ncols(), "expected": n })))
    }));
    b.push(Check::new("gauge_surface.fadeev_popov_invertible", "the change of variables is non-singular", &label, Bound::Above, rank_tol, n, move |_| {
        let lat = Lattice::new(fine)?;
        let m = fadeev_popov_map(&lat, levels)?;
        let ic = inverse_condition(&m);
        Ok(Measured::with(ic, json!({ "condition": 1.0 / ic })))
    }));

    let k = inst.probe_level();
    let ctx = b.gauge(inst, k);
    b.push(Check::new(format!("gauge_surface.positivity[k={k}]"), "Δ_k is positive on {𝒬A = 0, τA = 0}", &label, Bound::Above, 0.0, inst.fine_bonds(), move |_| {
        Ok(Measured::new(ctx.get()?.delta_lower_bound()?))
    }));
}
