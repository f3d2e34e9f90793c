use caxial::field::grad_map;
use caxial::gauge::{decay_profile, site_positions};
use caxial::lattice::{Lattice, LatticeSpec};
use caxial::linalg::spd_inverse;
use nalgebra::DMatrix;
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured, Shared};

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let (dim, l) = (inst.dim, inst.block_side);

    let unit = LatticeSpec::torus(dim, l, 0, 1);
    b.push(Check::new("decay.massive_green", "(−Δ + 1)⁻¹ decays on the torus", &label, Bound::Below, 0.0, l.pow(dim as u32), move |_| {
        let lat = Lattice::new(unit)?;
        let g = grad_map(&lat).matrix;
        let n = lat.num_sites();
        let op = spd_inverse(&(g.transpose() * &g + DMatrix::identity(n, n)))?;
        let pos = site_positions(&lat);
        let p = decay_profile(&op, &pos, &pos, l as f64, 1.0)?;
        Ok(Measured::with(p.slope, json!({ "correlation": p.correlation })))
    }));

    let k = inst.probe_level();
    let cost = inst.fine_bonds();
    let ctx = b.gauge(inst, k);
    let profile = Shared::new(move || Ok(ctx.get()?.h_feynman_decay()?));
    let id = |name: &str| format!("decay.{name}[k={k}]");
    let identity_reason = "ℋ_0 is the identity; there is no profile to fit";

    let p = profile.clone();
    let file = format!("decay_{label}_k{k}.csv");
    let mut slope = Check::new(id("h_slope"), "ℋ_k has an exponentially decaying kernel", &label, Bound::Below, 0.0, cost, move |env| {
        let p = p.get()?;
        let path = env.write_artifact(&file, &p.to_csv())?;
        Ok(Measured::with(p.slope, json!({ "rows": p.rows, "correlation": p.correlation, "file": path })))
    });
    let min_corr = b.cfg.tolerances.decay_min_corr;
    let mut corr = Check::new(id("h_fit"), "the log-linear decay fit is tight", &label, Bound::AtLeast, min_corr, cost, move |_| {
        let p = profile.get()?;
        Ok(Measured::with(-p.correlation, json!({ "slope": p.slope })))
    });
    if k == 0 {
        slope = slope.skip_because(identity_reason);
        corr = corr.skip_because(identity_reason);
    }
    b.push(slope);
    b.push(corr);
}
