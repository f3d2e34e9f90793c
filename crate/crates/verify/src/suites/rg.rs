use caxial::field::ext_d_map;
use caxial::lattice::Lattice;
use caxial::rg::{compare_states, flow_trace, fluctuation_step, one_shot_rho, run_flow, z_constants, InitialFunctional, RGState};
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured, Shared};

/// Iterated states `0..=N` and one-shot states `1..=N` (index 0 unused).
struct Flows {
    iterated: Vec<RGState>,
    one_shot: Vec<Option<RGState>>,
}

fn flows(flow: caxial::rg::FlowSpec, initial: impl Fn() -> anyhow::Result<InitialFunctional> + Send + Sync + 'static) -> Shared<Flows> {
    Shared::new(move || {
        let f0 = initial()?;
        let iterated = run_flow(flow, &f0)?;
        let mut one_shot = vec![None];
        for k in 1..=flow.levels {
            one_shot.push(Some(one_shot_rho(flow, k, &f0)?));
        }
        Ok(Flows { iterated, one_shot })
    })
}

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let tol = b.tol();
    let cost = inst.fine_bonds();
    let flow = b.flow(inst);
    let n = inst.levels;

    let unit = flows(flow, || Ok(InitialFunctional::Unit));
    // A co-closed source J = δP keeps the tilted functional gauge invariant.
    let p = Lattice::new(flow.level_spec(0)).map(|l| b.seeded_probe(&format!("rg.source@{label}"), l.num_plaquettes())).ok();
    let tilted = p.map(|p| {
        flows(flow, move || {
            let lat = Lattice::new(flow.level_spec(0))?;
            Ok(InitialFunctional::Linear(ext_d_map(&lat).matrix.transpose() * &p))
        })
    });

    for k in 1..=n {
        let u = unit.clone();
        b.push(Check::new(format!("rg.form[k={k}]"), "iterated and one-shot quadratic forms agree", &label, Bound::AtMost, tol, cost, move |_| {
            let f = u.get()?;
            let c = compare_states(&f.iterated[k], f.one_shot[k].as_ref().expect("one-shot state"))?;
            Ok(Measured::with(c.form, json!(c)))
        }));
        let u = unit.clone();
        b.push(Check::new(format!("rg.log_const[k={k}]"), "iterated and one-shot normalizations agree", &label, Bound::AtMost, tol, cost, move |_| {
            let f = u.get()?;
            let one = f.one_shot[k].as_ref().expect("one-shot state");
            let c = compare_states(&f.iterated[k], one)?;
            let scale = one.density.log_const.abs().max(1.0);
            Ok(Measured::with(c.log_const.abs() / scale, json!({ "log_z": one.density.log_const, "difference": c.log_const })))
        }));
        if let Some(t) = &tilted {
            let t = t.clone();
            b.push(Check::new(format!("rg.linear[k={k}]"), "iterated and one-shot linear terms agree", &label, Bound::AtMost, tol, cost, move |_| {
                let f = t.get()?;
                let c = compare_states(&f.iterated[k], f.one_shot[k].as_ref().expect("one-shot state"))?;
                Ok(Measured::with(c.linear, json!(c)))
            }));
        }
        let u = unit.clone();
        b.push(Check::new(format!("rg.fibre_dim[k={k}]"), "the one-shot fibre has dimension c_k", &label, Bound::AtMost, 0.0, cost, move |_| {
            let f = u.get()?;
            let got = f.one_shot[k].as_ref().and_then(|s| s.fibre_dim).unwrap_or(0);
            let want = flow.c(k);
            Ok(Measured::with((got as f64 - want as f64).abs(), json!({ "fibre_dim": got, "c_k": want })))
        }));
        let u = unit.clone();
        b.push(Check::new(format!("rg.fibre_positivity[k={k}]"), "each integrated form is positive on its fibre", &label, Bound::Above, 0.0, cost, move |_| {
            let f = u.get()?;
            Ok(Measured::new(f.iterated[k].fibre_min_eig.unwrap_or(f64::NAN)))
        }));
    }

    let u = unit.clone();
    b.push(Check::new("rg.gauge_invariance", "every level of the flow is gauge invariant", &label, Bound::AtMost, tol, cost, move |env| {
        let f = u.get()?;
        let trace = flow_trace(&f.iterated)?;
        let worst = trace.iter().map(|l| l.gauge_residual).fold(0.0, f64::max);
        let path = env.write_artifact(&format!("flow_trace_{label_}.json", label_ = flow_label(&flow)), &serde_json::to_string_pretty(&trace)?)?;
        Ok(Measured::with(worst, json!({ "trace": trace, "file": path })))
    }));

    let z = Shared::new(move || Ok(z_constants(flow)?));
    for k in 0..n {
        let z = z.clone();
        b.push(Check::new(format!("rg.z_recursion[k={k}]"), "Z_{k+1} = Z_k Z^f_k L^{γc_{k+1}}", &label, Bound::AtMost, tol, cost, move |_| {
            let z = z.get()?;
            let r = z.recursion_residuals[k];
            Ok(Measured::with(
                r.abs(),
                json!({ "log_z": [z.log_z[k], z.log_z[k + 1]], "log_zf": z.log_zf[k], "c": z.c[k + 1] }),
            ))
        }));
    }

    let k = inst.probe_level();
    let ctx = b.gauge(inst, k);
    b.push(Check::new(format!("rg.fluctuation[k={k}]"), "Z and W parametrizations of the fluctuation integral agree", &label, Bound::AtMost, tol, cost, move |env| {
        let c = ctx.get()?;
        let p = env.probe(c.d.nrows());
        let j = c.d.transpose() * p;
        let m = fluctuation_step(c, &j)?;
        let var = (m.variance_z - m.variance_w).abs() / m.variance_z.abs().max(m.variance_w.abs());
        let mean = m.mean_shift.abs() / m.variance_z.sqrt();
        Ok(Measured::with(var.max(mean), json!(m)))
    }));
}

fn flow_label(f: &caxial::rg::FlowSpec) -> String {
    format!("d{}L{}N{}", f.dim, f.block_side, f.levels)
}
