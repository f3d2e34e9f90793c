//! Check builders, one module per suite.

use std::collections::{HashMap, HashSet};

use caxial::gauge::{GaugeContext, GaugeSpec};
use caxial::rg::FlowSpec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, Instance, RunConfig, Suite};
use crate::runner::{Check, Shared};

mod appendix;
mod averaging;
mod calculus;
mod decay;
mod feynman_landau;
mod geometry;
mod gauge_surface;
mod lower_bound;
mod representation;
mod rg;
pub mod sqrt;

/// Shared state for building the checks of one run.
pub(crate) struct Builder<'a> {
    pub cfg: &'a RunConfig,
    pub checks: Vec<Check>,
    gauge: HashMap<(Instance, usize, u64), Shared<GaugeContext>>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Builder { cfg, checks: Vec::new(), gauge: HashMap::new() }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn tol(&self) -> f64 {
        self.cfg.tolerances.identity_tol
    }

    pub fn flow(&self, inst: &Instance) -> FlowSpec {
        FlowSpec { max_dim: self.cfg.max_dim, ..FlowSpec::new(inst.dim, inst.block_side, inst.levels) }
    }

    pub fn gauge_spec(&self, inst: &Instance, k: usize) -> GaugeSpec {
        GaugeSpec { max_dim: self.cfg.max_dim, ..GaugeSpec::new(inst.dim, inst.block_side, inst.levels, k) }
    }

    /// Gauge context at level `k` with regulator `a`, shared across suites.
    pub fn gauge_with(&mut self, inst: &Instance, k: usize, a: f64) -> Shared<GaugeContext> {
        let spec = GaugeSpec { a, ..self.gauge_spec(inst, k) };
        self.gauge
            .entry((*inst, k, a.to_bits()))
            .or_insert_with(|| Shared::new(move || Ok(GaugeContext::new(spec)?)))
            .clone()
    }

    pub fn gauge(&mut self, inst: &Instance, k: usize) -> Shared<GaugeContext> {
        self.gauge_with(inst, k, 1.0)
    }

    /// A probe vector fixed by the run seed and `key`, for state shared by several checks.
    pub fn seeded_probe(&self, key: &str, n: usize) -> DVector<f64> {
        seeded_probe(self.cfg.seed, key, n)
    }
}

pub(crate) fn seeded_probe(seed: u64, key: &str, n: usize) -> DVector<f64> {
    let mut h: u64 = 0x9e3779b97f4a7c15 ^ seed;
    for b in key.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5)
}

/// All checks of the selected suites and instances, filtered by id.
pub fn build(cfg: &RunConfig) -> Result<Vec<Check>, ConfigError> {
    let instances = cfg.resolved_instances()?;
    let mut b = Builder::new(cfg);
    for suite in &cfg.suites {
        let mut seen_pairs = HashSet::new();
        for inst in &instances {
            match suite {
                Suite::Geometry => geometry::checks(&mut b, inst),
                Suite::Calculus => calculus::checks(&mut b, inst),
                Suite::Averaging => averaging::checks(&mut b, inst),
                Suite::GaugeSurface => gauge_surface::checks(&mut b, inst, seen_pairs.insert((inst.dim, inst.block_side))),
                Suite::FeynmanLandau => feynman_landau::checks(&mut b, inst),
                Suite::LowerBound => {
                    if seen_pairs.insert((inst.dim, inst.block_side)) {
                        lower_bound::checks(&mut b, inst)
                    }
                }
                Suite::Representation => representation::checks(&mut b, inst),
                Suite::Rg => rg::checks(&mut b, inst),
                Suite::Sqrt => sqrt::checks(&mut b, inst),
                Suite::Decay => decay::checks(&mut b, inst),
                Suite::Appendix => appendix::checks(&mut b, inst),
            }
        }
    }
    let mut checks = b.checks;
    if !cfg.filter.is_empty() {
        checks.retain(|c| cfg.filter.iter().any(|f| c.id.contains(f.as_str())));
    }
    let mut ids = HashSet::new();
    for c in &checks {
        if !ids.insert((c.id.clone(), c.instance.clone())) {
            return Err(ConfigError(format!("duplicate check {} on {}", c.id, c.instance)));
        }
    }
    Ok(checks)
}

/// Ratio `σ_min/σ_max` of a matrix; zero for an empty one.
pub(crate) fn inverse_condition(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let (lo, hi) = caxial::linalg::singular_range(m);
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub(crate) fn rel(a: &[f64], b: &[f64]) -> f64 {
    caxial::linalg::rel_diff_vec(a, b)
}
