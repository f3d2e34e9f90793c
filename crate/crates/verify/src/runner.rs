use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};
use crate::report::{Bound, CheckRecord, Report, Status};
use crate::suites;

/// What a check measured: the compared value and free-form detail.
pub struct Measured {
    pub value: f64,
    pub detail: serde_json::Value,
}

impl Measured {
    pub fn new(value: f64) -> Self {
        Measured { value, detail: serde_json::Value::Null }
    }

    pub fn with(value: f64, detail: serde_json::Value) -> Self {
        Measured { value, detail }
    }
}

/// Per-check environment: a seeded generator and the artifact directory.
pub struct Env {
    pub rng: ChaCha8Rng,
    pub artifacts: Option<PathBuf>,
}

impl Env {
    /// Entries uniform in `[-½, ½)`.
    pub fn probe(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.rng.random::<f64>() - 0.5)
    }

    pub fn probe_vec(&mut self, n: usize) -> Vec<f64> {
        self.probe(n).as_slice().to_vec()
    }

    /// Write `contents` to `name` under the artifact directory, if one is set.
    pub fn write_artifact(&self, name: &str, contents: &str) -> anyhow::Result<Option<String>> {
        let Some(dir) = &self.artifacts else { return Ok(None) };
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        Ok(Some(path.display().to_string()))
    }
}

type CheckFn = Box<dyn Fn(&mut Env) -> anyhow::Result<Measured> + Send + Sync>;

pub struct Check {
    pub id: String,
    pub anchor: &'static str,
    pub instance: String,
    pub threshold: f64,
    pub bound: Bound,
    /// Ambient dimension of the largest dense operator; 0 for matrix-free checks.
    pub cost: usize,
    /// Reason to skip without running.
    pub skip: Option<String>,
    pub run: CheckFn,
}

impl Check {
    pub fn new(
        id: impl Into<String>,
        anchor: &'static str,
        instance: impl Into<String>,
        bound: Bound,
        threshold: f64,
        cost: usize,
        run: impl Fn(&mut Env) -> anyhow::Result<Measured> + Send + Sync + 'static,
    ) -> Self {
        Check {
            id: id.into(),
            anchor,
            instance: instance.into(),
            threshold,
            bound,
            cost,
            skip: None,
            run: Box::new(run),
        }
    }

    pub fn skip_because(mut self, reason: impl Into<String>) -> Self {
        self.skip = Some(reason.into());
        self
    }
}

/// A value built on first use and shared between the checks of an instance.
pub struct Shared<T>(Arc<SharedInner<T>>);

struct SharedInner<T> {
    cell: OnceLock<Result<T, String>>,
    build: Box<dyn Fn() -> anyhow::Result<T> + Send + Sync>,
}

impl<T> Clone for Shared<T> {
    fn clone(&self) -> Self {
        Shared(self.0.clone())
    }
}

impl<T: Send + Sync> Shared<T> {
    pub fn new(build: impl Fn() -> anyhow::Result<T> + Send + Sync + 'static) -> Self {
        Shared(Arc::new(SharedInner { cell: OnceLock::new(), build: Box::new(build) }))
    }

    pub fn get(&self) -> anyhow::Result<&T> {
        let r = self.0.cell.get_or_init(|| (self.0.build)().map_err(|e| format!("{e:#}")));
        r.as_ref().map_err(|e| anyhow::anyhow!("{e}"))
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn is_resource_cap(e: &anyhow::Error) -> bool {
    e.chain().any(|c| matches!(c.downcast_ref::<caxial::Error>(), Some(caxial::Error::ResourceCap { .. })))
        || format!("{e:#}").contains("exceeds the resource cap")
}

fn run_one(check: &Check, cfg: &RunConfig) -> CheckRecord {
    let mut rec = CheckRecord {
        check_id: check.id.clone(),
        anchor: check.anchor.to_string(),
        instance: check.instance.clone(),
        value: None,
        threshold: check.threshold,
        bound: check.bound,
        status: Status::Skipped,
        reason: None,
        wall_time_s: 0.0,
        detail: serde_json::Value::Null,
    };
    if let Some(r) = &check.skip {
        rec.reason = Some(r.clone());
        return rec;
    }
    if check.cost > cfg.max_dim {
        rec.reason = Some(format!("ambient dimension {} exceeds the resource cap {}", check.cost, cfg.max_dim));
        return rec;
    }
    let seed = cfg.seed ^ fnv1a(&format!("{}@{}", check.id, check.instance));
    let mut env = Env { rng: ChaCha8Rng::seed_from_u64(seed), artifacts: cfg.artifacts.clone() };
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(|| (check.run)(&mut env)));
    rec.wall_time_s = start.elapsed().as_secs_f64();
    match out {
        Ok(Ok(m)) => {
            rec.value = Some(m.value);
            rec.detail = m.detail;
            rec.status = if check.bound.holds(m.value, check.threshold) { Status::Pass } else { Status::Fail };
        }
        Ok(Err(e)) if is_resource_cap(&e) => {
            rec.reason = Some(format!("{e:#}"));
        }
        Ok(Err(e)) => {
            rec.status = Status::Fail;
            rec.reason = Some(format!("{e:#}"));
        }
        Err(p) => {
            rec.status = Status::Fail;
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            rec.reason = Some(format!("panic: {msg}"));
        }
    }
    rec
}

/// Execute checks in a work pool; records come back in check order.
pub fn run_checks(cfg: &RunConfig, checks: &[Check]) -> Vec<CheckRecord> {
    checks.par_iter().map(|c| run_one(c, cfg)).collect()
}

/// Build and run every selected check.
pub fn run_suite(cfg: &RunConfig) -> Result<Report, ConfigError> {
    cfg.validate()?;
    let checks = suites::build(cfg)?;
    let records = run_checks(cfg, &checks);
    Ok(Report::new(cfg.clone(), records))
}
