use std::path::PathBuf;

use caxial::gauge::DEFAULT_MAX_DIM;
use caxial::lattice::{Boundary, LatticeSpec};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides the resource cap.
pub const MAX_DIM_ENV: &str = "CAXIAL_MAX_DIM";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Geometry,
    Calculus,
    Averaging,
    GaugeSurface,
    FeynmanLandau,
    LowerBound,
    Representation,
    Rg,
    Sqrt,
    Decay,
    Appendix,
}

impl Suite {
    pub const ALL: [Suite; 11] = [
        Suite::Geometry,
        Suite::Calculus,
        Suite::Averaging,
        Suite::GaugeSurface,
        Suite::FeynmanLandau,
        Suite::LowerBound,
        Suite::Representation,
        Suite::Rg,
        Suite::Sqrt,
        Suite::Decay,
        Suite::Appendix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Calculus => "calculus",
            Suite::Averaging => "averaging",
            Suite::GaugeSurface => "gauge_surface",
            Suite::FeynmanLandau => "feynman_landau",
            Suite::LowerBound => "lower_bound",
            Suite::Representation => "representation",
            Suite::Rg => "rg",
            Suite::Sqrt => "sqrt",
            Suite::Decay => "decay",
            Suite::Appendix => "appendix",
        }
    }

    /// Parse a comma-separated list; `all` selects every suite.
    pub fn parse_list(s: &str) -> Result<Vec<Suite>, ConfigError> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                return Ok(Suite::ALL.to_vec());
            }
            match Suite::ALL.iter().find(|x| x.name() == part) {
                Some(x) => out.push(*x),
                None => return Err(ConfigError(format!("unknown suite `{part}`"))),
            }
        }
        if out.is_empty() {
            return Err(ConfigError("no suite selected".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::error::Error for ConfigError {}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

/// One lattice instance: `dim`, block side `L`, number of levels `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub dim: usize,
    #[serde(rename = "L")]
    pub block_side: usize,
    #[serde(rename = "N")]
    pub levels: usize,
}

impl Instance {
    pub fn new(dim: usize, block_side: usize, levels: usize) -> Self {
        Instance { dim, block_side, levels }
    }

    /// `{d=2: L∈{3,5}, N∈{1,2,3}}` and `{d=3: L=3, N∈{1,2}}`.
    pub fn defaults() -> Vec<Instance> {
        let mut v = Vec::new();
        for l in [3, 5] {
            for n in 1..=3 {
                v.push(Instance::new(2, l, n));
            }
        }
        for n in 1..=2 {
            v.push(Instance::new(3, 3, n));
        }
        v
    }

    pub fn label(&self) -> String {
        format!("d{}L{}N{}", self.dim, self.block_side, self.levels)
    }

    /// Level used for single-level gauge checks: `k = 1` when `N ≥ 2`, else `0`.
    pub fn probe_level(&self) -> usize {
        self.levels.min(2) - 1
    }

    /// Bonds of the finest torus, `dim·L^{dim·N}`.
    pub fn fine_bonds(&self) -> usize {
        self.dim * self.fine_sites()
    }

    pub fn fine_sites(&self) -> usize {
        self.block_side.pow((self.dim * self.levels) as u32)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.levels == 0 {
            return Err(ConfigError(format!("{}: N must be at least 1", self.label())));
        }
        LatticeSpec::torus(self.dim, self.block_side, 0, self.levels as i32)
            .validate()
            .map_err(|e| ConfigError(format!("{}: {e}", self.label())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative singular value below which a direction counts as kernel.
    pub rank_tol: f64,
    /// Relative residual for identities.
    pub identity_tol: f64,
    /// Quadrature vs spectral square root.
    pub sqrt_tol: f64,
    /// Minimum `|r|` of the decay fit.
    pub decay_min_corr: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank_tol: 1e-9, identity_tol: 1e-9, sqrt_tol: 1e-6, decay_min_corr: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit instance list; when empty, `dim`/`L`/`N` select one instance,
    /// and with those unset the default matrix is used.
    pub instances: Vec<Instance>,
    pub dim: Option<usize>,
    #[serde(rename = "L")]
    pub block_side: Option<usize>,
    #[serde(rename = "N")]
    pub levels: Option<usize>,
    /// Boundary of the lattices in the geometry and calculus suites.
    pub boundary: Boundary,
    pub a_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub x_list: Vec<f64>,
    pub npoints: usize,
    pub tolerances: Tolerances,
    pub suites: Vec<Suite>,
    /// Only run checks whose id contains one of these strings.
    pub filter: Vec<String>,
    pub max_dim: usize,
    pub report: Option<PathBuf>,
    /// Directory for decay CSV files and flow traces.
    pub artifacts: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            instances: Vec::new(),
            dim: None,
            block_side: None,
            levels: None,
            boundary: Boundary::Torus,
            a_list: vec![1.0, 2.0],
            alpha_list: vec![1.0, 0.5],
            x_list: vec![0.1, 1.0, 10.0],
            npoints: 400,
            tolerances: Tolerances::default(),
            suites: Suite::ALL.to_vec(),
            filter: Vec::new(),
            max_dim: DEFAULT_MAX_DIM,
            report: None,
            artifacts: None,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(s).map_err(|e| ConfigError(e.to_string()))
    }

    /// Apply `CAXIAL_MAX_DIM` if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(MAX_DIM_ENV) {
            self.max_dim = v
                .trim()
                .parse()
                .map_err(|_| ConfigError(format!("{MAX_DIM_ENV} must be a positive integer, got `{v}`")))?;
        }
        Ok(())
    }

    /// The instances to run, after resolving `dim`/`L`/`N`.
    pub fn resolved_instances(&self) -> Result<Vec<Instance>, ConfigError> {
        if !self.instances.is_empty() {
            return Ok(self.instances.clone());
        }
        match (self.dim, self.block_side, self.levels) {
            (None, None, None) => Ok(Instance::defaults()),
            (dim, l, n) => {
                let dims = dim.map(|d| vec![d]).unwrap_or_else(|| vec![2, 3]);
                let mut out = Vec::new();
                for d in dims {
                    let ls = l.map(|l| vec![l]).unwrap_or_else(|| if d == 2 { vec![3, 5] } else { vec![3] });
                    for l in ls {
                        let ns = n.map(|n| vec![n]).unwrap_or_else(|| (1..=if d == 2 { 3 } else { 2 }).collect());
                        for n in ns {
                            out.push(Instance::new(d, l, n));
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tolerances;
        for (name, v) in [
            ("rank_tol", t.rank_tol),
            ("identity_tol", t.identity_tol),
            ("sqrt_tol", t.sqrt_tol),
            ("decay_min_corr", t.decay_min_corr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        if t.decay_min_corr > 1.0 {
            return Err(ConfigError("decay_min_corr must not exceed 1".into()));
        }
        if self.suites.is_empty() {
            return Err(ConfigError("no suite selected".into()));
        }
        if self.npoints < 2 {
            return Err(ConfigError("npoints must be at least 2".into()));
        }
        if self.max_dim == 0 {
            return Err(ConfigError("max_dim must be positive".into()));
        }
        if self.a_list.iter().any(|a| a.is_nan() || *a <= 0.0) {
            return Err(ConfigError("regulators a must be positive".into()));
        }
        if self.alpha_list.iter().any(|a| a.is_nan() || *a <= 0.0) {
            return Err(ConfigError("Feynman parameters α must be positive".into()));
        }
        if self.x_list.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(ConfigError("x values must be non-negative".into()));
        }
        for inst in self.resolved_instances()? {
            inst.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.resolved_instances().unwrap().len(), 8);
    }

    #[test]
    fn parse_suites() {
        assert_eq!(Suite::parse_list("all").unwrap().len(), 11);
        assert_eq!(Suite::parse_list("rg, geometry").unwrap(), vec![Suite::Geometry, Suite::Rg]);
        assert!(Suite::parse_list("nope").is_err());
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let c = RunConfig { dim: Some(2), block_side: Some(3), levels: Some(2), ..Default::default() };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&s).unwrap(), c);
        assert_eq!(c.resolved_instances().unwrap(), vec![Instance::new(2, 3, 2)]);
        assert!(RunConfig::from_json(r#"{"suites": ["bogus"]}"#).is_err());
        let bad = RunConfig { tolerances: Tolerances { identity_tol: -1.0, ..Default::default() }, ..Default::default() };
        assert!(bad.validate().is_err());
        let even = RunConfig { dim: Some(2), block_side: Some(4), levels: Some(1), ..Default::default() };
        assert!(even.validate().is_err());
    }
}
