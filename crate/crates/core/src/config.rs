//! Declarative run configuration with per-example defaults.
//!
//! A config file is merged over the defaults of its example, so every key is
//! optional and unknown keys are rejected.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::basis::{subdomain_seed, Activation, NetSpec};
use crate::error::{Error, Result};
use crate::geometry::{CollocationSpec, GeometryKind, ResidualWeights, SamplingStrategy};
use crate::metrics::TestGrid;
use crate::perturbation::CorrectionSpec;
use crate::problem::{builtin_example, ExampleId, ExampleParams, InterfaceProblem, JumpData};
use crate::solver::SolverOptions;

/// Initialization stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub net: NetSpec,
    pub collocation: CollocationSpec,
    pub collocation_seed: u64,
    pub solver: SolverOptions,
}

/// Correction stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub enabled: bool,
    pub net: CorrectionSpec,
    pub collocation: CollocationSpec,
    pub collocation_seed: u64,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub grid: TestGrid,
    /// Grid for per-iteration errors; none disables them.
    pub iteration_grid: Option<TestGrid>,
    /// Samples per interface piece.
    pub trace_samples: usize,
    /// Time slice of the trace for moving interfaces (default: final time).
    pub trace_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub example: ExampleId,
    /// Master seed from which unset stage seeds are derived.
    pub seed: u64,
    pub params: ExampleParams,
    /// Replaces the interface of the example (same subdomain count).
    pub geometry: Option<GeometryKind>,
    pub init: InitConfig,
    pub correction: CorrectionConfig,
    pub metrics: MetricsConfig,
    pub output_dir: Option<PathBuf>,
}

fn colloc(interior: Vec<usize>, interface: usize, boundary: usize) -> CollocationSpec {
    let n = interior.len();
    CollocationSpec {
        interior,
        interface,
        boundary,
        strategy: SamplingStrategy::SeededUniformRandom,
        weights: ResidualWeights::uniform(n),
    }
}

struct Sizes {
    m: usize,
    init: CollocationSpec,
    m_p: usize,
    corr: CollocationSpec,
    init_weights: f64,
    init_bias: f64,
    corr_weights: f64,
    corr_bias: f64,
}

fn sizes(example: ExampleId) -> Sizes {
    match example {
        ExampleId::Ex1 => Sizes {
            m: 100,
            init: colloc(vec![10_000, 10_000], 408, 1_000),
            init_weights: 1.0,
            init_bias: 0.1,
            m_p: 600,
            corr: colloc(vec![16_000, 16_000], 876, 2_000),
            corr_weights: 4.0 * PI,
            corr_bias: PI,
        },
        ExampleId::Ex2 => Sizes {
            m: 100,
            init: colloc(vec![3_000; 4], 500, 1_200),
            init_weights: 1.0,
            init_bias: 0.1,
            m_p: 300,
            corr: colloc(vec![5_000; 4], 800, 2_000),
            corr_weights: 4.0 * PI,
            corr_bias: PI,
        },
        ExampleId::Ex3 => Sizes {
            m: 300,
            init: colloc(vec![8_000, 4_000], 1_000, 1_200),
            init_weights: 1.0,
            init_bias: 0.1,
            m_p: 800,
            corr: colloc(vec![12_000, 6_000], 2_000, 2_000),
            corr_weights: 7.0 * PI,
            corr_bias: PI,
        },
        ExampleId::Ex4 => Sizes {
            m: 100,
            init: colloc(vec![8_000, 2_000], 600, 1_200),
            init_weights: 2.0,
            init_bias: 0.5,
            m_p: 600,
            corr: colloc(vec![14_000, 4_000], 1_000, 2_000),
            corr_weights: 6.0 * PI,
            corr_bias: PI,
        },
        ExampleId::Ex5 => Sizes {
            m: 400,
            init: colloc(vec![8_000, 4_000], 1_000, 2_000),
            init_weights: 1.0,
            init_bias: 0.5,
            m_p: 1_000,
            corr: colloc(vec![14_000, 7_000], 1_500, 3_000),
            corr_weights: 2.0 * PI,
            corr_bias: PI,
        },
        ExampleId::Ex6 => Sizes {
            m: 100,
            init: colloc(vec![6_000, 2_000], 600, 1_200),
            init_weights: 1.0,
            init_bias: 0.1,
            m_p: 400,
            corr: colloc(vec![12_000, 4_000], 1_000, 2_000),
            corr_weights: 4.0 * PI,
            corr_bias: PI,
        },
    }
}

/// Stage seed derived from the master seed, kept below 2^53 so that it
/// survives TOML and JSON round trips exactly.
fn stage_seed(seed: u64, stage: usize) -> u64 {
    subdomain_seed(seed, stage) >> 11
}

impl RunConfig {
    /// Defaults of `example` with stage seeds derived from `seed`.
    pub fn defaults(example: ExampleId, seed: u64) -> Self {
        Self::defaults_with(example, seed, ExampleParams::default())
    }

    /// Defaults of `example` for the given problem parameters.
    pub fn defaults_with(example: ExampleId, seed: u64, params: ExampleParams) -> Self {
        let mut s = sizes(example);
        if example == ExampleId::Ex4 {
            // Divide the equations of the high-diffusion side by its coefficient.
            let w = params.contrast.powi(-2);
            for c in [&mut s.init, &mut s.corr] {
                c.weights.interior[0] = w;
                c.weights.interface_flux = w;
            }
        }
        let probe = builtin_example(example, &ExampleParams::default()).expect("builtin examples are valid");
        Self {
            example,
            seed,
            params,
            geometry: None,
            init: InitConfig {
                net: NetSpec {
                    m: s.m,
                    activation: Activation::Tanh,
                    weight_range: [-s.init_weights, s.init_weights],
                    bias_range: [-s.init_bias, s.init_bias],
                    seed: stage_seed(seed, 100),
                },
                collocation: s.init,
                collocation_seed: stage_seed(seed, 200),
                solver: SolverOptions { stop_tol: 1e-6, ..SolverOptions::default() },
            },
            correction: CorrectionConfig {
                enabled: true,
                net: CorrectionSpec {
                    m_p: s.m_p,
                    activation: Activation::Sin,
                    weight_range: [-s.corr_weights, s.corr_weights],
                    bias_range: [-s.corr_bias, s.corr_bias],
                    seed: stage_seed(seed, 300),
                    keep_second_order: true,
                    epsilon: None,
                },
                collocation: s.corr,
                collocation_seed: stage_seed(seed, 400),
                solver: SolverOptions { max_iters: 30, stop_tol: 1e-5, ..SolverOptions::default() },
            },
            metrics: MetricsConfig {
                grid: TestGrid::default_for(&probe),
                iteration_grid: Some(TestGrid::coarse_for(&probe)),
                trace_samples: 200,
                trace_time: None,
            },
            output_dir: None,
        }
    }

    /// Parse a TOML document merged over the defaults of its example.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        Self::from_table(value)
    }

    /// Resolve a partial table (file contents plus flag overrides).
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let example = match table.get("example") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Config("`example` must be a string".into()))?
                .parse::<ExampleId>()?,
            None => ExampleId::Ex1,
        };
        let seed = match table.get("seed") {
            Some(v) => {
                let i = v.as_integer().ok_or_else(|| Error::Config("`seed` must be an integer".into()))?;
                u64::try_from(i).map_err(|_| Error::Config(format!("seed must be non-negative, got {i}")))?
            }
            None => 0,
        };
        let params: ExampleParams = match table.get("params") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("invalid params: {e}")))?,
            None => ExampleParams::default(),
        };
        let defaults = Self::defaults_with(example, seed, params);
        let mut base = toml::Table::try_from(&defaults).map_err(|e| Error::Config(format!("serializing defaults: {e}")))?;
        merge(&mut base, table);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        let n = problem.subdomain_count();
        for (stage, c) in [("init", &self.init.collocation), ("correction", &self.correction.collocation)] {
            if c.interior.len() != n || c.weights.interior.len() != n {
                return Err(Error::Config(format!("{stage} collocation needs {n} interior counts and weights")));
            }
        }
        if self.init.net.m == 0 || self.correction.net.m_p == 0 {
            return Err(Error::Config("networks need at least one neuron".into()));
        }
        self.init.solver.validate()?;
        self.correction.solver.validate()?;
        if self.metrics.trace_samples == 0 {
            return Err(Error::Config("trace_samples must be positive".into()));
        }
        Ok(())
    }

    /// The interface problem this configuration describes.
    pub fn problem(&self) -> Result<InterfaceProblem> {
        let mut p = builtin_example(self.example, &self.params)?;
        if let Some(kind) = &self.geometry {
            let geometry = crate::geometry::InterfaceGeometry::new(kind.clone(), p.geometry.bbox)?;
            if geometry.subdomain_count() != p.subdomain_count() {
                return Err(Error::Config(format!(
                    "geometry has {} subdomains, {} needs {}",
                    geometry.subdomain_count(),
                    self.example,
                    p.subdomain_count()
                )));
            }
            p.geometry = geometry;
            // homogeneous jumps only hold on the original interface
            p.jump = JumpData::FromExact;
            p.validate()?;
        }
        Ok(p)
    }
}

/// Set the dotted key `path` in a partial config table, creating tables as needed.
pub fn set_override(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key '{path}'")))?;
    let mut cur = table;
    for k in keys {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("'{k}' in '{path}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlay `over` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        for id in ExampleId::ALL {
            let cfg = RunConfig::defaults(id, 7);
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{id}");
        }
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = RunConfig::from_toml(
            "example = \"ex3\"\nseed = 4\n[params]\npetals = 8\n[correction.net]\nm_p = 50\n[correction]\nenabled = false\n",
        )
        .unwrap();
        assert_eq!(cfg.example, ExampleId::Ex3);
        assert_eq!(cfg.params.petals, 8);
        assert_eq!(cfg.correction.net.m_p, 50);
        assert!(!cfg.correction.enabled);
        assert_eq!(cfg.init, RunConfig::defaults(ExampleId::Ex3, 4).init);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[init]\nm = 3", "[params]\npetal = 3", "example = \"ex9\""] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut t: toml::Table = toml::from_str("example = \"ex4\"\n[params]\ncontrast = 10.0\n").unwrap();
        set_override(&mut t, "params.contrast", toml::Value::Float(1e4)).unwrap();
        set_override(&mut t, "correction.net.m_p", toml::Value::Integer(12)).unwrap();
        let cfg = RunConfig::from_table(t).unwrap();
        assert_eq!(cfg.params.contrast, 1e4);
        assert_eq!(cfg.correction.net.m_p, 12);
    }

    #[test]
    fn seeds_follow_the_master_seed() {
        let a = RunConfig::defaults(ExampleId::Ex1, 1);
        let b = RunConfig::defaults(ExampleId::Ex1, 2);
        assert_ne!(a.init.net.seed, b.init.net.seed);
        assert_ne!(a.init.net.seed, a.correction.net.seed);
        assert_ne!(a.init.collocation_seed, a.correction.collocation_seed);
    }

    #[test]
    fn geometry_override_checks_subdomains() {
        let ok = RunConfig::from_toml("[geometry]\nkind = \"circle\"\ncenter = [0.0, 0.5]\nradius = 0.3\n").unwrap();
        assert!(matches!(ok.problem().unwrap().jump, JumpData::FromExact));
        assert!(RunConfig::from_toml("[geometry]\nkind = \"axes_cross\"\n").is_err());
    }

    #[test]
    fn example_one_point_counts() {
        let cfg = RunConfig::defaults(ExampleId::Ex1, 0);
        assert_eq!(cfg.init.collocation.total_rows(), 21_816);
        assert_eq!(cfg.correction.collocation.total_rows(), 35_752);
    }

    #[test]
    fn contrast_sets_high_diffusion_weights() {
        let cfg = RunConfig::from_toml("example = \"ex4\"\n[params]\ncontrast = 1e4\n").unwrap();
        assert_eq!(cfg.init.collocation.weights.interior, vec![1e-8, 1.0]);
        assert_eq!(cfg.correction.collocation.weights.interface_flux, 1e-8);
        let cfg = RunConfig::from_toml(
            "example = \"ex4\"\n[params]\ncontrast = 1e4\n[init.collocation.weights]\ninterface_flux = 2.0\n",
        )
        .unwrap();
        assert_eq!(cfg.init.collocation.weights.interface_flux, 2.0);
        assert!(matches!(
            RunConfig::from_toml("example = \"ex4\"\n[params]\ncontrast = -1.0\n"),
            Err(Error::Config(_))
        ));
    }
}
