//! Strict JSON experiment configuration with dotted-path overrides.

use crate::error::{Error, Result};
use crate::fluctuations::{EnsembleParams, SpaceTimePoint, TestFunction};
use crate::functionals::FixedPointOptions;
use crate::mollifier::{KernelSpec, Profile};
use serde::{Deserialize, Serialize};
use serde_json::Value;

const OP: &str = "cli::run";

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config { op: OP, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleChoice {
    Pf,
    #[default]
    Fe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub profile: Profile,
    pub support_radius: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { profile: Profile::Bump, support_radius: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dx: f64,
    pub dt: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dx: 0.25, dt: 0.0625 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub inner_paths: usize,
    pub replicas: usize,
    /// Truncation horizon for ∞-functionals.
    pub horizon: f64,
    /// T_max = t_max_factor · t_M · T.
    pub t_max_factor: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { inner_paths: 4096, replicas: 512, horizon: 256.0, t_max_factor: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub r_max: f64,
    /// Output radii are m + 1 equispaced points of [0, r_max].
    pub m: usize,
    pub options: FixedPointOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { r_max: 8.0, m: 256, options: FixedPointOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub t: f64,
    /// Also estimate H_{0,T} by Monte Carlo.
    pub with_h_0_t: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig { x1: vec![0.0; 3], x2: vec![1.0, 0.0, 0.0], t: 16.0, with_h_0_t: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig { a: vec![0.0; 3], b: vec![4.0, 0.0, 0.0], t: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub x: Vec<f64>,
    pub t: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { x: vec![0.0; 3], t: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaL2Config {
    pub bracket: [f64; 2],
    pub tol: f64,
}

impl Default for BetaL2Config {
    fn default() -> Self {
        BetaL2Config { bracket: [0.5, 8.0], tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussTestConfig {
    pub families: usize,
    pub min_passes: usize,
    pub p_threshold: f64,
    pub variance_rel_tol: f64,
}

impl Default for GaussTestConfig {
    fn default() -> Self {
        GaussTestConfig { families: 10, min_passes: 8, p_threshold: 0.01, variance_rel_tol: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptanceConfig {
    /// Criterion numbers to run; empty means all.
    pub criteria: Vec<u32>,
    /// Run the infeasible criteria at full size instead of pilot plus projection.
    pub full: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub beta: f64,
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub solver: SolverConfig,
    pub points: Vec<SpaceTimePoint>,
    /// Scale T for fluctuation experiments.
    pub t_scale: f64,
    pub t_ladder: Vec<f64>,
    pub test_function: Option<TestFunction>,
    pub ensemble: EnsembleChoice,
    pub pair: PairConfig,
    pub bridge: BridgeConfig,
    pub partition: PartitionConfig,
    pub betal2: BetaL2Config,
    pub test_gauss: GaussTestConfig,
    pub acceptance: AcceptanceConfig,
    pub seed: u64,
    pub output: Option<String>,
    pub format: Format,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dimension: 3,
            beta: 0.2,
            kernel: KernelConfig::default(),
            grid: GridConfig::default(),
            mc: McConfig::default(),
            solver: SolverConfig::default(),
            points: vec![SpaceTimePoint { x: vec![0.0; 3], t: 1.0 }],
            t_scale: 16.0,
            t_ladder: vec![4.0, 16.0, 64.0],
            test_function: None,
            ensemble: EnsembleChoice::Fe,
            pair: PairConfig::default(),
            bridge: BridgeConfig::default(),
            partition: PartitionConfig::default(),
            betal2: BetaL2Config::default(),
            test_gauss: GaussTestConfig::default(),
            acceptance: AcceptanceConfig::default(),
            seed: 1,
            output: None,
            format: Format::Json,
        }
    }
}

/// Sets `path` (dotted) in a JSON object tree. Raw values are parsed as JSON when possible and
/// kept as strings otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(cfg_err(format!("malformed override path '{path}'")));
    }
    let mut node = root;
    for (i, k) in keys.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| cfg_err(format!("override '{path}': '{}' is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert((*k).to_string(), value);
            return Ok(());
        }
        node = obj.entry((*k).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

impl ExperimentConfig {
    /// Parses a config document (or the defaults when `text` is None) and applies overrides in
    /// order.
    pub fn resolve(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut root = match text {
            Some(t) => serde_json::from_str::<Value>(t).map_err(|e| cfg_err(format!("parse error: {e}")))?,
            None => Value::Object(Default::default()),
        };
        if !root.is_object() {
            return Err(cfg_err("top level must be a JSON object"));
        }
        for (k, v) in overrides {
            apply_override(&mut root, k, v)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(root).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(cfg_err(format!("{name} = {v} must be positive"))) };
        if self.dimension < 3 || self.dimension > crate::noise::MAX_DIM {
            return Err(cfg_err(format!("dimension {} outside 3..={}", self.dimension, crate::noise::MAX_DIM)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(cfg_err(format!("beta = {} must be >= 0", self.beta)));
        }
        pos("kernel.support_radius", self.kernel.support_radius)?;
        pos("grid.dx", self.grid.dx)?;
        pos("grid.dt", self.grid.dt)?;
        pos("mc.horizon", self.mc.horizon)?;
        pos("mc.t_max_factor", self.mc.t_max_factor)?;
        pos("t_scale", self.t_scale)?;
        pos("solver.r_max", self.solver.r_max)?;
        pos("pair.t", self.pair.t)?;
        pos("bridge.t", self.bridge.t)?;
        pos("partition.t", self.partition.t)?;
        pos("betal2.tol", self.betal2.tol)?;
        if self.mc.t_max_factor <= 1.0 {
            return Err(cfg_err("mc.t_max_factor must exceed 1"));
        }
        if self.mc.inner_paths < 2 || self.mc.replicas < 1 || self.solver.m < 1 {
            return Err(cfg_err("need mc.inner_paths >= 2, mc.replicas >= 1 and solver.m >= 1"));
        }
        for t in &self.t_ladder {
            pos("t_ladder entry", *t)?;
        }
        let d = self.dimension;
        let vecs = [("pair.x1", &self.pair.x1), ("pair.x2", &self.pair.x2), ("bridge.a", &self.bridge.a), ("bridge.b", &self.bridge.b), ("partition.x", &self.partition.x)];
        for (name, v) in vecs {
            if v.len() != d {
                return Err(cfg_err(format!("{name} has length {} but dimension is {d}", v.len())));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.x.len() != d {
                return Err(cfg_err(format!("points[{i}].x has length {} but dimension is {d}", p.x.len())));
            }
            pos("points[].t", p.t)?;
        }
        let g = &self.test_gauss;
        if g.families < 1 || g.min_passes > g.families || !(g.p_threshold > 0.0 && g.p_threshold < 1.0) {
            return Err(cfg_err("test_gauss needs families >= 1, min_passes <= families and p_threshold in (0, 1)"));
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        if self.dimension == 3 && self.kernel.profile == Profile::Bump && self.kernel.support_radius == 1.0 {
            return Ok(KernelSpec::default_bump());
        }
        KernelSpec::new(self.dimension, self.kernel.profile, self.kernel.support_radius)
    }

    /// Ensemble parameters for the configured points (or t_M = `t_m`).
    pub fn ensemble_params(&self, t_m: f64, base_seed: u64) -> EnsembleParams {
        EnsembleParams {
            beta: self.beta,
            t_scale: self.t_scale,
            t_max: self.mc.t_max_factor * t_m * self.t_scale,
            inner_n: self.mc.inner_paths,
            replicas: self.mc.replicas,
            base_seed,
            dx: self.grid.dx,
            dt: self.grid.dt,
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::resolve(None, &[]).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::resolve(Some(&text), &[]).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::resolve(Some(r#"{"betta": 0.1}"#), &[]).is_err());
        assert!(ExperimentConfig::resolve(Some(r#"{"mc": {"replica": 3}}"#), &[]).is_err());
        assert!(ExperimentConfig::resolve(None, &[("mc.bogus".into(), "1".into())]).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let c = ExperimentConfig::resolve(Some(r#"{"mc": {"replicas": 8}}"#), &[("mc.replicas".into(), "256".into()), ("beta".into(), "0".into()), ("format".into(), "csv".into())]).unwrap();
        assert_eq!(c.mc.replicas, 256);
        assert_eq!(c.mc.inner_paths, 4096);
        assert_eq!(c.beta, 0.0);
        assert_eq!(c.format, Format::Csv);
        let c = ExperimentConfig::resolve(None, &[("pair.x2".into(), "[0,2,0]".into())]).unwrap();
        assert_eq!(c.pair.x2, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn validation() {
        for (k, v) in [("grid.dt", "0"), ("beta", "-1"), ("mc.replicas", "0"), ("dimension", "2"), ("pair.x1", "[0,0]"), ("mc.t_max_factor", "1")] {
            let e = ExperimentConfig::resolve(None, &[(k.into(), v.into())]).unwrap_err();
            assert!(matches!(e, Error::Config { .. }), "{k}");
            assert_eq!(e.exit_code(), 2);
        }
    }
}
