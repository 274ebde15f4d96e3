//! Run configuration: a JSON document, `--set` overrides and the
//! `GRADIFORM_SEED` environment variable.

use std::path::Path;

use gradiform::dynamics::Axis;
use gradiform::{QuadratureSpec, SamplePlan, SystemSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const SEED_ENV: &str = "GRADIFORM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub sampling: SamplePlan,
    pub quadrature: QuadratureSpec,
    pub tolerances: Tolerances,
    pub loops: LoopOptions,
    pub solver: SolverOptions,
    pub simulation: SimulationOptions,
    /// Function checked for descent by `simulate`.
    pub potential_source: Option<PotentialSource>,
    pub output: OutputOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::new("lorenz"),
            sampling: SamplePlan::default(),
            quadrature: QuadratureSpec::Fixed { nodes: 64 },
            tolerances: Tolerances::default(),
            loops: LoopOptions::default(),
            solver: SolverOptions::default(),
            simulation: SimulationOptions::default(),
            potential_source: None,
            output: OutputOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub closedness: f64,
    pub solver: f64,
    pub consistency: f64,
    pub lyapunov: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            closedness: 1e-8,
            solver: 1e-10,
            consistency: 1e-6,
            lyapunov: 1e-6,
        }
    }
}

/// Coordinate-plane circles about the origin used for circulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopOptions {
    pub radius: f64,
    pub nodes: usize,
    pub panels: usize,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            radius: 1.0,
            nodes: 16,
            panels: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Also run the state-dependent collocation solver.
    pub general: bool,
    pub degree: usize,
    pub max_iter: usize,
    pub samples: usize,
    pub barrier_weight: f64,
    /// Random null-space combinations tried in the constant case.
    pub draws: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            general: false,
            degree: 1,
            max_iter: 200,
            samples: 32,
            barrier_weight: 1e-4,
            draws: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationOptions {
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    /// Deterministic trajectories started at quasi-random points in the
    /// ball of radius `initial_radius`, unless `initial` lists them.
    pub trajectories: usize,
    pub initial_radius: f64,
    pub initial: Option<Vec<Vec<f64>>>,
    pub eps: Vec<f64>,
    pub ensemble_size: usize,
    pub master_seed: u64,
    pub sde_dt: f64,
    pub sde_steps: usize,
    pub sde_record_every: usize,
    pub burn_in_fraction: f64,
    /// Histogram axes; one `{lo, hi, bins}` per dimension, or a single axis
    /// reused for every dimension.
    pub grid: Vec<Axis>,
    /// Cells with every center coordinate within this bound enter the
    /// comparison against the analytic potential.
    pub compare_radius: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            steps: 1000,
            record_every: 1,
            trajectories: 4,
            initial_radius: 1.0,
            initial: None,
            eps: vec![0.05],
            ensemble_size: 64,
            master_seed: 0,
            sde_dt: 1e-3,
            sde_steps: 195_313,
            sde_record_every: 10,
            burn_in_fraction: 0.2,
            grid: vec![Axis {
                lo: -1.5,
                hi: 1.5,
                bins: 60,
            }],
            compare_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSource {
    /// The system's closed-form potential.
    Analytic,
    /// Negated homotopy potential of the field's one-form.
    Homotopy,
    /// Negated homotopy potential after the constant symmetrizing change of
    /// variables of the linearization.
    Transform,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    pub out: Option<String>,
    pub traj_dir: Option<String>,
}

/// Sets `path` (dot separated) in `doc` to `value`, creating objects on the
/// way. `value` is parsed as JSON when possible, else taken as a string.
pub fn apply_override(doc: &mut Value, path: &str, value: &str) -> Result<(), CliError> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path `{path}`")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Config(format!("`{path}`: `{key}` is not inside an object")));
        }
        node = node
            .as_object_mut()
            .expect("checked above")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), parsed);
            Ok(())
        }
        None => Err(CliError::Config(format!("`{path}` does not lead into an object"))),
    }
}

/// Parses `k=v` override arguments.
pub fn parse_set(arg: &str) -> Result<(String, String), CliError> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| CliError::Config(format!("override `{arg}` is not of the form key=value")))
}

/// File (or defaults), then overrides, then the seed variable.
pub fn resolve(
    text: Option<&str>,
    overrides: &[(String, String)],
    env_seed: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut doc: Value = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?,
        None => Value::Object(Default::default()),
    };
    if !doc.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
        apply_override(&mut doc, "simulation.master_seed", &seed.to_string())?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load(
    path: Option<&Path>,
    overrides: &[(String, String)],
    env_seed: Option<&str>,
) -> Result<RunConfig, CliError> {
    let text = path
        .map(|p| std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))))
        .transpose()?;
    resolve(text.as_deref(), overrides, env_seed)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let bad = |m: &str| Err(CliError::Config(m.to_string()));
    if cfg.sampling.count == 0 || !(cfg.sampling.radius > 0.0) {
        return bad("sampling.count must be positive and sampling.radius > 0");
    }
    let sim = &cfg.simulation;
    if !(sim.dt > 0.0 && sim.sde_dt > 0.0) || sim.steps == 0 || sim.sde_steps == 0 {
        return bad("simulation step sizes and counts must be positive");
    }
    if !(0.0..1.0).contains(&sim.burn_in_fraction) {
        return bad("simulation.burn_in_fraction must lie in [0, 1)");
    }
    if sim.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return bad("simulation.eps entries must be positive");
    }
    for a in &sim.grid {
        if Axis::new(a.lo, a.hi, a.bins).is_err() {
            return bad("simulation.grid axes need lo < hi and bins > 0");
        }
    }
    if cfg.loops.nodes == 0 || cfg.loops.panels == 0 {
        return bad("loops.nodes and loops.panels must be positive");
    }
    Ok(())
}
