//! Scenario configuration: JSON schema with defaults, environment overrides
//! and validation errors that name the offending key path.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nonlinear::PicardOptions;
use crate::sphere::SphereRule;
use crate::velocity::{EquilibriumState, VelocityGrid};

/// Prefix of environment overrides: `KINLAYER_EQUILIBRIUM__RHO_INF=2` sets
/// `equilibrium.rho_inf`.
pub const ENV_PREFIX: &str = "KINLAYER_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_per_axis: usize,
    /// `None` uses the equilibrium's default cutoff
    #[serde(default)]
    pub cutoff: Option<f64>,
}

impl GridConfig {
    pub fn build(&self, state: &EquilibriumState) -> Result<VelocityGrid> {
        VelocityGrid::new(self.n_per_axis, self.cutoff.unwrap_or_else(|| state.default_cutoff()))
    }
}

fn default_operator_grid() -> GridConfig {
    GridConfig { n_per_axis: 8, cutoff: None }
}

fn default_dynamics_grid() -> GridConfig {
    GridConfig { n_per_axis: 4, cutoff: Some(4.0) }
}

fn default_seed() -> u64 {
    42
}

fn default_beta() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub scan_step: f64,
    pub margin: f64,
    pub refine_factor: f64,
    pub saturation_tol: f64,
    pub gamma_trials: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { scan_step: 0.01, margin: 0.01, refine_factor: 1.25, saturation_tol: 0.05, gamma_trials: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesConfig {
    pub velocity_grid: GridConfig,
    pub n_x: usize,
    pub x_max: f64,
    pub stretch: f64,
    pub datum_width: f64,
    pub order: usize,
    /// steps per `1/max ν`
    pub steps: usize,
    pub tolerance: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            velocity_grid: GridConfig { n_per_axis: 6, cutoff: Some(4.5) },
            n_x: 200,
            x_max: 20.0,
            stretch: 1.0,
            datum_width: 3.0,
            order: 6,
            steps: 20,
            tolerance: 1e-3,
        }
    }
}

/// Linear decay experiment of the weighted semigroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub n_x: usize,
    pub x_max: f64,
    pub stretch: f64,
    /// `None` uses the default `0.1 min ν / max(1, R_v)`
    pub sigma: Option<f64>,
    /// `Δt = dt_factor / max ν`
    pub dt_factor: f64,
    pub t_final: f64,
    pub datum_centre: f64,
    pub datum_width: f64,
    pub fit_window: [f64; 2],
    pub min_r2: f64,
    pub kappa_tolerance: f64,
    pub series: SeriesConfig,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            n_x: 60,
            x_max: 200.0,
            stretch: 1.05,
            sigma: Some(0.05),
            dt_factor: 0.2,
            t_final: 10.0,
            datum_centre: 20.0,
            datum_width: 2.0,
            fit_window: [2.5, 10.0],
            min_r2: 0.98,
            kappa_tolerance: 0.1,
            series: SeriesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlabConfig {
    pub n_x: usize,
    pub x_max: f64,
    pub stretch: f64,
    pub delta_tilde: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub theta: f64,
    pub fit_window: Option<[f64; 2]>,
    pub min_r2: f64,
}

impl Default for SlabConfig {
    fn default() -> Self {
        Self {
            n_x: 60,
            x_max: 50.0,
            stretch: 1.05,
            delta_tilde: 1e-3,
            tol: 1e-12,
            max_iter: 60,
            theta: 1.0,
            fit_window: None,
            min_r2: 0.98,
        }
    }
}

/// Shared setup of the nonlinear runs (global, periodic, stationary, stability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    pub n_x: usize,
    pub x_max: f64,
    pub stretch: f64,
    pub modes: Vec<[i32; 2]>,
    pub tangential_period: f64,
    /// `R` of `φ_R`; `None` for slab runs
    pub mollifier_radius: Option<f64>,
    pub sigma: f64,
    pub delta_tilde: f64,
    pub epsilon: f64,
    pub period: f64,
    pub profile_width: f64,
    pub steps_per_period: usize,
    pub picard: PicardOptions,
    pub k_max: usize,
    pub cauchy_tol: f64,
    pub min_r2: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            n_x: 60,
            x_max: 50.0,
            stretch: 1.05,
            modes: vec![[0, 0]],
            tangential_period: 8.0,
            mollifier_radius: None,
            sigma: 0.2,
            delta_tilde: 1e-3,
            epsilon: 1e-3,
            period: 2.0,
            profile_width: 1.0,
            steps_per_period: 24,
            picard: PicardOptions::default(),
            k_max: 40,
            cauchy_tol: 1e-8,
            min_r2: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtaConfig {
    pub lo: f64,
    pub hi: f64,
    pub bisections: usize,
    pub iterations: usize,
}

impl Default for EtaConfig {
    fn default() -> Self {
        Self { lo: 1e-3, hi: 1e4, bisections: 10, iterations: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub deltas: Vec<f64>,
    pub steps: usize,
    /// bound constants across the sweep must agree within this factor
    pub constant_factor: f64,
    pub eta: EtaConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self { deltas: vec![1e-4, 1e-3, 1e-2], steps: 240, constant_factor: 2.0, eta: EtaConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarityConfig {
    pub levels: usize,
    pub tolerance: f64,
    pub k_max: usize,
    /// tangential modes of the stationarity run; with the zero mode alone the
    /// lift is already the exact stationary state
    pub modes: Vec<[i32; 2]>,
    pub mollifier_radius: Option<f64>,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        Self { levels: 3, tolerance: 1e-6, k_max: 80, modes: vec![[0, 0], [1, 0], [-1, 0]], mollifier_radius: Some(2.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityTarget {
    Stationary,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub target: StabilityTarget,
    pub count: usize,
    pub amplitude: f64,
    pub periods: usize,
    pub min_r2: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { target: StabilityTarget::Stationary, count: 3, amplitude: 1e-3, periods: 20, min_r2: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub t_final: f64,
    /// `None` uses `linear.dt_factor / max ν`
    pub dt: Option<f64>,
    /// snapshot cadence in steps; 0 disables snapshots
    pub snapshot_every: usize,
    pub series_order: Option<usize>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self { t_final: 10.0, dt: None, snapshot_every: 0, series_order: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub equilibrium: EquilibriumState,
    /// grid of the operator-level checks (spectrum, kernel, constants)
    #[serde(default = "default_operator_grid")]
    pub velocity_grid: GridConfig,
    /// grid of every time-dependent run
    #[serde(default = "default_dynamics_grid")]
    pub dynamics_grid: GridConfig,
    #[serde(default)]
    pub sphere_rule: SphereRule,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub slab: SlabConfig,
    #[serde(default)]
    pub nonlinear: NonlinearConfig,
    #[serde(default)]
    pub global: GlobalConfig,
    #[serde(default)]
    pub stationarity: StationarityConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

/// Joins the path reported by the deserializer with the field named in a
/// "missing field" message (unknown fields are already part of the path).
fn error_path(path: &str, message: &str) -> String {
    let field = message.strip_prefix("missing field `").and_then(|rest| rest.split('`').next());
    match (path, field) {
        (".", Some(f)) | ("", Some(f)) => f.to_string(),
        (p, Some(f)) => format!("{p}.{f}"),
        (".", None) | ("", None) => "<root>".to_string(),
        (p, None) => p.to_string(),
    }
}

impl Config {
    /// A configuration with every section at its default.
    pub fn with_equilibrium(equilibrium: EquilibriumState) -> Self {
        Self {
            equilibrium,
            velocity_grid: default_operator_grid(),
            dynamics_grid: default_dynamics_grid(),
            sphere_rule: SphereRule::default(),
            seed: default_seed(),
            beta: default_beta(),
            kernel: KernelConfig::default(),
            linear: LinearConfig::default(),
            slab: SlabConfig::default(),
            nonlinear: NonlinearConfig::default(),
            global: GlobalConfig::default(),
            stationarity: StationarityConfig::default(),
            stability: StabilityConfig::default(),
            evolve: EvolveConfig::default(),
        }
    }

    /// Reference setup: `ρ∞ = 1`, `u∞ = (−2, 0, 0)`, `T∞ = 0.6`, `σ₀ = 0.2`.
    pub fn reference() -> Self {
        Self::with_equilibrium(EquilibriumState { rho_inf: 1.0, u_inf: [-2.0, 0.0, 0.0], t_inf: 0.6, sigma0: 0.2 })
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string();
            config_error(&error_path(&path, &msg), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_error("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    /// Reads `path`, applies the `KINLAYER_*` environment overrides and validates.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| config_error("<root>", e.to_string()))?;
        apply_env_overrides(&mut value, std::env::vars())?;
        Self::from_value(value)
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        let eq = &self.equilibrium;
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_error(path, format!("must be a positive finite number, got {v}")))
            }
        };
        positive("equilibrium.rho_inf", eq.rho_inf)?;
        positive("equilibrium.T_inf", eq.t_inf)?;
        positive("equilibrium.sigma0", eq.sigma0)?;
        if eq.u_inf.iter().any(|u| !u.is_finite()) {
            return Err(config_error("equilibrium.u_inf", "entries must be finite"));
        }
        if eq.require_supersonic_inflow().is_err() {
            return Err(config_error(
                "equilibrium.u_inf",
                format!("needs a supersonic inflow u_inf = (u, 0, 0) with Mach number < -1, got {}", eq.mach_number()),
            ));
        }
        for (name, g) in [("velocity_grid", &self.velocity_grid), ("dynamics_grid", &self.dynamics_grid)] {
            if g.n_per_axis < 4 {
                return Err(config_error(&format!("{name}.n_per_axis"), "needs at least 4 nodes per axis"));
            }
            if let Some(c) = g.cutoff {
                positive(&format!("{name}.cutoff"), c)?;
            }
        }
        if let Some(c) = self.linear.series.velocity_grid.cutoff {
            positive("linear.series.velocity_grid.cutoff", c)?;
        }
        if !(self.beta > 1.5) {
            return Err(config_error("beta", format!("must exceed 3/2, got {}", self.beta)));
        }
        positive("kernel.scan_step", self.kernel.scan_step)?;
        if !(self.kernel.refine_factor > 1.0) {
            return Err(config_error("kernel.refine_factor", "must exceed 1"));
        }
        if let Some(s) = self.linear.sigma {
            positive("linear.sigma", s)?;
        }
        positive("linear.dt_factor", self.linear.dt_factor)?;
        positive("linear.t_final", self.linear.t_final)?;
        if !(self.linear.fit_window[0] < self.linear.fit_window[1]) {
            return Err(config_error("linear.fit_window", "needs start < end"));
        }
        if self.linear.series.order == 0 || self.linear.series.order > 8 {
            return Err(config_error("linear.series.order", "must be in 1..=8"));
        }
        if !(self.slab.delta_tilde >= 0.0) {
            return Err(config_error("slab.delta_tilde", "must be non-negative"));
        }
        if !(self.slab.theta > 0.0 && self.slab.theta <= 1.0) {
            return Err(config_error("slab.theta", "must be in (0, 1]"));
        }
        let nl = &self.nonlinear;
        positive("nonlinear.sigma", nl.sigma)?;
        positive("nonlinear.period", nl.period)?;
        if nl.steps_per_period == 0 {
            return Err(config_error("nonlinear.steps_per_period", "must be positive"));
        }
        for (section, modes, radius) in [
            ("nonlinear", &nl.modes, nl.mollifier_radius),
            ("stationarity", &self.stationarity.modes, self.stationarity.mollifier_radius),
        ] {
            if modes.first() != Some(&[0, 0]) {
                return Err(config_error(&format!("{section}.modes"), "the first mode must be [0, 0]"));
            }
            if modes.len() > 5 {
                return Err(config_error(&format!("{section}.modes"), "at most 5 tangential modes"));
            }
            if modes.len() > 1 && radius.is_none() {
                return Err(config_error(
                    &format!("{section}.mollifier_radius"),
                    "tangential modes need a mollifier radius",
                ));
            }
        }
        if !(nl.picard.theta > 0.0 && nl.picard.theta <= 1.0) {
            return Err(config_error("nonlinear.picard.theta", "must be in (0, 1]"));
        }
        if self.global.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(config_error("global.deltas", "entries must be positive"));
        }
        if !(self.global.eta.lo > 0.0 && self.global.eta.hi > self.global.eta.lo) {
            return Err(config_error("global.eta", "needs 0 < lo < hi"));
        }
        if self.stationarity.levels == 0 || nl.steps_per_period % (1 << (self.stationarity.levels - 1)) != 0 {
            return Err(config_error(
                "stationarity.levels",
                "nonlinear.steps_per_period must be divisible by 2^(levels - 1)",
            ));
        }
        positive("evolve.t_final", self.evolve.t_final)?;
        if let Some(dt) = self.evolve.dt {
            positive("evolve.dt", dt)?;
        }
        if let Some(m) = self.evolve.series_order {
            if m == 0 || m > 8 {
                return Err(config_error("evolve.series_order", "must be in 1..=8"));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Config::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Applies `KINLAYER_A__B=value` overrides to `value`. Segments match
/// existing keys case-insensitively and are lower-cased otherwise; the value
/// is parsed as JSON and kept as a string if that fails. Variables are applied
/// in sorted order.
pub fn apply_env_overrides<I>(value: &mut Value, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let segments: Vec<&str> = key[ENV_PREFIX.len()..].split("__").collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(config_error(&key, "malformed override name"));
        }
        let parsed: Value = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
        let mut node = &mut *value;
        let mut path = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| config_error(&path.join("."), "override descends into a non-object value"))?;
            let name = obj
                .keys()
                .find(|k| k.eq_ignore_ascii_case(seg))
                .cloned()
                .unwrap_or_else(|| seg.to_ascii_lowercase());
            path.push(name.clone());
            if i + 1 == segments.len() {
                obj.insert(name, parsed.clone());
                break;
            }
            node = obj.entry(name).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({"equilibrium": {"rho_inf": 1.0, "u_inf": [-2.0, 0.0, 0.0], "T_inf": 0.6, "sigma0": 0.2}})
    }

    fn path_of(v: Value) -> String {
        match Config::from_value(v) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = Config::from_value(minimal()).unwrap();
        assert_eq!(c, Config::reference());
        assert_eq!(c.seed, 42);
        assert_eq!(c.velocity_grid.n_per_axis, 8);
    }

    #[test]
    fn missing_key_names_its_path() {
        let mut v = minimal();
        v["equilibrium"].as_object_mut().unwrap().remove("rho_inf");
        assert_eq!(path_of(v), "equilibrium.rho_inf");
        assert_eq!(path_of(json!({})), "equilibrium");
    }

    #[test]
    fn unknown_and_mistyped_keys_name_their_path() {
        let mut v = minimal();
        v["slab"] = json!({"n_xx": 3});
        assert_eq!(path_of(v), "slab.n_xx");
        let mut v = minimal();
        v["nonlinear"] = json!({"picard": {"tol": "small"}});
        assert_eq!(path_of(v), "nonlinear.picard.tol");
    }

    #[test]
    fn semantic_errors_name_their_path() {
        let mut v = minimal();
        v["equilibrium"]["rho_inf"] = json!(-1.0);
        assert_eq!(path_of(v), "equilibrium.rho_inf");
        let mut v = minimal();
        v["equilibrium"]["u_inf"] = json!([-0.5, 0.0, 0.0]);
        assert_eq!(path_of(v), "equilibrium.u_inf");
        let mut v = minimal();
        v["stationarity"] = json!({"levels": 5});
        assert_eq!(path_of(v), "stationarity.levels");
    }

    #[test]
    fn env_overrides_follow_key_paths() {
        let mut v = minimal();
        let vars = vec![
            ("KINLAYER_EQUILIBRIUM__T_INF".to_string(), "0.7".to_string()),
            ("KINLAYER_SLAB__N_X".to_string(), "40".to_string()),
            ("KINLAYER_STABILITY__TARGET".to_string(), "periodic".to_string()),
            ("OTHER_VAR".to_string(), "1".to_string()),
        ];
        apply_env_overrides(&mut v, vars).unwrap();
        let c = Config::from_value(v).unwrap();
        assert_eq!(c.equilibrium.t_inf, 0.7);
        assert_eq!(c.slab.n_x, 40);
        assert_eq!(c.stability.target, StabilityTarget::Periodic);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::reference();
        let mut b = Config::reference();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        let round = Config::from_json_str(&a.canonical_json()).unwrap();
        assert_eq!(round.hash(), a.hash());
    }
}
