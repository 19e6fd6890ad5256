//! TOML run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use switchsde::hormander::BracketMode;
use switchsde::levy::{parse_density_table, LevyMeasureSpec, DEFAULT_SMALL_JUMP_CUTOFF};
use switchsde::model::{presets, LinearDrift, ModelSpec, SinDrift, ZeroDrift};
use switchsde::sde::SimulationSpec;
use switchsde::switching::{ConstantRates, RateMatrixSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    /// `(field, message)`.
    Invalid(String, String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(field, m) => write!(f, "invalid config field `{field}`: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(field.to_string(), msg.into())
}

fn default_seed() -> u64 {
    1
}
fn default_paths() -> usize {
    1000
}
fn default_horizon() -> f64 {
    1.0
}
fn default_step() -> f64 {
    0.01
}
fn default_workers() -> usize {
    1
}
fn default_export() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Number of individual path CSVs written by `simulate`.
    #[serde(default = "default_export")]
    pub export_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub levy: LevyConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            paths: default_paths(),
            horizon: default_horizon(),
            step: default_step(),
            workers: default_workers(),
            export_paths: default_export(),
            out: None,
            model: ModelConfig::default(),
            levy: LevyConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

fn default_model_name() -> String {
    "zero_drift".into()
}

/// Built-in model plus optional overrides. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model_name")]
    pub name: String,
    /// State dimension for `zero_drift`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    /// One drift matrix per regime for the linear families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// Constant generator `Q`; overrides `switching_rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<Vec<f64>>>,
    /// Symmetric two-state rate for the two-regime presets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub regime0: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: default_model_name(),
            dimension: None,
            matrices: None,
            offsets: None,
            amplitudes: None,
            frequencies: None,
            phases: None,
            sigma: None,
            rates: None,
            switching_rate: None,
            x0: None,
            regime0: 0,
        }
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(field, "expected a nonempty rectangular list of rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn core_err(field: &str) -> impl Fn(switchsde::Error) -> ConfigError + '_ {
    move |e| invalid(field, e.to_string())
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec, ConfigError> {
        let base = match self.name.as_str() {
            "zero_drift" => {
                let n = self.dimension.or_else(|| self.sigma.as_ref().map(Vec::len)).unwrap_or(1);
                if n == 0 {
                    return Err(invalid("model.dimension", "must be at least 1"));
                }
                presets::zero_drift(n).map_err(core_err("model"))?
            }
            "linear" | "kalman" | "two_regime_linear" if self.matrices.is_some() || self.offsets.is_some() => {
                let template = presets::by_name(&self.name).map_err(core_err("model.name"))?;
                let mats = match &self.matrices {
                    Some(ms) => ms.iter().map(|m| matrix("model.matrices", m)).collect::<Result<Vec<_>, _>>()?,
                    None => return Err(invalid("model.matrices", "offsets need explicit matrices")),
                };
                let offsets = match &self.offsets {
                    Some(os) => os.iter().map(|o| DVector::from_column_slice(o)).collect(),
                    None => Vec::new(),
                };
                let drift = LinearDrift::new(mats, offsets).map_err(core_err("model.matrices"))?;
                let n = drift.matrices[0].nrows();
                let sigma = if template.n() == n { template.sigma.clone() } else { DMatrix::identity(n, n) };
                ModelSpec { drift: Arc::new(drift), sigma, ..template }
            }
            "sin_bounded" if self.amplitudes.is_some() || self.frequencies.is_some() || self.phases.is_some() => {
                let template = presets::sin_bounded(1.0).map_err(core_err("model"))?;
                let freq = match &self.frequencies {
                    Some(f) => matrix("model.frequencies", f)?,
                    None => DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]),
                };
                let n = freq.nrows();
                let phases = self.phases.clone().map_or_else(|| DVector::zeros(n), DVector::from_vec);
                let amps = self.amplitudes.clone().unwrap_or_else(|| vec![1.0, 0.5]);
                let drift = SinDrift::new(amps, freq, phases).map_err(core_err("model.frequencies"))?;
                let sigma = if n == template.n() { template.sigma.clone() } else { DMatrix::identity(n, n) };
                ModelSpec { drift: Arc::new(drift), sigma, ..template }
            }
            name => presets::by_name(name).map_err(core_err("model.name"))?,
        };
        let mut model = base;
        if let Some(s) = &self.sigma {
            model.sigma = matrix("model.sigma", s)?;
        }
        if let Some(q) = &self.rates {
            model.rates = RateMatrixSpec::constant(matrix("model.rates", q)?).map_err(core_err("model.rates"))?;
        } else if let Some(lambda) = self.switching_rate {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(invalid("model.switching_rate", "must be finite and nonnegative"));
            }
            let states = model.rates.states();
            if states != 2 {
                return Err(invalid("model.switching_rate", format!("needs a two-state model, this one has {states}")));
            }
            model.rates = RateMatrixSpec::new(Arc::new(ConstantRates::symmetric_pair(lambda)), lambda.max(1.0)).map_err(core_err("model.switching_rate"))?;
        }
        if self.name == "zero_drift" && model.drift.dim() != model.n() {
            model.drift = Arc::new(ZeroDrift { n: model.n() });
        }
        let model = ModelSpec::new(model.name.clone(), model.drift.clone(), model.sigma.clone(), model.rates.clone()).map_err(core_err("model.sigma"))?;
        if self.regime0 >= model.rates.states() {
            return Err(invalid("model.regime0", format!("must be below the state count {}", model.rates.states())));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != model.n() {
                return Err(invalid("model.x0", format!("has length {}, model dimension is {}", x0.len(), model.n())));
            }
        }
        Ok(model)
    }

    pub fn initial_state(&self, n: usize) -> DVector<f64> {
        self.x0.clone().map_or_else(|| DVector::zeros(n), DVector::from_vec)
    }
}

fn default_levy_kind() -> String {
    "stable".into()
}
fn default_alpha() -> f64 {
    1.0
}
fn default_cutoff() -> f64 {
    DEFAULT_SMALL_JUMP_CUTOFF
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    /// `stable`, `tabulated` or `point_mass`.
    #[serde(default = "default_levy_kind")]
    pub kind: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// CSV with header `u,density`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default)]
    pub extrapolate_tails: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default = "default_cutoff")]
    pub small_jump_cutoff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_truncation: Option<f64>,
}

impl Default for LevyConfig {
    fn default() -> Self {
        Self {
            kind: default_levy_kind(),
            alpha: default_alpha(),
            table: None,
            extrapolate_tails: false,
            location: None,
            weight: None,
            small_jump_cutoff: default_cutoff(),
            upper_truncation: None,
        }
    }
}

impl LevyConfig {
    pub fn build(&self, base_dir: &Path) -> Result<LevyMeasureSpec, ConfigError> {
        let spec = match self.kind.as_str() {
            "stable" => LevyMeasureSpec::stable(self.alpha),
            "tabulated" => {
                let rel = self.table.as_ref().ok_or_else(|| invalid("levy.table", "required for kind = \"tabulated\""))?;
                let path = base_dir.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| invalid("levy.table", format!("{}: {e}", path.display())))?;
                let nodes = parse_density_table(&text).map_err(core_err("levy.table"))?;
                LevyMeasureSpec::tabulated(nodes, self.extrapolate_tails)
            }
            "point_mass" => {
                let location = self.location.ok_or_else(|| invalid("levy.location", "required for kind = \"point_mass\""))?;
                let weight = self.weight.ok_or_else(|| invalid("levy.weight", "required for kind = \"point_mass\""))?;
                LevyMeasureSpec::point_mass(location, weight)
            }
            other => return Err(invalid("levy.kind", format!("unknown kind '{other}', expected stable, tabulated or point_mass"))),
        };
        let mut spec = spec.with_cutoff(self.small_jump_cutoff);
        if let Some(u) = self.upper_truncation {
            spec = spec.truncated(u);
        }
        spec.validate().map_err(|e| {
            let field = if self.kind == "stable" { "levy.alpha" } else { "levy" };
            invalid(field, e.to_string())
        })?;
        Ok(spec)
    }
}

fn default_fd_eps() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowsConfig {
    /// ε values of the finite-difference check (constant-rate models only).
    #[serde(default = "default_fd_eps")]
    pub fd_epsilons: Vec<f64>,
    /// `h = 1_{[0, h_length)} · e_{h_coordinate}`.
    #[serde(default = "one")]
    pub h_length: f64,
    #[serde(default)]
    pub h_coordinate: usize,
}

impl Default for FlowsConfig {
    fn default() -> Self {
        Self { fd_epsilons: default_fd_eps(), h_length: 1.0, h_coordinate: 0 }
    }
}

fn default_depth() -> usize {
    2
}
fn default_samples_256() -> usize {
    256
}
fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HormanderConfig {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_samples_256")]
    pub x_samples: usize,
    #[serde(default = "default_samples_256")]
    pub sphere_samples: usize,
    #[serde(default = "two")]
    pub box_half_width: f64,
    /// Allow finite-difference brackets when analytic derivatives are missing.
    #[serde(default)]
    pub finite_difference: bool,
}

impl Default for HormanderConfig {
    fn default() -> Self {
        Self { depth: 2, x_samples: 256, sphere_samples: 256, box_half_width: 2.0, finite_difference: false }
    }
}

impl HormanderConfig {
    pub fn mode(&self) -> BracketMode {
        if self.finite_difference {
            BracketMode::Auto
        } else {
            BracketMode::Analytic
        }
    }
}

fn default_tail_eps() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}
fn default_cap() -> f64 {
    switchsde::diagnostics::spectrum::DEFAULT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsConfig {
    #[serde(default = "default_tail_eps")]
    pub epsilons: Vec<f64>,
    #[serde(default = "one")]
    pub moment_order: f64,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

impl Default for TailsConfig {
    fn default() -> Self {
        Self { epsilons: default_tail_eps(), moment_order: 1.0, cap: default_cap() }
    }
}

fn default_decomp_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    #[serde(default = "default_decomp_samples")]
    pub samples: usize,
    #[serde(default = "one")]
    pub time: f64,
    /// Number of same-recipe self-test repetitions.
    #[serde(default)]
    pub self_test_repetitions: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self { samples: default_decomp_samples(), time: 1.0, self_test_repetitions: 0 }
    }
}

fn default_norris_eps() -> Vec<f64> {
    vec![0.9, 0.5, 0.3, 0.1, 1e-2, 1e-3]
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorrisConfig {
    #[serde(default)]
    pub regime: usize,
    #[serde(default)]
    pub t1: f64,
    #[serde(default = "one")]
    pub t2: f64,
    #[serde(default = "one_usize")]
    pub level: usize,
    #[serde(default = "half")]
    pub beta: f64,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "default_norris_eps")]
    pub epsilons: Vec<f64>,
    /// Test direction; defaults to `e₁`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
}

impl Default for NorrisConfig {
    fn default() -> Self {
        Self { regime: 0, t1: 0.0, t2: 1.0, level: 1, beta: 0.5, theta: 1.0, epsilons: default_norris_eps(), v: None }
    }
}

fn default_eta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradRepConfig {
    #[serde(default)]
    pub coordinate: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Width of the Gaussian bump test function.
    #[serde(default = "one")]
    pub bump_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump_center: Option<Vec<f64>>,
}

impl Default for GradRepConfig {
    fn default() -> Self {
        Self { coordinate: 0, eta: default_eta(), bump_width: 1.0, bump_center: None }
    }
}

fn default_grid_points() -> usize {
    101
}
fn default_clip() -> f64 {
    switchsde::diagnostics::kde::DEFAULT_CLIP_QUANTILE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default)]
    pub coordinate: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
    /// Grid bounds; default to the clip quantiles of the sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { coordinate: 0, grid_points: default_grid_points(), clip: default_clip(), lower: None, upper: None }
    }
}

fn default_h3_eps() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-6.0 + 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H3Config {
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "default_h3_eps")]
    pub epsilons: Vec<f64>,
}

impl Default for H3Config {
    fn default() -> Self {
        Self { theta: 1.0, epsilons: default_h3_eps() }
    }
}

/// A present section enables the diagnostic in `run`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flows: Option<FlowsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hormander: Option<HormanderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norris: Option<NorrisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradrep: Option<GradRepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h3: Option<H3Config>,
}

/// A validated configuration with its built model and driver.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub model: ModelSpec,
    pub levy: LevyMeasureSpec,
}

impl LoadedConfig {
    pub fn simulation(&self) -> SimulationSpec {
        SimulationSpec::new(
            self.config.model.initial_state(self.model.n()),
            self.config.model.regime0,
            self.config.horizon,
            self.config.step,
            self.levy.clone(),
        )
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn to_toml(config: &RunConfig) -> String {
    toml::to_string(config).expect("run configs always serialize")
}

fn check_positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn check_grid(field: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid(field, "must be a nonempty list of positive values"));
    }
    Ok(())
}

/// Checks every numeric parameter and builds the model and driver.
pub fn validate(config: RunConfig, base_dir: &Path) -> Result<LoadedConfig, ConfigError> {
    if config.seed > i64::MAX as u64 {
        return Err(invalid("seed", "must be below 2^63 (TOML integers are signed)"));
    }
    check_positive("horizon", config.horizon)?;
    check_positive("step", config.step)?;
    if config.step > config.horizon {
        return Err(invalid("step", format!("must not exceed horizon {}", config.horizon)));
    }
    if config.workers == 0 {
        return Err(invalid("workers", "must be at least 1"));
    }
    let model = config.model.build()?;
    let levy = config.levy.build(base_dir)?;
    let n = model.n();
    let d = &config.diagnostics;
    if let Some(f) = &d.flows {
        check_grid("diagnostics.flows.fd_epsilons", &f.fd_epsilons)?;
        check_positive("diagnostics.flows.h_length", f.h_length)?;
        if f.h_coordinate >= model.d() {
            return Err(invalid("diagnostics.flows.h_coordinate", format!("must be below the driver dimension {}", model.d())));
        }
    }
    if let Some(h) = &d.hormander {
        if h.depth == 0 {
            return Err(invalid("diagnostics.hormander.depth", "must be at least 1"));
        }
        if h.x_samples == 0 || h.sphere_samples == 0 {
            return Err(invalid("diagnostics.hormander.x_samples", "sample counts must be at least 1"));
        }
        check_positive("diagnostics.hormander.box_half_width", h.box_half_width)?;
    }
    if let Some(t) = &d.tails {
        check_grid("diagnostics.tails.epsilons", &t.epsilons)?;
        if t.epsilons.windows(2).any(|w| !(w[1] > w[0])) || t.epsilons.len() < 2 {
            return Err(invalid("diagnostics.tails.epsilons", "must hold at least two strictly increasing values"));
        }
        if !(t.moment_order >= 1.0) {
            return Err(invalid("diagnostics.tails.moment_order", "must be at least 1"));
        }
        check_positive("diagnostics.tails.cap", t.cap)?;
    }
    if let Some(dc) = &d.decompose {
        if dc.samples < switchsde::diagnostics::decomposition::MIN_DECOMPOSITION_SAMPLES {
            return Err(invalid("diagnostics.decompose.samples", "must be at least 1000"));
        }
        check_positive("diagnostics.decompose.time", dc.time)?;
    }
    if let Some(nc) = &d.norris {
        let params = norris_params(nc);
        params.validate(&model).map_err(|e| invalid("diagnostics.norris", e.to_string()))?;
        if nc.t2 > config.horizon + 1e-12 {
            return Err(invalid("diagnostics.norris.t2", "must not exceed the horizon"));
        }
        if let Some(v) = &nc.v {
            if v.len() != n {
                return Err(invalid("diagnostics.norris.v", format!("must have length {n}")));
            }
        }
    }
    if let Some(g) = &d.gradrep {
        if g.coordinate >= n {
            return Err(invalid("diagnostics.gradrep.coordinate", format!("must be below {n}")));
        }
        check_positive("diagnostics.gradrep.eta", g.eta)?;
        check_positive("diagnostics.gradrep.bump_width", g.bump_width)?;
        if g.bump_center.as_ref().is_some_and(|c| c.len() != n) {
            return Err(invalid("diagnostics.gradrep.bump_center", format!("must have length {n}")));
        }
    }
    if let Some(dn) = &d.density {
        if dn.coordinate >= n {
            return Err(invalid("diagnostics.density.coordinate", format!("must be below {n}")));
        }
        if dn.grid_points < 2 {
            return Err(invalid("diagnostics.density.grid_points", "must be at least 2"));
        }
        if !(0.0..0.5).contains(&dn.clip) {
            return Err(invalid("diagnostics.density.clip", "must lie in [0, 0.5)"));
        }
        if let (Some(lo), Some(hi)) = (dn.lower, dn.upper) {
            if !(lo < hi) {
                return Err(invalid("diagnostics.density.lower", "must be below upper"));
            }
        }
    }
    if let Some(h3) = &d.h3 {
        check_grid("diagnostics.h3.epsilons", &h3.epsilons)?;
        check_positive("diagnostics.h3.theta", h3.theta)?;
    }
    Ok(LoadedConfig { config, base_dir: base_dir.to_path_buf(), model, levy })
}

pub fn norris_params(nc: &NorrisConfig) -> switchsde::diagnostics::NorrisParams {
    switchsde::diagnostics::NorrisParams {
        regime: nc.regime,
        t1: nc.t1,
        t2: nc.t2,
        level: nc.level,
        beta: nc.beta,
        theta: nc.theta,
        epsilons: nc.epsilons.clone(),
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    let config = parse_config(&text)?;
    validate(config, path.parent().unwrap_or(Path::new(".")))
}
