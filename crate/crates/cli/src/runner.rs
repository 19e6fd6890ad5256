//! Experiment orchestration: pipelines, CSV outputs and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use switchsde::diagnostics::{self, kde, spectrum};
use switchsde::engine::{mean_and_se, run_indexed};
use switchsde::flows::{self, GaussianBump};
use switchsde::hormander::{build_brackets, estimate_kappa1, SampleBox, KAPPA_TOLERANCE};
use switchsde::levy::{check_h3, H3_REL_TOL};
use switchsde::rng::derive_seed;
use switchsde::sde::{simulate_path, StepFunction};

use crate::config::{norris_params, to_toml, LoadedConfig, RunConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

/// One diagnostic pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pipeline {
    Simulate,
    Flows,
    Hormander,
    Tails,
    Decompose,
    Norris,
    GradRep,
    Density,
    H3,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Flows => "flows",
            Pipeline::Hormander => "hormander",
            Pipeline::Tails => "tails",
            Pipeline::Decompose => "decompose",
            Pipeline::Norris => "norris",
            Pipeline::GradRep => "gradrep",
            Pipeline::Density => "density",
            Pipeline::H3 => "h3",
        }
    }

    // Seed tags; path-based pipelines share one so they see the same paths.
    fn seed_tag(self) -> u64 {
        match self {
            Pipeline::Simulate | Pipeline::Flows | Pipeline::Tails | Pipeline::Density => 0,
            Pipeline::Hormander => 1,
            Pipeline::Decompose => 2,
            Pipeline::Norris => 3,
            Pipeline::GradRep => 4,
            Pipeline::H3 => 5,
        }
    }

    /// Simulation plus every diagnostic with a config section.
    pub fn from_config(config: &RunConfig) -> Vec<Pipeline> {
        let d = &config.diagnostics;
        let mut out = vec![Pipeline::Simulate];
        let flags = [
            (d.flows.is_some(), Pipeline::Flows),
            (d.hormander.is_some(), Pipeline::Hormander),
            (d.tails.is_some(), Pipeline::Tails),
            (d.decompose.is_some(), Pipeline::Decompose),
            (d.norris.is_some(), Pipeline::Norris),
            (d.gradrep.is_some(), Pipeline::GradRep),
            (d.density.is_some(), Pipeline::Density),
            (d.h3.is_some(), Pipeline::H3),
        ];
        out.extend(flags.iter().filter(|f| f.0).map(|f| f.1));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSummary {
    pub name: String,
    /// `ok`, `skipped` or `failed`.
    pub status: String,
    pub values: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub paths: usize,
    pub workers: usize,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub diagnostics: Vec<DiagnosticSummary>,
    /// Wall-clock seconds per pipeline.
    pub timings: BTreeMap<String, f64>,
    /// Every emitted file except the manifest, sorted by path.
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn summary(&self, name: &str) -> Option<&DiagnosticSummary> {
        self.diagnostics.iter().find(|d| d.name == name)
    }

    /// `path → sha256` for the file inventory.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect()
    }
}

#[derive(Debug)]
pub enum RunError {
    Io(std::io::Error),
    /// A pipeline failed; the manifest on disk records what finished.
    Pipeline {
        manifest: Box<RunManifest>,
        error: switchsde::Error,
    },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Pipeline { manifest, error } => {
                let stage = manifest.diagnostics.last().map_or("run", |d| d.name.as_str());
                write!(f, "{stage} failed: {error}")
            }
        }
    }
}

impl std::error::Error for RunError {}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Hash of the config with execution-only fields (workers, out) cleared.
pub fn config_digest(config: &RunConfig) -> String {
    let canonical = RunConfig { workers: 1, out: None, ..config.clone() };
    hex::encode(Sha256::digest(to_toml(&canonical).as_bytes()))
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn write(&mut self, rel: &str, contents: &str) -> std::io::Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(())
    }

    fn inventory(&self) -> std::io::Result<Vec<FileEntry>> {
        let mut files = self
            .written
            .iter()
            .map(|rel| {
                let bytes = fs::read(self.dir.join(rel))?;
                Ok(FileEntry { path: rel.clone(), sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 })
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(files)
    }
}

fn row(values: &[f64]) -> String {
    let mut s = String::new();
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s.push('\n');
    s
}

fn coordinate_header(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!(",{prefix}{i}")).collect()
}

enum Outcome {
    Done(Map<String, Value>),
    Skipped(String),
}

fn values(pairs: Vec<(&str, Value)>) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

struct Context<'a> {
    loaded: &'a LoadedConfig,
    workers: usize,
}

impl Context<'_> {
    fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn seed(&self, p: Pipeline) -> u64 {
        derive_seed(self.config().seed, p.seed_tag())
    }
}

/// Runs the selected pipelines into `out` and writes `manifest.json`.
/// Results depend only on the config and seed, never on the worker count.
pub fn run_experiment(loaded: &LoadedConfig, selection: &[Pipeline], out: &Path, workers: usize) -> Result<RunManifest, RunError> {
    fs::create_dir_all(out)?;
    let ctx = Context { loaded, workers: workers.max(1) };
    let mut outputs = Outputs { dir: out.to_path_buf(), written: Vec::new() };
    let mut manifest = RunManifest {
        version: format!("switchsde {}", env!("CARGO_PKG_VERSION")),
        config_sha256: config_digest(&loaded.config),
        seed: loaded.config.seed,
        paths: loaded.config.paths,
        workers: ctx.workers,
        status: "ok".into(),
        error: None,
        diagnostics: Vec::new(),
        timings: BTreeMap::new(),
        files: Vec::new(),
    };
    let mut selection = selection.to_vec();
    selection.sort();
    selection.dedup();
    for p in selection {
        let start = Instant::now();
        let result = run_pipeline(&ctx, p, &mut outputs);
        manifest.timings.insert(p.name().to_string(), start.elapsed().as_secs_f64());
        match result {
            Ok(Outcome::Done(v)) => manifest.diagnostics.push(DiagnosticSummary { name: p.name().into(), status: "ok".into(), values: v }),
            Ok(Outcome::Skipped(reason)) => manifest.diagnostics.push(DiagnosticSummary {
                name: p.name().into(),
                status: "skipped".into(),
                values: values(vec![("reason", json!(reason))]),
            }),
            Err(PipelineError::Io(e)) => return Err(RunError::Io(e)),
            Err(PipelineError::Core(error)) => {
                manifest.diagnostics.push(DiagnosticSummary {
                    name: p.name().into(),
                    status: "failed".into(),
                    values: values(vec![("error", json!(error.to_string()))]),
                });
                manifest.status = "failed".into();
                manifest.error = Some(error.to_string());
                finish(&mut manifest, &outputs)?;
                return Err(RunError::Pipeline { manifest: Box::new(manifest), error });
            }
        }
    }
    finish(&mut manifest, &outputs)?;
    Ok(manifest)
}

fn finish(manifest: &mut RunManifest, outputs: &Outputs) -> std::io::Result<()> {
    manifest.files = outputs.inventory()?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(outputs.dir.join(MANIFEST_NAME), text + "\n")
}

enum PipelineError {
    Io(std::io::Error),
    Core(switchsde::Error),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e)
    }
}

impl From<switchsde::Error> for PipelineError {
    fn from(e: switchsde::Error) -> Self {
        PipelineError::Core(e)
    }
}

type Step = Result<Outcome, PipelineError>;

fn run_pipeline(ctx: &Context, p: Pipeline, out: &mut Outputs) -> Step {
    match p {
        Pipeline::Simulate => simulate(ctx, out),
        Pipeline::Flows => flows_pipeline(ctx, out),
        Pipeline::Hormander => hormander(ctx, out),
        Pipeline::Tails => tails(ctx, out),
        Pipeline::Decompose => decompose(ctx, out),
        Pipeline::Norris => norris(ctx, out),
        Pipeline::GradRep => gradrep(ctx, out),
        Pipeline::Density => density(ctx, out),
        Pipeline::H3 => h3(ctx, out),
    }
}

struct Terminal {
    x: DVector<f64>,
    regime: usize,
    s: f64,
    csv: Option<String>,
}

fn simulate(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let sim = ctx.loaded.simulation();
    let cfg = ctx.config();
    let seed = ctx.seed(Pipeline::Simulate);
    let terminals = run_indexed(ctx.workers, cfg.paths, |p| {
        let path = simulate_path(model, &sim, derive_seed(seed, p as u64))?;
        let csv = (p < cfg.export_paths).then(|| {
            let mut buf = Vec::new();
            path.write_csv(&mut buf).expect("writing to memory");
            String::from_utf8(buf).expect("csv is utf-8")
        });
        Ok(Terminal { x: path.terminal().clone(), regime: path.terminal_regime(), s: *path.s.last().unwrap(), csv })
    })?;
    let mut table = format!("path,regime,S{}\n", coordinate_header("x", model.n()));
    for (p, t) in terminals.iter().enumerate() {
        let mut cells = vec![p as f64, t.regime as f64, t.s];
        cells.extend(t.x.iter());
        table.push_str(&row(&cells));
        if let Some(csv) = &t.csv {
            out.write(&format!("paths/path_{p:05}.csv"), csv)?;
        }
    }
    out.write("terminal.csv", &table)?;
    let same: Vec<f64> = terminals.iter().map(|t| f64::from(u8::from(t.regime == cfg.model.regime0))).collect();
    let s_values: Vec<f64> = terminals.iter().map(|t| t.s).collect();
    let (p_same, p_se) = mean_and_se(&same);
    let (s_mean, _) = mean_and_se(&s_values);
    Ok(Outcome::Done(values(vec![
        ("paths", json!(cfg.paths)),
        ("exported_paths", json!(cfg.paths.min(cfg.export_paths))),
        ("same_regime_fraction", json!(p_same)),
        ("same_regime_se", json!(p_se)),
        ("mean_terminal_s", json!(s_mean)),
    ])))
}

fn flows_pipeline(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let sim = ctx.loaded.simulation();
    let cfg = ctx.config();
    let fc = cfg.diagnostics.flows.clone().unwrap_or_default();
    let seed = ctx.seed(Pipeline::Flows);
    let bound = model.jacobian_bound();
    let rows = run_indexed(ctx.workers, cfg.paths, |p| {
        let path = simulate_path(model, &sim, derive_seed(seed, p as u64))?;
        let rec = flows::evolve_flows(model, &path)?;
        let cov = flows::reduced_covariance(model, &path, &rec)?;
        Ok([rec.inverse_defect(), rec.normalized_growth(&path.times, bound), spectrum::min_eigenvalue(cov.terminal_m())])
    })?;
    let mut table = String::from("path,inverse_defect,normalized_growth,m_min_eigenvalue\n");
    for (p, r) in rows.iter().enumerate() {
        table.push_str(&row(&[p as f64, r[0], r[1], r[2]]));
    }
    out.write("flows.csv", &table)?;
    let threshold = flows::inverse_defect_threshold(model.n(), bound, cfg.horizon, cfg.step);
    let max_defect = rows.iter().map(|r| r[0]).fold(0.0, f64::max);
    let max_growth = rows.iter().map(|r| r[1]).fold(0.0, f64::max);
    let mut summary = values(vec![
        ("paths", json!(cfg.paths)),
        ("jacobian_bound", json!(bound)),
        ("max_inverse_defect", json!(max_defect)),
        ("inverse_defect_threshold", json!(threshold)),
        ("max_normalized_growth", json!(max_growth)),
        ("growth_limit", json!(1.0 + 10.0 * cfg.step)),
    ]);
    let mut fd = String::from("eps,residual\n");
    if cfg.paths > 0 && model.has_constant_rates() {
        let path = simulate_path(model, &sim, derive_seed(seed, 0))?;
        let mut dir = DVector::zeros(model.d());
        dir[fc.h_coordinate] = 1.0;
        let h = StepFunction::indicator(fc.h_length, dir)?;
        let report = flows::finite_difference_check(model, &path, &h, &fc.fd_epsilons, None)?;
        for (e, r) in report.epsilons.iter().zip(&report.residuals) {
            fd.push_str(&row(&[*e, *r]));
        }
        summary.insert("fd_slope".into(), json!(report.slope));
    } else {
        summary.insert("fd_slope".into(), Value::Null);
    }
    out.write("fd.csv", &fd)?;
    Ok(Outcome::Done(summary))
}

fn hormander(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let hc = ctx.config().diagnostics.hormander.clone().unwrap_or_default();
    let brackets = build_brackets(model, hc.depth, hc.mode())?;
    let domain = SampleBox::cube(model.n(), hc.box_half_width);
    let est = estimate_kappa1(&brackets, &domain, hc.x_samples, hc.sphere_samples, ctx.seed(Pipeline::Hormander))?;
    let mut table = String::from("depth,kappa,holds\n");
    for (j, k) in est.per_depth.iter().enumerate() {
        let _ = writeln!(table, "{},{},{}", j + 1, k, *k > KAPPA_TOLERANCE);
    }
    out.write("kappa.csv", &table)?;
    Ok(Outcome::Done(values(vec![
        ("kappa", json!(est.kappa)),
        ("holds", json!(est.holds)),
        ("depth", json!(est.depth)),
        ("analytic_brackets", json!(brackets.analytic)),
        ("sphere_minimum", json!(est.sphere_minimum)),
        ("witness_x", json!(est.witness_x.as_slice())),
        ("witness_regime", json!(est.witness_regime)),
        ("witness_v", json!(est.witness_v.as_slice())),
    ])))
}

fn tails(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let sim = ctx.loaded.simulation();
    let cfg = ctx.config();
    let tc = cfg.diagnostics.tails.clone().unwrap_or_default();
    let mut tail_csv = String::from("eps,probability,se,wilson_lo,wilson_hi\n");
    let mut moment_csv = String::from("cap,estimate\n");
    if cfg.paths == 0 {
        out.write("tail.csv", &tail_csv)?;
        out.write("neg_moment.csv", &moment_csv)?;
        return Ok(Outcome::Skipped("no paths".into()));
    }
    let seed = ctx.seed(Pipeline::Tails);
    let qs: Vec<DMatrix<f64>> = run_indexed(ctx.workers, cfg.paths, |p| {
        let path = simulate_path(model, &sim, derive_seed(seed, p as u64))?;
        Ok(flows::terminal_covariance(model, &path)?.1)
    })?;
    let curve = diagnostics::eigen_tail(&qs, &tc.epsilons)?;
    for k in 0..curve.epsilons.len() {
        let (lo, hi) = curve.wilson[k];
        tail_csv.push_str(&row(&[curve.epsilons[k], curve.probabilities[k], curve.standard_errors[k], lo, hi]));
    }
    out.write("tail.csv", &tail_csv)?;
    let mut summary = values(vec![
        ("samples", json!(curve.samples)),
        ("slope", json!(curve.slope)),
        ("fitted_points", json!(curve.fitted_points)),
        ("degenerate", json!(curve.degenerate)),
    ]);
    match diagnostics::negative_moment(&qs, tc.moment_order, tc.cap) {
        Ok(m) => {
            for (c, e) in &m.cap_curve {
                moment_csv.push_str(&row(&[*c, *e]));
            }
            summary.insert("moment_order".into(), json!(m.order));
            summary.insert("moment_estimate".into(), json!(m.estimate));
            summary.insert("moment_se".into(), json!(m.standard_error));
            summary.insert("moment_final_relative_change".into(), json!(m.final_relative_change));
            summary.insert("moment_saturated".into(), json!(m.saturated));
        }
        // A singular Q has no finite negative moment; the tail curve still stands.
        Err(switchsde::Error::Data(msg)) => {
            summary.insert("moment_error".into(), json!(msg));
        }
        Err(e) => return Err(e.into()),
    }
    out.write("neg_moment.csv", &moment_csv)?;
    Ok(Outcome::Done(summary))
}

fn decompose(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let dc = ctx.config().diagnostics.decompose.clone().unwrap_or_default();
    let seed = ctx.seed(Pipeline::Decompose);
    let report = diagnostics::decomposition_ks_test(&ctx.loaded.levy, &model.sigma, dc.time, dc.samples, derive_seed(seed, 0))?;
    let mut table = String::from("coordinate,statistic,p_value\n");
    for (c, k) in report.ks.iter().enumerate() {
        table.push_str(&row(&[(c + 1) as f64, k.statistic, k.p_value]));
    }
    out.write("decompose.csv", &table)?;
    let reps = run_indexed(ctx.workers, dc.self_test_repetitions, |r| {
        diagnostics::decomposition_self_test(&ctx.loaded.levy, &model.sigma, dc.time, dc.samples, derive_seed(seed, 1 + r as u64))
    })?;
    let rejections = reps.iter().filter(|r| !r.passes(diagnostics::decomposition::KS_THRESHOLD)).count();
    Ok(Outcome::Done(values(vec![
        ("samples", json!(report.samples)),
        ("min_p_value", json!(report.min_p_value())),
        ("passes", json!(report.passes(diagnostics::decomposition::KS_THRESHOLD))),
        ("large_jump_rate", json!(report.large_jump_rate)),
        ("mean_jump_count", json!(report.mean_jump_count)),
        ("self_test_repetitions", json!(dc.self_test_repetitions)),
        ("self_test_rejections", json!(rejections)),
    ])))
}

fn norris(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let cfg = ctx.config();
    let nc = cfg.diagnostics.norris.clone().unwrap_or_default();
    let mut table = String::from("eps,probability,se\n");
    if cfg.paths == 0 {
        out.write("norris.csv", &table)?;
        return Ok(Outcome::Skipped("no paths".into()));
    }
    let params = norris_params(&nc);
    let v = match &nc.v {
        Some(v) => DVector::from_column_slice(v).normalize(),
        None => {
            let mut e = DVector::zeros(model.n());
            e[0] = 1.0;
            e
        }
    };
    let report = diagnostics::norris_joint_probability(model, &params, &v, &ctx.loaded.simulation(), cfg.paths, ctx.seed(Pipeline::Norris), ctx.workers)?;
    for k in 0..report.epsilons.len() {
        table.push_str(&row(&[report.epsilons[k], report.probabilities[k], report.standard_errors[k]]));
    }
    out.write("norris.csv", &table)?;
    Ok(Outcome::Done(values(vec![
        ("samples", json!(report.samples)),
        ("monotone_2se", json!(report.is_monotone(2.0))),
        ("mean_bracket_integral", json!(report.mean_bracket_integral)),
        ("mean_field_integral", json!(report.mean_field_integral)),
    ])))
}

fn gradrep(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let cfg = ctx.config();
    let gc = cfg.diagnostics.gradrep.clone().unwrap_or_default();
    let mut table = String::from("coordinate,lhs,lhs_se,rhs,rhs_se,residual,combined_se\n");
    if cfg.paths < 2 {
        out.write("gradrep.csv", &table)?;
        return Ok(Outcome::Skipped("fewer than two paths".into()));
    }
    let center = gc.bump_center.clone().map_or_else(|| DVector::zeros(model.n()), DVector::from_vec);
    let f = GaussianBump { center, width: gc.bump_width };
    let r = diagnostics::gradient_representation_check(
        model,
        &f,
        gc.coordinate,
        &ctx.loaded.simulation(),
        cfg.paths,
        gc.eta,
        ctx.seed(Pipeline::GradRep),
        ctx.workers,
    )?;
    table.push_str(&row(&[(r.coordinate + 1) as f64, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.residual, r.combined_se]));
    out.write("gradrep.csv", &table)?;
    Ok(Outcome::Done(values(vec![
        ("samples", json!(r.samples)),
        ("residual", json!(r.residual)),
        ("combined_se", json!(r.combined_se)),
        ("within_3se", json!(r.within(3.0))),
    ])))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn density(ctx: &Context, out: &mut Outputs) -> Step {
    let model = &ctx.loaded.model;
    let sim = ctx.loaded.simulation();
    let cfg = ctx.config();
    let dc = cfg.diagnostics.density.clone().unwrap_or_default();
    let mut table = String::from("x,density,se\n");
    if cfg.paths == 0 {
        out.write("density.csv", &table)?;
        return Ok(Outcome::Skipped("no paths".into()));
    }
    let seed = ctx.seed(Pipeline::Density);
    let samples = run_indexed(ctx.workers, cfg.paths, |p| {
        let path = simulate_path(model, &sim, derive_seed(seed, p as u64))?;
        Ok(path.terminal()[dc.coordinate])
    })?;
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = dc.lower.unwrap_or_else(|| quantile(&sorted, dc.clip));
    let hi = dc.upper.unwrap_or_else(|| quantile(&sorted, 1.0 - dc.clip));
    let est = kde::kde_density(&samples, &kde::linear_grid(lo, hi, dc.grid_points), dc.clip, None)?;
    for k in 0..est.grid.len() {
        table.push_str(&row(&[est.grid[k], est.values[k], est.standard_errors[k]]));
    }
    out.write("density.csv", &table)?;
    Ok(Outcome::Done(values(vec![
        ("samples", json!(est.samples)),
        ("coordinate", json!(dc.coordinate + 1)),
        ("bandwidth", json!(est.bandwidth)),
        ("grid_mass", json!(est.grid_mass)),
        ("mass_defect", json!(est.mass_defect())),
    ])))
}

fn h3(ctx: &Context, out: &mut Outputs) -> Step {
    let hc = ctx.config().diagnostics.h3.clone().unwrap_or_default();
    let report = check_h3(&ctx.loaded.levy, hc.theta, &hc.epsilons, H3_REL_TOL)?;
    let mut table = String::from("eps,value\n");
    for (e, v) in &report.values {
        table.push_str(&row(&[*e, *v]));
    }
    out.write("h3.csv", &table)?;
    Ok(Outcome::Done(values(vec![
        ("theta", json!(report.theta)),
        ("verdict", serde_json::to_value(report.verdict).expect("verdict serializes")),
        ("c_theta", json!(report.c_theta)),
        ("slope", json!(report.slope)),
    ])))
}
