//! Command-line front end: config loading, experiment runs and output files.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod runner;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{load_config, parse_config, validate, ConfigError, LoadedConfig, RunConfig};
pub use runner::{run_experiment, Pipeline, RunError, RunManifest};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "SWITCHSDE_OUT";
pub const DEFAULT_OUT: &str = "switchsde-out";

#[derive(Debug, Parser)]
#[command(name = "switchsde", version, about = "Regime-switching SDEs driven by subordinated Brownian motion", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Output directory (overrides $SWITCHSDE_OUT and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths and write path and terminal-value CSVs.
    Simulate(CommonArgs),
    /// Jacobian flows, inverse defect, growth and finite-difference check.
    Flows(CommonArgs),
    /// Bracket spanning constant κ₁.
    Hormander(CommonArgs),
    /// Small-eigenvalue tail and negative moment of the reduced covariance.
    Tails(CommonArgs),
    /// KS test of the large-jump decomposition.
    DecomposeCheck(CommonArgs),
    /// Joint-event probabilities on a frozen-regime window.
    Norris(CommonArgs),
    /// Monte Carlo check of the gradient representation.
    Gradrep(CommonArgs),
    /// Kernel density estimate of one terminal coordinate.
    Density(CommonArgs),
    /// Simulation plus every diagnostic configured in the file.
    Run(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a)
            | Command::Flows(a)
            | Command::Hormander(a)
            | Command::Tails(a)
            | Command::DecomposeCheck(a)
            | Command::Norris(a)
            | Command::Gradrep(a)
            | Command::Density(a)
            | Command::Run(a) => a,
        }
    }

    fn pipelines(&self, config: &RunConfig) -> Vec<Pipeline> {
        match self {
            Command::Simulate(_) => vec![Pipeline::Simulate],
            Command::Flows(_) => vec![Pipeline::Flows],
            Command::Hormander(_) => vec![Pipeline::Hormander],
            Command::Tails(_) => vec![Pipeline::Tails],
            Command::DecomposeCheck(_) => vec![Pipeline::Decompose],
            Command::Norris(_) => vec![Pipeline::Norris],
            Command::Gradrep(_) => vec![Pipeline::GradRep],
            Command::Density(_) => vec![Pipeline::Density],
            Command::Run(_) => Pipeline::from_config(config),
        }
    }
}

/// Output directory: flag, then environment, then config, then default.
pub fn resolve_out(flag: Option<&Path>, env: Option<OsString>, config: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load(args: &CommonArgs) -> Result<LoadedConfig, ConfigError> {
    let (mut config, base) = match &args.config {
        Some(path) => {
            let loaded = load_config(path)?;
            (loaded.config, loaded.base_dir)
        }
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(p) = args.paths {
        config.paths = p;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    validate(config, &base)
}

/// Runs the CLI and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let common = cli.command.common();
    let loaded = match load(common) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let out = resolve_out(common.out.as_deref(), std::env::var_os(OUT_ENV), loaded.config.out.as_deref());
    let pipelines = cli.command.pipelines(&loaded.config);
    match run_experiment(&loaded, &pipelines, &out, loaded.config.workers) {
        Ok(m) => {
            for d in &m.diagnostics {
                println!("{}: {} {}", d.name, d.status, serde_json::Value::Object(d.values.clone()));
            }
            println!("wrote {} files and {} to {}", m.files.len(), runner::MANIFEST_NAME, out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_precedence() {
        let env = Some(OsString::from("from-env"));
        assert_eq!(resolve_out(Some(Path::new("flag")), env.clone(), Some("cfg")), PathBuf::from("flag"));
        assert_eq!(resolve_out(None, env, Some("cfg")), PathBuf::from("from-env"));
        assert_eq!(resolve_out(None, None, Some("cfg")), PathBuf::from("cfg"));
        assert_eq!(resolve_out(None, Some(OsString::new()), None), PathBuf::from(DEFAULT_OUT));
    }

    #[test]
    fn no_arguments_is_usage_error() {
        assert_eq!(run_cli(["switchsde"]), 2);
        assert_eq!(run_cli(["switchsde", "frobnicate"]), 2);
    }
}
