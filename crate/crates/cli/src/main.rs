mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::Run;

/// Staggered difference-in-differences with local spatial re-estimation
/// and functional clustering of effect trajectories.
#[derive(Debug, Parser)]
#[command(name = "geodid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Global event study with bootstrap inference.
    Estimate(EstimateArgs),
    /// Kernel-weighted event study at every unit.
    Local(LocalArgs),
    /// Smooth local trajectories and cluster them.
    Cluster(ClusterArgs),
    /// Correlate post-treatment averages of two local fields.
    Robustness(RobustnessArgs),
    /// Generate a synthetic panel with known effects.
    Simulate(SimulateArgs),
    /// Check a panel file without estimating anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created when missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for stochastic stages; overrides `seed` in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PanelArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub panel: PathBuf,
    /// Covariate ladder row by label or short key, e.g. `baseline`, `complete`.
    #[arg(long)]
    pub covariates: Option<String>,
    /// `drop` or `first-adoption`.
    #[arg(long)]
    pub reversal_policy: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub panel: PanelArgs,
    /// `none` or `outcome-regression`.
    #[arg(long)]
    pub adjustment: Option<String>,
    /// Bootstrap replications; 0 disables inference.
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFlag {
    Linear,
    Gaussian,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFlag>,
    /// Gaussian bandwidth: `auto` or a value in km.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Linear kernel scale in km; defaults to the largest pairwise distance.
    #[arg(long)]
    pub d_max: Option<f64>,
    /// Minimum kernel-weighted treated and control mass.
    #[arg(long)]
    pub min_mass: Option<f64>,
    /// Worker threads.
    #[arg(long, env = "GEODID_JOBS")]
    pub jobs: Option<usize>,
    /// Attach bootstrap inference to every local event study.
    #[arg(long)]
    pub bootstrap: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Local field CSV written by `geodid local`.
    #[arg(long)]
    pub field: PathBuf,
    /// Number of clusters to fit.
    #[arg(long)]
    pub k: Option<usize>,
    /// Range of K for BIC selection, e.g. `2:6`.
    #[arg(long)]
    pub select_k: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub n_basis: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct RobustnessArgs {
    /// Output directory, created when missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub field_a: PathBuf,
    #[arg(long)]
    pub field_b: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 500 units, 10 periods, no effect.
    Default,
    /// Constant effects of 0.03 in the north block and 0.10 in the south block.
    TwoRegion,
    /// Effect 0.02 (e + 1) everywhere.
    Dynamic,
    /// A local field of three planted trajectory families.
    Families,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Used when the config file has no `[simulate]` table.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n_units: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Output directory, created when missing.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration (column mapping, reversal policy).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub reversal_policy: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, out) = match &cli.command {
        Command::Estimate(a) => ("estimate", &a.common.out),
        Command::Local(a) => ("local", &a.common.out),
        Command::Cluster(a) => ("cluster", &a.common.out),
        Command::Robustness(a) => ("robustness", &a.out),
        Command::Simulate(a) => ("simulate", &a.common.out),
        Command::Validate(a) => ("validate", &a.out),
    };
    let mut run = Run::new(name, out);
    let result = std::fs::create_dir_all(out)
        .map_err(|e| commands::Failure::input(anyhow::anyhow!("creating {}: {e}", out.display())))
        .and_then(|()| match &cli.command {
            Command::Estimate(a) => commands::estimate(&mut run, a),
            Command::Local(a) => commands::local(&mut run, a),
            Command::Cluster(a) => commands::cluster(&mut run, a),
            Command::Robustness(a) => commands::robustness(&mut run, a),
            Command::Simulate(a) => commands::simulate(&mut run, a),
            Command::Validate(a) => commands::validate(&mut run, a),
        });
    let (code, error) = match result {
        Ok(()) => (0, None),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            (f.code, Some(format!("{:#}", f.error)))
        }
    };
    if let Err(e) = run.finish(code, error) {
        eprintln!("error: writing manifest: {e}");
        return ExitCode::from(code.max(2));
    }
    ExitCode::from(code)
}
