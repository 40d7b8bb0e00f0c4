use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use dln_core::{EtaPolicy, SchemeKind};

use crate::config::List;

/// Trainability experiments for deep linear networks.
#[derive(Debug, Parser)]
#[command(name = "dlnlab", version)]
pub struct Cli {
    /// Master seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default dlnlab-out/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for scans (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// key=value file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset Y = W*X with Gaussian entries.
    GenData(GenDataArgs),
    /// Train a single network and write its loss trajectory.
    Train(TrainArgs),
    /// Depth × width scan with heat maps.
    Scan(ScanArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Scan(_) => "scan",
            Command::Verify(_) => "verify",
        }
    }
}

/// Synthetic data or a dataset directory.
#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Load a dataset directory instead of generating one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub dx: Option<usize>,
    #[arg(long)]
    pub dy: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed for generated data (default: --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Rescale to ‖X‖_F = ‖Y‖_F = 1.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub dx: Option<usize>,
    #[arg(long)]
    pub dy: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub scheme: Option<SchemeKind>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// "auto" or a positive number.
    #[arg(long)]
    pub eta: Option<EtaPolicy>,
    /// Gaussian layer standard deviation (same for every layer).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Spectral diagnostics every k steps (0 = never).
    #[arg(long)]
    pub diag_every: Option<usize>,
    /// Stop once ℓ(t)/ℓ(0) falls to this value.
    #[arg(long)]
    pub stop_rel_loss: Option<f64>,
    /// Skip writing the init/ and final/ weight checkpoints.
    #[arg(long)]
    pub no_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub depths: Option<List<usize>>,
    #[arg(long)]
    pub widths: Option<List<usize>>,
    #[arg(long)]
    pub schemes: Option<List<SchemeKind>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Defaults to the last checkpoint.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub checkpoints: Option<List<usize>>,
    #[arg(long)]
    pub eta: Option<EtaPolicy>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated subset of check families.
    #[arg(long)]
    pub only: Option<List<String>>,
    /// Train run directory (with init/ and final/) for trajectory checks.
    #[arg(long)]
    pub run: Option<PathBuf>,
}
