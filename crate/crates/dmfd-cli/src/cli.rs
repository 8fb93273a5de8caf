//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;

#[derive(Parser, Debug)]
#[command(
    name = "dmfd",
    version,
    about = "Deformable manipulation from demonstrations: training, evaluation, and plotting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a scripted-expert demonstration dataset
    GenDemos(GenDemosArgs),
    /// Train the agent or a baseline over one or more seeds
    Train(TrainArgs),
    /// Evaluate a saved checkpoint
    Eval(EvalArgs),
    /// Run a named ablation sweep
    Ablate(AblateArgs),
    /// Aggregate metrics.csv files into curves.csv and curves.svg
    Plot(PlotArgs),
}

/// Flags shared by `train` and `ablate`; each overrides the matching
/// config key.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigFlags {
    /// TOML config file; omitted keys fall back to defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single training seed (overrides --seeds and the config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated training seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Task: straighten_rope, cloth_fold, cloth_fold_diag_pinned,
    /// cloth_fold_diag_unpinned
    #[arg(long)]
    pub task: Option<String>,
    /// Observation mode: state or image
    #[arg(long)]
    pub obs: Option<String>,
    /// Baseline: sac, sac_lfd, awac_like, bc_state, bc_image, sac_bc
    #[arg(long)]
    pub baseline: Option<String>,
    /// Demonstration dataset path
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigFlags {
    pub fn to_overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            seed: self.seed,
            seeds: self.seeds.clone(),
            task: self.task.clone(),
            obs: self.obs.clone(),
            baseline: self.baseline.clone(),
            dataset: self.dataset.clone(),
            out: self.out.clone(),
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Overwrite an existing run directory
    #[arg(long)]
    pub force: bool,
    /// Continue interrupted seeds from their latest checkpoints
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct GenDemosArgs {
    /// TOML config file for the environment section
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task name (overrides the config)
    #[arg(long)]
    pub task: Option<String>,
    /// Output dataset file
    #[arg(long)]
    pub out: PathBuf,
    /// Episodes to keep
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Base seed of the episode streams
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only episodes with final performance at or above this
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub filter: f64,
    /// Render and embed image observations
    #[arg(long)]
    pub images: bool,
    /// Overwrite an existing dataset file
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file to evaluate
    pub checkpoint: PathBuf,
    /// Episode count (default: the config's final count, else 100)
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Evaluation seed
    #[arg(long, default_value_t = 1000)]
    pub seed: u64,
    /// Config to cross-check against the checkpoint's embedded configs
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: an `eval` directory beside the checkpoint)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Ablation: entropy, rsi, crop, dataset_size, critic_input
    pub name: String,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Overwrite an existing sweep directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Series as label=path, or bare paths labelled by their stem; each
    /// path is a metrics.csv or a directory searched recursively
    #[arg(required = true)]
    pub inputs: Vec<String>,
    /// Output directory for curves.csv and curves.svg
    #[arg(long)]
    pub out: PathBuf,
}
