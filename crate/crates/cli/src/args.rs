//! Flag definitions. Precedence: command-line flags override config-file
//! keys, which override built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "molshift",
    version,
    about = "Graph-transformer training, feature extraction, and distribution-shift analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Multitask pretraining on per-atom properties (JSONL data).
    PretrainAtom(TrainArgs),
    /// Pretraining on a single molecular target (CSV data).
    PretrainMol(TrainArgs),
    /// Fine-tune on a downstream molecular task, optionally from a checkpoint.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on one or more splits of a molecular dataset.
    Eval(EvalArgs),
    /// Dump per-atom encoder activations of one layer to feature files.
    ExtractFeatures(ExtractArgs),
    /// Differenced distribution-shift report over two models' feature files.
    AnalyzeShift(ShiftArgs),
    /// Shift analysis plus per-dimension normality tests and histogram dumps.
    Report(ReportArgs),
    /// Write the bundled deterministic toy datasets.
    GenToy(GenToyArgs),
    /// Replay a previous run from its manifest.json (bit-exact per build).
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat `key = value` run-config file; flags below override its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed (overrides the config file's `seed` key).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training data: JSONL for pretrain-atom, `smiles,target[,split]` CSV
    /// for pretrain-mol.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Parent directory for the `<command>-<seed>-<timestamp>` run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
    /// pretrain-atom: comma-separated atom property names (overrides the
    /// config file's `tasks` key). pretrain-mol: the task's name
    /// (default "homolumo").
    #[arg(long, value_name = "NAME")]
    pub task: Option<String>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Flat `key = value` run-config file; flags below override its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed (overrides the config file's `seed` key).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Downstream data: `smiles,target[,split]` CSV. Targets that are all
    /// 0/1 make a binary task (ROC-AUC), anything else a regression (MAE).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint directory to initialize from; omit to train from scratch.
    #[arg(long, value_name = "DIR")]
    pub init_checkpoint: Option<PathBuf>,
    /// Name of the downstream task.
    #[arg(long, value_name = "NAME")]
    pub task: String,
    /// Parent directory for the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Seed for the hash split when the data has no `split` column.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Molecular dataset CSV to score.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint directory to evaluate.
    #[arg(long, value_name = "DIR")]
    pub init_checkpoint: PathBuf,
    /// Comma-separated splits to score.
    #[arg(long, value_delimiter = ',', default_value = "test")]
    pub splits: Vec<String>,
    /// Parent directory for the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Seed for the hash split when the data has no `split` column.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset whose molecules are embedded: CSV, or JSONL for atom data.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint directory whose encoder produces the activations.
    #[arg(long, value_name = "DIR")]
    pub init_checkpoint: PathBuf,
    /// Comma-separated splits to extract.
    #[arg(long, value_delimiter = ',', default_value = "train,valid,test")]
    pub splits: Vec<String>,
    /// Task name conditioning the virtual node (defaults to the
    /// checkpoint's only task; required when it has several).
    #[arg(long, value_name = "NAME")]
    pub task: Option<String>,
    /// 1-based encoder layer whose output is captured.
    #[arg(long, default_value_t = 1)]
    pub capture_layer: usize,
    /// Parent directory for the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ShiftArgs {
    /// Model A's two feature files, in `--splits` order.
    #[arg(long, value_delimiter = ',', value_name = "FIRST,SECOND", required = true)]
    pub features_a: Vec<PathBuf>,
    /// Model B's two feature files, in `--splits` order.
    #[arg(long, value_delimiter = ',', value_name = "FIRST,SECOND", required = true)]
    pub features_b: Vec<PathBuf>,
    /// The two splits being compared, e.g. `train,test`.
    #[arg(long, value_delimiter = ',', default_value = "train,test")]
    pub splits: Vec<String>,
    /// Number of histogram bins.
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    /// Seed recorded in the run-directory name.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory for the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub shift: ShiftArgs,
}

#[derive(Args, Debug)]
pub struct GenToyArgs {
    /// Directory that receives the toy dataset files.
    #[arg(long, value_name = "DIR", default_value = "data")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    /// manifest.json of the run to replay.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Parent directory for the new run directory (default: the original
    /// run's parent).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
