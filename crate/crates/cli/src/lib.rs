//! Command-line entry point: wires SMILES parsing, training, feature
//! extraction, and shift analysis into reproducible run directories.
//!
//! Every command writes its artifacts under
//! `<out>/<command>-<seed>-<timestamp>/` together with a `manifest.json`
//! capturing the fully resolved configuration, the seed, and the SHA-256 of
//! every input file. `molshift rerun --manifest <file>` replays a run and
//! reproduces its CSV outputs bit-exactly within one build.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, unreadable config,
//! incompatible settings), 2 data error (unreadable or malformed inputs),
//! 3 numeric failure (non-finite values in training or extraction).

pub mod args;
mod feature_ops;
mod rundir;
mod spec;
mod store;
mod toy_ops;
mod train_ops;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;

use molshift_core::featstats::FeatError;
use molshift_core::tensorcore::CheckpointError;
use molshift_core::trainpipe::{ConfigError, DataError, TrainError};

pub use rundir::{sha256_hex, InputFile, Manifest, RunDir};
pub use spec::ExecSpec;
pub use store::{CheckpointMeta, FeatureSidecar, TaskMeta};

/// A failure, bucketed by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable config, incompatible settings — exit 1.
    Usage(String),
    /// Unreadable or malformed data, checkpoints, or feature files — exit 2.
    Data(String),
    /// Non-finite numbers in training or extraction — exit 3.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(format!("bad checkpoint: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::Tensor(_) => CliError::Numeric(e.to_string()),
            TrainError::Model(_)
            | TrainError::NoTasks
            | TrainError::UnknownTask(_)
            | TrainError::ConfigMismatch(_)
            | TrainError::MetricKindMismatch { .. } => CliError::Usage(e.to_string()),
            TrainError::Encode(_)
            | TrainError::Metric(_)
            | TrainError::MissingTask(_)
            | TrainError::ConstantTarget(_)
            | TrainError::EmptySplit(_)
            | TrainError::DegenerateLabels(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<FeatError> for CliError {
    fn from(e: FeatError) -> Self {
        match e {
            FeatError::NonFinite { .. } | FeatError::Tensor(_) => CliError::Numeric(e.to_string()),
            FeatError::Model(_) => CliError::Usage(e.to_string()),
            FeatError::Encode(_)
            | FeatError::Io(_)
            | FeatError::Format(_)
            | FeatError::Shape(_) => CliError::Data(e.to_string()),
        }
    }
}

/// What a successful command reports: the one-line summary printed to stdout
/// and the run directory it created (when it created one).
#[derive(Debug)]
pub struct RunSummary {
    pub line: String,
    pub run_dir: Option<PathBuf>,
}

impl RunSummary {
    fn plain(line: String) -> Self {
        RunSummary {
            line,
            run_dir: None,
        }
    }
}

/// Parse `argv` and run the requested command. `--help`/`--version` count as
/// success; their text becomes the summary line.
pub fn run<I, T>(argv: I) -> Result<RunSummary, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return Ok(RunSummary::plain(e.to_string()));
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        args::Command::GenToy(a) => toy_ops::gen_toy(&a.out),
        args::Command::Rerun(a) => rerun(&a.manifest, a.out.as_deref()),
        other => {
            let (spec, out_parent) = spec::resolve(other)?;
            execute(spec, &out_parent)
        }
    }
}

/// Run a fully resolved command into a fresh run directory under
/// `out_parent`, writing `manifest.json` on success.
pub fn execute(spec: ExecSpec, out_parent: &Path) -> Result<RunSummary, CliError> {
    let inputs = spec.input_files()?;
    let rundir = RunDir::create(out_parent, spec.command_name(), spec.seed())?;
    let line = match &spec {
        ExecSpec::PretrainAtom { data, run } => train_ops::pretrain_atom(data, run, &rundir)?,
        ExecSpec::PretrainMol { data, run, task } => {
            train_ops::pretrain_mol(data, run, task, &rundir)?
        }
        ExecSpec::Finetune {
            data,
            run,
            task,
            kind,
            metric,
            init_checkpoint,
        } => train_ops::finetune(
            data,
            run,
            task,
            kind,
            metric,
            init_checkpoint.as_deref(),
            &rundir,
        )?,
        ExecSpec::Eval {
            data,
            init_checkpoint,
            splits,
            seed,
        } => train_ops::eval(data, init_checkpoint, splits, *seed, &rundir)?,
        ExecSpec::ExtractFeatures {
            data,
            init_checkpoint,
            splits,
            task,
            capture_layer,
            seed,
        } => feature_ops::extract(
            data,
            init_checkpoint,
            splits,
            task.as_deref(),
            *capture_layer,
            *seed,
            &rundir,
        )?,
        ExecSpec::AnalyzeShift {
            features_a,
            features_b,
            splits,
            bins,
            ..
        } => feature_ops::analyze_shift(features_a, features_b, splits, *bins, &rundir)?,
        ExecSpec::Report {
            features_a,
            features_b,
            splits,
            bins,
            seed,
        } => feature_ops::report(features_a, features_b, splits, *bins, *seed, &rundir)?,
    };
    let manifest = Manifest::new(&spec, out_parent, inputs);
    rundir.write_manifest(&manifest)?;
    Ok(RunSummary {
        line: format!("{line} -> {}", rundir.path().display()),
        run_dir: Some(rundir.path().to_path_buf()),
    })
}

/// Replay a previous run from its manifest: verify every recorded input hash,
/// then execute the stored spec into a fresh run directory.
fn rerun(manifest_path: &Path, out_override: Option<&Path>) -> Result<RunSummary, CliError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| {
        CliError::Usage(format!(
            "cannot read manifest file {}: {e}",
            manifest_path.display()
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!(
            "malformed manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    for input in &manifest.inputs {
        let actual = sha256_hex(&input.path).map_err(|e| {
            CliError::Data(format!(
                "manifest input {} ({}) is unreadable: {e}",
                input.name,
                input.path.display()
            ))
        })?;
        if actual != input.sha256 {
            return Err(CliError::Data(format!(
                "manifest input {} ({}) changed since the original run: sha256 {} != {}",
                input.name,
                input.path.display(),
                actual,
                input.sha256
            )));
        }
    }
    let parent = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| manifest.out_parent.clone());
    execute(manifest.spec, &parent)
}

/// Run and map the outcome to the process exit code, printing the summary
/// line to stdout or the diagnostic line to stderr.
pub fn run_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(argv) {
        Ok(summary) => {
            println!("{}", summary.line);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
