//! Fully resolved command specifications.
//!
//! `resolve` turns parsed flags into an [`ExecSpec`]: config files are read
//! and overridden by flags, task kinds are inferred from the data, splits are
//! validated, and every input path is made absolute. The spec is what
//! `manifest.json` records, so replaying a manifest needs no re-resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use molshift_core::trainpipe::{load_mol_dataset, Role, RunConfig, TaskKind, ATOM_TASKS};

use crate::args::{Command, EvalArgs, ExtractArgs, FinetuneArgs, ShiftArgs, TrainArgs};
use crate::rundir::{sha256_hex, InputFile};
use crate::store;
use crate::CliError;

/// One command with everything resolved; serialized inside `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ExecSpec {
    PretrainAtom {
        data: PathBuf,
        run: RunConfig,
    },
    PretrainMol {
        data: PathBuf,
        run: RunConfig,
        task: String,
    },
    Finetune {
        data: PathBuf,
        run: RunConfig,
        task: String,
        kind: String,
        metric: String,
        init_checkpoint: Option<PathBuf>,
    },
    Eval {
        data: PathBuf,
        init_checkpoint: PathBuf,
        splits: Vec<String>,
        seed: u64,
    },
    ExtractFeatures {
        data: PathBuf,
        init_checkpoint: PathBuf,
        splits: Vec<String>,
        task: Option<String>,
        capture_layer: usize,
        seed: u64,
    },
    AnalyzeShift {
        features_a: Vec<PathBuf>,
        features_b: Vec<PathBuf>,
        splits: Vec<String>,
        bins: usize,
        seed: u64,
    },
    Report {
        features_a: Vec<PathBuf>,
        features_b: Vec<PathBuf>,
        splits: Vec<String>,
        bins: usize,
        seed: u64,
    },
}

impl ExecSpec {
    /// The subcommand name, used in the run-directory name.
    pub fn command_name(&self) -> &'static str {
        match self {
            ExecSpec::PretrainAtom { .. } => "pretrain-atom",
            ExecSpec::PretrainMol { .. } => "pretrain-mol",
            ExecSpec::Finetune { .. } => "finetune",
            ExecSpec::Eval { .. } => "eval",
            ExecSpec::ExtractFeatures { .. } => "extract-features",
            ExecSpec::AnalyzeShift { .. } => "analyze-shift",
            ExecSpec::Report { .. } => "report",
        }
    }

    /// The seed recorded in the run-directory name.
    pub fn seed(&self) -> u64 {
        match self {
            ExecSpec::PretrainAtom { run, .. }
            | ExecSpec::PretrainMol { run, .. }
            | ExecSpec::Finetune { run, .. } => run.seed,
            ExecSpec::Eval { seed, .. }
            | ExecSpec::ExtractFeatures { seed, .. }
            | ExecSpec::AnalyzeShift { seed, .. }
            | ExecSpec::Report { seed, .. } => *seed,
        }
    }

    /// Every input file this command reads, with its SHA-256.
    pub fn input_files(&self) -> Result<Vec<InputFile>, CliError> {
        let mut files: Vec<(String, PathBuf)> = Vec::new();
        let add_checkpoint = |files: &mut Vec<(String, PathBuf)>, dir: &Path| {
            for name in [store::PARAMS_FILE, store::MODEL_FILE, store::META_FILE] {
                files.push((format!("init-checkpoint/{name}"), dir.join(name)));
            }
        };
        match self {
            ExecSpec::PretrainAtom { data, .. } | ExecSpec::PretrainMol { data, .. } => {
                files.push(("data".into(), data.clone()));
            }
            ExecSpec::Finetune {
                data,
                init_checkpoint,
                ..
            } => {
                files.push(("data".into(), data.clone()));
                if let Some(dir) = init_checkpoint {
                    add_checkpoint(&mut files, dir);
                }
            }
            ExecSpec::Eval {
                data,
                init_checkpoint,
                ..
            }
            | ExecSpec::ExtractFeatures {
                data,
                init_checkpoint,
                ..
            } => {
                files.push(("data".into(), data.clone()));
                add_checkpoint(&mut files, init_checkpoint);
            }
            ExecSpec::AnalyzeShift {
                features_a,
                features_b,
                ..
            }
            | ExecSpec::Report {
                features_a,
                features_b,
                ..
            } => {
                for (model, paths) in [("a", features_a), ("b", features_b)] {
                    for (i, p) in paths.iter().enumerate() {
                        files.push((format!("features-{model}/{i}"), p.clone()));
                        files.push((
                            format!("features-{model}/{i}/sidecar"),
                            store::sidecar_path(p),
                        ));
                    }
                }
            }
        }
        files
            .into_iter()
            .map(|(name, path)| {
                let sha256 = sha256_hex(&path).map_err(|e| {
                    CliError::Data(format!("cannot read input {} ({}): {e}", name, path.display()))
                })?;
                Ok(InputFile { name, path, sha256 })
            })
            .collect()
    }
}

/// Read the config file (if any) and apply flag overrides.
fn resolve_run_config(
    config: Option<&Path>,
    seed: Option<u64>,
    tasks_flag: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut run = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        run.seed = s;
    }
    if let Some(t) = tasks_flag {
        run.tasks = t
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    run.validate()?;
    Ok(run)
}

/// Absolute form of an input path; the file must exist.
fn canonical_input(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    fs::canonicalize(path)
        .map_err(|e| CliError::Data(format!("cannot read {what} {}: {e}", path.display())))
}

/// Absolute form of a directory input (checkpoint directories).
fn canonical_dir(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    let p = canonical_input(path, what)?;
    if !p.is_dir() {
        return Err(CliError::Data(format!(
            "{what} {} is not a directory",
            path.display()
        )));
    }
    Ok(p)
}

/// Validate `--splits` values against the three protocol roles.
fn check_splits(splits: &[String], expect_pair: bool) -> Result<(), CliError> {
    if splits.is_empty() {
        return Err(CliError::Usage("--splits must name at least one split".into()));
    }
    if expect_pair && splits.len() != 2 {
        return Err(CliError::Usage(format!(
            "--splits must name exactly two splits, got {}",
            splits.len()
        )));
    }
    for s in splits {
        s.parse::<Role>().map_err(CliError::Usage)?;
    }
    Ok(())
}

/// Task names end up in CSV cells and file names; keep them plain.
fn check_task_name(name: &str) -> Result<(), CliError> {
    if name.is_empty() {
        return Err(CliError::Usage("task name must not be empty".into()));
    }
    if name.chars().any(|c| c == ',' || c == '"' || c == '/' || c.is_control()) {
        return Err(CliError::Usage(format!(
            "task name {name:?} must not contain commas, quotes, slashes, or control characters"
        )));
    }
    Ok(())
}

fn check_features(paths: &[PathBuf], flag: &str) -> Result<Vec<PathBuf>, CliError> {
    if paths.len() != 2 {
        return Err(CliError::Usage(format!(
            "{flag} needs exactly two comma-separated files (one per split), got {}",
            paths.len()
        )));
    }
    paths
        .iter()
        .map(|p| canonical_input(p, "feature file"))
        .collect()
}

/// Infer the task kind from the targets: exactly {0, 1} labels make a binary
/// task, anything else a regression.
fn infer_kind(data: &Path, seed: u64) -> Result<TaskKind, CliError> {
    let datasets = load_mol_dataset(data, seed)?;
    let binary = Role::ALL
        .iter()
        .flat_map(|r| datasets.split(*r))
        .all(|rec| rec.target == 0.0 || rec.target == 1.0);
    Ok(if binary {
        TaskKind::Binary
    } else {
        TaskKind::Regression
    })
}

/// Turn parsed flags into a fully resolved spec plus the run-dir parent.
pub fn resolve(command: Command) -> Result<(ExecSpec, PathBuf), CliError> {
    match command {
        Command::PretrainAtom(TrainArgs {
            config,
            seed,
            data,
            out,
            task,
        }) => {
            let run = resolve_run_config(config.as_deref(), seed, task.as_deref())?;
            for name in &run.tasks {
                if !ATOM_TASKS.contains(&name.as_str()) {
                    return Err(CliError::Usage(format!(
                        "unknown atom task {name:?} (expected one of {})",
                        ATOM_TASKS.join(", ")
                    )));
                }
            }
            let data = canonical_input(&data, "data file")?;
            Ok((ExecSpec::PretrainAtom { data, run }, out))
        }
        Command::PretrainMol(TrainArgs {
            config,
            seed,
            data,
            out,
            task,
        }) => {
            let run = resolve_run_config(config.as_deref(), seed, None)?;
            let task = task.unwrap_or_else(|| "homolumo".to_string());
            check_task_name(&task)?;
            let data = canonical_input(&data, "data file")?;
            Ok((ExecSpec::PretrainMol { data, run, task }, out))
        }
        Command::Finetune(FinetuneArgs {
            config,
            seed,
            data,
            init_checkpoint,
            task,
            out,
        }) => {
            let run = resolve_run_config(config.as_deref(), seed, None)?;
            check_task_name(&task)?;
            let data = canonical_input(&data, "data file")?;
            let init_checkpoint = init_checkpoint
                .map(|p| canonical_dir(&p, "checkpoint directory"))
                .transpose()?;
            let kind = infer_kind(&data, run.seed)?;
            let metric = kind.default_metric();
            Ok((
                ExecSpec::Finetune {
                    data,
                    run,
                    task,
                    kind: kind.as_str().to_string(),
                    metric: metric.as_str().to_string(),
                    init_checkpoint,
                },
                out,
            ))
        }
        Command::Eval(EvalArgs {
            seed,
            data,
            init_checkpoint,
            splits,
            out,
        }) => {
            check_splits(&splits, false)?;
            let data = canonical_input(&data, "data file")?;
            let init_checkpoint = canonical_dir(&init_checkpoint, "checkpoint directory")?;
            Ok((
                ExecSpec::Eval {
                    data,
                    init_checkpoint,
                    splits,
                    seed: seed.unwrap_or(0),
                },
                out,
            ))
        }
        Command::ExtractFeatures(ExtractArgs {
            seed,
            data,
            init_checkpoint,
            splits,
            task,
            capture_layer,
            out,
        }) => {
            check_splits(&splits, false)?;
            if let Some(t) = &task {
                check_task_name(t)?;
            }
            if capture_layer == 0 {
                return Err(CliError::Usage("--capture-layer is 1-based; 0 is invalid".into()));
            }
            let data = canonical_input(&data, "data file")?;
            let init_checkpoint = canonical_dir(&init_checkpoint, "checkpoint directory")?;
            Ok((
                ExecSpec::ExtractFeatures {
                    data,
                    init_checkpoint,
                    splits,
                    task,
                    capture_layer,
                    seed: seed.unwrap_or(0),
                },
                out,
            ))
        }
        Command::AnalyzeShift(args) => {
            let (spec, out) = resolve_shift(args, false)?;
            Ok((spec, out))
        }
        Command::Report(args) => {
            let (spec, out) = resolve_shift(args.shift, true)?;
            Ok((spec, out))
        }
        // gen-toy and rerun are handled before resolution.
        Command::GenToy(_) | Command::Rerun(_) => unreachable!("handled by the dispatcher"),
    }
}

fn resolve_shift(args: ShiftArgs, as_report: bool) -> Result<(ExecSpec, PathBuf), CliError> {
    let ShiftArgs {
        features_a,
        features_b,
        splits,
        bins,
        seed,
        out,
    } = args;
    check_splits(&splits, true)?;
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let features_a = check_features(&features_a, "--features-a")?;
    let features_b = check_features(&features_b, "--features-b")?;
    let seed = seed.unwrap_or(0);
    let spec = if as_report {
        ExecSpec::Report {
            features_a,
            features_b,
            splits,
            bins,
            seed,
        }
    } else {
        ExecSpec::AnalyzeShift {
            features_a,
            features_b,
            splits,
            bins,
            seed,
        }
    };
    Ok((spec, out))
}
