//! On-disk layout of checkpoints and feature-file sidecars.
//!
//! A checkpoint directory holds three files: `params.ckpt` (tensor data),
//! `model.json` (architecture), and `meta.json` (tasks, normalizations, and
//! the provenance tag that later labels extracted features). A feature file
//! `x.msfeat` is accompanied by a sidecar `x.json` describing which split and
//! model produced it, so analysis commands are self-describing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use molshift_core::featstats::ModelTag;
use molshift_core::graphormer::ModelConfig;
use molshift_core::tensorcore::{load_checkpoint, save_checkpoint, ParamStore};
use molshift_core::trainpipe::{MetricKind, Normalization, TaskKind};

use crate::CliError;

pub const PARAMS_FILE: &str = "params.ckpt";
pub const MODEL_FILE: &str = "model.json";
pub const META_FILE: &str = "meta.json";

/// One trained task head: its name, kind, reporting metric, and (for
/// regression) the target normalization fitted on the train split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub kind: String,
    pub metric: String,
    pub norm: Option<Normalization>,
}

impl TaskMeta {
    pub fn kind(&self) -> Result<TaskKind, CliError> {
        TaskKind::parse(&self.kind).map_err(CliError::Data)
    }

    pub fn metric(&self) -> Result<MetricKind, CliError> {
        MetricKind::parse(&self.metric).map_err(CliError::Data)
    }
}

/// Checkpoint provenance and heads, stored as `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// The command that trained this checkpoint.
    pub origin: String,
    /// Tag that features extracted from this model carry.
    pub model_tag: String,
    /// Task heads in head-index order.
    pub tasks: Vec<TaskMeta>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub monitored: String,
}

impl CheckpointMeta {
    pub fn model_tag(&self) -> Result<ModelTag, CliError> {
        self.model_tag
            .parse::<ModelTag>()
            .map_err(|e| CliError::Data(format!("bad checkpoint meta: {e}")))
    }
}

/// Write `params.ckpt`, `model.json`, and `meta.json` under `dir`.
pub fn save_checkpoint_dir(
    dir: &Path,
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    meta: &CheckpointMeta,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Usage(format!(
            "cannot create checkpoint directory {}: {e}",
            dir.display()
        ))
    })?;
    save_checkpoint(&dir.join(PARAMS_FILE), params, None).map_err(|e| {
        CliError::Usage(format!("cannot write checkpoint under {}: {e}", dir.display()))
    })?;
    let model = serde_json::to_string_pretty(cfg).expect("config serialization cannot fail");
    let meta_text = serde_json::to_string_pretty(meta).expect("meta serialization cannot fail");
    for (name, text) in [(MODEL_FILE, model), (META_FILE, meta_text)] {
        fs::write(dir.join(name), text + "\n").map_err(|e| {
            CliError::Usage(format!("cannot write {}: {e}", dir.join(name).display()))
        })?;
    }
    Ok(())
}

/// Load the three checkpoint files back.
pub fn load_checkpoint_dir(
    dir: &Path,
) -> Result<(ParamStore<f32>, ModelConfig, CheckpointMeta), CliError> {
    let read = |name: &str| -> Result<String, CliError> {
        fs::read_to_string(dir.join(name)).map_err(|e| {
            CliError::Data(format!(
                "cannot read checkpoint file {}: {e}",
                dir.join(name).display()
            ))
        })
    };
    let (params, _opt) = load_checkpoint::<f32>(&dir.join(PARAMS_FILE))?;
    let cfg: ModelConfig = serde_json::from_str(&read(MODEL_FILE)?).map_err(|e| {
        CliError::Data(format!("malformed {}: {e}", dir.join(MODEL_FILE).display()))
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&read(META_FILE)?).map_err(|e| {
        CliError::Data(format!("malformed {}: {e}", dir.join(META_FILE).display()))
    })?;
    if meta.tasks.is_empty() {
        return Err(CliError::Data(format!(
            "checkpoint {} declares no tasks",
            dir.display()
        )));
    }
    Ok((params, cfg, meta))
}

/// Sidecar describing one feature file, stored next to it as `.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub split: String,
    pub model_tag: String,
    pub capture_layer: usize,
    pub task: String,
    pub rows: usize,
    pub cols: usize,
}

/// Where a feature file's sidecar lives: same path with a `.json` extension.
pub fn sidecar_path(features: &Path) -> PathBuf {
    features.with_extension("json")
}

pub fn write_sidecar(features: &Path, sidecar: &FeatureSidecar) -> Result<(), CliError> {
    let path = sidecar_path(features);
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serialization cannot fail");
    fs::write(&path, text + "\n")
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn read_sidecar(features: &Path) -> Result<FeatureSidecar, CliError> {
    let path = sidecar_path(features);
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Data(format!(
            "feature file {} has no readable sidecar {}: {e}",
            features.display(),
            path.display()
        ))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("malformed sidecar {}: {e}", path.display())))
}
