//! Training and evaluation commands.
//!
//! Each command writes, inside its run directory:
//! * `config.txt` — the resolved run config (training commands), reusable
//!   via `--config`;
//! * `history.csv` — per-epoch train/validation curves (training commands);
//! * `metrics.csv` — `task,split,metric,value` rows at the restored best
//!   epoch;
//! * `checkpoint/` — parameters, architecture, and task metadata.

use std::io::Write;
use std::path::Path;

use molshift_core::graphormer::{predict_atom_level, ModelConfig, Phase, TapeBinding};
use molshift_core::molgraph::{encode, AtomVocab};
use molshift_core::tensorcore::{ParamStore, Scalar, Tape};
use molshift_core::trainpipe::{
    evaluate, load_atom_dataset, load_mol_dataset, predict_molecules, AtomRecord, AtomTask,
    Datasets, EpochStats, MetricKind, MolRecord, MolTask, Normalization, Role, RunConfig,
    TaskKind, TrainOutcome, ATOM_TASKS,
};

use crate::rundir::{finish, RunDir};
use crate::store::{save_checkpoint_dir, CheckpointMeta, TaskMeta};
use crate::{store, CliError};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const CONFIG_FILE: &str = "config.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// One `metrics.csv` row.
struct MetricRow {
    task: String,
    split: Role,
    metric: &'static str,
    value: f64,
}

fn write_history(rundir: &RunDir, history: &[EpochStats]) -> Result<(), CliError> {
    let mut w = rundir.create_file(HISTORY_FILE)?;
    let fail = |e: std::io::Error| CliError::Usage(format!("cannot write {HISTORY_FILE}: {e}"));
    writeln!(w, "epoch,train_loss,val_loss,val_metric").map_err(fail)?;
    for s in history {
        writeln!(w, "{},{},{},{}", s.epoch, s.train_loss, s.val_loss, s.val_metric)
            .map_err(fail)?;
    }
    finish(w, HISTORY_FILE)
}

fn write_metrics(rundir: &RunDir, rows: &[MetricRow]) -> Result<(), CliError> {
    let mut w = rundir.create_file(METRICS_FILE)?;
    let fail = |e: std::io::Error| CliError::Usage(format!("cannot write {METRICS_FILE}: {e}"));
    writeln!(w, "task,split,metric,value").map_err(fail)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.task, r.split.as_str(), r.metric, r.value).map_err(fail)?;
    }
    finish(w, METRICS_FILE)
}

/// The metric family reported for a task kind: the headline metric first.
fn metric_family(kind: TaskKind) -> [MetricKind; 2] {
    match kind {
        TaskKind::Regression => [MetricKind::Mae, MetricKind::Spearman],
        TaskKind::Binary => [MetricKind::RocAuc, MetricKind::PrAuc],
    }
}

/// Score one molecular task on the named splits, two metrics per split.
fn mol_metric_rows(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    task: &MolTask,
    norm: Option<Normalization>,
    data: &Datasets<MolRecord>,
    roles: &[Role],
) -> Result<Vec<MetricRow>, CliError> {
    let mut rows = Vec::new();
    for &role in roles {
        let records = data.split(role);
        if records.is_empty() {
            return Err(CliError::Data(format!("{} split is empty", role.as_str())));
        }
        let preds = predict_molecules(params, cfg, records, norm)?;
        let labels: Vec<f64> = records.iter().map(|r| r.target).collect();
        for metric in metric_family(task.kind) {
            let value = metric
                .compute(&preds, &labels)
                .map_err(|e| CliError::Data(format!("{} split: {e}", role.as_str())))?;
            rows.push(MetricRow {
                task: task.name.clone(),
                split: role,
                metric: metric.as_str(),
                value,
            });
        }
    }
    Ok(rows)
}

/// Per-task atom-level MAE in raw target units on one split.
fn atom_task_mae(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    tasks: &[AtomTask],
    records: &[AtomRecord],
) -> Result<Vec<(String, f64)>, CliError> {
    let vocab = AtomVocab::standard();
    let mut out = Vec::new();
    for (ti, task) in tasks.iter().enumerate() {
        let mut abs_sum = 0.0f64;
        let mut count = 0usize;
        for rec in records {
            let Some(labels) = rec.props.get(&task.name) else {
                continue;
            };
            let enc = encode(&rec.graph, &vocab, cfg.d_max, Some(ti as u32))
                .map_err(|e| CliError::Data(e.to_string()))?;
            let mut tape = Tape::new();
            let mut binding = TapeBinding::new(params);
            let preds = predict_atom_level(&mut tape, &mut binding, cfg, &enc, &mut Phase::Eval)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            for (pred, label) in tape.value(preds).iter().zip(labels) {
                abs_sum += (task.norm.invert(pred.to_f64()) - label).abs();
                count += 1;
            }
        }
        if count > 0 {
            out.push((task.name.clone(), abs_sum / count as f64));
        }
    }
    Ok(out)
}

fn write_training_artifacts(
    rundir: &RunDir,
    run: &RunConfig,
    outcome: &TrainOutcome<f32>,
    meta: &CheckpointMeta,
    rows: &[MetricRow],
) -> Result<(), CliError> {
    rundir.write(CONFIG_FILE, &run.to_text())?;
    write_history(rundir, &outcome.history)?;
    write_metrics(rundir, rows)?;
    save_checkpoint_dir(&rundir.file(CHECKPOINT_DIR), &outcome.params, &outcome.config, meta)
}

pub fn pretrain_atom(data: &Path, run: &RunConfig, rundir: &RunDir) -> Result<String, CliError> {
    let datasets = load_atom_dataset(data, run.seed)?;
    let names: Vec<&str> = if run.tasks.is_empty() {
        ATOM_TASKS.to_vec()
    } else {
        run.tasks.iter().map(String::as_str).collect()
    };
    let tasks: Vec<AtomTask> = names
        .iter()
        .map(|n| AtomTask::fit(n, &datasets.train))
        .collect::<Result<_, _>>()?;
    let outcome = molshift_core::trainpipe::pretrain_atom_level::<f32>(&datasets, &tasks, run)?;

    let mut rows = Vec::new();
    for role in [Role::Valid, Role::Test] {
        for (name, mae) in
            atom_task_mae(&outcome.params, &outcome.config, &tasks, datasets.split(role))?
        {
            rows.push(MetricRow {
                task: name,
                split: role,
                metric: MetricKind::Mae.as_str(),
                value: mae,
            });
        }
    }
    let meta = CheckpointMeta {
        origin: "pretrain-atom".to_string(),
        model_tag: "atom_pretrained".to_string(),
        tasks: tasks
            .iter()
            .map(|t| TaskMeta {
                name: t.name.clone(),
                kind: TaskKind::Regression.as_str().to_string(),
                metric: MetricKind::Mae.as_str().to_string(),
                norm: Some(t.norm),
            })
            .collect(),
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        monitored: outcome.monitored.to_string(),
    };
    write_training_artifacts(rundir, run, &outcome, &meta, &rows)?;
    Ok(format!(
        "pretrain-atom: {} tasks on {} molecules ({} train), best epoch {}/{} ({} {:.4})",
        tasks.len(),
        datasets.len(),
        datasets.train.len(),
        outcome.best_epoch,
        outcome.history.len(),
        outcome.monitored,
        outcome.best_val,
    ))
}

pub fn pretrain_mol(
    data: &Path,
    run: &RunConfig,
    task_name: &str,
    rundir: &RunDir,
) -> Result<String, CliError> {
    let datasets = load_mol_dataset(data, run.seed)?;
    let outcome = molshift_core::trainpipe::pretrain_mol_level::<f32>(&datasets, task_name, run)?;
    let task = MolTask::new(task_name, TaskKind::Regression, MetricKind::Mae)?;
    let norm = outcome.norms.get(task_name).copied();
    let rows = mol_metric_rows(
        &outcome.params,
        &outcome.config,
        &task,
        norm,
        &datasets,
        &[Role::Valid, Role::Test],
    )?;
    let meta = CheckpointMeta {
        origin: "pretrain-mol".to_string(),
        model_tag: "mol_pretrained".to_string(),
        tasks: vec![TaskMeta {
            name: task_name.to_string(),
            kind: task.kind.as_str().to_string(),
            metric: task.metric.as_str().to_string(),
            norm,
        }],
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        monitored: outcome.monitored.to_string(),
    };
    write_training_artifacts(rundir, run, &outcome, &meta, &rows)?;
    let test_mae = rows
        .iter()
        .find(|r| r.split == Role::Test && r.metric == "mae")
        .map(|r| r.value);
    Ok(format!(
        "pretrain-mol: task {task_name:?} on {} molecules, best epoch {}/{} (val_loss {:.4}), test mae {}",
        datasets.len(),
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val,
        test_mae.map_or("n/a".to_string(), |v| format!("{v:.4}")),
    ))
}

/// How a fine-tuned model is tagged, given what it was initialized from.
fn finetune_tag(init_meta: Option<&CheckpointMeta>) -> String {
    match init_meta {
        None => "scratch".to_string(),
        Some(meta) => match meta.origin.as_str() {
            "pretrain-atom" => "atom_pretrained".to_string(),
            "pretrain-mol" => "mol_pretrained".to_string(),
            // a chain of finetunes keeps the original provenance
            _ => meta.model_tag.clone(),
        },
    }
}

#[allow(clippy::too_many_arguments)]
pub fn finetune(
    data: &Path,
    run: &RunConfig,
    task_name: &str,
    kind: &str,
    metric: &str,
    init_checkpoint: Option<&Path>,
    rundir: &RunDir,
) -> Result<String, CliError> {
    let kind = TaskKind::parse(kind).map_err(CliError::Usage)?;
    let metric = MetricKind::parse(metric).map_err(CliError::Usage)?;
    let task = MolTask::new(task_name, kind, metric)?;
    let datasets = load_mol_dataset(data, run.seed)?;
    let init = init_checkpoint.map(store::load_checkpoint_dir).transpose()?;
    let outcome = molshift_core::trainpipe::finetune::<f32>(
        init.as_ref().map(|(p, c, _)| (p, c)),
        &task,
        &datasets,
        run,
    )?;
    let norm = outcome.norms.get(task_name).copied();
    let rows = mol_metric_rows(
        &outcome.params,
        &outcome.config,
        &task,
        norm,
        &datasets,
        &[Role::Valid, Role::Test],
    )?;
    let meta = CheckpointMeta {
        origin: "finetune".to_string(),
        model_tag: finetune_tag(init.as_ref().map(|(_, _, m)| m)),
        tasks: vec![TaskMeta {
            name: task_name.to_string(),
            kind: kind.as_str().to_string(),
            metric: metric.as_str().to_string(),
            norm,
        }],
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        monitored: outcome.monitored.to_string(),
    };
    write_training_artifacts(rundir, run, &outcome, &meta, &rows)?;
    let test = rows
        .iter()
        .find(|r| r.split == Role::Test && r.metric == metric.as_str())
        .map(|r| r.value);
    Ok(format!(
        "finetune: task {task_name:?} ({}/{}, {}), best epoch {}/{} (val {:.4}), test {} {}",
        kind.as_str(),
        metric.as_str(),
        meta.model_tag,
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val,
        metric.as_str(),
        test.map_or("n/a".to_string(), |v| format!("{v:.4}")),
    ))
}

pub fn eval(
    data: &Path,
    init_checkpoint: &Path,
    splits: &[String],
    seed: u64,
    rundir: &RunDir,
) -> Result<String, CliError> {
    let (params, cfg, meta) = store::load_checkpoint_dir(init_checkpoint)?;
    if meta.tasks.len() != 1 || meta.origin == "pretrain-atom" {
        return Err(CliError::Usage(format!(
            "eval needs a molecule-level checkpoint with one task; {} has {} tasks from {:?}",
            init_checkpoint.display(),
            meta.tasks.len(),
            meta.origin,
        )));
    }
    let tm = &meta.tasks[0];
    let task = MolTask::new(&tm.name, tm.kind()?, tm.metric()?)?;
    let datasets = load_mol_dataset(data, seed)?;
    let roles: Vec<Role> = splits
        .iter()
        .map(|s| s.parse::<Role>().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    let rows = mol_metric_rows(&params, &cfg, &task, tm.norm, &datasets, &roles)?;
    write_metrics(rundir, &rows)?;

    // cross-check: the headline metric agrees with the one-call evaluator
    #[cfg(debug_assertions)]
    for (&role, pair) in roles.iter().zip(rows.chunks(2)) {
        let direct = evaluate(&params, &cfg, &task, tm.norm, datasets.split(role))?;
        assert!(
            (direct - pair[0].value).abs() < 1e-12,
            "evaluate() disagrees with metric rows"
        );
    }

    let shown = rows
        .iter()
        .map(|r| format!("{} {} {:.4}", r.split.as_str(), r.metric, r.value))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("eval: task {:?} — {shown}", task.name))
}
