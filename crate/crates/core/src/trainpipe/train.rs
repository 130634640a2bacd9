//! Pretraining, fine-tuning, and evaluation loops.
//!
//! All three entry points share one driver: items are shuffled per epoch,
//! grouped into batches that share a tape (per-item losses are averaged, which
//! is arithmetically the padded-batch loss without materializing pad rows),
//! stepped with Adam, and evaluated once per epoch on the validation split.
//! Early stopping keeps the parameters of the best evaluation seen and gives
//! up after `patience` evaluations without improvement.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphormer::{
    init_params, predict_atom_level, predict_graph_level, HeadKind, ModelConfig, ModelError,
    Phase, TapeBinding,
};
use crate::molgraph::{encode, AtomVocab, EncodeError};
use crate::tensorcore::{
    adam_step, AdamConfig, OptimizerState, ParamStore, Scalar, Tape, TensorError, Var,
};

use super::dataset::{AtomRecord, Datasets, MolRecord, ATOM_TASKS};
use super::metrics::{self, MetricError};
use super::runconfig::RunConfig;

/// Errors raised by the training pipeline.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no tasks requested")]
    NoTasks,
    #[error("unknown atom task {0:?}")]
    UnknownTask(String),
    #[error("task {0:?} has no training data")]
    MissingTask(String),
    #[error("task {0:?} target is constant on the train split")]
    ConstantTarget(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}: training diverged")]
    Diverged { epoch: usize },
    #[error("checkpoint does not match run config: {0}")]
    ConfigMismatch(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("metric {metric} is inconsistent with a {kind} task")]
    MetricKindMismatch {
        metric: &'static str,
        kind: &'static str,
    },
}

/// Whether a molecular task is a regression or a binary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Binary,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Regression => "regression",
            TaskKind::Binary => "binary",
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "regression" => Ok(TaskKind::Regression),
            "binary" => Ok(TaskKind::Binary),
            other => Err(format!(
                "unknown task kind {other:?} (expected regression or binary)"
            )),
        }
    }

    /// The default reporting metric for this kind of task.
    pub fn default_metric(self) -> MetricKind {
        match self {
            TaskKind::Regression => MetricKind::Mae,
            TaskKind::Binary => MetricKind::RocAuc,
        }
    }

    fn head_kind(self) -> HeadKind {
        match self {
            TaskKind::Regression => HeadKind::Regression,
            TaskKind::Binary => HeadKind::Binary,
        }
    }
}

/// Which evaluation metric a task reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Mae,
    RocAuc,
    PrAuc,
    Spearman,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mae => "mae",
            MetricKind::RocAuc => "roc_auc",
            MetricKind::PrAuc => "pr_auc",
            MetricKind::Spearman => "spearman",
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "mae" => Ok(MetricKind::Mae),
            "roc_auc" => Ok(MetricKind::RocAuc),
            "pr_auc" => Ok(MetricKind::PrAuc),
            "spearman" => Ok(MetricKind::Spearman),
            other => Err(format!(
                "unknown metric {other:?} (expected mae, roc_auc, pr_auc, or spearman)"
            )),
        }
    }

    /// Direction: is a larger value better?
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mae)
    }

    pub fn compute(self, preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
        match self {
            MetricKind::Mae => metrics::mae(preds, labels),
            MetricKind::RocAuc => metrics::roc_auc(preds, labels),
            MetricKind::PrAuc => metrics::pr_auc(preds, labels),
            MetricKind::Spearman => metrics::spearman(preds, labels),
        }
    }
}

/// A downstream molecular property task.
#[derive(Debug, Clone)]
pub struct MolTask {
    pub name: String,
    pub kind: TaskKind,
    pub metric: MetricKind,
}

impl MolTask {
    /// Construct with the kind/metric consistency check: regression tasks
    /// report MAE or Spearman, binary tasks report ROC-AUC or PR-AUC.
    pub fn new(name: &str, kind: TaskKind, metric: MetricKind) -> Result<Self, TrainError> {
        let ok = match kind {
            TaskKind::Regression => matches!(metric, MetricKind::Mae | MetricKind::Spearman),
            TaskKind::Binary => matches!(metric, MetricKind::RocAuc | MetricKind::PrAuc),
        };
        if !ok {
            return Err(TrainError::MetricKindMismatch {
                metric: metric.as_str(),
                kind: kind.as_str(),
            });
        }
        Ok(MolTask {
            name: name.to_string(),
            kind,
            metric,
        })
    }
}

/// A z-scoring transform fitted on the train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Fit mean and population std. A constant target gets std = 1 so the
    /// transform is a pure shift; callers that must reject constant targets
    /// check [`Normalization::is_degenerate`].
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Normalization {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn is_degenerate(values: &[f64]) -> bool {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        var.sqrt() <= 1e-12
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// An atom-level pretraining task with its train-split normalization.
#[derive(Debug, Clone)]
pub struct AtomTask {
    pub name: String,
    pub norm: Normalization,
}

impl AtomTask {
    /// Fit the normalization for `name` over every atom of every train record
    /// carrying that property.
    pub fn fit(name: &str, train: &[AtomRecord]) -> Result<Self, TrainError> {
        if !ATOM_TASKS.contains(&name) {
            return Err(TrainError::UnknownTask(name.to_string()));
        }
        let values: Vec<f64> = train
            .iter()
            .filter_map(|r| r.props.get(name))
            .flatten()
            .copied()
            .collect();
        if values.is_empty() {
            return Err(TrainError::MissingTask(name.to_string()));
        }
        if Normalization::is_degenerate(&values) {
            return Err(TrainError::ConstantTarget(name.to_string()));
        }
        Ok(AtomTask {
            name: name.to_string(),
            norm: Normalization::fit(&values),
        })
    }
}

/// Per-epoch summary recorded in the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// The training loss function evaluated on the validation split.
    pub val_loss: f64,
    /// Task metric on the validation split, in raw target units
    /// (for atom-level pretraining: MAE averaged over tasks).
    pub val_metric: f64,
}

/// The result of a training run: best parameters plus the full history.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub params: ParamStore<S>,
    pub config: ModelConfig,
    /// Task name -> normalization used for its targets (regression only).
    pub norms: BTreeMap<String, Normalization>,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters are returned.
    pub best_epoch: usize,
    /// Monitored validation value at `best_epoch`.
    pub best_val: f64,
    /// Human-readable name of the monitored quantity.
    pub monitored: &'static str,
}

/// What early stopping watches.
#[derive(Clone, Copy)]
enum Monitor {
    /// Minimize the validation loss.
    ValLoss,
    /// Optimize the validation metric in its natural direction.
    ValMetric { higher_is_better: bool },
}

/// A training problem: how to compute one item's loss, and how to score a
/// whole split in raw units.
trait LossSource<S: Scalar> {
    type Item: Copy;

    fn item_loss(
        &self,
        tape: &mut Tape<S>,
        binding: &mut TapeBinding<'_, S>,
        item: Self::Item,
        phase: &mut Phase<'_>,
    ) -> Result<Var, TrainError>;

    fn val_metric(
        &self,
        params: &ParamStore<S>,
        items: &[Self::Item],
    ) -> Result<f64, TrainError>;
}

/// Mean of per-item losses on a fresh tape, without gradient bookkeeping.
fn split_loss<S: Scalar, L: LossSource<S>>(
    source: &L,
    params: &ParamStore<S>,
    items: &[L::Item],
) -> Result<f64, TrainError> {
    let mut total = 0.0f64;
    for &item in items {
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new(params);
        let loss = source.item_loss(&mut tape, &mut binding, item, &mut Phase::Eval)?;
        total += tape.value_scalar(loss).to_f64();
    }
    Ok(total / items.len() as f64)
}

/// The shared epoch driver. Returns the best parameters, history, and the
/// 1-based best epoch with its monitored value.
#[allow(clippy::type_complexity)]
fn fit<S: Scalar, L: LossSource<S>>(
    source: &L,
    run: &RunConfig,
    mut params: ParamStore<S>,
    train_items: Vec<L::Item>,
    valid_items: Vec<L::Item>,
    monitor: Monitor,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamStore<S>, Vec<EpochStats>, usize, f64), TrainError> {
    debug_assert!(!train_items.is_empty() && !valid_items.is_empty());
    let adam = AdamConfig {
        lr: run.lr,
        ..AdamConfig::default()
    };
    let mut opt: OptimizerState<S> = OptimizerState::default();
    let mut items = train_items;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<S>)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=run.epochs {
        items.shuffle(&mut *rng);
        let mut epoch_loss = 0.0f64;
        for chunk in items.chunks(run.batch_size) {
            let grads = {
                let mut tape = Tape::new();
                let mut binding = TapeBinding::new(&params);
                let mut acc: Option<Var> = None;
                for &item in chunk {
                    let mut phase = Phase::Train { rng: &mut *rng };
                    let loss = source.item_loss(&mut tape, &mut binding, item, &mut phase)?;
                    acc = Some(match acc {
                        None => loss,
                        Some(a) => tape.add(a, loss)?,
                    });
                }
                let batch_loss =
                    tape.scale(acc.expect("chunks are non-empty"), 1.0 / chunk.len() as f64);
                let value = tape.value_scalar(batch_loss).to_f64();
                if !value.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                epoch_loss += value * chunk.len() as f64;
                tape.backward(batch_loss)?;
                binding.grads(&tape)
            };
            adam_step(&mut params, &grads, &mut opt, &adam)?;
        }
        let train_loss = epoch_loss / items.len() as f64;
        let val_loss = split_loss(source, &params, &valid_items)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let val_metric = source.val_metric(&params, &valid_items)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });

        let monitored = match monitor {
            Monitor::ValLoss => val_loss,
            Monitor::ValMetric { .. } => val_metric,
        };
        let improved = match (&best, monitor) {
            (None, _) => true,
            (Some((b, _, _)), Monitor::ValLoss) => monitored < *b,
            (
                Some((b, _, _)),
                Monitor::ValMetric {
                    higher_is_better,
                },
            ) => {
                if higher_is_better {
                    monitored > *b
                } else {
                    monitored < *b
                }
            }
        };
        if improved {
            best = Some((monitored, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= run.patience {
                break;
            }
        }
    }
    let (best_val, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history, best_epoch, best_val))
}

// ---------------------------------------------------------------------------
// Atom-level multitask pretraining
// ---------------------------------------------------------------------------

struct AtomSource<'d> {
    tasks: &'d [AtomTask],
    vocab: AtomVocab,
    cfg: ModelConfig,
}

impl<'d, S: Scalar> LossSource<S> for AtomSource<'d> {
    /// One (molecule, task-index) pair.
    type Item = (&'d AtomRecord, usize);

    fn item_loss(
        &self,
        tape: &mut Tape<S>,
        binding: &mut TapeBinding<'_, S>,
        (rec, ti): Self::Item,
        phase: &mut Phase<'_>,
    ) -> Result<Var, TrainError> {
        let task = &self.tasks[ti];
        let enc = encode(&rec.graph, &self.vocab, self.cfg.d_max, Some(ti as u32))?;
        let preds = predict_atom_level(tape, binding, &self.cfg, &enc, phase)?;
        let targets: Vec<S> = rec.props[&task.name]
            .iter()
            .map(|&x| S::from_f64(task.norm.apply(x)))
            .collect();
        Ok(tape.mse_loss(preds, &targets)?)
    }

    fn val_metric(
        &self,
        params: &ParamStore<S>,
        items: &[Self::Item],
    ) -> Result<f64, TrainError> {
        let mut total = 0.0f64;
        let mut counted = 0usize;
        for (ti, task) in self.tasks.iter().enumerate() {
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            for &(rec, item_ti) in items {
                if item_ti != ti {
                    continue;
                }
                let enc = encode(&rec.graph, &self.vocab, self.cfg.d_max, Some(ti as u32))?;
                let mut tape = Tape::new();
                let mut binding = TapeBinding::new(params);
                let out =
                    predict_atom_level(&mut tape, &mut binding, &self.cfg, &enc, &mut Phase::Eval)?;
                for z in tape.value(out) {
                    preds.push(task.norm.invert(z.to_f64()));
                }
                labels.extend_from_slice(&rec.props[&task.name]);
            }
            if preds.is_empty() {
                continue; // task absent from this split
            }
            total += metrics::mae(&preds, &labels)?;
            counted += 1;
        }
        Ok(total / counted.max(1) as f64)
    }
}

/// Multitask atom-level pretraining: minimizes the unweighted mean of
/// per-task z-scored MSE over per-atom predictions, where each batch item is
/// one (molecule, task) pair conditioned through that task's virtual node.
/// Returns the parameters of the best validation loss.
pub fn pretrain_atom_level<S: Scalar>(
    data: &Datasets<AtomRecord>,
    tasks: &[AtomTask],
    run: &RunConfig,
) -> Result<TrainOutcome<S>, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }
    let vocab = AtomVocab::standard();
    let cfg = run.model_config(
        vocab.len(),
        vec![HeadKind::Regression; tasks.len()],
    );
    cfg.validate()?;

    fn items_for<'d>(
        records: &'d [AtomRecord],
        tasks: &[AtomTask],
    ) -> Vec<(&'d AtomRecord, usize)> {
        let mut items = Vec::new();
        for rec in records {
            for (ti, task) in tasks.iter().enumerate() {
                if rec.props.contains_key(&task.name) {
                    items.push((rec, ti));
                }
            }
        }
        items
    }
    let train_items = items_for(&data.train, tasks);
    let valid_items = items_for(&data.valid, tasks);
    for (ti, task) in tasks.iter().enumerate() {
        if !train_items.iter().any(|&(_, t)| t == ti) {
            return Err(TrainError::MissingTask(task.name.clone()));
        }
    }
    if valid_items.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let params: ParamStore<S> = init_params(&cfg, &mut rng);
    let source = AtomSource {
        tasks,
        vocab,
        cfg: cfg.clone(),
    };
    let (params, history, best_epoch, best_val) = fit(
        &source,
        run,
        params,
        train_items,
        valid_items,
        Monitor::ValLoss,
        &mut rng,
    )?;
    Ok(TrainOutcome {
        params,
        config: cfg,
        norms: tasks
            .iter()
            .map(|t| (t.name.clone(), t.norm))
            .collect(),
        history,
        best_epoch,
        best_val,
        monitored: "val_loss",
    })
}

// ---------------------------------------------------------------------------
// Molecule-level training (pretraining and fine-tuning)
// ---------------------------------------------------------------------------

struct MolSource {
    vocab: AtomVocab,
    cfg: ModelConfig,
    kind: TaskKind,
    /// Present for regression tasks.
    norm: Option<Normalization>,
    metric: MetricKind,
}

impl MolSource {
    fn predictions<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        items: &[&MolRecord],
    ) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
        let mut preds = Vec::with_capacity(items.len());
        let mut labels = Vec::with_capacity(items.len());
        for rec in items {
            let enc = encode(&rec.graph, &self.vocab, self.cfg.d_max, Some(0))?;
            let mut tape = Tape::new();
            let mut binding = TapeBinding::new(params);
            let out =
                predict_graph_level(&mut tape, &mut binding, &self.cfg, &enc, &mut Phase::Eval)?;
            let raw = tape.value_scalar(out).to_f64();
            preds.push(match self.norm {
                Some(norm) => norm.invert(raw),
                None => raw,
            });
            labels.push(rec.target);
        }
        Ok((preds, labels))
    }
}

impl<'d, S: Scalar> LossSource<S> for &'d MolSource {
    type Item = &'d MolRecord;

    fn item_loss(
        &self,
        tape: &mut Tape<S>,
        binding: &mut TapeBinding<'_, S>,
        rec: Self::Item,
        phase: &mut Phase<'_>,
    ) -> Result<Var, TrainError> {
        let enc = encode(&rec.graph, &self.vocab, self.cfg.d_max, Some(0))?;
        let pred = predict_graph_level(tape, binding, &self.cfg, &enc, phase)?;
        let loss = match (self.kind, self.norm) {
            (TaskKind::Regression, Some(norm)) => {
                tape.mse_loss(pred, &[S::from_f64(norm.apply(rec.target))])?
            }
            (TaskKind::Regression, None) => unreachable!("regression always has a norm"),
            (TaskKind::Binary, _) => {
                tape.bce_with_logits_loss(pred, &[S::from_f64(rec.target)])?
            }
        };
        Ok(loss)
    }

    fn val_metric(
        &self,
        params: &ParamStore<S>,
        items: &[Self::Item],
    ) -> Result<f64, TrainError> {
        let (preds, labels) = self.predictions(params, items)?;
        Ok(self.metric.compute(&preds, &labels)?)
    }
}

fn check_binary_labels(records: &[MolRecord], split: &'static str) -> Result<(), TrainError> {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for r in records {
        if r.target == 1.0 {
            pos += 1;
        } else if r.target == 0.0 {
            neg += 1;
        } else {
            return Err(TrainError::DegenerateLabels(format!(
                "{split} split has non-binary label {}",
                r.target
            )));
        }
    }
    if pos == 0 || neg == 0 {
        return Err(TrainError::DegenerateLabels(format!(
            "{split} split has a single class"
        )));
    }
    Ok(())
}

fn mol_source(
    task: &MolTask,
    data: &Datasets<MolRecord>,
    cfg: &ModelConfig,
) -> Result<MolSource, TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }
    let norm = match task.kind {
        TaskKind::Regression => {
            let targets: Vec<f64> = data.train.iter().map(|r| r.target).collect();
            Some(Normalization::fit(&targets))
        }
        TaskKind::Binary => {
            check_binary_labels(&data.train, "train")?;
            check_binary_labels(&data.valid, "valid")?;
            None
        }
    };
    Ok(MolSource {
        vocab: AtomVocab::standard(),
        cfg: cfg.clone(),
        kind: task.kind,
        norm,
        metric: task.metric,
    })
}

fn mol_outcome<S: Scalar>(
    task: &MolTask,
    source: &MolSource,
    cfg: ModelConfig,
    fitted: (ParamStore<S>, Vec<EpochStats>, usize, f64),
    monitored: &'static str,
) -> TrainOutcome<S> {
    let (params, history, best_epoch, best_val) = fitted;
    let mut norms = BTreeMap::new();
    if let Some(norm) = source.norm {
        norms.insert(task.name.clone(), norm);
    }
    TrainOutcome {
        params,
        config: cfg,
        norms,
        history,
        best_epoch,
        best_val,
        monitored,
    }
}

/// Molecule-level pretraining: graph-level regression through a single task
/// node, monitored on validation loss.
pub fn pretrain_mol_level<S: Scalar>(
    data: &Datasets<MolRecord>,
    task_name: &str,
    run: &RunConfig,
) -> Result<TrainOutcome<S>, TrainError> {
    let task = MolTask::new(task_name, TaskKind::Regression, MetricKind::Mae)?;
    let vocab_len = AtomVocab::standard().len();
    let cfg = run.model_config(vocab_len, vec![HeadKind::Regression]);
    cfg.validate()?;
    let source = mol_source(&task, data, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let params: ParamStore<S> = init_params(&cfg, &mut rng);
    let train_items: Vec<&MolRecord> = data.train.iter().collect();
    let valid_items: Vec<&MolRecord> = data.valid.iter().collect();
    let fitted = fit(
        &&source,
        run,
        params,
        train_items,
        valid_items,
        Monitor::ValLoss,
        &mut rng,
    )?;
    Ok(mol_outcome(&task, &source, cfg, fitted, "val_loss"))
}

/// Fine-tune on a downstream molecular task, optionally starting from
/// pretrained parameters. The whole network trains (nothing is frozen); the
/// task embedding is a fresh row; encoder and head weights transfer. Early
/// stopping follows the task metric in its natural direction.
pub fn finetune<S: Scalar>(
    init: Option<(&ParamStore<S>, &ModelConfig)>,
    task: &MolTask,
    data: &Datasets<MolRecord>,
    run: &RunConfig,
) -> Result<TrainOutcome<S>, TrainError> {
    let vocab_len = AtomVocab::standard().len();
    let cfg = run.model_config(vocab_len, vec![task.kind.head_kind()]);
    cfg.validate()?;
    let source = mol_source(task, data, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut params: ParamStore<S> = init_params(&cfg, &mut rng);

    if let Some((pre_params, pre_cfg)) = init {
        check_encoder_match(&cfg, pre_cfg)?;
        for (name, param) in params.iter_mut() {
            if name == "embed/task" {
                continue; // fresh conditioning row for the new task
            }
            let pre = pre_params.get(name).ok_or_else(|| {
                TrainError::ConfigMismatch(format!("checkpoint is missing parameter {name:?}"))
            })?;
            if pre.rows != param.rows || pre.cols != param.cols {
                return Err(TrainError::ConfigMismatch(format!(
                    "parameter {name:?} has shape {}x{} in the checkpoint but {}x{} is required",
                    pre.rows, pre.cols, param.rows, param.cols
                )));
            }
            param.data.copy_from_slice(&pre.data);
        }
    }

    let train_items: Vec<&MolRecord> = data.train.iter().collect();
    let valid_items: Vec<&MolRecord> = data.valid.iter().collect();
    let fitted = fit(
        &&source,
        run,
        params,
        train_items,
        valid_items,
        Monitor::ValMetric {
            higher_is_better: task.metric.higher_is_better(),
        },
        &mut rng,
    )?;
    Ok(mol_outcome(task, &source, cfg, fitted, task.metric.as_str()))
}

/// The architectural fields a checkpoint must share with the run config for
/// its encoder weights to transfer.
fn check_encoder_match(cfg: &ModelConfig, pre: &ModelConfig) -> Result<(), TrainError> {
    let mismatches: Vec<String> = [
        ("hidden_dim", cfg.hidden_dim, pre.hidden_dim),
        ("num_layers", cfg.num_layers, pre.num_layers),
        ("num_heads", cfg.num_heads, pre.num_heads),
        ("atom_vocab_size", cfg.atom_vocab_size, pre.atom_vocab_size),
        (
            "centrality_buckets",
            cfg.centrality_buckets,
            pre.centrality_buckets,
        ),
        ("spd_buckets", cfg.spd_buckets, pre.spd_buckets),
        ("d_max", cfg.d_max as usize, pre.d_max as usize),
    ]
    .iter()
    .filter(|(_, a, b)| a != b)
    .map(|(name, a, b)| format!("{name}: run {a} vs checkpoint {b}"))
    .collect();
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(TrainError::ConfigMismatch(mismatches.join("; ")))
    }
}

/// Evaluate a trained model on a set of molecule records with the task's
/// metric (regression predictions are un-normalized first when `norm` is
/// given).
pub fn evaluate<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &ModelConfig,
    task: &MolTask,
    norm: Option<Normalization>,
    records: &[MolRecord],
) -> Result<f64, TrainError> {
    let source = MolSource {
        vocab: AtomVocab::standard(),
        cfg: cfg.clone(),
        kind: task.kind,
        norm,
        metric: task.metric,
    };
    let items: Vec<&MolRecord> = records.iter().collect();
    let (preds, labels) = source.predictions(params, &items)?;
    Ok(task.metric.compute(&preds, &labels)?)
}

/// Graph-level raw predictions (logits for binary heads) in record order.
pub fn predict_molecules<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &ModelConfig,
    records: &[MolRecord],
    norm: Option<Normalization>,
) -> Result<Vec<f64>, TrainError> {
    let source = MolSource {
        vocab: AtomVocab::standard(),
        cfg: cfg.clone(),
        kind: TaskKind::Regression,
        norm,
        metric: MetricKind::Mae,
    };
    let items: Vec<&MolRecord> = records.iter().collect();
    let (preds, _) = source.predictions(params, &items)?;
    Ok(preds)
}
