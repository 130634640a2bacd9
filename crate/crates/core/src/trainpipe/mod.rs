//! Training pipeline: dataset ingestion, atom-level multitask pretraining,
//! molecule-level pretraining, fine-tuning, and evaluation metrics.
//!
//! Data flows in as JSONL (per-atom property vectors) or CSV (one molecular
//! target per row), is split into train/valid/test roles either by an explicit
//! split column or by a seeded hash, and is consumed by training loops that
//! own a [`crate::tensorcore::ParamStore`] exclusively. All randomness is
//! drawn from seeded ChaCha8 streams so a (config, seed) pair reproduces its
//! run bit-exactly within one build.

mod dataset;
mod metrics;
mod runconfig;
pub mod toydata;
mod train;

pub use dataset::{
    load_atom_dataset, load_mol_dataset, AtomRecord, DataError, Datasets, MolRecord, Role,
    ATOM_TASKS,
};
pub use metrics::{mae, pr_auc, roc_auc, spearman, MetricError};
pub use runconfig::{ConfigError, RunConfig};
pub use train::{
    evaluate, finetune, predict_molecules, pretrain_atom_level, pretrain_mol_level, AtomTask,
    EpochStats, MetricKind, MolTask, Normalization, TaskKind, TrainError, TrainOutcome,
};
