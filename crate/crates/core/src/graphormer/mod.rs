//! The graph transformer.
//!
//! A pre-norm transformer over molecule nodes where structure enters in
//! exactly two places: node embeddings are the sum of an atom-type embedding
//! and a total-neighbor centrality embedding, and every attention logit
//! receives a learned per-head bias indexed by the pair's bucketed
//! shortest-path distance. There is no bond/edge encoder and formal charges
//! are never embedded. Multitask conditioning uses one virtual node per task:
//! the node's embedding row is the only parameter that differs between tasks,
//! its attention pairs share a distinguished distance bucket, and one scalar
//! head serves every task (per-atom readout for atom-level targets, task-node
//! readout for molecule-level ones).

mod model;

pub use model::{
    attention_bias, embed_nodes, forward, init_params, predict_atom_level, predict_graph_level,
    Forward, Phase, TapeBinding,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::CENTRALITY_BUCKETS;
use crate::tensorcore::TensorError;

/// Output head family for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Regression,
    Binary,
}

/// Architecture hyperparameters; serialized as `config.json` next to each
/// checkpoint and validated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_max: u32,
    pub atom_vocab_size: usize,
    /// Centrality embedding rows; must equal the encoder's bucket count.
    pub centrality_buckets: usize,
    /// Distance embedding rows: hops `0..=d_max`, FAR, TASK.
    pub spd_buckets: usize,
    pub num_tasks: usize,
    pub dropout_rate: f64,
    /// One entry per task.
    pub head_kinds: Vec<HeadKind>,
}

impl ModelConfig {
    /// Desk-scale defaults (4 layers, hidden 64, 4 heads) for `num_tasks`
    /// regression tasks.
    pub fn desk_default(atom_vocab_size: usize, num_tasks: usize) -> Self {
        ModelConfig {
            hidden_dim: 64,
            num_layers: 4,
            num_heads: 4,
            d_max: crate::molgraph::DEFAULT_D_MAX,
            atom_vocab_size,
            centrality_buckets: CENTRALITY_BUCKETS,
            spd_buckets: crate::molgraph::DEFAULT_D_MAX as usize + 3,
            num_tasks,
            dropout_rate: 0.1,
            head_kinds: vec![HeadKind::Regression; num_tasks],
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::BadConfig(msg));
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return fail("hidden_dim, num_layers and num_heads must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_tasks == 0 {
            return fail("num_tasks must be at least 1".into());
        }
        if self.d_max < 1 {
            return fail(format!("d_max must be >= 1, got {}", self.d_max));
        }
        if self.spd_buckets != self.d_max as usize + 3 {
            return fail(format!(
                "spd_buckets {} inconsistent with d_max {} (want d_max + 3)",
                self.spd_buckets, self.d_max
            ));
        }
        if self.centrality_buckets != CENTRALITY_BUCKETS {
            return fail(format!(
                "centrality_buckets {} does not match the encoder's {}",
                self.centrality_buckets, CENTRALITY_BUCKETS
            ));
        }
        if self.atom_vocab_size == 0 {
            return fail("atom_vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.head_kinds.len() != self.num_tasks {
            return fail(format!(
                "{} head kinds for {} tasks",
                self.head_kinds.len(),
                self.num_tasks
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig = serde_json::from_str(text)
            .map_err(|e| ModelError::BadConfig(format!("config.json: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("task id {task} out of range for {num_tasks} tasks")]
    TaskOutOfRange { task: u32, num_tasks: usize },
    #[error("capture layer {layer} out of range 1..={num_layers}")]
    CaptureOutOfRange { layer: usize, num_layers: usize },
    #[error("encoded graph has no task node")]
    MissingTaskNode,
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let cfg = ModelConfig::desk_default(11, 4);
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 16);
    }

    #[test]
    fn divisibility_enforced() {
        let mut cfg = ModelConfig::desk_default(11, 1);
        cfg.num_heads = 5;
        assert!(matches!(cfg.validate(), Err(ModelError::BadConfig(_))));
    }

    #[test]
    fn zero_tasks_rejected() {
        let mut cfg = ModelConfig::desk_default(11, 1);
        cfg.num_tasks = 0;
        cfg.head_kinds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bucket_consistency_enforced() {
        let mut cfg = ModelConfig::desk_default(11, 1);
        cfg.spd_buckets = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ModelConfig::desk_default(11, 2);
        let parsed = ModelConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        assert!(matches!(
            ModelConfig::from_json("{\"hidden_dim\": true}"),
            Err(ModelError::BadConfig(_))
        ));
    }
}
