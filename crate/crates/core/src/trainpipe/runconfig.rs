//! Run configuration: a flat `key = value` text format.
//!
//! Unknown keys are hard errors so a typo in a config file cannot silently
//! fall back to a default. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphormer::{HeadKind, ModelConfig};
use crate::molgraph::DEFAULT_D_MAX;

/// Errors raised while parsing or validating a [`RunConfig`].
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for {key:?}: {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything a training run needs: optimization hyperparameters, the task
/// list, and the model dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Early stopping: give up after this many evaluations without
    /// improvement on the monitored validation quantity.
    pub patience: usize,
    /// Atom-level task names for pretraining; empty means "all four".
    pub tasks: Vec<String>,
    pub d_max: u32,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 500,
            batch_size: 8,
            lr: 1e-3,
            patience: 20,
            tasks: Vec::new(),
            d_max: DEFAULT_D_MAX,
            hidden_dim: 64,
            num_layers: 4,
            num_heads: 4,
            dropout: 0.1,
        }
    }
}

impl RunConfig {
    /// Parse the flat `key = value` format, starting from defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or(ConfigError::Malformed {
                line,
                text: stripped.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            let bad = |msg: &str| ConfigError::BadValue {
                line,
                key: key.to_string(),
                msg: msg.to_string(),
            };
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad("expected unsigned integer"))?,
                "epochs" => {
                    cfg.epochs = value.parse().map_err(|_| bad("expected unsigned integer"))?
                }
                "batch_size" => {
                    cfg.batch_size = value.parse().map_err(|_| bad("expected unsigned integer"))?
                }
                "lr" => cfg.lr = value.parse().map_err(|_| bad("expected number"))?,
                "patience" => {
                    cfg.patience = value.parse().map_err(|_| bad("expected unsigned integer"))?
                }
                "tasks" => {
                    cfg.tasks = value
                        .split(',')
                        .map(|t| t.trim().to_string())
                        .filter(|t| !t.is_empty())
                        .collect()
                }
                "d_max" => cfg.d_max = value.parse().map_err(|_| bad("expected unsigned integer"))?,
                "hidden_dim" => {
                    cfg.hidden_dim = value.parse().map_err(|_| bad("expected unsigned integer"))?
                }
                "num_layers" => {
                    cfg.num_layers = value.parse().map_err(|_| bad("expected unsigned integer"))?
                }
                "num_heads" => {
                    cfg.num_heads = value.parse().map_err(|_| bad("expected unsigned integer"))?
                }
                "dropout" => cfg.dropout = value.parse().map_err(|_| bad("expected number"))?,
                other => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check that every numeric field is in its legal range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::Invalid("lr must be positive and finite".into()));
        }
        if self.patience == 0 {
            return Err(ConfigError::Invalid("patience must be >= 1".into()));
        }
        if self.d_max < 1 {
            return Err(ConfigError::Invalid("d_max must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(ConfigError::Invalid(
                "hidden_dim, num_layers, num_heads must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Render as the same flat text format `parse` accepts (round-trips).
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\nepochs = {}\nbatch_size = {}\nlr = {}\npatience = {}\ntasks = {}\nd_max = {}\nhidden_dim = {}\nnum_layers = {}\nnum_heads = {}\ndropout = {}\n",
            self.seed,
            self.epochs,
            self.batch_size,
            self.lr,
            self.patience,
            self.tasks.join(","),
            self.d_max,
            self.hidden_dim,
            self.num_layers,
            self.num_heads,
            self.dropout,
        )
    }

    /// Build the model configuration this run trains.
    pub fn model_config(
        &self,
        atom_vocab_size: usize,
        head_kinds: Vec<HeadKind>,
    ) -> ModelConfig {
        let mut cfg = ModelConfig::desk_default(atom_vocab_size, head_kinds.len());
        cfg.hidden_dim = self.hidden_dim;
        cfg.num_layers = self.num_layers;
        cfg.num_heads = self.num_heads;
        cfg.d_max = self.d_max;
        cfg.spd_buckets = (self.d_max as usize) + 3;
        cfg.dropout_rate = self.dropout;
        cfg.head_kinds = head_kinds;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config_with_comments() {
        let text = "# training run\nseed = 7\nepochs = 100\nbatch_size = 4\nlr = 0.01\n\npatience = 5\ntasks = charge, nmr\nd_max = 4\nhidden_dim = 32\nnum_layers = 2\nnum_heads = 2\ndropout = 0.0 # keep eval-like\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.patience, 5);
        assert_eq!(cfg.tasks, vec!["charge".to_string(), "nmr".to_string()]);
        assert_eq!(cfg.d_max, 4);
        assert_eq!(cfg.hidden_dim, 32);
        assert_eq!(cfg.num_layers, 2);
        assert_eq!(cfg.num_heads, 2);
        assert_eq!(cfg.dropout, 0.0);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::parse("learning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = RunConfig::parse("seed = 1\nnot a pair\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_nonpositive_numerics() {
        assert!(RunConfig::parse("lr = 0.0\n").is_err());
        assert!(RunConfig::parse("epochs = 0\n").is_err());
        assert!(RunConfig::parse("batch_size = 0\n").is_err());
        assert!(RunConfig::parse("dropout = 1.0\n").is_err());
        assert!(RunConfig::parse("d_max = 0\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.tasks = vec!["charge".into()];
        cfg.lr = 0.0025;
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }
}
