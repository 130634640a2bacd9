//! First-layer activation matrices: extraction and on-disk format.
//!
//! A [`FeatureMatrix`] stacks the residual-stream states of every real atom
//! across one data split, taken right after the first transformer layer, one
//! row per atom in dataset order. The on-disk format is deliberately dumb:
//! a magic string, two little-endian u64 dimensions, and a row-major f32
//! payload, so any plotting stack can read it with ten lines of code.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::graphormer::{forward, ModelConfig, ModelError, Phase, TapeBinding};
use crate::molgraph::{encode, AtomVocab, EncodeError, MolecularGraph};
use crate::tensorcore::{ParamStore, Scalar, Tape, TensorError};
use crate::trainpipe::Role;

/// Magic bytes opening every persisted feature matrix.
pub const FEATMAT_MAGIC: &[u8; 7] = b"MSFEAT1";
/// Transformer layer whose output is collected.
pub const CAPTURE_LAYER: usize = 1;

/// Errors from feature extraction and (de)serialization.
#[derive(Debug, Error)]
pub enum FeatError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("non-finite activation in molecule {molecule}")]
    NonFinite { molecule: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad feature-matrix file: {0}")]
    Format(String),
    #[error("bad feature-matrix shape: {0}")]
    Shape(String),
}

/// Which training regime produced the parameters a matrix was extracted
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Scratch,
    MolPretrained,
    AtomPretrained,
}

impl ModelTag {
    /// Stable lowercase name used in filenames and CSV columns.
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Scratch => "scratch",
            ModelTag::MolPretrained => "mol_pretrained",
            ModelTag::AtomPretrained => "atom_pretrained",
        }
    }
}

impl FromStr for ModelTag {
    type Err = FeatError;

    fn from_str(s: &str) -> Result<Self, FeatError> {
        match s {
            "scratch" => Ok(ModelTag::Scratch),
            "mol_pretrained" => Ok(ModelTag::MolPretrained),
            "atom_pretrained" => Ok(ModelTag::AtomPretrained),
            other => Err(FeatError::Format(format!(
                "unknown model tag '{other}' (expected scratch, mol_pretrained, or atom_pretrained)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row-major `(total atoms × hidden)` activation matrix for one split of one
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f32>,
    rows: usize,
    cols: usize,
    pub role: Role,
    pub tag: ModelTag,
}

impl FeatureMatrix {
    /// Build from raw row-major values, validating shape and finiteness.
    pub fn new(
        values: Vec<f32>,
        rows: usize,
        cols: usize,
        role: Role,
        tag: ModelTag,
    ) -> Result<Self, FeatError> {
        if values.len() != rows * cols {
            return Err(FeatError::Shape(format!(
                "{} values cannot fill a {rows}×{cols} matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatError::Shape(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            values,
            rows,
            cols,
            role,
            tag,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// All values, row-major.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// One atom's activation row.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// One feature dimension across all atoms, widened to f64 for the
    /// statistics layer.
    pub fn column(&self, dim: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|r| f64::from(self.values[r * self.cols + dim]))
            .collect()
    }

    /// Persist as magic + u64 rows + u64 cols + row-major f32, all
    /// little-endian.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), FeatError> {
        let mut out = Vec::with_capacity(23 + self.values.len() * 4);
        out.extend_from_slice(FEATMAT_MAGIC);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    /// Load a matrix persisted by [`FeatureMatrix::save`]. The file does not
    /// carry split or model identity; the caller supplies both.
    pub fn load<P: AsRef<Path>>(path: P, role: Role, tag: ModelTag) -> Result<Self, FeatError> {
        let bytes = fs::read(path)?;
        if bytes.len() < 23 {
            return Err(FeatError::Format("file shorter than the header".into()));
        }
        if &bytes[..7] != FEATMAT_MAGIC {
            return Err(FeatError::Format("bad magic".into()));
        }
        let rows = u64::from_le_bytes(bytes[7..15].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[15..23].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| FeatError::Format("dimensions overflow".into()))?;
        let payload = &bytes[23..];
        if payload.len() != count * 4 {
            return Err(FeatError::Format(format!(
                "payload holds {} bytes but {rows}×{cols} needs {}",
                payload.len(),
                count * 4
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(values, rows as usize, cols as usize, role, tag)
    }
}

/// Run the model over every molecule of a split with the first layer
/// captured, stacking real-atom rows in dataset order.
pub fn extract_features<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &ModelConfig,
    graphs: &[MolecularGraph],
    task: u32,
    role: Role,
    tag: ModelTag,
) -> Result<FeatureMatrix, FeatError> {
    extract_features_at(params, cfg, graphs, task, CAPTURE_LAYER, role, tag)
}

/// [`extract_features`] with an explicit capture layer (1-based).
pub fn extract_features_at<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &ModelConfig,
    graphs: &[MolecularGraph],
    task: u32,
    layer: usize,
    role: Role,
    tag: ModelTag,
) -> Result<FeatureMatrix, FeatError> {
    let vocab = AtomVocab::standard();
    let mut values: Vec<f32> = Vec::new();
    let mut rows = 0usize;
    for (molecule, graph) in graphs.iter().enumerate() {
        let enc = encode(graph, &vocab, cfg.d_max, Some(task))?;
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new(params);
        let out = forward(
            &mut tape,
            &mut binding,
            cfg,
            &enc,
            Some(layer),
            &mut Phase::Eval,
        )?;
        let captured = out
            .captured
            .expect("forward always captures when a layer is requested");
        debug_assert_eq!(captured.shape(), (enc.real_count(), cfg.hidden_dim));
        for &v in tape.value(captured) {
            let f = v.to_f64() as f32;
            if !f.is_finite() {
                return Err(FeatError::NonFinite { molecule });
            }
            values.push(f);
        }
        rows += enc.real_count();
    }
    FeatureMatrix::new(values, rows, cfg.hidden_dim, role, tag)
}
