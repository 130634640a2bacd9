//! Core library for molshift: a compact Graphormer-style graph transformer for
//! molecular property prediction, trained on per-atom or per-molecule targets,
//! plus the statistics used to analyze its learned feature distributions.
//!
//! The crate is organized around five subsystems:
//!
//! - [`molgraph`] — SMILES parsing into folded molecular graphs and the integer
//!   encodings (centrality, shortest-path distances) the model consumes.
//! - [`tensorcore`] — a minimal dense tensor engine with reverse-mode autodiff,
//!   an Adam optimizer, and a versioned checkpoint format.
//! - [`graphormer`] — the transformer: degree-aware node embeddings, attention
//!   with learnable shortest-path bias, task-specific virtual nodes, and shared
//!   scalar output heads.
//! - [`trainpipe`] — dataset ingestion, multitask pretraining, fine-tuning, and
//!   evaluation metrics (MAE, ROC-AUC, PR-AUC, Spearman).
//! - [`featstats`] — first-layer activation collection, normality tests
//!   (Shapiro-Wilk, Kolmogorov-Smirnov), and histogram divergences
//!   (KL, JS, EMD, TV, Hellinger) between data splits.

pub mod featstats;
pub mod graphormer;
pub mod molgraph;
pub mod tensorcore;
pub mod trainpipe;

pub use molgraph::{EncodedGraph, MolecularGraph};
pub use tensorcore::{ParamStore, Tape, Var};
