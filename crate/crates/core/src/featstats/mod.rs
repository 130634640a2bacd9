//! Quantitative assessment of learned features.
//!
//! The question this module answers: how do a network's internal
//! representations behave across data splits, and does pretraining change
//! that behavior? The pipeline is
//!
//! 1. [`extract_features`] — collect every real atom's residual-stream state
//!    after the first transformer layer, one matrix per (model, split);
//! 2. [`normality_report`] — per-dimension Shapiro-Wilk and
//!    Kolmogorov-Smirnov tests, summarized by the mean and standard
//!    deviation of the Shapiro-Wilk p-values;
//! 3. [`shift_report`] — per-dimension KL, JS, EMD, total-variation, and
//!    Hellinger divergences between two splits, differenced between two
//!    models so a grid of positive values reads "the second model's features
//!    shifted less".
//!
//! Everything downstream of extraction is a pure function on plain floats;
//! per-dimension computations are independent.

mod divergence;
mod featmat;
mod histogram;
mod normality;
mod shift;

pub use divergence::{divergences, DivergenceMetric, Divergences};
pub use featmat::{
    extract_features, extract_features_at, FeatError, FeatureMatrix, ModelTag, CAPTURE_LAYER,
    FEATMAT_MAGIC,
};
pub use histogram::{histogram_pair, HistError, Histogram};
pub use normality::{
    kolmogorov_sf, ks_normal, ks_statistic, normal_cdf, normal_quantile, normality_report,
    normality_summary, shapiro_wilk, shapiro_wilk_subsampled, DimNormality, KsResult,
    NormalityError, NormalityReport, SwResult, KS_MIN_N, SHAPIRO_MAX_N, SHAPIRO_MIN_N,
};
pub use shift::{
    shift_report, split_shift, write_histogram_dump, ShiftError, ShiftReport, DEFAULT_BINS,
    DUMP_DIMS,
};
