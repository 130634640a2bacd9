//! Distribution-shift reports between data splits, and their differences
//! between two models.
//!
//! For one model, the shift of feature dimension `d` between two splits is
//! the vector of five divergences between the two histograms of column `d`
//! (shared equal-width edges per dimension). The differenced report
//! subtracts model B's shift from model A's per cell: when A is a scratch
//! network and B a pretrained one, positive entries mean the pretrained
//! features moved less between splits.

use std::io::{self, Write};

use thiserror::Error;

use super::divergence::{divergences, DivergenceMetric, Divergences};
use super::featmat::{FeatureMatrix, ModelTag};
use super::histogram::{histogram_pair, HistError};
use crate::trainpipe::Role;

/// Default bin count for all shift histograms.
pub const DEFAULT_BINS: usize = 64;
/// How many leading dimensions the histogram dump covers.
pub const DUMP_DIMS: usize = 20;

/// Errors from shift-report assembly.
#[derive(Debug, Error)]
pub enum ShiftError {
    #[error(transparent)]
    Hist(#[from] HistError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("feature matrices disagree on width: {a} vs {b} dimensions")]
    DimensionMismatch { a: usize, b: usize },
    #[error("models were compared on different split pairs: {a_pair} vs {b_pair}")]
    RoleMismatch { a_pair: String, b_pair: String },
}

/// Per-dimension divergences of one model between two splits.
pub fn split_shift(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    bins: usize,
) -> Result<Vec<Divergences>, ShiftError> {
    if x.cols() != y.cols() {
        return Err(ShiftError::DimensionMismatch {
            a: x.cols(),
            b: y.cols(),
        });
    }
    (0..x.cols())
        .map(|d| {
            let (p, q) = histogram_pair(&x.column(d), &y.column(d), bins)?;
            Ok(divergences(&p, &q)?)
        })
        .collect()
}

/// Shift of two models across the same pair of splits, plus their
/// per-dimension, per-metric difference `A − B`.
#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub model_a: ModelTag,
    pub model_b: ModelTag,
    pub split_pair: (Role, Role),
    pub bins: usize,
    pub shift_a: Vec<Divergences>,
    pub shift_b: Vec<Divergences>,
    pub delta: Vec<Divergences>,
}

impl ShiftReport {
    /// Number of feature dimensions covered.
    pub fn dims(&self) -> usize {
        self.delta.len()
    }

    fn split_pair_str(&self) -> String {
        format!("{}-{}", self.split_pair.0.as_str(), self.split_pair.1.as_str())
    }

    /// Write both models' shifts as `dimension,metric,split_pair,model,value`.
    pub fn write_shift_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "dimension,metric,split_pair,model,value")?;
        let pair = self.split_pair_str();
        for (tag, shift) in [(self.model_a, &self.shift_a), (self.model_b, &self.shift_b)] {
            for (dim, div) in shift.iter().enumerate() {
                for metric in DivergenceMetric::ALL {
                    writeln!(
                        w,
                        "{dim},{},{pair},{},{}",
                        metric.as_str(),
                        tag.as_str(),
                        div.get(metric)
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Write the differenced grid as `dimension,metric,delta`.
    pub fn write_delta_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "dimension,metric,delta")?;
        for (dim, div) in self.delta.iter().enumerate() {
            for metric in DivergenceMetric::ALL {
                writeln!(w, "{dim},{},{}", metric.as_str(), div.get(metric))?;
            }
        }
        Ok(())
    }
}

/// Build the differenced shift report for two models over the same split
/// pair. `a_pair` and `b_pair` each hold the two splits of one model, in the
/// same order.
pub fn shift_report(
    a_pair: (&FeatureMatrix, &FeatureMatrix),
    b_pair: (&FeatureMatrix, &FeatureMatrix),
    bins: usize,
) -> Result<ShiftReport, ShiftError> {
    let a_roles = format!("{}-{}", a_pair.0.role.as_str(), a_pair.1.role.as_str());
    let b_roles = format!("{}-{}", b_pair.0.role.as_str(), b_pair.1.role.as_str());
    if a_roles != b_roles {
        return Err(ShiftError::RoleMismatch {
            a_pair: a_roles,
            b_pair: b_roles,
        });
    }
    if a_pair.0.cols() != b_pair.0.cols() {
        return Err(ShiftError::DimensionMismatch {
            a: a_pair.0.cols(),
            b: b_pair.0.cols(),
        });
    }
    let shift_a = split_shift(a_pair.0, a_pair.1, bins)?;
    let shift_b = split_shift(b_pair.0, b_pair.1, bins)?;
    let delta = shift_a
        .iter()
        .zip(&shift_b)
        .map(|(a, b)| a.minus(b))
        .collect();
    Ok(ShiftReport {
        model_a: a_pair.0.tag,
        model_b: b_pair.0.tag,
        split_pair: (a_pair.0.role, a_pair.1.role),
        bins,
        shift_a,
        shift_b,
        delta,
    })
}

/// Dump per-bin histograms of the leading dimensions (up to [`DUMP_DIMS`])
/// for one model's two splits, as
/// `dimension,bin_left,bin_right,count_model,split`.
pub fn write_histogram_dump<W: Write>(
    mut w: W,
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    bins: usize,
) -> Result<(), ShiftError> {
    if x.cols() != y.cols() {
        return Err(ShiftError::DimensionMismatch {
            a: x.cols(),
            b: y.cols(),
        });
    }
    writeln!(w, "dimension,bin_left,bin_right,count_model,split")?;
    for dim in 0..x.cols().min(DUMP_DIMS) {
        let (hx, hy) = histogram_pair(&x.column(dim), &y.column(dim), bins)?;
        for (hist, role) in [(&hx, x.role), (&hy, y.role)] {
            for (i, &count) in hist.counts().iter().enumerate() {
                writeln!(
                    w,
                    "{dim},{},{},{count},{}",
                    hist.edges()[i],
                    hist.edges()[i + 1],
                    role.as_str()
                )?;
            }
        }
    }
    Ok(())
}
