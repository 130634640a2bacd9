//! Equal-width histograms over a shared support.
//!
//! Divergences between two samples are only meaningful when both are
//! discretized against the same bin edges, so the only way to build a
//! comparable pair is [`histogram_pair`], which spans the union range of both
//! samples. Degenerate input (every value identical in both samples) falls
//! back to a single unit-width bin so downstream metrics see two identical
//! point masses rather than an error.

use thiserror::Error;

/// Errors from histogram construction and histogram-pair metrics.
#[derive(Debug, Error)]
pub enum HistError {
    #[error("histogram requires a nonempty sample")]
    EmptySample,
    #[error("bin count must be positive")]
    BadBins,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("histogram edges must be strictly increasing")]
    BadEdges,
    #[error("histogram counts must hold at least one observation")]
    EmptyCounts,
    #[error("histograms do not share bin edges")]
    MismatchedEdges,
}

/// Binned counts over strictly increasing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    /// Build from explicit edges and counts, validating the invariants:
    /// `edges.len() == counts.len() + 1`, edges strictly increasing and
    /// finite, and at least one observation overall.
    pub fn new(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self, HistError> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(HistError::BadEdges);
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(HistError::NonFinite);
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HistError::BadEdges);
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(HistError::EmptyCounts);
        }
        Ok(Self {
            edges,
            counts,
            total,
        })
    }

    /// Bin boundaries, `bins + 1` of them.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Per-bin observation counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total observations across all bins.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of bins.
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Per-bin probabilities `counts / total`.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Histogram two samples over shared equal-width edges spanning the union of
/// their ranges. All values land in a bin: interior bins are half-open
/// `[left, right)` and the last bin includes its right edge.
///
/// If every value in both samples is identical the range is degenerate and
/// both histograms fall back to a single bin of width one centered on the
/// value.
pub fn histogram_pair(
    a: &[f64],
    b: &[f64],
    bins: usize,
) -> Result<(Histogram, Histogram), HistError> {
    if a.is_empty() || b.is_empty() {
        return Err(HistError::EmptySample);
    }
    if bins == 0 {
        return Err(HistError::BadBins);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(HistError::NonFinite);
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(b)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);

    if lo == hi {
        let edges = vec![lo - 0.5, lo + 0.5];
        let ha = Histogram::new(edges.clone(), vec![a.len() as u64])?;
        let hb = Histogram::new(edges, vec![b.len() as u64])?;
        return Ok((ha, hb));
    }

    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * (i as f64 / bins as f64))
        .collect();
    let width = (hi - lo) / bins as f64;
    let fill = |sample: &[f64]| -> Vec<u64> {
        let mut counts = vec![0u64; bins];
        for &v in sample {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        counts
    };
    Ok((
        Histogram::new(edges.clone(), fill(a))?,
        Histogram::new(edges, fill(b))?,
    ))
}
