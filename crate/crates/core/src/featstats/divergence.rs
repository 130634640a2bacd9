//! Five distribution-shift metrics between histograms on shared edges.
//!
//! All metrics operate on the per-bin probability vectors. Conventions:
//!
//! * KL uses additive smoothing `ε = 1e-10` on **both** distributions,
//!   renormalized, because empty bins otherwise yield infinities. The other
//!   four handle zero bins natively and are computed unsmoothed.
//! * JS uses the natural log, so it is bounded by `ln 2`.
//! * Hellinger is computed in the numerically stable form
//!   `√(½ Σ (√pᵢ − √qᵢ)²)`, which hits the boundary values 0 and 1 exactly.
//! * EMD is the one-dimensional closed form: the L1 distance between the
//!   cumulative distributions, weighted by bin width.

use super::histogram::{HistError, Histogram};

const KL_EPSILON: f64 = 1e-10;

/// The five shift metrics, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceMetric {
    Kl,
    Js,
    Emd,
    Tv,
    Hellinger,
}

impl DivergenceMetric {
    /// Every metric, in the order reports list them.
    pub const ALL: [DivergenceMetric; 5] = [
        DivergenceMetric::Kl,
        DivergenceMetric::Js,
        DivergenceMetric::Emd,
        DivergenceMetric::Tv,
        DivergenceMetric::Hellinger,
    ];

    /// Stable lowercase name used in CSV output.
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceMetric::Kl => "kl",
            DivergenceMetric::Js => "js",
            DivergenceMetric::Emd => "emd",
            DivergenceMetric::Tv => "tv",
            DivergenceMetric::Hellinger => "hellinger",
        }
    }
}

/// One value per metric for a single comparison (or, in differenced reports,
/// the signed difference of two comparisons).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergences {
    pub kl: f64,
    pub js: f64,
    pub emd: f64,
    pub tv: f64,
    pub hellinger: f64,
}

impl Divergences {
    /// Look up one metric's value.
    pub fn get(&self, metric: DivergenceMetric) -> f64 {
        match metric {
            DivergenceMetric::Kl => self.kl,
            DivergenceMetric::Js => self.js,
            DivergenceMetric::Emd => self.emd,
            DivergenceMetric::Tv => self.tv,
            DivergenceMetric::Hellinger => self.hellinger,
        }
    }

    /// Component-wise difference `self − other` (used by differenced
    /// reports; entries may be negative).
    pub fn minus(&self, other: &Divergences) -> Divergences {
        Divergences {
            kl: self.kl - other.kl,
            js: self.js - other.js,
            emd: self.emd - other.emd,
            tv: self.tv - other.tv,
            hellinger: self.hellinger - other.hellinger,
        }
    }
}

/// Compute all five metrics between two histograms on identical edges.
pub fn divergences(p: &Histogram, q: &Histogram) -> Result<Divergences, HistError> {
    if p.edges() != q.edges() {
        return Err(HistError::MismatchedEdges);
    }
    let pp = p.probabilities();
    let qq = q.probabilities();
    let edges = p.edges();

    // KL with additive smoothing on both sides, renormalized.
    let bins = pp.len() as f64;
    let norm = 1.0 + bins * KL_EPSILON;
    let mut kl = 0.0;
    for (&pi, &qi) in pp.iter().zip(&qq) {
        let ps = (pi + KL_EPSILON) / norm;
        let qs = (qi + KL_EPSILON) / norm;
        kl += ps * (ps / qs).ln();
    }
    kl = kl.max(0.0);

    // JS on the unsmoothed probabilities; 0·ln(0/m) terms vanish.
    let mut js = 0.0;
    for (&pi, &qi) in pp.iter().zip(&qq) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            js += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            js += 0.5 * qi * (qi / m).ln();
        }
    }

    let tv = 0.5 * pp.iter().zip(&qq).map(|(p, q)| (p - q).abs()).sum::<f64>();

    let hellinger = (0.5
        * pp.iter()
            .zip(&qq)
            .map(|(p, q)| (p.sqrt() - q.sqrt()).powi(2))
            .sum::<f64>())
    .sqrt();

    let mut emd = 0.0;
    let mut cp = 0.0;
    let mut cq = 0.0;
    for (i, (&pi, &qi)) in pp.iter().zip(&qq).enumerate() {
        cp += pi;
        cq += qi;
        emd += (cp - cq).abs() * (edges[i + 1] - edges[i]);
    }

    Ok(Divergences {
        kl,
        js,
        emd,
        tv,
        hellinger,
    })
}
