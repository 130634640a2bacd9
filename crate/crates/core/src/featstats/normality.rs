//! Per-dimension normality testing: Shapiro-Wilk and Kolmogorov-Smirnov.
//!
//! Shapiro-Wilk follows Royston's 1995 approximation (the AS R94 algorithm):
//! expected normal order statistics via the inverse normal CDF, polynomial
//! corrections to the top two weights, and a three-regime p-value transform.
//! The approximation is specified for 3 ≤ n ≤ 5000; larger samples go
//! through a seeded uniform subsample (see [`shapiro_wilk_subsampled`]).
//!
//! The KS test here is one-sample against a normal whose parameters are
//! estimated from the sample itself (z-scoring), with the asymptotic
//! Kolmogorov p-value. Estimating the parameters from the data makes that
//! p-value anti-conservative (the Lilliefors effect); results carry an
//! `estimated_params` flag so reports can surface the caveat instead of
//! silently overstating significance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::featmat::FeatureMatrix;

/// Largest sample Shapiro-Wilk accepts directly.
pub const SHAPIRO_MAX_N: usize = 5000;
/// Smallest sample Shapiro-Wilk accepts.
pub const SHAPIRO_MIN_N: usize = 3;
/// Smallest sample the KS-vs-normal test accepts.
pub const KS_MIN_N: usize = 8;

/// Errors from the normality tests.
#[derive(Debug, Error)]
pub enum NormalityError {
    #[error("sample of {n} is too small (minimum {min})")]
    TooFew { n: usize, min: usize },
    #[error("sample of {n} is too large (maximum {max}); subsample first")]
    TooLarge { n: usize, max: usize },
    #[error("degenerate sample: zero variance")]
    ZeroVariance,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// Complementary error function (Chebyshev fit; fractional error < 1.2e-7
/// everywhere, which is far inside every tolerance used downstream).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9). Requires `0 < p < 1`.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Survival function of the asymptotic Kolmogorov distribution,
/// `Q(t) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²t²)`, evaluated through the
/// theta-function transform for small `t` where the plain series converges
/// slowly.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let sf = if t < 1.18 {
        let q = (-std::f64::consts::PI.powi(2) / (8.0 * t * t)).exp();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / t
            * (q + q.powi(9) + q.powi(25) + q.powi(49))
    } else {
        let x = (-2.0 * t * t).exp();
        2.0 * (x - x.powi(4) + x.powi(9) - x.powi(16) + x.powi(25))
    };
    sf.clamp(0.0, 1.0)
}

/// Shapiro-Wilk test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwResult {
    /// W statistic, in `(0, 1]`.
    pub w: f64,
    /// Probability of a W at least this small under the normal null.
    pub p: f64,
}

/// Shapiro-Wilk W test for normality, for `3 ≤ n ≤ 5000`.
pub fn shapiro_wilk(sample: &[f64]) -> Result<SwResult, NormalityError> {
    let n = sample.len();
    if n < SHAPIRO_MIN_N {
        return Err(NormalityError::TooFew {
            n,
            min: SHAPIRO_MIN_N,
        });
    }
    if n > SHAPIRO_MAX_N {
        return Err(NormalityError::TooLarge {
            n,
            max: SHAPIRO_MAX_N,
        });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(NormalityError::NonFinite);
    }
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if x[n - 1] <= x[0] {
        return Err(NormalityError::ZeroVariance);
    }

    // Expected normal order statistics (Blom scores) and the weight vector.
    let nf = n as f64;
    let m: Vec<f64> = (1..=n)
        .map(|i| normal_quantile((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -std::f64::consts::FRAC_1_SQRT_2;
        a[2] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let ssq: f64 = m.iter().map(|v| v * v).sum();
        let rsn = ssq.sqrt().recip();
        let u = nf.sqrt().recip();
        let a_n = m[n - 1] * rsn
            + u * (0.221157 + u * (-0.147981 + u * (-2.071190 + u * (4.434685 + u * -2.706056))));
        let (fixed, phi) = if n > 5 {
            let a_n1 = m[n - 2] * rsn
                + u * (0.042981
                    + u * (-0.293762 + u * (-1.752461 + u * (5.682633 + u * -3.582633))));
            let phi = (ssq - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
                / (1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1);
            a[n - 2] = a_n1;
            a[1] = -a_n1;
            (2, phi)
        } else {
            let phi = (ssq - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * a_n * a_n);
            (1, phi)
        };
        a[n - 1] = a_n;
        a[0] = -a_n;
        let scale = phi.sqrt().recip();
        for i in fixed..n - fixed {
            a[i] = m[i] * scale;
        }
    }

    let mean = x.iter().sum::<f64>() / nf;
    let sse: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let b: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
    let w = (b * b / sse).min(1.0);

    // p-value transforms, one per sample-size regime.
    let p = if n == 3 {
        let stqr = (0.75f64).sqrt().asin();
        ((6.0 / std::f64::consts::PI) * (w.sqrt().asin() - stqr)).clamp(0.0, 1.0)
    } else if 1.0 - w <= 0.0 {
        1.0
    } else if n <= 11 {
        let g = -2.273 + 0.459 * nf;
        let mu = 0.5440 + nf * (-0.39978 + nf * (0.025054 + nf * -0.0006714));
        let sigma = (1.3822 + nf * (-0.77857 + nf * (0.062767 + nf * -0.0020322))).exp();
        let arg = g - (1.0 - w).ln();
        if arg <= 0.0 {
            0.0
        } else {
            let z = (-arg.ln() - mu) / sigma;
            (1.0 - normal_cdf(z)).clamp(0.0, 1.0)
        }
    } else {
        let ln_n = nf.ln();
        let mu = -1.5861 + ln_n * (-0.31082 + ln_n * (-0.083751 + ln_n * 0.0038915));
        let sigma = (-0.4803 + ln_n * (-0.082676 + ln_n * 0.0030302)).exp();
        let z = ((1.0 - w).ln() - mu) / sigma;
        (1.0 - normal_cdf(z)).clamp(0.0, 1.0)
    };
    Ok(SwResult { w, p })
}

/// Shapiro-Wilk on samples of any size: above 5000 observations a seeded
/// uniform subsample of 5000 is tested instead, keeping the approximation
/// inside its validity range while staying deterministic for a given seed.
pub fn shapiro_wilk_subsampled(sample: &[f64], seed: u64) -> Result<SwResult, NormalityError> {
    if sample.len() <= SHAPIRO_MAX_N {
        return shapiro_wilk(sample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, sample.len(), SHAPIRO_MAX_N);
    let sub: Vec<f64> = idx.into_iter().map(|i| sample[i]).collect();
    shapiro_wilk(&sub)
}

/// Kolmogorov-Smirnov test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// Sup-distance between the empirical CDF and the normal CDF.
    pub d: f64,
    /// Asymptotic Kolmogorov p-value for `√n · D`.
    pub p: f64,
    /// True when the reference normal's parameters were estimated from the
    /// sample itself, which biases `p` upward-significant (the Lilliefors
    /// effect); consumers should surface this caveat next to the p-value.
    pub estimated_params: bool,
}

/// Sup-distance between the empirical CDF of `sample` (taken as-is) and the
/// standard normal CDF.
pub fn ks_statistic(sample: &[f64]) -> Result<f64, NormalityError> {
    let n = sample.len();
    if n == 0 {
        return Err(NormalityError::TooFew { n, min: 1 });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(NormalityError::NonFinite);
    }
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let cdf = normal_cdf(v);
        d = d.max((i + 1) as f64 / nf - cdf).max(cdf - i as f64 / nf);
    }
    Ok(d)
}

/// One-sample KS test against a normal fitted to the sample: z-score by the
/// sample's own mean and (population) standard deviation, measure the
/// sup-distance to N(0,1), and attach the asymptotic Kolmogorov p-value.
pub fn ks_normal(sample: &[f64]) -> Result<KsResult, NormalityError> {
    let n = sample.len();
    if n < KS_MIN_N {
        return Err(NormalityError::TooFew { n, min: KS_MIN_N });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(NormalityError::NonFinite);
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(NormalityError::ZeroVariance);
    }
    let z: Vec<f64> = sample.iter().map(|v| (v - mean) / std).collect();
    let d = ks_statistic(&z)?;
    Ok(KsResult {
        d,
        p: kolmogorov_sf(nf.sqrt() * d),
        estimated_params: true,
    })
}

/// Normality results for one feature dimension. Zero-variance dimensions are
/// reported as degenerate (no statistics) rather than failing the report.
#[derive(Debug, Clone, Copy)]
pub struct DimNormality {
    pub dim: usize,
    pub shapiro: Option<SwResult>,
    pub ks: Option<KsResult>,
}

impl DimNormality {
    /// True when the dimension had zero variance and no test applied.
    pub fn degenerate(&self) -> bool {
        self.shapiro.is_none()
    }
}

/// Per-dimension normality tests plus the summary over Shapiro-Wilk
/// p-values.
#[derive(Debug, Clone)]
pub struct NormalityReport {
    pub dims: Vec<DimNormality>,
    /// `(mean, population std)` of the per-dimension Shapiro-Wilk p-values,
    /// or `None` when every dimension was degenerate.
    pub summary: Option<(f64, f64)>,
}

/// Run both normality tests on every column of a feature matrix. `seed`
/// drives the Shapiro-Wilk subsampling for columns longer than 5000 (each
/// dimension gets its own derived stream).
pub fn normality_report(
    matrix: &FeatureMatrix,
    seed: u64,
) -> Result<NormalityReport, NormalityError> {
    let n = matrix.rows();
    if n < KS_MIN_N {
        return Err(NormalityError::TooFew { n, min: KS_MIN_N });
    }
    let mut dims = Vec::with_capacity(matrix.cols());
    for dim in 0..matrix.cols() {
        let col = matrix.column(dim);
        let dim_seed = seed.wrapping_add((dim as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let shapiro = match shapiro_wilk_subsampled(&col, dim_seed) {
            Ok(r) => Some(r),
            Err(NormalityError::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        let ks = if shapiro.is_some() {
            match ks_normal(&col) {
                Ok(r) => Some(r),
                Err(NormalityError::ZeroVariance) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        dims.push(DimNormality { dim, shapiro, ks });
    }
    let report = NormalityReport {
        summary: None,
        dims,
    };
    let summary = normality_summary(&report);
    Ok(NormalityReport { summary, ..report })
}

/// Mean and population standard deviation of the per-dimension Shapiro-Wilk
/// p-values; `None` when no dimension produced one.
pub fn normality_summary(report: &NormalityReport) -> Option<(f64, f64)> {
    let ps: Vec<f64> = report
        .dims
        .iter()
        .filter_map(|d| d.shapiro.map(|s| s.p))
        .collect();
    if ps.is_empty() {
        return None;
    }
    let n = ps.len() as f64;
    let mean = ps.iter().sum::<f64>() / n;
    let var = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
