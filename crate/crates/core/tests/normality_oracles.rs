//! Cross-checks of the normality tests against a reference statistics
//! package (frozen fixtures) and against Monte-Carlo behavior under known
//! distributions.

use molshift_core::featstats::{ks_normal, shapiro_wilk, shapiro_wilk_subsampled};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    name: String,
    n: usize,
    sample: Vec<f64>,
    sw_w: f64,
    sw_p: f64,
    ks_d: f64,
    ks_p: f64,
}

fn fixtures() -> Vec<Fixture> {
    let text = include_str!("data/normality_fixtures.json");
    serde_json::from_str(&text).unwrap()
}

fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[test]
fn shapiro_wilk_matches_reference_package_on_twenty_fixed_samples() {
    let fixtures = fixtures();
    assert_eq!(fixtures.len(), 20);
    let mut max_dw: f64 = 0.0;
    let mut max_dp: f64 = 0.0;
    for fx in &fixtures {
        assert_eq!(fx.sample.len(), fx.n);
        let r = shapiro_wilk(&fx.sample).unwrap();
        let dw = (r.w - fx.sw_w).abs();
        let dp = (r.p - fx.sw_p).abs();
        assert!(
            dw < 1e-4,
            "{}: W {} vs reference {} (Δ {dw:.2e})",
            fx.name,
            r.w,
            fx.sw_w
        );
        assert!(
            dp < 1e-4,
            "{}: p {} vs reference {} (Δ {dp:.2e})",
            fx.name,
            r.p,
            fx.sw_p
        );
        max_dw = max_dw.max(dw);
        max_dp = max_dp.max(dp);
    }
    eprintln!("shapiro fixtures: max |ΔW| = {max_dw:.3e}, max |Δp| = {max_dp:.3e}");
}

#[test]
fn ks_normal_matches_reference_package_on_twenty_fixed_samples() {
    let mut max_dd: f64 = 0.0;
    let mut max_dp: f64 = 0.0;
    for fx in &fixtures() {
        let r = ks_normal(&fx.sample).unwrap();
        let dd = (r.d - fx.ks_d).abs();
        let dp = (r.p - fx.ks_p).abs();
        assert!(
            dd < 1e-6,
            "{}: D {} vs reference {} (Δ {dd:.2e})",
            fx.name,
            r.d,
            fx.ks_d
        );
        assert!(
            dp < 1e-5,
            "{}: p {} vs reference {} (Δ {dp:.2e})",
            fx.name,
            r.p,
            fx.ks_p
        );
        assert!(r.estimated_params, "{}: Lilliefors flag missing", fx.name);
        max_dd = max_dd.max(dd);
        max_dp = max_dp.max(dp);
    }
    eprintln!("ks fixtures: max |ΔD| = {max_dd:.3e}, max |Δp| = {max_dp:.3e}");
}

#[test]
fn shapiro_wilk_rejects_uniform_samples() {
    // 500 uniform draws look decisively non-normal.
    let mut rejected = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = shapiro_wilk(&sample).unwrap();
        if r.p < 0.01 {
            rejected += 1;
        }
    }
    assert!(rejected >= 95, "only {rejected}/100 uniform samples rejected");
}

#[test]
fn shapiro_wilk_is_calibrated_under_the_normal_null() {
    // Under the null, p < 0.05 should fire for about 5% of samples.
    let mut hits = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
        let sample: Vec<f64> = (0..200).map(|_| normal_draw(&mut rng)).collect();
        let r = shapiro_wilk(&sample).unwrap();
        if r.p < 0.05 {
            hits += 1;
        }
    }
    let rate = hits as f64 / 1000.0;
    assert!(
        (0.03..=0.07).contains(&rate),
        "null rejection rate {rate} outside [0.03, 0.07]"
    );
}

#[test]
fn ks_statistic_is_small_on_large_normal_samples() {
    let mut small = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77_000 + seed);
        let sample: Vec<f64> = (0..10_000).map(|_| normal_draw(&mut rng)).collect();
        let r = ks_normal(&sample).unwrap();
        if r.d < 0.02 {
            small += 1;
        }
    }
    assert!(small >= 95, "only {small}/100 normal samples had D < 0.02");
}

#[test]
fn oversized_samples_run_through_the_seeded_subsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample: Vec<f64> = (0..20_000).map(|_| normal_draw(&mut rng)).collect();
    assert!(shapiro_wilk(&sample).is_err());
    let a = shapiro_wilk_subsampled(&sample, 123).unwrap();
    let b = shapiro_wilk_subsampled(&sample, 123).unwrap();
    assert_eq!(a, b, "same seed must give the same subsample");
    // a normal population stays unrejected in the typical case
    assert!(a.p > 0.01, "p = {}", a.p);
}
