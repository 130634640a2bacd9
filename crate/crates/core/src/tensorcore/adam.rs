//! Adam with bias correction.
//!
//! Reference: Kingma & Ba, "Adam: A Method for Stochastic Optimization"
//! (2015). Moments are kept per parameter name; the state is checkpointable
//! so training can resume exactly.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::scalar::Scalar;
use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState<S> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<S>>,
    pub v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new() -> Self {
        OptimizerState {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update, in place.
///
/// `grads` maps parameter names to gradient buffers; parameters without an
/// entry are left untouched (their moments do not decay either — the sweep is
/// over provided gradients). A non-finite gradient aborts before any
/// parameter is modified.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &BTreeMap<String, Vec<S>>,
    state: &mut OptimizerState<S>,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    assert!(cfg.lr > 0.0, "learning rate must be positive");
    for (name, g) in grads {
        let p = params
            .get(name)
            .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
        assert_eq!(
            g.len(),
            p.data.len(),
            "gradient length mismatch for `{name}`"
        );
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFiniteGradient { name: name.clone() });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one_minus_b1 = S::from_f64(1.0 - cfg.beta1);
    let one_minus_b2 = S::from_f64(1.0 - cfg.beta2);
    let eps = S::from_f64(cfg.eps);
    // lr_t = lr · √(1−β2ᵗ) / (1−β1ᵗ) folds both bias corrections into the rate.
    let lr_t = S::from_f64(
        cfg.lr * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t)),
    );

    for (name, g) in grads {
        let p = params.get_mut(name).expect("validated above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![S::ZERO; g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![S::ZERO; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + one_minus_b1 * g[i];
            v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
            p.data[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
        }
    }
    Ok(())
}
