//! Named parameter store with the crate's standard initializers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::tape::{Tape, Var};

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }
}

/// Ordered map of named parameters.
///
/// A `BTreeMap` keeps iteration order stable, which makes optimizer sweeps
/// and checkpoints deterministic for a given parameter set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    params: BTreeMap<String, Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param<S>) {
        self.params.insert(name.into(), param);
    }

    pub fn get(&self, name: &str) -> Option<&Param<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<S>> {
        self.params.remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<S>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Total scalar count across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Put a parameter on a tape as a leaf (copies the data).
    pub fn leaf(&self, tape: &mut Tape<S>, name: &str) -> Var {
        let p = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        tape.leaf(p.rows, p.cols, p.data.clone())
    }

    /// Convert every parameter between float widths (f32 checkpoints loaded
    /// into f64 gradient-check models and vice versa).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, p) in &self.params {
            out.insert(
                name.clone(),
                Param {
                    rows: p.rows,
                    cols: p.cols,
                    data: p.data.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
                },
            );
        }
        out
    }
}

/// Xavier-uniform matrix: U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))).
pub fn xavier_uniform<S: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Param<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Param { rows, cols, data }
}

/// Gaussian N(0, std²) matrix (embedding tables use std = 0.02).
pub fn normal<S: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Param<S> {
    let data = (0..rows * cols)
        .map(|_| S::from_f64(std * standard_normal(rng)))
        .collect();
    Param { rows, cols, data }
}

/// Box-Muller standard normal draw.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen::<f64>();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}
