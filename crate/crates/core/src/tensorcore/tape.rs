//! Reverse-mode autodiff over 2-D dense tensors.
//!
//! A [`Tape`] owns every tensor created during one forward pass. Operations
//! execute eagerly and append a node recording their inputs; [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because an op can only consume already-existing nodes. Tapes are
//! built per training step and dropped after the gradients are read — there
//! are no higher-order derivatives.
//!
//! Shapes are `(rows, cols)`; scalars are `(1, 1)`. Binary ops verify shapes
//! and report both sides on mismatch.

use rand::Rng;

use super::scalar::Scalar;
use super::TensorError;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn rows(self) -> usize {
        self.rows
    }

    pub fn cols(self) -> usize {
        self.cols
    }

    pub fn shape(self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_scalar(self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

enum Op<S> {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    Mul { a: usize, b: usize },
    MulRow { a: usize, row: usize },
    Scale { a: usize, k: S },
    Softmax { a: usize },
    LayerNorm { a: usize, inv_std: Vec<S> },
    Gelu { a: usize },
    Gather { a: usize, ids: Vec<usize> },
    MeanRows { a: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    SliceCols { a: usize, start: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    Dropout { a: usize, mask: Vec<S> },
    MseLoss { a: usize, target: Vec<S> },
    BceLoss { a: usize, target: Vec<S> },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    value: Vec<S>,
    grad: Vec<S>,
    op: Op<S>,
}

/// Computation tape: tensor storage plus the recorded op graph.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<S>, op: Op<S>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        let grad = vec![S::ZERO; value.len()];
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad,
            op,
        });
        Var { id, rows, cols }
    }

    /// Create an input tensor. Leaves are both parameters and constants; the
    /// caller decides which gradients it reads back.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<S>) -> Var {
        assert_eq!(
            data.len(),
            rows * cols,
            "leaf data length {} does not match shape ({rows}, {cols})",
            data.len()
        );
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Scalar leaf.
    pub fn scalar(&mut self, v: S) -> Var {
        self.push(1, 1, vec![v], Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.id].value
    }

    pub fn grad(&self, v: Var) -> &[S] {
        &self.nodes[v.id].grad
    }

    pub fn value_scalar(&self, v: Var) -> S {
        debug_assert!(v.is_scalar());
        self.nodes[v.id].value[0]
    }

    fn check_same_shape(
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(), TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(())
    }

    /// `a (r×k) × b (k×c)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if a.cols != b.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (r, k, c) = (a.rows, a.cols, b.cols);
        let mut value = vec![S::ZERO; r * c];
        {
            let av = &self.nodes[a.id].value;
            let bv = &self.nodes[b.id].value;
            for i in 0..r {
                for l in 0..k {
                    let x = av[i * k + l];
                    if x == S::ZERO {
                        continue;
                    }
                    let brow = &bv[l * c..(l + 1) * c];
                    let vrow = &mut value[i * c..(i + 1) * c];
                    for (vj, bj) in vrow.iter_mut().zip(brow) {
                        *vj += x * *bj;
                    }
                }
            }
        }
        Ok(self.push(r, c, value, Op::MatMul { a: a.id, b: b.id }))
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        Self::check_same_shape("add", a, b)?;
        let value = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(a.rows, a.cols, value, Op::Add { a: a.id, b: b.id }))
    }

    /// Add a `(1×c)` row vector to every row of `a (r×c)`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: a.shape(),
                rhs: row.shape(),
            });
        }
        let mut value = self.nodes[a.id].value.clone();
        let rv = &self.nodes[row.id].value;
        for chunk in value.chunks_mut(a.cols) {
            for (x, &b) in chunk.iter_mut().zip(rv) {
                *x += b;
            }
        }
        Ok(self.push(a.rows, a.cols, value, Op::AddRow { a: a.id, row: row.id }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        Self::check_same_shape("mul", a, b)?;
        let value = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(a.rows, a.cols, value, Op::Mul { a: a.id, b: b.id }))
    }

    /// Multiply every row of `a (r×c)` elementwise by a `(1×c)` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row",
                lhs: a.shape(),
                rhs: row.shape(),
            });
        }
        let mut value = self.nodes[a.id].value.clone();
        let rv = &self.nodes[row.id].value;
        for chunk in value.chunks_mut(a.cols) {
            for (x, &b) in chunk.iter_mut().zip(rv) {
                *x *= b;
            }
        }
        Ok(self.push(a.rows, a.cols, value, Op::MulRow { a: a.id, row: row.id }))
    }

    /// Multiply by a compile-time-known constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let k = S::from_f64(k);
        let value = self.nodes[a.id].value.iter().map(|&x| x * k).collect();
        self.push(a.rows, a.cols, value, Op::Scale { a: a.id, k })
    }

    /// Row-wise softmax (numerically stabilized by the row max).
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = a.shape();
        let mut value = vec![S::ZERO; r * c];
        {
            let av = &self.nodes[a.id].value;
            for i in 0..r {
                let row = &av[i * c..(i + 1) * c];
                let mut mx = row[0];
                for &x in row {
                    mx = mx.max(x);
                }
                let mut sum = S::ZERO;
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - mx).exp();
                    value[i * c + j] = e;
                    sum += e;
                }
                for v in &mut value[i * c..(i + 1) * c] {
                    *v /= sum;
                }
            }
        }
        self.push(r, c, value, Op::Softmax { a: a.id })
    }

    /// Row-wise layer normalization without affine parameters.
    ///
    /// A zero-variance row normalizes to zeros: ε sits inside the square
    /// root, so `(x − μ) = 0` divides by √ε rather than 0.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (r, c) = a.shape();
        let nf = S::from_f64(c as f64);
        let eps = S::from_f64(LAYER_NORM_EPS);
        let mut value = vec![S::ZERO; r * c];
        let mut inv_std = vec![S::ZERO; r];
        {
            let av = &self.nodes[a.id].value;
            for i in 0..r {
                let row = &av[i * c..(i + 1) * c];
                let mean = row.iter().copied().sum::<S>() / nf;
                let var = row
                    .iter()
                    .map(|&x| (x - mean) * (x - mean))
                    .sum::<S>()
                    / nf;
                let inv = S::ONE / (var + eps).sqrt();
                inv_std[i] = inv;
                for (j, &x) in row.iter().enumerate() {
                    value[i * c + j] = (x - mean) * inv;
                }
            }
        }
        self.push(r, c, value, Op::LayerNorm { a: a.id, inv_std })
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.id]
            .value
            .iter()
            .map(|&x| gelu_forward(x))
            .collect();
        self.push(a.rows, a.cols, value, Op::Gelu { a: a.id })
    }

    /// Rows of an embedding table selected by index; duplicate ids accumulate
    /// gradient into the same row.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.gather_rows(table, ids)
    }

    /// Select `ids` rows of `a` into a new `(ids.len() × cols)` tensor.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let c = a.cols;
        let mut value = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= a.rows {
                return Err(TensorError::RowOutOfRange {
                    op: "gather_rows",
                    index: i,
                    rows: a.rows,
                });
            }
            value.extend_from_slice(&self.nodes[a.id].value[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            ids.len(),
            c,
            value,
            Op::Gather {
                a: a.id,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Column-wise mean over rows: `(r×c) → (1×c)`.
    pub fn mean_over_rows(&mut self, a: Var) -> Var {
        let (r, c) = a.shape();
        let rf = S::from_f64(r as f64);
        let mut value = vec![S::ZERO; c];
        for chunk in self.nodes[a.id].value.chunks(c) {
            for (v, &x) in value.iter_mut().zip(chunk) {
                *v += x;
            }
        }
        for v in &mut value {
            *v /= rf;
        }
        self.push(1, c, value, Op::MeanRows { a: a.id })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = a.shape();
        let mut value = vec![S::ZERO; r * c];
        {
            let av = &self.nodes[a.id].value;
            for i in 0..r {
                for j in 0..c {
                    value[j * r + i] = av[i * c + j];
                }
            }
        }
        self.push(c, r, value, Op::Transpose { a: a.id })
    }

    /// Reinterpret the row-major buffer under a new shape of equal size.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        if rows * cols != a.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: a.shape(),
                rhs: (rows, cols),
            });
        }
        let value = self.nodes[a.id].value.clone();
        Ok(self.push(rows, cols, value, Op::Reshape { a: a.id }))
    }

    /// Columns `start..start+len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        if start + len > a.cols || len == 0 {
            return Err(TensorError::ColOutOfRange {
                op: "slice_cols",
                start,
                end: start + len,
                cols: a.cols,
            });
        }
        let mut value = Vec::with_capacity(a.rows * len);
        for chunk in self.nodes[a.id].value.chunks(a.cols) {
            value.extend_from_slice(&chunk[start..start + len]);
        }
        Ok(self.push(a.rows, len, value, Op::SliceCols { a: a.id, start }))
    }

    /// Stack tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let c = first.cols;
        let mut rows = 0;
        let mut value = Vec::new();
        for p in parts {
            if p.cols != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape(),
                    rhs: p.shape(),
                });
            }
            rows += p.rows;
            value.extend_from_slice(&self.nodes[p.id].value);
        }
        Ok(self.push(
            rows,
            c,
            value,
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
            },
        ))
    }

    /// Concatenate tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let r = first.rows;
        let total: usize = parts.iter().map(|p| p.cols).sum();
        for p in parts {
            if p.rows != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape(),
                    rhs: p.shape(),
                });
            }
        }
        let mut value = vec![S::ZERO; r * total];
        let mut offset = 0;
        for p in parts {
            let pv = &self.nodes[p.id].value;
            for i in 0..r {
                value[i * total + offset..i * total + offset + p.cols]
                    .copy_from_slice(&pv[i * p.cols..(i + 1) * p.cols]);
            }
            offset += p.cols;
        }
        Ok(self.push(
            r,
            total,
            value,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
        ))
    }

    /// Inverted dropout: each element is zeroed with probability `rate`,
    /// survivors are scaled by `1/(1-rate)`. Call only during training.
    pub fn dropout<R: Rng>(
        &mut self,
        a: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadDropoutRate(rate));
        }
        let keep = S::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..a.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    S::ZERO
                } else {
                    keep
                }
            })
            .collect();
        let value = self.nodes[a.id]
            .value
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        Ok(self.push(a.rows, a.cols, value, Op::Dropout { a: a.id, mask }))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse_loss(&mut self, pred: Var, target: &[S]) -> Result<Var, TensorError> {
        if target.len() != pred.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                lhs: pred.shape(),
                rhs: (target.len(), 1),
            });
        }
        let nf = S::from_f64(pred.len() as f64);
        let loss = self.nodes[pred.id]
            .value
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<S>()
            / nf;
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::MseLoss {
                a: pred.id,
                target: target.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy on logits against constant 0/1 targets,
    /// computed in the standard stable form; scalar output. Finite for any
    /// representable logit.
    pub fn bce_with_logits_loss(&mut self, pred: Var, target: &[S]) -> Result<Var, TensorError> {
        if target.len() != pred.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits_loss",
                lhs: pred.shape(),
                rhs: (target.len(), 1),
            });
        }
        let nf = S::from_f64(pred.len() as f64);
        let loss = self.nodes[pred.id]
            .value
            .iter()
            .zip(target)
            .map(|(&x, &t)| {
                // max(x,0) − x·t + ln(1 + exp(−|x|))
                x.max(S::ZERO) - x * t + (S::ONE + (-x.abs()).exp()).ln()
            })
            .sum::<S>()
            / nf;
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::BceLoss {
                a: pred.id,
                target: target.to_vec(),
            },
        ))
    }

    /// Populate gradients of everything `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if loss.id >= self.nodes.len() {
            return Err(TensorError::DetachedNode {
                id: loss.id,
                len: self.nodes.len(),
            });
        }
        if !loss.is_scalar() {
            return Err(TensorError::NonScalarLoss { shape: loss.shape() });
        }
        self.nodes[loss.id].grad[0] = S::ONE;

        for id in (0..=loss.id).rev() {
            // Take the node's gradient out so we can borrow inputs mutably.
            let grad = std::mem::take(&mut self.nodes[id].grad);
            let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let k = self.nodes[a].cols;
                    // ga += g · bᵀ
                    {
                        let bv = std::mem::take(&mut self.nodes[b].value);
                        let ga = &mut self.nodes[a].grad;
                        for i in 0..rows {
                            for l in 0..k {
                                let mut acc = S::ZERO;
                                for j in 0..cols {
                                    acc += grad[i * cols + j] * bv[l * cols + j];
                                }
                                ga[i * k + l] += acc;
                            }
                        }
                        self.nodes[b].value = bv;
                    }
                    // gb += aᵀ · g
                    {
                        let av = std::mem::take(&mut self.nodes[a].value);
                        let gb = &mut self.nodes[b].grad;
                        for l in 0..k {
                            for i in 0..rows {
                                let x = av[i * k + l];
                                if x == S::ZERO {
                                    continue;
                                }
                                for j in 0..cols {
                                    gb[l * cols + j] += x * grad[i * cols + j];
                                }
                            }
                        }
                        self.nodes[a].value = av;
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    for (g, &d) in self.nodes[b].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (*a, *row);
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    let grow = &mut self.nodes[row].grad;
                    for chunk in grad.chunks(cols) {
                        for (g, &d) in grow.iter_mut().zip(chunk) {
                            *g += d;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    {
                        let bv = std::mem::take(&mut self.nodes[b].value);
                        for ((g, &d), &y) in
                            self.nodes[a].grad.iter_mut().zip(&grad).zip(&bv)
                        {
                            *g += d * y;
                        }
                        self.nodes[b].value = bv;
                    }
                    {
                        let av = std::mem::take(&mut self.nodes[a].value);
                        for ((g, &d), &x) in
                            self.nodes[b].grad.iter_mut().zip(&grad).zip(&av)
                        {
                            *g += d * x;
                        }
                        self.nodes[a].value = av;
                    }
                }
                Op::MulRow { a, row } => {
                    let (a, row) = (*a, *row);
                    {
                        let rv = std::mem::take(&mut self.nodes[row].value);
                        let ga = &mut self.nodes[a].grad;
                        for (chunk, gchunk) in
                            grad.chunks(cols).zip(ga.chunks_mut(cols))
                        {
                            for ((g, &d), &b) in gchunk.iter_mut().zip(chunk).zip(&rv) {
                                *g += d * b;
                            }
                        }
                        self.nodes[row].value = rv;
                    }
                    {
                        let av = std::mem::take(&mut self.nodes[a].value);
                        let grow = &mut self.nodes[row].grad;
                        for (chunk, achunk) in grad.chunks(cols).zip(av.chunks(cols)) {
                            for ((g, &d), &x) in grow.iter_mut().zip(chunk).zip(achunk) {
                                *g += d * x;
                            }
                        }
                        self.nodes[a].value = av;
                    }
                }
                Op::Scale { a, k } => {
                    let (a, k) = (*a, *k);
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d * k;
                    }
                }
                Op::Softmax { a } => {
                    let a = *a;
                    let yv = std::mem::take(&mut self.nodes[id].value);
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..rows {
                        let y = &yv[i * cols..(i + 1) * cols];
                        let g = &grad[i * cols..(i + 1) * cols];
                        let dot = y
                            .iter()
                            .zip(g)
                            .map(|(&yj, &gj)| yj * gj)
                            .sum::<S>();
                        for j in 0..cols {
                            ga[i * cols + j] += y[j] * (g[j] - dot);
                        }
                    }
                    self.nodes[id].value = yv;
                }
                Op::LayerNorm { a, inv_std } => {
                    let a = *a;
                    let inv_std = inv_std.clone();
                    let nf = S::from_f64(cols as f64);
                    let yv = std::mem::take(&mut self.nodes[id].value);
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..rows {
                        let y = &yv[i * cols..(i + 1) * cols];
                        let g = &grad[i * cols..(i + 1) * cols];
                        let mean_g = g.iter().copied().sum::<S>() / nf;
                        let mean_gy = g
                            .iter()
                            .zip(y)
                            .map(|(&gj, &yj)| gj * yj)
                            .sum::<S>()
                            / nf;
                        for j in 0..cols {
                            ga[i * cols + j] +=
                                inv_std[i] * (g[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                    self.nodes[id].value = yv;
                }
                Op::Gelu { a } => {
                    let a = *a;
                    let av = std::mem::take(&mut self.nodes[a].value);
                    {
                        let ga = &mut self.nodes[a].grad;
                        for ((g, &d), &x) in ga.iter_mut().zip(&grad).zip(&av) {
                            *g += d * gelu_derivative(x);
                        }
                    }
                    self.nodes[a].value = av;
                }
                Op::Gather { a, ids } => {
                    let a = *a;
                    let ids = ids.clone();
                    let ga = &mut self.nodes[a].grad;
                    for (out_row, &src) in ids.iter().enumerate() {
                        for j in 0..cols {
                            ga[src * cols + j] += grad[out_row * cols + j];
                        }
                    }
                }
                Op::MeanRows { a } => {
                    let a = *a;
                    let r_in = self.nodes[a].rows;
                    let rf = S::from_f64(r_in as f64);
                    let ga = &mut self.nodes[a].grad;
                    for chunk in ga.chunks_mut(cols) {
                        for (g, &d) in chunk.iter_mut().zip(&grad) {
                            *g += d / rf;
                        }
                    }
                }
                Op::Transpose { a } => {
                    let a = *a;
                    let ga = &mut self.nodes[a].grad;
                    // output is (rows=c_in, cols=r_in)
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += grad[i * cols + j];
                        }
                    }
                }
                Op::Reshape { a } => {
                    let a = *a;
                    for (g, &d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                Op::SliceCols { a, start } => {
                    let (a, start) = (*a, *start);
                    let c_in = self.nodes[a].cols;
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * c_in + start + j] += grad[i * cols + j];
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].grad.len();
                        for (g, &d) in self.nodes[p]
                            .grad
                            .iter_mut()
                            .zip(&grad[offset..offset + len])
                        {
                            *g += d;
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p].cols;
                        let ga = &mut self.nodes[p].grad;
                        for i in 0..rows {
                            for j in 0..pc {
                                ga[i * pc + j] += grad[i * cols + offset + j];
                            }
                        }
                        offset += pc;
                    }
                }
                Op::Dropout { a, mask } => {
                    let a = *a;
                    let mask = mask.clone();
                    for ((g, &d), &m) in
                        self.nodes[a].grad.iter_mut().zip(&grad).zip(&mask)
                    {
                        *g += d * m;
                    }
                }
                Op::MseLoss { a, target } => {
                    let a = *a;
                    let target = target.clone();
                    let d = grad[0];
                    let nf = S::from_f64(self.nodes[a].value.len() as f64);
                    let two = S::from_f64(2.0);
                    let av = std::mem::take(&mut self.nodes[a].value);
                    {
                        let ga = &mut self.nodes[a].grad;
                        for ((g, &p), &t) in ga.iter_mut().zip(&av).zip(&target) {
                            *g += d * two * (p - t) / nf;
                        }
                    }
                    self.nodes[a].value = av;
                }
                Op::BceLoss { a, target } => {
                    let a = *a;
                    let target = target.clone();
                    let d = grad[0];
                    let nf = S::from_f64(self.nodes[a].value.len() as f64);
                    let av = std::mem::take(&mut self.nodes[a].value);
                    {
                        let ga = &mut self.nodes[a].grad;
                        for ((g, &x), &t) in ga.iter_mut().zip(&av).zip(&target) {
                            *g += d * (sigmoid(x) - t) / nf;
                        }
                    }
                    self.nodes[a].value = av;
                }
            }
            self.nodes[id].grad = grad;
        }
        Ok(())
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

// 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
fn gelu_forward<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4); // √(2/π)
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (S::ONE + u.tanh())
}

fn gelu_derivative<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4);
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = S::ONE - t * t;
    half * (S::ONE + t) + half * x * sech2 * c * (S::ONE + three * k * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Central finite difference of `f` at `inputs`, matched against the
    /// tape's analytic gradient. `f` rebuilds the graph from leaf data.
    fn grad_check<F>(inputs: &[Vec<f64>], shapes: &[(usize, usize)], f: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let h = 1e-5;
        let build = |data: &[Vec<f64>]| -> (Tape<f64>, Vec<Var>, Var) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = data
                .iter()
                .zip(shapes)
                .map(|(d, &(r, c))| tape.leaf(r, c, d.clone()))
                .collect();
            let loss = f(&mut tape, &vars);
            (tape, vars, loss)
        };

        let (mut tape, vars, loss) = build(inputs);
        assert!(loss.is_scalar(), "grad_check needs a scalar loss");
        tape.backward(loss).unwrap();
        let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

        for (vi, input) in inputs.iter().enumerate() {
            for ei in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[vi][ei] += h;
                let (t, _, l) = build(&plus);
                let lp = t.value_scalar(l);
                let mut minus = inputs.to_vec();
                minus[vi][ei] -= h;
                let (t, _, l) = build(&minus);
                let lm = t.value_scalar(l);
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic[vi][ei];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((a - numeric) / denom).abs() < 1e-4,
                    "input {vi} element {ei}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    fn seeded_data(shapes: &[(usize, usize)], seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        shapes
            .iter()
            .map(|&(r, c)| (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect()
    }

    #[test]
    fn softmax_of_uniform_row_is_uniform() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(1, 3, vec![0.0, 0.0, 0.0]);
        let y = tape.softmax(x);
        for &v in tape.value(y) {
            assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(2, 4, vec![10.0, -3.0, 0.5, 2.0, -50.0, 49.0, 0.0, 1.0]);
        let y = tape.softmax(x);
        for row in tape.value(y).chunks(4) {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape: Tape<f64> = Tape::new();
        let eye = tape.leaf(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = tape.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(1, 4, vec![7.0, 7.0, 7.0, 7.0]);
        let y = tape.layer_norm(x);
        for &v in tape.value(y) {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn scalar_product_rule() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.scalar(3.0);
        let y = tape.scalar(5.0);
        let p = tape.mul(x, y).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(x), &[5.0]);
        assert_eq!(tape.grad(y), &[3.0]);
    }

    #[test]
    fn mse_at_minimum_has_zero_grad() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(2, 1, vec![1.5, -2.0]);
        let loss = tape.mse_loss(x, &[1.5, -2.0]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.value_scalar(loss), 0.0);
        assert_eq!(tape.grad(x), &[0.0, 0.0]);
    }

    #[test]
    fn bce_is_finite_for_extreme_logits() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(4, 1, vec![-50.0, 50.0, -49.9, 49.9]);
        let loss = tape.bce_with_logits_loss(x, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(tape.value_scalar(loss).is_finite());
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(2, 3, vec![0.0; 6]);
        let b = tape.leaf(2, 3, vec![0.0; 6]);
        match tape.matmul(a, b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (2, 3));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(2, 2, vec![1.0; 4]);
        assert!(matches!(
            tape.backward(a),
            Err(TensorError::NonScalarLoss { shape: (2, 2) })
        ));
    }

    #[test]
    fn gradcheck_matmul_add_row() {
        let shapes = [(3, 4), (4, 2), (1, 2)];
        let data = seeded_data(&shapes, 1);
        grad_check(&data, &shapes, |tape, v| {
            let y = tape.matmul(v[0], v[1]).unwrap();
            let y = tape.add_row(y, v[2]).unwrap();
            tape.mse_loss(y, &vec![0.3; 6]).unwrap()
        });
    }

    #[test]
    fn gradcheck_softmax() {
        let shapes = [(2, 5)];
        let data = seeded_data(&shapes, 2);
        grad_check(&data, &shapes, |tape, v| {
            let y = tape.softmax(v[0]);
            tape.mse_loss(y, &vec![0.1; 10]).unwrap()
        });
    }

    #[test]
    fn gradcheck_layer_norm_affine() {
        let shapes = [(3, 6), (1, 6), (1, 6)];
        let data = seeded_data(&shapes, 3);
        grad_check(&data, &shapes, |tape, v| {
            let y = tape.layer_norm(v[0]);
            let y = tape.mul_row(y, v[1]).unwrap();
            let y = tape.add_row(y, v[2]).unwrap();
            tape.mse_loss(y, &vec![-0.2; 18]).unwrap()
        });
    }

    #[test]
    fn gradcheck_gelu() {
        let shapes = [(2, 7)];
        let data = seeded_data(&shapes, 4);
        grad_check(&data, &shapes, |tape, v| {
            let y = tape.gelu(v[0]);
            tape.mse_loss(y, &vec![0.0; 14]).unwrap()
        });
    }

    #[test]
    fn gradcheck_gather_shared_rows() {
        let shapes = [(4, 3)];
        let data = seeded_data(&shapes, 5);
        grad_check(&data, &shapes, |tape, v| {
            // row 2 used twice: gradient must accumulate
            let y = tape.gather_rows(v[0], &[2, 0, 2, 3]).unwrap();
            tape.mse_loss(y, &vec![0.5; 12]).unwrap()
        });
    }

    #[test]
    fn gradcheck_mean_transpose_reshape_slice_concat() {
        let shapes = [(3, 4), (3, 2)];
        let data = seeded_data(&shapes, 6);
        grad_check(&data, &shapes, |tape, v| {
            let t = tape.transpose(v[0]); // (4,3)
            let r = tape.reshape(t, 3, 4).unwrap();
            let s = tape.slice_cols(r, 1, 2).unwrap(); // (3,2)
            let c = tape.concat_cols(&[s, v[1]]).unwrap(); // (3,4)
            let st = tape.concat_rows(&[c, v[0]]).unwrap(); // (6,4)
            let m = tape.mean_over_rows(st); // (1,4)
            tape.mse_loss(m, &vec![0.25; 4]).unwrap()
        });
    }

    #[test]
    fn gradcheck_mul_scale_softmax_chain() {
        let shapes = [(2, 3), (2, 3)];
        let data = seeded_data(&shapes, 7);
        grad_check(&data, &shapes, |tape, v| {
            let m = tape.mul(v[0], v[1]).unwrap();
            let s = tape.scale(m, 1.7);
            let y = tape.softmax(s);
            tape.mse_loss(y, &vec![0.33; 6]).unwrap()
        });
    }

    #[test]
    fn gradcheck_bce() {
        let shapes = [(5, 1)];
        let data = seeded_data(&shapes, 8);
        grad_check(&data, &shapes, |tape, v| {
            tape.bce_with_logits_loss(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0])
                .unwrap()
        });
    }

    #[test]
    fn dropout_scales_survivors_and_masks_gradient() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(1, 1000, vec![1.0; 1000]);
        let y = tape.dropout(x, 0.25, &mut rng).unwrap();
        let kept = tape.value(y).iter().filter(|&&v| v != 0.0).count();
        assert!((650..=850).contains(&kept), "kept {kept} of 1000 at rate 0.25");
        for &v in tape.value(y) {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
        }
        let loss = tape.mse_loss(y, &vec![0.0; 1000]).unwrap();
        tape.backward(loss).unwrap();
        for (g, v) in tape.grad(x).iter().zip(tape.value(y)) {
            assert_eq!(*v == 0.0, *g == 0.0);
        }
        assert!(matches!(
            {
                let mut t: Tape<f64> = Tape::new();
                let a = t.scalar(1.0);
                t.dropout(a, 1.0, &mut rng)
            },
            Err(TensorError::BadDropoutRate(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let shapes = [(4, 4), (4, 4)];
        let data = seeded_data(&shapes, 9);
        let run = || {
            let mut tape: Tape<f32> = Tape::new();
            let a = tape.leaf(4, 4, data[0].iter().map(|&x| x as f32).collect());
            let b = tape.leaf(4, 4, data[1].iter().map(|&x| x as f32).collect());
            let m = tape.matmul(a, b).unwrap();
            let n = tape.layer_norm(m);
            let g = tape.gelu(n);
            let s = tape.softmax(g);
            tape.value(s).to_vec()
        };
        assert_eq!(run(), run());
    }
}
