//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive executed during a forward pass; nodes
//! are 2-d blocks of doubles addressed by [`Var`] handles. [`Tape::backward`]
//! walks the record once in reverse execution order and accumulates exact
//! gradients for every node, including the grad-enabled leaves bound from
//! parameter tensors. Tapes are rebuilt per forward pass and confined to one
//! thread; parameters themselves are plain values and may be shared
//! read-only across threads.
//!
//! Every op validates shapes up front and checks its output for NaN/Inf, so
//! numerical corruption surfaces at the op that produced it.

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    node: usize,
}

enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    AddBiasRow { x: usize, bias: usize },
    Scale { x: usize, factor: f64 },
    MulMask { x: usize, mask: Vec<f64> },
    SoftmaxRows { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    Gelu { x: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    MeanRows { x: usize },
    Reshape { x: usize },
    Sum { x: usize },
    CrossEntropyMean { logits: usize, labels: Vec<usize> },
}

/// Recording of one forward pass.
pub struct Tape {
    id: u64,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Vec<f64>>,
    ops: Vec<Op>,
    grads: Vec<Vec<f64>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, vals: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, vals.len());
        self.rows.push(rows);
        self.cols.push(cols);
        self.vals.push(vals);
        self.ops.push(op);
        Var {
            tape: self.id,
            node: self.ops.len() - 1,
        }
    }

    fn push_checked(&mut self, rows: usize, cols: usize, vals: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: name.to_string(),
            });
        }
        Ok(self.push(rows, cols, vals, op))
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::Tape(format!(
                "value belongs to tape {} but was used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(v.node)
    }

    /// Dimensions of a node as (rows, cols).
    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.rows[v.node], self.cols[v.node])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[v.node]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(
            vec![self.rows[v.node], self.cols[v.node]],
            self.vals[v.node].clone(),
        )
        .expect("node dims are consistent")
    }

    /// Gradient of the last `backward` target w.r.t. node `v`.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        self.check(v)?;
        if !self.backward_done {
            return Err(Error::Tape("grad requested before backward".into()));
        }
        Ok(&self.grads[v.node])
    }

    /// Gradient reshaped to the given leaf shape.
    pub fn grad_tensor(&self, v: Var, shape: &[usize]) -> Result<Tensor> {
        let g = self.grad(v)?;
        Tensor::new(shape.to_vec(), g.to_vec())
    }

    // ------------------------------------------------------------------
    // Forward primitives
    // ------------------------------------------------------------------

    /// Bind a tensor as a leaf. Rank-1 tensors become a single row; higher
    /// ranks keep their trailing axis as columns.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        t.assert_finite("leaf")?;
        let (r, c) = t.as_2d();
        Ok(self.push(r, c, t.data().to_vec(), Op::Leaf))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let (m, k) = (self.rows[an], self.cols[an]);
        let (k2, n) = (self.rows[bn], self.cols[bn]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.vals[an];
            let bv = &self.vals[bn];
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
        }
        self.push_checked(m, n, out, Op::Matmul { a: an, b: bn }, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        let xv = &self.vals[xn];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        Ok(self.push(n, m, out, Op::Transpose { x: xn }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let (m, n) = (self.rows[an], self.cols[an]);
        if (m, n) != (self.rows[bn], self.cols[bn]) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: vec![m, n],
                rhs: vec![self.rows[bn], self.cols[bn]],
            });
        }
        let out: Vec<f64> = self.vals[an]
            .iter()
            .zip(&self.vals[bn])
            .map(|(x, y)| x + y)
            .collect();
        self.push_checked(m, n, out, Op::Add { a: an, b: bn }, "add")
    }

    /// Broadcast-add a `[1 x n]` bias row to every row of `x`.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xn, bn) = (self.check(x)?, self.check(bias)?);
        let (m, n) = (self.rows[xn], self.cols[xn]);
        if self.rows[bn] != 1 || self.cols[bn] != n {
            return Err(Error::ShapeMismatch {
                op: "add_bias_row",
                lhs: vec![m, n],
                rhs: vec![self.rows[bn], self.cols[bn]],
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(self.vals[xn][i * n + j] + self.vals[bn][j]);
            }
        }
        self.push_checked(m, n, out, Op::AddBiasRow { x: xn, bias: bn }, "add_bias_row")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        let out: Vec<f64> = self.vals[xn].iter().map(|v| v * factor).collect();
        self.push_checked(m, n, out, Op::Scale { x: xn, factor }, "scale")
    }

    /// Row-wise numerically stabilized softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.vals[xn][i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        self.push_checked(m, n, out, Op::SoftmaxRows { x: xn }, "softmax_rows")
    }

    /// Per-row layer normalization with affine gain/bias (`[1 x n]` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xn, gn, bn) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (m, n) = (self.rows[xn], self.cols[xn]);
        for &p in &[gn, bn] {
            if self.rows[p] * self.cols[p] != n {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![m, n],
                    rhs: vec![self.rows[p], self.cols[p]],
                });
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.vals[xn][i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                let xhat = (row[j] - mean) * inv;
                out[i * n + j] = xhat * self.vals[gn][j] + self.vals[bn][j];
            }
        }
        self.push_checked(
            m,
            n,
            out,
            Op::LayerNorm {
                x: xn,
                gain: gn,
                bias: bn,
                eps,
            },
            "layer_norm",
        )
    }

    /// GELU, tanh approximation (smooth, so finite differences stay clean).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        let out: Vec<f64> = self.vals[xn].iter().map(|&v| gelu_fwd(v)).collect();
        self.push_checked(m, n, out, Op::Gelu { x: xn }, "gelu")
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1/(1-rate)`. Identity (the same `Var`) when `rate == 0` or not
    /// training.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let xn = x.node;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.vals[xn]
            .iter()
            .zip(&mask)
            .map(|(v, k)| v * k)
            .collect();
        self.push_checked(m, n, out, Op::MulMask { x: xn, mask }, "dropout")
    }

    /// Vertical concatenation; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let nodes: Vec<usize> = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<_>>()?;
        if nodes.is_empty() {
            return Err(Error::Tape("concat_rows of zero parts".into()));
        }
        let n = self.cols[nodes[0]];
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in &nodes {
            if self.cols[p] != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![self.rows[nodes[0]], n],
                    rhs: vec![self.rows[p], self.cols[p]],
                });
            }
            rows += self.rows[p];
            out.extend_from_slice(&self.vals[p]);
        }
        Ok(self.push(rows, n, out, Op::ConcatRows { parts: nodes }))
    }

    /// Horizontal concatenation; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let nodes: Vec<usize> = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<_>>()?;
        if nodes.is_empty() {
            return Err(Error::Tape("concat_cols of zero parts".into()));
        }
        let m = self.rows[nodes[0]];
        let total: usize = nodes.iter().map(|&p| self.cols[p]).sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for &p in &nodes {
            if self.rows[p] != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![m, self.cols[nodes[0]]],
                    rhs: vec![self.rows[p], self.cols[p]],
                });
            }
            let w = self.cols[p];
            for i in 0..m {
                out[i * total + off..i * total + off + w]
                    .copy_from_slice(&self.vals[p][i * w..(i + 1) * w]);
            }
            off += w;
        }
        Ok(self.push(m, total, out, Op::ConcatCols { parts: nodes }))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        if start >= end || end > m {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: vec![m, n],
                rhs: vec![start, end],
            });
        }
        let out = self.vals[xn][start * n..end * n].to_vec();
        Ok(self.push(end - start, n, out, Op::SliceRows { x: xn, start }))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        if start >= end || end > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&self.vals[xn][i * n + start..i * n + end]);
        }
        Ok(self.push(m, w, out, Op::SliceCols { x: xn, start }))
    }

    /// Column-wise mean over rows: `[m x n] -> [1 x n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let (m, n) = (self.rows[xn], self.cols[xn]);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += self.vals[xn][i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        Ok(self.push(1, n, out, Op::MeanRows { x: xn }))
    }

    /// Reinterpret the same row-major data with new dimensions.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xn = self.check(x)?;
        if rows * cols != self.vals[xn].len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: vec![self.rows[xn], self.cols[xn]],
                rhs: vec![rows, cols],
            });
        }
        let out = self.vals[xn].clone();
        Ok(self.push(rows, cols, out, Op::Reshape { x: xn }))
    }

    /// Sum of all elements, as a `[1 x 1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xn = self.check(x)?;
        let s = self.vals[xn].iter().sum();
        self.push_checked(1, 1, vec![s], Op::Sum { x: xn }, "sum")
    }

    /// Mean cross-entropy of `logits [B x C]` against integer labels,
    /// computed via stabilized log-sum-exp.
    pub fn cross_entropy_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ln = self.check(logits)?;
        let (b, c) = (self.rows[ln], self.cols[ln]);
        if labels.len() != b {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_mean",
                lhs: vec![b, c],
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &self.vals[ln][i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let loss = total / b as f64;
        self.push_checked(
            1,
            1,
            vec![loss],
            Op::CrossEntropyMean {
                logits: ln,
                labels: labels.to_vec(),
            },
            "cross_entropy_mean",
        )
    }

    // ------------------------------------------------------------------
    // Reverse pass
    // ------------------------------------------------------------------

    /// Backpropagate from a scalar `loss` node. Visits each recorded op
    /// exactly once, in reverse execution order. Calling twice on the same
    /// tape is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = self.check(loss)?;
        if self.backward_done {
            return Err(Error::Tape("backward called twice on the same tape".into()));
        }
        if self.rows[ln] * self.cols[ln] != 1 {
            return Err(Error::Tape(format!(
                "backward target must be scalar, got {}x{}",
                self.rows[ln], self.cols[ln]
            )));
        }
        self.grads = self.vals.iter().map(|v| vec![0.0; v.len()]).collect();
        self.grads[ln][0] = 1.0;

        for i in (0..self.ops.len()).rev() {
            let g = std::mem::take(&mut self.grads[i]);
            if g.iter().all(|&v| v == 0.0) {
                self.grads[i] = g;
                continue;
            }
            let n_cols = self.cols[i];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = (self.rows[*a], self.cols[*a]);
                    let n = self.cols[*b];
                    // dA = dC * B^T
                    {
                        let bv = &self.vals[*b];
                        let da = &mut self.grads[*a];
                        for i2 in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i2 * n + j] * bv[p * n + j];
                                }
                                da[i2 * k + p] += acc;
                            }
                        }
                    }
                    // dB = A^T * dC
                    {
                        let av = &self.vals[*a];
                        let db = &mut self.grads[*b];
                        for p in 0..k {
                            for i2 in 0..m {
                                let aip = av[i2 * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i2 * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose { x } => {
                    let (m, n) = (self.rows[*x], self.cols[*x]);
                    let dx = &mut self.grads[*x];
                    for i2 in 0..m {
                        for j in 0..n {
                            dx[i2 * n + j] += g[j * m + i2];
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (dst, gv) in self.grads[*a].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    for (dst, gv) in self.grads[*b].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::AddBiasRow { x, bias } => {
                    let n = n_cols;
                    let m = self.rows[i];
                    for (dst, gv) in self.grads[*x].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    let db = &mut self.grads[*bias];
                    for i2 in 0..m {
                        for j in 0..n {
                            db[j] += g[i2 * n + j];
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    for (dst, gv) in self.grads[*x].iter_mut().zip(&g) {
                        *dst += f * gv;
                    }
                }
                Op::MulMask { x, mask } => {
                    for ((dst, gv), k) in self.grads[*x].iter_mut().zip(&g).zip(mask) {
                        *dst += gv * k;
                    }
                }
                Op::SoftmaxRows { x } => {
                    let (m, n) = (self.rows[i], n_cols);
                    let y = &self.vals[i];
                    let dx = &mut self.grads[*x];
                    for i2 in 0..m {
                        let yrow = &y[i2 * n..(i2 + 1) * n];
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[i2 * n + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (m, n) = (self.rows[i], n_cols);
                    let nf = n as f64;
                    // recompute per-row statistics from the input values
                    let xv = &self.vals[*x];
                    let gv = &self.vals[*gain];
                    let mut dx_acc = vec![0.0; m * n];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for i2 in 0..m {
                        let row = &xv[i2 * n..(i2 + 1) * n];
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        let mean = row.iter().sum::<f64>() / nf;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut xhat = vec![0.0; n];
                        let mut dxhat = vec![0.0; n];
                        for j in 0..n {
                            xhat[j] = (row[j] - mean) * inv;
                            dxhat[j] = grow[j] * gv[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat[j];
                            dgain[j] += grow[j] * xhat[j];
                            dbias[j] += grow[j];
                        }
                        for j in 0..n {
                            dx_acc[i2 * n + j] += inv
                                * (dxhat[j] - sum_dxhat / nf - xhat[j] * sum_dxhat_xhat / nf);
                        }
                    }
                    for (dst, v) in self.grads[*x].iter_mut().zip(&dx_acc) {
                        *dst += v;
                    }
                    for (dst, v) in self.grads[*gain].iter_mut().zip(&dgain) {
                        *dst += v;
                    }
                    for (dst, v) in self.grads[*bias].iter_mut().zip(&dbias) {
                        *dst += v;
                    }
                }
                Op::Gelu { x } => {
                    let xv = &self.vals[*x];
                    let dx = &mut self.grads[*x];
                    for (j, gv) in g.iter().enumerate() {
                        dx[j] += gv * gelu_grad(xv[j]);
                    }
                }
                Op::ConcatRows { parts } => {
                    let n = n_cols;
                    let mut off = 0;
                    for &p in parts {
                        let len = self.rows[p] * n;
                        for (dst, gv) in self.grads[p].iter_mut().zip(&g[off..off + len]) {
                            *dst += gv;
                        }
                        off += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let m = self.rows[i];
                    let total = n_cols;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.cols[p];
                        let dp = &mut self.grads[p];
                        for i2 in 0..m {
                            for j in 0..w {
                                dp[i2 * w + j] += g[i2 * total + off + j];
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let n = n_cols;
                    let dx = &mut self.grads[*x];
                    for (j, gv) in g.iter().enumerate() {
                        dx[start * n + j] += gv;
                    }
                }
                Op::SliceCols { x, start } => {
                    let m = self.rows[i];
                    let w = n_cols;
                    let n = self.cols[*x];
                    let dx = &mut self.grads[*x];
                    for i2 in 0..m {
                        for j in 0..w {
                            dx[i2 * n + start + j] += g[i2 * w + j];
                        }
                    }
                }
                Op::MeanRows { x } => {
                    let m = self.rows[*x];
                    let n = n_cols;
                    let inv = 1.0 / m as f64;
                    let dx = &mut self.grads[*x];
                    for i2 in 0..m {
                        for j in 0..n {
                            dx[i2 * n + j] += g[j] * inv;
                        }
                    }
                }
                Op::Reshape { x } => {
                    for (dst, gv) in self.grads[*x].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::Sum { x } => {
                    let dx = &mut self.grads[*x];
                    for dst in dx.iter_mut() {
                        *dst += g[0];
                    }
                }
                Op::CrossEntropyMean { logits, labels } => {
                    let b = self.rows[*logits];
                    let c = self.cols[*logits];
                    let lv = &self.vals[*logits];
                    let dl = &mut self.grads[*logits];
                    let scale = g[0] / b as f64;
                    for (i2, &label) in labels.iter().enumerate() {
                        let row = &lv[i2 * c..(i2 + 1) * c];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - max).exp() / sum;
                            let indicator = if j == label { 1.0 } else { 0.0 };
                            dl[i2 * c + j] += scale * (p - indicator);
                        }
                    }
                }
            }
            self.grads[i] = g;
        }
        self.backward_done = true;
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}
