//! Eager reverse-mode autodiff tape.
//!
//! Every op computes its value when recorded; `backward` replays the tape in
//! reverse and accumulates exact gradients. Creation order is topological by
//! construction, and all loops run in a fixed order, so gradients are
//! bit-deterministic for identical inputs.

use std::collections::BTreeMap;

use super::gemm::{col2im_acc, conv_out_len, gemm, im2col};
use super::params::{Gradients, ParamStore};
use super::Tensor;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

enum Op {
    /// Data input; never receives a gradient.
    Input,
    /// Non-learnable constant (e.g. positional encodings).
    Constant,
    /// Named parameter bound from a `ParamStore`.
    Param(String),
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    /// mat[i, j] + vec[j]
    AddRowVec { mat: NodeId, vec: NodeId },
    /// mat[i, j] + vec[i]
    AddColVec { mat: NodeId, vec: NodeId },
    /// a [m x k] * b [k x n]; with `tb`, b is stored [n x k].
    Matmul { a: NodeId, b: NodeId, tb: bool },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNormRows { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    /// Mean negative log-likelihood over rows; value is a scalar, the
    /// row-stochastic probabilities are cached for inference and voting.
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    Sum { a: NodeId },
    Mean { a: NodeId },
    Reshape { a: NodeId },
    Transpose2 { a: NodeId },
    Row { a: NodeId, index: usize },
    StackRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize, len: usize },
    Conv2dValid {
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        sh: usize,
        sw: usize,
        /// Unfolded input, kept when the graph retains backward data.
        cols: Option<Vec<f64>>,
    },
}

pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, NodeId>,
    retain: bool,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph that retains intermediate data needed by `backward`.
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
            params: BTreeMap::new(),
            retain: true,
            backward_done: false,
        }
    }

    /// Forward-only graph: skips backward caches (smaller, for evaluation).
    pub fn inference() -> Self {
        Graph { retain: false, ..Graph::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        id
    }

    fn req(&self, id: NodeId) -> bool {
        self.requires[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input, false)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Constant, false)
    }

    /// Bind a named parameter; repeated binds of one name share the node.
    pub fn bind(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let t = store.get(name)?.clone();
        let id = self.push(t, Op::Param(name.to_string()), true);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    // ---- elementwise ----

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Add { a, b }, req))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Sub { a, b }, req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Mul { a, b }, req))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a);
        self.push(t, Op::Scale { a, c }, req)
    }

    pub fn add_row_vec(&mut self, mat: NodeId, vec: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(mat, "add_row_vec")?;
        if self.value(vec).shape() != [n] {
            return Err(CoreError::ShapeMismatch(format!(
                "add_row_vec: vec {:?} vs {n} columns",
                self.value(vec).shape()
            )));
        }
        let v = self.value(vec).data();
        let mut data = self.value(mat).data().to_vec();
        for i in 0..m {
            for (j, vj) in v.iter().enumerate() {
                data[i * n + j] += vj;
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        let req = self.req(mat) || self.req(vec);
        Ok(self.push(t, Op::AddRowVec { mat, vec }, req))
    }

    pub fn add_col_vec(&mut self, mat: NodeId, vec: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(mat, "add_col_vec")?;
        if self.value(vec).shape() != [m] {
            return Err(CoreError::ShapeMismatch(format!(
                "add_col_vec: vec {:?} vs {m} rows",
                self.value(vec).shape()
            )));
        }
        let v = self.value(vec).data();
        let mut data = self.value(mat).data().to_vec();
        for (i, vi) in v.iter().enumerate() {
            for j in 0..n {
                data[i * n + j] += vi;
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        let req = self.req(mat) || self.req(vec);
        Ok(self.push(t, Op::AddColVec { mat, vec }, req))
    }

    // ---- linear algebra ----

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(CoreError::ShapeMismatch(format!("{what}: expected matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, false)
    }

    /// a [m x k] times transpose of b stored [n x k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: NodeId, b: NodeId, tb: bool) -> Result<NodeId> {
        let (m, ka) = self.dims2(a, "matmul lhs")?;
        let (b0, b1) = self.dims2(b, "matmul rhs")?;
        let (kb, n) = if tb { (b1, b0) } else { (b0, b1) };
        if ka != kb {
            return Err(CoreError::ShapeMismatch(format!(
                "matmul inner extents: {ka} vs {kb}"
            )));
        }
        let mut data = vec![0.0; m * n];
        gemm(m, ka, n, 1.0, self.value(a).data(), false, self.value(b).data(), tb, 0.0, &mut data);
        let t = Tensor { shape: vec![m, n], data };
        let req = self.req(a) || self.req(b);
        Ok(self.push(t, Op::Matmul { a, b, tb }, req))
    }

    // ---- activations ----

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a);
        self.push(t, Op::Relu { a }, req)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a);
        self.push(t, Op::Sigmoid { a }, req)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.tanh()).collect();
        let t = Tensor { shape: self.value(a).shape().to_vec(), data };
        let req = self.req(a);
        self.push(t, Op::Tanh { a }, req)
    }

    /// Row-wise softmax of a matrix, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "softmax_rows")?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            softmax_row_inplace(&mut data[i * n..(i + 1) * n]);
        }
        let t = Tensor { shape: vec![m, n], data };
        let req = self.req(a);
        Ok(self.push(t, Op::SoftmaxRows { a }, req))
    }

    /// Per-row layer normalization with learned affine (gamma, beta length n).
    pub fn layer_norm_rows(
        &mut self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "layer_norm_rows")?;
        if self.value(gamma).shape() != [n] || self.value(beta).shape() != [n] {
            return Err(CoreError::ShapeMismatch(format!(
                "layer_norm_rows affine: gamma {:?}, beta {:?}, want [{n}]",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let (mu, inv_std) = row_moments(row, eps);
            for j in 0..n {
                row[j] = (row[j] - mu) * inv_std * g[j] + b[j];
            }
        }
        let t = Tensor { shape: vec![m, n], data };
        let req = self.req(a) || self.req(gamma) || self.req(beta);
        Ok(self.push(t, Op::LayerNormRows { a, gamma, beta, eps }, req))
    }

    /// Softmax cross-entropy: scalar mean NLL over rows of `logits` [B x K].
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (bsz, k) = self.dims2(logits, "softmax_xent")?;
        if labels.len() != bsz {
            return Err(CoreError::ShapeMismatch(format!(
                "softmax_xent: {} labels for {bsz} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(CoreError::InvalidArg(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &mut probs[i * k..(i + 1) * k];
            softmax_row_inplace(row);
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
        }
        loss /= bsz as f64;
        if !loss.is_finite() {
            return Err(CoreError::Numeric("cross-entropy loss is not finite".into()));
        }
        let t = Tensor { shape: vec![1], data: vec![loss] };
        let req = self.req(logits);
        Ok(self.push(t, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs }, req))
    }

    /// Cached row-stochastic probabilities of a `softmax_xent` node.
    pub fn probs(&self, id: NodeId) -> Result<Tensor> {
        match &self.ops[id.0] {
            Op::SoftmaxXent { logits, probs, .. } => {
                let shape = self.value(*logits).shape().to_vec();
                Tensor::new(shape, probs.clone())
            }
            _ => Err(CoreError::Graph("probs() on a non-cross-entropy node".into())),
        }
    }

    // ---- reductions and shape ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let req = self.req(a);
        self.push(Tensor { shape: vec![1], data: vec![s] }, Op::Sum { a }, req)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum::<f64>() / n;
        let req = self.req(a);
        self.push(Tensor { shape: vec![1], data: vec![s] }, Op::Mean { a }, req)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(a).reshaped(shape)?;
        let req = self.req(a);
        Ok(self.push(t, Op::Reshape { a }, req))
    }

    pub fn transpose2(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "transpose2")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor { shape: vec![n, m], data };
        let req = self.req(a);
        Ok(self.push(t, Op::Transpose2 { a }, req))
    }

    /// Row `index` of a matrix as a [1 x n] node.
    pub fn row(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "row")?;
        if index >= m {
            return Err(CoreError::InvalidArg(format!("row {index} of {m}-row matrix")));
        }
        let data = self.value(a).data()[index * n..(index + 1) * n].to_vec();
        let t = Tensor { shape: vec![1, n], data };
        let req = self.req(a);
        Ok(self.push(t, Op::Row { a, index }, req))
    }

    /// Stack [1 x n] rows into a [parts x n] matrix.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArg("stack_rows of zero parts".into()));
        }
        let (_, n) = self.dims2(parts[0], "stack_rows")?;
        let mut data = Vec::with_capacity(parts.len() * n);
        let mut req = false;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "stack_rows part")?;
            if pm != 1 || pn != n {
                return Err(CoreError::ShapeMismatch(format!(
                    "stack_rows part is [{pm} x {pn}], want [1 x {n}]"
                )));
            }
            data.extend_from_slice(self.value(p).data());
            req |= self.req(p);
        }
        let t = Tensor { shape: vec![parts.len(), n], data };
        Ok(self.push(t, Op::StackRows { parts: parts.to_vec() }, req))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArg("concat_cols of zero parts".into()));
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut req = false;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols part")?;
            if pm != m {
                return Err(CoreError::ShapeMismatch(format!(
                    "concat_cols: {pm} rows vs {m}"
                )));
            }
            widths.push(pn);
            req |= self.req(p);
        }
        let n_total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n_total];
        let mut offset = 0;
        for (&p, &pn) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * n_total + offset..i * n_total + offset + pn]
                    .copy_from_slice(&src[i * pn..(i + 1) * pn]);
            }
            offset += pn;
        }
        let t = Tensor { shape: vec![m, n_total], data };
        Ok(self.push(t, Op::ConcatCols { parts: parts.to_vec() }, req))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "slice_cols")?;
        if start + len > n {
            return Err(CoreError::InvalidArg(format!(
                "slice_cols [{start}, {}) of {n} columns",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let t = Tensor { shape: vec![m, len], data };
        let req = self.req(a);
        Ok(self.push(t, Op::SliceCols { a, start, len }, req))
    }

    // ---- convolution ----

    /// Valid (no padding) cross-correlation.
    ///
    /// `input` [c_in x h x w], `kernels` [c_out x c_in x kh x kw], optional
    /// `bias` [c_out]; output [c_out x h' x w'] with
    /// h' = floor((h - kh)/sh) + 1, w' = floor((w - kw)/sw) + 1.
    pub fn conv2d_valid(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        stride: (usize, usize),
    ) -> Result<NodeId> {
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(CoreError::InvalidArg("zero convolution stride".into()));
        }
        let ishape = self.value(input).shape().to_vec();
        let kshape = self.value(kernels).shape().to_vec();
        if ishape.len() != 3 || kshape.len() != 4 {
            return Err(CoreError::ShapeMismatch(format!(
                "conv2d_valid: input {ishape:?} (want 3-D), kernels {kshape:?} (want 4-D)"
            )));
        }
        let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (c_out, kc, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        if kc != c_in {
            return Err(CoreError::ShapeMismatch(format!(
                "conv2d_valid: kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh > h || kw > w {
            return Err(CoreError::ShapeMismatch(format!(
                "conv2d_valid: kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [c_out] {
                return Err(CoreError::ShapeMismatch(format!(
                    "conv2d_valid bias: {:?}, want [{c_out}]",
                    self.value(b).shape()
                )));
            }
        }
        let h_out = conv_out_len(h, kh, sh);
        let w_out = conv_out_len(w, kw, sw);
        let n_cols = h_out * w_out;
        let k_rows = c_in * kh * kw;

        let cols = im2col(self.value(input).data(), c_in, h, w, kh, kw, sh, sw);
        let mut data = vec![0.0; c_out * n_cols];
        gemm(c_out, k_rows, n_cols, 1.0, self.value(kernels).data(), false, &cols, false, 0.0, &mut data);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (c, bc) in bv.iter().enumerate() {
                for x in &mut data[c * n_cols..(c + 1) * n_cols] {
                    *x += bc;
                }
            }
        }
        let t = Tensor { shape: vec![c_out, h_out, w_out], data };
        let req =
            self.req(input) || self.req(kernels) || bias.is_some_and(|b| self.req(b));
        let cached = if self.retain && req { Some(cols) } else { None };
        Ok(self.push(t, Op::Conv2dValid { input, kernels, bias, sh, sw, cols: cached }, req))
    }

    // ---- backward ----

    /// Populate gradients of every parameter reachable from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(CoreError::Graph(
                "backward called twice on one graph; rebuild the graph instead".into(),
            ));
        }
        if !self.retain {
            return Err(CoreError::Graph("backward on an inference graph".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(CoreError::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.requires[id] {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.accumulate_parents(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Gradient buffer of a node, if it received one.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradients of every bound parameter, keyed by name. Parameters that
    /// did not participate in the loss get zero gradients.
    pub fn param_gradients(&self) -> Gradients {
        let mut out = Gradients::new();
        for (name, &id) in &self.params {
            let g = match &self.grads[id.0] {
                Some(g) => g.clone(),
                None => vec![0.0; self.value(id).numel()],
            };
            out.insert(name.clone(), g);
        }
        out
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut [f64] {
        let numel = self.values[id.0].numel();
        self.grads[id.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn accumulate_parents(&mut self, id: usize, g: &[f64]) {
        // Ops are matched by moving cheap fields out; cached vectors are
        // borrowed via a short clone-free scope where possible.
        match &self.ops[id] {
            Op::Input | Op::Constant | Op::Param(_) => {}
            &Op::Add { a, b } => {
                if self.req(a) {
                    axpy(self.grad_buf(a), g, 1.0);
                }
                if self.req(b) {
                    axpy(self.grad_buf(b), g, 1.0);
                }
            }
            &Op::Sub { a, b } => {
                if self.req(a) {
                    axpy(self.grad_buf(a), g, 1.0);
                }
                if self.req(b) {
                    axpy(self.grad_buf(b), g, -1.0);
                }
            }
            &Op::Mul { a, b } => {
                if self.req(a) {
                    let bv = self.values[b.0].data().to_vec();
                    let ga = self.grad_buf(a);
                    for ((d, &gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.req(b) {
                    let av = self.values[a.0].data().to_vec();
                    let gb = self.grad_buf(b);
                    for ((d, &gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            &Op::Scale { a, c } => {
                if self.req(a) {
                    axpy(self.grad_buf(a), g, c);
                }
            }
            &Op::AddRowVec { mat, vec } => {
                let n = self.values[vec.0].numel();
                if self.req(mat) {
                    axpy(self.grad_buf(mat), g, 1.0);
                }
                if self.req(vec) {
                    let gv = self.grad_buf(vec);
                    for (i, &gi) in g.iter().enumerate() {
                        gv[i % n] += gi;
                    }
                }
            }
            &Op::AddColVec { mat, vec } => {
                let m = self.values[vec.0].numel();
                let n = g.len() / m;
                if self.req(mat) {
                    axpy(self.grad_buf(mat), g, 1.0);
                }
                if self.req(vec) {
                    let gv = self.grad_buf(vec);
                    for i in 0..m {
                        gv[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            &Op::Matmul { a, b, tb } => {
                let (m, k) = (self.values[a.0].dim(0), self.values[a.0].dim(1));
                let n = g.len() / m;
                if self.req(a) {
                    // dA = g * op(B)^T: plain B gives g [m x n] * B^T; for
                    // tb, B is stored [n x k] so dA = g * B directly.
                    let bv = self.values[b.0].data().to_vec();
                    let ga = self.grad_buf(a);
                    gemm(m, n, k, 1.0, g, false, &bv, !tb, 1.0, ga);
                }
                if self.req(b) {
                    let av = self.values[a.0].data().to_vec();
                    let gb = self.grad_buf(b);
                    if tb {
                        // B stored [n x k]: dB = g^T * A.
                        gemm(n, m, k, 1.0, g, true, &av, false, 1.0, gb);
                    } else {
                        // dB = A^T * g.
                        gemm(k, m, n, 1.0, &av, true, g, false, 1.0, gb);
                    }
                }
            }
            &Op::Relu { a } => {
                if self.req(a) {
                    let xv = self.values[a.0].data().to_vec();
                    let ga = self.grad_buf(a);
                    for ((d, &gi), xi) in ga.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Sigmoid { a } => {
                if self.req(a) {
                    let yv = self.values[id].data().to_vec();
                    let ga = self.grad_buf(a);
                    for ((d, &gi), yi) in ga.iter_mut().zip(g).zip(yv) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            &Op::Tanh { a } => {
                if self.req(a) {
                    let yv = self.values[id].data().to_vec();
                    let ga = self.grad_buf(a);
                    for ((d, &gi), yi) in ga.iter_mut().zip(g).zip(yv) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            &Op::SoftmaxRows { a } => {
                if self.req(a) {
                    let y = self.values[id].data().to_vec();
                    let n = self.values[id].dim(1);
                    let ga = self.grad_buf(a);
                    for i in 0..y.len() / n {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        let da = &mut ga[i * n..(i + 1) * n];
                        for j in 0..n {
                            da[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            &Op::LayerNormRows { a, gamma, beta, eps } => {
                let n = self.values[gamma.0].numel();
                let m = g.len() / n;
                let x = self.values[a.0].data().to_vec();
                let gam = self.values[gamma.0].data().to_vec();
                for i in 0..m {
                    let xr = &x[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let (mu, inv_std) = row_moments(xr, eps);
                    let xhat: Vec<f64> = xr.iter().map(|&v| (v - mu) * inv_std).collect();
                    if self.req(a) {
                        let dyg: Vec<f64> = gr.iter().zip(&gam).map(|(gi, gj)| gi * gj).collect();
                        let mean_dyg: f64 = dyg.iter().sum::<f64>() / n as f64;
                        let mean_dyg_xhat: f64 =
                            dyg.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        let ga_buf = self.grad_buf(a);
                        let da = &mut ga_buf[i * n..(i + 1) * n];
                        for j in 0..n {
                            da[j] += (dyg[j] - mean_dyg - xhat[j] * mean_dyg_xhat) * inv_std;
                        }
                    }
                    if self.req(gamma) {
                        let gg = self.grad_buf(gamma);
                        for j in 0..n {
                            gg[j] += gr[j] * xhat[j];
                        }
                    }
                    if self.req(beta) {
                        let gb = self.grad_buf(beta);
                        for j in 0..n {
                            gb[j] += gr[j];
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let logits = *logits;
                if self.req(logits) {
                    let bsz = labels.len();
                    let k = probs.len() / bsz;
                    let scale = g[0] / bsz as f64;
                    let mut dl = probs.clone();
                    for (i, &label) in labels.iter().enumerate() {
                        dl[i * k + label] -= 1.0;
                    }
                    let gl = self.grad_buf(logits);
                    axpy(gl, &dl, scale);
                }
            }
            &Op::Sum { a } => {
                if self.req(a) {
                    let ga = self.grad_buf(a);
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::Mean { a } => {
                if self.req(a) {
                    let scale = g[0] / self.values[a.0].numel() as f64;
                    let ga = self.grad_buf(a);
                    for d in ga.iter_mut() {
                        *d += scale;
                    }
                }
            }
            &Op::Reshape { a } => {
                if self.req(a) {
                    axpy(self.grad_buf(a), g, 1.0);
                }
            }
            &Op::Transpose2 { a } => {
                if self.req(a) {
                    let (m, n) = (self.values[a.0].dim(0), self.values[a.0].dim(1));
                    let ga = self.grad_buf(a);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            &Op::Row { a, index } => {
                if self.req(a) {
                    let n = g.len();
                    let ga = self.grad_buf(a);
                    axpy(&mut ga[index * n..(index + 1) * n], g, 1.0);
                }
            }
            Op::StackRows { parts } => {
                let parts = parts.clone();
                let n = g.len() / parts.len();
                for (i, p) in parts.into_iter().enumerate() {
                    if self.req(p) {
                        axpy(self.grad_buf(p), &g[i * n..(i + 1) * n], 1.0);
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let widths: Vec<usize> = parts.iter().map(|p| self.values[p.0].dim(1)).collect();
                let m = self.values[parts[0].0].dim(0);
                let n_total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, pn) in parts.into_iter().zip(widths) {
                    if self.req(p) {
                        let gp = self.grad_buf(p);
                        for i in 0..m {
                            for j in 0..pn {
                                gp[i * pn + j] += g[i * n_total + offset + j];
                            }
                        }
                    }
                    offset += pn;
                }
            }
            &Op::SliceCols { a, start, len } => {
                if self.req(a) {
                    let n = self.values[a.0].dim(1);
                    let m = self.values[a.0].dim(0);
                    let ga = self.grad_buf(a);
                    for i in 0..m {
                        for j in 0..len {
                            ga[i * n + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::Conv2dValid { input, kernels, bias, sh, sw, .. } => {
                let (input, kernels, bias, sh, sw) = (*input, *kernels, *bias, *sh, *sw);
                // The cached unfolded input is only needed once; move it out
                // rather than cloning a buffer that can run to megabytes.
                let cached = match &mut self.ops[id] {
                    Op::Conv2dValid { cols, .. } => cols.take(),
                    _ => unreachable!(),
                };
                let ishape = self.values[input.0].shape().to_vec();
                let kshape = self.values[kernels.0].shape().to_vec();
                let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
                let (c_out, kh, kw) = (kshape[0], kshape[2], kshape[3]);
                let k_rows = c_in * kh * kw;
                let n_cols = g.len() / c_out;
                let cols_owned: Vec<f64> = match cached {
                    Some(c) => c,
                    None => im2col(self.values[input.0].data(), c_in, h, w, kh, kw, sh, sw),
                };
                if let Some(b) = bias {
                    if self.req(b) {
                        let gb = self.grad_buf(b);
                        for (c, d) in gb.iter_mut().enumerate() {
                            *d += g[c * n_cols..(c + 1) * n_cols].iter().sum::<f64>();
                        }
                    }
                }
                if self.req(kernels) {
                    // dW = g [c_out x n_cols] * cols^T [n_cols x k_rows].
                    let gk = self.grad_buf(kernels);
                    gemm(c_out, n_cols, k_rows, 1.0, g, false, &cols_owned, true, 1.0, gk);
                }
                if self.req(input) {
                    // dCols = W^T [k_rows x c_out] * g, then fold back.
                    let wv = self.values[kernels.0].data().to_vec();
                    let mut dcols = vec![0.0; k_rows * n_cols];
                    gemm(k_rows, c_out, n_cols, 1.0, &wv, true, g, false, 0.0, &mut dcols);
                    let gi = self.grad_buf(input);
                    col2im_acc(&dcols, gi, c_in, h, w, kh, kw, sh, sw);
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Population mean and 1/sqrt(var + eps) of one row.
fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}
