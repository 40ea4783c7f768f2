//! The computation record: forward primitives and reverse-mode backward.

use super::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor, TensorError};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;
const BCE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[cfg(test)]
impl NodeId {
    pub(crate) fn test_only(index: usize) -> Self {
        NodeId(index)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddRow { a: NodeId, row: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Sum { a: NodeId },
    Transpose { a: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize, end: usize },
    GatherRows { a: NodeId, idx: Vec<usize> },
    SoftmaxRows { a: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Gelu { a: NodeId },
    Sigmoid { a: NodeId },
    Log { a: NodeId },
    BceSum { probs: NodeId, targets: Tensor },
    CeLogits { logits: NodeId, target: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::AddRow { a, row } => vec![*a, *row],
            Op::Scale { a, .. }
            | Op::Sum { a }
            | Op::Transpose { a }
            | Op::SliceCols { a, .. }
            | Op::GatherRows { a, .. }
            | Op::SoftmaxRows { a }
            | Op::Gelu { a }
            | Op::Sigmoid { a }
            | Op::Log { a } => vec![*a],
            Op::ConcatCols { parts } => parts.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::BceSum { probs, .. } => vec![*probs],
            Op::CeLogits { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// An append-only record of primitive applications.
///
/// Confined to one training step on one worker; parameters enter as leaves
/// each step. `backward` accumulates gradients and never clears them —
/// zeroing between steps is the caller's job.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor; its `requires_grad` flag is honored.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let requires_grad = value.requires_grad();
        self.push_node(Op::Leaf, value, requires_grad)
    }

    /// Register a constant input that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_node(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        assert!(t.is_scalar(), "expected scalar, got shape {:?}", t.shape());
        t.data()[0]
    }

    fn push_node(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op) -> Result<NodeId, TensorError> {
        let value = compute(&op, &self.nodes)?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_node(op, value, requires_grad))
    }

    // ── forward primitives ──────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (_, ka) = self.value(a).dims2();
        let (kb, _) = self.value(b).dims2();
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        self.push_op(Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        self.push_op(Op::Add { a, b })
    }

    /// Broadcast-add a length-n row vector over every row of a\[m x n\].
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TensorError> {
        let (_, n) = self.value(a).dims2();
        if self.value(row).numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(row).shape().to_vec(),
            });
        }
        self.push_op(Op::AddRow { a, row })
    }

    /// Elementwise product; used for dropout and masking.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        self.push_op(Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push_op(Op::Scale { a, c }).expect("scale is total")
    }

    /// Sum of all elements, as a 1x1 scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Sum { a }).expect("sum is total")
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Transpose { a }).expect("transpose is total")
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let (rows, _) = self.value(parts[0]).dims2();
        for p in parts {
            let (r, _) = self.value(*p).dims2();
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(*p).shape().to_vec(),
                });
            }
        }
        self.push_op(Op::ConcatCols {
            parts: parts.to_vec(),
        })
    }

    /// Columns \[start, end) of a 2-D tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, TensorError> {
        let (_, n) = self.value(a).dims2();
        if start > end || end > n {
            return Err(TensorError::IndexOutOfRange {
                what: "slice_cols",
                index: end,
                len: n,
            });
        }
        self.push_op(Op::SliceCols { a, start, end })
    }

    /// Gather rows by index; repeated indices are allowed (gradients
    /// accumulate). This is also the embedding lookup: `a` is the table and
    /// `idx` the token ids.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId, TensorError> {
        let (m, _) = self.value(a).dims2();
        for &i in idx {
            if i >= m {
                return Err(TensorError::IndexOutOfRange {
                    what: "gather_rows",
                    index: i,
                    len: m,
                });
            }
        }
        self.push_op(Op::GatherRows {
            a,
            idx: idx.to_vec(),
        })
    }

    /// Row-wise softmax with max-subtraction. Entries may carry a negative
    /// infinity sentinel for masking; a row with no finite entry is an error.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.push_op(Op::SoftmaxRows { a })
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let (_, d) = self.value(x).dims2();
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).numel() != d {
                let _ = name;
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.value(x).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        self.push_op(Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Gelu { a }).expect("gelu is total")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Sigmoid { a }).expect("sigmoid is total")
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Log { a }).expect("log is total")
    }

    /// Summed binary cross entropy between probabilities and 0/1 targets.
    /// Log arguments are clamped away from zero so saturated probabilities
    /// yield a large finite loss instead of an infinity.
    pub fn bce_sum(&mut self, probs: NodeId, targets: &Tensor) -> Result<NodeId, TensorError> {
        if self.value(probs).numel() != targets.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_sum",
                lhs: self.value(probs).shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        self.push_op(Op::BceSum {
            probs,
            targets: targets.clone(),
        })
    }

    /// Cross entropy of softmax(logits) against a target distribution,
    /// fused for stability. Masked logits carry negative infinity and must
    /// have zero target mass; a row with no finite logit is an error.
    pub fn ce_logits(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId, TensorError> {
        if self.value(logits).numel() != target.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "ce_logits",
                lhs: self.value(logits).shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        if !self.value(logits).data().iter().any(|v| v.is_finite()) {
            return Err(TensorError::FullyMaskedRow { row: 0 });
        }
        self.push_op(Op::CeLogits {
            logits,
            target: target.clone(),
        })
    }

    // ── reverse pass ────────────────────────────────────────────────

    /// Accumulate gradients of a scalar loss into every node that requires
    /// them. Parameters not reached by the loss keep a zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NotScalar {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        // Seed scratch gradients for this pass; accumulation into `grads`
        // happens at the end so repeated backward calls sum.
        let n = self.nodes.len();
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; n];
        pass[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = pass[i].take() else { continue };
            self.propagate(i, &g, &mut pass);
            // Fold this node's pass gradient into the persistent store.
            if self.nodes[i].requires_grad {
                accumulate(&mut self.grads[i], &g);
            }
        }
        // Parameters the loss never reached still expose a zero gradient.
        for i in 0..n {
            if self.nodes[i].requires_grad && self.grads[i].is_none() {
                self.grads[i] = Some(vec![0.0; self.nodes[i].value.numel()]);
            }
        }
        Ok(())
    }

    /// Gradient of the last backward passes for `id`, if it requires grad.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Explicitly clear accumulated gradients; backward never does.
    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let flows = |nodes: &Vec<Node>, id: NodeId| nodes[id.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let (_, nn) = self.nodes[b.0].value.dims2();
                if flows(&self.nodes, *a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_raw(g, self.nodes[b.0].value.data(), m, nn, k, &mut da);
                    accumulate(&mut pass[a.0], &da);
                }
                if flows(&self.nodes, *b) {
                    let mut db = vec![0.0; k * nn];
                    matmul_tn_raw(self.nodes[a.0].value.data(), g, m, k, nn, &mut db);
                    accumulate(&mut pass[b.0], &db);
                }
            }
            Op::Add { a, b } => {
                if flows(&self.nodes, *a) {
                    accumulate(&mut pass[a.0], g);
                }
                if flows(&self.nodes, *b) {
                    accumulate(&mut pass[b.0], g);
                }
            }
            Op::AddRow { a, row } => {
                if flows(&self.nodes, *a) {
                    accumulate(&mut pass[a.0], g);
                }
                if flows(&self.nodes, *row) {
                    let (m, nn) = self.nodes[a.0].value.dims2();
                    let mut dr = vec![0.0; nn];
                    for r in 0..m {
                        for (d, &gv) in dr.iter_mut().zip(&g[r * nn..(r + 1) * nn]) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut pass[row.0], &dr);
                }
            }
            Op::Mul { a, b } => {
                if flows(&self.nodes, *a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    accumulate(&mut pass[a.0], &da);
                }
                if flows(&self.nodes, *b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    accumulate(&mut pass[b.0], &db);
                }
            }
            Op::Scale { a, c } => {
                if flows(&self.nodes, *a) {
                    let da: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::Sum { a } => {
                if flows(&self.nodes, *a) {
                    let da = vec![g[0]; self.nodes[a.0].value.numel()];
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::Transpose { a } => {
                if flows(&self.nodes, *a) {
                    let (m, nn) = self.nodes[a.0].value.dims2();
                    let mut da = vec![0.0; m * nn];
                    for r in 0..m {
                        for c in 0..nn {
                            da[r * nn + c] = g[c * m + r];
                        }
                    }
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::ConcatCols { parts } => {
                let (rows, total) = self.nodes[i].value.dims2();
                let mut col = 0;
                for p in parts {
                    let (_, w) = self.nodes[p.0].value.dims2();
                    if flows(&self.nodes, *p) {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + col..r * total + col + w]);
                        }
                        accumulate(&mut pass[p.0], &dp);
                    }
                    col += w;
                }
            }
            Op::SliceCols { a, start, end } => {
                if flows(&self.nodes, *a) {
                    let (m, nn) = self.nodes[a.0].value.dims2();
                    let w = end - start;
                    let mut da = vec![0.0; m * nn];
                    for r in 0..m {
                        da[r * nn + start..r * nn + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::GatherRows { a, idx } => {
                if flows(&self.nodes, *a) {
                    let (m, nn) = self.nodes[a.0].value.dims2();
                    let mut da = vec![0.0; m * nn];
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, &gv) in da[src * nn..(src + 1) * nn]
                            .iter_mut()
                            .zip(&g[r * nn..(r + 1) * nn])
                        {
                            *d += gv;
                        }
                    }
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::SoftmaxRows { a } => {
                if flows(&self.nodes, *a) {
                    let out = self.nodes[i].value.data();
                    let (m, nn) = self.nodes[i].value.dims2();
                    let mut da = vec![0.0; m * nn];
                    for r in 0..m {
                        let s = &out[r * nn..(r + 1) * nn];
                        let gr = &g[r * nn..(r + 1) * nn];
                        let dot: f64 = s.iter().zip(gr).map(|(sv, gv)| sv * gv).sum();
                        for c in 0..nn {
                            da[r * nn + c] = s[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (m, d) = self.nodes[x.0].value.dims2();
                let xd = self.nodes[x.0].value.data();
                let gd = self.nodes[gamma.0].value.data();
                let df = d as f64;
                let mut dx = vec![0.0; m * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..m {
                    let xs = &xd[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mean = xs.iter().sum::<f64>() / df;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xs.iter().map(|v| (v - mean) * inv_std).collect();
                    let mut dxhat = vec![0.0; d];
                    for c in 0..d {
                        dgamma[c] += gs[c] * xhat[c];
                        dbeta[c] += gs[c];
                        dxhat[c] = gs[c] * gd[c];
                    }
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dx[r * d + c] =
                            inv_std / df * (df * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
                    }
                }
                if flows(&self.nodes, *x) {
                    accumulate(&mut pass[x.0], &dx);
                }
                if flows(&self.nodes, *gamma) {
                    accumulate(&mut pass[gamma.0], &dgamma);
                }
                if flows(&self.nodes, *beta) {
                    accumulate(&mut pass[beta.0], &dbeta);
                }
            }
            Op::Gelu { a } => {
                if flows(&self.nodes, *a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(gv, &x)| {
                            let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                            let t = u.tanh();
                            let sech2 = 1.0 - t * t;
                            let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                            gv * (0.5 * (1.0 + t) + 0.5 * x * sech2 * du)
                        })
                        .collect();
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::Sigmoid { a } => {
                if flows(&self.nodes, *a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::Log { a } => {
                if flows(&self.nodes, *a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(gv, &x)| gv / x)
                        .collect();
                    accumulate(&mut pass[a.0], &da);
                }
            }
            Op::BceSum { probs, targets } => {
                if flows(&self.nodes, *probs) {
                    let da: Vec<f64> = self.nodes[probs.0]
                        .value
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&p, &y)| {
                            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                                0.0 // clamped region: flat
                            } else {
                                g[0] * (p - y) / (p * (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(&mut pass[probs.0], &da);
                }
            }
            Op::CeLogits { logits, target } => {
                if flows(&self.nodes, *logits) {
                    let ld = self.nodes[logits.0].value.data();
                    let max = ld.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = ld.iter().map(|&l| (l - max).exp()).sum();
                    let mass: f64 = target.data().iter().sum();
                    let da: Vec<f64> = ld
                        .iter()
                        .zip(target.data())
                        .map(|(&l, &t)| g[0] * (mass * (l - max).exp() / z - t))
                        .collect();
                    accumulate(&mut pass[logits.0], &da);
                }
            }
        }
    }

    /// Re-execute every recorded primitive from the stored leaves and return
    /// the recomputed values; deterministic primitives make this bit-exact.
    pub fn replay(&self) -> Result<Vec<Tensor>, TensorError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => compute_from(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn compute(op: &Op, nodes: &[Node]) -> Result<Tensor, TensorError> {
    compute_from(op, |id| &nodes[id.0].value)
}

fn compute_from<'a>(
    op: &Op,
    value: impl Fn(NodeId) -> &'a Tensor,
) -> Result<Tensor, TensorError> {
    Ok(match op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::MatMul { a, b } => {
            let (m, k) = value(*a).dims2();
            let (_, n) = value(*b).dims2();
            let mut out = vec![0.0; m * n];
            matmul_raw(value(*a).data(), value(*b).data(), m, k, n, &mut out);
            Tensor::from_shape(vec![m, n], out)
        }
        Op::Add { a, b } => {
            let data = value(*a)
                .data()
                .iter()
                .zip(value(*b).data())
                .map(|(x, y)| x + y)
                .collect();
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::AddRow { a, row } => {
            let (m, n) = value(*a).dims2();
            let rd = value(*row).data();
            let mut data = value(*a).data().to_vec();
            for r in 0..m {
                for (d, &rv) in data[r * n..(r + 1) * n].iter_mut().zip(rd) {
                    *d += rv;
                }
            }
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::Mul { a, b } => {
            let data = value(*a)
                .data()
                .iter()
                .zip(value(*b).data())
                .map(|(x, y)| x * y)
                .collect();
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::Scale { a, c } => {
            let data = value(*a).data().iter().map(|x| x * c).collect();
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::Sum { a } => Tensor::scalar(value(*a).data().iter().sum()),
        Op::Transpose { a } => {
            let (m, n) = value(*a).dims2();
            let ad = value(*a).data();
            let mut data = vec![0.0; m * n];
            for r in 0..m {
                for c in 0..n {
                    data[c * m + r] = ad[r * n + c];
                }
            }
            Tensor::from_shape(vec![n, m], data)
        }
        Op::ConcatCols { parts } => {
            let (rows, _) = value(parts[0]).dims2();
            let total: usize = parts.iter().map(|p| value(*p).dims2().1).sum();
            let mut data = vec![0.0; rows * total];
            let mut col = 0;
            for p in parts {
                let (_, w) = value(*p).dims2();
                let pd = value(*p).data();
                for r in 0..rows {
                    data[r * total + col..r * total + col + w]
                        .copy_from_slice(&pd[r * w..(r + 1) * w]);
                }
                col += w;
            }
            Tensor::from_shape(vec![rows, total], data)
        }
        Op::SliceCols { a, start, end } => {
            let (m, n) = value(*a).dims2();
            let ad = value(*a).data();
            let w = end - start;
            let mut data = vec![0.0; m * w];
            for r in 0..m {
                data[r * w..(r + 1) * w].copy_from_slice(&ad[r * n + start..r * n + end]);
            }
            Tensor::from_shape(vec![m, w], data)
        }
        Op::GatherRows { a, idx } => {
            let (_, n) = value(*a).dims2();
            let ad = value(*a).data();
            let mut data = vec![0.0; idx.len() * n];
            for (r, &src) in idx.iter().enumerate() {
                data[r * n..(r + 1) * n].copy_from_slice(&ad[src * n..(src + 1) * n]);
            }
            Tensor::from_shape(vec![idx.len(), n], data)
        }
        Op::SoftmaxRows { a } => {
            let (m, n) = value(*a).dims2();
            let ad = value(*a).data();
            let mut data = vec![0.0; m * n];
            for r in 0..m {
                let row = &ad[r * n..(r + 1) * n];
                let max = row
                    .iter()
                    .copied()
                    .filter(|v| v.is_finite())
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::FullyMaskedRow { row: r });
                }
                let out = &mut data[r * n..(r + 1) * n];
                let mut z = 0.0;
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = (v - max).exp();
                    z += *o;
                }
                for o in out.iter_mut() {
                    *o /= z;
                }
            }
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let (m, d) = value(*x).dims2();
            let xd = value(*x).data();
            let gd = value(*gamma).data();
            let bd = value(*beta).data();
            let df = d as f64;
            let mut data = vec![0.0; m * d];
            for r in 0..m {
                let xs = &xd[r * d..(r + 1) * d];
                let mean = xs.iter().sum::<f64>() / df;
                let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                let inv_std = 1.0 / (var + eps).sqrt();
                for c in 0..d {
                    data[r * d + c] = (xs[c] - mean) * inv_std * gd[c] + bd[c];
                }
            }
            Tensor::from_shape(value(*x).shape().to_vec(), data)
        }
        Op::Gelu { a } => {
            let data = value(*a)
                .data()
                .iter()
                .map(|&x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh()))
                .collect();
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::Sigmoid { a } => {
            let data = value(*a)
                .data()
                .iter()
                .map(|&x| 1.0 / (1.0 + (-x).exp()))
                .collect();
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::Log { a } => {
            let data = value(*a).data().iter().map(|x| x.ln()).collect();
            Tensor::from_shape(value(*a).shape().to_vec(), data)
        }
        Op::BceSum { probs, targets } => {
            let loss: f64 = value(*probs)
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&p, &y)| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum();
            Tensor::scalar(loss)
        }
        Op::CeLogits { logits, target } => {
            let ld = value(*logits).data();
            let max = ld
                .iter()
                .copied()
                .filter(|v| v.is_finite())
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = ld.iter().map(|&l| (l - max).exp()).sum();
            let lse = max + z.ln();
            let mut loss = 0.0;
            for (&l, &t) in ld.iter().zip(target.data()) {
                if t != 0.0 {
                    debug_assert!(l.is_finite(), "target mass on a masked logit");
                    loss += t * (lse - l);
                }
            }
            Tensor::scalar(loss)
        }
    })
}
