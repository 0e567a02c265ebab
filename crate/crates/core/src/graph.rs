//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the parents (plus any saved intermediates) its backward rule
//! needs. Because nodes can only reference earlier nodes the tape is already
//! in topological order, so [`Graph::backward`] is a single reverse sweep
//! that visits each node once. A graph is built fresh for every forward pass
//! and is confined to the thread that built it.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};
use crate::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Transpose,
    AddBias,
    Concat,
    Slice,
    Sum,
    Mean,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    LayerNorm,
    Conv1d,
    EmbedAffine,
    PoolRows,
    RepeatRows,
    Reshape,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::AddBias,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Conv1d,
        OpKind::EmbedAffine,
        OpKind::PoolRows,
        OpKind::RepeatRows,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::AddBias => "add_bias",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Softmax => "softmax_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Conv1d => "conv1d",
            OpKind::EmbedAffine => "embed_affine",
            OpKind::PoolRows => "downsample",
            OpKind::RepeatRows => "upsample",
            OpKind::Reshape => "reshape",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::DIFFERENTIABLE
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown op '{s}'")))
    }
}

/// Parents and saved forward intermediates of a node.
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        seq_len: usize,
        cols: Vec<f64>,
    },
    EmbedAffine {
        x: Var,
        w: Var,
        b: Var,
    },
    PoolRows {
        x: Var,
        k: usize,
    },
    RepeatRows {
        x: Var,
        k: usize,
    },
    Reshape(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::EmbedAffine { .. } => OpKind::EmbedAffine,
            Op::PoolRows { .. } => OpKind::PoolRows,
            Op::RepeatRows { .. } => OpKind::RepeatRows,
            Op::Reshape(..) => OpKind::Reshape,
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose backward rule for `kind` is deliberately wrong.
    /// Used as a negative control for gradient checking.
    pub fn with_fault(kind: OpKind) -> Self {
        Graph {
            fault: Some(kind),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Gradient of the last backward loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    /// Moves the gradient buffer out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, rg, op)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push_op(v, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push_op(v, &[a, b], Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push_op(v, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x * c);
        self.push_op(v, &[a], Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        Ok(self.push_op(Tensor::from_parts(vec![m, n], out), &[a, b], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push_op(v, &[a], Op::Transpose(a))
    }

    /// Adds a length-`c` bias to every row of an `r×c` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = tx.cols();
        if tx.shape().len() != 2 || tb.numel() != c {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let bias = tb.data();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let v = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push_op(v, &[x, b], Op::AddBias(x, b)))
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        contract!(!parts.is_empty(), "concat of zero tensors");
        contract!(axis < 2, "concat axis must be 0 or 1, got {axis}");
        let first = self.shape(parts[0]).to_vec();
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == 2 && first.len() == 2 && s[1 - axis] == first[1 - axis];
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(total * first[1]);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_parts(vec![total, first[1]], data)
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::from_parts(vec![rows, total], data)
        };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        Ok(self.push_op(value, parts, op))
    }

    /// Copies `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        contract!(s.len() == 2 && axis < 2, "slice needs a matrix and axis 0 or 1");
        contract!(
            len > 0 && start + len <= s[axis],
            "slice [{start}, {}) out of bounds for axis {axis} of {s:?}",
            start + len
        );
        let t = self.value(x);
        let value = if axis == 0 {
            let c = s[1];
            Tensor::from_parts(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(s[0] * len);
            for r in 0..s[0] {
                data.extend_from_slice(&t.row(r)[start..start + len]);
            }
            Tensor::from_parts(vec![s[0], len], data)
        };
        Ok(self.push_op(value, &[x], Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push_op(v, &[x], Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push_op(Tensor::scalar(s), &[x], Op::Mean(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map(x, |a| a.max(0.0));
        self.push_op(v, &[x], Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid);
        self.push_op(v, &[x], Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::tanh);
        self.push_op(v, &[x], Op::Tanh(x))
    }

    /// Row-wise softmax with max subtraction. NaN inputs propagate to their row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        contract!(t.shape().len() == 2, "softmax_rows needs a matrix, got {:?}", t.shape());
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        Ok(self.push_op(v, &[x], Op::Softmax(x)))
    }

    /// Per-row normalisation to zero mean and unit population variance,
    /// followed by the affine `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        contract!(tx.shape().len() == 2, "layer_norm needs a matrix");
        let q = tx.cols();
        contract!(q >= 2, "layer_norm needs at least 2 features, got {q}");
        if tg.numel() != q || tb.numel() != q {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let rows = tx.rows();
        let mut normalized = Vec::with_capacity(rows * q);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * q);
        for r in 0..rows {
            let row = tx.row(r);
            let mu = row.iter().sum::<f64>() / q as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / q as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mu) * is;
                normalized.push(n);
                out.push(n * tg.data()[j] + tb.data()[j]);
            }
        }
        let v = Tensor::from_parts(tx.shape().to_vec(), out);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        };
        Ok(self.push_op(v, &[x, gain, bias], op))
    }

    /// Kernel-3 "same" convolution over time.
    ///
    /// `x` is `(seq_len·batch) × c_in`, time-major: row `τ·batch + b` holds
    /// step `τ` of sequence `b`. `w` is `(3·c_in) × c_out`, where the row block
    /// `k·c_in..(k+1)·c_in` weights step `τ + k − 1`. Out-of-range steps are
    /// zero. Output is `(seq_len·batch) × c_out`; add a bias separately.
    pub fn conv1d(&mut self, x: Var, w: Var, seq_len: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (rows, c_in) = (tx.rows(), tx.cols());
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tw.rows() != 3 * c_in {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        contract!(
            seq_len > 0 && rows % seq_len == 0,
            "conv1d: {rows} rows is not a multiple of seq_len {seq_len}"
        );
        let batch = rows / seq_len;
        let c_out = tw.cols();
        let width = 3 * c_in;
        let mut cols = vec![0.0; rows * width];
        for tau in 0..seq_len {
            for b in 0..batch {
                let dst = &mut cols[(tau * batch + b) * width..][..width];
                for k in 0..3 {
                    let src_t = tau as isize + k as isize - 1;
                    if src_t < 0 || src_t >= seq_len as isize {
                        continue;
                    }
                    let src = tx.row(src_t as usize * batch + b);
                    dst[k * c_in..(k + 1) * c_in].copy_from_slice(src);
                }
            }
        }
        let mut out = vec![0.0; rows * c_out];
        gemm_acc(rows, width, c_out, &cols, tw.data(), &mut out);
        let v = Tensor::from_parts(vec![rows, c_out], out);
        let op = Op::Conv1d { x, w, seq_len, cols };
        Ok(self.push_op(v, &[x, w], op))
    }

    /// Maps a scalar sequence `x` (`t` or `t×1`) to `t×d` via `x_i·w_j + b_j`.
    pub fn embed_affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let d = tw.numel();
        if tx.cols() != 1 && tx.rows() != 1 || tb.numel() != d {
            return Err(Error::Shape {
                op: "embed_affine",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let t = tx.numel();
        let mut out = Vec::with_capacity(t * d);
        for &xi in tx.data() {
            out.extend(tw.data().iter().zip(tb.data()).map(|(w, b)| xi * w + b));
        }
        let v = Tensor::from_parts(vec![t, d], out);
        Ok(self.push_op(v, &[x, w, b], Op::EmbedAffine { x, w, b }))
    }

    /// Non-overlapping mean pooling over groups of `k` rows; a trailing
    /// partial group is averaged over its actual length.
    pub fn pool_rows(&mut self, x: Var, k: usize) -> Result<Var> {
        contract!(k >= 1, "downsample factor must be >= 1, got {k}");
        let t = self.value(x);
        contract!(t.shape().len() == 2, "downsample needs a matrix");
        let (rows, c) = (t.rows(), t.cols());
        let out_rows = rows.div_ceil(k);
        let mut out = vec![0.0; out_rows * c];
        for g in 0..out_rows {
            let (lo, hi) = (g * k, ((g + 1) * k).min(rows));
            let dst = &mut out[g * c..(g + 1) * c];
            for r in lo..hi {
                for (o, v) in dst.iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            let n = (hi - lo) as f64;
            dst.iter_mut().for_each(|o| *o /= n);
        }
        let v = Tensor::from_parts(vec![out_rows, c], out);
        Ok(self.push_op(v, &[x], Op::PoolRows { x, k }))
    }

    /// Repeats each row `k` times and keeps the first `target` rows.
    pub fn repeat_rows(&mut self, x: Var, k: usize, target: usize) -> Result<Var> {
        contract!(k >= 1, "upsample factor must be >= 1, got {k}");
        let t = self.value(x);
        contract!(t.shape().len() == 2, "upsample needs a matrix");
        contract!(
            target > 0 && t.rows() == target.div_ceil(k),
            "upsample: {} rows cannot expand by {k} to {target}",
            t.rows()
        );
        let c = t.cols();
        let mut out = Vec::with_capacity(target * c);
        for i in 0..target {
            out.extend_from_slice(t.row(i / k));
        }
        let v = Tensor::from_parts(vec![target, c], out);
        Ok(self.push_op(v, &[x], Op::RepeatRows { x, k }))
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Back-propagates from a scalar `loss`, populating gradients of every
    /// reachable node that requires them. Gradients from multiple consumers
    /// are summed. A graph supports a single backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        contract!(!self.backward_done, "backward already ran on this graph");
        contract!(
            self.value(loss).numel() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(mut upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            if self.fault == Some(self.nodes[i].op.kind()) {
                upstream.iter_mut().for_each(|g| *g *= 1.5);
            }
            let contributions = self.backward_rule(i, &upstream);
            self.nodes[i].grad = Some(upstream);
            for (parent, g) in contributions {
                self.accumulate(parent, g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), node.value.numel());
        match &mut node.grad {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
            None => node.grad = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_rule(&self, i: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.iter().map(|g| -g).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    out.push((*a, dy.iter().zip(vb).map(|(g, v)| g * v).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, dy.iter().zip(va).map(|(g, v)| g * v).collect()));
                }
            }
            Op::Scale(a, c) => out.push((*a, dy.iter().map(|g| g * c).collect())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm_a_bt_acc(m, n, k, dy, tb.data(), &mut da);
                    out.push((*a, da));
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm_at_b_acc(k, m, n, ta.data(), dy, &mut db);
                    out.push((*b, db));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let g = Tensor::from_parts(vec![r, c], dy.to_vec()).transpose();
                out.push((*a, g.into_data()));
            }
            Op::AddBias(x, b) => {
                out.push((*x, dy.to_vec()));
                if self.wants(*b) {
                    let c = node.value.cols();
                    let mut db = vec![0.0; c];
                    for row in dy.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    out.push((*b, db));
                }
            }
            Op::Concat { parts, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let (pr, pc) = (tp.rows(), tp.cols());
                    if self.wants(p) {
                        let g = if *axis == 0 {
                            dy[offset * pc..(offset + pr) * pc].to_vec()
                        } else {
                            let mut g = Vec::with_capacity(pr * pc);
                            for r in 0..pr {
                                g.extend_from_slice(&dy[r * total_cols + offset..][..pc]);
                            }
                            g
                        };
                        out.push((p, g));
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { x, axis, start } => {
                let tx = self.value(*x);
                let (xr, xc) = (tx.rows(), tx.cols());
                let mut g = vec![0.0; xr * xc];
                if *axis == 0 {
                    g[start * xc..start * xc + dy.len()].copy_from_slice(dy);
                } else {
                    let len = node.value.cols();
                    for r in 0..xr {
                        g[r * xc + start..][..len].copy_from_slice(&dy[r * len..][..len]);
                    }
                }
                out.push((*x, g));
            }
            Op::Reshape(x) => out.push((*x, dy.to_vec())),
            Op::Sum(x) => out.push((*x, vec![dy[0]; self.value(*x).numel()])),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                out.push((*x, vec![dy[0] / n as f64; n]));
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                out.push((
                    *x,
                    dy.iter()
                        .zip(vx)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                ));
            }
            Op::Sigmoid(x) => out.push((*x, dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())),
            Op::Tanh(x) => out.push((*x, dy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect())),
            Op::Softmax(x) => {
                let c = node.value.cols();
                let mut g = Vec::with_capacity(dy.len());
                for (yr, gr) in y.chunks(c).zip(dy.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    g.extend(yr.iter().zip(gr).map(|(s, d)| s * (d - dot)));
                }
                out.push((*x, g));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let q = node.value.cols();
                let gv = self.value(*gain).data();
                if self.wants(*gain) {
                    let mut dg = vec![0.0; q];
                    for (nr, gr) in normalized.chunks(q).zip(dy.chunks(q)) {
                        for j in 0..q {
                            dg[j] += gr[j] * nr[j];
                        }
                    }
                    out.push((*gain, dg));
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; q];
                    for gr in dy.chunks(q) {
                        db.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                    out.push((*bias, db));
                }
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(dy.len());
                    let qf = q as f64;
                    for ((nr, gr), is) in normalized.chunks(q).zip(dy.chunks(q)).zip(inv_std) {
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(nr).map(|(a, b)| a * b).sum();
                        dx.extend(dxhat.iter().zip(nr).map(|(d, n)| is / qf * (qf * d - s1 - n * s2)));
                    }
                    out.push((*x, dx));
                }
            }
            Op::Conv1d { x, w, seq_len, cols } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (rows, c_in, c_out) = (tx.rows(), tx.cols(), tw.cols());
                let width = 3 * c_in;
                if self.wants(*w) {
                    let mut dw = vec![0.0; width * c_out];
                    gemm_at_b_acc(width, rows, c_out, cols, dy, &mut dw);
                    out.push((*w, dw));
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; rows * width];
                    gemm_a_bt_acc(rows, c_out, width, dy, tw.data(), &mut dcols);
                    let batch = rows / seq_len;
                    let mut dx = vec![0.0; rows * c_in];
                    for tau in 0..*seq_len {
                        for b in 0..batch {
                            let src = &dcols[(tau * batch + b) * width..][..width];
                            for k in 0..3 {
                                let st = tau as isize + k as isize - 1;
                                if st < 0 || st >= *seq_len as isize {
                                    continue;
                                }
                                let dst = &mut dx[(st as usize * batch + b) * c_in..][..c_in];
                                dst.iter_mut()
                                    .zip(&src[k * c_in..(k + 1) * c_in])
                                    .for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::EmbedAffine { x, w, b } => {
                let (vx, vw) = (self.value(*x).data(), self.value(*w).data());
                let d = vw.len();
                if self.wants(*x) {
                    out.push((
                        *x,
                        dy.chunks(d)
                            .map(|r| r.iter().zip(vw).map(|(g, w)| g * w).sum())
                            .collect(),
                    ));
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; d];
                    for (r, xi) in dy.chunks(d).zip(vx) {
                        dw.iter_mut().zip(r).for_each(|(a, g)| *a += g * xi);
                    }
                    out.push((*w, dw));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; d];
                    for r in dy.chunks(d) {
                        db.iter_mut().zip(r).for_each(|(a, g)| *a += g);
                    }
                    out.push((*b, db));
                }
            }
            Op::PoolRows { x, k } => {
                let tx = self.value(*x);
                let (rows, c) = (tx.rows(), tx.cols());
                let mut g = vec![0.0; rows * c];
                for r in 0..rows {
                    let grp = r / k;
                    let n = (((grp + 1) * k).min(rows) - grp * k) as f64;
                    g[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(&dy[grp * c..(grp + 1) * c])
                        .for_each(|(a, d)| *a = d / n);
                }
                out.push((*x, g));
            }
            Op::RepeatRows { x, k } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut g = vec![0.0; tx.numel()];
                for (i, row) in dy.chunks(c).enumerate() {
                    g[(i / k) * c..(i / k + 1) * c]
                        .iter_mut()
                        .zip(row)
                        .for_each(|(a, d)| *a += d);
                }
                out.push((*x, g));
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
