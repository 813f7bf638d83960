use super::kernels::{gelu, gelu_grad, mm_nn, mm_nt, mm_tn, nll_row, sigmoid, softmax_row};
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    ScaleRows(Var, Vec<f64>),
    MulCol(Var, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MeanAxis1(Var),
    SelectAxis1 { x: Var, index: usize },
    StackAxis1(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Bmm { .. } => "bmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::ScaleRows(..) => "scale_rows",
            Op::MulCol(..) => "mul_col",
            Op::Softmax(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::MeanAxis1(..) => "mean_axis1",
            Op::SelectAxis1 { .. } => "select_axis1",
            Op::StackAxis1(..) => "stack_axis1",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Bmm { a, b, .. } => vec![*a, *b],
            Op::AddBias(a, b) | Op::MulCol(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::MulConst(x, _)
            | Op::ScaleRows(x, _)
            | Op::Softmax(x)
            | Op::Gelu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::MeanAxis1(x)
            | Op::Reshape(x)
            | Op::Sum(x) => vec![*x],
            Op::Slice { x, .. } | Op::SelectAxis1 { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Concat(v) | Op::StackAxis1(v) => v.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One recorded operation, as exposed by [`Graph::trace`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub shape: Vec<usize>,
}

/// Append-only tape. Inputs of every node precede it, so reverse insertion
/// order is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of the leaves that required them, produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn rows_of(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut [f64] {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.nodes
            .iter()
            .map(|n| TraceEntry {
                op: n.op.name(),
                inputs: n.op.inputs().iter().map(|v| v.0).collect(),
                shape: n.value.shape().to_vec(),
            })
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let name = op.name();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `[..., q] × [q, r] -> [..., r]`; leading axes are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (q, r) = (sb[0], sb[1]);
        let p = rows_of(&sa);
        let mut out = vec![0.0; p * r];
        mm_nn(self.value(a).data(), self.value(b).data(), &mut out, p, q, r);
        let mut shape = sa;
        *shape.last_mut().unwrap() = r;
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b))
    }

    /// Batched product `[B, p, q] × [B, q, r]`, or `[B, p, q] × [B, r, q]ᵀ` when
    /// `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || TensorError::Shape {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, p, q) = (sa[0], sa[1], sa[2]);
        let r = if transpose_b { sb[1] } else { sb[2] };
        let inner = if transpose_b { sb[2] } else { sb[1] };
        if inner != q {
            return Err(bad());
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * p * r];
        for i in 0..batch {
            let ab = &ad[i * p * q..(i + 1) * p * q];
            let bb = &bd[i * q * r..(i + 1) * q * r];
            let ob = &mut out[i * p * r..(i + 1) * p * r];
            if transpose_b {
                mm_nt(ab, bb, ob, p, q, r);
            } else {
                mm_nn(ab, bb, ob, p, q, r);
            }
        }
        self.push(
            Tensor::new(vec![batch, p, r], out)?,
            Op::Bmm { a, b, transpose_b },
        )
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data)?, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Adds a `[n]` bias to every last-axis row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sb.len() != 1 || sb[0] != sx[sx.len() - 1] {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let b = self.value(bias).data();
        let n = b.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        self.push(Tensor::new(sx, data)?, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::Scale(x, factor))
    }

    /// Elementwise product with a constant of identical size (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(TensorError::Shape {
                op: "mul_const",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::MulConst(x, mask))
    }

    /// Multiplies each last-axis row by a constant weight.
    pub fn scale_rows(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        if weights.len() != t.rows() {
            return Err(TensorError::Shape {
                op: "scale_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * weights[i / n])
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::ScaleRows(x, weights))
    }

    /// `x[R, n] * s[R, 1]` with `s` broadcast along each row.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.last_dim() != 1 || ts.numel() != tx.rows() {
            return Err(TensorError::Shape {
                op: "mul_col",
                lhs: tx.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let n = tx.last_dim();
        let sd = ts.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * sd[i / n])
            .collect();
        let shape = tx.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::MulCol(x, s))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        let mut out = vec![0.0; t.numel()];
        for (row, o) in t.data().chunks(n).zip(out.chunks_mut(n)) {
            softmax_row(row, o);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(x))
    }

    /// Normalizes each last-axis vector to zero mean and unit variance, then applies
    /// `gain * x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = sx[sx.len() - 1];
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: sx,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let t = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = t.rows();
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        self.push(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    fn map(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Gelu(x), x, gelu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Sigmoid(x), x, sigmoid)
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "nothing to concatenate".into(),
        })?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let n = t.last_dim();
        if len == 0 || start + len > n {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("columns {start}..{} out of width {n}", start + len),
            });
        }
        let out: Vec<f64> = t
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(Tensor::new(shape, out)?, Op::Slice { x, start })
    }

    fn rank3(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [b, l, n] => Ok((b, l, n)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                shape: self.shape(x).to_vec(),
            }),
        }
    }

    /// `[B, L, n] -> [B, n]` mean over positions.
    pub fn mean_axis1(&mut self, x: Var) -> Result<Var> {
        let (b, l, n) = self.rank3("mean_axis1", x)?;
        let d = self.value(x).data();
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            for p in 0..l {
                let row = &d[(i * l + p) * n..(i * l + p + 1) * n];
                for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / l as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::new(vec![b, n], out)?, Op::MeanAxis1(x))
    }

    /// `[B, L, n] -> [B, n]` taking position `index`.
    pub fn select_axis1(&mut self, x: Var, index: usize) -> Result<Var> {
        let (b, l, n) = self.rank3("select_axis1", x)?;
        if index >= l {
            return Err(TensorError::Invalid {
                op: "select_axis1",
                msg: format!("position {index} out of length {l}"),
            });
        }
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            out.extend_from_slice(&d[(i * l + index) * n..(i * l + index + 1) * n]);
        }
        self.push(Tensor::new(vec![b, n], out)?, Op::SelectAxis1 { x, index })
    }

    /// Stacks `L` tensors of shape `[B, n]` into `[B, L, n]`.
    pub fn stack_axis1(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Invalid {
            op: "stack_axis1",
            msg: "nothing to stack".into(),
        })?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 {
            return Err(TensorError::Rank {
                op: "stack_axis1",
                expected: 2,
                shape: s0,
            });
        }
        for &p in parts {
            self.same_shape("stack_axis1", first, p)?;
        }
        let (b, n, l) = (s0[0], s0[1], parts.len());
        let mut out = vec![0.0; b * l * n];
        for (pos, &p) in parts.iter().enumerate() {
            let d = self.value(p).data();
            for i in 0..b {
                out[(i * l + pos) * n..(i * l + pos + 1) * n]
                    .copy_from_slice(&d[i * n..(i + 1) * n]);
            }
        }
        self.push(Tensor::new(vec![b, l, n], out)?, Op::StackAxis1(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push(t, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean negative log-likelihood of `labels` under the row softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let classes = t.shape()[1];
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 1 || l >= classes) {
            return Err(TensorError::Label {
                op: "cross_entropy",
                row,
                label,
            });
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| nll_row(t.row(r), y))
            .sum();
        let loss = total / labels.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Consumes the tape and returns gradients of `loss` with respect to every
    /// leaf that requires them. Contributions from multiple paths are summed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        let ls = nodes[loss.0].value.shape();
        if nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::Rank {
                op: "backward",
                expected: 0,
                shape: ls.to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            macro_rules! slot {
                ($v:expr) => {
                    accumulate(&mut grads[$v.0], nodes[$v.0].value.numel())
                };
            }
            match &node.op {
                Op::Leaf => {
                    out[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (val(*a).shape(), val(*b).shape());
                    let (q, r) = (sb[0], sb[1]);
                    let p = rows_of(sa);
                    if needs(*a) {
                        let bd = val(*b).data();
                        mm_nt(&g, bd, slot!(a), p, r, q);
                    }
                    if needs(*b) {
                        let ad = val(*a).data();
                        mm_tn(ad, &g, slot!(b), q, p, r);
                    }
                }
                Op::Bmm { a, b, transpose_b } => {
                    let sa = val(*a).shape();
                    let (batch, p, q) = (sa[0], sa[1], sa[2]);
                    let r = node.value.shape()[2];
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    if needs(*a) {
                        let da = slot!(a);
                        for i in 0..batch {
                            let gb = &g[i * p * r..(i + 1) * p * r];
                            let bb = &bd[i * q * r..(i + 1) * q * r];
                            let dab = &mut da[i * p * q..(i + 1) * p * q];
                            if *transpose_b {
                                mm_nn(gb, bb, dab, p, r, q);
                            } else {
                                mm_nt(gb, bb, dab, p, r, q);
                            }
                        }
                    }
                    if needs(*b) {
                        let db = slot!(b);
                        for i in 0..batch {
                            let gb = &g[i * p * r..(i + 1) * p * r];
                            let ab = &ad[i * p * q..(i + 1) * p * q];
                            let dbb = &mut db[i * q * r..(i + 1) * q * r];
                            if *transpose_b {
                                mm_tn(gb, ab, dbb, r, p, q);
                            } else {
                                mm_tn(ab, gb, dbb, q, p, r);
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if needs(*a) {
                        slot!(a).iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if needs(*b) {
                        slot!(b).iter_mut().zip(&g).for_each(|(d, v)| *d += sign * v);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let bd = val(*b).data();
                        let da = slot!(a);
                        for i in 0..g.len() {
                            da[i] += g[i] * bd[i];
                        }
                    }
                    if needs(*b) {
                        let ad = val(*a).data();
                        let db = slot!(b);
                        for i in 0..g.len() {
                            db[i] += g[i] * ad[i];
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    if needs(*x) {
                        slot!(x).iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if needs(*bias) {
                        let db = slot!(bias);
                        let n = db.len();
                        for (i, v) in g.iter().enumerate() {
                            db[i % n] += v;
                        }
                    }
                }
                Op::Scale(x, f) => {
                    slot!(x).iter_mut().zip(&g).for_each(|(d, v)| *d += f * v);
                }
                Op::MulConst(x, mask) => {
                    let dx = slot!(x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
                Op::ScaleRows(x, w) => {
                    let n = val(*x).last_dim();
                    let dx = slot!(x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * w[i / n];
                    }
                }
                Op::MulCol(x, s) => {
                    let n = val(*x).last_dim();
                    if needs(*x) {
                        let sd = val(*s).data();
                        let dx = slot!(x);
                        for i in 0..g.len() {
                            dx[i] += g[i] * sd[i / n];
                        }
                    }
                    if needs(*s) {
                        let xd = val(*x).data();
                        let ds = slot!(s);
                        for i in 0..g.len() {
                            ds[i / n] += g[i] * xd[i];
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let n = node.value.last_dim();
                    let dx = slot!(x);
                    for r in 0..y.len() / n {
                        let (ys, gs) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = node.value.last_dim();
                    let gd = val(*gain).data();
                    if needs(*bias) {
                        let db = slot!(bias);
                        for (i, v) in g.iter().enumerate() {
                            db[i % d] += v;
                        }
                    }
                    if needs(*gain) {
                        let dg = slot!(gain);
                        for i in 0..g.len() {
                            dg[i % d] += g[i] * xhat[i];
                        }
                    }
                    if needs(*x) {
                        let dx = slot!(x);
                        let mut dxhat = vec![0.0; d];
                        for (r, &is) in inv_std.iter().enumerate() {
                            let base = r * d;
                            for j in 0..d {
                                dxhat[j] = g[base + j] * gd[j];
                            }
                            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                            let mean_dx = (0..d).map(|j| dxhat[j] * xhat[base + j]).sum::<f64>()
                                / d as f64;
                            for j in 0..d {
                                dx[base + j] += is * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                            }
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xd = val(*x).data();
                    let dx = slot!(x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * gelu_grad(xd[i]);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx = slot!(x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let dx = slot!(x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Concat(parts) => {
                    let total = node.value.last_dim();
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = val(*p).last_dim();
                        if needs(*p) {
                            let dp = slot!(p);
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                for (d, v) in dp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *d += v;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice { x, start } => {
                    let n = val(*x).last_dim();
                    let len = node.value.last_dim();
                    let dx = slot!(x);
                    for (r, gs) in g.chunks(len).enumerate() {
                        for (d, v) in dx[r * n + start..r * n + start + len].iter_mut().zip(gs) {
                            *d += v;
                        }
                    }
                }
                Op::MeanAxis1(x) => {
                    let s = val(*x).shape();
                    let (b, l, n) = (s[0], s[1], s[2]);
                    let inv = 1.0 / l as f64;
                    let dx = slot!(x);
                    for i in 0..b {
                        for p in 0..l {
                            for j in 0..n {
                                dx[(i * l + p) * n + j] += g[i * n + j] * inv;
                            }
                        }
                    }
                }
                Op::SelectAxis1 { x, index } => {
                    let s = val(*x).shape();
                    let (b, l, n) = (s[0], s[1], s[2]);
                    let dx = slot!(x);
                    for i in 0..b {
                        let base = (i * l + index) * n;
                        for j in 0..n {
                            dx[base + j] += g[i * n + j];
                        }
                    }
                }
                Op::StackAxis1(parts) => {
                    let s = node.value.shape();
                    let (b, l, n) = (s[0], s[1], s[2]);
                    for (pos, p) in parts.iter().enumerate() {
                        if needs(*p) {
                            let dp = slot!(p);
                            for i in 0..b {
                                let base = (i * l + pos) * n;
                                for j in 0..n {
                                    dp[i * n + j] += g[base + j];
                                }
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    slot!(x).iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                Op::Sum(x) => {
                    let g0 = g[0];
                    slot!(x).iter_mut().for_each(|d| *d += g0);
                }
                Op::CrossEntropy { logits, labels } => {
                    let t = val(*logits);
                    let n = t.last_dim();
                    let scale = g[0] / labels.len() as f64;
                    let dl = slot!(logits);
                    let mut probs = vec![0.0; n];
                    for (r, &y) in labels.iter().enumerate() {
                        softmax_row(t.row(r), &mut probs);
                        for j in 0..n {
                            let target = if j == y { 1.0 } else { 0.0 };
                            dl[r * n + j] += scale * (probs[j] - target);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}
