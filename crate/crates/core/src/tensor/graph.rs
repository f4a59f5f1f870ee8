use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Training enables dropout; evaluation makes it the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: T },
    Concat { parts: Vec<NodeId>, axis: usize },
    Reshape(NodeId),
    SliceCols { x: NodeId, start: usize },
    Gather { x: NodeId, index: Vec<usize> },
    Softmax { x: NodeId, axis: usize },
    Relu(NodeId),
    Elu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LayerNorm { x: NodeId, rstd: Vec<T> },
    Dropout { x: NodeId, mask: Vec<T> },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    LstmCell { gates: NodeId, c: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<T> },
    Sum(NodeId),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::Gather { .. } => "gather",
            Op::Softmax { .. } => "softmax",
            Op::Relu(_) => "relu",
            Op::Elu(_) => "elu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::MaxPool { .. } => "max_pool",
            Op::LstmCell { .. } => "lstm_cell",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradient of a scalar loss with respect to every parameter of a store.
/// Parameters that did not take part in the computation get zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Self {
            grads: params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn by_name(&self, params: &ParamStore<T>, name: &str) -> Result<&Tensor<T>> {
        Ok(self.get(params.id(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: T) {
        for g in &mut self.grads {
            g.scale(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.all_finite())
    }
}

/// A define-by-run expression graph. Each primitive evaluates its forward
/// rule immediately and records what the adjoint rule needs, so node ids
/// are already a topological order.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
    mode: Mode,
    rng: ChaCha8Rng,
    check_finite: bool,
    branch_hash: Option<u64>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            mode,
            rng: ChaCha8Rng::seed_from_u64(0),
            check_finite: cfg!(debug_assertions),
            branch_hash: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Records a hash of every piecewise branch taken (ReLU/ELU sign,
    /// max-pool winner). Two evaluations with equal signatures lie on the
    /// same smooth piece.
    pub fn with_branch_tracking(mut self) -> Self {
        self.branch_hash = Some(0xcbf2_9ce4_8422_2325);
        self
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branch_hash
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id.0,
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(id)
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    fn mix(&mut self, bits: impl Iterator<Item = u64>) {
        if let Some(h) = self.branch_hash.as_mut() {
            for b in bits {
                *h ^= b;
                *h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    fn rank2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("{op} expects a rank-2 tensor"),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(Op::Input, value, false)
    }

    /// The leaf node for a named parameter; repeated requests return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let pid = self.params.id(name)?;
        if let Some(id) = self.param_nodes[pid.0] {
            return Ok(id);
        }
        let value = self.params.get(pid).clone();
        let id = self.push(Op::Param(pid), value, true)?;
        self.param_nodes[pid.0] = Some(id);
        Ok(id)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    /// `x · W + b` using parameters `{name}.w` and, when present, `{name}.b`.
    pub fn linear(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.param(&format!("{name}.w"))?;
        let y = self.matmul(x, w)?;
        let bias = format!("{name}.b");
        if self.params.contains(&bias) {
            let b = self.param(&bias)?;
            self.add(y, b)
        } else {
            Ok(y)
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        mm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.grad_flag(&[a, b]);
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2("matmul_nt", a)?;
        let (n, k2) = self.rank2("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: vec![m, k],
                right: vec![n, k2],
            });
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        let ng = self.grad_flag(&[a, b]);
        self.push(Op::MatMulNT(a, b), Tensor::new(vec![m, n], out)?, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        let ng = self.grad_flag(&[a, b]);
        self.push(Op::Add(a, b), out, ng)
    }

    /// Elementwise product with rank-2 broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let ng = self.grad_flag(&[a, b]);
        self.push(Op::Mul(a, b), out, ng)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let (s, t) = (T::of(scale), T::of(shift));
        let out = self.value(x).map(|v| s * v + t);
        let ng = self.grad_flag(&[x]);
        self.push(Op::Affine { x, scale: s }, out, ng)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat inputs"));
        }
        if axis > 1 {
            return Err(Error::Config(format!("concat axis {axis} on rank-2 tensors")));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.rank2("concat", p))
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        for &(r, c) in &dims[1..] {
            if (axis == 1 && r != r0) || (axis == 0 && c != c0) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: vec![r0, c0],
                    right: vec![r, c],
                });
            }
        }
        let out = if axis == 1 {
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            Tensor::new(vec![r0, total], out)?
        } else {
            let total: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(total * c0);
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![total, c0], out)?
        };
        let ng = self.grad_flag(parts);
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            out,
            ng,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.grad_flag(&[x]);
        self.push(Op::Reshape(x), out, ng)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.rank2("slice_cols", x)?;
        if start + len > c || len == 0 {
            return Err(Error::IndexOutOfRange {
                what: "slice_cols",
                index: start + len,
                len: c,
            });
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v.row_slice(i)[start..start + len]);
        }
        let ng = self.grad_flag(&[x]);
        self.push(Op::SliceCols { x, start }, Tensor::new(vec![r, len], out)?, ng)
    }

    /// Row gather; this is also the embedding-lookup primitive.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let (r, c) = self.rank2("gather", x)?;
        if index.is_empty() {
            return Err(Error::Empty("gather index"));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(Error::IndexOutOfRange {
                    what: "gather",
                    index: i,
                    len: r,
                });
            }
            out.extend_from_slice(v.row_slice(i));
        }
        let ng = self.grad_flag(&[x]);
        self.push(
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            Tensor::new(vec![index.len(), c], out)?,
            ng,
        )
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.gather_rows(table, ids)
    }

    /// Max-subtracted softmax along `axis` of a rank-2 tensor.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = self.rank2("softmax", x)?;
        let mut out = self.value(x).data().to_vec();
        for_lanes(r, c, axis, |idx| {
            let m = idx.clone().map(|i| out[i]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for i in idx.clone() {
                out[i] = (out[i] - m).exp();
                z += out[i];
            }
            for i in idx {
                out[i] = out[i] / z;
            }
        });
        let ng = self.grad_flag(&[x]);
        self.push(Op::Softmax { x, axis }, Tensor::new(vec![r, c], out)?, ng)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let signs: Vec<u64> = if self.branch_hash.is_some() {
            self.value(x).data().iter().map(|v| (*v > T::zero()) as u64).collect()
        } else {
            Vec::new()
        };
        self.mix(signs.into_iter());
        let ng = self.grad_flag(&[x]);
        self.push(Op::Relu(x), out, ng)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        let signs: Vec<u64> = if self.branch_hash.is_some() {
            self.value(x).data().iter().map(|v| (*v > T::zero()) as u64).collect()
        } else {
            Vec::new()
        };
        self.mix(signs.into_iter());
        let ng = self.grad_flag(&[x]);
        self.push(Op::Elu(x), out, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.tanh());
        let ng = self.grad_flag(&[x]);
        self.push(Op::Tanh(x), out, ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(sigmoid);
        let ng = self.grad_flag(&[x]);
        self.push(Op::Sigmoid(x), out, ng)
    }

    /// Normalises each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let c = *v.shape().last().expect("rank >= 1");
        let r = v.len() / c;
        let eps = T::of(LAYER_NORM_EPS);
        let n = T::of(c as f64);
        let mut out = v.data().to_vec();
        let mut rstd = Vec::with_capacity(r);
        for row in out.chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
            let s = (var + eps).sqrt().recip();
            for a in row.iter_mut() {
                *a = (*a - mean) * s;
            }
            rstd.push(s);
        }
        let shape = v.shape().to_vec();
        let ng = self.grad_flag(&[x]);
        self.push(Op::LayerNorm { x, rstd }, Tensor::new(shape, out)?, ng)
    }

    /// Inverted dropout; the identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if self.mode == Mode::Eval || rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be < 1")));
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let v = self.value(x);
        let out: Vec<T> = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = v.shape().to_vec();
        let ng = self.grad_flag(&[x]);
        self.push(Op::Dropout { x, mask }, Tensor::new(shape, out)?, ng)
    }

    /// Max along `axis`; the reduced axis is kept with size 1. Ties resolve
    /// to the lowest index.
    pub fn max_pool(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = self.rank2("max_pool", x)?;
        let d = self.value(x).data();
        let lanes = if axis == 0 { c } else { r };
        let mut out = Vec::with_capacity(lanes);
        let mut argmax = Vec::with_capacity(lanes);
        for_lanes(r, c, axis, |mut idx| {
            let first = idx.next().expect("non-empty lane");
            let (mut best, mut bi) = (d[first], first);
            for i in idx {
                if d[i] > best {
                    best = d[i];
                    bi = i;
                }
            }
            out.push(best);
            argmax.push(bi);
        });
        let shape = if axis == 0 { vec![1, c] } else { vec![r, 1] };
        self.mix(argmax.iter().map(|&i| i as u64));
        let ng = self.grad_flag(&[x]);
        self.push(Op::MaxPool { x, argmax }, Tensor::new(shape, out)?, ng)
    }

    /// Fused LSTM cell. `gates` holds pre-activations `[n, 4H]` in the
    /// order input, forget, candidate, output; `c` is the previous cell
    /// state `[n, H]`. The output is `[n, 2H]` = `[h' ; c']`.
    pub fn lstm_cell(&mut self, gates: NodeId, c: NodeId) -> Result<NodeId> {
        let (n, g4) = self.rank2("lstm_cell", gates)?;
        let (n2, h) = self.rank2("lstm_cell", c)?;
        if n != n2 || g4 != 4 * h {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell",
                left: vec![n, g4],
                right: vec![n2, h],
            });
        }
        let (gd, cd) = (self.value(gates).data(), self.value(c).data());
        let mut out = vec![T::zero(); n * 2 * h];
        for r in 0..n {
            let g = &gd[r * 4 * h..(r + 1) * 4 * h];
            for k in 0..h {
                let i = sigmoid(g[k]);
                let f = sigmoid(g[h + k]);
                let cand = g[2 * h + k].tanh();
                let o = sigmoid(g[3 * h + k]);
                let cn = f * cd[r * h + k] + i * cand;
                out[r * 2 * h + k] = o * cn.tanh();
                out[r * 2 * h + h + k] = cn;
            }
        }
        let ng = self.grad_flag(&[gates, c]);
        self.push(
            Op::LstmCell { gates, c },
            Tensor::new(vec![n, 2 * h], out)?,
            ng,
        )
    }

    /// Mean over rows of `-log softmax(logits)[target]`, computed from raw
    /// logits with a fused log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (n, l) = self.rank2("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: vec![n, l],
                right: vec![targets.len()],
            });
        }
        let d = self.value(logits).data();
        let mut probs = vec![T::zero(); n * l];
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= l {
                return Err(Error::IndexOutOfRange {
                    what: "answer vocabulary",
                    index: t,
                    len: l,
                });
            }
            let row = &d[r * l..(r + 1) * l];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[t];
            for k in 0..l {
                probs[r * l + k] = (row[k] - lse).exp();
            }
        }
        let loss = total / T::of(n as f64);
        let ng = self.grad_flag(&[logits]);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            ng,
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum();
        let ng = self.grad_flag(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward(loss.0));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => out.grads[pid.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.needs(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        mm_nt(g.data(), bv.data(), &mut ga, m, n, k);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![T::zero(); k * n];
                        mm_tn(av.data(), g.data(), &mut gb, m, k, n);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    if self.needs(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        mm_nn(g.data(), bv.data(), &mut ga, m, n, k);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![T::zero(); n * k];
                        mm_tn(g.data(), av.data(), &mut gb, m, n, k);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    for &x in [a, b] {
                        if self.needs(x) {
                            let r = reduce_to(&g, self.shape(x));
                            self.acc(&mut grads, x, r);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (&x, &y) in [(a, b), (b, a)] {
                        if self.needs(x) {
                            let prod = broadcast("mul", &g, self.value(y), |p, q| p * q)?;
                            let r = reduce_to(&prod, self.shape(x));
                            self.acc(&mut grads, x, r);
                        }
                    }
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    self.acc(&mut grads, *x, g.data().iter().map(|&v| v * s).collect());
                }
                Op::Concat { parts, axis } => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = (self.value(p).rows(), self.value(p).cols());
                        if self.needs(p) {
                            let gp = if *axis == 1 {
                                (0..pr)
                                    .flat_map(|i| {
                                        g.data()[i * cols + offset..i * cols + offset + pc]
                                            .iter()
                                            .copied()
                                    })
                                    .collect()
                            } else {
                                g.data()[offset * cols..(offset + pr) * cols].to_vec()
                            };
                            self.acc(&mut grads, p, gp);
                        }
                        offset += if *axis == 1 { pc } else { pr };
                    }
                }
                Op::Reshape(x) => self.acc(&mut grads, *x, g.data().to_vec()),
                Op::SliceCols { x, start } => {
                    let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                    let len = g.cols();
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len].copy_from_slice(g.row_slice(i));
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::Gather { x, index } => {
                    let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                    let mut gx = vec![T::zero(); r * c];
                    for (k, &i) in index.iter().enumerate() {
                        for (dst, &src) in gx[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                            *dst += src;
                        }
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let gd = g.data();
                    let mut gx = vec![T::zero(); r * c];
                    for_lanes(r, c, *axis, |idx| {
                        let dotp: T = idx.clone().map(|i| gd[i] * y[i]).sum();
                        for i in idx {
                            gx[i] = y[i] * (gd[i] - dotp);
                        }
                    });
                    self.acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let gx = g
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    self.acc(&mut grads, *x, gx);
                }
                Op::Elu(x) => {
                    let xv = self.value(*x).data();
                    let y = node.value.data();
                    let gx = g
                        .data()
                        .iter()
                        .zip(xv.iter().zip(y))
                        .map(|(&gi, (&xi, &yi))| {
                            if xi > T::zero() {
                                gi
                            } else {
                                gi * (yi + T::one())
                            }
                        })
                        .collect();
                    self.acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = g
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| gi * (T::one() - yi * yi))
                        .collect();
                    self.acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = g
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                        .collect();
                    self.acc(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, rstd } => {
                    let y = node.value.data();
                    let c = *node.value.shape().last().expect("rank >= 1");
                    let n = T::of(c as f64);
                    let mut gx = vec![T::zero(); y.len()];
                    for (r, s) in rstd.iter().enumerate() {
                        let gy = &g.data()[r * c..(r + 1) * c];
                        let yr = &y[r * c..(r + 1) * c];
                        let mg = gy.iter().copied().sum::<T>() / n;
                        let mgy = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for k in 0..c {
                            gx[r * c + k] = *s * (gy[k] - mg - yr[k] * mgy);
                        }
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => {
                    let gx = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    self.acc(&mut grads, *x, gx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    for (k, &i) in argmax.iter().enumerate() {
                        gx[i] += g.data()[k];
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::LstmCell { gates, c } => {
                    let gd = self.value(*gates).data();
                    let cd = self.value(*c).data();
                    let y = node.value.data();
                    let h = self.value(*c).cols();
                    let n = self.value(*c).rows();
                    let mut ggates = vec![T::zero(); n * 4 * h];
                    let mut gc = vec![T::zero(); n * h];
                    for r in 0..n {
                        let gr = &gd[r * 4 * h..(r + 1) * 4 * h];
                        for k in 0..h {
                            let i = sigmoid(gr[k]);
                            let f = sigmoid(gr[h + k]);
                            let cand = gr[2 * h + k].tanh();
                            let o = sigmoid(gr[3 * h + k]);
                            let cn = y[r * 2 * h + h + k];
                            let tc = cn.tanh();
                            let dh = g.data()[r * 2 * h + k];
                            let dcn = g.data()[r * 2 * h + h + k] + dh * o * (T::one() - tc * tc);
                            let base = r * 4 * h;
                            ggates[base + k] = dcn * cand * i * (T::one() - i);
                            ggates[base + h + k] = dcn * cd[r * h + k] * f * (T::one() - f);
                            ggates[base + 2 * h + k] = dcn * i * (T::one() - cand * cand);
                            ggates[base + 3 * h + k] = dh * tc * o * (T::one() - o);
                            gc[r * h + k] = dcn * f;
                        }
                    }
                    if self.needs(*gates) {
                        self.acc(&mut grads, *gates, ggates);
                    }
                    if self.needs(*c) {
                        self.acc(&mut grads, *c, gc);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let l = self.value(*logits).cols();
                    let scale = g.data()[0] / T::of(targets.len() as f64);
                    let mut gx = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gx[r * l + t] -= T::one();
                    }
                    for v in &mut gx {
                        *v *= scale;
                    }
                    self.acc(&mut grads, *logits, gx);
                }
                Op::Sum(x) => {
                    let gx = vec![g.data()[0]; self.value(*x).len()];
                    self.acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Vec<T>) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.shape(id).to_vec();
                *slot = Some(Tensor::new(shape, g).expect("gradient shape matches value"));
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// out[m,n] += a[m,k] · b[k,n]
fn mm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += a[m,n] · b[k,n]ᵀ
fn mm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(ar, &b[p * n..(p + 1) * n]);
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · b[m,n]
fn mm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

/// Calls `f` once per lane of a rank-2 buffer: columns for axis 0, rows
/// for axis 1. The iterator yields flat indices.
fn for_lanes<F>(r: usize, c: usize, axis: usize, mut f: F)
where
    F: FnMut(std::iter::StepBy<std::ops::Range<usize>>),
{
    if axis == 0 {
        for j in 0..c {
            f((j..j + r * c).step_by(c));
        }
    } else {
        for i in 0..r {
            f((i * c..(i + 1) * c).step_by(1));
        }
    }
}

fn broadcast<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let mismatch = || Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    };
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(mismatch());
    }
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    let ok = |x: usize, y: usize| x == y || x == 1 || y == 1;
    if !ok(ra, rb) || !ok(ca, cb) {
        return Err(mismatch());
    }
    let (r, c) = (ra.max(rb), ca.max(cb));
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let (ia, ib) = (if ra == 1 { 0 } else { i }, if rb == 1 { 0 } else { i });
        for j in 0..c {
            let (ja, jb) = (if ca == 1 { 0 } else { j }, if cb == 1 { 0 } else { j });
            out.push(f(a.data()[ia * ca + ja], b.data()[ib * cb + jb]));
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Vec<T> {
    if g.shape() == shape {
        return g.data().to_vec();
    }
    let (r, c) = (g.rows(), g.cols());
    let (tr, tc) = (shape[0], shape[1]);
    let mut out = vec![T::zero(); tr * tc];
    for i in 0..r {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += g.data()[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::row(vec![2.0, 3.0])).unwrap();
        p.insert("unused", Tensor::row(vec![1.0])).unwrap();
        p
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::row(vec![1.0, 1.0, 1.0])).unwrap();
        let y = g.softmax(x, 1).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = ParamStore::<f32>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::row(vec![1e30, -1e30, 5e29])).unwrap();
        let y = g.softmax(x, 1).unwrap();
        let s: f32 = g.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn elu_limits() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::row(vec![0.0, -1e9, 2.0])).unwrap();
        let y = g.elu(x).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] + 1.0).abs() < 1e-12);
        assert_eq!(v[2], 2.0);
    }

    #[test]
    fn lstm_cell_zero_fixed_point() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let gates = g.input(Tensor::zeros(&[1, 12])).unwrap();
        let c = g.input(Tensor::zeros(&[1, 3])).unwrap();
        let out = g.lstm_cell(gates, c).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn square_sum_gradient_is_twice_w() {
        let p = store();
        let mut g = Graph::new(&p, Mode::Eval);
        let w = g.param("w").unwrap();
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.by_name(&p, "w").unwrap().data(), &[4.0, 6.0]);
        assert_eq!(grads.by_name(&p, "unused").unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_unknown_nodes() {
        let p = store();
        let mut g = Graph::new(&p, Mode::Eval);
        let w = g.param("w").unwrap();
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss(_))));
        assert!(matches!(
            g.backward(NodeId(99)),
            Err(Error::BackwardBeforeForward(99))
        ));
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.input(Tensor::zeros(&[2, 3])).unwrap();
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "matmul");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_detection() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval).with_finite_checks(true);
        let a = g.input(Tensor::row(vec![f64::MAX])).unwrap();
        assert!(matches!(g.affine(a, 10.0, 0.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn layer_norm_moments() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::row(vec![1.0, 5.0, -2.0, 8.0])).unwrap();
        let y = g.layer_norm(x).unwrap();
        let v = g.value(y).data();
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dropout_is_seeded_and_inverted() {
        let p = ParamStore::<f64>::new();
        let run = |seed| {
            let mut g = Graph::new(&p, Mode::Train).with_seed(seed);
            let x = g.input(Tensor::full(&[1, 1000], 1.0)).unwrap();
            let y = g.dropout(x, 0.1).unwrap();
            g.value(y).data().to_vec()
        };
        let a = run(3);
        assert_eq!(a, run(3));
        assert!(a.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12));
        let mean = a.iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1);
    }

    #[test]
    fn max_pool_ties_pick_first() {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap()).unwrap();
        let y = g.max_pool(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0]);
    }
}
