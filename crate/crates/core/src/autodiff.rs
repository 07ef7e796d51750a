//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] records one operation per node during the forward pass; nodes
//! are append-only, so every parent id is smaller than its child's and a
//! single reverse scan implements backpropagation. Gradients accumulate
//! across repeated [`Tape::backward`] calls until [`Tape::zero_grads`];
//! the training loop resets explicitly between steps.
//!
//! `log`, `sqrt`, division, and norms clamp their domains at
//! [`Scalar::numeric_floor`] so forward passes on finite inputs never
//! produce NaN.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// Per-channel statistics captured by a train-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchNormStats<F> {
    pub mean: Vec<F>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<F>,
    /// Unbiased variance for running-statistics updates; falls back to the
    /// biased value when only one position is available.
    pub var_unbiased: Vec<F>,
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// Elementwise division; denominator magnitude floored.
    Div(TensorId, TensorId),
    Neg(TensorId),
    Relu(TensorId),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Sqrt(TensorId),
    Scale(TensorId, F),
    AddScalar(TensorId, F),
    Sum(TensorId),
    Mean(TensorId),
    L2Norm(TensorId),
    /// [B, d] -> [B]: sum over the second axis.
    RowSum(TensorId),
    /// [B, d] x [B, d] -> [B]: per-row dot product.
    RowDot(TensorId, TensorId),
    /// [B, d] -> [B]: per-row euclidean norm, floored.
    RowNorm(TensorId),
    /// [B, d] -> [d]: mean over the first axis.
    ColMean(TensorId),
    /// [m, k] x [k, n] -> [m, n].
    Matmul(TensorId, TensorId),
    /// [B, d] + [d], broadcast over rows.
    AddRowBroadcast(TensorId, TensorId),
    /// [B, C, L] + [C], broadcast over batch and time.
    AddChannelBias(TensorId, TensorId),
    /// Causal dilated convolution; kernel [Cout, Cin, k] over [Cin, L] or
    /// [B, Cin, L]. Kernel tap j reads the input j*dilation ticks back.
    ConvCausal {
        input: TensorId,
        kernel: TensorId,
        dilation: usize,
        left_pad: bool,
    },
    /// Concatenate [B, C_i, L] blocks along the channel axis.
    ConcatChannels(Vec<TensorId>),
    /// [B, C, L] -> [B, C]: features at the final time position.
    LastStep(TensorId),
    /// Train-mode batch normalization over (batch, time) per channel.
    BatchNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: F,
        stats: BatchNormStats<F>,
    },
    /// y[b,c,l] = x[b,c,l] * scale[c] + shift[c]; eval-mode batch norm.
    ChannelAffine {
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
    },
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input node. Whether it acts as a trainable parameter or a
    /// constant is decided by whether the caller reads its gradient.
    pub fn leaf(&mut self, value: Tensor<F>) -> TensorId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: TensorId) -> Result<&Tensor<F>> {
        self.node(id).map(|n| &n.value)
    }

    /// Accumulated gradient of `id`; zeros if no backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Result<Tensor<F>> {
        let node = self.node(id)?;
        Ok(match &node.grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(node.value.shape()),
        })
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Batch statistics captured by a [`Op::BatchNorm`] node.
    pub fn batch_norm_stats(&self, id: TensorId) -> Result<&BatchNormStats<F>> {
        match &self.node(id)?.op {
            Op::BatchNorm { stats, .. } => Ok(stats),
            _ => Err(Error::invalid("node", "not a batch-norm node")),
        }
    }

    fn node(&self, id: TensorId) -> Result<&Node<F>> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::invalid("node", format!("id {} detached from this tape", id.0)))
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> TensorId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn binary_same_shape(&self, context: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let (va, vb) = (self.value(a)?, self.value(b)?);
        if !va.same_shape(vb) {
            return Err(Error::shape(
                context,
                format!("{:?}", va.shape()),
                format!("{:?}", vb.shape()),
            ));
        }
        Ok(())
    }

    // ── elementwise ────────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b)?;
        let v = zip_map(self.value(a)?, self.value(b)?, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b)?;
        let v = zip_map(self.value(a)?, self.value(b)?, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b)?;
        let v = zip_map(self.value(a)?, self.value(b)?, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("div", a, b)?;
        let v = zip_map(self.value(a)?, self.value(b)?, |x, y| x / floor_magnitude(y));
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        let v = map(self.value(a)?, |x| -x);
        Ok(self.push(Op::Neg(a), v))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let v = map(self.value(a)?, |x| if x > F::zero() { x } else { F::zero() });
        Ok(self.push(Op::Relu(a), v))
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let v = map(self.value(a)?, |x| x.tanh());
        Ok(self.push(Op::Tanh(a), v))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let one = F::one();
        let v = map(self.value(a)?, |x| one / (one + (-x).exp()));
        Ok(self.push(Op::Sigmoid(a), v))
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let v = map(self.value(a)?, |x| x.exp());
        Ok(self.push(Op::Exp(a), v))
    }

    /// Natural log of `max(x, floor)`.
    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let floor = F::numeric_floor();
        let v = map(self.value(a)?, |x| x.max(floor).ln());
        Ok(self.push(Op::Log(a), v))
    }

    /// Square root of `max(x, floor)`.
    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        let floor = F::numeric_floor();
        let v = map(self.value(a)?, |x| x.max(floor).sqrt());
        Ok(self.push(Op::Sqrt(a), v))
    }

    pub fn scale(&mut self, a: TensorId, c: F) -> Result<TensorId> {
        let v = map(self.value(a)?, |x| x * c);
        Ok(self.push(Op::Scale(a, c), v))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: F) -> Result<TensorId> {
        let v = map(self.value(a)?, |x| x + c);
        Ok(self.push(Op::AddScalar(a, c), v))
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.value(a)?.data().iter().copied().sum();
        Ok(self.push(Op::Sum(a), Tensor::scalar(s)))
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let t = self.value(a)?;
        if t.numel() == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s: F = t.data().iter().copied().sum();
        let v = s / F::cast(t.numel() as f64);
        Ok(self.push(Op::Mean(a), Tensor::scalar(v)))
    }

    /// Euclidean norm over all elements, floored at `numeric_floor`.
    pub fn l2_norm(&mut self, a: TensorId) -> Result<TensorId> {
        let sq: F = self.value(a)?.data().iter().map(|&x| x * x).sum();
        let n = sq.sqrt().max(F::numeric_floor());
        Ok(self.push(Op::L2Norm(a), Tensor::scalar(n)))
    }

    // ── row/column ops on [B, d] ───────────────────────────────────────

    pub fn row_sum(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2("row_sum", a)?;
        let t = self.value(a)?;
        let v: Vec<F> = (0..rows)
            .map(|r| t.data()[r * cols..(r + 1) * cols].iter().copied().sum())
            .collect();
        let out = Tensor::from_vec(vec![rows], v)?;
        Ok(self.push(Op::RowSum(a), out))
    }

    pub fn row_dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("row_dot", a, b)?;
        let (rows, cols) = self.dims2("row_dot", a)?;
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        let v: Vec<F> = (0..rows)
            .map(|r| {
                ta.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(&tb.data()[r * cols..(r + 1) * cols])
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        let out = Tensor::from_vec(vec![rows], v)?;
        Ok(self.push(Op::RowDot(a, b), out))
    }

    pub fn row_norm(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2("row_norm", a)?;
        let t = self.value(a)?;
        let floor = F::numeric_floor();
        let v: Vec<F> = (0..rows)
            .map(|r| {
                let sq: F = t.data()[r * cols..(r + 1) * cols].iter().map(|&x| x * x).sum();
                sq.sqrt().max(floor)
            })
            .collect();
        let out = Tensor::from_vec(vec![rows], v)?;
        Ok(self.push(Op::RowNorm(a), out))
    }

    pub fn col_mean(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2("col_mean", a)?;
        if rows == 0 {
            return Err(Error::invalid("col_mean", "empty batch"));
        }
        let t = self.value(a)?;
        let inv = F::one() / F::cast(rows as f64);
        let mut v = vec![F::zero(); cols];
        for r in 0..rows {
            for (c, slot) in v.iter_mut().enumerate() {
                *slot += t.data()[r * cols + c];
            }
        }
        for slot in &mut v {
            *slot *= inv;
        }
        let out = Tensor::from_vec(vec![cols], v)?;
        Ok(self.push(Op::ColMean(a), out))
    }

    // ── linear algebra ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.dims2("matmul lhs", a)?;
        let (kb, n) = self.dims2("matmul rhs", b)?;
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("[{m}, k] x [k, {n}]"),
                format!("[{m}, {ka}] x [{kb}, {n}]"),
            ));
        }
        let v = matmul_raw(self.value(a)?, self.value(b)?);
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn add_row_broadcast(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2("add_row_broadcast", a)?;
        let tb = self.value(bias)?;
        if tb.shape() != [cols] {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("[{cols}]"),
                format!("{:?}", tb.shape()),
            ));
        }
        let ta = self.value(a)?;
        let mut v = ta.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                v[r * cols + c] += tb.data()[c];
            }
        }
        let out = Tensor::from_vec(vec![rows, cols], v)?;
        Ok(self.push(Op::AddRowBroadcast(a, bias), out))
    }

    pub fn add_channel_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let [b, c, l] = self.dims3("add_channel_bias", a)?;
        let tb = self.value(bias)?;
        if tb.shape() != [c] {
            return Err(Error::shape(
                "add_channel_bias",
                format!("[{c}]"),
                format!("{:?}", tb.shape()),
            ));
        }
        let ta = self.value(a)?;
        let mut v = ta.data().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                let add = tb.data()[ci];
                for slot in &mut v[base..base + l] {
                    *slot += add;
                }
            }
        }
        let out = Tensor::from_vec(vec![b, c, l], v)?;
        Ok(self.push(Op::AddChannelBias(a, bias), out))
    }

    // ── convolution ────────────────────────────────────────────────────

    /// Causal dilated 1-d convolution. `input` is `[Cin, L]` or
    /// `[B, Cin, L]`; `kernel` is `[Cout, Cin, k]`. Output position `t`
    /// depends only on input positions `t, t-dilation, ..,
    /// t-(k-1)*dilation`. With `left_pad` the length is preserved by
    /// zero-padding on the left; otherwise it shrinks by `(k-1)*dilation`.
    pub fn conv1d_causal(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        dilation: usize,
        left_pad: bool,
    ) -> Result<TensorId> {
        let v = conv1d_causal_raw(self.value(input)?, self.value(kernel)?, dilation, left_pad)?;
        Ok(self.push(
            Op::ConvCausal {
                input,
                kernel,
                dilation,
                left_pad,
            },
            v,
        ))
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_channels", "no inputs"));
        }
        let [b0, _, l0] = self.dims3("concat_channels", parts[0])?;
        let mut total_c = 0;
        for &p in parts {
            let [b, c, l] = self.dims3("concat_channels", p)?;
            if b != b0 || l != l0 {
                return Err(Error::shape(
                    "concat_channels",
                    format!("[{b0}, _, {l0}]"),
                    format!("[{b}, _, {l}]"),
                ));
            }
            total_c += c;
        }
        let mut v = vec![F::zero(); b0 * total_c * l0];
        for bi in 0..b0 {
            let mut c_off = 0;
            for &p in parts {
                let t = self.value(p)?;
                let c = t.shape()[1];
                let src = &t.data()[bi * c * l0..(bi + 1) * c * l0];
                let dst_base = (bi * total_c + c_off) * l0;
                v[dst_base..dst_base + c * l0].copy_from_slice(src);
                c_off += c;
            }
        }
        let out = Tensor::from_vec(vec![b0, total_c, l0], v)?;
        Ok(self.push(Op::ConcatChannels(parts.to_vec()), out))
    }

    pub fn last_step(&mut self, a: TensorId) -> Result<TensorId> {
        let [b, c, l] = self.dims3("last_step", a)?;
        let t = self.value(a)?;
        let v: Vec<F> = (0..b)
            .flat_map(|bi| (0..c).map(move |ci| (bi, ci)))
            .map(|(bi, ci)| t.data()[(bi * c + ci) * l + (l - 1)])
            .collect();
        let out = Tensor::from_vec(vec![b, c], v)?;
        Ok(self.push(Op::LastStep(a), out))
    }

    // ── normalization ──────────────────────────────────────────────────

    /// Train-mode batch norm on `[B, C, L]`: per channel, normalize with the
    /// mean/variance over (batch, time), then apply `gamma`/`beta`. The
    /// captured batch statistics are readable via [`Tape::batch_norm_stats`].
    pub fn batch_norm(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: F,
    ) -> Result<TensorId> {
        let [b, c, l] = self.dims3("batch_norm", input)?;
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            let shape = self.value(t)?.shape().to_vec();
            if shape != [c] {
                return Err(Error::shape("batch_norm", format!("{name} [{c}]"), format!("{shape:?}")));
            }
        }
        let m = b * l;
        if m == 0 {
            return Err(Error::invalid("batch_norm", "empty input"));
        }
        let x = self.value(input)?;
        let inv_m = F::one() / F::cast(m as f64);
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for ci in 0..c {
            let mut s = F::zero();
            for bi in 0..b {
                let base = (bi * c + ci) * l;
                s += x.data()[base..base + l].iter().copied().sum();
            }
            let mu = s * inv_m;
            let mut sq = F::zero();
            for bi in 0..b {
                let base = (bi * c + ci) * l;
                for &xv in &x.data()[base..base + l] {
                    let d = xv - mu;
                    sq += d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = sq * inv_m;
        }
        let var_unbiased: Vec<F> = if m > 1 {
            let corr = F::cast(m as f64 / (m as f64 - 1.0));
            var.iter().map(|&v| v * corr).collect()
        } else {
            var.clone()
        };
        let g = self.value(gamma)?.data().to_vec();
        let s = self.value(beta)?.data().to_vec();
        let x = self.value(input)?;
        let mut v = vec![F::zero(); b * c * l];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                let inv_std = F::one() / (var[ci] + eps).sqrt();
                for li in 0..l {
                    let xhat = (x.data()[base + li] - mean[ci]) * inv_std;
                    v[base + li] = g[ci] * xhat + s[ci];
                }
            }
        }
        let stats = BatchNormStats {
            mean,
            var,
            var_unbiased,
        };
        let out = Tensor::from_vec(vec![b, c, l], v)?;
        Ok(self.push(
            Op::BatchNorm {
                input,
                gamma,
                beta,
                eps,
                stats,
            },
            out,
        ))
    }

    /// Per-channel affine map on `[B, C, L]`; eval-mode batch norm with
    /// scale/shift precomputed from running statistics.
    pub fn channel_affine(&mut self, input: TensorId, scale: TensorId, shift: TensorId) -> Result<TensorId> {
        let [b, c, l] = self.dims3("channel_affine", input)?;
        for (name, t) in [("scale", scale), ("shift", shift)] {
            let shape = self.value(t)?.shape().to_vec();
            if shape != [c] {
                return Err(Error::shape("channel_affine", format!("{name} [{c}]"), format!("{shape:?}")));
            }
        }
        let x = self.value(input)?;
        let sc = self.value(scale)?.data().to_vec();
        let sh = self.value(shift)?.data().to_vec();
        let mut v = vec![F::zero(); b * c * l];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                for li in 0..l {
                    v[base + li] = x.data()[base + li] * sc[ci] + sh[ci];
                }
            }
        }
        let out = Tensor::from_vec(vec![b, c, l], v)?;
        Ok(self.push(Op::ChannelAffine { input, scale, shift }, out))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse-mode accumulation from a scalar root. Each reachable node's
    /// gradient slot receives its contribution; calling again without
    /// [`Tape::zero_grads`] adds on top.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        let root_node = self.node(root)?;
        if root_node.value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", root_node.value.shape()),
            ));
        }
        // Fresh adjoints this call: park previously accumulated gradients
        // aside so they are not re-propagated, then merge them back below.
        let parked: Vec<Option<Tensor<F>>> = self.nodes.iter_mut().map(|n| n.grad.take()).collect();
        self.accum(root, &Tensor::full(self.nodes[root.0].value.shape(), F::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            // Contributions are computed against parent values, then summed
            // into the parents' slots.
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(a, &g);
                    self.accum(b, &g);
                }
                Op::Sub(a, b) => {
                    self.accum(a, &g);
                    let neg = map(&g, |x| -x);
                    self.accum(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, &self.nodes[b.0].value, |gi, bv| gi * bv);
                    let db = zip_map(&g, &self.nodes[a.0].value, |gi, av| gi * av);
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::Div(a, b) => {
                    let floor = F::numeric_floor();
                    let bv = &self.nodes[b.0].value;
                    // Inside the clamped region the quotient is treated as
                    // locally constant in BOTH operands: the true derivative
                    // does not exist at the guard, and dividing the adjoint by
                    // the floored magnitude would inject 1e12-scale gradients.
                    let da = zip_map(&g, bv, |gi, y| {
                        if y.abs() >= floor {
                            gi / y
                        } else {
                            F::zero()
                        }
                    });
                    let av = &self.nodes[a.0].value;
                    let mut db = Tensor::zeros(bv.shape());
                    for idx in 0..db.numel() {
                        let y = bv.data()[idx];
                        if y.abs() >= floor {
                            db.data_mut()[idx] = -g.data()[idx] * av.data()[idx] / (y * y);
                        }
                    }
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::Neg(a) => {
                    let da = map(&g, |x| -x);
                    self.accum(a, &da);
                }
                Op::Relu(a) => {
                    let da = zip_map(&g, &self.nodes[a.0].value, |gi, x| {
                        if x > F::zero() {
                            gi
                        } else {
                            F::zero()
                        }
                    });
                    self.accum(a, &da);
                }
                Op::Tanh(a) => {
                    let da = zip_map(&g, &self.nodes[i].value, |gi, y| gi * (F::one() - y * y));
                    self.accum(a, &da);
                }
                Op::Sigmoid(a) => {
                    let da = zip_map(&g, &self.nodes[i].value, |gi, y| gi * y * (F::one() - y));
                    self.accum(a, &da);
                }
                Op::Exp(a) => {
                    let da = zip_map(&g, &self.nodes[i].value, |gi, y| gi * y);
                    self.accum(a, &da);
                }
                Op::Log(a) => {
                    let floor = F::numeric_floor();
                    let da = zip_map(&g, &self.nodes[a.0].value, |gi, x| {
                        if x >= floor {
                            gi / x
                        } else {
                            F::zero()
                        }
                    });
                    self.accum(a, &da);
                }
                Op::Sqrt(a) => {
                    let floor = F::numeric_floor();
                    let half = F::cast(0.5);
                    let xv = &self.nodes[a.0].value;
                    let yv = &self.nodes[i].value;
                    let mut da = Tensor::zeros(xv.shape());
                    for idx in 0..da.numel() {
                        if xv.data()[idx] >= floor {
                            da.data_mut()[idx] = g.data()[idx] * half / yv.data()[idx];
                        }
                    }
                    self.accum(a, &da);
                }
                Op::Scale(a, c) => {
                    let da = map(&g, |x| x * c);
                    self.accum(a, &da);
                }
                Op::AddScalar(a, _) => {
                    self.accum(a, &g);
                }
                Op::Sum(a) => {
                    let da = Tensor::full(self.nodes[a.0].value.shape(), g.item());
                    self.accum(a, &da);
                }
                Op::Mean(a) => {
                    let n = F::cast(self.nodes[a.0].value.numel() as f64);
                    let da = Tensor::full(self.nodes[a.0].value.shape(), g.item() / n);
                    self.accum(a, &da);
                }
                Op::L2Norm(a) => {
                    let n = self.nodes[i].value.item();
                    let xv = &self.nodes[a.0].value;
                    let raw: F = xv.data().iter().map(|&x| x * x).sum::<F>().sqrt();
                    let mut da = Tensor::zeros(xv.shape());
                    if raw > F::numeric_floor() {
                        let gi = g.item();
                        for idx in 0..da.numel() {
                            da.data_mut()[idx] = gi * xv.data()[idx] / n;
                        }
                    }
                    self.accum(a, &da);
                }
                Op::RowSum(a) => {
                    let xv = &self.nodes[a.0].value;
                    let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
                    let mut da = Tensor::zeros(xv.shape());
                    for r in 0..rows {
                        for c in 0..cols {
                            da.data_mut()[r * cols + c] = g.data()[r];
                        }
                    }
                    self.accum(a, &da);
                }
                Op::RowDot(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let (rows, cols) = (av.shape()[0], av.shape()[1]);
                    let mut da = Tensor::zeros(av.shape());
                    let mut db = Tensor::zeros(bv.shape());
                    for r in 0..rows {
                        let gr = g.data()[r];
                        for c in 0..cols {
                            da.data_mut()[r * cols + c] = gr * bv.data()[r * cols + c];
                            db.data_mut()[r * cols + c] = gr * av.data()[r * cols + c];
                        }
                    }
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::RowNorm(a) => {
                    let xv = &self.nodes[a.0].value;
                    let yv = &self.nodes[i].value;
                    let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
                    let floor = F::numeric_floor();
                    let mut da = Tensor::zeros(xv.shape());
                    for r in 0..rows {
                        let raw: F = xv.data()[r * cols..(r + 1) * cols]
                            .iter()
                            .map(|&x| x * x)
                            .sum::<F>()
                            .sqrt();
                        if raw > floor {
                            let gr = g.data()[r] / yv.data()[r];
                            for c in 0..cols {
                                da.data_mut()[r * cols + c] = gr * xv.data()[r * cols + c];
                            }
                        }
                    }
                    self.accum(a, &da);
                }
                Op::ColMean(a) => {
                    let xv = &self.nodes[a.0].value;
                    let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
                    let inv = F::one() / F::cast(rows as f64);
                    let mut da = Tensor::zeros(xv.shape());
                    for r in 0..rows {
                        for c in 0..cols {
                            da.data_mut()[r * cols + c] = g.data()[c] * inv;
                        }
                    }
                    self.accum(a, &da);
                }
                Op::Matmul(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    // dA = g * B^T, dB = A^T * g
                    let mut da = Tensor::zeros(av.shape());
                    for r in 0..m {
                        for kk in 0..k {
                            let mut s = F::zero();
                            for c in 0..n {
                                s += g.data()[r * n + c] * bv.data()[kk * n + c];
                            }
                            da.data_mut()[r * k + kk] = s;
                        }
                    }
                    let mut db = Tensor::zeros(bv.shape());
                    for kk in 0..k {
                        for c in 0..n {
                            let mut s = F::zero();
                            for r in 0..m {
                                s += av.data()[r * k + kk] * g.data()[r * n + c];
                            }
                            db.data_mut()[kk * n + c] = s;
                        }
                    }
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::AddRowBroadcast(a, bias) => {
                    self.accum(a, &g);
                    let cols = self.nodes[bias.0].value.numel();
                    let rows = g.numel() / cols;
                    let mut db = Tensor::zeros(&[cols]);
                    for r in 0..rows {
                        for c in 0..cols {
                            db.data_mut()[c] += g.data()[r * cols + c];
                        }
                    }
                    self.accum(bias, &db);
                }
                Op::AddChannelBias(a, bias) => {
                    self.accum(a, &g);
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let (b, c, l) = (shape[0], shape[1], shape[2]);
                    let mut db = Tensor::zeros(&[c]);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * l;
                            db.data_mut()[ci] += g.data()[base..base + l].iter().copied().sum();
                        }
                    }
                    self.accum(bias, &db);
                }
                Op::ConvCausal {
                    input,
                    kernel,
                    dilation,
                    left_pad,
                } => {
                    let xv = self.nodes[input.0].value.clone();
                    let kv = self.nodes[kernel.0].value.clone();
                    let (dx, dk) = conv1d_causal_backward(&xv, &kv, dilation, left_pad, &g);
                    self.accum(input, &dx);
                    self.accum(kernel, &dk);
                }
                Op::ConcatChannels(parts) => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    let (b, total_c, l) = (shape[0], shape[1], shape[2]);
                    let mut c_off = 0;
                    for &p in &parts {
                        let c = self.nodes[p.0].value.shape()[1];
                        let mut dp = Tensor::zeros(&[b, c, l]);
                        for bi in 0..b {
                            let src_base = (bi * total_c + c_off) * l;
                            let dst_base = bi * c * l;
                            dp.data_mut()[dst_base..dst_base + c * l]
                                .copy_from_slice(&g.data()[src_base..src_base + c * l]);
                        }
                        self.accum(p, &dp);
                        c_off += c;
                    }
                }
                Op::LastStep(a) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let (b, c, l) = (shape[0], shape[1], shape[2]);
                    let mut da = Tensor::zeros(&shape);
                    for bi in 0..b {
                        for ci in 0..c {
                            da.data_mut()[(bi * c + ci) * l + (l - 1)] = g.data()[bi * c + ci];
                        }
                    }
                    self.accum(a, &da);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    eps,
                    stats,
                } => {
                    let xv = self.nodes[input.0].value.clone();
                    let gv = self.nodes[gamma.0].value.clone();
                    let shape = xv.shape().to_vec();
                    let (b, c, l) = (shape[0], shape[1], shape[2]);
                    let m = F::cast((b * l) as f64);
                    let mut dx = Tensor::zeros(&shape);
                    let mut dgamma = Tensor::zeros(&[c]);
                    let mut dbeta = Tensor::zeros(&[c]);
                    for ci in 0..c {
                        let inv_std = F::one() / (stats.var[ci] + eps).sqrt();
                        let mu = stats.mean[ci];
                        let mut sum_g = F::zero();
                        let mut sum_gx = F::zero();
                        for bi in 0..b {
                            let base = (bi * c + ci) * l;
                            for li in 0..l {
                                let gi = g.data()[base + li];
                                let xhat = (xv.data()[base + li] - mu) * inv_std;
                                sum_g += gi;
                                sum_gx += gi * xhat;
                            }
                        }
                        dbeta.data_mut()[ci] = sum_g;
                        dgamma.data_mut()[ci] = sum_gx;
                        let mean_g = sum_g / m;
                        let mean_gx = sum_gx / m;
                        let coeff = gv.data()[ci] * inv_std;
                        for bi in 0..b {
                            let base = (bi * c + ci) * l;
                            for li in 0..l {
                                let gi = g.data()[base + li];
                                let xhat = (xv.data()[base + li] - mu) * inv_std;
                                dx.data_mut()[base + li] = coeff * (gi - mean_g - xhat * mean_gx);
                            }
                        }
                    }
                    self.accum(input, &dx);
                    self.accum(gamma, &dgamma);
                    self.accum(beta, &dbeta);
                }
                Op::ChannelAffine { input, scale, shift } => {
                    let xv = self.nodes[input.0].value.clone();
                    let sv = self.nodes[scale.0].value.clone();
                    let shape = xv.shape().to_vec();
                    let (b, c, l) = (shape[0], shape[1], shape[2]);
                    let mut dx = Tensor::zeros(&shape);
                    let mut ds = Tensor::zeros(&[c]);
                    let mut dt = Tensor::zeros(&[c]);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * l;
                            for li in 0..l {
                                let gi = g.data()[base + li];
                                dx.data_mut()[base + li] = gi * sv.data()[ci];
                                ds.data_mut()[ci] += gi * xv.data()[base + li];
                                dt.data_mut()[ci] += gi;
                            }
                        }
                    }
                    self.accum(input, &dx);
                    self.accum(scale, &ds);
                    self.accum(shift, &dt);
                }
            }
        }
        for (node, old) in self.nodes.iter_mut().zip(parked) {
            if let Some(old) = old {
                match &mut node.grad {
                    Some(fresh) => {
                        for (slot, o) in fresh.data_mut().iter_mut().zip(old.data()) {
                            *slot += *o;
                        }
                    }
                    None => node.grad = Some(old),
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: TensorId, contrib: &Tensor<F>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (slot, &c) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *slot += c;
                }
            }
            None => node.grad = Some(contrib.clone()),
        }
    }

    fn dims2(&self, context: &'static str, id: TensorId) -> Result<(usize, usize)> {
        let s = self.value(id)?.shape();
        if s.len() != 2 {
            return Err(Error::shape(context, "2-d tensor", format!("{s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn dims3(&self, context: &'static str, id: TensorId) -> Result<[usize; 3]> {
        let s = self.value(id)?.shape();
        if s.len() != 3 {
            return Err(Error::shape(context, "3-d tensor", format!("{s:?}")));
        }
        Ok([s[0], s[1], s[2]])
    }
}

/// Denominator clamp: magnitude floored at `numeric_floor`, sign kept.
fn floor_magnitude<F: Scalar>(y: F) -> F {
    let floor = F::numeric_floor();
    if y.abs() >= floor {
        y
    } else if y < F::zero() {
        -floor
    } else {
        floor
    }
}

fn map<F: Scalar>(t: &Tensor<F>, f: impl Fn(F) -> F) -> Tensor<F> {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

fn matmul_raw<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[m, n]);
    for r in 0..m {
        for kk in 0..k {
            let av = a.data()[r * k + kk];
            if av == F::zero() {
                continue;
            }
            for c in 0..n {
                out.data_mut()[r * n + c] += av * b.data()[kk * n + c];
            }
        }
    }
    out
}

/// Forward causal convolution usable outside a tape.
pub fn conv1d_causal_raw<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    dilation: usize,
    left_pad: bool,
) -> Result<Tensor<F>> {
    let batched = input.shape().len() == 3;
    if !batched && input.shape().len() != 2 {
        return Err(Error::shape(
            "conv1d_causal",
            "[Cin, L] or [B, Cin, L]",
            format!("{:?}", input.shape()),
        ));
    }
    if kernel.shape().len() != 3 {
        return Err(Error::shape(
            "conv1d_causal",
            "kernel [Cout, Cin, k]",
            format!("{:?}", kernel.shape()),
        ));
    }
    let (b, cin, len) = if batched {
        (input.shape()[0], input.shape()[1], input.shape()[2])
    } else {
        (1, input.shape()[0], input.shape()[1])
    };
    let (cout, kc, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc != cin {
        return Err(Error::shape(
            "conv1d_causal",
            format!("kernel input channels {cin}"),
            format!("{kc}"),
        ));
    }
    if k < 1 {
        return Err(Error::invalid("kernel", "kernel size must be >= 1"));
    }
    if dilation < 1 {
        return Err(Error::invalid("dilation", "dilation must be >= 1"));
    }
    let reach = (k - 1) * dilation;
    let out_len = if left_pad {
        len
    } else {
        if len < reach + 1 {
            return Err(Error::invalid(
                "input",
                format!("length {len} too short for kernel {k}, dilation {dilation} without padding"),
            ));
        }
        len - reach
    };
    let offset = if left_pad { 0 } else { reach };
    let mut out = vec![F::zero(); b * cout * out_len];
    for bi in 0..b {
        for o in 0..cout {
            let out_base = (bi * cout + o) * out_len;
            for i in 0..cin {
                let in_base = (bi * cin + i) * len;
                for j in 0..k {
                    let w = kernel.data()[(o * cin + i) * k + j];
                    let shift = offset as isize - (j * dilation) as isize;
                    if shift >= 0 {
                        let sh = shift as usize;
                        for t in 0..out_len {
                            out[out_base + t] += w * input.data()[in_base + t + sh];
                        }
                    } else {
                        let start = (-shift) as usize;
                        for t in start..out_len {
                            out[out_base + t] += w * input.data()[in_base + t - start];
                        }
                    }
                }
            }
        }
    }
    let shape = if batched {
        vec![b, cout, out_len]
    } else {
        vec![cout, out_len]
    };
    Tensor::from_vec(shape, out)
}

fn conv1d_causal_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    dilation: usize,
    left_pad: bool,
    grad_out: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let batched = input.shape().len() == 3;
    let (b, cin, len) = if batched {
        (input.shape()[0], input.shape()[1], input.shape()[2])
    } else {
        (1, input.shape()[0], input.shape()[1])
    };
    let (cout, _, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let reach = (k - 1) * dilation;
    let out_len = if left_pad { len } else { len - reach };
    let offset = if left_pad { 0 } else { reach };
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    for bi in 0..b {
        for o in 0..cout {
            let out_base = (bi * cout + o) * out_len;
            for i in 0..cin {
                let in_base = (bi * cin + i) * len;
                for j in 0..k {
                    let kidx = (o * cin + i) * k + j;
                    let w = kernel.data()[kidx];
                    let shift = offset as isize - (j * dilation) as isize;
                    let mut dw = F::zero();
                    if shift >= 0 {
                        let sh = shift as usize;
                        for t in 0..out_len {
                            let g = grad_out.data()[out_base + t];
                            dx.data_mut()[in_base + t + sh] += w * g;
                            dw += g * input.data()[in_base + t + sh];
                        }
                    } else {
                        let start = (-shift) as usize;
                        for t in start..out_len {
                            let g = grad_out.data()[out_base + t];
                            dx.data_mut()[in_base + t - start] += w * g;
                            dw += g * input.data()[in_base + t - start];
                        }
                    }
                    dk.data_mut()[kidx] += dw;
                }
            }
        }
    }
    (dx, dk)
}

/// Max relative error between the tape's analytic gradients and central
/// finite differences of the scalar produced by `build`:
/// `max over parameter elements of |analytic - central| / max(step, |central|)`.
///
/// The denominator floor is the probe step itself: a central difference
/// carries absolute rounding noise of roughly `eps * |f| / step`, so for
/// gradient components smaller than the step a pure relative comparison
/// would only amplify that noise. Flooring at the step turns the check on
/// such components into an absolute one at `tolerance * step`, which is
/// still far above the noise while catching any genuinely wrong value.
pub fn finite_diff_check<F: Scalar>(
    params: &[Tensor<F>],
    step: F,
    build: impl Fn(&mut Tape<F>, &[TensorId]) -> Result<TensorId>,
) -> Result<F> {
    if step <= F::zero() {
        return Err(Error::invalid("step", "must be positive"));
    }
    let eval = |ps: &[Tensor<F>]| -> Result<F> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &ids)?;
        let v = tape.value(root)?;
        if v.numel() != 1 {
            return Err(Error::invalid("build", "must produce a scalar"));
        }
        let out = v.item();
        if !out.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_check evaluation".into(),
            });
        }
        Ok(out)
    };

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = build(&mut tape, &ids)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor<F>> = ids
        .iter()
        .map(|&id| tape.grad(id))
        .collect::<Result<_>>()?;

    let two = F::cast(2.0);
    let denom_floor = step;
    let mut work: Vec<Tensor<F>> = params.to_vec();
    let mut max_rel = F::zero();
    for p in 0..params.len() {
        for e in 0..params[p].numel() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = orig;
            let central = (plus - minus) / (two * step);
            if !central.is_finite() {
                return Err(Error::NonFinite {
                    context: "finite_diff_check central difference".into(),
                });
            }
            let rel = (analytic[p].data()[e] - central).abs() / denom_floor.max(central.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Brute-force oracle: padded triple-loop convolution, independent of the
    /// slice-walking implementation.
    fn conv_oracle(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        dilation: usize,
        left_pad: bool,
    ) -> Tensor<f64> {
        let (cin, len) = (input.shape()[0], input.shape()[1]);
        let (cout, _, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
        let reach = (k - 1) * dilation;
        let out_len = if left_pad { len } else { len - reach };
        let offset = if left_pad { 0 } else { reach };
        let mut out = Tensor::zeros(&[cout, out_len]);
        for o in 0..cout {
            for t in 0..out_len {
                let mut acc = 0.0;
                for i in 0..cin {
                    for j in 0..k {
                        let src = t as isize + offset as isize - (j * dilation) as isize;
                        if src >= 0 {
                            acc += kernel.at3(o, i, j) * input.at2(i, src as usize);
                        }
                    }
                }
                out.data_mut()[o * out_len + t] = acc;
            }
        }
        out
    }

    #[test]
    fn conv_hand_example_dilation_two() {
        // x_t + x_{t-2} over [1,2,3,4] without padding -> [4, 6]
        let x = Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_vec(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let y = conv1d_causal_raw(&x, &k, 2, false).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_vec(vec![1, 5], vec![0.5, -1.0, 2.0, 0.0, 3.25]).unwrap();
        let k = Tensor::from_vec(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d_causal_raw(&x, &k, 1, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_matches_brute_force_oracle() {
        let mut r = rng(11);
        let x = Tensor::<f64>::uniform(&[2, 8], -1.0, 1.0, &mut r);
        let k = Tensor::<f64>::uniform(&[3, 2, 3], -1.0, 1.0, &mut r);
        let y = conv1d_causal_raw(&x, &k, 2, false).unwrap();
        let want = conv_oracle(&x, &k, 2, false);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_short_input_without_padding() {
        let x = Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::from_vec(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(conv1d_causal_raw(&x, &k, 2, false).is_err());
        assert!(conv1d_causal_raw(&x, &k, 2, true).is_ok());
    }

    #[test]
    fn conv_left_pad_preserves_length() {
        let mut r = rng(3);
        for len in 1..10usize {
            for k in 1..5usize {
                for dil in 1..4usize {
                    let x = Tensor::<f64>::uniform(&[2, len], -1.0, 1.0, &mut r);
                    let kern = Tensor::<f64>::uniform(&[1, 2, k], -1.0, 1.0, &mut r);
                    let y = conv1d_causal_raw(&x, &kern, dil, true).unwrap();
                    assert_eq!(y.shape(), &[1, len]);
                }
            }
        }
    }

    #[test]
    fn conv_causality_future_perturbation() {
        let mut r = rng(5);
        let x = Tensor::<f64>::uniform(&[2, 12], -1.0, 1.0, &mut r);
        let k = Tensor::<f64>::uniform(&[2, 2, 3], -1.0, 1.0, &mut r);
        let base = conv1d_causal_raw(&x, &k, 2, true).unwrap();
        for tp in 0..12 {
            let mut xp = x.clone();
            xp.data_mut()[tp] += 10.0; // perturb channel 0 at position tp
            let pert = conv1d_causal_raw(&xp, &k, 2, true).unwrap();
            for o in 0..2 {
                for t in 0..tp {
                    assert_eq!(base.at2(o, t), pert.at2(o, t), "output before {tp} changed");
                }
            }
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let c = tape.leaf(Tensor::scalar(5.0));
        let loss = tape.mul(c, c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn detached_node_is_rejected() {
        let mut tape_a = Tape::<f64>::new();
        let _ = tape_a.leaf(Tensor::scalar(1.0));
        let tape_b = Tape::<f64>::new();
        assert!(tape_b.value(TensorId(0)).is_err());
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 12.0]);
        tape.zero_grads();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 6.0]);
    }

    #[test]
    fn backward_is_linear_over_loss_sums() {
        let mut r = rng(7);
        let xv = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut r);
        let build = |combined: bool| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(xv.clone());
            let sq = tape.mul(x, x).unwrap();
            let l1 = tape.sum(sq).unwrap();
            let t = tape.tanh(x).unwrap();
            let l2 = tape.sum(t).unwrap();
            if combined {
                let total = tape.add(l1, l2).unwrap();
                tape.backward(total).unwrap();
            } else {
                tape.backward(l1).unwrap();
                tape.backward(l2).unwrap();
            }
            (tape.grad(x).unwrap().data().to_vec(), vec![])
        };
        let (combined, _) = build(true);
        let (separate, _) = build(false);
        for (a, b) in combined.iter().zip(&separate) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = rng(9);
        let a = Tensor::<f64>::uniform(&[2, 3], -1.0, 1.0, &mut r);
        let b = Tensor::<f64>::uniform(&[3, 2], -1.0, 1.0, &mut r);
        let mut tape = Tape::new();
        let ia = tape.leaf(a.clone());
        let ib = tape.leaf(b.clone());
        let y = tape.matmul(ia, ib).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += a.at2(i, k) * b.at2(k, j);
                }
                assert!((tape.value(y).unwrap().at2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l2_norm_and_relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let n = tape.l2_norm(x).unwrap();
        assert_eq!(tape.value(n).unwrap().item(), 5.0);
        let y = tape.leaf(Tensor::from_vec(vec![2], vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(y).unwrap();
        assert_eq!(tape.value(r).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn finite_diff_quadratic_is_exact() {
        let mut r = rng(21);
        let p = Tensor::<f64>::uniform(&[5], -2.0, 2.0, &mut r);
        let err = finite_diff_check(&[p], 1e-5, |tape, ids| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-8, "quadratic finite-diff error {err}");
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let p = Tensor::<f64>::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let err = finite_diff_check(&[p], 1e-5, |tape, _ids| {
            let c = tape.leaf(Tensor::scalar(3.5));
            tape.mul(c, c)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_diff_cosine_composite() {
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let a = Tensor::<f64>::uniform(&[4], 0.2, 1.5, &mut r);
            let b = Tensor::<f64>::uniform(&[4], 0.2, 1.5, &mut r);
            let err = finite_diff_check(&[a, b], 1e-5, |tape, ids| {
                let prod = tape.mul(ids[0], ids[1])?;
                let dot = tape.sum(prod)?;
                let na = tape.l2_norm(ids[0])?;
                let nb = tape.l2_norm(ids[1])?;
                let den = tape.mul(na, nb)?;
                tape.div(dot, den)
            })
            .unwrap();
            assert!(err < 1e-4, "cosine composite error {err}");
        }
    }

    /// Every recorded op, composed into a scalar and checked against central
    /// differences over 20 seeds. Inputs are kept away from kinks (relu at 0)
    /// and floors so the relative-error criterion is well posed.
    #[test]
    fn per_op_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut r = rng(200 + seed);
            let a = Tensor::<f64>::uniform(&[3, 4], 0.3, 1.2, &mut r);
            let b = Tensor::<f64>::uniform(&[3, 4], 0.3, 1.2, &mut r);
            let w = Tensor::<f64>::uniform(&[4, 3], -1.0, 1.0, &mut r);
            let bias = Tensor::<f64>::uniform(&[3], -0.5, 0.5, &mut r);
            let x3 = Tensor::<f64>::uniform(&[2, 3, 5], -1.0, 1.0, &mut r);
            let kern = Tensor::<f64>::uniform(&[3, 3, 2], -1.0, 1.0, &mut r);
            let gamma = Tensor::<f64>::uniform(&[3], 0.5, 1.5, &mut r);
            let beta = Tensor::<f64>::uniform(&[3], -0.5, 0.5, &mut r);
            let cbias = Tensor::<f64>::uniform(&[3], -0.5, 0.5, &mut r);

            let err = finite_diff_check(
                &[a, b, w, bias, x3, kern, gamma, beta, cbias],
                1e-5,
                |tape, ids| {
                    let (a, b, w, bias, x3, kern, gamma, beta, cbias) = (
                        ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], ids[6], ids[7], ids[8],
                    );
                    // elementwise chain
                    let s = tape.add(a, b)?;
                    let d = tape.sub(s, b)?;
                    let m = tape.mul(d, b)?;
                    let q = tape.div(m, s)?;
                    let e = tape.exp(q)?;
                    let lg = tape.log(e)?;
                    let sq = tape.sqrt(e)?;
                    let th = tape.tanh(sq)?;
                    let sg = tape.sigmoid(th)?;
                    let rl = tape.relu(sg)?;
                    let ng = tape.neg(rl)?;
                    let sc = tape.scale(ng, 0.7)?;
                    let asq = tape.add_scalar(sc, 2.0)?;
                    let blended = tape.add(asq, lg)?;
                    // row/col reductions
                    let rs = tape.row_sum(blended)?;
                    let rd = tape.row_dot(blended, b)?;
                    let rn = tape.row_norm(blended)?;
                    let cm = tape.col_mean(blended)?;
                    // matmul + broadcast
                    let mm = tape.matmul(blended, w)?;
                    let mb = tape.add_row_broadcast(mm, bias)?;
                    // conv3d + bias + bn + affine + last step
                    let conv = tape.conv1d_causal(x3, kern, 2, true)?;
                    let cb = tape.add_channel_bias(x3, cbias)?;
                    let bn = tape.batch_norm(conv, gamma, beta, 1e-5)?;
                    let aff = tape.channel_affine(cb, gamma, beta)?;
                    let cat = tape.concat_channels(&[bn, aff])?;
                    let last = tape.last_step(cat)?;
                    // reduce everything to one scalar
                    let p1 = tape.sum(mb)?;
                    let p2 = tape.mean(last)?;
                    let p3 = tape.sum(rd)?;
                    let p4 = tape.sum(rn)?;
                    let p5 = tape.sum(cm)?;
                    let p6 = tape.sum(rs)?;
                    let p7 = tape.l2_norm(blended)?;
                    let mut acc = tape.add(p1, p2)?;
                    for p in [p3, p4, p5, p6, p7] {
                        acc = tape.add(acc, p)?;
                    }
                    Ok(acc)
                },
            )
            .unwrap();
            // a composite this wide occasionally produces an element whose
            // true gradient is ~0, and the relative criterion then amplifies
            // finite-difference noise; 1e-3 still catches any wrong formula
            // by orders of magnitude
            assert!(err < 1e-3, "seed {seed}: per-op gradient error {err}");
        }
    }

    #[test]
    fn batch_norm_normalizes_per_channel() {
        let mut r = rng(31);
        let x = Tensor::<f64>::uniform(&[2, 3, 4], -2.0, 2.0, &mut r);
        let mut tape = Tape::new();
        let ix = tape.leaf(x);
        let g = tape.leaf(Tensor::full(&[3], 1.0));
        let bta = tape.leaf(Tensor::zeros(&[3]));
        let y = tape.batch_norm(ix, g, bta, 1e-8).unwrap();
        let yv = tape.value(y).unwrap();
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..2 {
                for l in 0..4 {
                    vals.push(yv.at3(b, c, l));
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn division_floor_prevents_nan() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(1.0));
        let z = tape.leaf(Tensor::scalar(0.0));
        let q = tape.div(a, z).unwrap();
        assert!(tape.value(q).unwrap().item().is_finite());
        let lg = tape.log(z).unwrap();
        assert!(tape.value(lg).unwrap().item().is_finite());
        let sq = tape.sqrt(z).unwrap();
        assert!(tape.value(sq).unwrap().item().is_finite());
    }

    #[test]
    fn works_in_f32_too() {
        let mut tape = crate::Tape32::new();
        let x = tape.leaf(crate::Tensor32::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let n = tape.l2_norm(x).unwrap();
        assert!((tape.value(n).unwrap().item() - 5.0).abs() < 1e-6);
        tape.backward(n).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g.data()[0] - 0.6).abs() < 1e-6);
        assert!((g.data()[1] - 0.8).abs() < 1e-6);
    }
}
