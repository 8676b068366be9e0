//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op evaluates eagerly, appends a node holding its value and the
//! information its backward rule needs, and returns a [`Var`] handle. Nodes
//! are appended after their operands, so walking the tape backwards is a
//! valid reverse topological order.

mod kernels;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) use kernels::sigmoid;
use kernels::{
    affine_normalize, avgpool_forward, channel_stats, conv1d_backward, conv1d_forward,
    for_each_broadcast, ConvDims,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a train-mode batchnorm, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased (population) variance over batch and length.
    pub var: Vec<F>,
    pub count: usize,
}

enum Op<F> {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dims: ConvDims,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        // eval mode normalizes with constants, so no batch coupling in backward
        batch_coupled: bool,
    },
    AvgPool {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Heaviside {
        input: Var,
        theta: F,
        width: F,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Slice {
        input: Var,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records operations and replays them in reverse for gradients.
///
/// A tape belongs to one forward pass on one thread. With gradients disabled
/// ([`Tape::inference`]) ops still compute values but keep no backward state.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    grad_enabled: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` is a no-op on it.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records a trainable leaf whose gradient will be accumulated.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        let rg = self.grad_enabled;
        self.push_raw(value, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated at `v` by the last `backward`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape")
        })
    }

    fn push_raw(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, operands: &[Var]) -> Var {
        let rg = self.grad_enabled && operands.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push_raw(value, op, rg)
    }

    fn rank3(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [b, c, s] => Ok((b, c, s)),
            ref other => Err(shape_err(op, "rank", format!("expected [b,c,s], got {other:?}"))),
        }
    }

    // ---- layers -------------------------------------------------------

    /// 1-D cross-correlation: `[b,c_in,s] * [c_out,c_in,k] -> [b,c_out,s_out]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batch, c_in, len) = self.rank3(input, "conv1d")?;
        let (c_out, wc_in, kernel) = match *self.shape(weight) {
            [o, i, k] => (o, i, k),
            ref other => {
                return Err(shape_err("conv1d", "weight", format!("expected [c_out,c_in,k], got {other:?}")))
            }
        };
        if stride == 0 {
            return Err(Error::Param("conv1d", "stride must be positive".into()));
        }
        if wc_in != c_in {
            return Err(shape_err(
                "conv1d",
                "channels",
                format!("input has {c_in} channels, weight expects {wc_in}"),
            ));
        }
        if kernel == 0 || kernel > len + 2 * padding {
            return Err(shape_err(
                "conv1d",
                "length",
                format!("kernel {kernel} exceeds padded length {}", len + 2 * padding),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err(
                    "conv1d",
                    "bias",
                    format!("expected [{c_out}], got {:?}", self.shape(b)),
                ));
            }
        }
        let dims = ConvDims {
            batch,
            c_in,
            len,
            c_out,
            kernel,
            stride,
            padding,
            out_len: (len + 2 * padding - kernel) / stride + 1,
        };
        let out = conv1d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
        );
        let value = Tensor::new(vec![batch, c_out, dims.out_len], out)?;
        let mut operands = vec![input, weight];
        operands.extend(bias);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            },
            &operands,
        ))
    }

    /// Train-mode batch normalization over the batch and length axes.
    /// Returns the output together with the batch statistics it used.
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> Result<(Var, BatchStats<F>)> {
        let (batch, ch, len) = self.rank3(input, "batchnorm1d")?;
        self.check_channel_vec(gamma, ch, "gamma")?;
        self.check_channel_vec(beta, ch, "beta")?;
        if batch * len < 2 {
            return Err(Error::DegenerateBatch(batch * len));
        }
        let (mean, var) = channel_stats(self.value(input).data(), batch, ch, len);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = affine_normalize(
            self.value(input).data(),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            batch,
            len,
        );
        let value = Tensor::new(vec![batch, ch, len], y)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_coupled: true,
            },
            &[input, gamma, beta],
        );
        Ok((
            v,
            BatchStats {
                mean,
                var,
                count: batch * len,
            },
        ))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        eps: F,
    ) -> Result<Var> {
        let (batch, ch, len) = self.rank3(input, "batchnorm1d")?;
        self.check_channel_vec(gamma, ch, "gamma")?;
        self.check_channel_vec(beta, ch, "beta")?;
        if running_mean.len() != ch || running_var.len() != ch {
            return Err(shape_err("batchnorm1d", "running_stats", "length differs from channels"));
        }
        let inv_std: Vec<F> = running_var
            .iter()
            .map(|&v| F::one() / (v + eps).sqrt())
            .collect();
        let (y, xhat) = affine_normalize(
            self.value(input).data(),
            running_mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            batch,
            len,
        );
        let value = Tensor::new(vec![batch, ch, len], y)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_coupled: false,
            },
            &[input, gamma, beta],
        ))
    }

    fn check_channel_vec(&self, v: Var, ch: usize, axis: &'static str) -> Result<()> {
        if self.shape(v) != [ch] {
            return Err(shape_err(
                "batchnorm1d",
                axis,
                format!("expected [{ch}], got {:?}", self.shape(v)),
            ));
        }
        Ok(())
    }

    pub fn avgpool1d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (batch, ch, len) = self.rank3(input, "avgpool1d")?;
        if kernel == 0 || stride == 0 {
            return Err(Error::Param("avgpool1d", "kernel and stride must be positive".into()));
        }
        if kernel > len {
            return Err(shape_err("avgpool1d", "length", format!("kernel {kernel} > length {len}")));
        }
        let out_len = (len - kernel) / stride + 1;
        let out = avgpool_forward(self.value(input).data(), batch * ch, len, kernel, stride, out_len);
        let value = Tensor::new(vec![batch, ch, out_len], out)?;
        Ok(self.push(value, Op::AvgPool { input, kernel, stride }, &[input]))
    }

    /// `[b,n] x [m,n]^T + [m] -> [b,m]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, n) = match *self.shape(input) {
            [b, n] => (b, n),
            ref other => return Err(shape_err("fully_connected", "input", format!("expected [b,n], got {other:?}"))),
        };
        let (m, wn) = match *self.shape(weight) {
            [m, n] => (m, n),
            ref other => return Err(shape_err("fully_connected", "weight", format!("expected [m,n], got {other:?}"))),
        };
        if wn != n {
            return Err(shape_err("fully_connected", "inner", format!("input has {n} features, weight expects {wn}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(shape_err("fully_connected", "bias", format!("expected [{m}], got {:?}", self.shape(b))));
            }
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![F::zero(); batch * m];
        for i in 0..batch {
            let xr = &x[i * n..][..n];
            for j in 0..m {
                let wr = &w[j * n..][..n];
                let mut acc = bias.map_or(F::zero(), |b| self.value(b).data()[j]);
                for (a, b) in xr.iter().zip(wr) {
                    acc += *a * *b;
                }
                out[i * m + j] = acc;
            }
        }
        let value = Tensor::new(vec![batch, m], out)?;
        let mut operands = vec![input, weight];
        operands.extend(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, &operands))
    }

    /// Heaviside step in the forward pass (`x >= theta` fires), rectangular
    /// surrogate of width `width` and height `1/width` in the backward pass.
    pub fn heaviside(&mut self, input: Var, theta: F, width: F) -> Result<Var> {
        if !(width > F::zero()) {
            return Err(Error::Param("heaviside_surrogate", format!("width must be > 0, got {width}")));
        }
        let value = self
            .value(input)
            .map(|x| if x >= theta { F::one() } else { F::zero() });
        Ok(self.push(value, Op::Heaviside { input, theta, width }, &[input]))
    }

    // ---- elementwise ----------------------------------------------------

    fn broadcast_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(shape_err(op, "rank", format!("{sa:?} vs {sb:?}")));
        }
        sa.iter()
            .zip(sb)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, _) => Ok(y),
                (_, 1) => Ok(x),
                _ => Err(shape_err(op, "broadcast", format!("{sa:?} vs {sb:?}"))),
            })
            .collect()
    }

    fn binary(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, op_name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![F::zero(); shape.iter().product()];
            let (da, db) = (va.data(), vb.data());
            for_each_broadcast(&shape, va.shape(), vb.shape(), |o, ia, ib| {
                out[o] = f(da[ia], db[ib]);
            });
            out
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, op, &[a, b]))
    }

    /// Elementwise sum with broadcasting over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise product with broadcasting over size-1 axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale(a, k), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// Mean over one axis of a rank-3 tensor, keeping it as size 1.
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let (b, c, s) = self.rank3(input, "mean")?;
        let x = self.value(input).data();
        let value = match axis {
            1 => {
                let inv = F::one() / F::of_usize(c);
                let mut out = vec![F::zero(); b * s];
                for n in 0..b {
                    let orow = &mut out[n * s..][..s];
                    for ch in 0..c {
                        for (o, &xv) in orow.iter_mut().zip(&x[(n * c + ch) * s..][..s]) {
                            *o += xv;
                        }
                    }
                    orow.iter_mut().for_each(|o| *o *= inv);
                }
                Tensor::new(vec![b, 1, s], out)?
            }
            2 => {
                let inv = F::one() / F::of_usize(s);
                let out = x.chunks(s).map(|r| r.iter().copied().sum::<F>() * inv).collect();
                Tensor::new(vec![b, c, 1], out)?
            }
            _ => return Err(shape_err("mean", "axis", format!("axis {axis} not supported on [b,c,s]"))),
        };
        Ok(self.push(value, Op::MeanAxis { input, axis }, &[input]))
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err("concat_channels", "inputs", "empty list"))?;
        let (b, _, s) = self.rank3(first, "concat_channels")?;
        let mut total_c = 0;
        for &v in inputs {
            let (vb, vc, vs) = self.rank3(v, "concat_channels")?;
            if vb != b || vs != s {
                return Err(shape_err("concat_channels", "batch/length", format!("{:?} vs {:?}", self.shape(first), self.shape(v))));
            }
            total_c += vc;
        }
        let mut out = Vec::with_capacity(b * total_c * s);
        for n in 0..b {
            for &v in inputs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[n * c * s..][..c * s]);
            }
        }
        let value = Tensor::new(vec![b, total_c, s], out)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, inputs))
    }

    /// Channels `start..start+len` of a rank-3 tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, s) = self.rank3(input, "split_channels")?;
        if start + len > c || len == 0 {
            return Err(shape_err("split_channels", "channels", format!("{start}..{} of {c}", start + len)));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * len * s);
        for n in 0..b {
            out.extend_from_slice(&x[(n * c + start) * s..][..len * s]);
        }
        let value = Tensor::new(vec![b, len, s], out)?;
        Ok(self.push(value, Op::Slice { input, start }, &[input]))
    }

    /// Splits the channel axis into `parts` equal pieces.
    pub fn split_channels(&mut self, input: Var, parts: usize) -> Result<Vec<Var>> {
        let c = self.rank3(input, "split_channels")?.1;
        if parts == 0 || c % parts != 0 {
            return Err(shape_err("split_channels", "channels", format!("{c} channels into {parts} parts")));
        }
        let w = c / parts;
        (0..parts).map(|p| self.slice_channels(input, p * w, w)).collect()
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let (b, m, n) = self.rank3(input, "transpose")?;
        let x = self.value(input).data();
        let mut out = vec![F::zero(); b * m * n];
        for k in 0..b {
            for i in 0..m {
                for j in 0..n {
                    out[(k * n + j) * m + i] = x[(k * m + i) * n + j];
                }
            }
        }
        let value = Tensor::new(vec![b, n, m], out)?;
        Ok(self.push(value, Op::Transpose(input), &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(input), &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::SumAll(input), &[input])
    }

    /// Mean softmax cross-entropy of `[b,K]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = match *self.shape(logits) {
            [b, k] => (b, k),
            ref other => return Err(shape_err("cross_entropy", "logits", format!("expected [b,K], got {other:?}"))),
        };
        if labels.len() != b {
            return Err(shape_err("cross_entropy", "batch", format!("{b} rows, {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label: bad, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![F::zero(); b * k];
        let mut loss = F::zero();
        for i in 0..b {
            let row = &z[i * k..][..k];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for (p, &v) in probs[i * k..][..k].iter_mut().zip(row) {
                *p = (v - max).exp();
                denom += *p;
            }
            probs[i * k..][..k].iter_mut().for_each(|p| *p /= denom);
            loss += denom.ln() + max - row[labels[i]];
        }
        let value = Tensor::scalar(loss / F::of_usize(b));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Back-propagates from a single-element `root`, seeding its gradient
    /// with one. Gradients accumulate, so a second call adds to the first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(shape_err("backward", "root", format!("expected a scalar, got {:?}", self.shape(root))));
        }
        self.backward_with(root, Tensor::scalar(F::one()))
    }

    /// Back-propagates an explicit upstream gradient from `root`.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<F>) -> Result<()> {
        if seed.shape() != self.shape(root) {
            return Err(shape_err("backward", "seed", format!("{:?} vs {:?}", seed.shape(), self.shape(root))));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.grads, &self.nodes, root, seed.data());
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn propagate(&mut self, i: usize, g: &[F]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            } => {
                let mut dx = wants(nodes, *input).then(|| vec![F::zero(); val(*input).len()]);
                let mut dw = wants(nodes, *weight).then(|| vec![F::zero(); val(*weight).len()]);
                let mut db = bias
                    .filter(|b| wants(nodes, *b))
                    .map(|b| vec![F::zero(); val(b).len()]);
                conv1d_backward(
                    val(*input),
                    val(*weight),
                    g,
                    dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accumulate(grads, nodes, *input, &dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, nodes, *weight, &dw);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    accumulate(grads, nodes, *b, &db);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_coupled,
            } => {
                let shape = nodes[i].value.shape();
                let (b, c, s) = (shape[0], shape[1], shape[2]);
                let gam = val(*gamma);
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for n in 0..b {
                    for ch in 0..c {
                        let off = (n * c + ch) * s;
                        for j in off..off + s {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                if wants(nodes, *input) {
                    let mut dx = vec![F::zero(); g.len()];
                    let count = F::of_usize(b * s);
                    for n in 0..b {
                        for ch in 0..c {
                            let off = (n * c + ch) * s;
                            let k = gam[ch] * inv_std[ch];
                            for j in off..off + s {
                                dx[j] = if *batch_coupled {
                                    k * (g[j] - (dbeta[ch] + xhat[j] * dgamma[ch]) / count)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                    accumulate(grads, nodes, *input, &dx);
                }
                accumulate(grads, nodes, *gamma, &dgamma);
                accumulate(grads, nodes, *beta, &dbeta);
            }
            Op::AvgPool {
                input,
                kernel,
                stride,
            } => {
                let ishape = nodes[input.0].value.shape();
                let (rows, len) = (ishape[0] * ishape[1], ishape[2]);
                let out_len = nodes[i].value.shape()[2];
                let inv = F::one() / F::of_usize(*kernel);
                let mut dx = vec![F::zero(); rows * len];
                for r in 0..rows {
                    for o in 0..out_len {
                        let gv = g[r * out_len + o] * inv;
                        for d in &mut dx[r * len + o * stride..][..*kernel] {
                            *d += gv;
                        }
                    }
                }
                accumulate(grads, nodes, *input, &dx);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let (b, n) = (nodes[input.0].value.shape()[0], nodes[input.0].value.shape()[1]);
                let m = w.len() / n;
                if wants(nodes, *input) {
                    let mut dx = vec![F::zero(); b * n];
                    for r in 0..b {
                        for j in 0..m {
                            let gv = g[r * m + j];
                            for (d, &wv) in dx[r * n..][..n].iter_mut().zip(&w[j * n..][..n]) {
                                *d += gv * wv;
                            }
                        }
                    }
                    accumulate(grads, nodes, *input, &dx);
                }
                if wants(nodes, *weight) {
                    let mut dw = vec![F::zero(); m * n];
                    for r in 0..b {
                        for j in 0..m {
                            let gv = g[r * m + j];
                            for (d, &xv) in dw[j * n..][..n].iter_mut().zip(&x[r * n..][..n]) {
                                *d += gv * xv;
                            }
                        }
                    }
                    accumulate(grads, nodes, *weight, &dw);
                }
                if let Some(bv) = bias {
                    let mut db = vec![F::zero(); m];
                    for r in 0..b {
                        for j in 0..m {
                            db[j] += g[r * m + j];
                        }
                    }
                    accumulate(grads, nodes, *bv, &db);
                }
            }
            Op::Heaviside {
                input,
                theta,
                width,
            } => {
                let half = *width / F::of(2.0);
                let height = F::one() / *width;
                let dx: Vec<F> = val(*input)
                    .iter()
                    .zip(g)
                    .map(|(&h, &gv)| {
                        if (h - *theta).abs() < half {
                            gv * height
                        } else {
                            F::zero()
                        }
                    })
                    .collect();
                accumulate(grads, nodes, *input, &dx);
            }
            Op::Add(a, b) => {
                let out_shape = nodes[i].value.shape();
                for &v in [a, b] {
                    if !wants(nodes, v) {
                        continue;
                    }
                    if nodes[v.0].value.shape() == out_shape {
                        accumulate(grads, nodes, v, g);
                    } else {
                        let mut d = vec![F::zero(); val(v).len()];
                        for_each_broadcast(out_shape, nodes[v.0].value.shape(), out_shape, |o, iv, _| {
                            d[iv] += g[o];
                        });
                        accumulate(grads, nodes, v, &d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let out_shape = nodes[i].value.shape();
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (xa, xb) = (val(*a), val(*b));
                let mut da = wants(nodes, *a).then(|| vec![F::zero(); xa.len()]);
                let mut db = wants(nodes, *b).then(|| vec![F::zero(); xb.len()]);
                for_each_broadcast(out_shape, sa, sb, |o, ia, ib| {
                    if let Some(da) = da.as_mut() {
                        da[ia] += g[o] * xb[ib];
                    }
                    if let Some(db) = db.as_mut() {
                        db[ib] += g[o] * xa[ia];
                    }
                });
                if let Some(da) = da {
                    accumulate(grads, nodes, *a, &da);
                }
                if let Some(db) = db {
                    accumulate(grads, nodes, *b, &db);
                }
            }
            Op::Scale(a, k) => {
                let d: Vec<F> = g.iter().map(|&x| x * *k).collect();
                accumulate(grads, nodes, *a, &d);
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data();
                let d: Vec<F> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * yv * (F::one() - yv))
                    .collect();
                accumulate(grads, nodes, *a, &d);
            }
            Op::MeanAxis { input, axis } => {
                let shape = nodes[input.0].value.shape();
                let (b, c, s) = (shape[0], shape[1], shape[2]);
                let mut dx = vec![F::zero(); b * c * s];
                if *axis == 1 {
                    let inv = F::one() / F::of_usize(c);
                    for n in 0..b {
                        for ch in 0..c {
                            for j in 0..s {
                                dx[(n * c + ch) * s + j] = g[n * s + j] * inv;
                            }
                        }
                    }
                } else {
                    let inv = F::one() / F::of_usize(s);
                    for (row, &gv) in dx.chunks_mut(s).zip(g) {
                        row.iter_mut().for_each(|d| *d = gv * inv);
                    }
                }
                accumulate(grads, nodes, *input, &dx);
            }
            Op::Concat { inputs } => {
                let shape = nodes[i].value.shape();
                let (b, total_c, s) = (shape[0], shape[1], shape[2]);
                let mut offset = 0;
                for &v in inputs {
                    let c = nodes[v.0].value.shape()[1];
                    if wants(nodes, v) {
                        let mut d = Vec::with_capacity(b * c * s);
                        for n in 0..b {
                            d.extend_from_slice(&g[(n * total_c + offset) * s..][..c * s]);
                        }
                        accumulate(grads, nodes, v, &d);
                    }
                    offset += c;
                }
            }
            Op::Slice { input, start } => {
                let ishape = nodes[input.0].value.shape();
                let (b, c, s) = (ishape[0], ishape[1], ishape[2]);
                let len = nodes[i].value.shape()[1];
                let mut dx = vec![F::zero(); b * c * s];
                for n in 0..b {
                    dx[(n * c + start) * s..][..len * s].copy_from_slice(&g[n * len * s..][..len * s]);
                }
                accumulate(grads, nodes, *input, &dx);
            }
            Op::Transpose(input) => {
                let shape = nodes[input.0].value.shape();
                let (b, m, n) = (shape[0], shape[1], shape[2]);
                let mut dx = vec![F::zero(); b * m * n];
                for k in 0..b {
                    for r in 0..m {
                        for c in 0..n {
                            dx[(k * m + r) * n + c] = g[(k * n + c) * m + r];
                        }
                    }
                }
                accumulate(grads, nodes, *input, &dx);
            }
            Op::Reshape(input) => accumulate(grads, nodes, *input, g),
            Op::SumAll(input) => {
                let d = vec![g[0]; val(*input).len()];
                accumulate(grads, nodes, *input, &d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / F::of_usize(b);
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] -= scale;
                }
                accumulate(grads, nodes, *logits, &d);
            }
        }
    }
}

fn wants<F>(nodes: &[Node<F>], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var, d: &[F]) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, &x)| *a += x),
        slot @ None => *slot = Some(d.to_vec()),
    }
}
