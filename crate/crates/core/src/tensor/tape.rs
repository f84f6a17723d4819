//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] is an append-only arena of recorded operations. Forward calls
//! push one node each and return a [`ValueId`]; [`Tape::backward`] replays
//! the arena in reverse from a scalar root. Node order is construction
//! order, so every node's parents precede it by construction.
//!
//! One tape serves one forward/backward pass (typically one batch) and is
//! then dropped. A tape is confined to a single thread; independent tapes
//! may run concurrently.

use super::kernels;
use super::Tensor;
use crate::error::Error;
use crate::scalar::Scalar;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

/// Forward-pass mode, relevant to batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance state owned by a batchnorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> RunningStats<S> {
    /// Fresh stats: mean 0, variance 1.
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
        }
    }
}

enum Op<S> {
    Leaf,
    Affine {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    Conv2d {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        xhat: Vec<S>,
        invstd: Vec<S>,
        batch_stats: bool,
    },
    MaxPool {
        x: ValueId,
        argmax: Vec<usize>,
    },
    Relu {
        x: ValueId,
    },
    Spike {
        h: ValueId,
        alpha: S,
        v_th: S,
    },
    HardReset {
        h: ValueId,
        s: ValueId,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Scale {
        x: ValueId,
        c: S,
    },
    Reshape {
        x: ValueId,
    },
    Crop2d {
        x: ValueId,
    },
    Dropout {
        x: ValueId,
        mask: Vec<S>,
    },
    SoftmaxCe {
        logits: ValueId,
        probs: Vec<S>,
        labels: Vec<usize>,
    },
    Sum {
        x: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    backward_done: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Set `requires_grad` on the tensor beforehand
    /// for trainable parameters.
    pub fn leaf(&mut self, value: Tensor<S>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn data(&self, id: ValueId) -> &[S] {
        &self.nodes[id.0].value.data
    }

    /// Gradient of the last backward root with respect to this value.
    /// None if backward has not run or the value did not require gradients.
    pub fn grad(&self, id: ValueId) -> Option<&[S]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    fn out(&mut self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Op<S>) -> ValueId {
        let t = Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        };
        self.push(t, op)
    }

    fn needs(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].value.requires_grad)
    }

    // ------------------------------------------------------------ layers

    /// out[b,o] = sum_i x[b,i] w[o,i] + bias[o]
    pub fn affine(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId, Error> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Error::Dim(format!(
                "affine expects x[B,I], w[O,I], b[O]; got x{xs:?}, w{ws:?}, b{bs:?}"
            )));
        }
        let (batch, in_dim, out_dim) = (xs[0], xs[1], ws[0]);
        let data = kernels::affine_forward(
            self.data(x),
            batch,
            in_dim,
            self.data(w),
            out_dim,
            self.data(b),
        );
        let rg = self.needs(&[x, w, b]);
        Ok(self.out(vec![batch, out_dim], data, rg, Op::Affine { x, w, b }))
    }

    /// Zero-padded strided cross-correlation.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId, Error> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::Dim(format!(
                "conv2d expects x[B,C,H,W], w[Co,Ci,Kh,Kw], b[Co]; got x{xs:?}, w{ws:?}, b{bs:?}"
            )));
        }
        if ws[1] != xs[1] || bs[0] != ws[0] {
            return Err(Error::Dim(format!(
                "conv2d channel mismatch: x{xs:?} vs w{ws:?}, b{bs:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Domain("conv2d stride must be >= 1".into()));
        }
        let dims = (xs[0], xs[1], xs[2], xs[3]);
        let kdims = (ws[0], ws[2], ws[3]);
        let h_out = kernels::conv_out_extent(xs[2], ws[2], stride, pad);
        let w_out = kernels::conv_out_extent(xs[3], ws[3], stride, pad);
        let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
            return Err(Error::Dim(format!(
                "conv2d kernel {}x{} exceeds padded input {}x{} (pad {pad})",
                ws[2],
                ws[3],
                xs[2] + 2 * pad,
                xs[3] + 2 * pad
            )));
        };
        let (data, _, _) = kernels::conv2d_forward(
            self.data(x),
            dims,
            self.data(w),
            kdims,
            self.data(b),
            stride,
            pad,
        );
        let rg = self.needs(&[x, w, b]);
        Ok(self.out(
            vec![dims.0, kdims.0, h_out, w_out],
            data,
            rg,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Batch normalization over the channel axis of x[B,C,H,W].
    ///
    /// Train mode normalizes by batch statistics and folds them into
    /// `state` with the given momentum; eval mode reads `state`.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        state: &mut RunningStats<S>,
        mode: Mode,
        momentum: S,
        eps: S,
    ) -> Result<ValueId, Error> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::Dim(format!("batchnorm2d expects x[B,C,H,W], got {xs:?}")));
        }
        let dims = (xs[0], xs[1], xs[2], xs[3]);
        let c = dims.1;
        let gs = self.shape(gamma);
        let bs = self.shape(beta);
        if gs != [c] || bs != [c] || state.mean.len() != c || state.var.len() != c {
            return Err(Error::Dim(format!(
                "batchnorm2d parameter shapes gamma{gs:?}, beta{bs:?}, state[{}] do not match {c} channels",
                state.mean.len()
            )));
        }
        let n = dims.0 * dims.2 * dims.3;
        let fwd = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Dim(format!(
                        "batchnorm2d train mode needs at least 2 values per channel, got {n}"
                    )));
                }
                let fwd = kernels::bn_train_forward(self.data(x), dims, self.data(gamma), self.data(beta), eps);
                let unbias = S::from_usize(n) / S::from_usize(n - 1);
                let keep = S::one() - momentum;
                for ci in 0..c {
                    state.mean[ci] = keep * state.mean[ci] + momentum * fwd.mean[ci];
                    state.var[ci] = keep * state.var[ci] + momentum * fwd.var[ci] * unbias;
                }
                fwd
            }
            Mode::Eval => kernels::bn_eval_forward(
                self.data(x),
                dims,
                self.data(gamma),
                self.data(beta),
                &state.mean,
                &state.var,
                eps,
            ),
        };
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.out(
            xs.to_vec(),
            fwd.y,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                invstd: fwd.invstd,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    /// Non-overlapping window maximum; extents must divide exactly.
    pub fn maxpool2d(&mut self, x: ValueId, window: usize) -> Result<ValueId, Error> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::Dim(format!("maxpool2d expects x[B,C,H,W], got {xs:?}")));
        }
        if window == 0 {
            return Err(Error::Domain("maxpool2d window must be >= 1".into()));
        }
        if !xs[2].is_multiple_of(window) || !xs[3].is_multiple_of(window) {
            return Err(Error::Dim(format!(
                "maxpool2d extents {}x{} not divisible by window {window}",
                xs[2], xs[3]
            )));
        }
        let dims = (xs[0], xs[1], xs[2], xs[3]);
        let (data, argmax) = kernels::maxpool_forward(self.data(x), dims, window);
        let rg = self.needs(&[x]);
        Ok(self.out(
            vec![dims.0, dims.1, dims.2 / window, dims.3 / window],
            data,
            rg,
            Op::MaxPool { x, argmax },
        ))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId, Error> {
        let data: Vec<S> = self
            .data(x)
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let rg = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.out(shape, data, rg, Op::Relu { x }))
    }

    /// Hard threshold: 1 where h >= v_th, else 0. The backward pass uses
    /// the sigmoid surrogate derivative with slope `alpha`.
    pub fn spike(&mut self, h: ValueId, alpha: S, v_th: S) -> Result<ValueId, Error> {
        if alpha <= S::zero() || !alpha.is_finite() {
            return Err(Error::Domain(format!("surrogate slope must be positive, got {alpha}")));
        }
        let data: Vec<S> = self
            .data(h)
            .iter()
            .map(|&v| if v >= v_th { S::one() } else { S::zero() })
            .collect();
        let rg = self.needs(&[h]);
        let shape = self.shape(h).to_vec();
        Ok(self.out(shape, data, rg, Op::Spike { h, alpha, v_th }))
    }

    /// Post-spike membrane update v = h * (1 - s). Gradients flow into both
    /// the membrane and the spike.
    pub fn hard_reset(&mut self, h: ValueId, s: ValueId) -> Result<ValueId, Error> {
        if self.shape(h) != self.shape(s) {
            return Err(Error::Dim(format!(
                "hard_reset shapes differ: {:?} vs {:?}",
                self.shape(h),
                self.shape(s)
            )));
        }
        let data: Vec<S> = self
            .data(h)
            .iter()
            .zip(self.data(s).iter())
            .map(|(&hv, &sv)| hv * (S::one() - sv))
            .collect();
        let rg = self.needs(&[h, s]);
        let shape = self.shape(h).to_vec();
        Ok(self.out(shape, data, rg, Op::HardReset { h, s }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, Error> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dim(format!(
                "add shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.out(shape, data, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, Error> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dim(format!(
                "mul shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.out(shape, data, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, c: S) -> Result<ValueId, Error> {
        let data: Vec<S> = self.data(x).iter().map(|&v| c * v).collect();
        let rg = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.out(shape, data, rg, Op::Scale { x, c }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId, Error> {
        let numel: usize = shape.iter().product();
        if numel != self.data(x).len() || shape.contains(&0) {
            return Err(Error::Dim(format!(
                "reshape of {:?} to {shape:?} changes element count",
                self.shape(x)
            )));
        }
        let data = self.data(x).to_vec();
        let rg = self.needs(&[x]);
        Ok(self.out(shape, data, rg, Op::Reshape { x }))
    }

    /// Keeps the top-left out_h x out_w region of each plane.
    pub fn crop2d(&mut self, x: ValueId, out_h: usize, out_w: usize) -> Result<ValueId, Error> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::Dim(format!("crop2d expects x[B,C,H,W], got {xs:?}")));
        }
        let (bs, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::Dim(format!(
                "crop2d target {out_h}x{out_w} outside input {h}x{w}"
            )));
        }
        let x_data = self.data(x);
        let mut data = vec![S::zero(); bs * c * out_h * out_w];
        for b in 0..bs {
            for ci in 0..c {
                let src = (b * c + ci) * h * w;
                let dst = (b * c + ci) * out_h * out_w;
                for r in 0..out_h {
                    data[dst + r * out_w..dst + (r + 1) * out_w]
                        .copy_from_slice(&x_data[src + r * w..src + r * w + out_w]);
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.out(vec![bs, c, out_h, out_w], data, rg, Op::Crop2d { x }))
    }

    /// Elementwise multiply by a precomputed inverted-dropout mask whose
    /// entries are 0 or 1/(1-p). The caller owns mask sampling so one mask
    /// can be shared across timesteps.
    pub fn dropout_masked(&mut self, x: ValueId, mask: Vec<S>) -> Result<ValueId, Error> {
        if mask.len() != self.data(x).len() {
            return Err(Error::Dim(format!(
                "dropout mask length {} does not match input {:?}",
                mask.len(),
                self.shape(x)
            )));
        }
        let data: Vec<S> = self
            .data(x)
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        let rg = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.out(shape, data, rg, Op::Dropout { x, mask }))
    }

    /// Mean over the batch of -log softmax(logits)[label], computed with
    /// max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId, Error> {
        let ls = self.shape(logits);
        if ls.len() != 2 {
            return Err(Error::Dim(format!(
                "softmax_cross_entropy expects logits[B,K], got {ls:?}"
            )));
        }
        let (batch, k) = (ls[0], ls[1]);
        if labels.len() != batch {
            return Err(Error::Dim(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let (loss, probs) = kernels::softmax_ce_forward(self.data(logits), batch, k, labels);
        let rg = self.needs(&[logits]);
        Ok(self.out(
            vec![1],
            vec![loss],
            rg,
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: ValueId) -> Result<ValueId, Error> {
        let mut s = S::zero();
        for v in self.data(x) {
            s += *v;
        }
        let rg = self.needs(&[x]);
        Ok(self.out(vec![1], vec![s], rg, Op::Sum { x }))
    }

    // ---------------------------------------------------------- backward

    /// Populates `grad` for every gradient-requiring ancestor of `root`.
    /// Leaves that require gradients but are disconnected from the root
    /// read back as zeros. Runs once per tape.
    pub fn backward(&mut self, root: ValueId) -> Result<(), Error> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        let Some(root_node) = self.nodes.get(root.0) else {
            return Err(Error::Contract("backward root is not on this tape".into()));
        };
        if !root_node.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if self.nodes[i].value.requires_grad {
                self.nodes[i].value.grad = Some(g);
            }
        }

        // Disconnected parameters read as zero gradients.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad && node.value.grad.is_none() {
                node.value.grad = Some(vec![S::zero(); node.value.data.len()]);
            }
        }
        Ok(())
    }

    fn wants(&self, id: ValueId) -> bool {
        self.nodes[id.0].value.requires_grad
    }

    fn accum(&self, grads: &mut [Option<Vec<S>>], id: ValueId, add: &[S]) {
        let buf = grads[id.0].get_or_insert_with(|| vec![S::zero(); self.nodes[id.0].value.data.len()]);
        for (b, a) in buf.iter_mut().zip(add.iter()) {
            *b += *a;
        }
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xs = self.shape(*x);
                let (batch, in_dim) = (xs[0], xs[1]);
                let out_dim = self.shape(*w)[0];
                let (dx, dw, db) =
                    kernels::affine_backward(g, self.data(*x), self.data(*w), batch, in_dim, out_dim);
                if self.wants(*x) {
                    self.accum(grads, *x, &dx);
                }
                if self.wants(*w) {
                    self.accum(grads, *w, &dw);
                }
                if self.wants(*b) {
                    self.accum(grads, *b, &db);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let os = &self.nodes[i].value.shape;
                let (dx, dw, db) = kernels::conv2d_backward(
                    g,
                    self.data(*x),
                    self.data(*w),
                    (xs[0], xs[1], xs[2], xs[3]),
                    (ws[0], ws[2], ws[3]),
                    (os[2], os[3]),
                    *stride,
                    *pad,
                );
                if self.wants(*x) {
                    self.accum(grads, *x, &dx);
                }
                if self.wants(*w) {
                    self.accum(grads, *w, &dw);
                }
                if self.wants(*b) {
                    self.accum(grads, *b, &db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                batch_stats,
            } => {
                let xs = self.shape(*x);
                let (dx, dgamma, dbeta) = kernels::bn_backward(
                    g,
                    xhat,
                    invstd,
                    self.data(*gamma),
                    (xs[0], xs[1], xs[2], xs[3]),
                    *batch_stats,
                );
                if self.wants(*x) {
                    self.accum(grads, *x, &dx);
                }
                if self.wants(*gamma) {
                    self.accum(grads, *gamma, &dgamma);
                }
                if self.wants(*beta) {
                    self.accum(grads, *beta, &dbeta);
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.wants(*x) {
                    let dx = kernels::maxpool_backward(g, argmax, self.data(*x).len());
                    self.accum(grads, *x, &dx);
                }
            }
            Op::Relu { x } => {
                if self.wants(*x) {
                    let xv = self.data(*x);
                    let dx: Vec<S> = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gi, &xi)| if xi > S::zero() { gi } else { S::zero() })
                        .collect();
                    self.accum(grads, *x, &dx);
                }
            }
            Op::Spike { h, alpha, v_th } => {
                if self.wants(*h) {
                    let hv = self.data(*h);
                    let a = *alpha;
                    let dx: Vec<S> = g
                        .iter()
                        .zip(hv.iter())
                        .map(|(&gi, &hi)| {
                            let sig = S::one() / (S::one() + (-(a * (hi - *v_th))).exp());
                            gi * a * sig * (S::one() - sig)
                        })
                        .collect();
                    self.accum(grads, *h, &dx);
                }
            }
            Op::HardReset { h, s } => {
                if self.wants(*h) {
                    let sv = self.data(*s);
                    let dh: Vec<S> = g
                        .iter()
                        .zip(sv.iter())
                        .map(|(&gi, &si)| gi * (S::one() - si))
                        .collect();
                    self.accum(grads, *h, &dh);
                }
                if self.wants(*s) {
                    let hv = self.data(*h);
                    let ds: Vec<S> = g
                        .iter()
                        .zip(hv.iter())
                        .map(|(&gi, &hi)| -gi * hi)
                        .collect();
                    self.accum(grads, *s, &ds);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    self.accum(grads, *a, g);
                }
                if self.wants(*b) {
                    self.accum(grads, *b, g);
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    let bv = self.data(*b);
                    let da: Vec<S> = g.iter().zip(bv.iter()).map(|(&gi, &bi)| gi * bi).collect();
                    self.accum(grads, *a, &da);
                }
                if self.wants(*b) {
                    let av = self.data(*a);
                    let db: Vec<S> = g.iter().zip(av.iter()).map(|(&gi, &ai)| gi * ai).collect();
                    self.accum(grads, *b, &db);
                }
            }
            Op::Scale { x, c } => {
                if self.wants(*x) {
                    let dx: Vec<S> = g.iter().map(|&gi| *c * gi).collect();
                    self.accum(grads, *x, &dx);
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    self.accum(grads, *x, g);
                }
            }
            Op::Crop2d { x } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let (bs, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let os = &self.nodes[i].value.shape;
                    let (oh, ow) = (os[2], os[3]);
                    let mut dx = vec![S::zero(); bs * c * h * w];
                    for b in 0..bs {
                        for ci in 0..c {
                            let src = (b * c + ci) * oh * ow;
                            let dst = (b * c + ci) * h * w;
                            for r in 0..oh {
                                for col in 0..ow {
                                    dx[dst + r * w + col] += g[src + r * ow + col];
                                }
                            }
                        }
                    }
                    self.accum(grads, *x, &dx);
                }
            }
            Op::Dropout { x, mask } => {
                if self.wants(*x) {
                    let dx: Vec<S> = g.iter().zip(mask.iter()).map(|(&gi, &mi)| gi * mi).collect();
                    self.accum(grads, *x, &dx);
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                if self.wants(*logits) {
                    let ls = self.shape(*logits);
                    let (batch, k) = (ls[0], ls[1]);
                    let scale = g[0] / S::from_usize(batch);
                    let mut dl = probs.clone();
                    for (b, &lab) in labels.iter().enumerate() {
                        dl[b * k + lab] -= S::one();
                    }
                    for v in &mut dl {
                        *v *= scale;
                    }
                    self.accum(grads, *logits, &dl);
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    let dx = vec![g[0]; self.data(*x).len()];
                    self.accum(grads, *x, &dx);
                }
            }
        }
    }
}
