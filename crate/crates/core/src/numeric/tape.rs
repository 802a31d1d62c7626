//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value; [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid reverse topological order
//! because inputs are always recorded before the operations that use them.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::domain_mix::LabelMap;
use crate::error::{DtsError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    WeightedCe {
        logits: Var,
        grad: Vec<f32>,
    },
    Sum {
        input: Var,
    },
    Square {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f32,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Writes the gradient of `v` into `target.grad`, replacing any previous
    /// value unless `accumulate` is set.
    pub fn attach(&self, v: Var, target: &mut Tensor, accumulate: bool) -> Result<()> {
        match self.get(v) {
            Some(g) => target.set_grad(g, accumulate),
            None if accumulate => Ok(()),
            None => target.set_grad(&vec![0.0; target.numel()], false),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Gradients are tracked when `t.requires_grad` is set.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let rg = t.requires_grad;
        t.grad = None;
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let (c_out, kc, k) = match self.value(kernel).shape()[..] {
            [o, c, kh, kw] if kh == kw => (o, c, kh),
            ref s => {
                return Err(DtsError::dim(format!(
                    "kernel must be [C_out,C_in,k,k], got {s:?}"
                )))
            }
        };
        if kc != c_in {
            return Err(DtsError::dim(format!(
                "input has {c_in} channels but kernel expects {kc}"
            )));
        }
        if k % 2 == 0 {
            return Err(DtsError::InvalidArgument(format!(
                "kernel size {k} must be odd"
            )));
        }
        if stride == 0 {
            return Err(DtsError::InvalidArgument("stride must be >= 1".into()));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(DtsError::dim(format!(
                "{h}x{w} input too small for kernel {k} with padding {padding}"
            )));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad: padding,
            h_out: (h + 2 * padding - k) / stride + 1,
            w_out: (w + 2 * padding - k) / stride + 1,
        };
        let mut out = vec![0.0; c_out * geom.h_out * geom.w_out];
        kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            &mut out,
        );
        let value = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
            rg,
        ))
    }

    /// Adds a per-channel bias of shape `[C]` to a `[C,H,W]` tensor.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if self.value(bias).shape() != [c] {
            return Err(DtsError::dim(format!(
                "bias shape {:?} does not match {c} channels",
                self.value(bias).shape()
            )));
        }
        let mut out = self.value(input).data().to_vec();
        for (ch, &b) in self.value(bias).data().iter().enumerate() {
            out[ch * h * w..(ch + 1) * h * w]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        let value = Tensor::new(&[c, h, w], out)?;
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(value, Op::AddBias { input, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        let rg = self.rg(input);
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(DtsError::InvalidArgument(
                "upsample factor must be >= 1".into(),
            ));
        }
        let (c, h, w) = self.value(input).chw()?;
        let mut out = vec![0.0; c * h * w * factor * factor];
        kernels::upsample_nearest(c, h, w, factor, self.value(input).data(), &mut out);
        let value = Tensor::new(&[c, h * factor, w * factor], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Upsample { input, factor }, rg))
    }

    /// Mean over non-ignored pixels of `weight(p) * -log softmax(logits)[target(p), p]`.
    ///
    /// When every pixel is ignored the loss is exactly zero with zero gradient.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        target: &LabelMap,
        pixel_weight: &[f32],
    ) -> Result<Var> {
        let (c, h, w) = self.value(logits).chw()?;
        if target.height() != h || target.width() != w {
            return Err(DtsError::dim(format!(
                "logits are {h}x{w} but target is {}x{}",
                target.height(),
                target.width()
            )));
        }
        if pixel_weight.len() != h * w {
            return Err(DtsError::dim(format!(
                "pixel weight has {} entries for {h}x{w}",
                pixel_weight.len()
            )));
        }
        let lv = self.value(logits);
        if !lv.all_finite() {
            return Err(DtsError::NonFinite("cross-entropy logits"));
        }
        let hw = h * w;
        let mut probs = vec![0.0; c * hw];
        kernels::softmax_channels(c, hw, lv.data(), &mut probs);
        let valid = target
            .data()
            .iter()
            .filter(|&&t| t != LabelMap::IGNORE)
            .count();
        let mut grad = vec![0.0f32; c * hw];
        let mut total = 0.0f64;
        if valid > 0 {
            let inv = 1.0 / valid as f32;
            for p in 0..hw {
                let t = target.data()[p];
                if t == LabelMap::IGNORE {
                    continue;
                }
                let t = t as usize;
                if t >= c {
                    return Err(DtsError::InvalidArgument(format!(
                        "target class {t} out of range for {c} classes"
                    )));
                }
                let wp = pixel_weight[p];
                if wp < 0.0 {
                    return Err(DtsError::InvalidArgument("negative pixel weight".into()));
                }
                if wp == 0.0 {
                    continue;
                }
                // log-softmax via max-shift for the loss value
                let mut m = f32::NEG_INFINITY;
                for ch in 0..c {
                    m = m.max(lv.data()[ch * hw + p]);
                }
                let mut z = 0.0f32;
                for ch in 0..c {
                    z += (lv.data()[ch * hw + p] - m).exp();
                }
                let logp = lv.data()[t * hw + p] - m - z.ln();
                total += (-(wp as f64)) * logp as f64;
                let scale = wp * inv;
                for ch in 0..c {
                    grad[ch * hw + p] = scale * probs[ch * hw + p];
                }
                grad[t * hw + p] -= scale;
            }
            total /= valid as f64;
        }
        let value = Tensor::scalar(total as f32);
        let rg = self.rg(logits);
        Ok(self.push(value, Op::WeightedCe { logits, grad }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = kernels::sum(self.value(input).data());
        let rg = self.rg(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value =
            Tensor::new(x.shape(), x.data().iter().map(|v| v * v).collect()).expect("same shape");
        let rg = self.rg(input);
        self.push(value, Op::Square { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(DtsError::dim(format!(
                "add of {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let x = self.value(input);
        let value = Tensor::new(x.shape(), x.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let rg = self.rg(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| DtsError::InvalidArgument("mean of zero terms".into()))?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(self.scale(acc, 1.0 / vars.len() as f32))
    }

    /// Reverse pass from a scalar `loss`. Every call starts from zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(DtsError::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => {
                    if self.rg(*kernel) {
                        let dst = slot(&mut grads, *kernel, self.value(*kernel).numel());
                        kernels::conv2d_backward_kernel(geom, self.value(*input).data(), &g, dst);
                    }
                    if self.rg(*input) {
                        let dst = slot(&mut grads, *input, self.value(*input).numel());
                        kernels::conv2d_backward_input(geom, self.value(*kernel).data(), &g, dst);
                    }
                }
                Op::AddBias { input, bias } => {
                    let hw = self.value(*input).numel() / self.value(*bias).numel();
                    if self.rg(*bias) {
                        let dst = slot(&mut grads, *bias, self.value(*bias).numel());
                        for (ch, d) in dst.iter_mut().enumerate() {
                            *d += kernels::sum(&g[ch * hw..(ch + 1) * hw]);
                        }
                    }
                    if self.rg(*input) {
                        add_into(slot(&mut grads, *input, g.len()), &g);
                    }
                }
                Op::Relu { input } => {
                    let x = self.value(*input).data();
                    let dst = slot(&mut grads, *input, x.len());
                    for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(x) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Upsample { input, factor } => {
                    let (c, h, w) = self.value(*input).chw()?;
                    let dst = slot(&mut grads, *input, c * h * w);
                    kernels::upsample_nearest_backward(c, h, w, *factor, &g, dst);
                }
                Op::WeightedCe { logits, grad } => {
                    let dst = slot(&mut grads, *logits, grad.len());
                    for (d, &gv) in dst.iter_mut().zip(grad) {
                        *d += g[0] * gv;
                    }
                }
                Op::Sum { input } => {
                    let dst = slot(&mut grads, *input, self.value(*input).numel());
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Square { input } => {
                    let x = self.value(*input).data();
                    let dst = slot(&mut grads, *input, x.len());
                    for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(x) {
                        *d += 2.0 * xv * gv;
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.rg(v) {
                            add_into(slot(&mut grads, v, g.len()), &g);
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    let dst = slot(&mut grads, *input, g.len());
                    for (d, &gv) in dst.iter_mut().zip(&g) {
                        *d += factor * gv;
                    }
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut [f32] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
