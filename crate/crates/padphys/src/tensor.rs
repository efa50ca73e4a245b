//! Flat-buffer tensors and a per-pass reverse-mode tape.
//!
//! A [`Tensor`] is a shape plus a contiguous row-major `Vec<f64>`. All
//! arithmetic in this crate is f64 end to end, which keeps finite-difference
//! gradient checks meaningful at tight tolerances.
//!
//! Differentiation works through a [`Tape`]: every forward operation appends
//! one node, [`Tape::backward`] walks the record once in reverse and leaves
//! gradients on the leaf nodes that asked for them, and the tape is then
//! spent. Running backward twice, or on something that is not the scalar
//! result of a recorded pass, is an error rather than silent nonsense.
//! Activations are never mutated in place; each op allocates its output.

use crate::error::{Error, Result};
use rand::{Rng, RngExt};
use std::collections::HashMap;

fn check_finite(data: &[f64], context: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::nonfinite(context))
    }
}

#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length disagreement and non-finite
    /// values up front so later stages can assume both invariants.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} wants {expect} values, got {}", data.len()),
            ));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {} values as {shape:?}", self.data.len()),
            ));
        }
        Ok(Tensor { shape, data: self.data.clone(), grad: None })
    }
}

/// Named parameters in insertion order. Iteration order is the only order
/// anything downstream (saving, Adam state, gradient layout) relies on, so
/// it must be stable; names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub tensor: Tensor,
    pub trainable: bool,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.names.push(name.to_string());
        self.params.push(Parameter { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.names.iter().map(String::as_str).zip(self.params.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.names.iter().map(String::as_str).zip(self.params.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero-pad so the spatial size is preserved (stride 1, odd kernels).
    Same,
    /// No padding; output shrinks by kernel-1.
    Valid,
}

/// Node id on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, padding: Padding },
    Dense { input: Var, weight: Var, bias: Var },
    Tanh { input: Var },
    Sigmoid { input: Var },
    AvgPool2x2 { input: Var },
    Flatten { input: Var },
    Mul { lhs: Var, rhs: Var },
    MaskMul { features: Var, mask: Var },
    /// Elementwise scale sampled at forward time: keep/(1-rate) or 0.
    Dropout { input: Var, scale: Vec<f64> },
    MaskNormalize { input: Var },
    Sum { input: Var },
    Concat { inputs: Vec<Var> },
    MseLoss { pred: Var, target: Vec<f64> },
    BceLoss { pred: Var, labels: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass. Dropped (or truncated) after use; gradients
/// survive on leaf nodes until the next `truncate`/`zero_grads`.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    spent: bool,
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

    /// Current position, for a later [`Tape::truncate`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after `mark` and clears all gradients,
    /// making the tape ready for another forward pass while keeping the
    /// (typically leaf) prefix alive. Cheap way to reuse bound parameters
    /// across many forward passes.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.grads.truncate(mark);
        for g in &mut self.grads {
            *g = None;
        }
        self.spent = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient left on `v` by the last backward pass, if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers an input or parameter value. `requires_grad` marks it as a
    /// gradient sink for backward; constants and frozen parameters pass
    /// false and are guaranteed to receive no gradient.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(t.clone(), Op::Leaf, requires_grad)
    }

    /// 2-D convolution, stride 1. `input` is `[c_in, h, w]`, `kernel` is
    /// `[c_out, c_in, kh, kw]` with odd kh/kw, `bias` is `[c_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let (xs, ks, bs) = (x.shape(), k.shape(), b.shape());
        if xs.len() != 3 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(
                "conv2d",
                format!("want input [c,h,w], kernel [co,ci,kh,kw], bias [co]; got {xs:?}, {ks:?}, {bs:?}"),
            ));
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let (co, kci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kci != ci || bs[0] != co {
            return Err(Error::shape(
                "conv2d",
                format!("channel mismatch: input {ci}, kernel {kci}->{co}, bias {}", bs[0]),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel sides must be odd, got {kh}x{kw}")));
        }
        let (oh, ow) = match padding {
            Padding::Same => (h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("valid padding needs kernel {kh}x{kw} <= input {h}x{w}"),
                    ));
                }
                (h - kh + 1, w - kw + 1)
            }
        };
        let (ph, pw) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };

        let mut out = vec![0.0; co * oh * ow];
        let xd = x.data();
        let kd = k.data();
        let bd = b.data();
        for c_out in 0..co {
            let kbase = c_out * ci * kh * kw;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[c_out];
                    for c_in in 0..ci {
                        let xbase = c_in * h * w;
                        let kcbase = kbase + c_in * kh * kw;
                        for dy in 0..kh {
                            let iy = (oy + dy) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = xbase + iy as usize * w;
                            let krow = kcbase + dy * kw;
                            for dx in 0..kw {
                                let ix = (ox + dx) as isize - pw as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += xd[row + ix as usize] * kd[krow + dx];
                            }
                        }
                    }
                    out[(c_out * oh + oy) * ow + ox] = acc;
                }
            }
        }
        check_finite(&out, "conv2d")?;
        let req = self.requires(input) || self.requires(kernel) || self.requires(bias);
        Ok(self.push(
            Tensor { shape: vec![co, oh, ow], data: out, grad: None },
            Op::Conv2d { input, kernel, bias, padding },
            req,
        ))
    }

    /// Fully connected layer: `weight [m, n] . input [n] + bias [m]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let b = self.value(bias);
        if x.shape().len() != 1 || wt.shape().len() != 2 || b.shape().len() != 1 {
            return Err(Error::shape(
                "dense",
                format!(
                    "want input [n], weight [m,n], bias [m]; got {:?}, {:?}, {:?}",
                    x.shape(),
                    wt.shape(),
                    b.shape()
                ),
            ));
        }
        let n = x.shape()[0];
        let (m, wn) = (wt.shape()[0], wt.shape()[1]);
        if wn != n || b.shape()[0] != m {
            return Err(Error::shape(
                "dense",
                format!("weight [{m},{wn}] does not match input [{n}] / bias [{}]", b.shape()[0]),
            ));
        }
        let xd = x.data();
        let wd = wt.data();
        let mut out = b.data().to_vec();
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * xd[j];
            }
            out[i] += acc;
        }
        check_finite(&out, "dense")?;
        let req = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            Tensor { shape: vec![m], data: out, grad: None },
            Op::Dense { input, weight, bias },
            req,
        ))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(input).data().iter().map(|v| v.tanh()).collect();
        check_finite(&out, "tanh")?;
        let shape = self.value(input).shape().to_vec();
        let req = self.requires(input);
        Ok(self.push(Tensor { shape, data: out, grad: None }, Op::Tanh { input }, req))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(input).data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        check_finite(&out, "sigmoid")?;
        let shape = self.value(input).shape().to_vec();
        let req = self.requires(input);
        Ok(self.push(Tensor { shape, data: out, grad: None }, Op::Sigmoid { input }, req))
    }

    /// 2x2 average pooling with stride 2 over `[c, h, w]`; h and w must be even.
    pub fn avg_pool2x2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let xs = x.shape();
        if xs.len() != 3 {
            return Err(Error::shape("avg_pool2x2", format!("want [c,h,w], got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2x2", format!("spatial size {h}x{w} not even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = base + (2 * oy) * w + 2 * ox;
                    out[(ch * oh + oy) * ow + ox] = 0.25 * (xd[i] + xd[i + 1] + xd[i + w] + xd[i + w + 1]);
                }
            }
        }
        check_finite(&out, "avg_pool2x2")?;
        let req = self.requires(input);
        Ok(self.push(
            Tensor { shape: vec![c, oh, ow], data: out, grad: None },
            Op::AvgPool2x2 { input },
            req,
        ))
    }

    /// Collapses any shape to rank 1 in row-major order.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.len();
        let data = x.data().to_vec();
        let req = self.requires(input);
        Ok(self.push(Tensor { shape: vec![n], data, grad: None }, Op::Flatten { input }, req))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "elementwise_mul",
                format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        check_finite(&out, "elementwise_mul")?;
        let shape = a.shape().to_vec();
        let req = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(Tensor { shape, data: out, grad: None }, Op::Mul { lhs, rhs }, req))
    }

    /// Multiplies `[c, h, w]` features by a `[1, h, w]` map, broadcast over
    /// channels.
    pub fn mask_mul(&mut self, features: Var, mask: Var) -> Result<Var> {
        let f = self.value(features);
        let m = self.value(mask);
        let (fs, ms) = (f.shape(), m.shape());
        if fs.len() != 3 || ms.len() != 3 || ms[0] != 1 || ms[1] != fs[1] || ms[2] != fs[2] {
            return Err(Error::shape(
                "mask_mul",
                format!("want features [c,h,w] and mask [1,h,w]; got {fs:?}, {ms:?}"),
            ));
        }
        let (c, h, w) = (fs[0], fs[1], fs[2]);
        let hw = h * w;
        let fd = f.data();
        let md = m.data();
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            for i in 0..hw {
                out[ch * hw + i] = fd[ch * hw + i] * md[i];
            }
        }
        check_finite(&out, "mask_mul")?;
        let req = self.requires(features) || self.requires(mask);
        Ok(self.push(
            Tensor { shape: fs.to_vec(), data: out, grad: None },
            Op::MaskMul { features, mask },
            req,
        ))
    }

    /// Inverted dropout. In eval mode (`train == false`) or at rate 0 this
    /// is the identity and records nothing. In train mode each element is
    /// kept with probability `1-rate` and scaled by `1/(1-rate)`, so the
    /// expected value is preserved.
    pub fn dropout(&mut self, input: Var, rate: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let x = self.value(input);
        let scale: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { inv } else { 0.0 })
            .collect();
        let out: Vec<f64> = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let shape = x.shape().to_vec();
        let req = self.requires(input);
        Ok(self.push(Tensor { shape, data: out, grad: None }, Op::Dropout { input, scale }, req))
    }

    /// Rescales a strictly positive map so its values sum to half its
    /// element count: `y = (n/2) * x / sum(x)`. For an `[1, h, w]` attention
    /// map this pins `sum(y) = h*w/2` while preserving relative weights.
    pub fn mask_normalize(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.len();
        if n == 0 {
            return Err(Error::shape("mask_normalize", "empty input".to_string()));
        }
        let sum: f64 = x.data().iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mask_normalize needs a positive map, sum was {sum}"
            )));
        }
        let factor = n as f64 / (2.0 * sum);
        let out: Vec<f64> = x.data().iter().map(|v| v * factor).collect();
        check_finite(&out, "mask_normalize")?;
        let shape = x.shape().to_vec();
        let req = self.requires(input);
        Ok(self.push(Tensor { shape, data: out, grad: None }, Op::MaskNormalize { input }, req))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total: f64 = self.value(input).data().iter().sum();
        check_finite(&[total], "sum")?;
        let req = self.requires(input);
        Ok(self.push(Tensor::scalar(total), Op::Sum { input }, req))
    }

    /// Concatenates rank-1 tensors in order.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let mut data = Vec::new();
        for &v in inputs {
            let t = self.value(v);
            if t.shape().len() != 1 {
                return Err(Error::shape("concat", format!("want rank-1 inputs, got {:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let n = data.len();
        let req = inputs.iter().any(|&v| self.requires(v));
        Ok(self.push(
            Tensor { shape: vec![n], data, grad: None },
            Op::Concat { inputs: inputs.to_vec() },
            req,
        ))
    }

    /// Mean squared error between a rank-1 prediction and a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.shape().len() != 1 || p.len() != target.len() {
            return Err(Error::shape(
                "mse_loss",
                format!("prediction {:?} vs target [{}]", p.shape(), target.len()),
            ));
        }
        if p.is_empty() {
            return Err(Error::shape("mse_loss", "empty prediction".to_string()));
        }
        let n = p.len() as f64;
        let loss: f64 = p.data().iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        check_finite(&[loss], "mse_loss")?;
        let req = self.requires(pred);
        Ok(self.push(Tensor::scalar(loss), Op::MseLoss { pred, target: target.to_vec() }, req))
    }

    /// Binary cross-entropy of probabilities against labels in [0, 1].
    /// Predictions are clamped to [1e-7, 1 - 1e-7] before the logs, so a
    /// saturated score cannot produce an infinite loss.
    pub fn bce_loss(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.shape().len() != 1 || p.len() != labels.len() {
            return Err(Error::shape(
                "bce_loss",
                format!("prediction {:?} vs labels [{}]", p.shape(), labels.len()),
            ));
        }
        if p.is_empty() {
            return Err(Error::shape("bce_loss", "empty prediction".to_string()));
        }
        if labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::InvalidArgument("bce labels must lie in [0, 1]".to_string()));
        }
        let n = p.len() as f64;
        let mut loss = 0.0;
        for (a, y) in p.data().iter().zip(labels) {
            let c = a.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        }
        loss /= n;
        check_finite(&[loss], "bce_loss")?;
        let req = self.requires(pred);
        Ok(self.push(Tensor::scalar(loss), Op::BceLoss { pred, labels: labels.to_vec() }, req))
    }

    /// Reverse pass from a scalar loss node. Gradients accumulate onto every
    /// leaf with `requires_grad`; frozen leaves stay untouched. The tape is
    /// spent afterwards until the next `truncate` or fresh forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(Error::TapeSpent);
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::BadLossNode);
        }
        {
            let node = &self.nodes[loss.0];
            if node.value.len() != 1 || matches!(node.op, Op::Leaf) {
                return Err(Error::BadLossNode);
            }
        }
        self.spent = true;
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Interior gradients are taken, used, and dropped; only leaves
            // keep theirs for the caller.
            let Some(g) = self.grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, kernel, bias, padding } => {
                    self.backward_conv2d(&g, input, kernel, bias, padding);
                }
                Op::Dense { input, weight, bias } => {
                    let n = self.nodes[input.0].value.len();
                    let m = g.len();
                    if self.requires(input) {
                        let wd = self.nodes[weight.0].value.data();
                        let mut dx = vec![0.0; n];
                        for r in 0..m {
                            let row = &wd[r * n..(r + 1) * n];
                            let gr = g[r];
                            for c in 0..n {
                                dx[c] += gr * row[c];
                            }
                        }
                        self.accumulate(input, &dx);
                    }
                    if self.requires(weight) {
                        let xd = self.nodes[input.0].value.data();
                        let mut dw = vec![0.0; m * n];
                        for r in 0..m {
                            let gr = g[r];
                            for c in 0..n {
                                dw[r * n + c] = gr * xd[c];
                            }
                        }
                        self.accumulate(weight, &dw);
                    }
                    if self.requires(bias) {
                        self.accumulate(bias, &g);
                    }
                }
                Op::Tanh { input } => {
                    if self.requires(input) {
                        let y = self.nodes[i].value.data();
                        let dx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                        self.accumulate(input, &dx);
                    }
                }
                Op::Sigmoid { input } => {
                    if self.requires(input) {
                        let y = self.nodes[i].value.data();
                        let dx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                        self.accumulate(input, &dx);
                    }
                }
                Op::AvgPool2x2 { input } => {
                    if self.requires(input) {
                        let xs = self.nodes[input.0].value.shape().to_vec();
                        let (c, h, w) = (xs[0], xs[1], xs[2]);
                        let (oh, ow) = (h / 2, w / 2);
                        let mut dx = vec![0.0; c * h * w];
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let q = 0.25 * g[(ch * oh + oy) * ow + ox];
                                    let i0 = ch * h * w + (2 * oy) * w + 2 * ox;
                                    dx[i0] += q;
                                    dx[i0 + 1] += q;
                                    dx[i0 + w] += q;
                                    dx[i0 + w + 1] += q;
                                }
                            }
                        }
                        self.accumulate(input, &dx);
                    }
                }
                Op::Flatten { input } => {
                    if self.requires(input) {
                        self.accumulate(input, &g);
                    }
                }
                Op::Mul { lhs, rhs } => {
                    if self.requires(lhs) {
                        let bd = self.nodes[rhs.0].value.data();
                        let dx: Vec<f64> = g.iter().zip(bd).map(|(gi, b)| gi * b).collect();
                        self.accumulate(lhs, &dx);
                    }
                    if self.requires(rhs) {
                        let ad = self.nodes[lhs.0].value.data();
                        let dx: Vec<f64> = g.iter().zip(ad).map(|(gi, a)| gi * a).collect();
                        self.accumulate(rhs, &dx);
                    }
                }
                Op::MaskMul { features, mask } => {
                    let fs = self.nodes[features.0].value.shape().to_vec();
                    let (c, hw) = (fs[0], fs[1] * fs[2]);
                    if self.requires(features) {
                        let md = self.nodes[mask.0].value.data();
                        let mut df = vec![0.0; c * hw];
                        for ch in 0..c {
                            for i in 0..hw {
                                df[ch * hw + i] = g[ch * hw + i] * md[i];
                            }
                        }
                        self.accumulate(features, &df);
                    }
                    if self.requires(mask) {
                        let fd = self.nodes[features.0].value.data();
                        let mut dm = vec![0.0; hw];
                        for ch in 0..c {
                            for i in 0..hw {
                                dm[i] += g[ch * hw + i] * fd[ch * hw + i];
                            }
                        }
                        self.accumulate(mask, &dm);
                    }
                }
                Op::Dropout { input, scale } => {
                    if self.requires(input) {
                        let dx: Vec<f64> = g.iter().zip(&scale).map(|(gi, s)| gi * s).collect();
                        self.accumulate(input, &dx);
                    }
                }
                Op::MaskNormalize { input } => {
                    if self.requires(input) {
                        let xd = self.nodes[input.0].value.data();
                        let n = xd.len() as f64;
                        let s: f64 = xd.iter().sum();
                        let dot: f64 = g.iter().zip(xd).map(|(gi, xi)| gi * xi).sum();
                        let c = n / 2.0;
                        let dx: Vec<f64> = g.iter().map(|gi| c * (gi * s - dot) / (s * s)).collect();
                        self.accumulate(input, &dx);
                    }
                }
                Op::Sum { input } => {
                    if self.requires(input) {
                        let n = self.nodes[input.0].value.len();
                        self.accumulate(input, &vec![g[0]; n]);
                    }
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for v in inputs {
                        let n = self.nodes[v.0].value.len();
                        if self.requires(v) {
                            self.accumulate(v, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::MseLoss { pred, target } => {
                    if self.requires(pred) {
                        let pd = self.nodes[pred.0].value.data();
                        let n = pd.len() as f64;
                        let dx: Vec<f64> =
                            pd.iter().zip(&target).map(|(p, t)| g[0] * 2.0 * (p - t) / n).collect();
                        self.accumulate(pred, &dx);
                    }
                }
                Op::BceLoss { pred, labels } => {
                    if self.requires(pred) {
                        let pd = self.nodes[pred.0].value.data();
                        let n = pd.len() as f64;
                        // Zero outside the clamp window: the loss is locally
                        // constant in the prediction there.
                        let dx: Vec<f64> = pd
                            .iter()
                            .zip(&labels)
                            .map(|(p, y)| {
                                if *p < BCE_CLAMP || *p > 1.0 - BCE_CLAMP {
                                    0.0
                                } else {
                                    g[0] * (-(y / p) + (1.0 - y) / (1.0 - p)) / n
                                }
                            })
                            .collect();
                        self.accumulate(pred, &dx);
                    }
                }
            }
        }

        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::nonfinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(())
    }

    fn backward_conv2d(&mut self, g: &[f64], input: Var, kernel: Var, bias: Var, padding: Padding) {
        let xs = self.nodes[input.0].value.shape().to_vec();
        let ks = self.nodes[kernel.0].value.shape().to_vec();
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let (co, kh, kw) = (ks[0], ks[2], ks[3]);
        let (ph, pw) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        let (oh, ow) = match padding {
            Padding::Same => (h, w),
            Padding::Valid => (h - kh + 1, w - kw + 1),
        };

        if self.requires(input) {
            let kd = self.nodes[kernel.0].value.data().to_vec();
            let mut dx = vec![0.0; ci * h * w];
            for c_out in 0..co {
                let kbase = c_out * ci * kh * kw;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(c_out * oh + oy) * ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        for c_in in 0..ci {
                            let xbase = c_in * h * w;
                            let kcbase = kbase + c_in * kh * kw;
                            for dy in 0..kh {
                                let iy = (oy + dy) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = xbase + iy as usize * w;
                                let krow = kcbase + dy * kw;
                                for dx_ in 0..kw {
                                    let ix = (ox + dx_) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    dx[row + ix as usize] += go * kd[krow + dx_];
                                }
                            }
                        }
                    }
                }
            }
            self.accumulate(input, &dx);
        }

        if self.requires(kernel) {
            let xd = self.nodes[input.0].value.data().to_vec();
            let mut dk = vec![0.0; co * ci * kh * kw];
            for c_out in 0..co {
                let kbase = c_out * ci * kh * kw;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(c_out * oh + oy) * ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        for c_in in 0..ci {
                            let xbase = c_in * h * w;
                            let kcbase = kbase + c_in * kh * kw;
                            for dy in 0..kh {
                                let iy = (oy + dy) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = xbase + iy as usize * w;
                                let krow = kcbase + dy * kw;
                                for dx_ in 0..kw {
                                    let ix = (ox + dx_) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    dk[krow + dx_] += go * xd[row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            self.accumulate(kernel, &dk);
        }

        if self.requires(bias) {
            let mut db = vec![0.0; co];
            for c_out in 0..co {
                let base = c_out * oh * ow;
                db[c_out] = g[base..base + oh * ow].iter().sum();
            }
            self.accumulate(bias, &db);
        }
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let slot = &mut self.grads[v.0];
        match slot {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }
}

/// Clamp bound shared by the BCE loss value and its gradient.
pub const BCE_CLAMP: f64 = 1e-7;
