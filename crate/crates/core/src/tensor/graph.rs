use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::Tensor;

/// Handle to a node on a [`Graph`].
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
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x(Var),
    AvgPool2(Var),
    Blur {
        x: Var,
        kernel: Arc<[f64]>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulMask {
        x: Var,
        mask: Var,
    },
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Pow(Var, f64),
    MuLaw {
        x: Var,
        mu: f64,
        peak: f64,
    },
    MuLawInverse {
        x: Var,
        mu: f64,
        peak: f64,
    },
    Concat(Vec<Var>),
    MeanOf(Vec<Var>),
    MaxOf(Vec<Var>),
    MeanAll(Var),
    Stack(Vec<Var>),
    Softmax(Var),
    Index(Var, usize),
    ScaleBy {
        x: Var,
        s: Var,
    },
    BceWithLogits {
        logits: Var,
        target: Arc<Tensor>,
    },
    ChannelMean(Var),
    SoftmaxChannels(Var),
    SliceChannels {
        x: Var,
        start: usize,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(_) => "upsample2x",
            Op::AvgPool2(_) => "avg_pool2",
            Op::Blur { .. } => "blur",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MulMask { .. } => "mul_mask",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Abs(_) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::Pow(..) => "pow",
            Op::MuLaw { .. } => "mu_law",
            Op::MuLawInverse { .. } => "mu_law_inverse",
            Op::Concat(_) => "concat",
            Op::MeanOf(_) => "mean_of",
            Op::MaxOf(_) => "max_of",
            Op::MeanAll(_) => "mean_all",
            Op::Stack(_) => "stack",
            Op::Softmax(_) => "softmax",
            Op::Index(..) => "index",
            Op::ScaleBy { .. } => "scale_by",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::ChannelMean(_) => "channel_mean",
            Op::SoftmaxChannels(_) => "softmax_channels",
            Op::SliceChannels { .. } => "slice_channels",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    name: Option<String>,
}

/// Reverse-mode tape. Nodes are appended in topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::from_vec(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn set_name(&mut self, v: Var, name: impl Into<String>) {
        self.nodes[v.0].name = Some(name.into());
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Names (or op kinds) of every node holding a NaN or infinity.
    pub fn non_finite_nodes(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| match &n.name {
                Some(name) => format!("#{i} {name} ({})", n.op.kind()),
                None => format!("#{i} {}", n.op.kind()),
            })
            .collect()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let value = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(value, Op::Conv2d { x, w, b, geom }, &inputs)
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let value = kernels::upsample2x(self.value(x));
        self.push(value, Op::Upsample2x(x), &[x])
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let value = kernels::avg_pool2(self.value(x));
        self.push(value, Op::AvgPool2(x), &[x])
    }

    pub fn blur(&mut self, x: Var, kernel: Arc<[f64]>) -> Var {
        let value = kernels::blur_valid(self.value(x), &kernel);
        self.push(value, Op::Blur { x, kernel }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.push(value, Op::Div(a, b), &[a, b])
    }

    /// `x [C,H,W] * mask [1,H,W]`, broadcasting the mask over channels.
    pub fn mul_mask(&mut self, x: Var, mask: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        assert_eq!(self.value(mask).shape(), &[1, h, w], "mask shape");
        let m = self.value(mask).data();
        let mut out = self.value(x).data().to_vec();
        for ch in 0..c {
            for (o, mv) in out[ch * h * w..(ch + 1) * h * w].iter_mut().zip(m) {
                *o *= mv;
            }
        }
        let value = Tensor::from_vec(vec![c, h, w], out);
        self.push(value, Op::MulMask { x, mask }, &[x, mask])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        self.push(value, Op::Softplus(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        self.push(value, Op::Abs(x), &[x])
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        let value = self.value(x).map(|v| v.max(lo));
        self.push(value, Op::ClampMin(x, lo), &[x])
    }

    /// Elementwise `x^p`; inputs must be positive unless `p` is an integer.
    pub fn pow(&mut self, x: Var, p: f64) -> Var {
        let value = self.value(x).map(|v| v.powf(p));
        self.push(value, Op::Pow(x, p), &[x])
    }

    /// `ln(1 + mu x / peak) / ln(1 + mu)`.
    pub fn mu_law(&mut self, x: Var, mu: f64, peak: f64) -> Var {
        let denom = mu.ln_1p();
        let value = self.value(x).map(|v| (mu * v / peak).ln_1p() / denom);
        self.push(value, Op::MuLaw { x, mu, peak }, &[x])
    }

    /// Inverse of [`Graph::mu_law`]: `peak ((1 + mu)^x - 1) / mu`.
    pub fn mu_law_inverse(&mut self, x: Var, mu: f64, peak: f64) -> Var {
        let l = mu.ln_1p();
        let value = self.value(x).map(|v| peak * (v * l).exp_m1() / mu);
        self.push(value, Op::MuLawInverse { x, mu, peak }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&refs);
        self.push(value, Op::Concat(parts.to_vec()), parts)
    }

    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p));
        }
        let n = parts.len() as f64;
        let value = acc.map(|v| v / n);
        self.push(value, Op::MeanOf(parts.to_vec()), parts)
    }

    pub fn max_of(&mut self, parts: &[Var]) -> Var {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let other = self.value(p);
            assert_eq!(acc.shape(), other.shape(), "max_of shape mismatch");
            for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
                if b > *a {
                    *a = b;
                }
            }
        }
        self.push(acc, Op::MaxOf(parts.to_vec()), parts)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(value, Op::MeanAll(x), &[x])
    }

    /// Packs scalar nodes into a vector node.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let data = scalars.iter().map(|&s| self.value(s).item()).collect();
        let value = Tensor::from_vec(vec![scalars.len()], data);
        self.push(value, Op::Stack(scalars.to_vec()), scalars)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = d.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let value = Tensor::from_vec(vec![e.len()], e.into_iter().map(|v| v / s).collect());
        self.push(value, Op::Softmax(x), &[x])
    }

    pub fn index(&mut self, x: Var, i: usize) -> Var {
        let value = Tensor::scalar(self.value(x).data()[i]);
        self.push(value, Op::Index(x, i), &[x])
    }

    /// `x * s` for a scalar node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::ScaleBy { x, s }, &[x, s])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Arc<Tensor>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), target.shape(), "bce target shape");
        let total: f64 = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / z.len() as f64);
        self.push(value, Op::BceWithLogits { logits, target }, &[logits])
    }

    /// Mean over channels: `[C,H,W] -> [1,H,W]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.dims3();
        let mut out = vec![0.0; h * w];
        for ch in 0..c {
            for (o, v) in out.iter_mut().zip(&t.data()[ch * h * w..(ch + 1) * h * w]) {
                *o += v;
            }
        }
        let value = Tensor::from_vec(vec![1, h, w], out.into_iter().map(|v| v / c as f64).collect());
        self.push(value, Op::ChannelMean(x), &[x])
    }

    /// Per-pixel softmax across channels.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.dims3();
        let d = t.data();
        let mut out = vec![0.0; c * h * w];
        for p in 0..h * w {
            let m = (0..c).map(|ch| d[ch * h * w + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for ch in 0..c {
                let e = (d[ch * h * w + p] - m).exp();
                out[ch * h * w + p] = e;
                s += e;
            }
            for ch in 0..c {
                out[ch * h * w + p] /= s;
            }
        }
        let value = Tensor::from_vec(vec![c, h, w], out);
        self.push(value, Op::SoftmaxChannels(x), &[x])
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.dims3();
        assert!(start + len <= c, "channel slice out of range");
        let data = t.data()[start * h * w..(start + len) * h * w].to_vec();
        let value = Tensor::from_vec(vec![len, h, w], data);
        self.push(value, Op::SliceChannels { x, start }, &[x])
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(dy);
                continue;
            }
            self.propagate(&node.op, &node.value, &dy, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, y: &Tensor, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let g = kernels::conv2d_backward(val(*x), val(*w), dy, *geom, self.needs_grad(*x));
                if let Some(dx) = g.input {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, g.weight);
                if let Some(b) = b {
                    self.accumulate(grads, *b, g.bias);
                }
            }
            Op::Upsample2x(x) => {
                let (c, h, w) = val(*x).dims3();
                self.accumulate(grads, *x, kernels::upsample2x_backward(dy, c, h, w));
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = val(*x).dims3();
                self.accumulate(grads, *x, kernels::avg_pool2_backward(dy, c, h, w));
            }
            Op::Blur { x, kernel } => {
                let (c, h, w) = val(*x).dims3();
                self.accumulate(grads, *x, kernels::blur_valid_backward(dy, kernel, c, h, w));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, zip_map(dy, val(*b), |g, v| g * v));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, zip_map(dy, val(*a), |g, v| g * v));
                }
            }
            Op::Div(a, b) => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, zip_map(dy, val(*b), |g, v| g / v));
                }
                if self.needs_grad(*b) {
                    // d(a/b)/db = -y / b
                    let t = zip_map(dy, y, |g, q| g * q);
                    self.accumulate(grads, *b, zip_map(&t, val(*b), |g, v| -g / v));
                }
            }
            Op::MulMask { x, mask } => {
                let (c, h, w) = val(*x).dims3();
                let m = val(*mask).data();
                if self.needs_grad(*x) {
                    let mut dx = dy.data().to_vec();
                    for ch in 0..c {
                        for (d, mv) in dx[ch * h * w..(ch + 1) * h * w].iter_mut().zip(m) {
                            *d *= mv;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(vec![c, h, w], dx));
                }
                if self.needs_grad(*mask) {
                    let xd = val(*x).data();
                    let g = dy.data();
                    let mut dm = vec![0.0; h * w];
                    for ch in 0..c {
                        let off = ch * h * w;
                        for (p, d) in dm.iter_mut().enumerate() {
                            *d += g[off + p] * xd[off + p];
                        }
                    }
                    self.accumulate(grads, *mask, Tensor::from_vec(vec![1, h, w], dm));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, dy.map(|v| v * s)),
            Op::AddScalar(x) => self.accumulate(grads, *x, dy.clone()),
            Op::LeakyRelu(x, slope) => {
                let g = zip_map(dy, val(*x), |g, v| if v > 0.0 { g } else { g * slope });
                self.accumulate(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = zip_map(dy, y, |g, s| g * s * (1.0 - s));
                self.accumulate(grads, *x, g);
            }
            Op::Softplus(x) => {
                let g = zip_map(dy, val(*x), |g, v| g * sigmoid(v));
                self.accumulate(grads, *x, g);
            }
            Op::Abs(x) => {
                let g = zip_map(dy, val(*x), |g, v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, g);
            }
            Op::ClampMin(x, lo) => {
                let g = zip_map(dy, val(*x), |g, v| if v > *lo { g } else { 0.0 });
                self.accumulate(grads, *x, g);
            }
            Op::Pow(x, p) => {
                let g = zip_map(dy, val(*x), |g, v| g * p * v.powf(p - 1.0));
                self.accumulate(grads, *x, g);
            }
            Op::MuLaw { x, mu, peak } => {
                let denom = mu.ln_1p();
                let g = zip_map(dy, val(*x), |g, v| g * mu / (peak * (1.0 + mu * v / peak) * denom));
                self.accumulate(grads, *x, g);
            }
            Op::MuLawInverse { x, mu, peak } => {
                let l = mu.ln_1p();
                let g = zip_map(dy, val(*x), |g, v| g * peak * l * (v * l).exp() / mu);
                self.accumulate(grads, *x, g);
            }
            Op::Concat(parts) => {
                let (_, h, w) = dy.dims3();
                let mut off = 0;
                for &p in parts {
                    let (pc, _, _) = val(p).dims3();
                    let n = pc * h * w;
                    if self.needs_grad(p) {
                        let slice = dy.data()[off..off + n].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(vec![pc, h, w], slice));
                    }
                    off += n;
                }
            }
            Op::MeanOf(parts) => {
                let n = parts.len() as f64;
                let g = dy.map(|v| v / n);
                for &p in parts {
                    self.accumulate(grads, p, g.clone());
                }
            }
            Op::MaxOf(parts) => {
                let len = dy.len();
                let mut winner = vec![0usize; len];
                let mut best = val(parts[0]).data().to_vec();
                for (k, &p) in parts.iter().enumerate().skip(1) {
                    for (i, &v) in val(p).data().iter().enumerate() {
                        if v > best[i] {
                            best[i] = v;
                            winner[i] = k;
                        }
                    }
                }
                for (k, &p) in parts.iter().enumerate() {
                    if !self.needs_grad(p) {
                        continue;
                    }
                    let data = dy
                        .data()
                        .iter()
                        .zip(&winner)
                        .map(|(&g, &wk)| if wk == k { g } else { 0.0 })
                        .collect();
                    self.accumulate(grads, p, Tensor::from_vec(dy.shape().to_vec(), data));
                }
            }
            Op::MeanAll(x) => {
                let t = val(*x);
                let g = dy.item() / t.len() as f64;
                self.accumulate(grads, *x, Tensor::full(t.shape(), g));
            }
            Op::Stack(scalars) => {
                for (i, &s) in scalars.iter().enumerate() {
                    self.accumulate(grads, s, Tensor::scalar(dy.data()[i]));
                }
            }
            Op::Softmax(x) => {
                let dot: f64 = dy.data().iter().zip(y.data()).map(|(g, s)| g * s).sum();
                let g = zip_map(dy, y, |g, s| s * (g - dot));
                self.accumulate(grads, *x, g);
            }
            Op::Index(x, i) => {
                let mut g = Tensor::zeros(val(*x).shape());
                g.data_mut()[*i] = dy.item();
                self.accumulate(grads, *x, g);
            }
            Op::ScaleBy { x, s } => {
                let k = val(*s).item();
                if self.needs_grad(*x) {
                    self.accumulate(grads, *x, dy.map(|v| v * k));
                }
                if self.needs_grad(*s) {
                    let ds: f64 = dy.data().iter().zip(val(*x).data()).map(|(g, v)| g * v).sum();
                    self.accumulate(grads, *s, Tensor::scalar(ds));
                }
            }
            Op::BceWithLogits { logits, target } => {
                let z = val(*logits);
                let scale = dy.item() / z.len() as f64;
                let g = zip_map(z, target, |z, t| (sigmoid(z) - t) * scale);
                self.accumulate(grads, *logits, g);
            }
            Op::ChannelMean(x) => {
                let (c, h, w) = val(*x).dims3();
                let mut g = Vec::with_capacity(c * h * w);
                for _ in 0..c {
                    g.extend(dy.data().iter().map(|v| v / c as f64));
                }
                self.accumulate(grads, *x, Tensor::from_vec(vec![c, h, w], g));
            }
            Op::SoftmaxChannels(x) => {
                let (c, h, w) = y.dims3();
                let (s, d) = (y.data(), dy.data());
                let mut g = vec![0.0; c * h * w];
                for p in 0..h * w {
                    let dot: f64 = (0..c).map(|ch| s[ch * h * w + p] * d[ch * h * w + p]).sum();
                    for ch in 0..c {
                        let i = ch * h * w + p;
                        g[i] = s[i] * (d[i] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(vec![c, h, w], g));
            }
            Op::SliceChannels { x, start } => {
                let (c, h, w) = val(*x).dims3();
                let mut g = vec![0.0; c * h * w];
                g[start * h * w..start * h * w + dy.len()].copy_from_slice(dy.data());
                self.accumulate(grads, *x, Tensor::from_vec(vec![c, h, w], g));
            }
        }
    }
}

/// Result of [`Graph::backward`]; only tracked leaves retain gradients.
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
