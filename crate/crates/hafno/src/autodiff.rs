//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The computation graph is an append-only arena ([`Tape`]): node indices
//! grow monotonically, so creation order is already a topological order and
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//! Values are immutable once created; gradients accumulate into per-node
//! slots until [`Tape::zero_grad`].
//!
//! The op set is exactly what the operator model needs: elementwise
//! arithmetic and activations, per-point channel mixing, circular 2D
//! convolution, 2× max-pooling, 2× bilinear upsampling, pooled reductions,
//! channel concatenation, and the spectral unit (whose forward/backward
//! kernels live in [`crate::spectral`]).

use crate::error::{Error, Result};
use crate::spectral;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Sqrt(NodeId),
    Sum(NodeId),
    PointwiseLinear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2dCircular {
        x: NodeId,
        k: NodeId,
        b: NodeId,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u32>,
    },
    BilinearUp2(NodeId),
    /// Multiply `[C, H, W]` by one scalar per channel (`s: [C, 1, 1]`).
    ScaleChannels {
        x: NodeId,
        s: NodeId,
    },
    /// Multiply `[C, H, W]` by one scalar per position (`m: [1, H, W]`).
    ScaleSpatial {
        x: NodeId,
        m: NodeId,
    },
    MeanChannels(NodeId),
    MaxChannels {
        x: NodeId,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(NodeId),
    GlobalMaxPool {
        x: NodeId,
        argmax: Vec<u32>,
    },
    ConcatChannels(NodeId, NodeId),
    CropSpatial {
        x: NodeId,
        h: usize,
        w: usize,
    },
    /// Truncated spectral convolution `irfft2(pad(R · trunc(rfft2(x))))`.
    FourierUnit {
        x: NodeId,
        weight_re: NodeId,
        weight_im: NodeId,
        modes: (usize, usize),
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

/// Append-only computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a trainable leaf: gradients will be computed for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a non-trainable leaf (inputs, targets).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of a node, zero-filled when it was never reached.
    pub fn grad_or_zero(&self, id: NodeId) -> Tensor {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(id).shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, needs)
    }

    fn check_same_shape(&self, context: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                context,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push_op(v, Op::Scale(a, c), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu_scalar);
        self.push_op(v, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid_scalar);
        self.push_op(v, Op::Sigmoid(a), &[a])
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("sqrt of negative value"));
        }
        let v = self.value(a).map(f64::sqrt);
        Ok(self.push_op(v, Op::Sqrt(a), &[a]))
    }

    /// Full reduction to a scalar node of shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push_op(v, Op::Sum(a), &[a])
    }

    /// Per-grid-point channel mixing: `out[c,h,w] = Σ_k w[c,k]·x[k,h,w] + b[c]`.
    pub fn pointwise_linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 3 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
            return Err(Error::ShapeMismatch {
                context: "pointwise_linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let (c_in, h, ww) = (xs[0], xs[1], xs[2]);
        let c_out = ws[0];
        let plane = h * ww;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; c_out * plane];
        for co in 0..c_out {
            let dst = &mut out[co * plane..(co + 1) * plane];
            dst.fill(bv[co]);
            for ci in 0..c_in {
                let s = wv[co * c_in + ci];
                let src = &xv[ci * plane..(ci + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += s * v;
                }
            }
        }
        let v = Tensor::new(vec![c_out, h, ww], out)?;
        Ok(self.push_op(v, Op::PointwiseLinear { x, w, b }, &[x, w, b]))
    }

    /// 2D cross-correlation with periodic wraparound and odd-sized kernels,
    /// so cyclic-shift equivariance is exact on the discrete torus.
    pub fn conv2d_circular(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::invalid(format!(
                "conv2d_circular expects x [C,H,W], k [Co,Ci,k,k], b [Co]; got {:?} {:?} {:?}",
                xs, ks, bs
            )));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kc_in, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc_in != c_in || bs[0] != c_out {
            return Err(Error::ShapeMismatch {
                context: "conv2d_circular channels",
                lhs: xs,
                rhs: ks,
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d_circular kernel must be odd-sized (centering), got {}x{}",
                kh, kw
            )));
        }
        if kh > h || kw > w {
            return Err(Error::invalid(format!(
                "conv2d_circular kernel {}x{} exceeds grid {}x{}",
                kh, kw, h, w
            )));
        }
        let value = conv2d_forward(self.value(x), self.value(k), self.value(b).data());
        Ok(self.push_op(value, Op::Conv2dCircular { x, k, b }, &[x, k, b]))
    }

    /// 2×2 max pooling. Gradient routes to the first (row-major) maximum.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("maxpool2 expects [C,H,W]"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!(
                "maxpool2 needs even spatial dims, got {}x{} (pad first)",
                h, w
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0u32; c * ho * wo];
        for ci in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best_idx = ci * h * w + (2 * i) * w + 2 * j;
                    let mut best = xv[best_idx];
                    for (di, dj) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = ci * h * w + (2 * i + di) * w + 2 * j + dj;
                        if xv[idx] > best {
                            best = xv[idx];
                            best_idx = idx;
                        }
                    }
                    out[ci * ho * wo + i * wo + j] = best;
                    argmax[ci * ho * wo + i * wo + j] = best_idx as u32;
                }
            }
        }
        let v = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.push_op(v, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// 2× bilinear upsampling with sample centers at `(i + 0.5)/n`
    /// (align-corners = false) and periodic wraparound at the seam.
    pub fn bilinear_upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("bilinear_upsample2 expects [C,H,W]"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!(
                "bilinear_upsample2 needs spatial dims >= 2, got {}x{}",
                h, w
            )));
        }
        let xv = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            let src = &xv[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
            for i in 0..ho {
                let (i0, i1, ti) = up2_taps(i, h);
                for j in 0..wo {
                    let (j0, j1, tj) = up2_taps(j, w);
                    dst[i * wo + j] = (1.0 - ti) * (1.0 - tj) * src[i0 * w + j0]
                        + (1.0 - ti) * tj * src[i0 * w + j1]
                        + ti * (1.0 - tj) * src[i1 * w + j0]
                        + ti * tj * src[i1 * w + j1];
                }
            }
        }
        let v = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.push_op(v, Op::BilinearUp2(x), &[x]))
    }

    pub fn scale_channels(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ss = self.value(s).shape().to_vec();
        if xs.len() != 3 || ss != [xs[0], 1, 1] {
            return Err(Error::ShapeMismatch {
                context: "scale_channels",
                lhs: xs,
                rhs: ss,
            });
        }
        let plane = xs[1] * xs[2];
        let xv = self.value(x).data();
        let sv = self.value(s).data();
        let mut out = vec![0.0; xv.len()];
        for c in 0..xs[0] {
            let sc = sv[c];
            for p in 0..plane {
                out[c * plane + p] = sc * xv[c * plane + p];
            }
        }
        let v = Tensor::new(xs, out)?;
        Ok(self.push_op(v, Op::ScaleChannels { x, s }, &[x, s]))
    }

    pub fn scale_spatial(&mut self, x: NodeId, m: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ms = self.value(m).shape().to_vec();
        if xs.len() != 3 || ms != [1, xs[1], xs[2]] {
            return Err(Error::ShapeMismatch {
                context: "scale_spatial",
                lhs: xs,
                rhs: ms,
            });
        }
        let plane = xs[1] * xs[2];
        let xv = self.value(x).data();
        let mv = self.value(m).data();
        let mut out = vec![0.0; xv.len()];
        for c in 0..xs[0] {
            for p in 0..plane {
                out[c * plane + p] = mv[p] * xv[c * plane + p];
            }
        }
        let v = Tensor::new(xs, out)?;
        Ok(self.push_op(v, Op::ScaleSpatial { x, m }, &[x, m]))
    }

    /// Mean over channels: `[C,H,W] -> [1,H,W]`.
    pub fn mean_channels(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("mean_channels expects [C,H,W]"));
        }
        let (c, plane) = (xs[0], xs[1] * xs[2]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; plane];
        for ci in 0..c {
            for p in 0..plane {
                out[p] += xv[ci * plane + p];
            }
        }
        let inv = 1.0 / c as f64;
        for o in &mut out {
            *o *= inv;
        }
        let v = Tensor::new(vec![1, xs[1], xs[2]], out)?;
        Ok(self.push_op(v, Op::MeanChannels(x), &[x]))
    }

    /// Max over channels: `[C,H,W] -> [1,H,W]`; first channel wins ties.
    pub fn max_channels(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("max_channels expects [C,H,W]"));
        }
        let (c, plane) = (xs[0], xs[1] * xs[2]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; plane];
        let mut argmax = vec![0u32; plane];
        for p in 0..plane {
            let mut best = xv[p];
            let mut best_c = 0usize;
            for ci in 1..c {
                let v = xv[ci * plane + p];
                if v > best {
                    best = v;
                    best_c = ci;
                }
            }
            out[p] = best;
            argmax[p] = (best_c * plane + p) as u32;
        }
        let v = Tensor::new(vec![1, xs[1], xs[2]], out)?;
        Ok(self.push_op(v, Op::MaxChannels { x, argmax }, &[x]))
    }

    /// Spatial average per channel: `[C,H,W] -> [C,1,1]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("global_avg_pool expects [C,H,W]"));
        }
        let (c, plane) = (xs[0], xs[1] * xs[2]);
        let xv = self.value(x).data();
        let inv = 1.0 / plane as f64;
        let out: Vec<f64> = (0..c)
            .map(|ci| xv[ci * plane..(ci + 1) * plane].iter().sum::<f64>() * inv)
            .collect();
        let v = Tensor::new(vec![c, 1, 1], out)?;
        Ok(self.push_op(v, Op::GlobalAvgPool(x), &[x]))
    }

    /// Spatial max per channel: `[C,H,W] -> [C,1,1]`; first position wins ties.
    pub fn global_max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("global_max_pool expects [C,H,W]"));
        }
        let (c, plane) = (xs[0], xs[1] * xs[2]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; c];
        let mut argmax = vec![0u32; c];
        for ci in 0..c {
            let mut best = xv[ci * plane];
            let mut best_p = 0usize;
            for p in 1..plane {
                let v = xv[ci * plane + p];
                if v > best {
                    best = v;
                    best_p = p;
                }
            }
            out[ci] = best;
            argmax[ci] = (ci * plane + best_p) as u32;
        }
        let v = Tensor::new(vec![c, 1, 1], out)?;
        Ok(self.push_op(v, Op::GlobalMaxPool { x, argmax }, &[x]))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut data = Vec::with_capacity(self.value(a).numel() + self.value(b).numel());
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let v = Tensor::new(vec![sa[0] + sb[0], sa[1], sa[2]], data)?;
        Ok(self.push_op(v, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Crop the spatial axes to their top-left `(h, w)` corner.
    pub fn crop_spatial(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || h > xs[1] || w > xs[2] {
            return Err(Error::invalid(format!(
                "crop_spatial to {}x{} from {:?}",
                h, w, xs
            )));
        }
        let v = self.value(x).crop_top_left(h, w);
        Ok(self.push_op(v, Op::CropSpatial { x, h, w }, &[x]))
    }

    /// Spectral convolution with mode truncation; see [`crate::spectral::fourier_unit`].
    pub fn fourier_unit(
        &mut self,
        x: NodeId,
        weight_re: NodeId,
        weight_im: NodeId,
        modes: (usize, usize),
    ) -> Result<NodeId> {
        spectral::fourier_unit(self, x, weight_re, weight_im, modes)
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate into node
    /// slots; call [`Tape::zero_grad`] between independent losses.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut ws: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        ws[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match ws[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut ws);
            // keep for accumulation into the node slot below
            ws[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(ws.into_iter()) {
            if let Some(g) = g {
                match &mut node.grad {
                    Some(acc) => acc.axpy(1.0, &g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, ws: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let send = |id: NodeId, contrib: Tensor, ws: &mut [Option<Tensor>]| {
            if !nodes[id.0].needs_grad {
                return;
            }
            match &mut ws[id.0] {
                Some(acc) => acc.axpy(1.0, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone(), ws);
                send(*b, g.clone(), ws);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), ws);
                send(*b, g.scale(-1.0), ws);
            }
            Op::Mul(a, b) => {
                let ga = g.zip(&nodes[b.0].value, "mul bw", |x, y| x * y).unwrap();
                let gb = g.zip(&nodes[a.0].value, "mul bw", |x, y| x * y).unwrap();
                send(*a, ga, ws);
                send(*b, gb, ws);
            }
            Op::Scale(a, c) => send(*a, g.scale(*c), ws),
            Op::Gelu(a) => {
                let gx = g
                    .zip(&nodes[a.0].value, "gelu bw", |gv, xv| gv * gelu_grad_scalar(xv))
                    .unwrap();
                send(*a, gx, ws);
            }
            Op::Sigmoid(a) => {
                let gx = g
                    .zip(&nodes[i].value, "sigmoid bw", |gv, sv| gv * sv * (1.0 - sv))
                    .unwrap();
                send(*a, gx, ws);
            }
            Op::Sqrt(a) => {
                let gx = g
                    .zip(&nodes[i].value, "sqrt bw", |gv, sv| gv * 0.5 / sv)
                    .unwrap();
                send(*a, gx, ws);
            }
            Op::Sum(a) => {
                send(*a, Tensor::filled(nodes[a.0].value.shape(), g.item()), ws);
            }
            Op::PointwiseLinear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (c_in, plane) = (xs[0], xs[1] * xs[2]);
                let c_out = nodes[w.0].value.shape()[0];
                let gv = g.data();
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                if nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; xv.len()];
                    for co in 0..c_out {
                        let gsrc = &gv[co * plane..(co + 1) * plane];
                        for ci in 0..c_in {
                            let s = wv[co * c_in + ci];
                            let dst = &mut gx[ci * plane..(ci + 1) * plane];
                            for (d, &v) in dst.iter_mut().zip(gsrc) {
                                *d += s * v;
                            }
                        }
                    }
                    send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
                }
                if nodes[w.0].needs_grad {
                    let mut gw = vec![0.0; c_out * c_in];
                    for co in 0..c_out {
                        let gsrc = &gv[co * plane..(co + 1) * plane];
                        for ci in 0..c_in {
                            let src = &xv[ci * plane..(ci + 1) * plane];
                            gw[co * c_in + ci] = gsrc.iter().zip(src).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    send(*w, Tensor::new(vec![c_out, c_in], gw).unwrap(), ws);
                }
                if nodes[b.0].needs_grad {
                    let gb: Vec<f64> = (0..c_out)
                        .map(|co| gv[co * plane..(co + 1) * plane].iter().sum())
                        .collect();
                    send(*b, Tensor::new(vec![c_out], gb).unwrap(), ws);
                }
            }
            Op::Conv2dCircular { x, k, b } => {
                let (gx, gk, gb) = conv2d_backward(
                    g,
                    &nodes[x.0].value,
                    &nodes[k.0].value,
                    nodes[x.0].needs_grad,
                    nodes[k.0].needs_grad,
                    nodes[b.0].needs_grad,
                );
                if let Some(gx) = gx {
                    send(*x, gx, ws);
                }
                if let Some(gk) = gk {
                    send(*k, gk, ws);
                }
                if let Some(gb) = gb {
                    send(*b, gb, ws);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut gx = vec![0.0; nodes[x.0].value.numel()];
                for (out_i, &src) in argmax.iter().enumerate() {
                    gx[src as usize] += g.data()[out_i];
                }
                send(*x, Tensor::new(nodes[x.0].value.shape().to_vec(), gx).unwrap(), ws);
            }
            Op::BilinearUp2(x) => {
                let xs = nodes[x.0].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (ho, wo) = (2 * h, 2 * w);
                let gv = g.data();
                let mut gx = vec![0.0; c * h * w];
                for ci in 0..c {
                    let gsrc = &gv[ci * ho * wo..(ci + 1) * ho * wo];
                    let gdst = &mut gx[ci * h * w..(ci + 1) * h * w];
                    for i in 0..ho {
                        let (i0, i1, ti) = up2_taps(i, h);
                        for j in 0..wo {
                            let (j0, j1, tj) = up2_taps(j, w);
                            let v = gsrc[i * wo + j];
                            gdst[i0 * w + j0] += (1.0 - ti) * (1.0 - tj) * v;
                            gdst[i0 * w + j1] += (1.0 - ti) * tj * v;
                            gdst[i1 * w + j0] += ti * (1.0 - tj) * v;
                            gdst[i1 * w + j1] += ti * tj * v;
                        }
                    }
                }
                send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
            }
            Op::ScaleChannels { x, s } => {
                let xs = nodes[x.0].value.shape();
                let (c, plane) = (xs[0], xs[1] * xs[2]);
                let gv = g.data();
                let xv = nodes[x.0].value.data();
                let sv = nodes[s.0].value.data();
                if nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; xv.len()];
                    for ci in 0..c {
                        for p in 0..plane {
                            gx[ci * plane + p] = sv[ci] * gv[ci * plane + p];
                        }
                    }
                    send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
                }
                if nodes[s.0].needs_grad {
                    let gs: Vec<f64> = (0..c)
                        .map(|ci| {
                            (0..plane)
                                .map(|p| gv[ci * plane + p] * xv[ci * plane + p])
                                .sum()
                        })
                        .collect();
                    send(*s, Tensor::new(vec![c, 1, 1], gs).unwrap(), ws);
                }
            }
            Op::ScaleSpatial { x, m } => {
                let xs = nodes[x.0].value.shape();
                let (c, plane) = (xs[0], xs[1] * xs[2]);
                let gv = g.data();
                let xv = nodes[x.0].value.data();
                let mv = nodes[m.0].value.data();
                if nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; xv.len()];
                    for ci in 0..c {
                        for p in 0..plane {
                            gx[ci * plane + p] = mv[p] * gv[ci * plane + p];
                        }
                    }
                    send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
                }
                if nodes[m.0].needs_grad {
                    let mut gm = vec![0.0; plane];
                    for ci in 0..c {
                        for p in 0..plane {
                            gm[p] += gv[ci * plane + p] * xv[ci * plane + p];
                        }
                    }
                    send(*m, Tensor::new(vec![1, xs[1], xs[2]], gm).unwrap(), ws);
                }
            }
            Op::MeanChannels(x) => {
                let xs = nodes[x.0].value.shape();
                let (c, plane) = (xs[0], xs[1] * xs[2]);
                let inv = 1.0 / c as f64;
                let gv = g.data();
                let mut gx = vec![0.0; c * plane];
                for ci in 0..c {
                    for p in 0..plane {
                        gx[ci * plane + p] = gv[p] * inv;
                    }
                }
                send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
            }
            Op::MaxChannels { x, argmax } => {
                let mut gx = vec![0.0; nodes[x.0].value.numel()];
                for (p, &src) in argmax.iter().enumerate() {
                    gx[src as usize] += g.data()[p];
                }
                send(*x, Tensor::new(nodes[x.0].value.shape().to_vec(), gx).unwrap(), ws);
            }
            Op::GlobalAvgPool(x) => {
                let xs = nodes[x.0].value.shape();
                let (c, plane) = (xs[0], xs[1] * xs[2]);
                let inv = 1.0 / plane as f64;
                let gv = g.data();
                let mut gx = vec![0.0; c * plane];
                for ci in 0..c {
                    let s = gv[ci] * inv;
                    for p in 0..plane {
                        gx[ci * plane + p] = s;
                    }
                }
                send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
            }
            Op::GlobalMaxPool { x, argmax } => {
                let mut gx = vec![0.0; nodes[x.0].value.numel()];
                for (ci, &src) in argmax.iter().enumerate() {
                    gx[src as usize] += g.data()[ci];
                }
                send(*x, Tensor::new(nodes[x.0].value.shape().to_vec(), gx).unwrap(), ws);
            }
            Op::ConcatChannels(a, b) => {
                let na = nodes[a.0].value.numel();
                let gv = g.data();
                if nodes[a.0].needs_grad {
                    let ga = Tensor::new(nodes[a.0].value.shape().to_vec(), gv[..na].to_vec()).unwrap();
                    send(*a, ga, ws);
                }
                if nodes[b.0].needs_grad {
                    let gb = Tensor::new(nodes[b.0].value.shape().to_vec(), gv[na..].to_vec()).unwrap();
                    send(*b, gb, ws);
                }
            }
            Op::CropSpatial { x, h: _, w: _ } => {
                let xs = nodes[x.0].value.shape();
                let (c, h0, w0) = (xs[0], xs[1], xs[2]);
                let gs = g.shape();
                let (h, w) = (gs[1], gs[2]);
                let gv = g.data();
                let mut gx = vec![0.0; c * h0 * w0];
                for ci in 0..c {
                    for i in 0..h {
                        let s = ci * h * w + i * w;
                        let d = ci * h0 * w0 + i * w0;
                        gx[d..d + w].copy_from_slice(&gv[s..s + w]);
                    }
                }
                send(*x, Tensor::new(xs.to_vec(), gx).unwrap(), ws);
            }
            Op::FourierUnit {
                x,
                weight_re,
                weight_im,
                modes,
            } => {
                let (gx, gwr, gwi) = spectral::fourier_unit_backward(
                    g,
                    &nodes[x.0].value,
                    &nodes[weight_re.0].value,
                    &nodes[weight_im.0].value,
                    *modes,
                    nodes[x.0].needs_grad,
                    nodes[weight_re.0].needs_grad || nodes[weight_im.0].needs_grad,
                );
                if let Some(gx) = gx {
                    send(*x, gx, ws);
                }
                if let Some(gwr) = gwr {
                    send(*weight_re, gwr, ws);
                }
                if let Some(gwi) = gwi {
                    send(*weight_im, gwi, ws);
                }
            }
        }
    }
}

/// Interpolation taps for 2× upsampling: output index `i` reads source cells
/// `(i0, i1)` with weight `t` on `i1`, wrapping periodically.
fn up2_taps(i: usize, n: usize) -> (usize, usize, f64) {
    if i % 2 == 0 {
        let m = i / 2;
        ((m + n - 1) % n, m, 0.75)
    } else {
        let m = i / 2;
        (m, (m + 1) % n, 0.25)
    }
}

/// `dst += s * rot(src, shift)` where `rot` reads `src[(j + shift) mod w]`.
fn rot_axpy(dst: &mut [f64], src: &[f64], shift: usize, s: f64) {
    let w = dst.len();
    let k = shift % w;
    let head = w - k;
    for (d, &v) in dst[..head].iter_mut().zip(&src[k..]) {
        *d += s * v;
    }
    for (d, &v) in dst[head..].iter_mut().zip(&src[..k]) {
        *d += s * v;
    }
}

/// Dot product of `a` with the rotated `b`: `Σ_j a[j] · b[(j + shift) mod w]`.
fn rot_dot(a: &[f64], b: &[f64], shift: usize) -> f64 {
    let w = a.len();
    let k = shift % w;
    let head = w - k;
    let mut acc = 0.0;
    for (x, &y) in a[..head].iter().zip(&b[k..]) {
        acc += x * y;
    }
    for (x, &y) in a[head..].iter().zip(&b[..k]) {
        acc += x * y;
    }
    acc
}

fn conv2d_forward(x: &Tensor, k: &Tensor, bias: &[f64]) -> Tensor {
    let xs = x.shape();
    let ks = k.shape();
    let (c_in, h, w) = (xs[0], xs[1], xs[2]);
    let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
    let (rh, rw) = (kh / 2, kw / 2);
    let xv = x.data();
    let kv = k.data();
    let mut out = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        let dst = &mut out[co * h * w..(co + 1) * h * w];
        dst.fill(bias[co]);
        for ci in 0..c_in {
            let src = &xv[ci * h * w..(ci + 1) * h * w];
            for dy in 0..kh {
                let row_shift = (dy + h - rh) % h;
                for dx in 0..kw {
                    let s = kv[((co * c_in + ci) * kh + dy) * kw + dx];
                    if s == 0.0 {
                        continue;
                    }
                    let col_shift = (dx + w - rw) % w;
                    for y in 0..h {
                        let ys = (y + row_shift) % h;
                        rot_axpy(
                            &mut dst[y * w..(y + 1) * w],
                            &src[ys * w..(ys + 1) * w],
                            col_shift,
                            s,
                        );
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out).unwrap()
}

fn conv2d_backward(
    g: &Tensor,
    x: &Tensor,
    k: &Tensor,
    need_x: bool,
    need_k: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let xs = x.shape();
    let ks = k.shape();
    let (c_in, h, w) = (xs[0], xs[1], xs[2]);
    let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
    let (rh, rw) = (kh / 2, kw / 2);
    let gv = g.data();
    let xv = x.data();
    let kv = k.data();

    let gx = if need_x {
        let mut gx = vec![0.0; c_in * h * w];
        for co in 0..c_out {
            let gsrc = &gv[co * h * w..(co + 1) * h * w];
            for ci in 0..c_in {
                let dst = &mut gx[ci * h * w..(ci + 1) * h * w];
                for dy in 0..kh {
                    // transpose of reading src at (y + dy - rh): scatter becomes
                    // a gather of g at (y - dy + rh)
                    let row_shift = (h + rh - dy) % h;
                    for dx in 0..kw {
                        let s = kv[((co * c_in + ci) * kh + dy) * kw + dx];
                        if s == 0.0 {
                            continue;
                        }
                        let col_shift = (w + rw - dx) % w;
                        for y in 0..h {
                            let ys = (y + row_shift) % h;
                            rot_axpy(
                                &mut dst[y * w..(y + 1) * w],
                                &gsrc[ys * w..(ys + 1) * w],
                                col_shift,
                                s,
                            );
                        }
                    }
                }
            }
        }
        Some(Tensor::new(vec![c_in, h, w], gx).unwrap())
    } else {
        None
    };

    let gk = if need_k {
        let mut gk = vec![0.0; c_out * c_in * kh * kw];
        for co in 0..c_out {
            let gsrc = &gv[co * h * w..(co + 1) * h * w];
            for ci in 0..c_in {
                let src = &xv[ci * h * w..(ci + 1) * h * w];
                for dy in 0..kh {
                    let row_shift = (dy + h - rh) % h;
                    for dx in 0..kw {
                        let col_shift = (dx + w - rw) % w;
                        let mut acc = 0.0;
                        for y in 0..h {
                            let ys = (y + row_shift) % h;
                            acc += rot_dot(
                                &gsrc[y * w..(y + 1) * w],
                                &src[ys * w..(ys + 1) * w],
                                col_shift,
                            );
                        }
                        gk[((co * c_in + ci) * kh + dy) * kw + dx] = acc;
                    }
                }
            }
        }
        Some(Tensor::new(vec![c_out, c_in, kh, kw], gk).unwrap())
    } else {
        None
    };

    let gb = if need_b {
        let gb: Vec<f64> = (0..c_out)
            .map(|co| gv[co * h * w..(co + 1) * h * w].iter().sum())
            .collect();
        Some(Tensor::new(vec![c_out], gb).unwrap())
    } else {
        None
    };

    (gx, gk, gb)
}
