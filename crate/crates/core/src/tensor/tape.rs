use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Recorded operation; indices refer to earlier nodes on the same tape.
#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine {
        x: usize,
        scale: f64,
    },
    Relu(usize),
    Sigmoid(usize),
    AddChannel {
        x: usize,
        c: usize,
    },
    GlobalAvgPool(usize),
    Down2 {
        x: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    Up2 {
        x: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Reshape(usize),
    Concat(usize, usize),
    GatherCols {
        x: usize,
        idx: Vec<usize>,
    },
    Warp {
        x: usize,
        src: Vec<f64>,
    },
    Cosine(usize, usize),
    ClampLog {
        x: usize,
        lo: f64,
        hi: f64,
    },
    WeightedSum {
        x: usize,
        weights: Vec<f64>,
    },
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Recording,
    BackwardDone,
}

/// Append-only record of a computation. Single-threaded by construction.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    state: Cell<State>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.value().shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            state: Cell::new(State::Recording),
        }
    }

    /// Input node. Gradients are kept only when `requires_grad` is set.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Clears gradients so a fresh `backward` is allowed.
    pub fn reset(&self) {
        self.grads.borrow_mut().clear();
        self.state.set(State::Recording);
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.state.get() == State::BackwardDone {
            return Err(Error::Backward(
                "gradients already populated; call reset() first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, &mut grads, id, &g);
            grads[id] = Some(g);
        }
        for (i, node) in nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        *self.grads.borrow_mut() = grads;
        self.state.set(State::BackwardDone);
        Ok(())
    }
}

fn accum<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom } => {
            let xv = nodes[*x].value.data();
            let wv = nodes[*w].value.data();
            // separate buffers so the three targets can be borrowed at once
            let mut gx = nodes[*x].requires_grad.then(|| vec![0.0; xv.len()]);
            let mut gw = nodes[*w].requires_grad.then(|| vec![0.0; wv.len()]);
            let mut gb = nodes[*b].requires_grad.then(|| vec![0.0; nodes[*b].value.len()]);
            kernels::conv_bwd(
                geom,
                xv,
                wv,
                g,
                gx.as_deref_mut(),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (target, buf) in [(*x, gx), (*w, gw), (*b, gb)] {
                if let (Some(dst), Some(src)) = (accum(grads, nodes, target), buf) {
                    add_into(dst, &src);
                }
            }
        }
        Op::Add(a, b) => {
            for t in [*a, *b] {
                if let Some(dst) = accum(grads, nodes, t) {
                    add_into(dst, g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(dst) = accum(grads, nodes, *a) {
                add_into(dst, g);
            }
            if let Some(dst) = accum(grads, nodes, *b) {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(dst) = accum(grads, nodes, *a) {
                for i in 0..g.len() {
                    dst[i] += g[i] * bv[i];
                }
            }
            if let Some(dst) = accum(grads, nodes, *b) {
                for i in 0..g.len() {
                    dst[i] += g[i] * av[i];
                }
            }
        }
        Op::Affine { x, scale } => {
            if let Some(dst) = accum(grads, nodes, *x) {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += scale * gv;
                }
            }
        }
        Op::Relu(x) => {
            let xv = nodes[*x].value.data();
            if let Some(dst) = accum(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        dst[i] += g[i];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let yv = out.data();
            if let Some(dst) = accum(grads, nodes, *x) {
                for i in 0..g.len() {
                    dst[i] += g[i] * yv[i] * (1.0 - yv[i]);
                }
            }
        }
        Op::AddChannel { x, c } => {
            if let Some(dst) = accum(grads, nodes, *x) {
                add_into(dst, g);
            }
            let channels = nodes[*c].value.len();
            let plane = g.len() / channels;
            if let Some(dst) = accum(grads, nodes, *c) {
                for ch in 0..channels {
                    dst[ch] += g[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            let n = nodes[*x].value.len();
            let channels = g.len();
            let plane = n / channels;
            if let Some(dst) = accum(grads, nodes, *x) {
                for ch in 0..channels {
                    let gv = g[ch] / plane as f64;
                    for d in &mut dst[ch * plane..(ch + 1) * plane] {
                        *d += gv;
                    }
                }
            }
        }
        Op::Down2 { x, c, h, w } => {
            if let Some(dst) = accum(grads, nodes, *x) {
                kernels::down2_backward(g, dst, *c, *h, *w);
            }
        }
        Op::Up2 { x, c, h, w } => {
            if let Some(dst) = accum(grads, nodes, *x) {
                kernels::up2_backward(g, dst, *c, *h, *w);
            }
        }
        Op::Linear { x, w, b } => {
            let xv = nodes[*x].value.data();
            let wv = nodes[*w].value.data();
            let out_dim = nodes[*b].value.len();
            let in_dim = nodes[*w].value.len() / out_dim;
            let cols = xv.len() / in_dim;
            if let Some(dst) = accum(grads, nodes, *b) {
                for o in 0..out_dim {
                    dst[o] += g[o * cols..(o + 1) * cols].iter().sum::<f64>();
                }
            }
            if let Some(dst) = accum(grads, nodes, *w) {
                for o in 0..out_dim {
                    let go = &g[o * cols..(o + 1) * cols];
                    for i in 0..in_dim {
                        let xi = &xv[i * cols..(i + 1) * cols];
                        dst[o * in_dim + i] += go.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            if let Some(dst) = accum(grads, nodes, *x) {
                for o in 0..out_dim {
                    let go = &g[o * cols..(o + 1) * cols];
                    for i in 0..in_dim {
                        let wv = wv[o * in_dim + i];
                        for (d, gv) in dst[i * cols..(i + 1) * cols].iter_mut().zip(go) {
                            *d += wv * gv;
                        }
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dst) = accum(grads, nodes, *x) {
                add_into(dst, g);
            }
        }
        Op::Concat(a, b) => {
            let na = nodes[*a].value.len();
            if let Some(dst) = accum(grads, nodes, *a) {
                add_into(dst, &g[..na]);
            }
            if let Some(dst) = accum(grads, nodes, *b) {
                add_into(dst, &g[na..]);
            }
        }
        Op::GatherCols { x, idx } => {
            let n = nodes[*x].value.shape()[1];
            let m = idx.len();
            let rows = g.len() / m.max(1);
            if let Some(dst) = accum(grads, nodes, *x) {
                for r in 0..rows {
                    for (j, &col) in idx.iter().enumerate() {
                        dst[r * n + col] += g[r * m + j];
                    }
                }
            }
        }
        Op::Warp { x, src } => {
            let (c, h, w) = nodes[*x].value.dims3().expect("warp input is 3-D");
            if let Some(dst) = accum(grads, nodes, *x) {
                for ch in 0..c {
                    for y in 0..h {
                        let row = (ch * h + y) * w;
                        for xo in 0..w {
                            let s = src[y * w + xo];
                            if s.is_nan() {
                                continue;
                            }
                            let gv = g[row + xo];
                            let (x0, x1, t) = lerp_taps(s, w);
                            dst[row + x0] += gv * (1.0 - t);
                            dst[row + x1] += gv * t;
                        }
                    }
                }
            }
        }
        Op::Cosine(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            let n = g.len();
            let feats = av.len() / n;
            let need_a = nodes[*a].requires_grad;
            let need_b = nodes[*b].requires_grad;
            let mut ga = vec![0.0; if need_a { av.len() } else { 0 }];
            let mut gb = vec![0.0; if need_b { bv.len() } else { 0 }];
            for p in 0..n {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for f in 0..feats {
                    let (x, y) = (av[f * n + p], bv[f * n + p]);
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                let (na, nb) = (aa.sqrt(), bb.sqrt());
                if na <= COS_EPS || nb <= COS_EPS {
                    continue;
                }
                let cos = ab / (na * nb);
                for f in 0..feats {
                    let (x, y) = (av[f * n + p], bv[f * n + p]);
                    if need_a {
                        ga[f * n + p] += g[p] * (y / (na * nb) - cos * x / aa);
                    }
                    if need_b {
                        gb[f * n + p] += g[p] * (x / (na * nb) - cos * y / bb);
                    }
                }
            }
            if let Some(dst) = accum(grads, nodes, *a) {
                add_into(dst, &ga);
            }
            if let Some(dst) = accum(grads, nodes, *b) {
                add_into(dst, &gb);
            }
        }
        Op::ClampLog { x, lo, hi } => {
            let xv = nodes[*x].value.data();
            if let Some(dst) = accum(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] > *lo && xv[i] < *hi {
                        dst[i] += g[i] / xv[i];
                    }
                }
            }
        }
        Op::WeightedSum { x, weights } => {
            if let Some(dst) = accum(grads, nodes, *x) {
                for (d, wv) in dst.iter_mut().zip(weights) {
                    *d += g[0] * wv;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dst) = accum(grads, nodes, *x) {
                for d in dst.iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Feature norms at or below this are treated as zero by the cosine op.
pub(crate) const COS_EPS: f64 = 1e-12;

/// Linear interpolation taps for a source position inside `[0, w-1]`.
fn lerp_taps(s: f64, w: usize) -> (usize, usize, f64) {
    let x0 = (s.floor() as usize).min(w - 1);
    let x1 = (x0 + 1).min(w - 1);
    (x0, x1, s - x0 as f64)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient after `backward`; `None` if this node does not require one.
    pub fn grad(&self) -> Option<Tensor> {
        let grads = self.tape.grads.borrow();
        let g = grads.get(self.id)?.as_ref()?;
        let shape = self.shape();
        Some(Tensor::new(&shape, g.clone()).expect("grad shape matches value"))
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return shape_err(op, format!("{:?} vs {:?}", a, b));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value();
        Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Var<'t>, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (a, b) = (self.value(), other.value());
        Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// Square-kernel cross-correlation of a (C,H,W) input with (O,C,k,k)
    /// weights and (O) bias.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        let ws = weight.shape();
        let &[o, wc, kh, kw] = ws.as_slice() else {
            return shape_err("conv2d", format!("weight must be 4-D, got {:?}", ws));
        };
        if wc != c {
            return shape_err("conv2d", format!("input has {} channels, weight expects {}", c, wc));
        }
        if kh != kw || kh == 0 {
            return shape_err("conv2d", format!("kernel must be square, got {}x{}", kh, kw));
        }
        if bias.value().len() != o {
            return shape_err("conv2d", format!("bias has {} entries, expected {}", bias.value().len(), o));
        }
        if stride == 0 {
            return Err(Error::InvalidParam("conv2d stride must be positive".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return shape_err("conv2d", format!("input {}x{} smaller than kernel {}", h, w, kh));
        }
        let geom = ConvGeom {
            in_c: c,
            out_c: o,
            h,
            w,
            k: kh,
            stride,
            pad,
        };
        let data = kernels::conv_fwd(&geom, self.value().data(), weight.value().data(), bias.value().data());
        let value = Tensor {
            shape: vec![o, geom.out_h(), geom.out_w()],
            data,
        };
        let rg = self.tape.needs(&[self.id, weight.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                geom,
            },
            rg,
        ))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "add")?;
        let v = self.zip(&other, |a, b| a + b);
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "sub")?;
        let v = self.zip(&other, |a, b| a - b);
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "mul")?;
        let v = self.zip(&other, |a, b| a * b);
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let v = self.map(|x| scale * x + shift);
        self.unary(v, Op::Affine { x: self.id, scale })
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Adds a (C,1,1) tensor to every spatial site of a (C,H,W) tensor.
    pub fn add_channel(self, per_channel: Var<'t>) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        if per_channel.shape() != [c, 1, 1] {
            return shape_err(
                "add_channel",
                format!("expected ({},1,1), got {:?}", c, per_channel.shape()),
            );
        }
        let mut v = self.value().clone();
        {
            let pc = per_channel.value();
            for ch in 0..c {
                for d in &mut v.data[ch * h * w..(ch + 1) * h * w] {
                    *d += pc.data[ch];
                }
            }
        }
        Ok(self.binary(
            per_channel,
            v,
            Op::AddChannel {
                x: self.id,
                c: per_channel.id,
            },
        ))
    }

    /// Per-channel mean of a (C,H,W) tensor, shaped (C,1,1).
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        if h * w == 0 {
            return shape_err("global_avg_pool", "empty spatial extent");
        }
        let data = {
            let v = self.value();
            (0..c)
                .map(|ch| v.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                .collect()
        };
        let value = Tensor {
            shape: vec![c, 1, 1],
            data,
        };
        Ok(self.unary(value, Op::GlobalAvgPool(self.id)))
    }

    /// 2x2 average pooling; odd sizes are replicate-padded first.
    pub fn down2(self) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        if h == 0 || w == 0 {
            return shape_err("down2", "zero-sized spatial dims");
        }
        let (data, oh, ow) = kernels::down2_forward(self.value().data(), c, h, w);
        let value = Tensor {
            shape: vec![c, oh, ow],
            data,
        };
        Ok(self.unary(value, Op::Down2 { x: self.id, c, h, w }))
    }

    /// Bilinear x2 upsampling (half-pixel centers).
    pub fn up2(self) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        if h == 0 || w == 0 {
            return shape_err("up2", "zero-sized spatial dims");
        }
        let data = kernels::up2_forward(self.value().data(), c, h, w);
        let value = Tensor {
            shape: vec![c, 2 * h, 2 * w],
            data,
        };
        Ok(self.unary(value, Op::Up2 { x: self.id, c, h, w }))
    }

    /// `W x + b` for `x` of shape (in) or a column batch (in, N).
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let xs = self.shape();
        let ws = weight.shape();
        let &[out_dim, in_dim] = ws.as_slice() else {
            return shape_err("linear", format!("weight must be 2-D, got {:?}", ws));
        };
        let (x_in, cols) = match xs.as_slice() {
            &[i] => (i, 1),
            &[i, n] => (i, n),
            s => return shape_err("linear", format!("input must be 1-D or 2-D, got {:?}", s)),
        };
        if x_in != in_dim {
            return shape_err("linear", format!("input width {} vs weight width {}", x_in, in_dim));
        }
        if bias.value().len() != out_dim {
            return shape_err("linear", format!("bias length {} vs {}", bias.value().len(), out_dim));
        }
        let mut data = vec![0.0; out_dim * cols];
        {
            let (xv, wv, bv) = (self.value(), weight.value(), bias.value());
            for o in 0..out_dim {
                let row = &mut data[o * cols..(o + 1) * cols];
                row.fill(bv.data[o]);
                for i in 0..in_dim {
                    let wi = wv.data[o * in_dim + i];
                    for (r, xv) in row.iter_mut().zip(&xv.data[i * cols..(i + 1) * cols]) {
                        *r += wi * xv;
                    }
                }
            }
        }
        let shape = if xs.len() == 1 { vec![out_dim] } else { vec![out_dim, cols] };
        let value = Tensor { shape, data };
        let rg = self.tape.needs(&[self.id, weight.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::Linear {
                x: self.id,
                w: weight.id,
                b: bias.id,
            },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Concatenation along the leading dimension.
    pub fn concat(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != b.len() || a[1..] != b[1..] {
            return shape_err("concat", format!("{:?} vs {:?}", a, b));
        }
        let mut shape = a.clone();
        shape[0] += b[0];
        let mut data = self.value().data.clone();
        data.extend_from_slice(&other.value().data);
        Ok(self.binary(other, Tensor { shape, data }, Op::Concat(self.id, other.id)))
    }

    /// Selects columns of a (C, N) tensor.
    pub fn gather_cols(self, idx: &[usize]) -> Result<Var<'t>> {
        let s = self.shape();
        let &[rows, n] = s.as_slice() else {
            return shape_err("gather_cols", format!("expected 2-D, got {:?}", s));
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return shape_err("gather_cols", format!("column {} out of {}", bad, n));
        }
        let m = idx.len();
        let mut data = vec![0.0; rows * m];
        {
            let v = self.value();
            for r in 0..rows {
                for (j, &col) in idx.iter().enumerate() {
                    data[r * m + j] = v.data[r * n + col];
                }
            }
        }
        let value = Tensor {
            shape: vec![rows, m],
            data,
        };
        Ok(self.unary(
            value,
            Op::GatherCols {
                x: self.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Resamples each row of a (C,H,W) tensor at per-pixel source columns
    /// with linear interpolation. `NaN` sources produce zeros.
    pub fn warp_rows(self, src: Vec<f64>) -> Result<Var<'t>> {
        let (c, h, w) = self.value().dims3()?;
        if src.len() != h * w {
            return shape_err("warp_rows", format!("{} sources for {}x{} pixels", src.len(), h, w));
        }
        if let Some(&bad) = src.iter().find(|s| !s.is_nan() && (**s < 0.0 || **s > (w - 1) as f64)) {
            return shape_err("warp_rows", format!("source column {} outside [0, {}]", bad, w - 1));
        }
        let mut data = vec![0.0; c * h * w];
        {
            let v = self.value();
            for ch in 0..c {
                for y in 0..h {
                    let row = (ch * h + y) * w;
                    for xo in 0..w {
                        let s = src[y * w + xo];
                        if s.is_nan() {
                            continue;
                        }
                        let (x0, x1, t) = lerp_taps(s, w);
                        data[row + xo] = (1.0 - t) * v.data[row + x0] + t * v.data[row + x1];
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![c, h, w],
            data,
        };
        Ok(self.unary(value, Op::Warp { x: self.id, src }))
    }

    /// Cosine similarity along the leading (feature) axis. Sites where either
    /// vector has norm <= 1e-12 give 0.
    pub fn cosine(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "cosine")?;
        let s = self.shape();
        if s.len() < 2 {
            return shape_err("cosine", format!("need a feature axis plus sites, got {:?}", s));
        }
        let out_shape = s[1..].to_vec();
        let data = cosine_sites(self.value().data(), other.value().data(), s[0]);
        let value = Tensor {
            shape: out_shape,
            data,
        };
        Ok(self.binary(other, value, Op::Cosine(self.id, other.id)))
    }

    /// `ln(clamp(x, eps, 1 - eps))`; clamped entries pass no gradient.
    pub fn clamped_log(self, eps: f64) -> Var<'t> {
        let (lo, hi) = (eps, 1.0 - eps);
        let v = self.map(|x| x.clamp(lo, hi).ln());
        self.unary(v, Op::ClampLog { x: self.id, lo, hi })
    }

    /// `sum_i weights[i] * x[i]` as a one-element tensor.
    pub fn weighted_sum(self, weights: Vec<f64>) -> Result<Var<'t>> {
        if weights.len() != self.value().len() {
            return shape_err(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value().len()),
            );
        }
        let s: f64 = self.value().data.iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.unary(Tensor::scalar(s), Op::WeightedSum { x: self.id, weights }))
    }

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data.iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine per site for feature-major buffers of `feats` rows.
pub(crate) fn cosine_sites(a: &[f64], b: &[f64], feats: usize) -> Vec<f64> {
    let n = a.len() / feats;
    (0..n)
        .map(|p| {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for f in 0..feats {
                let (x, y) = (a[f * n + p], b[f * n + p]);
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
            let (na, nb) = (aa.sqrt(), bb.sqrt());
            if na <= COS_EPS || nb <= COS_EPS {
                0.0
            } else {
                (ab / (na * nb)).clamp(-1.0, 1.0)
            }
        })
        .collect()
}
