//! MS-AFF feature extractor and the MLP decision head.
//!
//! The extractor runs `conv0` at full resolution, derives four resolution
//! levels by repeated 2x2 average pooling, refines each level with its own
//! stack of residual blocks, then fuses the levels coarse-to-fine with
//! attention-weighted blending (`M-AFF`) before a final three-layer
//! convolutional head (`last_conv`).
//!
//! The decision head maps the concatenation `[f_left; f_right]` of two
//! feature vectors to a matching probability through ReLU hidden layers and
//! a sigmoid output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{residual_block, sigmoid, ConvParams, ConvVars, Tape, Tensor, Var};

/// Number of resolution levels in the extractor.
pub const SCALES: usize = 4;
/// Residual blocks per resolution level.
pub const BLOCKS_PER_SCALE: usize = 3;
/// Input spatial dims must be multiples of this.
pub const SIZE_MULTIPLE: usize = 1 << (SCALES - 1);

/// Feature-extractor family. Only MS-AFF is implemented; the U-Net variants
/// exist so parameter budgets can be compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    MsAff,
    UNet32,
    UNetAttention,
}

impl BackboneKind {
    /// Parameter count of the plain U-Net32 encoder-decoder
    /// (widths 32..512, double 3x3 convs, 2x2 transposed-conv upsampling,
    /// 1x1 output projection to `features` channels).
    pub fn unet32_param_count(features: usize) -> usize {
        let widths = [32usize, 64, 128, 256, 512];
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let mut total = 0;
        let mut prev = 1;
        for &c in &widths {
            total += conv(prev, c, 3) + conv(c, c, 3);
            prev = c;
        }
        for i in (0..widths.len() - 1).rev() {
            let (hi, lo) = (widths[i + 1], widths[i]);
            total += conv(hi, lo, 2); // transposed conv, same count
            total += conv(2 * lo, lo, 3) + conv(lo, lo, 3);
        }
        total + conv(widths[0], features, 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsAffConfig {
    /// Output feature channels `F`, also the width at every scale.
    pub features: usize,
    /// Channel bottleneck divisor of the attention module.
    pub cam_ratio: usize,
}

impl Default for MsAffConfig {
    fn default() -> Self {
        Self {
            features: 32,
            cam_ratio: 4,
        }
    }
}

impl MsAffConfig {
    pub fn desk() -> Self {
        Self {
            features: 8,
            cam_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features < 2 {
            return Err(Error::InvalidParam(format!(
                "feature width must be >= 2, got {}",
                self.features
            )));
        }
        if self.cam_ratio == 0 || !self.features.is_multiple_of(self.cam_ratio) {
            return Err(Error::InvalidParam(format!(
                "feature width {} not divisible by attention ratio {}",
                self.features, self.cam_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
        }
    }
}

/// Learning-rate group of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Bottleneck,
    Decoder,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::Bottleneck,
        ParamGroup::Decoder,
        ParamGroup::Head,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Encoder => 0,
            ParamGroup::Bottleneck => 1,
            ParamGroup::Decoder => 2,
            ParamGroup::Head => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Bottleneck => "bottleneck",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct CamIdx {
    local: [ConvIdx; 2],
    global: [ConvIdx; 2],
}

#[derive(Clone, Debug)]
struct Layout {
    conv0: [ConvIdx; 3],
    scales: [[[ConvIdx; 3]; BLOCKS_PER_SCALE]; SCALES],
    fuse: [CamIdx; SCALES - 1],
    last: [ConvIdx; 3],
    mlp: Vec<ConvIdx>,
}

/// Expected (name, group, shape) of every tensor, in storage order.
fn manifest(cfg: &MsAffConfig, mlp: &MlpConfig) -> (Vec<(String, ParamGroup, Vec<usize>)>, Layout) {
    let f = cfg.features;
    let mid = f / cfg.cam_ratio;
    let mut specs: Vec<(String, ParamGroup, Vec<usize>)> = Vec::new();
    let conv = |specs: &mut Vec<_>, name: String, g: ParamGroup, i: usize, o: usize, k: usize| {
        specs.push((format!("{name}.weight"), g, vec![o, i, k, k]));
        specs.push((format!("{name}.bias"), g, vec![o]));
        ConvIdx {
            w: specs.len() - 2,
            b: specs.len() - 1,
        }
    };
    use ParamGroup::*;
    let conv0 = [0, 1, 2].map(|i| conv(&mut specs, format!("conv0.{i}"), Encoder, if i == 0 { 1 } else { f }, f, 3));
    let scales = [0, 1, 2, 3].map(|s| {
        [0, 1, 2].map(|b| [0, 1, 2].map(|c| conv(&mut specs, format!("conv{}.{b}.{c}", s + 1), Encoder, f, f, 3)))
    });
    let fuse = [0, 1, 2].map(|m| {
        let n = format!("maff{}", m + 1);
        CamIdx {
            local: [
                conv(&mut specs, format!("{n}.local.0"), Bottleneck, f, mid, 1),
                conv(&mut specs, format!("{n}.local.1"), Bottleneck, mid, f, 1),
            ],
            global: [
                conv(&mut specs, format!("{n}.global.0"), Bottleneck, f, mid, 1),
                conv(&mut specs, format!("{n}.global.1"), Bottleneck, mid, f, 1),
            ],
        }
    });
    let last = [0, 1, 2].map(|i| conv(&mut specs, format!("last_conv.{i}"), Decoder, f, f, 3));
    let mut widths = vec![2 * f];
    widths.extend(&mlp.hidden);
    widths.push(1);
    let mut mlp_idx = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        specs.push((format!("mlp.{i}.weight"), Head, vec![pair[1], pair[0]]));
        specs.push((format!("mlp.{i}.bias"), Head, vec![pair[1]]));
        mlp_idx.push(ConvIdx {
            w: specs.len() - 2,
            b: specs.len() - 1,
        });
    }
    let layout = Layout {
        conv0,
        scales,
        fuse,
        last,
        mlp: mlp_idx,
    };
    (specs, layout)
}

/// Every trainable tensor of the extractor and head, each tagged with its
/// learning-rate group.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub backbone: MsAffConfig,
    pub mlp: MlpConfig,
    params: Vec<Param>,
    layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.backbone == other.backbone && self.mlp == other.mlp && self.params == other.params
    }
}

impl ModelParams {
    /// Kaiming-uniform weights, zero biases.
    pub fn init(backbone: MsAffConfig, mlp: MlpConfig, seed: u64) -> Result<Self> {
        backbone.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (specs, layout) = manifest(&backbone, &mlp);
        let mut params: Vec<Param> = specs
            .into_iter()
            .map(|(name, group, shape)| Param {
                name,
                group,
                value: Tensor::zeros(&shape),
            })
            .collect();
        for i in 0..params.len() {
            let shape = params[i].value.shape().to_vec();
            if shape.len() < 2 {
                continue;
            }
            let (out_c, in_c) = (shape[0], shape[1]);
            let k = shape.get(2).copied().unwrap_or(1);
            let p = ConvParams::kaiming(in_c, out_c, k, &mut rng);
            params[i].value = p.weight.reshape(&shape)?;
        }
        Ok(Self {
            backbone,
            mlp,
            params,
            layout,
        })
    }

    /// Rebuilds a model from stored tensors, inferring the configuration
    /// from their shapes.
    pub fn from_params(params: Vec<Param>) -> Result<Self> {
        let find = |name: &str| {
            params
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::InvalidParam(format!("missing tensor {name}")))
        };
        let f = find("conv0.0.weight")?.value.shape()[0];
        let mid = find("maff1.local.0.weight")?.value.shape()[0];
        if mid == 0 || f % mid != 0 {
            return Err(Error::InvalidParam(format!("bad attention width {mid} for F={f}")));
        }
        let mut hidden = Vec::new();
        let mut i = 0;
        while let Some(p) = params.iter().find(|p| p.name == format!("mlp.{i}.weight")) {
            hidden.push(p.value.shape()[0]);
            i += 1;
        }
        if hidden.pop() != Some(1) {
            return Err(Error::InvalidParam("mlp must end in a single output".into()));
        }
        let backbone = MsAffConfig {
            features: f,
            cam_ratio: f / mid,
        };
        backbone.validate()?;
        let mlp = MlpConfig { hidden };
        let (specs, layout) = manifest(&backbone, &mlp);
        if specs.len() != params.len() {
            return Err(Error::InvalidParam(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, group, shape), p) in specs.iter().zip(&params) {
            if &p.name != name || p.group != *group || p.value.shape() != shape.as_slice() {
                return Err(Error::InvalidParam(format!(
                    "tensor {} ({:?}, {:?}) does not match expected {} ({:?}, {:?})",
                    p.name,
                    p.group,
                    p.value.shape(),
                    name,
                    group,
                    shape
                )));
            }
        }
        Ok(Self {
            backbone,
            mlp,
            params,
            layout,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn features(&self) -> usize {
        self.backbone.features
    }

    pub fn group_param_count(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// Parameters of the feature extractor alone (everything but the head).
    pub fn backbone_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.group != ParamGroup::Head)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.group_param_count(ParamGroup::Head)
    }

    /// Registers all tensors on `tape`.
    pub fn bind<'t>(&'t self, tape: &'t Tape, requires_grad: bool) -> BoundModel<'t> {
        BoundModel {
            model: self,
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), requires_grad))
                .collect(),
        }
    }

    /// Tape-free head evaluation over column batches: `left`, `right` are
    /// feature-major (F, N) buffers. Returns N scores in (0, 1).
    pub fn mlp_scores(&self, left: &[f64], right: &[f64], n: usize) -> Result<Vec<f64>> {
        let f = self.features();
        if left.len() != f * n || right.len() != f * n {
            return shape_err("mlp_scores", format!("expected {}x{} buffers", f, n));
        }
        let mut act = Vec::with_capacity(2 * f * n);
        act.extend_from_slice(left);
        act.extend_from_slice(right);
        let last = self.layout.mlp.len() - 1;
        for (li, idx) in self.layout.mlp.iter().enumerate() {
            let w = &self.params[idx.w].value;
            let b = self.params[idx.b].value.data();
            let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
            let mut next = vec![0.0; out_dim * n];
            for o in 0..out_dim {
                let row = &mut next[o * n..(o + 1) * n];
                row.fill(b[o]);
                for i in 0..in_dim {
                    let wv = w.data()[o * in_dim + i];
                    for (r, a) in row.iter_mut().zip(&act[i * n..(i + 1) * n]) {
                        *r += wv * a;
                    }
                }
                if li < last {
                    row.iter_mut().for_each(|v| *v = v.max(0.0));
                } else {
                    row.iter_mut().for_each(|v| *v = sigmoid(*v));
                }
            }
            act = next;
        }
        Ok(act)
    }

    /// Feature map of a single (1,H,W) image without recording gradients.
    pub fn features_of(&self, image: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.extract_features(tape.constant(image.clone()))?;
        let v = out.value().clone();
        Ok(v)
    }
}

/// Model tensors registered on a tape.
pub struct BoundModel<'t> {
    model: &'t ModelParams,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundModel<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn config(&self) -> &MsAffConfig {
        &self.model.backbone
    }

    fn conv(&self, idx: ConvIdx) -> ConvVars<'t> {
        let k = self.model.params[idx.w].value.shape()[2];
        ConvVars {
            weight: self.vars[idx.w],
            bias: self.vars[idx.b],
            stride: 1,
            pad: k / 2,
        }
    }

    /// Gradients of every parameter, in storage order (zeros where a
    /// parameter did not take part in the loss).
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&self.model.params)
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }

    /// Channel attention map in (0,1) for a (F,H,W) input.
    pub fn ms_cam(&self, level: usize, x: Var<'t>) -> Result<Var<'t>> {
        let f = self.model.features();
        let c = x.shape()[0];
        if c != f {
            return shape_err("ms_cam", format!("input has {} channels, model uses {}", c, f));
        }
        let cam = self.model.layout.fuse[level];
        let local = self.conv(cam.local[0]).apply(x)?.relu();
        let local = self.conv(cam.local[1]).apply(local)?;
        let global = x.global_avg_pool()?;
        let global = self.conv(cam.global[0]).apply(global)?.relu();
        let global = self.conv(cam.global[1]).apply(global)?;
        Ok(local.add_channel(global)?.sigmoid())
    }

    /// Attention-weighted blend `M(L+G)*L + (1 - M(L+G))*G`.
    pub fn m_aff_fuse(&self, level: usize, local: Var<'t>, global: Var<'t>) -> Result<Var<'t>> {
        if local.shape() != global.shape() {
            return shape_err(
                "m_aff_fuse",
                format!("local {:?} vs global {:?}", local.shape(), global.shape()),
            );
        }
        let m = self.ms_cam(level, local.add(global)?)?;
        let keep = m.mul(local)?;
        let rest = m.affine(-1.0, 1.0).mul(global)?;
        keep.add(rest)
    }

    /// (1,H,W) image in [0,1] to an (F,H,W) feature map. H and W must be
    /// multiples of 8.
    pub fn extract_features(&self, image: Var<'t>) -> Result<Var<'t>> {
        let s = image.shape();
        let &[c, h, w] = s.as_slice() else {
            return shape_err("extract_features", format!("expected (1,H,W), got {:?}", s));
        };
        if c != 1 {
            return shape_err("extract_features", format!("expected 1 channel, got {}", c));
        }
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return shape_err(
                "extract_features",
                format!("{}x{} is not a multiple of {}", h, w, SIZE_MULTIPLE),
            );
        }
        let lay = &self.model.layout;
        let mut x = image;
        for idx in lay.conv0 {
            x = self.conv(idx).apply(x)?.relu();
        }
        let mut levels = Vec::with_capacity(SCALES);
        levels.push(x);
        for _ in 1..SCALES {
            let prev = *levels.last().expect("nonempty");
            levels.push(prev.down2()?);
        }
        let refined = levels
            .into_iter()
            .enumerate()
            .map(|(s, mut v)| {
                for block in &lay.scales[s] {
                    let body = block.map(|i| self.conv(i));
                    v = residual_block(v, &body)?;
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut global = refined[SCALES - 1];
        for (m, s) in (0..SCALES - 1).rev().enumerate() {
            global = self.m_aff_fuse(m, refined[s], global.up2()?)?;
        }
        let mut y = global;
        for (i, idx) in lay.last.iter().enumerate() {
            y = self.conv(*idx).apply(y)?;
            if i + 1 < lay.last.len() {
                y = y.relu();
            }
        }
        Ok(y)
    }

    /// Head scores for feature-major column batches (F, N) x (F, N) -> (N).
    pub fn mlp(&self, left: Var<'t>, right: Var<'t>) -> Result<Var<'t>> {
        let f = self.model.features();
        if left.shape().first() != Some(&f) || left.shape() != right.shape() || left.shape().len() != 2 {
            return shape_err(
                "mlp",
                format!("expected ({f}, N) pairs, got {:?} and {:?}", left.shape(), right.shape()),
            );
        }
        let n = left.shape()[1];
        let mut x = left.concat(right)?;
        let last = self.model.layout.mlp.len() - 1;
        for (i, idx) in self.model.layout.mlp.iter().enumerate() {
            x = x.linear(self.vars[idx.w], self.vars[idx.b])?;
            x = if i < last { x.relu() } else { x.sigmoid() };
        }
        x.reshape(&[n])
    }
}

/// Per-pixel cosine between two (F,H,W) maps; (H,W) output in [-1,1].
pub fn cosine_map<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    a.cosine(b)
}

/// Single-pair head score `Phi([f_left; f_right])`.
pub fn mlp_similarity(model: &ModelParams, f_left: &[f64], f_right: &[f64]) -> Result<f64> {
    let f = model.features();
    if f_left.len() != f || f_right.len() != f {
        return shape_err(
            "mlp_similarity",
            format!("expected length {} vectors, got {} and {}", f, f_left.len(), f_right.len()),
        );
    }
    Ok(model.mlp_scores(f_left, f_right, 1)?[0])
}
