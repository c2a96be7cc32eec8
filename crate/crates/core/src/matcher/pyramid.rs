//! Coarse-to-fine matching: an exhaustive NCC search at the coarsest level,
//! then per-pixel ranges predicted from the level above.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    cosine_cost_volume, mlp_cost_volume, ncc_cost_volume, sgm_aggregate, threshold_occlusion, upsample_predictor,
    wta, CostVolume, Ranges, SgmParams,
};
use crate::backbone::{ModelParams, SIZE_MULTIPLE};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{down2_forward, Tensor};

/// Similarity used on the learned levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    #[default]
    Cosine,
    Mlp,
    Ncc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    /// Downsampling factor of the coarsest level, a power of two >= 8.
    pub coarsest_factor: usize,
    pub ncc_window: usize,
    /// Levels at this factor and finer use learned features.
    pub learned_from_factor: usize,
    pub range_halfwidth: i32,
    pub cost_mode: CostMode,
    /// Inclusive full-resolution search interval of the coarsest level.
    pub global_range: (i32, i32),
    pub tau: f64,
    pub subpixel: bool,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            coarsest_factor: 8,
            ncc_window: 5,
            learned_from_factor: 4,
            range_halfwidth: 4,
            cost_mode: CostMode::Cosine,
            global_range: (0, 32),
            tau: 0.5,
            subpixel: false,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.coarsest_factor;
        if f < 8 || !f.is_power_of_two() {
            return Err(Error::Config(format!("coarsest_factor must be a power of two >= 8, got {f}")));
        }
        let l = self.learned_from_factor;
        if !l.is_power_of_two() || l >= f {
            return Err(Error::Config(format!(
                "learned_from_factor must be a power of two below the coarsest factor, got {l}"
            )));
        }
        if self.ncc_window.is_multiple_of(2) {
            return Err(Error::Config(format!("ncc_window must be odd, got {}", self.ncc_window)));
        }
        if self.range_halfwidth < 1 {
            return Err(Error::Config("range_halfwidth must be >= 1".into()));
        }
        if self.global_range.0 > self.global_range.1 {
            return Err(Error::Config(format!("empty global range {:?}", self.global_range)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

/// Level factors from coarsest to finest, e.g. `[8, 4, 2, 1]`.
pub fn pyramid_factors(cfg: &PyramidConfig) -> Vec<usize> {
    let mut f = cfg.coarsest_factor;
    let mut out = Vec::new();
    while f >= 1 {
        out.push(f);
        f /= 2;
    }
    out
}

/// One pyramid level handed to a [`CostSource`].
pub struct Level<'a> {
    pub factor: usize,
    pub coarsest: bool,
    pub left: &'a Array2<f64>,
    pub right: &'a Array2<f64>,
}

/// Produces the raw matching volume of a level over the given ranges.
pub trait CostSource {
    fn cost_volume(&mut self, level: &Level<'_>, ranges: &Ranges, sentinel_margin: f64) -> Result<CostVolume>;
}

impl<F> CostSource for F
where
    F: FnMut(&Level<'_>, &Ranges, f64) -> Result<CostVolume>,
{
    fn cost_volume(&mut self, level: &Level<'_>, ranges: &Ranges, sentinel_margin: f64) -> Result<CostVolume> {
        self(level, ranges, sentinel_margin)
    }
}

/// NCC on coarse levels, learned similarity from `learned_from_factor` down
/// when a model is present.
pub struct StandardCost<'m> {
    pub model: Option<&'m ModelParams>,
    pub mode: CostMode,
    pub ncc_window: usize,
    pub learned_from_factor: usize,
}

impl<'m> StandardCost<'m> {
    pub fn new(model: Option<&'m ModelParams>, cfg: &PyramidConfig) -> Self {
        Self {
            model,
            mode: cfg.cost_mode,
            ncc_window: cfg.ncc_window,
            learned_from_factor: cfg.learned_from_factor,
        }
    }
}

/// Replicate-pads the bottom and right edges up to a multiple of `m`.
pub fn pad_to_multiple(img: &Array2<f64>, m: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    Array2::from_shape_fn((ph, pw), |(y, x)| img[[y.min(h - 1), x.min(w - 1)]])
}

/// Feature map of an image of any size: padded by edge replication to a
/// multiple of 8, then cropped back to (F, H, W).
pub fn image_features(model: &ModelParams, img: &Array2<f64>) -> Result<Tensor> {
    let (h, w) = img.dim();
    let padded = pad_to_multiple(img, SIZE_MULTIPLE);
    let (ph, pw) = padded.dim();
    let t = Tensor::new(&[1, ph, pw], padded.into_raw_vec_and_offset().0)?;
    let f = model.features_of(&t)?;
    let c = f.shape()[0];
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * ph + y) * pw;
            out.extend_from_slice(&f.data()[row..row + w]);
        }
    }
    Tensor::new(&[c, h, w], out)
}

impl CostSource for StandardCost<'_> {
    fn cost_volume(&mut self, level: &Level<'_>, ranges: &Ranges, margin: f64) -> Result<CostVolume> {
        let learned = !level.coarsest && level.factor <= self.learned_from_factor && self.mode != CostMode::Ncc;
        match (self.model, learned) {
            (Some(model), true) => {
                let fl = image_features(model, level.left)?;
                let fr = image_features(model, level.right)?;
                if self.mode == CostMode::Mlp {
                    mlp_cost_volume(model, &fl, &fr, ranges, margin)
                } else {
                    cosine_cost_volume(&fl, &fr, ranges, margin)
                }
            }
            _ => ncc_cost_volume(level.left, level.right, self.ncc_window, ranges, margin),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidOutput {
    pub disparity: Array2<f64>,
    /// `1 - raw cost` at the selected slot, in `[0, 1]`.
    pub similarity: Array2<f64>,
    pub occlusion: Array2<bool>,
    pub factors: Vec<usize>,
}

fn down2(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let flat: Vec<f64> = img.iter().copied().collect();
    let (out, oh, ow) = down2_forward(&flat, 1, h, w);
    Array2::from_shape_vec((oh, ow), out).expect("down2 output shape")
}

/// Shifts each range so it fits the sanity bound `|d| < w`.
fn clamp_ranges(mut r: Ranges, w: usize) -> Result<Ranges> {
    let lo = -(w as i32 - 1);
    let hi = w as i32 - r.extent as i32;
    if hi < lo {
        return Err(Error::InvalidParam(format!(
            "range extent {} does not fit a level of width {w}",
            r.extent
        )));
    }
    r.dmin.mapv_inplace(|d| d.clamp(lo, hi));
    Ok(r)
}

/// Runs the coarse-to-fine loop with the standard cost source.
pub fn run_pyramid(
    left: &Array2<f64>,
    right: &Array2<f64>,
    model: Option<&ModelParams>,
    cfg: &PyramidConfig,
    sgm: &SgmParams,
) -> Result<PyramidOutput> {
    run_pyramid_with(left, right, cfg, sgm, &mut StandardCost::new(model, cfg))
}

/// Runs the coarse-to-fine loop with an arbitrary cost source.
pub fn run_pyramid_with(
    left: &Array2<f64>,
    right: &Array2<f64>,
    cfg: &PyramidConfig,
    sgm: &SgmParams,
    source: &mut dyn CostSource,
) -> Result<PyramidOutput> {
    cfg.validate()?;
    sgm.validate()?;
    if left.dim() != right.dim() {
        return shape_err("run_pyramid", format!("left {:?} vs right {:?}", left.dim(), right.dim()));
    }
    let (h, w) = left.dim();
    if h == 0 || w == 0 {
        return shape_err("run_pyramid", "empty image".to_string());
    }
    let (glo, ghi) = cfg.global_range;
    if glo.unsigned_abs() as usize >= w || ghi.unsigned_abs() as usize >= w {
        return Err(Error::InvalidParam(format!(
            "global range {:?} exceeds the image width {w}",
            cfg.global_range
        )));
    }
    let factors = pyramid_factors(cfg);
    let mut pyramid = vec![(left.clone(), right.clone())];
    for _ in 1..factors.len() {
        let (l, r) = pyramid.last().expect("non-empty pyramid");
        let next = (down2(l), down2(r));
        pyramid.push(next);
    }

    let mut disparity = Array2::zeros((0, 0));
    let mut similarity = Array2::zeros((0, 0));
    for (i, &f) in factors.iter().enumerate() {
        let (l, r) = &pyramid[factors.len() - 1 - i];
        let (lh, lw) = l.dim();
        let coarsest = i == 0;
        let ranges = if coarsest {
            let fi = f as i32;
            Ranges::uniform(lh, lw, glo.div_euclid(fi), -((-ghi).div_euclid(fi)))?
        } else {
            upsample_predictor(&disparity, cfg.range_halfwidth)?.fit_to(lh, lw)
        };
        let ranges = clamp_ranges(ranges, lw)?;
        let level = Level {
            factor: f,
            coarsest,
            left: l,
            right: r,
        };
        let raw = source.cost_volume(&level, &ranges, sgm.p2)?;
        if raw.dmin != ranges.dmin || raw.extent != ranges.extent {
            return shape_err("run_pyramid", "cost source changed the search ranges".to_string());
        }
        let agg = sgm_aggregate(&raw, sgm)?;
        let best = wta(&agg, cfg.subpixel && f == 1);
        similarity = Array2::from_shape_fn((lh, lw), |(y, x)| {
            (1.0 - raw.cost[[y, x, best.slot[[y, x]]]]).clamp(0.0, 1.0)
        });
        disparity = best.disparity;
    }
    debug_assert_eq!(disparity.dim(), (h, w));
    let occlusion = threshold_occlusion(&similarity, cfg.tau);
    Ok(PyramidOutput {
        disparity,
        similarity,
        occlusion,
        factors,
    })
}

/// Shifts `img` so that `out(y, x) = img(y, x + k)`, replicating the right edge.
#[cfg(test)]
pub(crate) fn shift_left(img: &Array2<f64>, k: usize) -> Array2<f64> {
    let w = img.ncols();
    Array2::from_shape_fn(img.dim(), |(y, x)| img[[y, (x + k).min(w - 1)]])
}

/// Interior crop helper for tests.
#[cfg(test)]
pub(crate) fn interior(a: &Array2<f64>, margin: usize, left_extra: usize) -> Array2<f64> {
    let (h, w) = a.dim();
    a.slice(ndarray::s![margin..h - margin, margin + left_extra..w - margin]).to_owned()
}
