//! Dense matching: flexible-range cost volumes, semi-global aggregation,
//! winner-takes-all extraction and the coarse-to-fine predictor loop.
//!
//! Disparity convention: the left pixel `x` matches right column `x - d`.

mod pyramid;
mod sgm;

use ndarray::{Array2, Array3};

use crate::backbone::ModelParams;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub use pyramid::{
    image_features, pad_to_multiple, pyramid_factors, run_pyramid, run_pyramid_with, CostMode, CostSource, Level,
    PyramidConfig, PyramidOutput, StandardCost,
};
pub use sgm::{sgm_aggregate, sgm_single_path, SgmParams};

/// Variance floor below which a correlation window counts as flat.
pub const NCC_VAR_EPS: f64 = 1e-12;

/// Per-pixel search ranges `[dmin, dmin + extent)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranges {
    pub dmin: Array2<i32>,
    pub extent: usize,
}

impl Ranges {
    /// The same inclusive interval `[lo, hi]` at every pixel.
    pub fn uniform(h: usize, w: usize, lo: i32, hi: i32) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidParam(format!("empty disparity range [{lo}, {hi}]")));
        }
        Ok(Self {
            dmin: Array2::from_elem((h, w), lo),
            extent: (hi - lo + 1) as usize,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.dmin.dim()
    }

    pub fn contains(&self, y: usize, x: usize, d: i32) -> bool {
        let lo = self.dmin[[y, x]];
        d >= lo && d < lo + self.extent as i32
    }

    /// Crops or edge-extends to `(h, w)`.
    pub fn fit_to(&self, h: usize, w: usize) -> Self {
        let (sh, sw) = self.dim();
        Self {
            dmin: Array2::from_shape_fn((h, w), |(y, x)| self.dmin[[y.min(sh - 1), x.min(sw - 1)]]),
            extent: self.extent,
        }
    }

    fn validate(&self, width: usize) -> Result<()> {
        if self.extent == 0 {
            return Err(Error::InvalidParam("cost volume extent must be positive".into()));
        }
        let bound = width as i64;
        for &lo in &self.dmin {
            let hi = lo as i64 + self.extent as i64 - 1;
            if (lo as i64).abs() >= bound || hi.abs() >= bound {
                return Err(Error::InvalidParam(format!(
                    "disparity range [{lo}, {hi}] exceeds the image width {width}"
                )));
            }
        }
        Ok(())
    }
}

/// Matching costs over per-pixel ranges, `cost[[y, x, k]]` at disparity
/// `dmin[[y, x]] + k`. Lower is better.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    pub dmin: Array2<i32>,
    pub extent: usize,
    pub cost: Array3<f64>,
    /// Cost units per unit of dissimilarity: 1 for a raw volume, the number
    /// of summed paths after aggregation.
    pub scale: f64,
}

impl CostVolume {
    pub fn new(ranges: Ranges, cost: Array3<f64>) -> Result<Self> {
        let (h, w) = ranges.dim();
        if cost.dim() != (h, w, ranges.extent) || ranges.extent == 0 {
            return shape_err(
                "CostVolume",
                format!("cost {:?} for ranges {:?} x {}", cost.dim(), (h, w), ranges.extent),
            );
        }
        if !cost.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParam("non-finite matching cost".into()));
        }
        Ok(Self {
            dmin: ranges.dmin,
            extent: ranges.extent,
            cost,
            scale: 1.0,
        })
    }

    pub fn height(&self) -> usize {
        self.dmin.nrows()
    }

    pub fn width(&self) -> usize {
        self.dmin.ncols()
    }

    pub fn disparity(&self, y: usize, x: usize, k: usize) -> i32 {
        self.dmin[[y, x]] + k as i32
    }

    pub fn ranges(&self) -> Ranges {
        Ranges {
            dmin: self.dmin.clone(),
            extent: self.extent,
        }
    }
}

/// Fills a volume from `sim(y, x, d)`, which returns a similarity in
/// `[0, 1]` or `None` when the target column leaves the image. Such slots
/// receive the sentinel `max active cost + sentinel_margin`.
pub fn build_cost_volume(
    ranges: &Ranges,
    sentinel_margin: f64,
    mut sim: impl FnMut(usize, usize, i32) -> Option<f64>,
) -> Result<CostVolume> {
    let (h, w) = ranges.dim();
    ranges.validate(w)?;
    let d = ranges.extent;
    let mut cost = Array3::from_elem((h, w, d), f64::NAN);
    let mut worst = f64::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            for k in 0..d {
                if let Some(s) = sim(y, x, ranges.dmin[[y, x]] + k as i32) {
                    let c = 1.0 - s;
                    worst = worst.max(c);
                    cost[[y, x, k]] = c;
                }
            }
        }
    }
    let sentinel = if worst.is_finite() { worst } else { 1.0 } + sentinel_margin;
    cost.mapv_inplace(|c| if c.is_nan() { sentinel } else { c });
    CostVolume::new(ranges.clone(), cost)
}

fn target_column(x: usize, d: i32, w: usize) -> Option<usize> {
    let t = x as i64 - d as i64;
    (0..w as i64).contains(&t).then_some(t as usize)
}

/// Zero-mean normalized cross-correlation between the `window x window`
/// patch of `left` at `(y, x)` and of `right` at `(y, x - d)`. Borders are
/// replicate-padded; flat windows give 0.
pub fn ncc(left: &Array2<f64>, right: &Array2<f64>, window: usize, d: i32, y: usize, x: usize) -> f64 {
    let (h, w) = left.dim();
    let r = (window / 2) as i64;
    let n = (window * window) as f64;
    let clamp = |v: i64, len: usize| v.clamp(0, len as i64 - 1) as usize;
    let xr = x as i64 - d as i64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -r..=r {
        let yy = clamp(y as i64 + dy, h);
        for dx in -r..=r {
            let a = left[[yy, clamp(x as i64 + dx, w)]];
            let b = right[[yy, clamp(xr + dx, w)]];
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va / n < NCC_VAR_EPS || vb / n < NCC_VAR_EPS {
        return 0.0;
    }
    ((sab - sa * sb / n) / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// NCC volume with similarities rescaled to `[0, 1]`.
pub fn ncc_cost_volume(
    left: &Array2<f64>,
    right: &Array2<f64>,
    window: usize,
    ranges: &Ranges,
    sentinel_margin: f64,
) -> Result<CostVolume> {
    if left.dim() != right.dim() || left.dim() != ranges.dim() {
        return shape_err(
            "ncc_cost_volume",
            format!("left {:?}, right {:?}, ranges {:?}", left.dim(), right.dim(), ranges.dim()),
        );
    }
    if window.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!("NCC window must be odd, got {window}")));
    }
    let w = left.ncols();
    build_cost_volume(ranges, sentinel_margin, |y, x, d| {
        target_column(x, d, w).map(|_| 0.5 * (ncc(left, right, window, d, y, x) + 1.0))
    })
}

fn check_features(op: &'static str, left: &Tensor, right: &Tensor, ranges: &Ranges) -> Result<(usize, usize, usize)> {
    let (f, h, w) = left.dims3()?;
    if right.shape() != left.shape() || ranges.dim() != (h, w) {
        return shape_err(
            op,
            format!("left {:?}, right {:?}, ranges {:?}", left.shape(), right.shape(), ranges.dim()),
        );
    }
    Ok((f, h, w))
}

/// Unit-normalized feature columns, pixel-major `(H*W, F)`; zero vectors stay zero.
fn unit_columns(t: &Tensor, f: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; hw * f];
    let data = t.data();
    for p in 0..hw {
        let norm = (0..f).map(|c| data[c * hw + p].powi(2)).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for c in 0..f {
                out[p * f + c] = data[c * hw + p] / norm;
            }
        }
    }
    out
}

/// Cosine volume on (F,H,W) feature maps, similarity `(cos + 1) / 2`.
pub fn cosine_cost_volume(left: &Tensor, right: &Tensor, ranges: &Ranges, sentinel_margin: f64) -> Result<CostVolume> {
    let (f, h, w) = check_features("cosine_cost_volume", left, right, ranges)?;
    let (ul, ur) = (unit_columns(left, f, h * w), unit_columns(right, f, h * w));
    build_cost_volume(ranges, sentinel_margin, |y, x, d| {
        target_column(x, d, w).map(|t| {
            let a = &ul[(y * w + x) * f..(y * w + x + 1) * f];
            let b = &ur[(y * w + t) * f..(y * w + t + 1) * f];
            let c: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            0.5 * (c.clamp(-1.0, 1.0) + 1.0)
        })
    })
}

/// Learned-similarity volume; head scores are used directly as similarities.
pub fn mlp_cost_volume(
    model: &ModelParams,
    left: &Tensor,
    right: &Tensor,
    ranges: &Ranges,
    sentinel_margin: f64,
) -> Result<CostVolume> {
    let (f, h, w) = check_features("mlp_cost_volume", left, right, ranges)?;
    ranges.validate(w)?;
    let hw = h * w;
    let (ld, rd) = (left.data(), right.data());
    let mut scores = Array3::from_elem((h, w, ranges.extent), f64::NAN);
    for y in 0..h {
        let mut sites = Vec::new();
        for x in 0..w {
            for k in 0..ranges.extent {
                if let Some(t) = target_column(x, ranges.dmin[[y, x]] + k as i32, w) {
                    sites.push((x, k, t));
                }
            }
        }
        if sites.is_empty() {
            continue;
        }
        let n = sites.len();
        let mut lb = vec![0.0; f * n];
        let mut rb = vec![0.0; f * n];
        for (j, &(x, _, t)) in sites.iter().enumerate() {
            for c in 0..f {
                lb[c * n + j] = ld[c * hw + y * w + x];
                rb[c * n + j] = rd[c * hw + y * w + t];
            }
        }
        let s = model.mlp_scores(&lb, &rb, n)?;
        for (&(x, k, _), v) in sites.iter().zip(s) {
            scores[[y, x, k]] = v;
        }
    }
    build_cost_volume(ranges, sentinel_margin, |y, x, d| {
        let s = scores[[y, x, (d - ranges.dmin[[y, x]]) as usize]];
        (!s.is_nan()).then_some(s)
    })
}

/// Result of winner-takes-all extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct WtaResult {
    pub disparity: Array2<f64>,
    /// `1 - best_cost / scale`, clipped to `[0, 1]`.
    pub best_sim: Array2<f64>,
    pub slot: Array2<usize>,
}

/// Vertex offset of the parabola through `(-1, c_prev), (0, c0), (1, c_next)`,
/// or 0 when the three points are not strictly convex.
pub fn parabola_offset(c_prev: f64, c0: f64, c_next: f64) -> f64 {
    let denom = c_prev - 2.0 * c0 + c_next;
    if denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (c_prev - c_next) / denom).clamp(-0.5, 0.5)
}

/// Per-pixel argmin. Ties go to the smaller `|d|`, then to the smaller `d`.
pub fn wta(cv: &CostVolume, subpixel: bool) -> WtaResult {
    let (h, w) = (cv.height(), cv.width());
    let mut disparity = Array2::zeros((h, w));
    let mut best_sim = Array2::zeros((h, w));
    let mut slot = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            for k in 1..cv.extent {
                let (c, cb) = (cv.cost[[y, x, k]], cv.cost[[y, x, best]]);
                let (d, db) = (cv.disparity(y, x, k), cv.disparity(y, x, best));
                if c < cb || (c == cb && (d.abs(), d) < (db.abs(), db)) {
                    best = k;
                }
            }
            let c0 = cv.cost[[y, x, best]];
            let mut d = cv.disparity(y, x, best) as f64;
            if subpixel && best > 0 && best + 1 < cv.extent {
                d += parabola_offset(cv.cost[[y, x, best - 1]], c0, cv.cost[[y, x, best + 1]]);
            }
            disparity[[y, x]] = d;
            best_sim[[y, x]] = (1.0 - c0 / cv.scale).clamp(0.0, 1.0);
            slot[[y, x]] = best;
        }
    }
    WtaResult {
        disparity,
        best_sim,
        slot,
    }
}

/// Nearest-neighbour x2 upscaling of a disparity map into search ranges
/// `[round(2d) - delta, round(2d) + delta]`.
pub fn upsample_predictor(disp: &Array2<f64>, delta: i32) -> Result<Ranges> {
    if delta < 1 {
        return Err(Error::InvalidParam(format!("range half-width must be >= 1, got {delta}")));
    }
    let (h, w) = disp.dim();
    Ok(Ranges {
        dmin: Array2::from_shape_fn((2 * h, 2 * w), |(y, x)| (2.0 * disp[[y / 2, x / 2]]).round() as i32 - delta),
        extent: (2 * delta + 1) as usize,
    })
}

/// Occlusion mask `sim < tau`.
pub fn threshold_occlusion(sim: &Array2<f64>, tau: f64) -> Array2<bool> {
    sim.mapv(|s| s < tau)
}
