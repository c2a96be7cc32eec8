//! Random-dot stereograms with known disparity and occlusion.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{derive_occlusion, DisparityGt};

/// Disparity field of the left view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisparityModel {
    Constant {
        value: f64,
    },
    /// `base + slope_x * x + slope_y * y`.
    Plane {
        base: f64,
        slope_x: f64,
        slope_y: f64,
    },
    /// Equal-width vertical bands, one disparity per band from left to right.
    Blocks {
        steps: Vec<f64>,
    },
    /// Integer background plus `count` axis-aligned rectangles, all drawn
    /// uniformly from `[min, max]`.
    RandomBlocks {
        min: i32,
        max: i32,
        count: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub disparity: DisparityModel,
    /// Fraction of bright dots in the texture.
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_density() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn square(size: usize, disparity: DisparityModel, seed: u64) -> Self {
        Self {
            height: size,
            width: size,
            disparity,
            density: default_density(),
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width < 4 {
            return Err(Error::InvalidParam(format!("image {}x{} too small", self.height, self.width)));
        }
        if !(0.0..=1.0).contains(&self.density) || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParam("density must lie in [0, 1] and noise_sigma >= 0".into()));
        }
        if let DisparityModel::RandomBlocks { min, max, .. } = self.disparity {
            if min > max {
                return Err(Error::InvalidParam(format!("empty disparity interval [{min}, {max}]")));
            }
        }
        if let DisparityModel::Blocks { steps } = &self.disparity {
            if steps.is_empty() {
                return Err(Error::InvalidParam("blocks model needs at least one step".into()));
            }
        }
        Ok(())
    }
}

/// A rectified pair with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoPair {
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    pub gt: DisparityGt,
}

fn disparity_field(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (h, w) = (spec.height, spec.width);
    match &spec.disparity {
        DisparityModel::Constant { value } => Array2::from_elem((h, w), *value),
        DisparityModel::Plane { base, slope_x, slope_y } => {
            Array2::from_shape_fn((h, w), |(y, x)| base + slope_x * x as f64 + slope_y * y as f64)
        }
        DisparityModel::Blocks { steps } => {
            Array2::from_shape_fn((h, w), |(_, x)| steps[(x * steps.len() / w).min(steps.len() - 1)])
        }
        DisparityModel::RandomBlocks { min, max, count } => {
            let mut d = Array2::from_elem((h, w), rng.random_range(*min..=*max) as f64);
            for _ in 0..*count {
                let (bh, bw) = (rng.random_range(h / 6 + 1..=h / 2 + 1), rng.random_range(w / 6 + 1..=w / 2 + 1));
                let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
                let v = rng.random_range(*min..=*max) as f64;
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        d[[y, x]] = v;
                    }
                }
            }
            d
        }
    }
}

fn texel(rng: &mut ChaCha8Rng, density: f64) -> f64 {
    if rng.random_bool(density) {
        rng.random_range(0.55..1.0)
    } else {
        rng.random_range(0.0..0.45)
    }
}

/// Renders one row of the right view by forward-projecting each left segment
/// `[x, x+1]` to `[x - d(x), x+1 - d(x+1)]` and keeping the front-most
/// (largest disparity) surface at every right pixel. Segments that fold over
/// or stretch past two pixels span a depth edge and are not drawn.
fn render_row(left: &[f64], d: &[f64], out: &mut [f64], claimed: &mut [f64]) {
    let w = left.len();
    claimed.fill(f64::NEG_INFINITY);
    for x in 0..w {
        let t0 = x as f64 - d[x];
        if x + 1 == w || (d[x + 1] - d[x]).abs() > 1e-9 {
            // lone endpoint: integer targets only
            if t0.fract() == 0.0 && t0 >= 0.0 && (t0 as usize) < w {
                let xr = t0 as usize;
                if d[x] > claimed[xr] {
                    claimed[xr] = d[x];
                    out[xr] = left[x];
                }
            }
            if x + 1 == w {
                continue;
            }
        }
        let t1 = (x + 1) as f64 - d[x + 1];
        let len = t1 - t0;
        if len <= 0.0 || len > 2.0 {
            continue;
        }
        let first = t0.ceil().max(0.0) as usize;
        let last = t1.floor().min((w - 1) as f64);
        if last < 0.0 {
            continue;
        }
        for xr in first..=last as usize {
            let lam = (xr as f64 - t0) / len;
            let depth = d[x] + lam * (d[x + 1] - d[x]);
            if depth > claimed[xr] {
                claimed[xr] = depth;
                out[xr] = if lam == 0.0 { left[x] } else { left[x] * (1.0 - lam) + left[x + 1] * lam };
            }
        }
    }
}

/// Generates a pair. The right view is the left texture resampled under the
/// disparity field; right pixels seen by no left pixel get fresh texture.
/// Gaussian noise is added to both views after warping and the result is
/// clipped to `[0, 1]`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<StereoPair> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let disparity = disparity_field(spec, &mut rng);
    let bound = w as f64 / 4.0;
    if let Some(bad) = disparity.iter().find(|d| d.abs() >= bound || d.is_nan()) {
        return Err(Error::InvalidParam(format!("disparity {bad} violates |d| < width/4 = {bound}")));
    }
    let left = Array2::from_shape_fn((h, w), |_| texel(&mut rng, spec.density));
    let mut right = Array2::from_elem((h, w), f64::NAN);
    let mut claimed = vec![0.0; w];
    for y in 0..h {
        let lrow: Vec<f64> = left.row(y).to_vec();
        let drow: Vec<f64> = disparity.row(y).to_vec();
        let mut out = vec![f64::NAN; w];
        render_row(&lrow, &drow, &mut out, &mut claimed);
        right.row_mut(y).assign(&ndarray::ArrayView1::from(&out));
    }
    for v in right.iter_mut() {
        if v.is_nan() {
            *v = texel(&mut rng, spec.density);
        }
    }
    let mut left = left;
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let valid = Array2::from_elem((h, w), true);
    let occluded = derive_occlusion(&disparity, &valid);
    Ok(StereoPair {
        left,
        right,
        gt: DisparityGt::new(disparity, valid, occluded)?,
    })
}

/// A family of random-block pairs with consecutive seeds, as used for
/// training and hold-out sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub size: usize,
    pub min_disparity: i32,
    pub max_disparity: i32,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_blocks() -> usize {
    3
}

impl DatasetSpec {
    /// Spec of the `i`-th pair; its seed is `seed + i`.
    pub fn pair_spec(&self, i: usize) -> SyntheticSpec {
        SyntheticSpec {
            height: self.size,
            width: self.size,
            disparity: DisparityModel::RandomBlocks {
                min: self.min_disparity,
                max: self.max_disparity,
                count: self.blocks,
            },
            density: self.density,
            noise_sigma: self.noise_sigma,
            seed: self.seed.wrapping_add(i as u64),
        }
    }

    pub fn generate(&self) -> Result<Vec<StereoPair>> {
        (0..self.count).map(|i| gen_synthetic(&self.pair_spec(i))).collect()
    }
}
