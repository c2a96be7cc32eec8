//! Dense sample mining along epipolar rows.
//!
//! For every reference pixel the right feature map is resampled at the
//! ground-truth correspondence plus a small offset (positive) and at a
//! farther offset of random sign (negative). Disparity convention:
//! `x_right = x_left - d`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Var;

/// Ground-truth disparity with validity and occlusion masks, indexed `[y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityGt {
    pub disparity: Array2<f64>,
    pub valid: Array2<bool>,
    pub occluded: Array2<bool>,
}

impl DisparityGt {
    pub fn new(disparity: Array2<f64>, valid: Array2<bool>, occluded: Array2<bool>) -> Result<Self> {
        if disparity.dim() != valid.dim() || disparity.dim() != occluded.dim() {
            return shape_err(
                "DisparityGt",
                format!(
                    "disparity {:?}, valid {:?}, occluded {:?}",
                    disparity.dim(),
                    valid.dim(),
                    occluded.dim()
                ),
            );
        }
        for ((&d, &v), &o) in disparity.iter().zip(&valid).zip(&occluded) {
            if o && !v {
                return Err(Error::InvalidParam("occluded pixel outside the valid mask".into()));
            }
            if v && !d.is_finite() {
                return Err(Error::InvalidParam("non-finite disparity on a valid pixel".into()));
            }
        }
        Ok(Self {
            disparity,
            valid,
            occluded,
        })
    }

    /// Dense map: every finite pixel is valid, occlusions derived geometrically.
    pub fn dense(disparity: Array2<f64>) -> Self {
        let valid = disparity.mapv(f64::is_finite);
        let occluded = derive_occlusion(&disparity, &valid);
        Self {
            disparity,
            valid,
            occluded,
        }
    }

    pub fn height(&self) -> usize {
        self.disparity.nrows()
    }

    pub fn width(&self) -> usize {
        self.disparity.ncols()
    }

    /// Crops all three maps to the window `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        use ndarray::s;
        Self {
            disparity: self.disparity.slice(s![y0..y0 + h, x0..x0 + w]).to_owned(),
            valid: self.valid.slice(s![y0..y0 + h, x0..x0 + w]).to_owned(),
            occluded: self.occluded.slice(s![y0..y0 + h, x0..x0 + w]).to_owned(),
        }
    }
}

/// Sampling intervals: positives within `[-alpha, alpha]` of the ground
/// truth, negatives at `±[beta1, beta2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, seed: u64) -> Result<Self> {
        let s = Self {
            alpha,
            beta1,
            beta2,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0 && self.beta1 > 0.0 && self.alpha < self.beta1 && self.beta1 < self.beta2;
        if !ok || !self.beta2.is_finite() {
            return Err(Error::InvalidParam(format!(
                "sampling intervals need 0 <= alpha < beta1 < beta2, got alpha={} beta1={} beta2={}",
                self.alpha, self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Per-pixel sampling offsets added to the ground-truth disparity.
#[derive(Clone, Debug, PartialEq)]
pub struct Offsets {
    pub pos: Array2<f64>,
    pub neg: Array2<f64>,
    pub neg2: Array2<f64>,
}

/// Draws positive offsets from `U[-alpha, alpha]` and two independent
/// negative offsets `s * U[beta1, beta2]` with a fair random sign `s`.
/// Each row uses its own generator seeded with `seed ^ row`.
pub fn gen_offsets(spec: &SampleSpec, height: usize, width: usize) -> Result<Offsets> {
    spec.validate()?;
    let mut pos = Array2::zeros((height, width));
    let mut neg = Array2::zeros((height, width));
    let mut neg2 = Array2::zeros((height, width));
    let signed = |rng: &mut ChaCha8Rng| {
        let mag = rng.random_range(spec.beta1..=spec.beta2);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    };
    for y in 0..height {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ y as u64);
        for x in 0..width {
            pos[[y, x]] = if spec.alpha > 0.0 {
                rng.random_range(-spec.alpha..=spec.alpha)
            } else {
                0.0
            };
            neg[[y, x]] = signed(&mut rng);
            neg2[[y, x]] = signed(&mut rng);
        }
    }
    Ok(Offsets { pos, neg, neg2 })
}

/// Source column `x - (d + off)` for every pixel, `NaN` where the pixel is
/// invalid or the source leaves `[0, W-1]`.
fn source_columns(gt: &DisparityGt, off: &Array2<f64>) -> Vec<f64> {
    let w = gt.width();
    let mut src = Vec::with_capacity(gt.height() * w);
    for ((y, x), &d) in gt.disparity.indexed_iter() {
        let s = x as f64 - (d + off[[y, x]]);
        let inside = gt.valid[[y, x]] && s >= 0.0 && s <= (w - 1) as f64;
        src.push(if inside { s } else { f64::NAN });
    }
    src
}

/// Resamples the right feature map (F,H,W) along each row at
/// `x - (d + off)` with linear interpolation. Returns the warped map and the
/// in-bounds mask; out-of-bounds sites hold zeros.
pub fn warp_by_disparity<'t>(
    feat_right: Var<'t>,
    gt: &DisparityGt,
    off: &Array2<f64>,
) -> Result<(Var<'t>, Array2<bool>)> {
    let shape = feat_right.shape();
    if shape.len() != 3 || shape[1] != gt.height() || shape[2] != gt.width() || off.dim() != gt.disparity.dim() {
        return shape_err(
            "warp_by_disparity",
            format!(
                "features {:?}, disparity {:?}, offsets {:?}",
                shape,
                gt.disparity.dim(),
                off.dim()
            ),
        );
    }
    let src = source_columns(gt, off);
    let in_bounds = Array2::from_shape_fn(gt.disparity.dim(), |(y, x)| !src[y * gt.width() + x].is_nan());
    Ok((feat_right.warp_rows(src)?, in_bounds))
}

/// Geometric occlusion test per row.
///
/// A valid pixel is occluded when its target `t = x - d` leaves `[0, W-1]`,
/// or when some valid pixel with strictly larger disparity lands in
/// `(t - 0.5, t]`, i.e. covers the same right-image column from in front.
/// For integer disparities this is exactly a per-row z-buffer collision.
pub fn derive_occlusion(disparity: &Array2<f64>, valid: &Array2<bool>) -> Array2<bool> {
    let (h, w) = disparity.dim();
    let mut occ = Array2::from_elem((h, w), false);
    for y in 0..h {
        let row_max = (0..w)
            .filter(|&x| valid[[y, x]])
            .map(|x| disparity[[y, x]])
            .fold(f64::NEG_INFINITY, f64::max);
        for x in 0..w {
            if !valid[[y, x]] {
                continue;
            }
            let d = disparity[[y, x]];
            let t = x as f64 - d;
            if t < 0.0 || t > (w - 1) as f64 {
                occ[[y, x]] = true;
                continue;
            }
            // a covering pixel x' satisfies x' - d' <= t with d' <= row_max
            let reach = (row_max - d).ceil().max(0.0) as usize;
            let end = (x + reach).min(w - 1);
            occ[[y, x]] = (x + 1..=end).any(|xp| {
                if !valid[[y, xp]] {
                    return false;
                }
                let dp = disparity[[y, xp]];
                let tp = xp as f64 - dp;
                dp > d && tp <= t && tp > t - 0.5
            });
        }
    }
    occ
}

/// Reference/positive/negative features of one tile plus the masks that
/// select which pixels enter each loss term.
pub struct TripletSampleSet<'t> {
    pub x_ref: Var<'t>,
    pub x_pos: Var<'t>,
    pub x_neg: Var<'t>,
    /// Second negative for the occlusion terms.
    pub x_neg2: Option<Var<'t>>,
    pub y_pos: Array2<bool>,
    pub y_neg: Array2<bool>,
    /// Occluded pixels whose two negatives are both in bounds.
    pub occ: Option<Array2<bool>>,
}

impl TripletSampleSet<'_> {
    pub fn height(&self) -> usize {
        self.y_pos.nrows()
    }

    pub fn width(&self) -> usize {
        self.y_pos.ncols()
    }
}

/// Mines a dense triplet set with offsets drawn from `spec`.
pub fn build_sample_set<'t>(
    feat_left: Var<'t>,
    feat_right: Var<'t>,
    gt: &DisparityGt,
    spec: &SampleSpec,
) -> Result<TripletSampleSet<'t>> {
    let offsets = gen_offsets(spec, gt.height(), gt.width())?;
    build_sample_set_with_offsets(feat_left, feat_right, gt, &offsets)
}

/// As [`build_sample_set`] with explicit offsets.
pub fn build_sample_set_with_offsets<'t>(
    feat_left: Var<'t>,
    feat_right: Var<'t>,
    gt: &DisparityGt,
    offsets: &Offsets,
) -> Result<TripletSampleSet<'t>> {
    if feat_left.shape() != feat_right.shape() {
        return shape_err(
            "build_sample_set",
            format!("left {:?} vs right {:?}", feat_left.shape(), feat_right.shape()),
        );
    }
    if !gt.valid.iter().any(|&v| v) {
        return Err(Error::EmptySample("no valid ground-truth pixel".into()));
    }
    let (x_pos, in_pos) = warp_by_disparity(feat_right, gt, &offsets.pos)?;
    let (x_neg, in_neg) = warp_by_disparity(feat_right, gt, &offsets.neg)?;
    let (x_neg2, in_neg2) = warp_by_disparity(feat_right, gt, &offsets.neg2)?;
    let dim = gt.disparity.dim();
    let mask = Array2::from_shape_fn(dim, |i| gt.valid[i] && !gt.occluded[i] && in_pos[i] && in_neg[i]);
    let occ = Array2::from_shape_fn(dim, |i| gt.valid[i] && gt.occluded[i] && in_neg[i] && in_neg2[i]);
    Ok(TripletSampleSet {
        x_ref: feat_left,
        x_pos,
        x_neg,
        x_neg2: Some(x_neg2),
        y_pos: mask.clone(),
        y_neg: mask,
        occ: Some(occ),
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn flat(h: usize, w: usize, d: f64) -> DisparityGt {
        DisparityGt::dense(Array2::from_elem((h, w), d))
    }

    /// Integer z-buffer: target column -> max disparity claiming it.
    fn zbuffer_occlusion(row: &[i64]) -> Vec<bool> {
        let w = row.len() as i64;
        let mut best = vec![i64::MIN; row.len()];
        for (x, &d) in row.iter().enumerate() {
            let t = x as i64 - d;
            if (0..w).contains(&t) {
                best[t as usize] = best[t as usize].max(d);
            }
        }
        row.iter()
            .enumerate()
            .map(|(x, &d)| {
                let t = x as i64 - d;
                !(0..w).contains(&t) || best[t as usize] > d
            })
            .collect()
    }

    #[test]
    fn spec_ordering_enforced() {
        assert!(SampleSpec::new(0.0, 1.0, 4.0, 0).is_ok());
        assert!(SampleSpec::new(1.0, 1.0, 4.0, 0).is_err());
        assert!(SampleSpec::new(0.0, 4.0, 4.0, 0).is_err());
        assert!(SampleSpec::new(2.0, 1.0, 4.0, 0).is_err());
        assert!(SampleSpec::new(-0.5, 1.0, 4.0, 0).is_err());
        assert!(gen_offsets(&SampleSpec { alpha: 3.0, beta1: 2.0, beta2: 8.0, seed: 0 }, 2, 2).is_err());
    }

    #[test]
    fn zero_alpha_puts_positives_on_ground_truth() {
        let off = gen_offsets(&SampleSpec::new(0.0, 1.0, 4.0, 3).unwrap(), 8, 9).unwrap();
        assert!(off.pos.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_support_and_separation() {
        let spec = SampleSpec::new(1.0, 2.0, 6.0, 11).unwrap();
        let off = gen_offsets(&spec, 16, 16).unwrap();
        assert!(off.pos.iter().all(|v| v.abs() <= 1.0));
        for n in off.neg.iter().chain(off.neg2.iter()) {
            assert!((2.0..=6.0).contains(&n.abs()));
        }
        let min_neg = off.neg.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let max_pos = off.pos.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(min_neg - max_pos >= spec.beta1 - spec.alpha);
        // both signs occur
        assert!(off.neg.iter().any(|&v| v > 0.0) && off.neg.iter().any(|&v| v < 0.0));
    }

    #[test]
    fn offsets_are_seeded() {
        let a = gen_offsets(&SampleSpec::new(1.0, 2.0, 8.0, 5).unwrap(), 4, 7).unwrap();
        let b = gen_offsets(&SampleSpec::new(1.0, 2.0, 8.0, 5).unwrap(), 4, 7).unwrap();
        let c = gen_offsets(&SampleSpec::new(1.0, 2.0, 8.0, 6).unwrap(), 4, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_and_integer_shift_warps() {
        let tape = Tape::new();
        let feat = Tensor::from_fn(&[2, 3, 10], |i| (i * 7 % 13) as f64);
        let fr = tape.constant(feat.clone());
        let zero = Array2::zeros((3, 10));
        let (w0, inb) = warp_by_disparity(fr, &flat(3, 10, 0.0), &zero).unwrap();
        assert_eq!(*w0.value(), feat);
        assert!(inb.iter().all(|&b| b));

        let (w3, inb) = warp_by_disparity(fr, &flat(3, 10, 3.0), &zero).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..10 {
                    assert_eq!(inb[[y, x]], x >= 3);
                    let got = w3.value().at3(c, y, x);
                    if x >= 3 {
                        assert_eq!(got, feat.at3(c, y, x - 3));
                    } else {
                        assert_eq!(got, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn half_pixel_warp_averages_neighbours() {
        let tape = Tape::new();
        let feat = Tensor::from_fn(&[1, 2, 6], |i| ((i * i) % 11) as f64);
        let fr = tape.constant(feat.clone());
        let (w, inb) = warp_by_disparity(fr, &flat(2, 6, 0.5), &Array2::zeros((2, 6))).unwrap();
        for y in 0..2 {
            assert!(!inb[[y, 0]]);
            for x in 1..6 {
                let expect = 0.5 * (feat.at3(0, y, x - 1) + feat.at3(0, y, x));
                assert!((w.value().at3(0, y, x) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_disparity_has_no_interior_occlusion() {
        let gt = flat(4, 20, 3.0);
        for y in 0..4 {
            for x in 0..20 {
                assert_eq!(gt.occluded[[y, x]], x < 3);
            }
        }
    }

    #[test]
    fn step_occludes_band_left_of_step() {
        let (c, s) = (10usize, 3.0);
        let d = Array2::from_shape_fn((1, 24), |(_, x)| if x < c { 0.0 } else { s });
        let occ = derive_occlusion(&d, &Array2::from_elem((1, 24), true));
        let row: Vec<i64> = d.iter().map(|&v| v as i64).collect();
        let oracle = zbuffer_occlusion(&row);
        for x in 0..24 {
            assert_eq!(occ[[0, x]], oracle[x], "x={}", x);
            let in_band = x >= c - 3 && x < c;
            let off_left = x >= c && (x as f64) < s;
            assert_eq!(occ[[0, x]], in_band || off_left);
        }
    }

    #[test]
    fn non_increasing_rows_never_occlude_in_bounds_pixels() {
        let d = Array2::from_shape_fn((1, 30), |(_, x)| (8 - (x / 4) as i64).max(0) as f64);
        let occ = derive_occlusion(&d, &Array2::from_elem((1, 30), true));
        for x in 0..30 {
            let in_bounds = x as f64 - d[[0, x]] >= 0.0;
            assert_eq!(occ[[0, x]], !in_bounds);
        }
    }

    #[test]
    fn slanted_surface_is_not_occluded() {
        // slope below one compresses the surface without hiding anything
        let d = Array2::from_shape_fn((1, 40), |(_, x)| 2.0 + 0.6 * x as f64 / 4.0);
        let occ = derive_occlusion(&d, &Array2::from_elem((1, 40), true));
        for x in 3..40 {
            assert!(!occ[[0, x]], "x={}", x);
        }
    }

    #[test]
    fn occlusion_respects_valid_mask() {
        let d = Array2::from_shape_fn((1, 12), |(_, x)| if x < 6 { 0.0 } else { 2.0 });
        let mut valid = Array2::from_elem((1, 12), true);
        valid[[0, 6]] = false;
        valid[[0, 7]] = false;
        let occ = derive_occlusion(&d, &valid);
        assert!(!occ[[0, 6]] && !occ[[0, 7]]);
        // pixels 4,5 were covered only by the now-invalid 6,7
        assert!(!occ[[0, 4]] && !occ[[0, 5]]);
        assert!(DisparityGt::new(d.clone(), valid.clone(), Array2::from_elem((1, 12), true)).is_err());
    }

    #[test]
    fn self_matched_positives_have_unit_cosine() {
        let tape = Tape::new();
        let (h, w, k) = (4usize, 16usize, 2usize);
        let left = Tensor::from_fn(&[3, h, w], |i| 1.0 + ((i * 31) % 17) as f64);
        // right(x - k) = left(x)
        let right = Tensor::from_fn(&[3, h, w], |i| {
            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
            if x + k < w {
                left.at3(c, y, x + k)
            } else {
                0.5
            }
        });
        let gt = flat(h, w, k as f64);
        let set = build_sample_set(
            tape.constant(left),
            tape.constant(right),
            &gt,
            &SampleSpec::new(0.0, 1.0, 4.0, 1).unwrap(),
        )
        .unwrap();
        let cos = set.x_ref.cosine(set.x_pos).unwrap();
        let cv = cos.value();
        for y in 0..h {
            for x in 0..w {
                if set.y_pos[[y, x]] {
                    assert!((cv.data()[y * w + x] - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(set.y_pos.iter().any(|&b| b));
    }

    #[test]
    fn positives_never_touch_occlusions() {
        let tape = Tape::new();
        let d = Array2::from_shape_fn((6, 32), |(_, x)| if x < 16 { 1.0 } else { 5.0 });
        let gt = DisparityGt::dense(d);
        let f = Tensor::from_fn(&[2, 6, 32], |i| (i % 7) as f64 + 0.5);
        let set = build_sample_set(
            tape.constant(f.clone()),
            tape.constant(f),
            &gt,
            &SampleSpec::new(1.0, 2.0, 8.0, 4).unwrap(),
        )
        .unwrap();
        let occ = set.occ.as_ref().unwrap();
        for i in 0..6 {
            for j in 0..32 {
                assert!(!(set.y_pos[[i, j]] && gt.occluded[[i, j]]));
                assert!(!(set.y_pos[[i, j]] && occ[[i, j]]));
                if set.y_pos[[i, j]] {
                    assert!(gt.valid[[i, j]]);
                }
            }
        }
        assert!(occ.iter().any(|&b| b));
    }

    #[test]
    fn same_pixel_is_positive_and_negative_within_one_set() {
        // d = 0, positive offset 0, negative offset +1: reference x pairs its
        // negative with right column x-1, which is the positive of x-1.
        let tape = Tape::new();
        let w = 8;
        let feat = Tensor::from_fn(&[2, 1, w], |i| [1.0, 3.0, 2.0, 5.0, 4.0, 7.0, 6.0, 9.0, 0.5, 1.5, 2.5, 0.25, 3.5, 1.25, 2.75, 0.75][i]);
        let fr = tape.constant(feat.clone());
        let gt = flat(1, w, 0.0);
        let offsets = Offsets {
            pos: Array2::zeros((1, w)),
            neg: Array2::from_elem((1, w), 1.0),
            neg2: Array2::from_elem((1, w), -1.0),
        };
        let set = build_sample_set_with_offsets(tape.constant(feat.clone()), fr, &gt, &offsets).unwrap();
        let (pos, neg) = (set.x_pos.value().clone(), set.x_neg.value().clone());
        for x in 1..w {
            for c in 0..2 {
                assert_eq!(neg.at3(c, 0, x), pos.at3(c, 0, x - 1));
            }
            assert!(set.y_pos[[0, x]]);
        }
        assert!(!set.y_pos[[0, 0]]);
    }

    #[test]
    fn empty_valid_mask_is_rejected() {
        let tape = Tape::new();
        let gt = DisparityGt::new(
            Array2::zeros((2, 4)),
            Array2::from_elem((2, 4), false),
            Array2::from_elem((2, 4), false),
        )
        .unwrap();
        let f = tape.constant(Tensor::zeros(&[1, 2, 4]));
        let err = build_sample_set(f, f, &gt, &SampleSpec::new(0.0, 1.0, 4.0, 0).unwrap());
        assert!(matches!(err, Err(Error::EmptySample(_))));
    }

    #[test]
    fn negative_magnitudes_are_uniform() {
        let spec = SampleSpec::new(0.0, 1.0, 4.0, 2024).unwrap();
        let off = gen_offsets(&spec, 250, 400).unwrap();
        let bins = 20usize;
        let mut counts = vec![0usize; bins];
        for v in off.neg.iter() {
            let u = (v.abs() - 1.0) / 3.0;
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let n = off.neg.len() as f64;
        assert_eq!(n, 1e5);
        let e = n / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 0.99 quantile of chi-square with 19 degrees of freedom
        assert!(chi2 < 36.19, "chi2 = {}", chi2);
        let pos = off.neg.iter().filter(|&&v| v > 0.0).count() as f64;
        assert!((pos / n - 0.5).abs() < 0.01);
    }

    proptest::proptest! {
        #[test]
        fn occlusion_matches_injectivity_oracle(
            w in 2usize..=64,
            cuts in proptest::collection::vec((0usize..64, 0i64..12), 1..6),
            base in 0i64..12,
        ) {
            let mut row = vec![base; w];
            for &(at, d) in &cuts {
                for v in row.iter_mut().skip(at.min(w - 1)) {
                    *v = d;
                }
            }
            let d = Array2::from_shape_fn((1, w), |(_, x)| row[x] as f64);
            let occ = derive_occlusion(&d, &Array2::from_elem((1, w), true));
            let oracle = zbuffer_occlusion(&row);
            for x in 0..w {
                proptest::prop_assert_eq!(occ[[0, x]], oracle[x], "x={} row={:?}", x, row);
            }
        }

        #[test]
        fn integer_warp_is_column_shift(seed in 0u64..1000, w in 4usize..24) {
            let tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Array2::from_shape_fn((3, w), |_| rng.random_range(-3i64..=5) as f64);
            let feat = Tensor::from_fn(&[2, 3, w], |_| rng.random_range(-1.0..1.0));
            let gt = DisparityGt::dense(d.clone());
            let (out, inb) = warp_by_disparity(tape.constant(feat.clone()), &gt, &Array2::zeros((3, w))).unwrap();
            for ((y, x), &dv) in d.indexed_iter() {
                let s = x as i64 - dv as i64;
                proptest::prop_assert_eq!(inb[[y, x]], s >= 0 && s < w as i64);
                if inb[[y, x]] {
                    for c in 0..2 {
                        proptest::prop_assert_eq!(out.value().at3(c, y, x), feat.at3(c, y, s as usize));
                    }
                }
            }
        }
    }
}
