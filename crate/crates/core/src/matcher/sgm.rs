//! Semi-global aggregation over flexible per-pixel ranges.
//!
//! Neighbouring slots are matched by absolute disparity: slot `k` at `p`
//! (disparity `dmin_p + k`) reads slot `k + dmin_p - dmin_q` at the previous
//! pixel `q`. Slots absent from `q`'s range only see the `min + P2` term.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::CostVolume;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgmParams {
    pub p1: f64,
    pub p2: f64,
    /// 4 or 8 scanline directions.
    pub paths: usize,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self {
            p1: 0.3,
            p2: 2.0,
            paths: 8,
        }
    }
}

impl SgmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 >= 0.0 && self.p1 <= self.p2 && self.p2.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "SGM penalties need 0 <= P1 <= P2, got P1={} P2={}",
                self.p1, self.p2
            )));
        }
        if self.paths != 4 && self.paths != 8 {
            return Err(Error::InvalidParam(format!("SGM paths must be 4 or 8, got {}", self.paths)));
        }
        Ok(())
    }
}

const DIRECTIONS: [(isize, isize); 8] = [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Path costs `L_r` along direction `(dy, dx)`.
fn path_costs(cv: &CostVolume, dy: isize, dx: isize, p1: f64, p2: f64) -> Array3<f64> {
    let (h, w, n) = (cv.height(), cv.width(), cv.extent);
    let mut l = Array3::<f64>::zeros((h, w, n));
    let mut lmin = Array2::<f64>::zeros((h, w));
    let ys: Vec<usize> = if dy >= 0 { (0..h).collect() } else { (0..h).rev().collect() };
    let xs: Vec<usize> = if dx >= 0 { (0..w).collect() } else { (0..w).rev().collect() };
    let mut prev = vec![0.0; n];
    for &y in &ys {
        for &x in &xs {
            let (qy, qx) = (y as isize - dy, x as isize - dx);
            let inside = qy >= 0 && qx >= 0 && (qy as usize) < h && (qx as usize) < w;
            let mut best = f64::INFINITY;
            if !inside {
                for k in 0..n {
                    let v = cv.cost[[y, x, k]];
                    l[[y, x, k]] = v;
                    best = best.min(v);
                }
            } else {
                let (qy, qx) = (qy as usize, qx as usize);
                for (k, p) in prev.iter_mut().enumerate() {
                    *p = l[[qy, qx, k]];
                }
                let m = lmin[[qy, qx]];
                let shift = cv.dmin[[y, x]] as i64 - cv.dmin[[qy, qx]] as i64;
                let at = |k: i64| -> Option<f64> {
                    let j = k + shift;
                    (0..n as i64).contains(&j).then(|| prev[j as usize])
                };
                for k in 0..n {
                    let ki = k as i64;
                    let mut c = m + p2;
                    if let Some(v) = at(ki) {
                        c = c.min(v);
                    }
                    if let Some(v) = at(ki - 1) {
                        c = c.min(v + p1);
                    }
                    if let Some(v) = at(ki + 1) {
                        c = c.min(v + p1);
                    }
                    let v = cv.cost[[y, x, k]] + c - m;
                    l[[y, x, k]] = v;
                    best = best.min(v);
                }
            }
            lmin[[y, x]] = best;
        }
    }
    l
}

/// Sum of path costs over `p.paths` directions. The result keeps the ranges
/// and has `scale = paths * cv.scale`.
pub fn sgm_aggregate(cv: &CostVolume, p: &SgmParams) -> Result<CostVolume> {
    p.validate()?;
    let mut total = Array3::zeros(cv.cost.dim());
    for &(dy, dx) in &DIRECTIONS[..p.paths] {
        total += &path_costs(cv, dy, dx, p.p1, p.p2);
    }
    Ok(CostVolume {
        dmin: cv.dmin.clone(),
        extent: cv.extent,
        cost: total,
        scale: cv.scale * p.paths as f64,
    })
}

/// Left-to-right path costs alone.
pub fn sgm_single_path(cv: &CostVolume, p1: f64, p2: f64) -> Result<CostVolume> {
    SgmParams { p1, p2, paths: 4 }.validate()?;
    Ok(CostVolume {
        dmin: cv.dmin.clone(),
        extent: cv.extent,
        cost: path_costs(cv, 0, 1, p1, p2),
        scale: cv.scale,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::matcher::Ranges;

    fn pairwise(d: i32, e: i32, p1: f64, p2: f64) -> f64 {
        match (d - e).abs() {
            0 => 0.0,
            1 => p1,
            _ => p2,
        }
    }

    /// Minimum energy of any disparity sequence along a row ending in each
    /// slot of the last pixel, by enumerating every sequence.
    fn brute_force_row(costs: &[Vec<f64>], dmins: &[i32], p1: f64, p2: f64) -> Vec<f64> {
        fn go(t: usize, prev: Option<i32>, acc: f64, c: &[Vec<f64>], dm: &[i32], p: (f64, f64), out: &mut Vec<f64>) {
            let n = c[t].len();
            for k in 0..n {
                let d = dm[t] + k as i32;
                let e = acc + c[t][k] + prev.map_or(0.0, |q| pairwise(d, q, p.0, p.1));
                if t + 1 == c.len() {
                    out[k] = out[k].min(e);
                } else {
                    go(t + 1, Some(d), e, c, dm, p, out);
                }
            }
        }
        let mut out = vec![f64::INFINITY; costs[0].len()];
        go(0, None, 0.0, costs, dmins, (p1, p2), &mut out);
        out
    }

    fn normalized(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
        v.iter().map(|x| x - m).collect()
    }

    #[test]
    fn three_pixel_row_hand_example() {
        let ranges = Ranges::uniform(1, 3, 0, 1).unwrap();
        let cost = Array3::from_shape_vec((1, 3, 2), vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let cv = CostVolume::new(ranges, cost).unwrap();
        let l = sgm_single_path(&cv, 1.0, 2.0).unwrap();
        assert_eq!(l.cost.into_raw_vec_and_offset().0, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
        // the unnormalized recursion gives [[0,1],[1,1],[1,2]]
        let row = |t: usize| {
            let c = [vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
            brute_force_row(&c[..=t], &[0, 0, 0], 1.0, 2.0)
        };
        assert_eq!([row(0), row(1), row(2)], [vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
    }

    #[test]
    fn zero_penalties_sum_raw_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ranges = Ranges {
            dmin: Array2::from_shape_fn((5, 6), |_| rng.random_range(-2..2)),
            extent: 4,
        };
        let cost = Array3::from_shape_fn((5, 6, 4), |_| rng.random_range(0.0..1.0));
        let cv = CostVolume::new(ranges, cost.clone()).unwrap();
        for paths in [4, 8] {
            let agg = sgm_aggregate(&cv, &SgmParams { p1: 0.0, p2: 0.0, paths }).unwrap();
            for (a, c) in agg.cost.iter().zip(&cost) {
                assert!((a - paths as f64 * c).abs() < 1e-12);
            }
            assert_eq!(agg.scale, paths as f64);
        }
    }

    #[test]
    fn single_path_equals_exhaustive_scanline_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..300 {
            let (h, w, n) = (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=4));
            let dmin = Array2::from_shape_fn((h, w), |_| rng.random_range(-2..=2));
            let cost = Array3::from_shape_fn((h, w, n), |_| rng.random_range(0..10) as f64);
            let (p1, p2) = (rng.random_range(0..4) as f64, rng.random_range(4..9) as f64);
            let cv = CostVolume::new(Ranges { dmin: dmin.clone(), extent: n }, cost.clone()).unwrap();
            let l = sgm_single_path(&cv, p1, p2).unwrap();
            for y in 0..h {
                for t in 0..w {
                    let rows: Vec<Vec<f64>> = (0..=t).map(|x| (0..n).map(|k| cost[[y, x, k]]).collect()).collect();
                    let dm: Vec<i32> = (0..=t).map(|x| dmin[[y, x]]).collect();
                    let e = brute_force_row(&rows, &dm, p1, p2);
                    let got: Vec<f64> = (0..n).map(|k| l.cost[[y, t, k]]).collect();
                    assert_eq!(normalized(&got), normalized(&e));
                }
            }
        }
    }

    #[test]
    fn constant_offset_shifts_every_path_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranges = Ranges::uniform(4, 7, -1, 3).unwrap();
        let cost = Array3::from_shape_fn((4, 7, 5), |_| rng.random_range(0.0..1.0));
        let p = SgmParams::default();
        let a = sgm_aggregate(&CostVolume::new(ranges.clone(), cost.clone()).unwrap(), &p).unwrap();
        let b = sgm_aggregate(&CostVolume::new(ranges.clone(), cost.mapv(|c| c + 0.7)).unwrap(), &p).unwrap();
        for (x, y) in a.cost.iter().zip(&b.cost) {
            assert!((y - x - 8.0 * 0.7).abs() < 1e-9);
        }
        assert_eq!(a.dmin, ranges.dmin);
        assert_eq!(a.cost.dim(), (4, 7, 5));
    }

    #[test]
    fn invalid_parameters() {
        assert!(SgmParams { p1: 2.0, p2: 1.0, paths: 8 }.validate().is_err());
        assert!(SgmParams { p1: 0.1, p2: 1.0, paths: 6 }.validate().is_err());
        assert!(SgmParams { p1: -0.1, p2: 1.0, paths: 4 }.validate().is_err());
    }

    #[test]
    fn smoothing_removes_an_isolated_outlier() {
        let ranges = Ranges::uniform(5, 5, 0, 3).unwrap();
        let mut cost = Array3::from_shape_fn((5, 5, 4), |(_, _, k)| if k == 2 { 0.0 } else { 0.6 });
        for k in 0..4 {
            cost[[2, 2, k]] = if k == 0 { 0.0 } else { 0.5 };
        }
        let cv = CostVolume::new(ranges, cost).unwrap();
        let raw = crate::matcher::wta(&cv, false);
        assert_eq!(raw.disparity[[2, 2]], 0.0);
        let agg = sgm_aggregate(&cv, &SgmParams::default()).unwrap();
        let r = crate::matcher::wta(&agg, false);
        assert!(r.disparity.iter().all(|&d| d == 2.0));
    }
}
