//! Separability of matching/non-matching similarity scores and disparity
//! accuracy statistics.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::sampling::DisparityGt;

/// Gaussian consistency constant of the median absolute deviation.
pub const NMAD_SCALE: f64 = 1.4826;
pub const DEFAULT_BINS: usize = 64;
/// Unit-width |error| bins before the overflow bin.
pub const ERROR_HIST_BINS: usize = 8;

/// Declared value range of a score set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRange {
    /// `[0, 1]`, e.g. head probabilities.
    #[default]
    Unit,
    /// `[-1, 1]`, e.g. raw cosines.
    Signed,
}

impl ScoreRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ScoreRange::Unit => (0.0, 1.0),
            ScoreRange::Signed => (-1.0, 1.0),
        }
    }

    /// Bin of `v` among `bins` equal cells; the upper bound falls in the last.
    fn bin(self, v: f64, bins: usize) -> usize {
        let (lo, hi) = self.bounds();
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        (t.max(0.0) as usize).min(bins - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePairs {
    pub s_pos: Vec<f64>,
    pub s_neg: Vec<f64>,
    /// `s_pos[i]` and `s_neg[i]` share a reference pixel.
    pub paired: bool,
    pub range: ScoreRange,
}

impl ScorePairs {
    pub fn paired(s_pos: Vec<f64>, s_neg: Vec<f64>, range: ScoreRange) -> Result<Self> {
        if s_pos.len() != s_neg.len() {
            return shape_err(
                "ScorePairs",
                format!("paired sets differ in length: {} vs {}", s_pos.len(), s_neg.len()),
            );
        }
        let sp = Self {
            s_pos,
            s_neg,
            paired: true,
            range,
        };
        sp.validate()?;
        Ok(sp)
    }

    pub fn unpaired(s_pos: Vec<f64>, s_neg: Vec<f64>, range: ScoreRange) -> Result<Self> {
        let sp = Self {
            s_pos,
            s_neg,
            paired: false,
            range,
        };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_pos.is_empty() || self.s_neg.is_empty() {
            return Err(Error::EmptySample("score set is empty".into()));
        }
        let (lo, hi) = self.range.bounds();
        if let Some(v) = self.s_pos.iter().chain(&self.s_neg).find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::InvalidParam(format!("score {v} outside the declared range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Joint probability `100 * P(S+ > S-)` on paired samples, ties counting
/// one half, plus the normalized `bins x bins` joint histogram indexed
/// `[pos_bin, neg_bin]`.
pub fn joint_probability(sp: &ScorePairs, bins: usize) -> Result<(f64, Array2<f64>)> {
    sp.validate()?;
    if !sp.paired {
        return Err(Error::InvalidParam("joint probability needs paired samples".into()));
    }
    if bins < 16 {
        return Err(Error::InvalidParam(format!("joint histogram needs >= 16 bins, got {bins}")));
    }
    let n = sp.s_pos.len() as f64;
    let mut hist = Array2::zeros((bins, bins));
    let mut wins = 0.0;
    for (&p, &q) in sp.s_pos.iter().zip(&sp.s_neg) {
        if p > q {
            wins += 1.0;
        } else if p == q {
            wins += 0.5;
        }
        hist[[sp.range.bin(p, bins), sp.range.bin(q, bins)]] += 1.0 / n;
    }
    Ok((100.0 * wins / n, hist))
}

/// Unit-mass histogram of `values` over `range`.
pub fn marginal_histogram(values: &[f64], range: ScoreRange, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let w = 1.0 / values.len() as f64;
    for &v in values {
        h[range.bin(v, bins)] += w;
    }
    h
}

/// `100 * sum_b min(a_b, b_b)` of two unit-mass histograms.
pub fn overlap_coefficient(a: &[f64], b: &[f64]) -> f64 {
    100.0 * a.iter().zip(b).map(|(x, y)| x.min(*y)).sum::<f64>()
}

/// Intersection area of the two marginal score histograms, in percent.
pub fn intersection_area(sp: &ScorePairs, bins: usize) -> Result<f64> {
    sp.validate()?;
    if bins == 0 {
        return Err(Error::InvalidParam("histogram needs at least one bin".into()));
    }
    let a = marginal_histogram(&sp.s_pos, sp.range, bins);
    let b = marginal_histogram(&sp.s_neg, sp.range, bins);
    Ok(overlap_coefficient(&a, &b).min(100.0))
}

/// One ROC operating point: rates of scores `>= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Area under the ROC curve, `100 * (P(S+ > S-) + P(S+ = S-) / 2)` over all
/// cross pairs, and the curve at every distinct threshold (descending), with
/// the `(0, 0)` start at `+inf`.
pub fn roc_auc(sp: &ScorePairs) -> Result<(f64, Vec<RocPoint>)> {
    sp.validate()?;
    let mut neg = sp.s_neg.clone();
    neg.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for &p in &sp.s_pos {
        let below = neg.partition_point(|&q| q < p);
        let upto = neg.partition_point(|&q| q <= p);
        acc += below as f64 + 0.5 * (upto - below) as f64;
    }
    let auc = 100.0 * acc / (sp.s_pos.len() as f64 * neg.len() as f64);

    let mut all: Vec<(f64, bool)> = sp
        .s_pos
        .iter()
        .map(|&v| (v, true))
        .chain(sp.s_neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (sp.s_pos.len() as f64, sp.s_neg.len() as f64);
    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / nn,
            tpr: tp as f64 / np,
        });
    }
    Ok((auc, curve))
}

/// Trapezoidal area under a ROC curve, in percent.
pub fn trapezoid_area(curve: &[RocPoint]) -> f64 {
    100.0
        * curve
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
            .sum::<f64>()
}

/// Disparity accuracy over an evaluation mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparityStats {
    pub count: usize,
    pub mu: f64,
    pub sigma: f64,
    pub nmad: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// Pixel counts of `|e|` in `[0,1), [1,2), ...` plus an overflow bin.
    pub histogram: Vec<usize>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Statistics of raw errors `e = pred - gt`.
pub fn error_stats(errors: &[f64]) -> Result<DisparityStats> {
    if errors.is_empty() {
        return Err(Error::EmptySample("no pixel in the evaluation mask".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidParam("non-finite disparity error".into()));
    }
    let n = errors.len() as f64;
    let mu = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let mean = errors.iter().sum::<f64>() / n;
    let sigma = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = errors.to_vec();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = errors.iter().map(|e| (e - med).abs()).collect();
    let nmad = NMAD_SCALE * median(&mut dev);
    let rate = |t: f64| 100.0 * errors.iter().filter(|e| e.abs() > t).count() as f64 / n;
    let mut histogram = vec![0usize; ERROR_HIST_BINS + 1];
    for e in errors {
        histogram[(e.abs().floor() as usize).min(ERROR_HIST_BINS)] += 1;
    }
    Ok(DisparityStats {
        count: errors.len(),
        mu,
        sigma,
        nmad,
        d1: rate(1.0),
        d2: rate(2.0),
        d3: rate(3.0),
        histogram,
    })
}

/// Errors of `pred` against `gt` on valid (and, if requested, non-occluded) pixels.
pub fn disparity_errors(pred: &Array2<f64>, gt: &DisparityGt, exclude_occluded: bool) -> Result<DisparityStats> {
    if pred.dim() != gt.disparity.dim() {
        return shape_err(
            "disparity_errors",
            format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.disparity.dim()),
        );
    }
    let errors: Vec<f64> = pred
        .indexed_iter()
        .filter(|(i, _)| gt.valid[*i] && !(exclude_occluded && gt.occluded[*i]))
        .map(|(i, &p)| p - gt.disparity[i])
        .collect();
    error_stats(&errors)
}

/// Serializable evaluation summary; absent parts are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inter_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<DisparityStats>,
}

impl MetricsReport {
    /// Score separability metrics of paired samples.
    pub fn from_scores(sp: &ScorePairs, bins: usize) -> Result<Self> {
        Ok(Self {
            jp: Some(joint_probability(sp, bins.max(16))?.0),
            inter_a: Some(intersection_area(sp, bins)?),
            auc: Some(roc_auc(sp)?.0),
            disparity: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParam(format!("JSON encoding failed: {e}")))
    }
}

/// CSV of the two marginal histograms: `bin_lo,bin_hi,pos,neg`.
pub fn histogram_csv(sp: &ScorePairs, bins: usize) -> String {
    let a = marginal_histogram(&sp.s_pos, sp.range, bins);
    let b = marginal_histogram(&sp.s_neg, sp.range, bins);
    let (lo, hi) = sp.range.bounds();
    let step = (hi - lo) / bins as f64;
    let mut out = String::from("bin_lo,bin_hi,pos,neg\n");
    for i in 0..bins {
        let _ = writeln!(out, "{},{},{},{}", lo + i as f64 * step, lo + (i + 1) as f64 * step, a[i], b[i]);
    }
    out
}

/// CSV of the joint histogram: `pos_bin,neg_bin,mass`, non-zero cells only.
pub fn joint_histogram_csv(hist: &Array2<f64>) -> String {
    let mut out = String::from("pos_bin,neg_bin,mass\n");
    for ((i, j), &m) in hist.indexed_iter() {
        if m > 0.0 {
            let _ = writeln!(out, "{i},{j},{m}");
        }
    }
    out
}

/// CSV of ROC points: `threshold,fpr,tpr`.
pub fn roc_csv(curve: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    out
}
