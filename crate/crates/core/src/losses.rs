//! Training objectives over a [`TripletSampleSet`].
//!
//! Every loss is assembled from a per-pixel term vector and a weight vector
//! that carries the inclusion mask and the reduction, so the same term code
//! serves both the sum and the mean form.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::TripletSampleSet;
use crate::tensor::Var;

/// Numeric floor applied to scores before taking logarithms.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    /// Divide by the number of included pixels.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub margin: f64,
    pub reduction: Reduction,
    pub occlusion_term: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            margin: 0.3,
            reduction: Reduction::Mean,
            occlusion_term: false,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 2.0) {
            return Err(Error::InvalidParam(format!("margin must lie in (0, 2), got {}", self.margin)));
        }
        Ok(())
    }
}

/// Per-pixel hinge `max(s_neg - s_pos + m, 0)`.
pub fn triplet_terms<'t>(s_pos: Var<'t>, s_neg: Var<'t>, margin: f64) -> Var<'t> {
    s_neg.sub(s_pos).expect("matching shapes").affine(1.0, margin).relu()
}

/// Per-pixel occlusion hinge `max(s1 + s2, 0)`.
pub fn occlusion_triplet_terms<'t>(s_neg1: Var<'t>, s_neg2: Var<'t>) -> Var<'t> {
    s_neg1.add(s_neg2).expect("matching shapes").relu()
}

/// Per-pixel `-log(s_pos) - log(1 - s_neg)` with scores clamped to `[eps, 1-eps]`.
pub fn bce_terms<'t>(s_pos: Var<'t>, s_neg: Var<'t>) -> Var<'t> {
    let lp = s_pos.clamped_log(LOG_EPS);
    let ln = s_neg.affine(-1.0, 1.0).clamped_log(LOG_EPS);
    lp.add(ln).expect("matching shapes").affine(-1.0, 0.0)
}

/// Per-pixel `-log(1 - s1) - log(1 - s2)`.
pub fn occlusion_bce_terms<'t>(s_neg1: Var<'t>, s_neg2: Var<'t>) -> Var<'t> {
    let a = s_neg1.affine(-1.0, 1.0).clamped_log(LOG_EPS);
    let b = s_neg2.affine(-1.0, 1.0).clamped_log(LOG_EPS);
    a.add(b).expect("matching shapes").affine(-1.0, 0.0)
}

fn count(mask: &Array2<bool>) -> usize {
    mask.iter().filter(|&&b| b).count()
}

fn scale(reduction: Reduction, included: usize) -> f64 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / included as f64,
    }
}

fn mask_weights(mask: &Array2<bool>, s: f64) -> Vec<f64> {
    mask.iter().map(|&b| if b { s } else { 0.0 }).collect()
}

fn occ_parts<'a, 't>(set: &'a TripletSampleSet<'t>) -> Result<(&'a Array2<bool>, Var<'t>)> {
    match (&set.occ, set.x_neg2) {
        (Some(occ), Some(n2)) => Ok((occ, n2)),
        _ => Err(Error::InvalidParam(
            "occlusion term requested but the sample set carries no occlusion mask".into(),
        )),
    }
}

/// Mask shared by the positive and negative terms.
fn pair_mask(set: &TripletSampleSet<'_>) -> Array2<bool> {
    Array2::from_shape_fn(set.y_pos.dim(), |i| set.y_pos[i] && set.y_neg[i])
}

/// Hinge triplet loss on cosine similarities over non-occluded pixels.
pub fn triplet_loss<'t>(set: &TripletSampleSet<'t>, p: &LossParams) -> Result<Var<'t>> {
    p.validate()?;
    let mask = pair_mask(set);
    let n = count(&mask);
    if n == 0 {
        return Err(Error::EmptySample("triplet loss over an empty mask".into()));
    }
    let s_pos = set.x_ref.cosine(set.x_pos)?;
    let s_neg = set.x_ref.cosine(set.x_neg)?;
    triplet_terms(s_pos, s_neg, p.margin).weighted_sum(mask_weights(&mask, scale(p.reduction, n)))
}

/// Triplet loss plus the hinge pushing both negatives of occluded pixels
/// towards dissimilarity.
pub fn triplet_loss_occ<'t>(set: &TripletSampleSet<'t>, p: &LossParams) -> Result<Var<'t>> {
    p.validate()?;
    let (occ, x_neg2) = occ_parts(set)?;
    let mask = pair_mask(set);
    let (n, n_occ) = (count(&mask), count(occ));
    if n + n_occ == 0 {
        return Err(Error::EmptySample("triplet loss over an empty mask".into()));
    }
    let k = scale(p.reduction, n + n_occ);
    let s_pos = set.x_ref.cosine(set.x_pos)?;
    let s_neg = set.x_ref.cosine(set.x_neg)?;
    let main = triplet_terms(s_pos, s_neg, p.margin).weighted_sum(mask_weights(&mask, k))?;
    let s_neg2 = set.x_ref.cosine(x_neg2)?;
    let extra = occlusion_triplet_terms(s_neg, s_neg2).weighted_sum(mask_weights(occ, k))?;
    main.add(extra)
}

/// Flattens an (F,H,W) map to (F,H*W) and keeps the masked columns.
fn gather_masked<'t>(x: Var<'t>, idx: &[usize]) -> Result<Var<'t>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1] * s[2]])?.gather_cols(idx)
}

fn masked_indices(mask: &Array2<bool>) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Binary cross-entropy on similarity-head scores. `head(left, right)` maps
/// two (F,N) feature matrices to N probabilities.
pub fn bce_loss<'t, H>(set: &TripletSampleSet<'t>, head: H, p: &LossParams) -> Result<Var<'t>>
where
    H: Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    p.validate()?;
    let mask = pair_mask(set);
    let idx = masked_indices(&mask);
    if idx.is_empty() {
        return Err(Error::EmptySample("BCE loss over an empty mask".into()));
    }
    let r = gather_masked(set.x_ref, &idx)?;
    let s_pos = head(r, gather_masked(set.x_pos, &idx)?)?;
    let s_neg = head(r, gather_masked(set.x_neg, &idx)?)?;
    let k = scale(p.reduction, idx.len());
    bce_terms(s_pos, s_neg).weighted_sum(vec![k; idx.len()])
}

/// BCE plus the occluded-pixel term on both negative scores.
pub fn bce_loss_occ<'t, H>(set: &TripletSampleSet<'t>, head: H, p: &LossParams) -> Result<Var<'t>>
where
    H: Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    p.validate()?;
    let (occ, x_neg2) = occ_parts(set)?;
    let idx = masked_indices(&pair_mask(set));
    let occ_idx = masked_indices(occ);
    let total = idx.len() + occ_idx.len();
    if total == 0 {
        return Err(Error::EmptySample("BCE loss over an empty mask".into()));
    }
    let k = scale(p.reduction, total);
    let mut parts = Vec::new();
    if !idx.is_empty() {
        let r = gather_masked(set.x_ref, &idx)?;
        let s_pos = head(r, gather_masked(set.x_pos, &idx)?)?;
        let s_neg = head(r, gather_masked(set.x_neg, &idx)?)?;
        parts.push(bce_terms(s_pos, s_neg).weighted_sum(vec![k; idx.len()])?);
    }
    if !occ_idx.is_empty() {
        let r = gather_masked(set.x_ref, &occ_idx)?;
        let s1 = head(r, gather_masked(set.x_neg, &occ_idx)?)?;
        let s2 = head(r, gather_masked(x_neg2, &occ_idx)?)?;
        parts.push(occlusion_bce_terms(s1, s2).weighted_sum(vec![k; occ_idx.len()])?);
    }
    let mut total_loss = parts[0];
    for &part in &parts[1..] {
        total_loss = total_loss.add(part)?;
    }
    Ok(total_loss)
}

/// Triplet objective, with the occlusion term when `p.occlusion_term` is set.
pub fn triplet_objective<'t>(set: &TripletSampleSet<'t>, p: &LossParams) -> Result<Var<'t>> {
    if p.occlusion_term {
        triplet_loss_occ(set, p)
    } else {
        triplet_loss(set, p)
    }
}

/// BCE objective, with the occlusion term when `p.occlusion_term` is set.
pub fn bce_objective<'t, H>(set: &TripletSampleSet<'t>, head: H, p: &LossParams) -> Result<Var<'t>>
where
    H: Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>,
{
    if p.occlusion_term {
        bce_loss_occ(set, head, p)
    } else {
        bce_loss(set, head, p)
    }
}
