//! Forward values of the training losses. No gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneGrid, PolarAnchor, Pole, PoleGridLabels};
use crate::laneiou::{glane_iou, GIoUParams};

/// Probability clamp for the log terms.
pub const PROB_EPS: f64 = 1e-7;

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn safe_ln(p: f64) -> f64 {
    p.max(PROB_EPS).ln()
}

/// Binary cross-entropy. `p` is clamped to `[0, 1]` and each log argument is
/// floored at [`PROB_EPS`].
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let mut loss = 0.0;
    if y != 0.0 {
        loss -= y * safe_ln(p);
    }
    if y != 1.0 {
        loss -= (1.0 - y) * safe_ln(1.0 - p);
    }
    loss
}

/// Focal loss `−α_t (1 − p_t)^γ ln p_t`.
pub fn focal(p: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let p_t = y * p + (1.0 - y) * (1.0 - p);
    let alpha_t = y * alpha + (1.0 - y) * (1.0 - alpha);
    let modulation = (1.0 - p_t).powf(gamma);
    if modulation == 0.0 {
        return 0.0;
    }
    -alpha_t * modulation * safe_ln(p_t)
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Per-pole output of the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolePrediction {
    pub theta: f64,
    pub radius: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpmLoss {
    pub cls: f64,
    pub reg: f64,
}

/// Classification BCE over every pole and Smooth-L1 regression over poles
/// whose target radius is strictly below `λ^l`, normalised by their count.
pub fn lpm_loss(
    preds: &[PolePrediction],
    labels: &PoleGridLabels,
    lambda_l: f64,
    reduction: Reduction,
) -> Result<LpmLoss> {
    let n = labels.r_hat.len();
    if preds.len() != n || labels.theta_hat.len() != n || labels.s_hat.len() != n {
        return Err(Error::Shape(format!("{} predictions for {} poles", preds.len(), n)));
    }
    let cls_terms: Vec<f64> = preds.iter().zip(&labels.s_hat).map(|(p, &s)| bce(p.score, f64::from(s))).collect();
    let cls_sum = pairwise_sum(&cls_terms);
    let cls = match reduction {
        Reduction::Mean if n > 0 => cls_sum / n as f64,
        Reduction::Mean => 0.0,
        Reduction::Sum => cls_sum,
    };

    let reg_terms: Vec<f64> = (0..n)
        .filter(|&j| labels.r_hat[j] < lambda_l)
        .map(|j| smooth_l1(preds[j].theta - labels.theta_hat[j]) + smooth_l1(preds[j].radius - labels.r_hat[j]))
        .collect();
    let reg = if reg_terms.is_empty() { 0.0 } else { pairwise_sum(&reg_terms) / reg_terms.len() as f64 };
    Ok(LpmLoss { cls, reg })
}

pub const DEFAULT_RANK_MARGIN: f64 = 0.1;

/// Mean pairwise hinge `max(0, margin − (s_p − s_n))`.
pub fn rank_loss(pos_scores: &[f64], neg_scores: &[f64], margin: f64) -> f64 {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return 0.0;
    }
    let terms: Vec<f64> =
        pos_scores.iter().flat_map(|p| neg_scores.iter().map(move |n| (margin - (p - n)).max(0.0))).collect();
    pairwise_sum(&terms) / terms.len() as f64
}

/// `1 − GIoU` with the gap term on.
pub fn giou_loss(pred: &LaneGrid, gt: &LaneGrid, w_base: f64) -> Result<f64> {
    Ok(1.0 - glane_iou(pred, gt, &GIoUParams::giou(w_base))?)
}

/// Smooth-L1 on start and end y, each normalised by the image height.
pub fn endpoint_loss(pred_ends: (f64, f64), gt_ends: (f64, f64), height: f64) -> f64 {
    smooth_l1((pred_ends.0 - gt_ends.0) / height) + smooth_l1((pred_ends.1 - gt_ends.1) / height)
}

/// Image-space y of a lane's first and last valid rows.
pub fn lane_ends(lane: &LaneGrid) -> (f64, f64) {
    (lane.frame().row_y(lane.start()), lane.frame().row_y(lane.end()))
}

pub const DEFAULT_SEGMENTS: usize = 4;

/// Split the valid rows into `m` equal blocks and return each block's chord as
/// a global-frame line.
pub fn segment_params(lane: &LaneGrid, m: usize, global_pole: &Pole) -> Result<Vec<PolarAnchor>> {
    if m == 0 {
        return Err(Error::InvalidInput("segment count must be positive".into()));
    }
    let rows = lane.len();
    if rows < m + 1 {
        return Err(Error::TooFewRows { rows, needed: m + 1 });
    }
    let pts = lane.cartesian_points();
    let bound = |b: usize| b * (rows - 1) / m;
    (0..m).map(|b| PolarAnchor::through_points(pts[bound(b)], pts[bound(b + 1)], *global_pole)).collect()
}

/// Mean over segments of the angle and (height-normalised) radius residuals
/// after applying the predicted offsets to the anchor.
pub fn aux_loss(anchor: &PolarAnchor, offsets: &[(f64, f64)], gt_segments: &[PolarAnchor], height: f64) -> Result<f64> {
    if offsets.len() != gt_segments.len() || offsets.is_empty() {
        return Err(Error::Shape(format!("{} offset pairs for {} segments", offsets.len(), gt_segments.len())));
    }
    let terms: Vec<f64> = offsets
        .iter()
        .zip(gt_segments)
        .map(|(&(dt, dr), seg)| {
            smooth_l1(anchor.theta + dt - seg.theta) + smooth_l1((anchor.radius + dr - seg.radius) / height)
        })
        .collect();
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_cls_o2m: f64,
    pub w_cls_o2o: f64,
    pub w_rank: f64,
    pub w_giou_o2m: f64,
    pub w_end_o2m: f64,
    pub w_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_cls_o2m: 1.0, w_cls_o2o: 1.0, w_rank: 0.7, w_giou_o2m: 1.0, w_end_o2m: 1.0, w_aux: 0.2 }
    }
}

/// Component values feeding the weighted sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub lpm_cls: f64,
    pub lpm_reg: f64,
    pub cls_o2m: f64,
    pub cls_o2o: f64,
    pub rank: f64,
    pub giou_o2m: f64,
    pub end_o2m: f64,
    pub aux: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTotals {
    pub cls_g: f64,
    pub reg_g: f64,
    pub total: f64,
}

pub fn gpm_losses(c: &LossComponents, w: &LossWeights) -> LossTotals {
    let cls_g = w.w_cls_o2m * c.cls_o2m + w.w_cls_o2o * c.cls_o2o + w.w_rank * c.rank;
    let reg_g = w.w_giou_o2m * c.giou_o2m + w.w_end_o2m * c.end_o2m + w.w_aux * c.aux;
    LossTotals { cls_g, reg_g, total: c.lpm_cls + c.lpm_reg + cls_g + reg_g }
}
