//! Detection metrics: F1 at IoU thresholds through bipartite matching, mF1,
//! and point-accuracy metrics in the TuSimple style.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::hungarian_assign;
use crate::error::Result;
use crate::geometry::LaneGrid;
use crate::harness::io::round9;
use crate::laneiou::{iou_matrix, GIoUParams};

/// IoU thresholds averaged by mF1: 0.50, 0.55, …, 0.95.
pub fn mf1_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(prediction, ground truth, IoU)`.
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

/// Injective matching on a `G × P` IoU matrix that maximises the number of
/// pairs with IoU ≥ `threshold` first and their total IoU second.
pub fn match_iou_matrix(ious: &Array2<f64>, threshold: f64) -> MatchResult {
    let (g, p) = ious.dim();
    let admissible = |q: usize, k: usize| ious[[q, k]] >= threshold;
    // any extra pair outweighs every possible IoU total
    let big = (g.min(p) + 1) as f64;
    let weight = |q: usize, k: usize| {
        if admissible(q, k) {
            big + ious[[q, k]]
        } else {
            0.0
        }
    };

    let mut pairs = Vec::new();
    if g > 0 && p > 0 {
        if g <= p {
            let aff = Array2::from_shape_fn((g, p), |(q, k)| weight(q, k));
            for (q, k) in hungarian_assign(&aff).expect("g <= p").into_iter().enumerate() {
                pairs.push((k, q));
            }
        } else {
            let aff = Array2::from_shape_fn((p, g), |(k, q)| weight(q, k));
            for (k, q) in hungarian_assign(&aff).expect("p < g").into_iter().enumerate() {
                pairs.push((k, q));
            }
        }
    }
    let mut tp: Vec<(usize, usize, f64)> =
        pairs.into_iter().filter(|&(k, q)| admissible(q, k)).map(|(k, q)| (k, q, ious[[q, k]])).collect();
    tp.sort_by_key(|&(k, _, _)| k);
    let fp = (0..p).filter(|k| !tp.iter().any(|t| t.0 == *k)).collect();
    let fn_ = (0..g).filter(|q| !tp.iter().any(|t| t.1 == *q)).collect();
    MatchResult { tp, fp, fn_ }
}

pub fn match_lanes(preds: &[LaneGrid], gts: &[LaneGrid], iou_threshold: f64, w_base: f64) -> Result<MatchResult> {
    let ious = iou_matrix(preds, gts, &GIoUParams::iou(w_base))?;
    Ok(match_iou_matrix(&ious, iou_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ThresholdMetrics {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            threshold,
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // equals the harmonic mean of precision and recall, and is 0 when both are
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_threshold: Vec<ThresholdMetrics>,
    pub mf1: f64,
}

impl MetricsReport {
    pub fn at(&self, threshold: f64) -> Option<&ThresholdMetrics> {
        self.per_threshold.iter().find(|m| m.threshold == threshold)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,tp,fp,fn,precision,recall,f1\n");
        for m in &self.per_threshold {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                round9(m.threshold),
                m.tp,
                m.fp,
                m.fn_,
                round9(m.precision),
                round9(m.recall),
                round9(m.f1)
            ));
        }
        out.push_str(&format!("mf1,,,,,,{}\n", round9(self.mf1)));
        out
    }

    pub fn to_json(&self) -> String {
        let rounded = MetricsReport {
            per_threshold: self
                .per_threshold
                .iter()
                .map(|m| ThresholdMetrics {
                    threshold: round9(m.threshold),
                    precision: round9(m.precision),
                    recall: round9(m.recall),
                    f1: round9(m.f1),
                    ..*m
                })
                .collect(),
            mf1: round9(self.mf1),
        };
        serde_json::to_string_pretty(&rounded).expect("report serialises")
    }

    /// Build a report from pooled `(tp, fp, fn)` counts per threshold.
    pub fn from_counts(thresholds: &[f64], counts: &[(usize, usize, usize)], mf1: f64) -> Self {
        let per_threshold = thresholds
            .iter()
            .zip(counts)
            .map(|(&t, &(tp, fp, fn_))| ThresholdMetrics::from_counts(t, tp, fp, fn_))
            .collect();
        Self { per_threshold, mf1 }
    }
}

/// Dataset-level F1 per threshold with counts pooled over scenes, plus mF1
/// over the ten standard thresholds.
pub fn f1_suite(
    preds: &[Vec<LaneGrid>],
    gts: &[Vec<LaneGrid>],
    thresholds: &[f64],
    w_base: f64,
) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(crate::Error::Shape(format!("{} prediction scenes for {} gt scenes", preds.len(), gts.len())));
    }
    let standard = mf1_thresholds();
    let mut all: Vec<f64> = thresholds.to_vec();
    for t in &standard {
        if !all.contains(t) {
            all.push(*t);
        }
    }

    let per_scene: Vec<Vec<(usize, usize, usize)>> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| {
            let ious = iou_matrix(p, g, &GIoUParams::iou(w_base))?;
            Ok(all
                .iter()
                .map(|&t| {
                    let m = match_iou_matrix(&ious, t);
                    (m.tp.len(), m.fp.len(), m.fn_.len())
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut pooled = vec![(0, 0, 0); all.len()];
    for scene in &per_scene {
        for (acc, c) in pooled.iter_mut().zip(scene) {
            acc.0 += c.0;
            acc.1 += c.1;
            acc.2 += c.2;
        }
    }
    let f1_of = |t: f64| {
        let i = all.iter().position(|&a| a == t).expect("threshold present");
        ThresholdMetrics::from_counts(t, pooled[i].0, pooled[i].1, pooled[i].2).f1
    };
    let mf1 = standard.iter().map(|&t| f1_of(t)).sum::<f64>() / standard.len() as f64;
    Ok(MetricsReport::from_counts(thresholds, &pooled[..thresholds.len()], mf1))
}

/// Pixel window for a point to count as correct.
pub const TUSIMPLE_PIXEL_THRESHOLD: f64 = 20.0;
/// A lane is correct when its point accuracy strictly exceeds this.
pub const TUSIMPLE_LANE_ACCURACY: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuSimpleReport {
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
}

fn correct_points(pred: &LaneGrid, gt: &LaneGrid) -> usize {
    gt.rows()
        .filter(|&row| match (pred.x(row), gt.x(row)) {
            (Some(p), Some(g)) => (p - g).abs() <= TUSIMPLE_PIXEL_THRESHOLD,
            _ => false,
        })
        .count()
}

/// Point accuracy `ΣC / ΣS` over all ground-truth points, with each ground
/// truth paired to at most one prediction (maximising correct points). A
/// paired lane is correct when its accuracy exceeds 85%;
/// `FPR = 1 − precision`, `FNR = 1 − recall` over correct lanes.
pub fn tusimple_metrics(preds: &[Vec<LaneGrid>], gts: &[Vec<LaneGrid>]) -> Result<TuSimpleReport> {
    if preds.len() != gts.len() {
        return Err(crate::Error::Shape(format!("{} prediction scenes for {} gt scenes", preds.len(), gts.len())));
    }
    let (mut correct_pts, mut total_pts, mut correct_lanes, mut n_preds, mut n_gts) = (0, 0, 0, 0, 0);
    for (p, g) in preds.iter().zip(gts) {
        n_preds += p.len();
        n_gts += g.len();
        total_pts += g.iter().map(LaneGrid::len).sum::<usize>();
        if p.is_empty() || g.is_empty() {
            continue;
        }
        let counts = Array2::from_shape_fn((g.len(), p.len()), |(q, k)| correct_points(&p[k], &g[q]) as f64);
        let m = match_iou_matrix(&counts, 1.0);
        for (_, q, c) in m.tp {
            correct_pts += c as usize;
            if c / g[q].len() as f64 > TUSIMPLE_LANE_ACCURACY {
                correct_lanes += 1;
            }
        }
    }
    let rate = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(TuSimpleReport {
        accuracy: rate(correct_pts, total_pts),
        fpr: if n_preds == 0 { 0.0 } else { 1.0 - rate(correct_lanes, n_preds) },
        fnr: if n_gts == 0 { 0.0 } else { 1.0 - rate(correct_lanes, n_gts) },
    })
}
