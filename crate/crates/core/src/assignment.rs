//! Label assignment between predictions and ground-truth lanes.
//!
//! The matching "cost" is an affinity `score · IoU^β` that both assigners
//! maximise: the one-to-one branch by an exact Hungarian solve, the one-to-many
//! branch by SimOTA-style dynamic-k selection.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub beta: f64,
    /// Upper bound on positives per ground truth.
    pub k_dynamic: usize,
    /// How many top IoUs are summed to estimate each ground truth's k.
    pub topk_for_dynamic: usize,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { beta: 6.0, k_dynamic: 4, topk_for_dynamic: 10 }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || self.k_dynamic == 0 || self.topk_for_dynamic == 0 {
            return Err(Error::InvalidInput(format!("invalid cost config {self:?}")));
        }
        Ok(())
    }
}

/// `G × K` affinity with element `(q, p) = score_p · iou[q, p]^β`.
///
/// Pass the one-to-one scores for the Hungarian branch and the one-to-many
/// scores for the SimOTA branch.
pub fn cost_matrix(scores: &[f64], ious: &Array2<f64>, beta: f64) -> Result<Array2<f64>> {
    if ious.ncols() != scores.len() {
        return Err(Error::Shape(format!("{} scores for an IoU matrix with {} columns", scores.len(), ious.ncols())));
    }
    if scores.iter().chain(ious.iter()).any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("scores and IoUs must be non-negative".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    Ok(Array2::from_shape_fn(ious.dim(), |(q, p)| scores[p] * ious[[q, p]].powf(beta)))
}

/// Exact maximum-affinity injective map from rows (ground truths) to columns
/// (predictions). Returns the column assigned to each row.
pub fn hungarian_assign(affinity: &Array2<f64>) -> Result<Vec<usize>> {
    let (g, k) = affinity.dim();
    if k < g {
        return Err(Error::InfeasibleAssignment { gts: g, preds: k });
    }
    if affinity.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("affinity must be finite".into()));
    }
    Ok(min_cost_rows(g, k, |i, j| -affinity[[i, j]]))
}

/// Shortest-augmenting-path Hungarian method with potentials for an `n × m`
/// cost (`n ≤ m`). Indices inside are 1-based; column 0 is a sentinel.
fn min_cost_rows(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assigned = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assigned[owner[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Total affinity of a row → column map.
pub fn total_affinity(affinity: &Array2<f64>, map: &[usize]) -> f64 {
    map.iter().enumerate().map(|(q, &p)| affinity[[q, p]]).sum()
}

fn descending(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let v: Vec<f64> = values.collect();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// One-to-many positives as `(prediction, ground truth)` pairs, sorted by prediction.
///
/// Each ground truth takes its `k_q` highest-affinity predictions where
/// `k_q = clamp(round(Σ top IoUs), 1, k_dynamic)`. A prediction claimed by
/// several ground truths stays with the highest affinity (lower gt index on
/// ties); freed slots are not refilled. A ground truth that lost every claim
/// takes back its best prediction that is either unclaimed or held by a ground
/// truth with more than one positive, so no ground truth ends up empty while
/// `K ≥ G`.
pub fn simota_assign(affinity: &Array2<f64>, ious: &Array2<f64>, cfg: &CostConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    if affinity.dim() != ious.dim() {
        return Err(Error::Shape(format!("affinity {:?} vs IoU {:?}", affinity.dim(), ious.dim())));
    }
    let (g, k) = affinity.dim();
    if k == 0 {
        return Ok(Vec::new());
    }

    let mut owner: Vec<Option<usize>> = vec![None; k];
    for q in 0..g {
        let mut top: Vec<f64> = ious.row(q).to_vec();
        top.sort_by(|a, b| b.total_cmp(a));
        let estimate: f64 = top.iter().take(cfg.topk_for_dynamic).sum();
        let dynamic_k = (estimate.round() as usize).clamp(1, cfg.k_dynamic).min(k);
        for p in descending(affinity.row(q).iter().copied()).into_iter().take(dynamic_k) {
            match owner[p] {
                Some(prev) if affinity[[prev, p]] >= affinity[[q, p]] => {}
                _ => owner[p] = Some(q),
            }
        }
    }

    let mut counts = vec![0usize; g];
    for q in owner.iter().flatten() {
        counts[*q] += 1;
    }
    for q in 0..g {
        if counts[q] > 0 {
            continue;
        }
        let pick = descending(affinity.row(q).iter().copied())
            .into_iter()
            .find(|&p| owner[p].is_none_or(|holder| counts[holder] > 1));
        if let Some(p) = pick {
            if let Some(holder) = owner[p] {
                counts[holder] -= 1;
            }
            owner[p] = Some(q);
            counts[q] = 1;
        }
    }

    Ok(owner.iter().enumerate().filter_map(|(p, q)| q.map(|q| (p, q))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// Prediction assigned to each ground truth by the one-to-one branch.
    pub o2o_map: Vec<usize>,
    pub o2o_negatives: Vec<usize>,
    /// `(prediction, ground truth)` positives of the one-to-many branch.
    pub o2m_pos: Vec<(usize, usize)>,
    pub o2m_negatives: Vec<usize>,
}

/// Run both assigners. `ious` is `G × K` with `g = 0`.
pub fn assign_labels(
    scores_o2o: &[f64],
    scores_o2m: &[f64],
    ious: &Array2<f64>,
    cfg: &CostConfig,
) -> Result<AssignmentResult> {
    let k = ious.ncols();
    let o2o_cost = cost_matrix(scores_o2o, ious, cfg.beta)?;
    let o2m_cost = cost_matrix(scores_o2m, ious, cfg.beta)?;
    let o2o_map = hungarian_assign(&o2o_cost)?;
    let o2m_pos = simota_assign(&o2m_cost, ious, cfg)?;
    let complement = |taken: &[usize]| (0..k).filter(|p| !taken.contains(p)).collect::<Vec<_>>();
    let o2m_taken: Vec<usize> = o2m_pos.iter().map(|&(p, _)| p).collect();
    Ok(AssignmentResult {
        o2o_negatives: complement(&o2o_map),
        o2m_negatives: complement(&o2m_taken),
        o2o_map,
        o2m_pos,
    })
}
