//! Matrix-form suppression.
//!
//! Two adjacency relations gate which candidate may suppress which:
//! a confidence relation (strict total order on scores, ties broken towards the
//! higher index) and a geometric relation (anchors close in angle and global
//! radius). Their product drives a sort-free single-pass Fast NMS. A classic
//! greedy NMS and the dual-threshold selection are provided alongside.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneGrid, PolarAnchor};
use crate::laneiou::{boundaries_iou, lane_boundaries, GIoUParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Anchor in the global polar frame.
    pub anchor: PolarAnchor,
    /// Regressed lane (anchor samples plus offsets).
    pub lane: LaneGrid,
    pub score_o2m: f64,
    pub score_o2o: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        for (i, c) in candidates.iter().enumerate() {
            let ok = |s: f64| (0.0..=1.0).contains(&s);
            if !ok(c.score_o2m) || c.score_o2o.is_some_and(|s| !ok(s)) {
                return Err(Error::InvalidInput(format!("candidate {i} has a score outside [0, 1]")));
            }
        }
        Ok(Self { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.score_o2m).collect()
    }

    pub fn anchors(&self) -> Vec<PolarAnchor> {
        self.candidates.iter().map(|c| c.anchor).collect()
    }

    pub fn lanes(&self) -> Vec<LaneGrid> {
        self.candidates.iter().map(|c| c.lane.clone()).collect()
    }

    pub fn o2o_scores(&self) -> Result<Vec<f64>> {
        self.candidates
            .iter()
            .enumerate()
            .map(|(index, c)| c.score_o2o.ok_or(Error::MissingO2OScores { index }))
            .collect()
    }

    pub fn set_o2o_scores(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::Shape(format!("{} scores for {} candidates", scores.len(), self.len())));
        }
        for (c, &s) in self.candidates.iter_mut().zip(scores) {
            c.score_o2o = Some(s);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionThresholds {
    /// Angle gate of the geometric relation, radians.
    pub tau_theta: f64,
    /// Global-radius gate of the geometric relation, pixels.
    pub lambda_g: f64,
    /// Distance at or below which a lane suppresses another.
    pub tau_d: f64,
    pub tau_o2m: f64,
    pub tau_o2o: f64,
}

impl Default for SuppressionThresholds {
    fn default() -> Self {
        Self { tau_theta: 0.15, lambda_g: 40.0, tau_d: 0.5, tau_o2m: 0.48, tau_o2o: 0.46 }
    }
}

impl SuppressionThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_theta > 0.0 && self.lambda_g > 0.0 && self.tau_d > 0.0) {
            return Err(Error::InvalidInput("suppression gates must be positive".into()));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.tau_o2m) || !unit(self.tau_o2o) {
            return Err(Error::InvalidInput("confidence thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Distance between two lanes; smaller is closer.
pub trait LaneDistance: Sync {
    fn distance(&self, a: &LaneGrid, b: &LaneGrid) -> Result<f64>;

    /// Symmetric `K × K` distance matrix.
    fn pairwise(&self, lanes: &[LaneGrid]) -> Result<Array2<f64>> {
        let k = lanes.len();
        let data = (0..k * k)
            .into_par_iter()
            .map(|idx| self.distance(&lanes[idx / k], &lanes[idx % k]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((k, k), data).expect("square"))
    }
}

/// `1 − IoU(g = 0)` with a configurable band semi-width. Wider bands make
/// nearby lanes overlap more, so a larger `w_base` suppresses more aggressively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouDistance {
    pub w_base: f64,
}

impl LaneDistance for IouDistance {
    fn distance(&self, a: &LaneGrid, b: &LaneGrid) -> Result<f64> {
        Ok(1.0 - crate::laneiou::glane_iou(a, b, &GIoUParams::iou(self.w_base))?)
    }

    fn pairwise(&self, lanes: &[LaneGrid]) -> Result<Array2<f64>> {
        let bounds = lanes.iter().map(|l| lane_boundaries(l, self.w_base)).collect::<Result<Vec<_>>>()?;
        let k = lanes.len();
        let data: Vec<f64> = (0..k)
            .into_par_iter()
            .flat_map_iter(|i| {
                let bounds = &bounds;
                (0..k).map(move |j| 1.0 - boundaries_iou(&bounds[i], &bounds[j], 0.0))
            })
            .collect();
        Ok(Array2::from_shape_vec((k, k), data).expect("square"))
    }
}

/// `A^C[i][j] = 1` iff candidate `i` outranks `j`: higher score, or equal score
/// and larger index.
pub fn confidence_adjacency(scores: &[f64]) -> Array2<bool> {
    let k = scores.len();
    let data: Vec<bool> = (0..k)
        .into_par_iter()
        .flat_map_iter(|i| (0..k).map(move |j| scores[i] > scores[j] || (scores[i] == scores[j] && i > j)))
        .collect();
    Array2::from_shape_vec((k, k), data).expect("square")
}

/// `A^G[i][j] = 1` iff `|Δθ| < τ_θ` and `|Δr^g| < λ_g` (both strict).
pub fn geometric_adjacency(anchors: &[PolarAnchor], tau_theta: f64, lambda_g: f64) -> Array2<bool> {
    let k = anchors.len();
    let data: Vec<bool> = (0..k)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..k).map(move |j| {
                (anchors[i].theta - anchors[j].theta).abs() < tau_theta
                    && (anchors[i].radius - anchors[j].radius).abs() < lambda_g
            })
        })
        .collect();
    Array2::from_shape_vec((k, k), data).expect("square")
}

/// `A = A^C ⊙ A^G`.
pub fn suppression_adjacency(
    scores: &[f64],
    anchors: &[PolarAnchor],
    thresholds: &SuppressionThresholds,
) -> Result<Array2<bool>> {
    if scores.len() != anchors.len() {
        return Err(Error::Shape(format!("{} scores for {} anchors", scores.len(), anchors.len())));
    }
    let mut a = confidence_adjacency(scores);
    let g = geometric_adjacency(anchors, thresholds.tau_theta, thresholds.lambda_g);
    a.zip_mut_with(&g, |x, &y| *x = *x && y);
    Ok(a)
}

fn inverse(d: f64) -> f64 {
    if d == 0.0 {
        f64::INFINITY
    } else {
        d.recip()
    }
}

/// Matrix core of the sort-free Fast NMS.
///
/// Column `j` survives iff the largest inverse distance over its in-edges is
/// below `1/τ_d`; a column without in-edges survives. Survivors are then
/// filtered by `s > τ_o2m`. Returns ascending indices.
pub fn fast_nms_select(
    scores: &[f64],
    adjacency: &Array2<bool>,
    distances: &Array2<f64>,
    tau_d: f64,
    tau_o2m: f64,
) -> Result<Vec<usize>> {
    let k = scores.len();
    if adjacency.dim() != (k, k) || distances.dim() != (k, k) {
        return Err(Error::Shape(format!(
            "adjacency {:?} and distances {:?} for {k} candidates",
            adjacency.dim(),
            distances.dim()
        )));
    }
    let limit = inverse(tau_d);
    Ok((0..k)
        .filter(|&j| {
            let strongest =
                (0..k).filter(|&i| adjacency[[i, j]]).map(|i| inverse(distances[[i, j]])).fold(0.0, f64::max);
            strongest < limit && scores[j] > tau_o2m
        })
        .collect())
}

pub fn fast_nms_geometric(
    candidates: &CandidateSet,
    thresholds: &SuppressionThresholds,
    distance: &dyn LaneDistance,
) -> Result<Vec<usize>> {
    let scores = candidates.scores();
    let adjacency = suppression_adjacency(&scores, &candidates.anchors(), thresholds)?;
    let distances = distance.pairwise(&candidates.lanes())?;
    fast_nms_select(&scores, &adjacency, &distances, thresholds.tau_d, thresholds.tau_o2m)
}

/// Greedy NMS on a precomputed distance matrix. Candidates at or below
/// `τ_o2m` are dropped first; the best remaining candidate then removes every
/// remaining one strictly closer than `τ_d`. Returns ascending indices.
pub fn sequential_nms_select(scores: &[f64], distances: &Array2<f64>, tau_d: f64, tau_o2m: f64) -> Result<Vec<usize>> {
    let k = scores.len();
    if distances.dim() != (k, k) {
        return Err(Error::Shape(format!("distances {:?} for {k} candidates", distances.dim())));
    }
    let mut order: Vec<usize> = (0..k).filter(|&i| scores[i] > tau_o2m).collect();
    // same ranking as the confidence relation: score desc, then index desc
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    let mut removed = vec![false; k];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if removed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !removed[j] && distances[[i, j]] < tau_d {
                removed[j] = true;
            }
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn sequential_nms(
    candidates: &CandidateSet,
    distance: &dyn LaneDistance,
    tau_d: f64,
    tau_o2m: f64,
) -> Result<Vec<usize>> {
    let distances = distance.pairwise(&candidates.lanes())?;
    sequential_nms_select(&candidates.scores(), &distances, tau_d, tau_o2m)
}

/// `{i : s̃_i > τ_o2o} ∩ {i : s_i > τ_o2m}`.
pub fn dual_confidence_select(candidates: &CandidateSet, tau_o2o: f64, tau_o2m: f64) -> Result<Vec<usize>> {
    let o2o = candidates.o2o_scores()?;
    Ok(candidates
        .candidates
        .iter()
        .zip(o2o)
        .enumerate()
        .filter(|(_, (c, s_tilde))| *s_tilde > tau_o2o && c.score_o2m > tau_o2m)
        .map(|(i, _)| i)
        .collect())
}
