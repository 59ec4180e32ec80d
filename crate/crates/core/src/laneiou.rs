//! Interval-based IoU between lanes with slope-adaptive widths.
//!
//! Each lane is widened into a band whose semi-width at a row grows with the
//! local slope, so that the band has constant perpendicular width `2·w^b`.
//! Per-row overlap, gap and hull lengths are summed over the union of the
//! two valid row ranges.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LaneGrid;

/// Default base semi-width in pixels at 800×320.
pub const DEFAULT_W_BASE: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GIoUParams {
    /// Gap coefficient: 0 gives a plain IoU in [0, 1], 1 adds the gap penalty.
    pub g: f64,
    pub w_base: f64,
}

impl GIoUParams {
    pub fn iou(w_base: f64) -> Self {
        Self { g: 0.0, w_base }
    }

    pub fn giou(w_base: f64) -> Self {
        Self { g: 1.0, w_base }
    }
}

impl Default for GIoUParams {
    fn default() -> Self {
        Self::iou(DEFAULT_W_BASE)
    }
}

/// Left/right band edges of a lane on its valid rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneBoundaries {
    pub start: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub semi_widths: Vec<f64>,
}

impl LaneBoundaries {
    pub fn end(&self) -> usize {
        self.start + self.left.len() - 1
    }

    fn get(&self, row: usize) -> Option<(f64, f64, f64)> {
        let k = row.checked_sub(self.start)?;
        Some((*self.left.get(k)?, self.right[k], self.semi_widths[k]))
    }
}

pub fn lane_boundaries(lane: &LaneGrid, w_base: f64) -> Result<LaneBoundaries> {
    if !(w_base > 0.0) {
        return Err(Error::InvalidInput(format!("w_base must be positive, got {w_base}")));
    }
    let xs = lane.xs();
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewRows { rows: n, needed: 2 });
    }
    let step = lane.frame().row_step();
    let mut semi_widths = Vec::with_capacity(n);
    for k in 0..n {
        // central differences inside, one-sided at the ends
        let (lo, hi) = match k {
            0 => (0, 1),
            k if k == n - 1 => (n - 2, n - 1),
            k => (k - 1, k + 1),
        };
        let dx = xs[hi] - xs[lo];
        let dy = (hi - lo) as f64 * step;
        semi_widths.push(dx.hypot(dy) / dy * w_base);
    }
    Ok(LaneBoundaries {
        start: lane.start(),
        left: xs.iter().zip(&semi_widths).map(|(x, w)| x - w).collect(),
        right: xs.iter().zip(&semi_widths).map(|(x, w)| x + w).collect(),
        semi_widths,
    })
}

/// IoU (g = 0) or GIoU (g = 1) between two precomputed boundary sets.
pub fn boundaries_iou(p: &LaneBoundaries, q: &LaneBoundaries, g: f64) -> f64 {
    let lo = p.start.min(q.start);
    let hi = p.end().max(q.end());
    let (mut over, mut gap, mut union) = (0.0, 0.0, 0.0);
    for row in lo..=hi {
        match (p.get(row), q.get(row)) {
            (Some((pl, pr, _)), Some((ql, qr, _))) => {
                over += (pr.min(qr) - pl.max(ql)).max(0.0);
                gap += (pl.max(ql) - pr.min(qr)).max(0.0);
                union += pr.max(qr) - pl.min(ql);
            }
            (Some((_, _, w)), None) | (None, Some((_, _, w))) => union += 2.0 * w,
            (None, None) => {}
        }
    }
    over / union - g * gap / union
}

pub fn glane_iou(p: &LaneGrid, q: &LaneGrid, params: &GIoUParams) -> Result<f64> {
    if p.frame() != q.frame() {
        return Err(Error::InvalidInput("lanes are in different frames".into()));
    }
    let bp = lane_boundaries(p, params.w_base)?;
    let bq = lane_boundaries(q, params.w_base)?;
    Ok(boundaries_iou(&bp, &bq, params.g))
}

/// `|set_b| × |set_a|` matrix with element `(q, p) = IoU(a_p, b_q)`.
pub fn iou_matrix(set_a: &[LaneGrid], set_b: &[LaneGrid], params: &GIoUParams) -> Result<Array2<f64>> {
    let ba = set_a.iter().map(|l| lane_boundaries(l, params.w_base)).collect::<Result<Vec<_>>>()?;
    let bb = set_b.iter().map(|l| lane_boundaries(l, params.w_base)).collect::<Result<Vec<_>>>()?;
    Ok(boundary_matrix(&ba, &bb, params.g))
}

pub(crate) fn boundary_matrix(ba: &[LaneBoundaries], bb: &[LaneBoundaries], g: f64) -> Array2<f64> {
    let cols = ba.len();
    let data: Vec<f64> = bb.par_iter().flat_map_iter(|q| ba.iter().map(move |p| boundaries_iou(p, q, g))).collect();
    Array2::from_shape_vec((bb.len(), cols), data).expect("matrix shape")
}
