//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use polar_kit::geometry::{ImageFrame, LaneGrid, PoleGridLabels};
use polar_kit::losses::PolePrediction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn frame() -> ImageFrame {
    ImageFrame::new(800.0, 320.0, 36).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random smooth lane with at least `min_rows` valid rows.
pub fn random_lane(rng: &mut ChaCha8Rng, frame: &ImageFrame, min_rows: usize) -> LaneGrid {
    let n = frame.n_rows;
    let len = rng.random_range(min_rows..=n);
    let start = rng.random_range(0..=n - len);
    let a = rng.random_range(100.0..700.0);
    let b = rng.random_range(-12.0..12.0);
    let c = rng.random_range(-0.3..0.3);
    let xs = (0..len)
        .map(|k| {
            let k = k as f64;
            a + b * k + c * k * k + rng.random_range(-1.0..1.0)
        })
        .collect();
    LaneGrid::new(*frame, start, xs).unwrap()
}

/// A lane near `base`: same shape, shifted sideways, valid range trimmed at random.
pub fn nearby_lane(rng: &mut ChaCha8Rng, base: &LaneGrid) -> LaneGrid {
    let shift = rng.random_range(-40.0..40.0);
    let len = base.len();
    let cut_top = rng.random_range(0..=len / 3);
    let cut_bottom = rng.random_range(0..=len / 3);
    let keep = len - cut_top - cut_bottom;
    let keep = keep.max(2);
    let xs = base.xs()[cut_top..cut_top + keep].iter().map(|x| x + shift + rng.random_range(-2.0..2.0)).collect();
    LaneGrid::new(*base.frame(), base.start() + cut_top, xs).unwrap()
}

/// Per-row interval oracle for the g = 0 lane IoU, written from the
/// definitions: band half-width from the local slope (neighbour rows on both
/// sides where they exist), then intersection and hull lengths row by row.
pub fn iou_oracle(p: &LaneGrid, q: &LaneGrid, w_base: f64) -> f64 {
    let frame = p.frame();
    let band = |lane: &LaneGrid, row: usize| -> Option<(f64, f64)> {
        let x = lane.x(row)?;
        let lo = if row > lane.start() { row - 1 } else { row };
        let hi = if row < lane.end() { row + 1 } else { row };
        let dx = lane.x(hi).unwrap() - lane.x(lo).unwrap();
        let dy = frame.row_y(hi) - frame.row_y(lo);
        let half = (dx * dx + dy * dy).sqrt() / dy * w_base;
        Some((x - half, x + half))
    };
    let (mut inter, mut hull) = (0.0, 0.0);
    for row in 0..frame.n_rows {
        match (band(p, row), band(q, row)) {
            (Some(a), Some(b)) => {
                let left = if a.0 > b.0 { a.0 } else { b.0 };
                let right = if a.1 < b.1 { a.1 } else { b.1 };
                if right > left {
                    inter += right - left;
                }
                let outer_l = if a.0 < b.0 { a.0 } else { b.0 };
                let outer_r = if a.1 > b.1 { a.1 } else { b.1 };
                hull += outer_r - outer_l;
            }
            (Some(a), None) | (None, Some(a)) => hull += a.1 - a.0,
            (None, None) => {}
        }
    }
    inter / hull
}

/// Classic matrix Fast NMS: rank by score (ties to the larger index), then a
/// candidate survives iff every higher-ranked candidate is farther than `tau_d`.
pub fn reference_fast_nms(scores: &[f64], distances: &Array2<f64>, tau_d: f64, tau_o2m: f64) -> Vec<usize> {
    let k = scores.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(b.cmp(&a)));
    let mut keep: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|&(pos, &j)| order[..pos].iter().all(|&i| distances[[i, j]] > tau_d))
        .map(|(_, &j)| j)
        .filter(|&j| scores[j] > tau_o2m)
        .collect();
    keep.sort_unstable();
    keep
}

/// Maximum total affinity over all injective row → column maps by enumeration.
pub fn brute_force_assignment(affinity: &Array2<f64>) -> f64 {
    fn go(a: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == a.nrows() {
            *best = best.max(acc);
            return;
        }
        for c in 0..a.ncols() {
            if !used[c] {
                used[c] = true;
                go(a, row + 1, used, acc + a[[row, c]], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(affinity, 0, &mut vec![false; affinity.ncols()], 0.0, &mut best);
    best
}

/// Direct left-to-right sums of the first-stage loss (mean reduction).
#[allow(clippy::needless_range_loop)]
pub fn lpm_loss_oracle(preds: &[PolePrediction], labels: &PoleGridLabels, lambda_l: f64) -> (f64, f64) {
    let n = preds.len();
    let mut cls = 0.0;
    for (p, &s) in preds.iter().zip(&labels.s_hat) {
        let prob = p.score.clamp(0.0, 1.0);
        let y = s as f64;
        let pos = if y > 0.0 { -y * prob.max(1e-7).ln() } else { 0.0 };
        let neg = if y < 1.0 { -(1.0 - y) * (1.0 - prob).max(1e-7).ln() } else { 0.0 };
        cls += pos + neg;
    }
    let sl1 = |x: f64| {
        if x.abs() < 1.0 {
            0.5 * x * x
        } else {
            x.abs() - 0.5
        }
    };
    let (mut reg, mut count) = (0.0, 0);
    for j in 0..n {
        if labels.r_hat[j] < lambda_l {
            reg += sl1(preds[j].theta - labels.theta_hat[j]) + sl1(preds[j].radius - labels.r_hat[j]);
            count += 1;
        }
    }
    (cls / n as f64, if count == 0 { 0.0 } else { reg / count as f64 })
}
