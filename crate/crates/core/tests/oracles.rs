//! Worked examples checked against hand derivations and independent oracles.

mod common;

use std::f64::consts::{FRAC_PI_4, SQRT_2};

use ndarray::{arr2, Array2, Array3};
use polar_kit::assignment::{cost_matrix, hungarian_assign, simota_assign, CostConfig};
use polar_kit::eval::{match_lanes, ThresholdMetrics};
use polar_kit::geometry::{
    local_to_global_radius, lpm_labels, polyline_to_grid, sample_anchor_xs, ImageFrame, LaneGrid, LpmConfig, Point,
    PolarAnchor, Pole,
};
use polar_kit::laneiou::{glane_iou, iou_matrix, lane_boundaries, GIoUParams};
use polar_kit::losses::{
    aux_loss, giou_loss, gpm_losses, lpm_loss, rank_loss, segment_params, LossComponents, LossWeights, PolePrediction,
    Reduction,
};
use polar_kit::o2o_head::{masked_max_pool, HeadDims, HeadInput, HeadWeights};
use polar_kit::suppression::{
    confidence_adjacency, dual_confidence_select, fast_nms_select, geometric_adjacency, sequential_nms_select,
    Candidate, CandidateSet,
};

fn vertical(frame: ImageFrame, x: f64) -> LaneGrid {
    LaneGrid::new(frame, 0, vec![x; frame.n_rows]).unwrap()
}

#[test]
fn diagonal_polyline_resamples_linearly() {
    let f = ImageFrame::new(800.0, 320.0, 4).unwrap();
    let lane = polyline_to_grid(&[Point::new(0.0, 320.0), Point::new(800.0, 0.0)], &f).unwrap();
    assert_eq!(lane.start(), 0);
    assert_eq!(lane.xs(), &[600.0, 400.0, 200.0, 0.0]);
}

#[test]
fn local_to_global_examples() {
    let local = PolarAnchor::new(0.0, 5.0, Pole::local(Point::new(10.0, 0.0)));
    let global = local_to_global_radius(&local, &Pole::global(Point::new(0.0, 0.0)));
    assert_eq!(global.radius, 15.0);

    // signed point-to-line distance: two points on the line, cross product
    let mut rng = common::rng(1);
    use rand::Rng;
    for _ in 0..1000 {
        let theta = rng.random_range(-1.5..1.5);
        let cl = Point::new(rng.random_range(0.0..800.0), rng.random_range(0.0..320.0));
        let cg = Point::new(rng.random_range(0.0..800.0), rng.random_range(0.0..320.0));
        let rl = rng.random_range(-300.0..300.0);
        let g = local_to_global_radius(&PolarAnchor::new(theta, rl, Pole::local(cl)), &Pole::global(cg));
        let (n, t) = ((theta.cos(), theta.sin()), (-theta.sin(), theta.cos()));
        let a = (cl.x + rl * n.0, cl.y + rl * n.1);
        let b = (a.0 + 50.0 * t.0, a.1 + 50.0 * t.1);
        let cross = (b.0 - a.0) * (cg.y - a.1) - (b.1 - a.1) * (cg.x - a.0);
        let dist = cross.abs() / 50.0;
        let side = n.0 * (a.0 - cg.x) + n.1 * (a.1 - cg.y);
        assert!((g.radius - side.signum() * dist).abs() < 1e-9);
    }
}

#[test]
fn sampling_at_forty_five_degrees() {
    // frame whose Cartesian heights are 1, 2, 3, 4
    let f = ImageFrame::new(10.0, 4.0, 4).unwrap();
    let anchor = PolarAnchor::new(FRAC_PI_4, 0.0, Pole::global(Point::new(0.0, 0.0)));
    let xs = sample_anchor_xs(&anchor, &f).unwrap();
    for (row, x) in xs.iter().enumerate() {
        let y_cart = f.height - f.row_y(row);
        assert!((x + y_cart).abs() < 1e-12);
    }
}

#[test]
fn pole_targets_for_a_vertical_lane() {
    let f = ImageFrame::new(800.0, 320.0, 36).unwrap();
    let lane = vertical(f, 100.0);
    let cfg = LpmConfig { grid_h: 1, grid_w: 2, lambda_l: 10.0, top_k: 1 };
    let poles = [Pole::local(Point::new(90.0, 150.0)), Pole::local(Point::new(95.0, 150.0))];
    let labels = lpm_labels(&[lane], &poles, &cfg).unwrap();
    assert_eq!(labels.r_hat, vec![10.0, 5.0]);
    assert_eq!(labels.theta_hat, vec![0.0, 0.0]);
    // r̂ = λ exactly is not positive
    assert_eq!(labels.s_hat, vec![0, 1]);
}

#[test]
fn semi_widths_follow_slope() {
    let f = ImageFrame::new(800.0, 320.0, 8).unwrap();
    let step = f.row_step();
    let slanted = LaneGrid::new(f, 0, (0..8).map(|i| 100.0 + step * i as f64).collect()).unwrap();
    for w in lane_boundaries(&slanted, 15.0).unwrap().semi_widths {
        assert!((w - SQRT_2 * 15.0).abs() < 1e-12);
    }
    for w in lane_boundaries(&vertical(f, 50.0), 15.0).unwrap().semi_widths {
        assert_eq!(w, 15.0);
    }
}

#[test]
fn vertical_lane_iou_examples() {
    let f = common::frame();
    let p = GIoUParams::iou(15.0);
    let (a, b, c) = (vertical(f, 100.0), vertical(f, 400.0), vertical(f, 110.0));
    assert_eq!(glane_iou(&a, &b, &p).unwrap(), 0.0);
    assert_eq!(glane_iou(&a, &c, &p).unwrap(), 0.5);
    let m = iou_matrix(&[a.clone(), c.clone()], &[a, c], &p).unwrap();
    assert_eq!(m, arr2(&[[1.0, 0.5], [0.5, 1.0]]));
}

#[test]
fn iou_matches_interval_oracle() {
    let f = common::frame();
    let mut rng = common::rng(7);
    for _ in 0..300 {
        let a = common::random_lane(&mut rng, &f, 3);
        let b = common::nearby_lane(&mut rng, &a);
        let got = glane_iou(&a, &b, &GIoUParams::iou(15.0)).unwrap();
        assert!((got - common::iou_oracle(&a, &b, 15.0)).abs() < 1e-9);
    }
}

#[test]
fn adjacency_examples() {
    assert_eq!(confidence_adjacency(&[0.9, 0.5]), arr2(&[[false, true], [false, false]]));
    assert_eq!(confidence_adjacency(&[0.5, 0.5]), arr2(&[[false, false], [true, false]]));
    let pole = Pole::global(Point::new(400.0, 192.0));
    let a = PolarAnchor::new(0.0, 20.0, pole);
    let at_gate = PolarAnchor::new(0.25, 20.0, pole);
    let near_r = PolarAnchor::new(0.0, 30.0, pole);
    let g = geometric_adjacency(&[a, at_gate, near_r], 0.25, 20.0);
    assert!(!g[[0, 1]] && g[[0, 2]] && g[[1, 1]]);
}

#[test]
fn suppression_traces() {
    // chain a–b–c: d(a,b) and d(b,c) below the threshold, d(a,c) above
    let scores = [0.9, 0.8, 0.7];
    let d = arr2(&[[0.0, 0.3, 0.8], [0.3, 0.0, 0.3], [0.8, 0.3, 0.0]]);
    let ones = Array2::from_elem((3, 3), true);
    let a = &confidence_adjacency(&scores) & &ones;
    assert_eq!(sequential_nms_select(&scores, &d, 0.5, 0.48).unwrap(), vec![0, 2]);
    assert_eq!(fast_nms_select(&scores, &a, &d, 0.5, 0.48).unwrap(), vec![0]);

    // duplicates: suppressed with the prior on, both kept when the angle gate separates them
    let scores = [0.9, 0.8];
    let d = arr2(&[[0.0, 0.1], [0.1, 0.0]]);
    let on = confidence_adjacency(&scores);
    assert_eq!(fast_nms_select(&scores, &on, &d, 0.5, 0.48).unwrap(), vec![0]);
    let off = Array2::from_elem((2, 2), false);
    assert_eq!(fast_nms_select(&scores, &off, &d, 0.5, 0.48).unwrap(), vec![0, 1]);
}

#[test]
fn dual_selection_examples() {
    let f = common::frame();
    let pole = f.default_global_pole();
    let cand = |s: f64, t: f64| Candidate {
        anchor: PolarAnchor::new(0.0, 0.0, pole),
        lane: vertical(f, 100.0),
        score_o2m: s,
        score_o2o: Some(t),
    };
    let set = CandidateSet::new(vec![cand(0.9, 0.9), cand(0.9, 0.1), cand(0.9, 0.46)]).unwrap();
    assert_eq!(dual_confidence_select(&set, 0.46, 0.48).unwrap(), vec![0]);
}

#[test]
fn head_pools_zeros_for_the_top_duplicate() {
    let dims = HeadDims { n_points: 36, channels: 2, d_r: 4, d_n: 5, hidden: 6 };
    let weights = HeadWeights::seeded(dims, 3).unwrap();
    let f = common::frame();
    let pole = f.default_global_pole();
    let anchor = PolarAnchor::new(0.05, 30.0, pole);
    let feats = || {
        let m = Array2::from_shape_fn((36, 2), |(n, c)| (n as f64 * 0.1 + c as f64).sin());
        [m.clone(), m.clone(), m]
    };
    let input =
        HeadInput { level_feats: vec![feats(), feats()], scores: vec![0.9, 0.6], anchors: vec![anchor, anchor] };
    let out = polar_kit::o2o_head::head_forward(&input, &f, &Default::default(), &weights).unwrap();
    assert!(out.adjacency[[0, 1]] && !out.adjacency[[1, 0]]);
    assert!(out.pooled.row(0).iter().all(|&v| v == 0.0));
    assert!(out.pooled.row(1).iter().any(|&v| v != 0.0));

    // masked max over an empty column is zero, otherwise the max of admitted rows
    let edge = Array3::from_shape_fn((2, 2, 1), |(i, j, _)| (i * 2 + j) as f64 + 1.0);
    let pooled = masked_max_pool(&edge, &arr2(&[[false, true], [false, false]])).unwrap();
    assert_eq!(pooled, arr2(&[[0.0], [2.0]]));
}

#[test]
fn assignment_examples() {
    let c = cost_matrix(&[0.5], &arr2(&[[0.8]]), 6.0).unwrap();
    assert!((c[[0, 0]] - 0.131072).abs() < 1e-12);

    let mut rng = common::rng(5);
    use rand::Rng;
    for _ in 0..200 {
        let g = rng.random_range(1..=5);
        let k = rng.random_range(g..=6);
        let a = Array2::from_shape_fn((g, k), |_| rng.random_range(0.0..1.0));
        let map = hungarian_assign(&a).unwrap();
        let total: f64 = map.iter().enumerate().map(|(q, &p)| a[[q, p]]).sum();
        assert!((total - common::brute_force_assignment(&a)).abs() < 1e-12);
    }

    // one gt, ten strong candidates: four positives
    let ious = Array2::from_elem((1, 10), 0.95);
    let aff = cost_matrix(&[0.9; 10], &ious, 6.0).unwrap();
    assert_eq!(simota_assign(&aff, &ious, &CostConfig::default()).unwrap().len(), 4);

    // contested prediction goes to the higher-affinity gt
    let ious = arr2(&[[0.9, 0.1, 0.0], [0.95, 0.0, 0.1]]);
    let aff = cost_matrix(&[1.0, 1.0, 1.0], &ious, 6.0).unwrap();
    let pairs = simota_assign(&aff, &ious, &CostConfig { k_dynamic: 1, ..CostConfig::default() }).unwrap();
    assert!(pairs.contains(&(0, 1)));
    assert!(!pairs.contains(&(0, 0)));
}

#[test]
fn loss_examples() {
    let labels = polar_kit::geometry::PoleGridLabels {
        grid_h: 1,
        grid_w: 1,
        r_hat: vec![2.0],
        theta_hat: vec![0.25],
        s_hat: vec![1],
    };
    let pred = [PolePrediction { theta: 0.75, radius: 2.0, score: 1.0 }];
    assert_eq!(lpm_loss(&pred, &labels, 10.0, Reduction::Mean).unwrap().reg, 0.125);
    assert_eq!(rank_loss(&[0.5], &[0.5], 0.2), 0.2);

    let f = common::frame();
    let gt = vertical(f, 400.0);
    assert!(giou_loss(&vertical(f, 100.0), &gt, 15.0).unwrap() > 1.0);
    let sweep: Vec<f64> = [100.0, 200.0, 300.0, 380.0, 395.0, 400.0]
        .iter()
        .map(|&x| giou_loss(&vertical(f, x), &gt, 15.0).unwrap())
        .collect();
    assert!(sweep.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(*sweep.last().unwrap(), 0.0);

    let w = LossWeights { w_cls_o2m: 0.0, w_cls_o2o: 0.0, w_rank: 0.7, w_giou_o2m: 0.0, w_end_o2m: 0.0, w_aux: 0.0 };
    let c = LossComponents { rank: 1.0, ..Default::default() };
    assert_eq!(gpm_losses(&c, &w).cls_g, 0.7);
}

#[test]
fn arc_segments_match_analytic_chords() {
    let f = ImageFrame::new(800.0, 320.0, 33).unwrap();
    // quarter circle of radius 400 centred at image (100, 320)
    let xs: Vec<f64> = (0..f.n_rows)
        .map(|row| {
            let dy = f.row_y(row) - 320.0;
            100.0 + (400.0f64.powi(2) - dy * dy).sqrt()
        })
        .collect();
    let lane = LaneGrid::new(f, 0, xs).unwrap();
    let pole = f.default_global_pole();
    let segs = segment_params(&lane, 2, &pole).unwrap();
    assert_eq!(segs.len(), 2);
    let pts = lane.cartesian_points();
    for (b, seg) in segs.iter().enumerate() {
        let (a, c) = (pts[b * 16], pts[(b + 1) * 16]);
        // normal of the chord with positive x component
        let (dx, dy) = (c.x - a.x, c.y - a.y);
        let len = dx.hypot(dy);
        let (mut nx, mut ny) = (dy / len, -dx / len);
        if nx < 0.0 {
            nx = -nx;
            ny = -ny;
        }
        assert!((seg.theta - ny.atan2(nx)).abs() < 1e-12);
        let r = nx * (a.x - pole.position.x) + ny * (a.y - pole.position.y);
        assert!((seg.radius - r).abs() < 1e-9);
    }
    assert!((segs[0].theta - segs[1].theta).abs() > 0.1);

    // one segment off by 0.5 rad contributes 0.125 / M
    let offsets = [(0.5, 0.0), (0.0, 0.0)];
    let got = aux_loss(&segs[0], &offsets, &[segs[0], segs[0]], 320.0).unwrap();
    assert!((got - 0.125 / 2.0).abs() < 1e-12);
}

#[test]
fn metric_examples() {
    let t = ThresholdMetrics::from_counts(0.5, 8, 2, 2);
    assert_eq!(t.f1, 0.8);
    let f = common::frame();
    let m = match_lanes(&[vertical(f, 98.0), vertical(f, 103.0)], &[vertical(f, 100.0)], 0.5, 15.0).unwrap();
    assert_eq!((m.tp.len(), m.fp.len(), m.fn_.len()), (1, 1, 0));
}
