"""Smoke test for the polarkit extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
Then run:                  python -m pytest python/smoke_test.py
"""

import math

import pytest

import polarkit as pk


def vertical(frame, x):
    return pk.LaneGrid(frame, 0, [x] * frame.n_rows)


def test_geometry():
    frame = pk.ImageFrame(800.0, 320.0, 4)
    assert frame.row_ys() == [80.0, 160.0, 240.0, 320.0]
    lane = pk.polyline_to_grid([(600.0, 80.0), (0.0, 320.0)], frame)
    assert lane.xs == pytest.approx([600.0, 400.0, 200.0, 0.0])

    local = pk.PolarAnchor(0.0, 10.0, (5.0, 0.0), local=True)
    assert local.with_global_pole((0.0, 0.0)).radius == pytest.approx(15.0)
    diag = pk.PolarAnchor(math.pi / 4, 0.0, (0.0, 0.0))
    assert diag.x_at(10.0) == pytest.approx(-10.0)


def test_iou_and_suppression():
    frame = pk.ImageFrame()
    a, b = vertical(frame, 400.0), vertical(frame, 415.0)
    assert pk.glane_iou(a, a) == 1.0
    assert pk.glane_iou(a, b) == pytest.approx(0.5 / 1.5)
    assert pk.iou_matrix([a], [a, b])[0][0] == 1.0

    anchor = pk.PolarAnchor(0.0, 0.0, (400.0, 192.0))
    cands = [
        pk.Candidate(anchor, a, 0.9, 0.9),
        pk.Candidate(anchor, a, 0.8, 0.1),
        pk.Candidate(anchor, vertical(frame, 100.0), 0.7, 0.8),
    ]
    assert pk.fast_nms_geometric(cands) == [0, 2]
    assert pk.sequential_nms(cands) == [0, 2]
    assert pk.dual_confidence_select(cands) == [0, 2]


def test_assignment_and_metrics():
    assert pk.hungarian([[1.0, 0.9], [0.9, 0.0]]) == [1, 0]
    pos = pk.simota([[0.9, 0.8, 0.1]], [[0.9, 0.8, 0.1]])
    assert {p for p, _ in pos} <= {0, 1, 2} and all(q == 0 for _, q in pos)

    scene = pk.gen_scene("sparse", seed=3)
    assert len(scene) >= 2
    report = pk.f1_metrics([scene], [scene])
    assert report["mf1"] == 1.0
    assert report["per_threshold"][0.5]["tp"] == len(scene)


def test_errors_raise_value_error():
    with pytest.raises(ValueError):
        pk.ImageFrame(0.0, 320.0, 36)
    with pytest.raises(ValueError):
        pk.hungarian([[1.0], [1.0]])
    with pytest.raises(ValueError):
        pk.gen_scene("busy")
