import numpy as np
import pytest

from models.geometry import Box, iou
from models.label_assignment import NEGATIVE, assign_atss
from optimizers.focal_loss import LossParams, vfl
from utils.reference_oracles import (
    assignments_match, finite_diff, naive_assign, random_case,
    rasterized_iou)

HAND_ANCHORS = [[10, 10, 50, 50], [20, 20, 60, 60], [30, 30, 70, 70]]


def test_rasterized_iou_examples():
    assert rasterized_iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == 1 / 7
    assert rasterized_iou(Box(0, 0, 4, 4), Box(0, 0, 4, 4)) == 1.0
    assert rasterized_iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0
    assert rasterized_iou([0, 0, 2, 2], [2, 0, 4, 2]) == 0.0


def test_rasterized_iou_rejects_fractional_and_large_corners():
    with pytest.raises(ValueError):
        rasterized_iou(Box(0, 0, 2.5, 2), Box(0, 0, 2, 2))
    with pytest.raises(ValueError):
        rasterized_iou(Box(0, 0, 300, 2), Box(0, 0, 2, 2))


def test_iou_agrees_with_rasterization():
    rng = np.random.default_rng(0)
    for _ in range(10000):
        xs = np.sort(rng.choice(257, size=2, replace=False))
        ys = np.sort(rng.choice(257, size=2, replace=False))
        us = np.sort(rng.choice(257, size=2, replace=False))
        vs = np.sort(rng.choice(257, size=2, replace=False))
        a = Box(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1]))
        b = Box(float(us[0]), float(vs[0]), float(us[1]), float(vs[1]))

        assert abs(iou(a, b) - rasterized_iou(a, b)) <= 1e-12


def test_naive_hand_example(make_anchor_set):
    anchors = make_anchor_set(HAND_ANCHORS)

    out = naive_assign(anchors, [[10, 10, 50, 50]], k=9)

    assert out.kind == 'atss'
    assert list(out.labels) == [0, NEGATIVE, NEGATIVE]
    assert list(out.num_pos) == [1]
    assert out.stats[0].threshold == pytest.approx(0.9524, abs=1e-4)


def test_naive_dynamic_without_predictions_doubles_the_threshold(
        make_anchor_set):
    anchors = make_anchor_set(HAND_ANCHORS)

    static = naive_assign(anchors, [[10, 10, 50, 50]], k=9)
    dynamic = naive_assign(anchors, [[10, 10, 50, 50]], k=9, mode='dynamic')

    assert dynamic.kind == 'dynamic_atss'
    assert np.array_equal(dynamic.labels, static.labels)
    assert dynamic.stats[0].threshold == 2 * static.stats[0].threshold


def test_naive_rejects_unknown_mode(make_anchor_set):
    with pytest.raises(ValueError):
        naive_assign(make_anchor_set([[0, 0, 10, 10]]), [], k=1, mode='iou')


def test_assignments_match_detects_differences():
    rng = np.random.default_rng(5)
    anchors, gts, _ = random_case(rng, max_gts=4)
    gts = np.vstack([gts, [[8.0, 8.0, 40.0, 40.0]]])

    fast = assign_atss(anchors, gts, 9)
    slow = naive_assign(anchors, gts, 9)
    assert assignments_match(fast, slow)

    tampered = naive_assign(anchors, gts, 9)
    tampered.labels[0] = 0 if tampered.labels[0] == NEGATIVE else NEGATIVE
    assert not assignments_match(fast, tampered)


def test_random_case_shapes():
    rng = np.random.default_rng(1)
    for _ in range(20):
        anchors, gts, predicted_boxes = random_case(rng)

        assert predicted_boxes.shape == anchors.boxes.shape
        assert gts.shape[1] == 4 and len(gts) <= 10
        assert (predicted_boxes[:, 2] > predicted_boxes[:, 0]).all()
        assert (predicted_boxes[:, 3] > predicted_boxes[:, 1]).all()
        assert (gts[:, 2] > gts[:, 0]).all()


def test_random_case_sizes_reach_large_anchor_sets():
    rng = np.random.default_rng(0)
    sizes = [len(random_case(rng)[0]) for _ in range(50)]

    assert max(sizes) > 320
    assert max(sizes) <= 500
    assert min(sizes) >= 16 + 4


def test_finite_diff_domain():
    params = LossParams()

    assert finite_diff(vfl, 0.5, 1.0, params) == pytest.approx(-2.0, rel=1e-6)
    with pytest.raises(ValueError):
        finite_diff(vfl, 0.99999, 1.0, params)
