import numpy as np
import pytest
import statistics

from dataclasses import replace
from hypothesis import given, settings, strategies as st

from models.anchor_generation import AnchorConfig, generate_anchors
from models.label_assignment import (
    IGNORE, NEGATIVE, AssignerConfig, Assignment, InvariantViolation, assign,
    assign_atss, assign_dynamic_atss, assign_fixed, candidate_stats,
    check_assignment, schedule_weight, select_candidates,
    select_positive_candidates)
from utils.config_utils import ConfigError
from utils.reference_oracles import (
    assignments_match, naive_assign, random_case)

AIOUS = [0.6, 0.55, 0.5, 0.45, 0.4]
PIOUS = [0.5, 0.95, 0.5, 0.5, 0.45]


def test_candidate_stats():
    assert candidate_stats([0.2, 0.4]) == pytest.approx((0.3, 0.141421356))
    assert candidate_stats([0.5, 0.5, 0.5]) == (0.5, 0.0)
    assert candidate_stats([0.7]) == (0.7, 0.0)
    with pytest.raises(ValueError):
        candidate_stats([])


def test_threshold_on_anchor_ious_only():
    selected, stats = select_positive_candidates(AIOUS, None, 0.0, 1.0)

    assert stats.threshold == pytest.approx(0.579057, abs=1e-6)
    assert selected.tolist() == [0]


def test_predicted_ious_move_the_positive():
    selected, stats = select_positive_candidates(AIOUS, PIOUS, 1.0, 1.0)

    np.testing.assert_allclose(stats.cious, [1.1, 1.5, 1.0, 0.95, 0.85])
    assert stats.threshold == pytest.approx(1.367023, abs=1e-6)
    assert selected.tolist() == [1]


def test_combined_statistics_are_summed():
    _, stats = select_positive_candidates(AIOUS, PIOUS, 0.5, 1.5)

    assert stats.mean_c == 0.5 * stats.mean_p + 1.5 * stats.mean_a
    assert stats.std_c == 0.5 * stats.std_p + 1.5 * stats.std_a
    assert stats.threshold == stats.mean_c + stats.std_c


def test_identical_predictions_keep_the_selection():
    static, _ = select_positive_candidates(AIOUS, None, 0.0, 1.0)
    dynamic, _ = select_positive_candidates(AIOUS, AIOUS, 1.0, 1.0)

    assert static.tolist() == dynamic.tolist()


def test_select_positive_candidates_errors():
    with pytest.raises(ValueError):
        select_positive_candidates(AIOUS, PIOUS[:3], 1.0, 1.0)
    with pytest.raises(ValueError):
        select_positive_candidates(AIOUS, None, 1.0, 1.0)
    with pytest.raises(ValueError):
        select_positive_candidates([], None, 0.0, 1.0)


@settings(max_examples=200)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=3, max_size=20),
    st.data(),
    st.floats(0.01, 1e3),
)
def test_scaling_both_weights_keeps_the_selection(aious, data, scale):
    pious = data.draw(st.lists(
        st.floats(0.0, 1.0), min_size=len(aious), max_size=len(aious)))
    w_p = data.draw(st.floats(0.0, 2.0))
    w_a = data.draw(st.floats(0.1, 2.0))

    base, base_stats = select_positive_candidates(aious, pious, w_p, w_a)
    scaled, _ = select_positive_candidates(
        aious, pious, w_p * scale, w_a * scale)

    # rounding can only matter within a few ulps of the threshold
    margins = np.abs(base_stats.cious - base_stats.threshold)
    if margins.min() > 1e-9 * scale:
        assert base.tolist() == scaled.tolist()


@settings(max_examples=200)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=3, max_size=20),
    st.data(),
)
def test_raising_a_predicted_iou_keeps_a_positive(aious, data):
    n = len(aious)
    pious = data.draw(st.lists(st.floats(0.0, 0.9), min_size=n, max_size=n))
    w_p = data.draw(st.floats(0.1, 2.0))
    w_a = data.draw(st.floats(0.1, 2.0))
    i = data.draw(st.integers(0, n - 1))
    delta = data.draw(st.floats(1e-3, 0.1))

    selected, stats = select_positive_candidates(aious, pious, w_p, w_a)
    margin = stats.cious[i] - stats.threshold
    bound = w_p * delta * (1 / n + np.sqrt(n / (n - 1)) * (1 - 1 / n))
    if i not in selected or margin <= bound:
        return

    raised = list(pious)
    raised[i] += delta
    selected, _ = select_positive_candidates(aious, raised, w_p, w_a)

    assert i in selected


@pytest.mark.parametrize('kind, iteration, max_iter, expected', [
    ('constant', 3, 10, 1.0),
    ('d_up', 0, 1000, 0.0),
    ('d_up', 500, 1000, 0.5),
    ('d_up', 1000, 1000, 1.0),
    ('d_down', 0, 1000, 1.0),
    ('d_down', 500, 1000, 0.5),
    ('d_down', 1000, 1000, 0.0),
])
def test_schedule_weight(kind, iteration, max_iter, expected):
    assert schedule_weight(kind, iteration, max_iter) == expected


@pytest.mark.parametrize('iteration', [0, 7, 13, 100])
def test_schedules_mirror(iteration):
    assert schedule_weight('d_up', iteration, 100) \
        + schedule_weight('d_down', iteration, 100) == 1.0


def test_schedule_weight_errors():
    with pytest.raises(ValueError):
        schedule_weight('d_up', 11, 10)
    with pytest.raises(ValueError):
        schedule_weight('d_up', 0, 0)
    with pytest.raises(ValueError):
        schedule_weight('cosine', 0, 10)


def test_select_candidates_per_level():
    anchors = generate_anchors(AnchorConfig(strides=(8, 16)), 64, 64)

    idxs = select_candidates(anchors, [20, 20, 40, 40], 9)
    assert len(idxs) == 18
    assert (idxs[:9] < 64).all() and (idxs[9:] >= 64).all()

    idxs = select_candidates(anchors, [20, 20, 40, 40], 100)
    assert sorted(idxs.tolist()) == list(range(80))


def test_select_candidates_nearest_first():
    anchors = generate_anchors(AnchorConfig(strides=(8,)), 64, 64)
    # centered on the anchor of cell (2, 3)
    idxs = select_candidates(anchors, [10, 18, 30, 38], 5)

    assert idxs[0] == anchors.flat_index(0, 2, 3, 0)


def test_select_candidates_ties_go_to_lower_index():
    anchors = generate_anchors(AnchorConfig(strides=(8,)), 16, 16)
    # equidistant from all four anchor centers
    idxs = select_candidates(anchors, [4, 4, 12, 12], 4)

    assert idxs.tolist() == [0, 1, 2, 3]


def test_atss_hand_example(make_anchor_set):
    anchors = make_anchor_set([
        [10, 10, 50, 50],
        [20, 20, 60, 60],
        [30, 30, 70, 70],
    ])

    assignment = assign_atss(anchors, [[10, 10, 50, 50]], k=9)
    stats = assignment.stats[0]

    np.testing.assert_allclose(stats.aious, [1.0, 9 / 23, 1 / 7])
    expected = statistics.mean([1.0, 9 / 23, 1 / 7]) \
        + statistics.stdev([1.0, 9 / 23, 1 / 7])
    assert stats.threshold == pytest.approx(expected, abs=1e-12)
    assert stats.threshold == pytest.approx(0.9524, abs=1e-4)
    assert assignment.labels.tolist() == [0, NEGATIVE, NEGATIVE]
    assert assignment.num_pos.tolist() == [1]

    oracle = naive_assign(anchors, [[10, 10, 50, 50]], 9, 'atss')
    assert assignments_match(assignment, oracle)


def test_atss_center_filter_can_empty_a_gt(make_anchor_set):
    anchors = make_anchor_set([[0, 0, 10, 10], [20, 0, 30, 10]])

    assignment = assign_atss(anchors, [[11, 0, 19, 10]], k=9)

    assert assignment.num_positives == 0
    assert (assignment.labels == NEGATIVE).all()


def test_identical_gts_go_to_the_lower_index(make_anchor_set):
    anchors = make_anchor_set(
        [[0, 0, 10, 10], [30, 30, 40, 40], [60, 60, 70, 70]])
    gts = [[0, 0, 10, 10], [0, 0, 10, 10]]

    for assignment in (
            assign_atss(anchors, gts),
            assign_dynamic_atss(
                anchors, anchors.boxes, gts, AssignerConfig(
                    kind='dynamic_atss'), 0, 1)):
        assert assignment.labels[0] == 0
        assert assignment.num_pos[1] == 0


def test_empty_gts():
    anchors = generate_anchors(AnchorConfig(strides=(8,)), 32, 32)

    for kind in ('fixed', 'atss', 'dynamic_atss'):
        assignment = assign(AssignerConfig(kind=kind), anchors, [])
        assert (assignment.labels == NEGATIVE).all()
        assert assignment.stats == []
        check_assignment(assignment, anchors, [])


def test_fixed_thresholds(make_anchor_set):
    anchors = make_anchor_set([
        [0, 0, 10, 10],
        [0, 0, 10, 22.5],
        [50, 50, 60, 60],
    ])
    # second anchor: IoU 100 / 225 = 0.444
    assignment = assign_fixed(anchors, [[0, 0, 10, 10]], 0.5, 0.4)

    assert assignment.labels.tolist() == [0, IGNORE, NEGATIVE]
    assert assignment.positive_mask.tolist() == [True, False, False]
    assert assignment.ignore_mask.tolist() == [False, True, False]
    assert assignment.stats == []
    check_assignment(assignment, anchors, [[0, 0, 10, 10]])


def test_fixed_presets():
    assert AssignerConfig(kind='fixed', preset='rpn').pos_thr == 0.7
    assert AssignerConfig(kind='fixed', preset='rpn').neg_thr == 0.3
    assert AssignerConfig(kind='fixed', preset='ssd').neg_thr == 0.5
    with pytest.raises(ConfigError):
        AssignerConfig(kind='atss', preset='rpn')
    with pytest.raises(ConfigError):
        AssignerConfig(kind='fixed', preset='yolo')


@pytest.mark.parametrize('cfg', [
    {'kind': 'paa'},
    {'k': 0},
    {'pos_thr': 0.3, 'neg_thr': 0.4},
    {'w_p': -1.0},
    {'w_p': 0.0, 'w_a': 0.0},
    {'schedule_p': 'cosine'},
])
def test_invalid_assigner_config(cfg):
    with pytest.raises(ConfigError):
        AssignerConfig(**cfg)


def test_vanishing_weights_fall_back_to_anchor_ious():
    rng = np.random.default_rng(3)
    anchors, gts, predicted = random_case(rng)
    config = AssignerConfig(
        kind='dynamic_atss', w_p=1.0, w_a=0.0, schedule_p='d_up')

    dynamic = assign_dynamic_atss(anchors, predicted, gts, config, 0, 10)

    assert assignments_match(dynamic, assign_atss(anchors, gts))


def test_zero_prediction_weight_matches_atss():
    rng = np.random.default_rng(11)
    config = AssignerConfig(kind='dynamic_atss', w_p=0.0, w_a=1.0)
    for _ in range(50):
        anchors, gts, predicted = random_case(rng)
        dynamic = assign_dynamic_atss(anchors, predicted, gts, config, 0, 1)
        static = assign_atss(anchors, gts)

        assert np.array_equal(dynamic.labels, static.labels)


def test_dynamic_rejects_misaligned_predictions():
    anchors = generate_anchors(AnchorConfig(strides=(8,)), 32, 32)

    with pytest.raises(ValueError):
        assign_dynamic_atss(
            anchors, anchors.boxes[:-1], [[0, 0, 8, 8]],
            AssignerConfig(kind='dynamic_atss'), 0, 1)


def test_dynamic_without_predictions_uses_anchors():
    rng = np.random.default_rng(5)
    anchors, gts, _ = random_case(rng)

    dynamic = assign(AssignerConfig(kind='dynamic_atss'), anchors, gts)

    assert np.array_equal(dynamic.labels, assign_atss(anchors, gts).labels)


def test_check_assignment_catches_tampering():
    rng = np.random.default_rng(7)
    while True:
        anchors, gts, _ = random_case(rng)
        assignment = assign_atss(anchors, gts)
        if assignment.num_positives:
            break

    check_assignment(assignment, anchors, gts)

    labels = assignment.labels.copy()
    labels[np.flatnonzero(labels >= 0)[0]] = NEGATIVE
    with pytest.raises(InvariantViolation):
        check_assignment(replace(assignment, labels=labels), anchors, gts)

    with pytest.raises(InvariantViolation):
        check_assignment(
            replace(assignment, labels=np.full_like(labels, IGNORE)),
            anchors, gts)

    stats = list(assignment.stats)
    stats[0] = replace(stats[0], threshold=stats[0].threshold + 1e-6)
    with pytest.raises(InvariantViolation):
        check_assignment(replace(assignment, stats=stats), anchors, gts)


def test_assignment_json_round_trip():
    rng = np.random.default_rng(13)
    anchors, gts, predicted = random_case(rng)
    assignment = assign_dynamic_atss(
        anchors, predicted, gts, AssignerConfig(kind='dynamic_atss'), 0, 1)

    restored = Assignment.from_dict(assignment.to_dict())

    assert restored.to_dict() == assignment.to_dict()
    assert assignments_match(restored, assignment, tol=0.0)


def test_equivalence_with_oracles_on_random_scenes():
    rng = np.random.default_rng(2024)
    weights = [(1.0, 1.0), (0.5, 1.0), (1.5, 1.0), (1.0, 0.5), (1.0, 1.5)]

    for n in range(1000):
        anchors, gts, predicted = random_case(rng)
        k = int(rng.integers(1, 12))

        static = assign_atss(anchors, gts, k)
        assert assignments_match(
            static, naive_assign(anchors, gts, k, 'atss')), n
        check_assignment(static, anchors, gts)

        w_p, w_a = weights[n % len(weights)]
        config = AssignerConfig(kind='dynamic_atss', k=k, w_p=w_p, w_a=w_a)
        dynamic = assign_dynamic_atss(anchors, predicted, gts, config, 0, 1)
        assert assignments_match(dynamic, naive_assign(
            anchors, gts, k, 'dynamic', predicted, w_p, w_a)), n
        check_assignment(dynamic, anchors, gts)

        degenerate = assign_dynamic_atss(
            anchors, anchors.boxes, gts,
            AssignerConfig(kind='dynamic_atss', k=k), 0, 1)
        assert np.array_equal(degenerate.labels, static.labels), n
        assert np.array_equal(degenerate.num_pos, static.num_pos), n
