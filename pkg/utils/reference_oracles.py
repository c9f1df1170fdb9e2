"""
Brute-force reference implementations used to cross-check the optimized
geometry, assignment and loss code. They are written for clarity, not
speed. The reference computations do not call into the code they check.
"""
import logging
import math
import numpy as np

from fractions import Fraction

from models.anchor_generation import AnchorConfig, generate_anchors
from models.label_assignment import NEGATIVE, Assignment, CandidateStats

logger = logging.getLogger(__name__)

RASTER_LIMIT = 256


def _integer_coords(box):
    coords = []
    for c in box:
        c = float(c)
        if not c.is_integer():
            raise ValueError(f'rasterized_iou needs integer corners, got {c}')
        if not 0 <= c <= RASTER_LIMIT:
            raise ValueError(
                f'corner {c} outside [0, {RASTER_LIMIT}]')
        coords.append(int(c))

    return coords


def rasterized_iou(a, b):
    """IoU of two integer boxes by counting the unit cells they cover."""
    ax1, ay1, ax2, ay2 = _integer_coords(_corners(a))
    bx1, by1, bx2, by2 = _integer_coords(_corners(b))

    x0, y0 = min(ax1, bx1), min(ay1, by1)
    width, height = max(ax2, bx2) - x0, max(ay2, by2) - y0

    mask_a = np.zeros((height, width), dtype=bool)
    mask_b = np.zeros((height, width), dtype=bool)
    mask_a[ay1 - y0:ay2 - y0, ax1 - x0:ax2 - x0] = True
    mask_b[by1 - y0:by2 - y0, bx1 - x0:bx2 - x0] = True

    intersection = int(np.count_nonzero(mask_a & mask_b))
    union = int(np.count_nonzero(mask_a | mask_b))

    return float(Fraction(intersection, union))


def _corners(box):
    if hasattr(box, 'to_list'):
        return box.to_list()

    return [float(c) for c in box]


def _box_iou(a, b):
    iw = max(min(a[2], b[2]) - max(a[0], b[0]), 0.0)
    ih = max(min(a[3], b[3]) - max(a[1], b[1]), 0.0)
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])

    return inter / (area_a + area_b - inter)


def _mean_std(values):
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0

    squares = [(v - mean) * (v - mean) for v in values]

    return mean, math.sqrt(math.fsum(squares) / (n - 1))


def naive_assign(
    anchors,
    gts,
    k,
    mode='atss',
    predicted_boxes=None,
    w_p=1.0,
    w_a=1.0,
    margin=0.01
):
    """
    Literal transcription of the adaptive assignment: for every GT,
    distances to all anchor centers, k nearest per level, IoU mean + std
    threshold, center-inside filter. In 'dynamic' mode the thresholding
    score is w_p * PIoU + w_a * AIoU with summed statistics; `w_p` and
    `w_a` are the effective weights of that iteration.
    """
    boxes = [[float(c) for c in box] for box in anchors.boxes]
    level_sizes = anchors.num_level_anchors
    gts = [_corners(gt) for gt in gts]

    use_predictions = mode == 'dynamic'
    if use_predictions:
        if predicted_boxes is None:
            predicted_boxes = boxes
        predictions = [_corners(box) for box in predicted_boxes]
    elif mode == 'atss':
        w_p, w_a = 0.0, 1.0
    else:
        raise ValueError(f'unknown mode {mode!r}')

    best = [None] * len(boxes)
    all_stats = []

    for g, gt in enumerate(gts):
        gt_cx = (gt[0] + gt[2]) / 2
        gt_cy = (gt[1] + gt[3]) / 2

        distances = []
        for box in boxes:
            dx = (box[0] + box[2]) / 2 - gt_cx
            dy = (box[1] + box[3]) / 2 - gt_cy
            distances.append(math.sqrt(dx * dx + dy * dy))

        candidates = []
        start = 0
        for size in level_sizes:
            level = sorted(
                range(start, start + size),
                key=lambda i: (distances[i], i))
            candidates.extend(level[:k])
            start += size

        aious = [_box_iou(boxes[i], gt) for i in candidates]
        mean_a, std_a = _mean_std(aious)

        if use_predictions:
            pious = [_box_iou(predictions[i], gt) for i in candidates]
            mean_p, std_p = _mean_std(pious)
            cious = [w_p * p + w_a * a for p, a in zip(pious, aious)]
            mean_c = w_p * mean_p + w_a * mean_a
            std_c = w_p * std_p + w_a * std_a
        else:
            pious = None
            mean_p, std_p = 0.0, 0.0
            cious = [w_a * a for a in aious]
            mean_c = w_a * mean_a
            std_c = w_a * std_a

        threshold = mean_c + std_c

        positives = []
        for pos, i in enumerate(candidates):
            if cious[pos] < threshold:
                continue

            cx = (boxes[i][0] + boxes[i][2]) / 2
            cy = (boxes[i][1] + boxes[i][3]) / 2
            if min(cx - gt[0], gt[2] - cx, cy - gt[1], gt[3] - cy) <= margin:
                continue

            positives.append(i)
            if best[i] is None or cious[pos] > best[i][0]:
                best[i] = (cious[pos], g)

        all_stats.append(CandidateStats(
            aious=np.array(aious),
            pious=None if pious is None else np.array(pious),
            cious=np.array(cious),
            w_p=w_p,
            w_a=w_a,
            mean_a=mean_a,
            std_a=std_a,
            mean_p=mean_p,
            std_p=std_p,
            mean_c=mean_c,
            std_c=std_c,
            threshold=threshold,
            gt_index=g,
            candidate_idxs=np.array(candidates, dtype=np.int64),
            positive_idxs=np.array(positives, dtype=np.int64)))

    labels = [NEGATIVE if b is None else b[1] for b in best]
    num_pos = [sum(1 for label in labels if label == g)
               for g in range(len(gts))]

    return Assignment(
        'atss' if mode == 'atss' else 'dynamic_atss',
        np.array(labels, dtype=np.int64),
        all_stats,
        np.array(num_pos, dtype=np.int64))


def finite_diff(loss, p, y, params, h=1e-5):
    """Central-difference estimate of d loss / d p."""
    if not (0 < p - h and p + h < 1):
        raise ValueError(f'p +/- h must stay inside (0, 1), got p={p}, h={h}')

    upper = float(loss(p + h, y, params).value)
    lower = float(loss(p - h, y, params).value)

    return (upper - lower) / (2 * h)


def assignments_match(a, b, tol=1e-12):
    """Same labels and per-GT counts, thresholds within `tol`."""
    if not np.array_equal(a.labels, b.labels):
        return False
    if not np.array_equal(a.num_pos, b.num_pos):
        return False
    if len(a.stats) != len(b.stats):
        return False

    return all(
        abs(sa.threshold - sb.threshold) <= tol
        for sa, sb in zip(a.stats, b.stats))


def random_case(rng, max_gts=10, max_size=160):
    """
    One random two-level assignment problem.

    Output:
        anchors (AnchorSet): Strides 8 and 16, at most 500 anchors.
        gts (np.ndarray): (G, 4) boxes inside the image, 0 <= G <= max_gts.
        predicted_boxes (np.ndarray): Jittered anchors, one per anchor.
    """
    width = int(rng.integers(32, max_size + 1))
    height = int(rng.integers(32, max_size + 1))
    config = AnchorConfig(
        strides=(8, 16), scale=float(rng.uniform(2.0, 8.0)), ratios=(1.0,))
    anchors = generate_anchors(config, width, height)

    num_gts = int(rng.integers(0, max_gts + 1))
    gts = np.zeros((num_gts, 4))
    for g in range(num_gts):
        w = rng.uniform(4.0, width)
        h = rng.uniform(4.0, height)
        x1 = rng.uniform(0.0, width - w)
        y1 = rng.uniform(0.0, height - h)
        gts[g] = (x1, y1, x1 + w, y1 + h)

    predicted_boxes = anchors.boxes + rng.normal(0.0, 4.0, anchors.boxes.shape)
    predicted_boxes[:, 2] = np.maximum(
        predicted_boxes[:, 2], predicted_boxes[:, 0] + 1.0)
    predicted_boxes[:, 3] = np.maximum(
        predicted_boxes[:, 3], predicted_boxes[:, 1] + 1.0)

    return anchors, gts, predicted_boxes
