import logging
import math
import numpy as np

from dataclasses import dataclass, field, replace

from models.geometry import (
    CENTER_MARGIN, Box, as_box_array, bbox_overlaps, centers_inside)
from utils.config_utils import ConfigError, section_from_dict

logger = logging.getLogger(__name__)

NEGATIVE = -1
IGNORE = -2

ASSIGNER_KINDS = ('fixed', 'atss', 'dynamic_atss')
SCHEDULES = ('constant', 'd_up', 'd_down')

# (pos_thr, neg_thr) of the classic fixed-threshold detectors
FIXED_PRESETS = {
    'rpn': (0.7, 0.3),
    'ssd': (0.5, 0.5),
    'retinanet': (0.5, 0.4),
}


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class AssignerConfig:
    kind: str = 'atss'
    k: int = 9
    pos_thr: float = 0.5
    neg_thr: float = 0.4
    w_p: float = 1.0
    w_a: float = 1.0
    schedule_p: str = 'constant'
    schedule_a: str = 'constant'
    preset: str = None

    def __post_init__(self):
        if self.kind not in ASSIGNER_KINDS:
            raise ConfigError(
                f'assigner.kind must be one of {ASSIGNER_KINDS}, '
                f'got {self.kind!r}')
        if isinstance(self.k, bool) or not isinstance(self.k, int) \
                or self.k < 1:
            raise ConfigError(f'assigner.k must be an int >= 1, got {self.k}')

        if self.preset is not None:
            if self.preset not in FIXED_PRESETS:
                raise ConfigError(
                    f'assigner.preset must be one of '
                    f'{sorted(FIXED_PRESETS)}, got {self.preset!r}')
            if self.kind != 'fixed':
                raise ConfigError('assigner.preset requires kind "fixed"')
            pos_thr, neg_thr = FIXED_PRESETS[self.preset]
            object.__setattr__(self, 'pos_thr', pos_thr)
            object.__setattr__(self, 'neg_thr', neg_thr)

        if not 0 <= self.neg_thr <= self.pos_thr <= 1:
            raise ConfigError(
                f'assigner thresholds need 0 <= neg_thr <= pos_thr <= 1, '
                f'got neg_thr={self.neg_thr}, pos_thr={self.pos_thr}')
        if self.w_p < 0 or self.w_a < 0:
            raise ConfigError(
                f'assigner weights must be >= 0, '
                f'got w_p={self.w_p}, w_a={self.w_a}')
        if self.w_p == 0 and self.w_a == 0:
            raise ConfigError('assigner weights must not both be zero')
        for name in ('schedule_p', 'schedule_a'):
            if getattr(self, name) not in SCHEDULES:
                raise ConfigError(
                    f'assigner.{name} must be one of {SCHEDULES}, '
                    f'got {getattr(self, name)!r}')

    @classmethod
    def from_dict(cls, cfg):
        return section_from_dict(cls, cfg, 'assigner')


@dataclass(frozen=True, eq=False)
class CandidateStats:
    aious: np.ndarray
    pious: np.ndarray
    cious: np.ndarray
    w_p: float
    w_a: float
    mean_a: float
    std_a: float
    mean_p: float
    std_p: float
    mean_c: float
    std_c: float
    threshold: float
    gt_index: int = -1
    candidate_idxs: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))
    positive_idxs: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64))

    def to_dict(self):
        return {
            'gt_index': int(self.gt_index),
            'candidate_idxs': [int(i) for i in self.candidate_idxs],
            'positive_idxs': [int(i) for i in self.positive_idxs],
            'aious': [float(v) for v in self.aious],
            'pious': (None if self.pious is None
                      else [float(v) for v in self.pious]),
            'cious': [float(v) for v in self.cious],
            'w_p': float(self.w_p),
            'w_a': float(self.w_a),
            'mean_a': float(self.mean_a),
            'std_a': float(self.std_a),
            'mean_p': float(self.mean_p),
            'std_p': float(self.std_p),
            'mean_c': float(self.mean_c),
            'std_c': float(self.std_c),
            'threshold': float(self.threshold),
        }

    @classmethod
    def from_dict(cls, d):
        def floats(key):
            return np.asarray(d[key], dtype=np.float64)

        return cls(
            aious=floats('aious'),
            pious=None if d['pious'] is None else floats('pious'),
            cious=floats('cious'),
            w_p=d['w_p'],
            w_a=d['w_a'],
            mean_a=d['mean_a'],
            std_a=d['std_a'],
            mean_p=d['mean_p'],
            std_p=d['std_p'],
            mean_c=d['mean_c'],
            std_c=d['std_c'],
            threshold=d['threshold'],
            gt_index=d['gt_index'],
            candidate_idxs=np.asarray(d['candidate_idxs'], dtype=np.int64),
            positive_idxs=np.asarray(d['positive_idxs'], dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Assignment:
    """
    Per-anchor labels: a GT index (>= 0) for positives, NEGATIVE or
    IGNORE otherwise. `stats` holds one CandidateStats per GT for the
    adaptive kinds and is empty for the fixed kind.
    """
    kind: str
    labels: np.ndarray
    stats: list
    num_pos: np.ndarray

    @property
    def positive_mask(self):
        return self.labels >= 0

    @property
    def ignore_mask(self):
        return self.labels == IGNORE

    @property
    def num_positives(self):
        return int(self.positive_mask.sum())

    @property
    def thresholds(self):
        return [st.threshold for st in self.stats]

    def to_dict(self):
        return {
            'kind': self.kind,
            'labels': [int(label) for label in self.labels],
            'num_pos': [int(n) for n in self.num_pos],
            'stats': [st.to_dict() for st in self.stats],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d['kind'],
            labels=np.asarray(d['labels'], dtype=np.int64),
            stats=[CandidateStats.from_dict(st) for st in d['stats']],
            num_pos=np.asarray(d['num_pos'], dtype=np.int64))


def candidate_stats(values):
    """Mean and sample standard deviation (n - 1 divisor, 0 for n = 1)."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise ValueError('candidate_stats needs at least one value')

    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0

    std = math.sqrt(math.fsum((v - mean) * (v - mean) for v in values)
                    / (n - 1))

    return mean, std


def _gt_array(gt):
    if isinstance(gt, Box):
        return gt.as_array()

    return np.asarray(gt, dtype=np.float64)


def select_candidates(anchor_set, gt, k):
    """
    The min(k, level size) anchors nearest to the GT center on every
    level, nearest first, concatenated in level order.
    """
    gt = _gt_array(gt)
    ctr_x = (gt[0] + gt[2]) / 2
    ctr_y = (gt[1] + gt[3]) / 2

    dx = anchor_set.centers[:, 0] - ctr_x
    dy = anchor_set.centers[:, 1] - ctr_y
    distances = np.sqrt(dx * dx + dy * dy)

    candidate_idxs = []
    for level in anchor_set.levels:
        level_distances = distances[level.start:level.start + len(level)]
        nearest = np.argsort(level_distances, kind='stable')[:k]
        candidate_idxs.append(nearest + level.start)

    return np.concatenate(candidate_idxs).astype(np.int64)


def select_positive_candidates(aious, pious, w_p, w_a):
    """
    Threshold one GT's candidates on their combined IoUs.

    Mean and std of the combined IoUs are the weighted sums of the
    statistics computed separately for predicted and anchor IoUs.

    Args:
        aious (sequence of float): Anchor IoUs of the candidates.
        pious (sequence of float or None): Predicted-box IoUs, aligned
            with aious. None means anchors only and requires w_p == 0.
        w_p (float): Weight on predicted IoUs.
        w_a (float): Weight on anchor IoUs.

    Output:
        selected (np.ndarray): Positions i with ciou_i >= threshold.
        stats (CandidateStats): Statistics that produced the selection.
    """
    aious = np.asarray(aious, dtype=np.float64)
    if len(aious) == 0:
        raise ValueError('no candidates to select from')

    mean_a, std_a = candidate_stats(aious)

    if pious is None:
        if w_p != 0:
            raise ValueError('w_p must be 0 when predicted IoUs are absent')
        mean_p, std_p = 0.0, 0.0
        cious = w_a * aious
    else:
        pious = np.asarray(pious, dtype=np.float64)
        if len(pious) != len(aious):
            raise ValueError(
                f'{len(pious)} predicted IoUs for {len(aious)} candidates')
        mean_p, std_p = candidate_stats(pious)
        cious = w_p * pious + w_a * aious

    mean_c = w_p * mean_p + w_a * mean_a
    std_c = w_p * std_p + w_a * std_a
    threshold = mean_c + std_c

    selected = np.flatnonzero(cious >= threshold)

    stats = CandidateStats(
        aious=aious,
        pious=pious,
        cious=cious,
        w_p=w_p,
        w_a=w_a,
        mean_a=mean_a,
        std_a=std_a,
        mean_p=mean_p,
        std_p=std_p,
        mean_c=mean_c,
        std_c=std_c,
        threshold=threshold)

    return selected, stats


def schedule_weight(kind, iteration, max_iter):
    if max_iter < 1:
        raise ValueError(f'max_iter must be >= 1, got {max_iter}')
    if not 0 <= iteration <= max_iter:
        raise ValueError(
            f'iteration {iteration} outside [0, {max_iter}]')

    if kind == 'constant':
        return 1.0
    elif kind == 'd_up':
        return iteration / max_iter
    elif kind == 'd_down':
        return 1.0 - iteration / max_iter

    raise ValueError(f'unknown schedule {kind!r}')


def _empty_assignment(kind, num_anchors):
    return Assignment(
        kind,
        np.full(num_anchors, NEGATIVE, dtype=np.int64),
        [],
        np.zeros(0, dtype=np.int64))


def assign_fixed(anchor_set, gts, pos_thr, neg_thr):
    if not 0 <= neg_thr <= pos_thr <= 1:
        raise ValueError(
            f'need 0 <= neg_thr <= pos_thr <= 1, got {neg_thr}, {pos_thr}')

    gts = as_box_array(gts)
    num_anchors = len(anchor_set)
    if len(gts) == 0:
        return _empty_assignment('fixed', num_anchors)

    overlaps = bbox_overlaps(anchor_set.boxes, gts)
    max_overlaps = overlaps.max(1)
    argmax_overlaps = overlaps.argmax(1)

    labels = np.full(num_anchors, NEGATIVE, dtype=np.int64)
    labels[max_overlaps >= neg_thr] = IGNORE

    positive = max_overlaps >= pos_thr
    labels[positive] = argmax_overlaps[positive]

    num_pos = np.bincount(labels[labels >= 0], minlength=len(gts))

    return Assignment('fixed', labels, [], num_pos)


def _assign_adaptive(kind, anchor_set, gts, k, predicted_boxes, w_p, w_a):
    gts = as_box_array(gts)
    num_anchors = len(anchor_set)
    if len(gts) == 0:
        return _empty_assignment(kind, num_anchors)

    overlaps = bbox_overlaps(anchor_set.boxes, gts)
    pred_overlaps = None
    if predicted_boxes is not None:
        pred_overlaps = bbox_overlaps(predicted_boxes, gts)

    # score of each (anchor, GT) claim; -inf where the GT does not claim
    scores = np.full((num_anchors, len(gts)), -np.inf)
    stats = []

    for g, gt in enumerate(gts):
        candidate_idxs = select_candidates(anchor_set, gt, k)
        aious = overlaps[candidate_idxs, g]
        pious = None
        if pred_overlaps is not None:
            pious = pred_overlaps[candidate_idxs, g]

        selected, gt_stats = select_positive_candidates(
            aious, pious, w_p, w_a)

        positive_idxs = candidate_idxs[selected]
        inside = centers_inside(
            gt, anchor_set.centers[positive_idxs], CENTER_MARGIN)
        positive_idxs = positive_idxs[inside]

        scores[positive_idxs, g] = gt_stats.cious[selected][inside]

        stats.append(replace(
            gt_stats,
            gt_index=g,
            candidate_idxs=candidate_idxs,
            positive_idxs=positive_idxs))

    labels = np.full(num_anchors, NEGATIVE, dtype=np.int64)
    claimed = np.isfinite(scores).any(1)
    # argmax keeps the lower GT index on equal scores
    labels[claimed] = np.argmax(scores[claimed], 1)

    num_pos = np.bincount(labels[labels >= 0], minlength=len(gts))

    return Assignment(kind, labels, stats, num_pos)


def assign_atss(anchor_set, gts, k=9):
    if k < 1:
        raise ValueError(f'k must be >= 1, got {k}')

    return _assign_adaptive('atss', anchor_set, gts, k, None, 0.0, 1.0)


def assign_dynamic_atss(
    anchor_set,
    predicted_boxes,
    gts,
    config,
    iteration,
    max_iter
):
    predicted_boxes = as_box_array(predicted_boxes)
    if len(predicted_boxes) != len(anchor_set):
        raise ValueError(
            f'{len(predicted_boxes)} predicted boxes for '
            f'{len(anchor_set)} anchors')

    w_p = config.w_p * schedule_weight(config.schedule_p, iteration, max_iter)
    w_a = config.w_a * schedule_weight(config.schedule_a, iteration, max_iter)

    if w_p == 0 and w_a == 0:
        logger.debug(
            'Both IoU weights vanish at iteration %d, using anchor IoUs',
            iteration)
        w_a = 1.0

    return _assign_adaptive(
        'dynamic_atss', anchor_set, gts, config.k, predicted_boxes, w_p, w_a)


def assign(
    config,
    anchor_set,
    gts,
    predicted_boxes=None,
    iteration=0,
    max_iter=1
):
    if config.kind == 'fixed':
        return assign_fixed(anchor_set, gts, config.pos_thr, config.neg_thr)
    elif config.kind == 'atss':
        return assign_atss(anchor_set, gts, config.k)

    if predicted_boxes is None:
        predicted_boxes = anchor_set.boxes

    return assign_dynamic_atss(
        anchor_set, predicted_boxes, gts, config, iteration, max_iter)


def check_assignment(assignment, anchor_set, gts, tol=1e-12):
    """Raise InvariantViolation if `assignment` breaks any invariant."""
    gts = as_box_array(gts)
    labels = assignment.labels

    if labels.shape != (len(anchor_set),):
        raise InvariantViolation(
            f'{labels.shape} labels for {len(anchor_set)} anchors')

    valid = (labels == NEGATIVE) | (labels == IGNORE) \
        | ((labels >= 0) & (labels < len(gts)))
    if not valid.all():
        raise InvariantViolation(
            f'invalid label at anchor {int(np.flatnonzero(~valid)[0])}')

    if assignment.kind != 'fixed' and assignment.ignore_mask.any():
        raise InvariantViolation(f'{assignment.kind} produced ignored anchors')

    positives = assignment.positive_mask
    counts = np.bincount(labels[positives], minlength=len(gts))
    if not np.array_equal(counts, assignment.num_pos):
        raise InvariantViolation('num_pos disagrees with labels')

    if assignment.kind == 'fixed':
        return

    for idx in np.flatnonzero(positives):
        gt = gts[labels[idx]]
        if not centers_inside(gt, anchor_set.centers[idx:idx + 1])[0]:
            raise InvariantViolation(
                f'positive anchor {int(idx)} centered outside its GT')

    for st in assignment.stats:
        mean_c = st.w_p * st.mean_p + st.w_a * st.mean_a
        std_c = st.w_p * st.std_p + st.w_a * st.std_a
        if abs(mean_c - st.mean_c) > tol or abs(std_c - st.std_c) > tol \
                or abs(st.mean_c + st.std_c - st.threshold) > tol:
            raise InvariantViolation(
                f'inconsistent statistics for GT {st.gt_index}')
