import math
import numpy as np
import torch

from dataclasses import dataclass

DELTA_CLAMP = 4.0
CENTER_MARGIN = 0.01


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f'non-finite point ({self.x}, {self.y})')


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box in corner convention. Right and bottom edges are
    exclusive, so width is x2 - x1 with no +1 term.
    """
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f'non-finite box {coords}')
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise InvalidBoxError(f'box {coords} has non-positive extent')

    @classmethod
    def from_list(cls, coords):
        if len(coords) != 4:
            raise InvalidBoxError(
                f'box needs 4 coordinates, got {len(coords)}')

        return cls(*(float(c) for c in coords))

    def to_list(self):
        return [self.x1, self.y1, self.x2, self.y2]

    def as_array(self):
        return np.array(self.to_list(), dtype=np.float64)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self):
        return Point((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)


@dataclass(frozen=True)
class Deltas:
    dx: float
    dy: float
    dw: float
    dh: float

    def as_array(self):
        return np.array(
            [self.dx, self.dy, self.dw, self.dh], dtype=np.float64)


def iou(a: Box, b: Box) -> float:
    iw = max(min(a.x2, b.x2) - max(a.x1, b.x1), 0.0)
    ih = max(min(a.y2, b.y2) - max(a.y1, b.y1), 0.0)
    intersection = iw * ih
    union = a.area + b.area - intersection

    return intersection / union


def center_distance(a: Box, b: Box) -> float:
    ca, cb = a.center, b.center
    dx = ca.x - cb.x
    dy = ca.y - cb.y

    return math.sqrt(dx * dx + dy * dy)


def center_inside(gt: Box, p: Point, margin: float = CENTER_MARGIN) -> bool:
    if margin < 0:
        raise ValueError(f'margin must be >= 0, got {margin}')

    return min(p.x - gt.x1, gt.x2 - p.x, p.y - gt.y1, gt.y2 - p.y) > margin


def encode(gt: Box, anchor: Box) -> Deltas:
    ca, cg = anchor.center, gt.center

    return Deltas(
        (cg.x - ca.x) / anchor.width,
        (cg.y - ca.y) / anchor.height,
        math.log(gt.width / anchor.width),
        math.log(gt.height / anchor.height))


def decode(d: Deltas, anchor: Box) -> Box:
    # Corner form: zero deltas reproduce the anchor bit for bit.
    aw, ah = anchor.width, anchor.height
    ew = math.expm1(max(min(d.dw, DELTA_CLAMP), -DELTA_CLAMP))
    eh = math.expm1(max(min(d.dh, DELTA_CLAMP), -DELTA_CLAMP))

    return Box(
        anchor.x1 + d.dx * aw - 0.5 * aw * ew,
        anchor.y1 + d.dy * ah - 0.5 * ah * eh,
        anchor.x2 + d.dx * aw + 0.5 * aw * ew,
        anchor.y2 + d.dy * ah + 0.5 * ah * eh)


def as_box_array(boxes):
    """Stack Boxes (or an (N, 4) array-like) into a float64 (N, 4) array."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    elif len(boxes) and isinstance(boxes[0], Box):
        arr = np.array([b.to_list() for b in boxes], dtype=np.float64)
    else:
        arr = np.asarray(boxes, dtype=np.float64)

    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f'expected (N, 4) boxes, got shape {arr.shape}')

    return arr


def box_areas(boxes):
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def box_centers(boxes):
    return np.stack(
        ((boxes[:, 0] + boxes[:, 2]) / 2, (boxes[:, 1] + boxes[:, 3]) / 2), 1)


def bbox_overlaps(boxes, query_boxes):
    """Pairwise IoU, (N, 4) x (M, 4) -> (N, M)."""
    boxes = as_box_array(boxes)
    query_boxes = as_box_array(query_boxes)

    iw = np.maximum(
        np.minimum(boxes[:, None, 2], query_boxes[None, :, 2])
        - np.maximum(boxes[:, None, 0], query_boxes[None, :, 0]), 0.0)
    ih = np.maximum(
        np.minimum(boxes[:, None, 3], query_boxes[None, :, 3])
        - np.maximum(boxes[:, None, 1], query_boxes[None, :, 1]), 0.0)

    intersections = iw * ih
    unions = (
        box_areas(boxes)[:, None] + box_areas(query_boxes)[None, :]
        - intersections)

    return intersections / unions


def paired_overlaps(boxes, query_boxes):
    """Row-wise IoU of two aligned (N, 4) arrays."""
    iw = np.maximum(
        np.minimum(boxes[:, 2], query_boxes[:, 2])
        - np.maximum(boxes[:, 0], query_boxes[:, 0]), 0.0)
    ih = np.maximum(
        np.minimum(boxes[:, 3], query_boxes[:, 3])
        - np.maximum(boxes[:, 1], query_boxes[:, 1]), 0.0)

    intersections = iw * ih
    unions = box_areas(boxes) + box_areas(query_boxes) - intersections

    return intersections / unions


def centers_inside(gt, points, margin=CENTER_MARGIN):
    gt = np.asarray(gt, dtype=np.float64)
    nearest_side = np.min(np.stack((
        points[:, 0] - gt[0],
        gt[2] - points[:, 0],
        points[:, 1] - gt[1],
        gt[3] - points[:, 1]), 1), 1)

    return nearest_side > margin


def bbox_transform(ex_rois, gt_rois):
    ex_widths = ex_rois[:, 2] - ex_rois[:, 0]
    ex_heights = ex_rois[:, 3] - ex_rois[:, 1]
    ex_ctr = box_centers(ex_rois)

    gt_widths = gt_rois[:, 2] - gt_rois[:, 0]
    gt_heights = gt_rois[:, 3] - gt_rois[:, 1]
    gt_ctr = box_centers(gt_rois)

    targets_dx = (gt_ctr[:, 0] - ex_ctr[:, 0]) / ex_widths
    targets_dy = (gt_ctr[:, 1] - ex_ctr[:, 1]) / ex_heights
    targets_dw = np.log(gt_widths / ex_widths)
    targets_dh = np.log(gt_heights / ex_heights)

    return np.stack((targets_dx, targets_dy, targets_dw, targets_dh), 1)


def bbox_transform_inv(boxes, deltas):
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)

    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]

    dx = deltas[:, 0]
    dy = deltas[:, 1]
    ew = np.expm1(np.clip(deltas[:, 2], -DELTA_CLAMP, DELTA_CLAMP))
    eh = np.expm1(np.clip(deltas[:, 3], -DELTA_CLAMP, DELTA_CLAMP))

    pred_boxes = np.empty_like(boxes, dtype=np.float64)
    pred_boxes[:, 0] = boxes[:, 0] + dx * widths - 0.5 * widths * ew
    pred_boxes[:, 1] = boxes[:, 1] + dy * heights - 0.5 * heights * eh
    pred_boxes[:, 2] = boxes[:, 2] + dx * widths + 0.5 * widths * ew
    pred_boxes[:, 3] = boxes[:, 3] + dy * heights + 0.5 * heights * eh

    return pred_boxes


def compute_ious(proposal, proposal_area, proposals, proposal_areas):
    iw = (torch.min(proposal[2], proposals[:, 2])
          - torch.max(proposal[0], proposals[:, 0])).clamp(min=0)
    ih = (torch.min(proposal[3], proposals[:, 3])
          - torch.max(proposal[1], proposals[:, 1])).clamp(min=0)

    intersections = iw * ih

    unions = proposal_area + proposal_areas - intersections

    return intersections / unions


def nms(boxes, scores, iou_thr):
    """
    Greedy non-maximum suppression.

    Args:
        boxes (list of Box or (N, 4) array): Candidate boxes.
        scores (sequence of float): One score per box.
        iou_thr (float): Boxes overlapping a kept box by more than this
            are suppressed.

    Output:
        keep (list of int): Kept indices, highest score first; equal
            scores keep the lower index first.
    """
    if not 0 < iou_thr < 1:
        raise ValueError(f'iou_thr must be in (0, 1), got {iou_thr}')
    if len(boxes) != len(scores):
        raise ValueError(
            f'{len(boxes)} boxes but {len(scores)} scores')
    if len(boxes) == 0:
        return []

    proposals = torch.from_numpy(as_box_array(boxes).copy())
    scores = torch.as_tensor(np.asarray(scores, dtype=np.float64))

    areas = (
        (proposals[:, 2] - proposals[:, 0])
        * (proposals[:, 3] - proposals[:, 1]))

    _, order = scores.sort(descending=True, stable=True)

    keep = []
    while order.size(0) > 0:
        idx = order[0]
        keep.append(idx.item())
        order = order[1:]

        if order.size(0) == 0:
            break

        ious = compute_ious(
            proposals[idx], areas[idx], proposals[order], areas[order])

        order = torch.masked_select(order, ious <= iou_thr)

    return keep
