import numpy as np

from models.geometry import Box, Point, iou, paired_overlaps

QUALITY_BRANCHES = ('centerness', 'iou', 'none')


def centerness_target(anchor_center: Point, gt: Box) -> float:
    left = anchor_center.x - gt.x1
    right = gt.x2 - anchor_center.x
    top = anchor_center.y - gt.y1
    bottom = gt.y2 - anchor_center.y

    if min(left, right, top, bottom) <= 0:
        raise ValueError(
            f'point ({anchor_center.x}, {anchor_center.y}) is not inside '
            f'{gt.to_list()}')

    return float(np.sqrt(
        (min(left, right) / max(left, right))
        * (min(top, bottom) / max(top, bottom))))


def centerness_targets(points, gts):
    """Row-wise centerness of (N, 2) points inside aligned (N, 4) boxes."""
    left = points[:, 0] - gts[:, 0]
    right = gts[:, 2] - points[:, 0]
    top = points[:, 1] - gts[:, 1]
    bottom = gts[:, 3] - points[:, 1]

    # points outside their box get 0
    ratio_x = np.maximum(np.minimum(left, right), 0) / np.maximum(left, right)
    ratio_y = np.maximum(np.minimum(top, bottom), 0) / np.maximum(top, bottom)

    return np.sqrt(ratio_x * ratio_y)


def iou_target(pred: Box, gt: Box) -> float:
    return iou(pred, gt)


def iou_targets(pred_boxes, gts):
    return paired_overlaps(pred_boxes, gts)
