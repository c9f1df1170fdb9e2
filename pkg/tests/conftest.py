import numpy as np
import pytest

from models.anchor_generation import AnchorLevel, AnchorSet
from models.geometry import box_centers


@pytest.fixture
def make_anchor_set():
    """Single-level AnchorSet from explicit boxes, one row of cells."""
    def _make(boxes, stride=8):
        boxes = np.asarray(boxes, dtype=np.float64)
        level = AnchorLevel(stride, boxes, 0, len(boxes), 1)

        return AnchorSet((level,), 1, boxes, box_centers(boxes))

    return _make
