import math
import numpy as np

from dataclasses import dataclass, field

from models.geometry import Box, box_centers
from utils.config_utils import ConfigError, section_from_dict


@dataclass(frozen=True)
class AnchorConfig:
    strides: tuple = (8, 16, 32, 64, 128)
    scale: float = 8.0
    ratios: tuple = (1.0,)

    def __post_init__(self):
        if not self.strides:
            raise ConfigError('anchors.strides must not be empty')
        if any(s <= 0 for s in self.strides):
            raise ConfigError(
                f'anchors.strides must be positive, got {self.strides}')
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigError(
                f'anchors.strides must be strictly increasing, '
                f'got {self.strides}')
        if not self.scale > 0:
            raise ConfigError(f'anchors.scale must be > 0, got {self.scale}')
        if not self.ratios or any(not r > 0 for r in self.ratios):
            raise ConfigError(
                f'anchors.ratios must be positive, got {self.ratios}')

    @property
    def anchors_per_location(self):
        return len(self.ratios)

    @classmethod
    def from_dict(cls, cfg):
        return section_from_dict(cls, cfg, 'anchors')


@dataclass(frozen=True, eq=False)
class AnchorLevel:
    stride: int
    boxes: np.ndarray
    start: int
    grid_width: int
    grid_height: int

    def __len__(self):
        return len(self.boxes)


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """
    Anchors of every pyramid level. Global indices are contiguous and
    level-ordered; inside a level they run row by row (grid row j, then
    grid column i, then ratio r).
    """
    levels: tuple
    num_ratios: int
    boxes: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.boxes)

    @property
    def num_level_anchors(self):
        return [len(level) for level in self.levels]

    def flat_index(self, level, i, j, r):
        lvl = self.levels[level]
        if not (0 <= i < lvl.grid_width and 0 <= j < lvl.grid_height
                and 0 <= r < self.num_ratios):
            raise IndexError(
                f'cell ({i}, {j}, ratio {r}) outside level {level}')

        return lvl.start + (j * lvl.grid_width + i) * self.num_ratios + r

    def box(self, idx):
        return Box(*self.boxes[idx].tolist())


def generate_level_anchors(stride, scale, ratios, image_width, image_height):
    grid_width = math.ceil(image_width / stride)
    grid_height = math.ceil(image_height / stride)

    ratios = np.asarray(ratios, dtype=np.float64)
    size = scale * stride
    widths = size / np.sqrt(ratios)
    heights = size * np.sqrt(ratios)

    ctr_x = (np.arange(grid_width, dtype=np.float64) + 0.5) * stride
    ctr_y = (np.arange(grid_height, dtype=np.float64) + 0.5) * stride
    ctr_y, ctr_x = np.meshgrid(ctr_y, ctr_x, indexing='ij')

    ctr_x = ctr_x.reshape(-1, 1)
    ctr_y = ctr_y.reshape(-1, 1)

    anchors = np.stack((
        ctr_x - 0.5 * widths,
        ctr_y - 0.5 * heights,
        ctr_x + 0.5 * widths,
        ctr_y + 0.5 * heights), -1)

    return anchors.reshape(-1, 4), grid_width, grid_height


def generate_anchors(config: AnchorConfig, image_width, image_height):
    if not (image_width > 0 and image_height > 0):
        raise ValueError(
            f'image size must be positive, got {image_width}x{image_height}')

    levels = []
    start = 0
    for stride in config.strides:
        boxes, grid_width, grid_height = generate_level_anchors(
            stride, config.scale, config.ratios, image_width, image_height)
        levels.append(
            AnchorLevel(stride, boxes, start, grid_width, grid_height))
        start += len(boxes)

    boxes = np.concatenate([level.boxes for level in levels])

    return AnchorSet(
        tuple(levels), config.anchors_per_location, boxes, box_centers(boxes))


if __name__ == "__main__":
    anchors = generate_anchors(AnchorConfig(), 256, 256)
    print(len(anchors), anchors.num_level_anchors)
