import math
import numpy as np
import pytest

from models.anchor_generation import AnchorConfig, generate_anchors
from utils.config_utils import ConfigError


def test_level_sizes_and_contiguous_indices():
    anchors = generate_anchors(AnchorConfig(strides=(8, 16)), 64, 64)

    assert anchors.num_level_anchors == [64, 16]
    assert len(anchors) == 80
    assert [level.start for level in anchors.levels] == [0, 64]


def test_partial_cells_are_covered():
    anchors = generate_anchors(AnchorConfig(strides=(16,)), 40, 20)
    level = anchors.levels[0]

    assert (level.grid_width, level.grid_height) == (3, 2)


def test_centers_sit_on_the_grid():
    config = AnchorConfig(strides=(8, 16), ratios=(0.5, 1.0, 2.0))
    anchors = generate_anchors(config, 48, 32)

    for level_idx, level in enumerate(anchors.levels):
        for j in range(level.grid_height):
            for i in range(level.grid_width):
                for r in range(len(config.ratios)):
                    idx = anchors.flat_index(level_idx, i, j, r)
                    cx, cy = anchors.centers[idx]
                    assert cx == pytest.approx((i + 0.5) * level.stride, abs=1e-9)
                    assert cy == pytest.approx((j + 0.5) * level.stride, abs=1e-9)


def test_anchor_shapes():
    config = AnchorConfig(strides=(8,), scale=4.0, ratios=(0.5, 1.0, 2.0))
    anchors = generate_anchors(config, 8, 8)

    widths = anchors.boxes[:, 2] - anchors.boxes[:, 0]
    heights = anchors.boxes[:, 3] - anchors.boxes[:, 1]

    np.testing.assert_allclose(widths, 32 / np.sqrt([0.5, 1.0, 2.0]))
    np.testing.assert_allclose(heights, 32 * np.sqrt([0.5, 1.0, 2.0]))
    np.testing.assert_allclose(widths * heights, 32 * 32)


def test_flat_index_bounds():
    anchors = generate_anchors(AnchorConfig(strides=(8,)), 16, 16)

    assert anchors.flat_index(0, 1, 1, 0) == 3
    with pytest.raises(IndexError):
        anchors.flat_index(0, 2, 0, 0)
    with pytest.raises(IndexError):
        anchors.flat_index(0, 0, 0, 1)


def test_box_accessor():
    anchors = generate_anchors(AnchorConfig(strides=(8,), scale=1.0), 8, 8)

    assert anchors.box(0).to_list() == [0.0, 0.0, 8.0, 8.0]


@pytest.mark.parametrize('cfg', [
    {'strides': ()},
    {'strides': (16, 8)},
    {'strides': (8, 8)},
    {'strides': (0, 8)},
    {'scale': 0},
    {'ratios': (1.0, -1.0)},
])
def test_invalid_configs(cfg):
    with pytest.raises(ConfigError):
        AnchorConfig(**cfg)


def test_from_dict_rejects_unknown_keys():
    assert AnchorConfig.from_dict({'strides': [8, 16]}).strides == (8, 16)
    with pytest.raises(ConfigError):
        AnchorConfig.from_dict({'stride': [8]})


def test_invalid_image_size():
    with pytest.raises(ValueError):
        generate_anchors(AnchorConfig(), 0, 10)


def test_default_pyramid_on_256_image():
    anchors = generate_anchors(AnchorConfig(), 256, 256)

    assert anchors.num_level_anchors == [
        math.ceil(256 / s) ** 2 for s in (8, 16, 32, 64, 128)]
