import hashlib
import math
import numpy as np

from dataclasses import dataclass
from torch.utils.data import Dataset

from models.geometry import Box, as_box_array
from utils.config_utils import ConfigError, section_from_dict

# height / width range (or its inverse) of forced slender objects
SLENDER_ASPECT_RANGE = (3.5, 6.0)


@dataclass(frozen=True)
class SceneSpec:
    image_width: int = 256
    image_height: int = 256
    num_gts_range: tuple = (1, 5)
    size_range: tuple = (16.0, 128.0)
    aspect_range: tuple = (0.5, 2.0)
    num_classes: int = 3
    slender_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (self.image_width > 0 and self.image_height > 0):
            raise ConfigError(
                f'scene image size must be positive, got '
                f'{self.image_width}x{self.image_height}')

        def check_range(name, lo_bound):
            rng = getattr(self, name)
            if len(rng) != 2 or not lo_bound(rng[0]) or rng[0] > rng[1]:
                raise ConfigError(f'scene.{name} is not a valid range: {rng}')

        check_range('num_gts_range', lambda lo: lo >= 0)
        check_range('size_range', lambda lo: lo > 0)
        check_range('aspect_range', lambda lo: lo > 0)

        if self.size_range[0] > min(self.image_width, self.image_height):
            raise ConfigError(
                f'scene.size_range {self.size_range} does not fit a '
                f'{self.image_width}x{self.image_height} image')
        if self.num_classes < 1:
            raise ConfigError(
                f'scene.num_classes must be >= 1, got {self.num_classes}')
        if not 0 <= self.slender_fraction <= 1:
            raise ConfigError(
                f'scene.slender_fraction must be in [0, 1], '
                f'got {self.slender_fraction}')

    @classmethod
    def from_dict(cls, cfg):
        return section_from_dict(cls, cfg, 'scene')


@dataclass(frozen=True, eq=False)
class Scene:
    image_width: float
    image_height: float
    gt_boxes: np.ndarray
    gt_classes: np.ndarray

    def __len__(self):
        return len(self.gt_boxes)

    def pairs(self):
        return [
            (Box(*box.tolist()), int(cls))
            for box, cls in zip(self.gt_boxes, self.gt_classes)]

    def digest(self):
        h = hashlib.sha1()
        h.update(np.array(
            [self.image_width, self.image_height], dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.gt_boxes).tobytes())
        h.update(np.ascontiguousarray(self.gt_classes).tobytes())

        return h.hexdigest()

    def to_dict(self):
        return {
            'image': [self.image_width, self.image_height],
            'gts': [
                {'box': box.to_list(), 'class': cls}
                for box, cls in self.pairs()],
        }

    @classmethod
    def from_pairs(cls, image_width, image_height, pairs):
        boxes = as_box_array([box for box, _ in pairs])
        classes = np.array([c for _, c in pairs], dtype=np.int64)

        return cls(image_width, image_height, boxes, classes)


def sample_scene(spec, rng):
    width, height = spec.image_width, spec.image_height
    num_gts = int(rng.integers(
        spec.num_gts_range[0], spec.num_gts_range[1] + 1))

    log_size = np.log(spec.size_range)
    log_aspect = np.log(spec.aspect_range)
    log_slender = np.log(SLENDER_ASPECT_RANGE)

    pairs = []
    for _ in range(num_gts):
        side = math.exp(rng.uniform(*log_size))

        if rng.random() < spec.slender_fraction:
            aspect = math.exp(rng.uniform(*log_slender))
            if rng.random() < 0.5:
                aspect = 1 / aspect
        else:
            aspect = math.exp(rng.uniform(*log_aspect))

        w = side / math.sqrt(aspect)
        h = side * math.sqrt(aspect)

        # shrink oversized boxes, keeping their aspect
        shrink = min(1.0, width / w, height / h)
        # rounding can leave w * (width / w) a hair above width
        w, h = min(w * shrink, width), min(h * shrink, height)

        x1 = rng.uniform(0, width - w)
        y1 = rng.uniform(0, height - h)
        box = Box(x1, y1, min(x1 + w, width), min(y1 + h, height))

        pairs.append((box, int(rng.integers(spec.num_classes))))

    return Scene.from_pairs(width, height, pairs)


def generate_scene(spec: SceneSpec):
    """Deterministic list of (Box, class_id) pairs for `spec.seed`."""
    return sample_scene(spec, np.random.default_rng(spec.seed)).pairs()


class ScenesDataset(Dataset):
    """Fixed set of synthetic scenes, one child seed per scene."""

    def __init__(self, spec, num_scenes, seed=None):
        """
        Args:
            spec (SceneSpec): Scene distribution.
            num_scenes (int): Number of scenes to draw.
            seed (int, optional): Overrides spec.seed.
        """
        if num_scenes < 1:
            raise ConfigError(f'num_scenes must be >= 1, got {num_scenes}')

        self.spec = spec
        self.seed = spec.seed if seed is None else seed
        child_seeds = np.random.SeedSequence(self.seed).generate_state(
            num_scenes)
        self.scenes = [
            sample_scene(spec, np.random.default_rng(int(s)))
            for s in child_seeds]

    def __len__(self):
        return len(self.scenes)

    def __getitem__(self, idx):
        return self.scenes[idx]

    def digests(self):
        return [scene.digest() for scene in self.scenes]
