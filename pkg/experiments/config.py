import logging
import os
import yaml

from dataclasses import dataclass, field, replace

from datasets.synthetic_scenes import SceneSpec
from models.anchor_generation import AnchorConfig
from models.label_assignment import AssignerConfig
from train.train_simulator import LossConfig, TrainConfig
from utils.config_utils import ConfigError, section_from_dict, section_to_dict

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ('csv', 'json')


@dataclass(frozen=True)
class OutputConfig:
    dir: str = 'outputs'
    formats: tuple = OUTPUT_FORMATS

    def __post_init__(self):
        unknown = sorted(set(self.formats) - set(OUTPUT_FORMATS))
        if unknown:
            raise ConfigError(
                f'output.formats must be a subset of {OUTPUT_FORMATS}, '
                f'got {unknown}')

    @classmethod
    def from_dict(cls, cfg):
        return section_from_dict(cls, cfg, 'output')


SECTIONS = {
    'anchors': AnchorConfig,
    'assigner': AssignerConfig,
    'losses': LossConfig,
    'scene': SceneSpec,
    'train': TrainConfig,
    'output': OutputConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    assigner: AssignerConfig = field(default_factory=AssignerConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, cfg):
        """
        Validate every section of a raw config dict.

        Args:
            cfg (dict): Parsed config; missing sections take defaults.

        Output:
            config (ExperimentConfig)
        """
        if cfg is None:
            cfg = {}
        if not isinstance(cfg, dict):
            raise ConfigError(
                f'config must be a mapping, got {type(cfg).__name__}')

        unknown = sorted(set(cfg) - set(SECTIONS))
        if unknown:
            raise ConfigError(f'unknown config section(s): {unknown}')

        sections = {
            name: section_cls.from_dict(cfg.get(name))
            for name, section_cls in SECTIONS.items()}

        # train.seed falls back to scene.seed
        train_cfg = cfg.get('train') or {}
        if 'seed' not in train_cfg:
            sections['train'] = replace(
                sections['train'], seed=sections['scene'].seed)

        return cls(**sections)

    def to_dict(self):
        return section_to_dict(self)

    def with_seed(self, seed):
        return replace(self, train=replace(self.train, seed=seed))

    def with_output_dir(self, path):
        return replace(self, output=replace(self.output, dir=path))


def load_cfg(filepath, seed=None):
    """
    Load a YAML (or JSON) experiment file.

    Args:
        filepath (str): Path to the config file.
        seed (int, optional): Overrides train.seed.

    Output:
        config (ExperimentConfig): Output dir absolute w.r.t. the file.
    """
    with open(filepath, 'r') as stream:
        try:
            cfg = yaml.safe_load(stream)
        except yaml.YAMLError as e:
            raise ConfigError(f'{filepath}: {e}') from e

    config = ExperimentConfig.from_dict(cfg)

    out_dir = os.path.abspath(
        os.path.join(os.path.dirname(os.path.abspath(filepath)),
                     config.output.dir))
    config = config.with_output_dir(out_dir)

    if seed is not None:
        config = config.with_seed(seed)

    logger.debug('Loaded %s (seed %d)', filepath, config.train.seed)

    return config
