"""
Named configuration variants for paired comparisons.

A variant is one of:
    - an assigner kind: fixed, atss, dynamic_atss
    - a fixed-threshold preset: rpn, ssd, retinanet
    - a classification loss: focal, qfl, vfl
    - a quality branch: centerness, iou, none
    - a weight schedule: constant, d_up, d_down
    - a PIoU:AIoU ratio such as 1:1, 0.5:1, d_up:1 or d_up:d_down
    - the shorthand `weights`, the full ratio grid
"""
import re

from dataclasses import replace

from models.label_assignment import ASSIGNER_KINDS, FIXED_PRESETS, SCHEDULES
from optimizers.focal_loss import CLASSIFICATION_LOSSES
from optimizers.quality_targets import QUALITY_BRANCHES
from utils.config_utils import ConfigError

WEIGHT_GRID = (
    '1:1',
    '0.5:1',
    '1.5:1',
    '1:0.5',
    '1:1.5',
    'd_up:1',
    '1:d_down',
    'd_up:d_down',
)

# single schedule names act on the IoU they are usually paired with
SCHEDULE_ALIASES = {
    'constant': '1:1',
    'd_up': 'd_up:1',
    'd_down': '1:d_down',
}

_NUMBER = re.compile(r'^\d+(\.\d*)?$|^\.\d+$')


def expand_variants(spec):
    """
    Split a comma-separated variant list, expanding `weights`.

    Output:
        names (list of str): Non-empty, duplicates dropped in order.
    """
    names = []
    for name in spec.split(','):
        name = name.strip()
        if not name:
            continue
        for expanded in (WEIGHT_GRID if name == 'weights' else (name,)):
            if expanded not in names:
                names.append(expanded)

    if not names:
        raise ConfigError('no variants given')

    return names


def _ratio_side(token, variant):
    if token in SCHEDULES:
        return 1.0, token
    if _NUMBER.match(token):
        return float(token), 'constant'

    raise ConfigError(
        f'variant {variant!r}: {token!r} is neither a number nor one of '
        f'{SCHEDULES}')


def _apply_ratio(config, ratio, variant):
    p_token, a_token = ratio.split(':')
    w_p, schedule_p = _ratio_side(p_token.strip(), variant)
    w_a, schedule_a = _ratio_side(a_token.strip(), variant)

    try:
        assigner = replace(
            config.assigner,
            kind='dynamic_atss',
            preset=None,
            w_p=w_p,
            w_a=w_a,
            schedule_p=schedule_p,
            schedule_a=schedule_a)
    except ConfigError as e:
        raise ConfigError(f'variant {variant!r}: {e}') from e

    return replace(config, assigner=assigner)


def apply_variant(config, variant):
    """
    Derive the config of one named variant from `config`.

    Args:
        config (ExperimentConfig): Base configuration.
        variant (str): Variant name.

    Output:
        config (ExperimentConfig)
    """
    if variant in ASSIGNER_KINDS:
        return replace(
            config, assigner=replace(config.assigner, kind=variant,
                                     preset=None))
    if variant in FIXED_PRESETS:
        return replace(
            config, assigner=replace(config.assigner, kind='fixed',
                                     preset=variant))
    if variant in CLASSIFICATION_LOSSES:
        return replace(
            config, losses=replace(config.losses, cls_loss=variant))
    if variant in QUALITY_BRANCHES:
        return replace(
            config, losses=replace(config.losses, quality_branch=variant))
    if variant in SCHEDULE_ALIASES:
        return _apply_ratio(config, SCHEDULE_ALIASES[variant], variant)
    if variant.count(':') == 1:
        return _apply_ratio(config, variant, variant)

    raise ConfigError(f'unknown variant {variant!r}')
