"""Label assignment experiments: assign, simulate, compare, oracle-check."""
import json
import logging
import numpy as np
import os
import sys
import yaml

from argparse import ArgumentParser, ArgumentDefaultsHelpFormatter
from joblib import Parallel, delayed

from datasets.synthetic_scenes import Scene
from experiments.config import ExperimentConfig, load_cfg
from experiments.variants import apply_variant, expand_variants
from models.anchor_generation import generate_anchors
from models.geometry import Box, InvalidBoxError, as_box_array, iou
from models.label_assignment import (
    AssignerConfig, assign, assign_atss, assign_dynamic_atss,
    check_assignment)
from optimizers.focal_loss import (
    LossParams, binary_cross_entropy, focal_loss, qfl, vfl)
from train.train_simulator import run_simulation, summarize
from utils.artifacts import (
    make_output_dir, scenes_digest, write_assignment, write_comparison_csv,
    write_json, write_metrics_csv, write_summary)
from utils.config_utils import ConfigError
from utils.general_utils import env_int, safe_dirname
from utils.reference_oracles import (
    assignments_match, finite_diff, naive_assign, random_case,
    rasterized_iou)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

SCENE_KEYS = ('image', 'gts', 'predicted_boxes')
GT_KEYS = ('box', 'class')


def _read_cfg(config_file, seed=None):
    if config_file is None:
        config = ExperimentConfig()
        if seed is not None:
            config = config.with_seed(seed)
        return config

    return load_cfg(config_file, seed)


def load_scene(scene_file):
    """
    Parse a scene file.

    Output:
        scene (Scene)
        predicted_boxes (np.ndarray or None)
    """
    with open(scene_file, 'r') as f:
        raw = yaml.safe_load(f)

    if not isinstance(raw, dict):
        raise ConfigError(f'{scene_file}: scene must be a mapping')
    unknown = sorted(set(raw) - set(SCENE_KEYS))
    if unknown:
        raise ConfigError(f'{scene_file}: unknown key(s) {unknown}')
    for key in ('image', 'gts'):
        if key not in raw:
            raise ConfigError(f'{scene_file}: missing "{key}"')

    image = raw['image']
    if not (isinstance(image, list) and len(image) == 2
            and all(isinstance(v, (int, float)) and v > 0 for v in image)):
        raise ConfigError(f'image: expected [W, H] > 0, got {image!r}')

    if not isinstance(raw['gts'], list):
        raise ConfigError('gts: expected a list')

    pairs = []
    for i, gt in enumerate(raw['gts']):
        if not isinstance(gt, dict) or 'box' not in gt:
            raise ConfigError(f'gts[{i}]: expected {{"box": [...], ...}}')
        unknown = sorted(set(gt) - set(GT_KEYS))
        if unknown:
            raise ConfigError(f'gts[{i}]: unknown key(s) {unknown}')
        try:
            box = Box.from_list(gt['box'])
        except (ValueError, TypeError) as e:
            raise InvalidBoxError(f'gts[{i}].box: {e}') from e
        cls = gt.get('class', 0)
        if isinstance(cls, bool) or not isinstance(cls, int) or cls < 0:
            raise ConfigError(f'gts[{i}].class: expected an int >= 0')
        pairs.append((box, cls))

    predicted_boxes = None
    if raw.get('predicted_boxes') is not None:
        try:
            predicted_boxes = as_box_array(
                [Box.from_list(b) for b in raw['predicted_boxes']])
        except (ValueError, TypeError) as e:
            raise InvalidBoxError(f'predicted_boxes: {e}') from e

    return Scene.from_pairs(image[0], image[1], pairs), predicted_boxes


def cmd_assign(scene_file, config_file=None, out_file=None, iteration=0):
    config = _read_cfg(config_file)
    scene, predicted_boxes = load_scene(scene_file)

    anchors = generate_anchors(
        config.anchors, scene.image_width, scene.image_height)
    if predicted_boxes is not None and len(predicted_boxes) != len(anchors):
        raise ConfigError(
            f'predicted_boxes: {len(predicted_boxes)} boxes for '
            f'{len(anchors)} anchors')

    max_iter = max(config.train.iterations, 1)
    assignment = assign(
        config.assigner,
        anchors,
        scene.gt_boxes,
        predicted_boxes,
        min(iteration, max_iter),
        max_iter)
    check_assignment(assignment, anchors, scene.gt_boxes)

    logger.info(
        '%s assignment: %d anchors, %d GTs, %d positives',
        assignment.kind, len(anchors), len(scene), assignment.num_positives)

    if out_file is None:
        print(json.dumps(assignment.to_dict(), indent=2))
    else:
        write_assignment(assignment, out_file)

    return EXIT_OK


def cmd_simulate(config_file=None, out_dir=None, seed=None, progress=False):
    config = _read_cfg(config_file, seed)
    if out_dir is not None:
        config = config.with_output_dir(os.path.abspath(out_dir))

    print(f'seed: {config.train.seed}')
    result = run_simulation(config, progress=progress)

    make_output_dir(config.output.dir)
    if 'csv' in config.output.formats:
        write_metrics_csv(
            result.records, os.path.join(config.output.dir, 'metrics.csv'))
    if 'json' in config.output.formats:
        write_summary(
            result, config, os.path.join(config.output.dir, 'summary.json'))

    return EXIT_OK


def _run_variant(name, config, out_dir):
    result = run_simulation(config)

    variant_dir = make_output_dir(
        os.path.join(out_dir, 'variants', safe_dirname(name)))
    if 'csv' in config.output.formats:
        write_metrics_csv(
            result.records, os.path.join(variant_dir, 'metrics.csv'))
    if 'json' in config.output.formats:
        write_summary(
            result, config, os.path.join(variant_dir, 'summary.json'))

    window = summarize(result.records, config.train.summary_window)
    assigner = config.assigner

    return {
        'variant': name,
        'kind': assigner.kind,
        'w_p': assigner.w_p,
        'w_a': assigner.w_a,
        'schedule_p': assigner.schedule_p,
        'schedule_a': assigner.schedule_a,
        'cls_loss': config.losses.cls_loss,
        'quality_branch': config.losses.quality_branch,
        'seed': config.train.seed,
        'scenes_digest': scenes_digest(result.scene_digests),
        'reg_loss': window['reg_loss'],
        'mean_pos_pred_iou': window['mean_pos_pred_iou'],
        'num_pos': window['num_pos'],
    }


def cmd_compare(config_file=None, variants='', out_dir=None, seed=None):
    base = _read_cfg(config_file, seed)
    if out_dir is not None:
        base = base.with_output_dir(os.path.abspath(out_dir))

    names = expand_variants(variants)
    configs = [apply_variant(base, name) for name in names]

    n_jobs = min(env_int('ASSIGNKIT_THREADS', 1), len(configs))
    logger.info(
        'Comparing %d variants (seed %d, %d threads): %s',
        len(names), base.train.seed, n_jobs, ', '.join(names))

    make_output_dir(base.output.dir)
    rows = Parallel(n_jobs=n_jobs, backend='threading')(
        delayed(_run_variant)(name, config, base.output.dir)
        for name, config in zip(names, configs))

    write_comparison_csv(rows, os.path.join(base.output.dir, 'comparison.csv'))

    return EXIT_OK


def _gradient_case(rng):
    name = ('focal', 'qfl', 'vfl', 'bce')[int(rng.integers(4))]
    params = LossParams(
        alpha=float(rng.uniform(0.1, 0.9)),
        gamma=float(rng.uniform(0.0, 3.0)),
        beta=float(rng.uniform(2.0, 3.0)),
        vfl_alpha=float(rng.uniform(0.1, 0.9)))
    p = float(rng.uniform(0.01, 0.99))

    if name == 'focal':
        y = float(rng.integers(2))
    elif name == 'vfl' and rng.random() < 0.5:
        y = 0.0
    else:
        y = float(rng.uniform(0.0, 1.0))
        # soft-target losses are stationary or only twice
        # differentiable at p == y
        if abs(p - y) < 0.05:
            y = min(p + 0.05 + rng.uniform(0.0, 0.1), 1.0) \
                if p < 0.5 else max(p - 0.05 - rng.uniform(0.0, 0.1), 0.0)

    loss = {
        'focal': focal_loss,
        'qfl': qfl,
        'vfl': vfl,
        'bce': binary_cross_entropy,
    }[name]

    return name, loss, p, y, params


def run_oracle_checks(seed=0, num_scenes=200, num_pairs=2000, num_points=500):
    """
    Cross-check assignment, IoU and loss gradients against the
    brute-force references.

    Output:
        report (dict): check name -> {'checked': n, 'failed': m}.
    """
    rng = np.random.default_rng(seed)
    report = {
        name: {'checked': 0, 'failed': 0}
        for name in ('atss', 'dynamic_atss', 'degenerate', 'iou',
                     'gradients')}

    def record(name, ok):
        report[name]['checked'] += 1
        if not ok:
            report[name]['failed'] += 1

    for _ in range(num_scenes):
        anchors, gts, predicted_boxes = random_case(rng)
        k = int(rng.integers(1, 12))

        static = assign_atss(anchors, gts, k)
        record('atss', assignments_match(
            static, naive_assign(anchors, gts, k, 'atss')))

        w_p, w_a = [(1.0, 1.0), (0.5, 1.0), (1.5, 1.0), (1.0, 0.5)][
            int(rng.integers(4))]
        config = AssignerConfig(kind='dynamic_atss', k=k, w_p=w_p, w_a=w_a)
        dynamic = assign_dynamic_atss(
            anchors, predicted_boxes, gts, config, 0, 1)
        record('dynamic_atss', assignments_match(
            dynamic, naive_assign(
                anchors, gts, k, 'dynamic', predicted_boxes, w_p, w_a)))

        config = AssignerConfig(kind='dynamic_atss', k=k)
        degenerate = assign_dynamic_atss(
            anchors, anchors.boxes, gts, config, 0, 1)
        record('degenerate',
               np.array_equal(degenerate.labels, static.labels)
               and np.array_equal(degenerate.num_pos, static.num_pos))

    for _ in range(num_pairs):
        corners = rng.integers(0, 257, size=(2, 4))
        a = Box(*_ordered(corners[0]))
        b = Box(*_ordered(corners[1]))
        record('iou', abs(iou(a, b) - rasterized_iou(a, b)) <= 1e-12)

    for _ in range(num_points):
        name, loss, p, y, params = _gradient_case(rng)
        analytic = float(loss(p, y, params).d_dp)
        numeric = finite_diff(loss, p, y, params, 1e-5)
        ok = abs(analytic - numeric) <= 1e-6 * abs(numeric) + 1e-9
        if not ok:
            logger.warning(
                '%s gradient mismatch at p=%r, y=%r: %r vs %r',
                name, p, y, analytic, numeric)
        record('gradients', ok)

    return report


def _ordered(corners):
    x1, x2 = sorted(int(c) for c in (corners[0], corners[2]))
    y1, y2 = sorted(int(c) for c in (corners[1], corners[3]))
    # keep a positive extent
    if x1 == x2:
        x1, x2 = (x1 - 1, x2) if x1 > 0 else (x1, x2 + 1)
    if y1 == y2:
        y1, y2 = (y1 - 1, y2) if y1 > 0 else (y1, y2 + 1)

    return float(x1), float(y1), float(x2), float(y2)


def cmd_oracle_check(seed=0, num_scenes=200, out_file=None):
    report = run_oracle_checks(seed, num_scenes)

    failed = 0
    for name, counts in report.items():
        logger.info(
            'oracle %s: %d checked, %d failed',
            name, counts['checked'], counts['failed'])
        failed += counts['failed']

    if out_file is not None:
        write_json({'seed': seed, 'checks': report}, out_file)

    if failed:
        logger.error('%d oracle check(s) failed', failed)
        return EXIT_INTERNAL_ERROR

    return EXIT_OK


def get_parser():
    """Get parser object."""
    parser = ArgumentParser(description=__doc__,
                            formatter_class=ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose",
                        action="store_true",
                        help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    assign_parser = subparsers.add_parser(
        "assign", help="label the anchors of one scene",
        formatter_class=ArgumentDefaultsHelpFormatter)
    assign_parser.add_argument("--scene",
                               dest="scene_file",
                               metavar="FILE",
                               required=True,
                               help="scene JSON file")
    assign_parser.add_argument("--config",
                               dest="config_file",
                               metavar="FILE",
                               help="experiment config file")
    assign_parser.add_argument("--out",
                               dest="out_file",
                               metavar="FILE",
                               help="assignment JSON, stdout if omitted")
    assign_parser.add_argument("--iteration",
                               type=int,
                               default=0,
                               help="iteration for scheduled weights")

    simulate_parser = subparsers.add_parser(
        "simulate", help="run the training simulator",
        formatter_class=ArgumentDefaultsHelpFormatter)
    simulate_parser.add_argument("--config",
                                 dest="config_file",
                                 metavar="FILE",
                                 help="experiment config file")
    simulate_parser.add_argument("--out",
                                 dest="out_dir",
                                 metavar="DIR",
                                 help="overrides output.dir")
    simulate_parser.add_argument("--seed",
                                 type=int,
                                 help="overrides train.seed")
    simulate_parser.add_argument("--progress",
                                 action="store_true",
                                 help="show a progress bar")

    compare_parser = subparsers.add_parser(
        "compare", help="paired runs of named variants",
        formatter_class=ArgumentDefaultsHelpFormatter)
    compare_parser.add_argument("--config",
                                dest="config_file",
                                metavar="FILE",
                                help="experiment config file")
    compare_parser.add_argument("--variants",
                                default="",
                                metavar="A,B,C",
                                help="comma-separated variant names")
    compare_parser.add_argument("--out",
                                dest="out_dir",
                                metavar="DIR",
                                help="overrides output.dir")
    compare_parser.add_argument("--seed",
                                type=int,
                                help="overrides train.seed")

    oracle_parser = subparsers.add_parser(
        "oracle-check", help="cross-check against brute-force references",
        formatter_class=ArgumentDefaultsHelpFormatter)
    oracle_parser.add_argument("--seed", type=int, default=0)
    oracle_parser.add_argument("--num-scenes", type=int, default=200)
    oracle_parser.add_argument("--out",
                               dest="out_file",
                               metavar="FILE",
                               help="JSON report")

    return parser


def main(argv=None):
    args = get_parser().parse_args(argv)

    logging.basicConfig(format='%(asctime)s %(levelname)s %(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr)

    try:
        if args.command == 'assign':
            return cmd_assign(
                args.scene_file, args.config_file, args.out_file,
                args.iteration)
        elif args.command == 'simulate':
            return cmd_simulate(
                args.config_file, args.out_dir, args.seed, args.progress)
        elif args.command == 'compare':
            return cmd_compare(
                args.config_file, args.variants, args.out_dir, args.seed)

        return cmd_oracle_check(args.seed, args.num_scenes, args.out_file)
    except (FloatingPointError, AssertionError) as e:
        logger.error('internal error: %s', e)
        return EXIT_INTERNAL_ERROR
    except (ValueError, KeyError, TypeError, OSError, yaml.YAMLError) as e:
        logger.error('%s', e)
        return EXIT_USER_ERROR


if __name__ == '__main__':
    sys.exit(main())
