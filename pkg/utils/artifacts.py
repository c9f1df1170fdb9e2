import hashlib
import json
import logging
import os
import pandas as pd

from models.label_assignment import Assignment
from train.train_simulator import METRIC_COLUMNS, MetricsRecord, summarize

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'

COMPARISON_COLUMNS = (
    'variant',
    'kind',
    'w_p',
    'w_a',
    'schedule_p',
    'schedule_a',
    'cls_loss',
    'quality_branch',
    'seed',
    'scenes_digest',
    'reg_loss',
    'mean_pos_pred_iou',
    'num_pos',
)


def scenes_digest(scene_digests):
    """One hash over the ordered per-scene digests."""
    h = hashlib.sha1()
    for digest in scene_digests:
        h.update(digest.encode('ascii'))

    return h.hexdigest()


def write_metrics_csv(records, path):
    """Write one row per iteration in the frozen column order."""
    df = pd.DataFrame(
        [r.to_row() for r in records], columns=list(METRIC_COLUMNS))
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info('Wrote %d metric rows to %s', len(df), path)

    return path


def read_metrics_csv(path):
    df = pd.read_csv(path)
    if tuple(df.columns) != METRIC_COLUMNS:
        raise ValueError(f'{path}: unexpected columns {list(df.columns)}')

    return [
        MetricsRecord(
            iteration=int(row['iteration']),
            total_loss=float(row['total_loss']),
            cls_loss=float(row['cls_loss']),
            reg_loss=float(row['reg_loss']),
            quality_loss=float(row['quality_loss']),
            num_pos=int(row['num_pos']),
            mean_pos_pred_iou=float(row['mean_pos_pred_iou']),
            churn=float(row['churn']),
            mean_threshold=float(row['mean_threshold']))
        for row in df.to_dict('records')]


def write_json(obj, path):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2)
        f.write('\n')

    return path


def read_json(path):
    with open(path, 'r') as f:
        return json.load(f)


def build_summary(result, config):
    window = config.train.summary_window

    return {
        'assigner': config.assigner.kind,
        'cls_loss': config.losses.cls_loss,
        'quality_branch': config.losses.quality_branch,
        'seed': config.train.seed,
        'iterations': len(result.records),
        'summary_window': window,
        'final_window': summarize(result.records, window),
        'scene_digests': list(result.scene_digests),
        'scenes_digest': scenes_digest(result.scene_digests),
        'config': config.to_dict(),
    }


def write_summary(result, config, path):
    return write_json(build_summary(result, config), path)


def write_assignment(assignment, path):
    return write_json(assignment.to_dict(), path)


def read_assignment(path):
    return Assignment.from_dict(read_json(path))


def write_comparison_csv(rows, path):
    df = pd.DataFrame(rows, columns=list(COMPARISON_COLUMNS))
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info('Wrote %d variants to %s', len(df), path)

    return path


def make_output_dir(path):
    os.makedirs(path, exist_ok=True)

    return path
