import logging
import numpy as np

from dataclasses import dataclass
from ignite.engine import Engine, Events
from scipy.special import expit

from datasets.synthetic_scenes import ScenesDataset
from models.anchor_generation import generate_anchors
from models.geometry import Box, bbox_transform, bbox_transform_inv, nms
from models.label_assignment import assign
from optimizers.focal_loss import (
    LossParams, binary_cross_entropy, classification_loss)
from optimizers.quality_targets import (
    QUALITY_BRANCHES, centerness_targets, iou_targets)
from optimizers.smooth_l1_loss import smooth_l1_loss
from utils.config_utils import ConfigError, section_from_dict
from utils.general_utils import cycle, first_nonfinite_row, window_mean

logger = logging.getLogger(__name__)

# sigmoid(-4.0) ~ 0.018, the usual focal-loss prior probability
CLS_LOGIT_INIT = -4.0

METRIC_COLUMNS = (
    'iteration',
    'total_loss',
    'cls_loss',
    'reg_loss',
    'quality_loss',
    'num_pos',
    'mean_pos_pred_iou',
    'churn',
    'mean_threshold',
)


class NonFiniteStateError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossConfig:
    cls_loss: str = 'focal'
    quality_branch: str = 'centerness'
    alpha: float = 0.25
    gamma: float = 2.0
    beta: float = 2.0
    vfl_alpha: float = 0.75
    smooth_l1_beta: float = 1.0 / 9.0
    cls_weight: float = 1.0
    reg_weight: float = 1.0
    quality_weight: float = 1.0

    def __post_init__(self):
        classification_loss(self.cls_loss)
        if self.quality_branch not in QUALITY_BRANCHES:
            raise ConfigError(
                f'losses.quality_branch must be one of {QUALITY_BRANCHES}, '
                f'got {self.quality_branch!r}')
        for name in ('cls_weight', 'reg_weight', 'quality_weight'):
            if not getattr(self, name) >= 0:
                raise ConfigError(f'losses.{name} must be >= 0')
        # validates the numeric parameters
        self.params

    @property
    def params(self):
        return LossParams(
            alpha=self.alpha,
            gamma=self.gamma,
            beta=self.beta,
            vfl_alpha=self.vfl_alpha,
            smooth_l1_beta=self.smooth_l1_beta)

    @classmethod
    def from_dict(cls, cfg):
        return section_from_dict(cls, cfg, 'losses')


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    learning_rate: float = 0.05
    seed: int = 0
    num_scenes: int = 20
    log_interval: int = 50
    summary_window: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(
                f'train.iterations must be >= 0, got {self.iterations}')
        if not self.learning_rate >= 0:
            raise ConfigError(
                f'train.learning_rate must be >= 0, '
                f'got {self.learning_rate}')
        if self.num_scenes < 1:
            raise ConfigError(
                f'train.num_scenes must be >= 1, got {self.num_scenes}')
        if self.log_interval < 0 or self.summary_window < 1:
            raise ConfigError(
                'train.log_interval must be >= 0 and '
                'train.summary_window >= 1')

    @classmethod
    def from_dict(cls, cfg):
        return section_from_dict(cls, cfg, 'train')


@dataclass(eq=False)
class SimState:
    """
    Per-anchor parameters shared by every scene: box deltas (A, 4), class
    logits (A, C) and quality logits (A,). `prev_labels` holds the labels
    of the previous iteration, None before the first one.
    """
    deltas: np.ndarray
    cls_logits: np.ndarray
    quality_logits: np.ndarray
    iteration: int
    max_iter: int
    learning_rate: float
    prev_labels: np.ndarray = None

    @classmethod
    def initial(cls, num_anchors, num_classes, max_iter, learning_rate):
        return cls(
            deltas=np.zeros((num_anchors, 4)),
            cls_logits=np.full((num_anchors, num_classes), CLS_LOGIT_INIT),
            quality_logits=np.zeros(num_anchors),
            iteration=0,
            max_iter=max_iter,
            learning_rate=learning_rate)

    def copy(self):
        return SimState(
            self.deltas.copy(),
            self.cls_logits.copy(),
            self.quality_logits.copy(),
            self.iteration,
            self.max_iter,
            self.learning_rate,
            None if self.prev_labels is None else self.prev_labels.copy())

    def predicted_boxes(self, anchors):
        return bbox_transform_inv(anchors.boxes, self.deltas)


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    total_loss: float
    cls_loss: float
    reg_loss: float
    quality_loss: float
    num_pos: int
    mean_pos_pred_iou: float
    churn: float
    mean_threshold: float

    def to_row(self):
        return [getattr(self, name) for name in METRIC_COLUMNS]


@dataclass(eq=False)
class SimulationResult:
    records: list
    state: SimState
    scene_digests: list


def _mean_threshold(assignment, assigner, num_gts):
    if num_gts == 0:
        return 0.0
    if assignment.kind == 'fixed':
        return float(assigner.pos_thr)

    return window_mean(assignment.thresholds, 0)


def train_step(state, scene, anchors, assigner, losses):
    """
    One gradient-descent step on one scene.

    Args:
        state (SimState): Current parameters; left untouched.
        scene (Scene): Ground truths of the visited scene.
        anchors (AnchorSet): Anchors shared by every scene.
        assigner (AssignerConfig): Label assignment rule.
        losses (LossConfig): Loss selection, parameters and weights.

    Output:
        state (SimState): Updated copy of the parameters.
        record (MetricsRecord): Metrics of this iteration.
    """
    params = losses.params
    deltas = state.deltas
    cls_logits = state.cls_logits
    quality_logits = state.quality_logits

    if len(deltas) != len(anchors):
        raise ValueError(
            f'state holds {len(deltas)} anchors, anchor set has '
            f'{len(anchors)}')
    if len(scene) and scene.gt_classes.max() >= cls_logits.shape[1]:
        raise ValueError(
            f'class id {int(scene.gt_classes.max())} outside '
            f'{cls_logits.shape[1]} classes')

    # decode, then assign with the decoded predictions
    pred_boxes = bbox_transform_inv(anchors.boxes, deltas)

    max_iter = max(state.max_iter, 1)
    assignment = assign(
        assigner,
        anchors,
        scene.gt_boxes,
        pred_boxes,
        min(state.iteration, max_iter),
        max_iter)
    labels = assignment.labels

    pos_idxs = np.flatnonzero(assignment.positive_mask)
    pos_gts = labels[pos_idxs]
    num_pos = len(pos_idxs)
    normalizer = max(num_pos, 1)

    gt_boxes = scene.gt_boxes[pos_gts]
    pred_ious = iou_targets(pred_boxes[pos_idxs], gt_boxes)

    # classification over every non-ignored anchor
    cls_targets = np.zeros_like(cls_logits)
    if losses.cls_loss == 'focal':
        cls_targets[pos_idxs, scene.gt_classes[pos_gts]] = 1.0
    else:
        cls_targets[pos_idxs, scene.gt_classes[pos_gts]] = pred_ious

    cls_eval = classification_loss(losses.cls_loss)(
        expit(cls_logits), cls_targets, params)
    valid = ~assignment.ignore_mask
    cls_loss = float(cls_eval.value[valid].sum()) / normalizer
    cls_grad = np.zeros_like(cls_logits)
    cls_grad[valid] = cls_eval.d_dlogit[valid] / normalizer

    # box regression on positives
    reg_targets = bbox_transform(anchors.boxes[pos_idxs], gt_boxes)
    reg_sum, reg_grad = smooth_l1_loss(
        deltas[pos_idxs], reg_targets, params.smooth_l1_beta)
    reg_loss = reg_sum / normalizer
    delta_grad = np.zeros_like(deltas)
    delta_grad[pos_idxs] = reg_grad / normalizer

    # quality branch on positives
    quality_loss = 0.0
    quality_grad = np.zeros_like(quality_logits)
    if losses.quality_branch != 'none' and num_pos:
        if losses.quality_branch == 'centerness':
            quality_targets = centerness_targets(
                anchors.centers[pos_idxs], gt_boxes)
        else:
            quality_targets = pred_ious

        quality_eval = binary_cross_entropy(
            expit(quality_logits[pos_idxs]), quality_targets)
        quality_loss = float(quality_eval.value.sum()) / normalizer
        quality_grad[pos_idxs] = quality_eval.d_dlogit / normalizer

    bad = first_nonfinite_row(delta_grad, cls_grad, quality_grad)
    if bad is not None:
        raise NonFiniteStateError(
            f'non-finite gradient at iteration {state.iteration}, '
            f'anchor {bad}')

    lr = state.learning_rate
    new_state = state.copy()
    new_state.deltas -= lr * losses.reg_weight * delta_grad
    new_state.cls_logits -= lr * losses.cls_weight * cls_grad
    new_state.quality_logits -= \
        lr * losses.quality_weight * quality_grad

    bad = first_nonfinite_row(
        new_state.deltas,
        new_state.cls_logits,
        new_state.quality_logits)
    if bad is not None:
        raise NonFiniteStateError(
            f'non-finite parameters after iteration {state.iteration}, '
            f'anchor {bad}')

    churn = 0.0
    if state.prev_labels is not None:
        churn = float(np.mean(state.prev_labels != labels))
    new_state.prev_labels = labels.copy()
    new_state.iteration = state.iteration + 1

    total_loss = (
        losses.cls_weight * cls_loss
        + losses.reg_weight * reg_loss
        + losses.quality_weight * quality_loss)

    record = MetricsRecord(
        iteration=state.iteration,
        total_loss=total_loss,
        cls_loss=cls_loss,
        reg_loss=reg_loss,
        quality_loss=quality_loss,
        num_pos=num_pos,
        mean_pos_pred_iou=window_mean(pred_ious, 0),
        churn=churn,
        mean_threshold=_mean_threshold(assignment, assigner, len(scene)))

    return new_state, record


def run_simulation(config, progress=False):
    """
    Train over a fixed set of scenes, visited round-robin.

    Args:
        config (ExperimentConfig): Full experiment configuration.
        progress (bool): Attach a tqdm progress bar.

    Output:
        SimulationResult
    """
    spec = config.scene
    train_cfg = config.train
    max_iter = train_cfg.iterations

    anchors = generate_anchors(
        config.anchors, spec.image_width, spec.image_height)
    dataset = ScenesDataset(spec, train_cfg.num_scenes, seed=train_cfg.seed)

    state = SimState.initial(
        len(anchors),
        spec.num_classes,
        max_iter,
        train_cfg.learning_rate)
    records = []

    logger.info(
        'Simulating %d iterations, %s assigner, %d anchors, %d scenes, '
        'seed %d', max_iter, config.assigner.kind, len(anchors),
        len(dataset), train_cfg.seed)

    if max_iter == 0:
        return SimulationResult(records, state, dataset.digests())

    holder = {'state': state}

    def _update(engine, batch):
        holder['state'], record = train_step(
            holder['state'],
            dataset[batch],
            anchors,
            config.assigner,
            config.losses)

        return record

    trainer = Engine(_update)

    @trainer.on(Events.ITERATION_COMPLETED)
    def collect_metrics(trainer):
        records.append(trainer.state.output)

    if train_cfg.log_interval > 0:
        @trainer.on(Events.ITERATION_COMPLETED(every=train_cfg.log_interval))
        def log_training_loss(trainer):
            record = trainer.state.output
            logger.info(
                'Iteration[{}] Loss: {:.8f} Reg: {:.8f} Pos: {}'.format(
                    record.iteration,
                    record.total_loss,
                    record.reg_loss,
                    record.num_pos))

    if progress:
        from ignite.contrib.handlers.tqdm_logger import ProgressBar

        ProgressBar(persist=False).attach(trainer)

    trainer.run(
        cycle(range(len(dataset))), max_epochs=1, epoch_length=max_iter)

    return SimulationResult(records, holder['state'], dataset.digests())


def summarize(records, window):
    """Trailing-window means of every metric column."""
    return {
        name: window_mean([getattr(r, name) for r in records], window)
        for name in METRIC_COLUMNS if name != 'iteration'}


def predict(
    state,
    anchors,
    quality_branch='centerness',
    score_thr=0.05,
    nms_thr=0.6
):
    """
    Detections of the current parameters: class probability times
    quality probability, then per-class greedy NMS.

    Output:
        detections (list of (Box, float, int)): Box, score and class,
            highest score first.
    """
    boxes = state.predicted_boxes(anchors)
    scores = expit(state.cls_logits)
    if quality_branch != 'none':
        scores = scores * expit(state.quality_logits)[:, None]

    detections = []
    for cls in range(scores.shape[1]):
        keep_idxs = np.flatnonzero(scores[:, cls] > score_thr)
        # decoded boxes may collapse for extreme deltas
        keep_idxs = keep_idxs[
            (boxes[keep_idxs, 2] > boxes[keep_idxs, 0])
            & (boxes[keep_idxs, 3] > boxes[keep_idxs, 1])]
        if not len(keep_idxs):
            continue

        kept = nms(boxes[keep_idxs], scores[keep_idxs, cls], nms_thr)
        for k in kept:
            idx = keep_idxs[k]
            detections.append(
                (Box(*boxes[idx].tolist()), float(scores[idx, cls]), cls))

    detections.sort(key=lambda d: -d[1])

    return detections