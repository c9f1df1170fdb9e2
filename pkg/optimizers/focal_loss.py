import numpy as np

from dataclasses import dataclass

from utils.config_utils import ConfigError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossParams:
    alpha: float = 0.25
    gamma: float = 2.0
    beta: float = 2.0
    vfl_alpha: float = 0.75
    smooth_l1_beta: float = 1.0 / 9.0

    def __post_init__(self):
        for name in ('alpha', 'gamma', 'beta', 'vfl_alpha', 'smooth_l1_beta'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigError(
                    f'losses.{name} must be finite and >= 0, got {value}')
        if self.smooth_l1_beta == 0:
            raise ConfigError('losses.smooth_l1_beta must be > 0')


@dataclass(frozen=True, eq=False)
class LossEval:
    """Loss value with its derivative w.r.t. the probability and logit."""
    value: np.ndarray
    d_dp: np.ndarray
    d_dlogit: np.ndarray


def _loss_eval(value, d_dp, p):
    d_dlogit = d_dp * p * (1 - p)
    if np.ndim(value) == 0:
        return LossEval(value[()], d_dp[()], d_dlogit[()])

    return LossEval(value, d_dp, d_dlogit)


def _clamp(p):
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1 - PROB_EPS)


def _negative_branch(p, alpha, gamma):
    """-alpha * p^gamma * ln(1 - p) and its derivative."""
    log_q = np.log1p(-p)
    value = -alpha * p ** gamma * log_q
    d_dp = -alpha * (gamma * p ** (gamma - 1) * log_q - p ** gamma / (1 - p))

    return value, d_dp


def focal_loss(p, y, params=LossParams()):
    """
    Binary focal loss on probabilities.

    Args:
        p (float or np.ndarray): Predicted probabilities.
        y (float or np.ndarray): Hard targets in {0, 1}.
        params (LossParams): alpha and gamma are used.

    Output:
        LossEval
    """
    p = _clamp(p)
    y = np.asarray(y, dtype=np.float64)
    alpha, gamma = params.alpha, params.gamma

    log_p = np.log(p)
    pos_value = -alpha * (1 - p) ** gamma * log_p
    pos_d_dp = alpha * (
        gamma * (1 - p) ** (gamma - 1) * log_p - (1 - p) ** gamma / p)

    neg_value, neg_d_dp = _negative_branch(p, 1 - alpha, gamma)

    positive = y > 0.5
    value = np.where(positive, pos_value, neg_value)
    d_dp = np.where(positive, pos_d_dp, neg_d_dp)

    return _loss_eval(value, d_dp, p)


def _cross_entropy(p, y):
    value = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    d_dp = (p - y) / (p * (1 - p))

    return value, d_dp


def qfl(p, y, params=LossParams()):
    """Quality focal loss: |y - p|^beta scaled cross-entropy on soft y."""
    p = _clamp(p)
    y = np.asarray(y, dtype=np.float64)
    beta = params.beta

    ce, ce_d_dp = _cross_entropy(p, y)

    diff = p - y
    scale = np.abs(diff) ** beta
    # the modulating factor is flat where p == y
    with np.errstate(divide='ignore', invalid='ignore'):
        scale_d_dp = np.where(
            diff == 0, 0.0,
            beta * np.abs(diff) ** (beta - 1) * np.sign(diff))

    value = scale * ce
    d_dp = scale_d_dp * ce + scale * ce_d_dp

    return _loss_eval(value, d_dp, p)


def vfl(p, y, params=LossParams()):
    """Varifocal loss: y-weighted cross-entropy on positives, focal-style
    down-weighting of negatives."""
    p = _clamp(p)
    y = np.asarray(y, dtype=np.float64)

    ce, ce_d_dp = _cross_entropy(p, y)
    pos_value = y * ce
    pos_d_dp = y * ce_d_dp

    neg_value, neg_d_dp = _negative_branch(p, params.vfl_alpha, params.gamma)

    positive = y > 0
    value = np.where(positive, pos_value, neg_value)
    d_dp = np.where(positive, pos_d_dp, neg_d_dp)

    return _loss_eval(value, d_dp, p)


def binary_cross_entropy(p, y, params=None):
    p = _clamp(p)
    y = np.asarray(y, dtype=np.float64)
    value, d_dp = _cross_entropy(p, y)

    return _loss_eval(value, d_dp, p)


CLASSIFICATION_LOSSES = {
    'focal': focal_loss,
    'qfl': qfl,
    'vfl': vfl,
}


def classification_loss(name):
    if name not in CLASSIFICATION_LOSSES:
        raise ConfigError(
            f'cls_loss must be one of {sorted(CLASSIFICATION_LOSSES)}, '
            f'got {name!r}')

    return CLASSIFICATION_LOSSES[name]
