import numpy as np

from models.geometry import Deltas


def smooth_l1_loss(pred, target, beta=1.0 / 9.0):
    """
    Smooth L1 summed over every component.

    Args:
        pred (np.ndarray): Predicted deltas, any shape.
        target (np.ndarray): Regression targets, same shape as pred.
        beta (float): Transition point between the quadratic and linear
            pieces.

    Output:
        value (float): Summed loss.
        grad (np.ndarray): Derivative w.r.t. pred, same shape as pred.
    """
    if not beta > 0:
        raise ValueError(f'beta must be > 0, got {beta}')

    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    diff = pred - target
    abs_diff = np.abs(diff)
    quadratic = abs_diff < beta

    loss = np.where(quadratic, 0.5 * diff * diff / beta, abs_diff - 0.5 * beta)
    grad = np.where(quadratic, diff / beta, np.sign(diff))

    return float(loss.sum()), grad


def smooth_l1(pred: Deltas, target: Deltas, beta=1.0 / 9.0):
    value, grad = smooth_l1_loss(pred.as_array(), target.as_array(), beta)

    return value, Deltas(*grad.tolist())
