import math
import numpy as np
import os


def cycle(iterable):
    while True:
        for x in iterable:
            yield x


def window_mean(values, window):
    """Mean of the trailing `window` values, 0.0 for an empty series."""
    values = list(values)[-window:] if window > 0 else list(values)
    if not values:
        return 0.0

    return math.fsum(values) / len(values)


def safe_dirname(name):
    return ''.join(c if c.isalnum() or c in '-_.' else '-' for c in name)


def env_int(name, default):
    value = os.environ.get(name)
    if value is None or value == '':
        return default

    return max(int(value), 1)


def first_nonfinite_row(*arrays):
    """Index of the first row holding a non-finite value in any array."""
    bad = np.zeros(len(arrays[0]), dtype=bool)
    for arr in arrays:
        bad |= ~np.isfinite(arr.reshape(len(arr), -1)).all(1)

    idxs = np.flatnonzero(bad)

    return int(idxs[0]) if len(idxs) else None
