"""Small shared helpers."""

from __future__ import annotations

import numpy as np


def ordered_sum(values) -> float:
    """Sum float64 values strictly left to right.

    Reports and scores must be bit-reproducible, so no pairwise or otherwise
    reassociated summation is allowed anywhere a score is accumulated.
    np.cumsum is a sequential running sum, which gives exactly that order.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        return 0.0
    return float(np.cumsum(arr)[-1])


def readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr
