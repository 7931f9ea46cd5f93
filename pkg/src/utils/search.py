"""
Scalar golden-section maximization.
"""

from typing import Callable, Tuple

import numpy as np

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0
INV_PHI_SQUARE = (3.0 - np.sqrt(5.0)) / 2.0


def golden_section_max(
    function: Callable[[float], float],
    interval: Tuple[float, float],
    tolerance: float = 1e-4,
) -> Tuple[float, float]:
    """
    Maximize a unimodal function on a closed interval.

    Args:
        function: f(x) to maximize
        interval: (lower, upper) search limits
        tolerance: Stop once the bracket is no wider than this

    Returns:
        Tuple of (x_max, f(x_max)) for the best point evaluated
    """
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    lower, upper = sorted(interval)
    width = upper - lower
    if width <= tolerance:
        x = 0.5 * (lower + upper)
        return x, float(function(x))

    x1 = lower + INV_PHI_SQUARE * width
    x2 = lower + INV_PHI * width
    f1 = float(function(x1))
    f2 = float(function(x2))
    n_iter = int(np.ceil(np.log(tolerance / width) / np.log(INV_PHI)))

    for _ in range(n_iter):
        if f1 > f2:
            upper = x2
            x2, f2 = x1, f1
            width = INV_PHI * width
            x1 = lower + INV_PHI_SQUARE * width
            f1 = float(function(x1))
        else:
            lower = x1
            x1, f1 = x2, f2
            width = INV_PHI * width
            x2 = lower + INV_PHI * width
            f2 = float(function(x2))

    return (x1, f1) if f1 > f2 else (x2, f2)
