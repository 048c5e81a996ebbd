"""Dormand-Prince 5(4) tableau shared by the adaptive integrators."""

from __future__ import annotations

import numpy as np

# Stage coefficients of the classic 7-stage pair; stage 7 equals the 5th
# order solution (FSAL).
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])

DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]

DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
DP_ERR = DP_B5 - DP_B4


def next_step_size(dt, error_ratio, safety=0.9, min_factor=0.2, max_factor=5.0, order=5):
    """Standard step size update from the scaled local error estimate."""
    if error_ratio <= 0.0:
        return dt * max_factor
    return dt * min(max_factor, max(min_factor, safety * error_ratio ** (-1.0 / order)))
