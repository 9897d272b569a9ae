"""Savitzky-Golay smoothing for UWB range series."""

from __future__ import annotations

from collections import deque
from functools import lru_cache

import numpy as np


def _check(window: int, order: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if not 0 <= order < window:
        raise ValueError(f"order must satisfy 0 <= order < window, got order={order}, window={window}")


@lru_cache(maxsize=64)
def sg_coefficients(window: int, order: int, position: int | None = None) -> np.ndarray:
    """Weights ``w`` such that ``w @ samples`` evaluates the fitted polynomial.

    ``position`` is the sample index inside the window at which the fit is
    evaluated; ``None`` means the centre.
    """
    _check(window, order)
    if position is None:
        position = window // 2
    k = np.arange(window, dtype=float) - position
    vander = k[:, None] ** np.arange(order + 1)[None, :]
    # Row 0 of the pseudo-inverse maps samples to the constant term at `position`.
    coeffs = np.linalg.pinv(vander)[0]
    coeffs.setflags(write=False)
    return coeffs


def sg_filter(series, window: int = 9, order: int = 2, causal: bool = False) -> np.ndarray:
    """Smooth a scalar series.

    Centred mode evaluates each interior point at the middle of its window and
    passes the first and last ``window // 2`` samples through. Causal mode fits
    the trailing window and evaluates at the newest sample; the first
    ``window - 1`` samples pass through.
    """
    _check(window, order)
    x = np.asarray(series, dtype=float)
    out = x.copy()
    if x.size < window:
        return out
    if causal:
        w = sg_coefficients(window, order, window - 1)
        out[window - 1:] = np.convolve(x, w[::-1], mode="valid")
    else:
        h = window // 2
        w = sg_coefficients(window, order)
        out[h:x.size - h] = np.convolve(x, w[::-1], mode="valid")
    return out


class CausalSavitzkyGolay:
    """Streaming trailing-window filter; ``push`` returns the newest smoothed value."""

    def __init__(self, window: int = 9, order: int = 2):
        _check(window, order)
        self.window = window
        self.weights = sg_coefficients(window, order, window - 1)
        self._buf: deque = deque(maxlen=window)

    def push(self, value: float) -> float:
        self._buf.append(float(value))
        if len(self._buf) < self.window:
            return float(value)
        return float(np.dot(self.weights, self._buf))

    def __len__(self) -> int:
        return len(self._buf)
