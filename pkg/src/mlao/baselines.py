"""Conventional modal sensorless correction by parabolic metric fitting.

Both routines drive any object with the small acquisition protocol used
throughout the package:

    handle.acquire(bias: ZernikeVector | None) -> image (2-d array)
    handle.apply_correction(delta: ZernikeVector) -> None

The metric function maps an image to a scalar that peaks at zero residual
aberration; it is injectable so the math can be verified against an exact
quadratic stand-in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import metric_intensity
from .zernike import ZernikeVector

__all__ = ["BaselineResult", "parabolic_peak", "run_2n_plus_1", "run_3n"]


@dataclass(frozen=True)
class BaselineResult:
    correction: ZernikeVector
    concave: dict
    acquisitions: int


def parabolic_peak(y_minus, y_zero, y_plus, bias):
    """Vertex abscissa of the parabola through (-b, y-), (0, y0), (+b, y+).

    Returns (estimate, concave). When the three points are not concave
    there is no interior maximum; the estimate falls back to the abscissa
    of the best measured point and concave is False. Concave estimates are
    clamped to [-2b, 2b]: a vertex further out than twice the probing bias
    is extrapolation the three points cannot support.
    """
    if bias <= 0:
        raise ValueError("bias must be positive")
    denom = y_plus + y_minus - 2.0 * y_zero
    if denom >= 0.0:
        choices = (-bias, 0.0, bias)
        return choices[int(np.argmax([y_minus, y_zero, y_plus]))], False
    est = bias * (y_minus - y_plus) / (2.0 * denom)
    return float(np.clip(est, -2.0 * bias, 2.0 * bias)), True


def run_2n_plus_1(handle, modes, bias=1.0, metric_fn=metric_intensity):
    """Estimate all modes from one shared unbiased image plus +-bias images
    per mode (2N+1 acquisitions), then apply the full correction at once.

    A mode whose metric triple is not concave has no fitted maximum, so it
    contributes no correction; this is what bounds the method's capture
    range at large aberrations.
    """
    modes = [int(m) for m in modes]
    y_zero = metric_fn(handle.acquire())
    estimates, concave = {}, {}
    for m in modes:
        y_minus = metric_fn(handle.acquire(ZernikeVector.single(m, -bias)))
        y_plus = metric_fn(handle.acquire(ZernikeVector.single(m, bias)))
        est, ok = parabolic_peak(y_minus, y_zero, y_plus, bias)
        estimates[m], concave[m] = (est if ok else 0.0), ok
    correction = ZernikeVector.from_modes(modes, [estimates[m] for m in modes])
    handle.apply_correction(correction)
    return BaselineResult(correction, concave, 2 * len(modes) + 1)


def run_3n(handle, modes, bias=1.0, metric_fn=metric_intensity):
    """Correct one mode at a time with a fresh (-b, 0, +b) triple each
    (3N acquisitions); later modes are measured with earlier corrections
    already in place. Non-concave triples leave their mode untouched,
    as in the simultaneous variant."""
    modes = [int(m) for m in modes]
    estimates, concave = {}, {}
    for m in modes:
        y_minus = metric_fn(handle.acquire(ZernikeVector.single(m, -bias)))
        y_zero = metric_fn(handle.acquire())
        y_plus = metric_fn(handle.acquire(ZernikeVector.single(m, bias)))
        est, ok = parabolic_peak(y_minus, y_zero, y_plus, bias)
        if not ok:
            est = 0.0
        handle.apply_correction(ZernikeVector.single(m, est))
        estimates[m], concave[m] = est, ok
    correction = ZernikeVector.from_modes(modes, [estimates[m] for m in modes])
    return BaselineResult(correction, concave, 3 * len(modes))
