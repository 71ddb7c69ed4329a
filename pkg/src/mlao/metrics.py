"""Scalar image-quality metrics used by conventional sensorless correction.

Spectral metrics work on the magnitude of the unnormalized 2D DFT. Frequency
is measured in cycles per pixel (Nyquist 0.5); annuli use lower-inclusive,
upper-exclusive radial edges and always exclude the DC bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricConfig",
    "metric_intensity",
    "metric_fourier",
    "metric_sharpness",
    "metric_for_modality",
]


@dataclass(frozen=True)
class MetricConfig:
    """Sharpness band edges as fractions of f_max (0 < low < high <= 1)."""

    low: float = 0.1
    high: float = 0.6
    f_max: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.low < self.high <= 1.0:
            raise ValueError(
                f"need 0 < low < high <= 1, got low={self.low} high={self.high}"
            )
        if not 0.0 < self.f_max <= 0.5:
            raise ValueError("f_max must be in (0, 0.5] cycles/pixel")


def _radial_frequency(shape):
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.hypot(fy, fx)


def band_mask(shape, lo, hi):
    """Annulus lo <= |f| < hi in cycles/pixel, DC excluded."""
    radius = _radial_frequency(shape)
    mask = (radius >= lo) & (radius < hi)
    mask[0, 0] = False
    return mask


def metric_intensity(frame):
    """Total signal; tracks aberration for nonlinear (l >= 4) modalities."""
    return float(np.sum(frame))


def metric_fourier(frame, f_max=0.5):
    """Sum of spectral magnitude over the fixed 0.1..0.6 f_max annulus."""
    spectrum = np.abs(np.fft.fft2(frame))
    return float(spectrum[band_mask(frame.shape, 0.1 * f_max, 0.6 * f_max)].sum())


def metric_sharpness(frame, cfg=MetricConfig()):
    """Mid-band to low-band spectral magnitude ratio.

    Numerator: cfg.low*f_max <= |f| < cfg.high*f_max. Denominator: the disc
    below cfg.low*f_max without DC. Insensitive to overall gain, which makes
    it usable for widefield images where total intensity is conserved.
    """
    spectrum = np.abs(np.fft.fft2(frame))
    lo = cfg.low * cfg.f_max
    hi = cfg.high * cfg.f_max
    num = spectrum[band_mask(frame.shape, lo, hi)].sum()
    den = spectrum[band_mask(frame.shape, 0.0, lo)].sum()
    if den == 0.0:
        raise ValueError("empty low band; frame too small for the configured bands")
    return float(num / den)


def metric_for_modality(exponent, cfg=MetricConfig()):
    """Default metric callable per modality: total intensity for l in {4, 6},
    spectral sharpness for widefield (l = 2)."""
    if exponent in (4, 6):
        return metric_intensity
    if exponent == 2:
        return lambda frame: metric_sharpness(frame, cfg)
    raise ValueError(f"no default metric for exponent {exponent}")
