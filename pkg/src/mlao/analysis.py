"""Interpretability probes: where the network reads its information.

Three independent views:

* layer_weight_rms: how strongly the final dense layer weights each
  global-max tap section, i.e. which depth of the feature hierarchy the
  trained readout actually consumes.
* layer_response_profile: a single shared 3x3 filter cascaded through the
  conv/pool geometry, showing how a pattern of a given physical scale
  survives (or dies) down the pyramid.
* spectral_threshold: the highest spatial frequency of an image that rises
  above its own high-frequency noise floor, for relating feature scales to
  resolvable content.
"""

from __future__ import annotations

import numpy as np

from .network import _CHANNELS, _conv_forward, _maxpool_forward

__all__ = ["layer_weight_rms", "layer_response_profile", "spectral_threshold"]


def layer_weight_rms(model):
    """RMS of the first dense layer's weights per tap section.

    Returns an array of five values: the raw-input tap section followed by
    the four conv block sections. A large first value means the readout
    leans on the pseudo-PSF peak itself rather than learned features.
    """
    widths = [model.n_channels, *_CHANNELS]
    out = []
    offset = 0
    for width in widths:
        rows = model.fc1_w[offset : offset + width]
        out.append(float(np.sqrt(np.mean(rows * rows))))
        offset += width
    assert offset == model.fc1_w.shape[0]
    return np.array(out)


def layer_response_profile(pattern, filt):
    """Cascade one 3x3 filter through the network's conv/pool geometry.

    The pattern is filtered (same zero padding, no bias, no nonlinearity),
    its global max recorded, then 2x2 max-pooled, four times; the raw
    pattern's max is tap 0. Returns (taps, ratios) with ratios[k] =
    taps[k+1] / taps[k] (nan where the denominator is 0). A pattern whose
    scale matches the filter keeps its ratios near the filter's gain; a
    pattern too fine for a level dies there and its ratio drops.
    """
    pattern = np.asarray(pattern, dtype=np.float64)
    if pattern.ndim != 2 or pattern.shape[0] != pattern.shape[1]:
        raise ValueError("pattern must be a square 2-d array")
    if pattern.shape[0] % 16 or pattern.shape[0] < 16:
        raise ValueError("pattern side must be a multiple of 16")
    filt = np.asarray(filt, dtype=np.float64)
    if filt.shape != (3, 3):
        raise ValueError("filter must be 3x3")
    w = filt[None, None]
    bias = np.zeros(1)
    h = pattern[None, None]
    taps = [float(h.max())]
    for _ in range(4):
        out, _ = _conv_forward(h, w, bias)
        taps.append(float(out.max()))
        h, _ = _maxpool_forward(out)
    taps = np.array(taps)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(taps[:-1] != 0.0, taps[1:] / taps[:-1], np.nan)
    return taps, ratios


def spectral_threshold(frame, margin=2.0):
    """Highest spatial frequency with content above the noise floor.

    The centered magnitude spectrum is fragmented into 1-px radial annuli
    by 8 angular sectors. The noise floor is the mean of the four 4x4-px
    corner blocks (the most extreme frequencies, beyond the radial cap,
    where specimen content is negligible); a fragment counts when its mean
    exceeds margin times the floor. Rings too small to give each sector a
    statistically usable cell (under 4 px) are judged as whole rings.
    Returns (threshold, has_signal) with the threshold in cycles/px of the
    largest exceeding radius, capped at Nyquist. A frame with no fragment
    above the floor returns (0.0, False).

    The measure is invariant to overall intensity scaling. For noiseless
    synthetic frames the corner floor can be ~0; a tiny relative guard
    (1e-9 of the spectral peak) keeps FFT leakage from counting as signal.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] != frame.shape[1]:
        raise ValueError("frame must be a square 2-d array")
    if frame.shape[0] < 16:
        raise ValueError("frame too small for a corner noise-floor estimate")
    if margin <= 0:
        raise ValueError("margin must be positive")
    n = frame.shape[0]
    spectrum = np.abs(np.fft.fftshift(np.fft.fft2(frame)))
    corners = (
        spectrum[:4, :4].mean() + spectrum[:4, -4:].mean()
        + spectrum[-4:, :4].mean() + spectrum[-4:, -4:].mean()
    ) / 4.0
    floor = max(float(corners), 1e-9 * float(spectrum.max()))
    center = n // 2
    yy, xx = np.indices(spectrum.shape)
    dy, dx = yy - center, xx - center
    radius = np.rint(np.hypot(dy, dx)).astype(int)
    sector = ((np.arctan2(dy, dx) + np.pi) / (2 * np.pi) * 8.0).astype(int) % 8
    cap = n // 2
    best = 0
    for r in range(1, cap + 1):
        ring = radius == r
        count = int(ring.sum())
        if count == 0:
            continue
        if count // 8 < 6:  # sectors would be too few px: judge the whole ring
            if spectrum[ring].mean() > margin * floor:
                best = r
            continue
        for s in range(8):
            cell = ring & (sector == s)
            if cell.any() and spectrum[cell].mean() > margin * floor:
                best = r
                break
    return best / n, best > 0
