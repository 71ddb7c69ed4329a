"""Scalar Fourier-optics point spread functions.

A PSF is |FFT(pupil_amplitude * exp(j*phase))| ** exponent, with exponent 2
for widefield, 4 for two-photon and 6 for three-photon imaging. All square
arrays are DC-centered: the optical axis sits at pixel (n//2, n//2) and
spectra are fftshifted accordingly.

Pupil radius is not chosen directly. make_pupil calibrates it so that the
aberration-free PSF has a full width at half maximum of 2 * sampling_factor
pixels, which pins the pixel size to the diffraction limit independently of
modality and illumination profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .zernike import PhaseMap

__all__ = ["Pupil", "Psf", "make_pupil", "psf", "fwhm", "DegenerateInputError"]


class DegenerateInputError(ValueError):
    """Raised when a measurement is requested on an input with no structure."""


@dataclass(frozen=True)
class Pupil:
    """Circular aperture amplitude on a DC-centered grid.

    amplitude is zero outside the disc of radius radius_ratio * grid_size
    pixels; inside it is 1 for uniform illumination or a truncated Gaussian
    exp(-(rho/waist_ratio)^2) with rho normalized to the pupil radius.
    """

    amplitude: np.ndarray
    grid_size: int
    radius_ratio: float
    sampling_factor: float
    exponent: int
    illumination: str


@dataclass(frozen=True)
class Psf:
    values: np.ndarray
    exponent: int
    sampling_factor: float
    normalized: bool


def _pupil_amplitude(grid_size, radius_ratio, illumination, waist_ratio):
    c = grid_size // 2
    ax = np.arange(grid_size, dtype=np.float64) - c
    y, x = np.meshgrid(ax, ax, indexing="ij")
    rho = np.hypot(x, y) / (radius_ratio * grid_size)
    inside = rho <= 1.0
    if illumination == "uniform":
        amp = inside.astype(np.float64)
    elif illumination == "truncated_gaussian":
        amp = np.where(inside, np.exp(-((rho / waist_ratio) ** 2)), 0.0)
    else:
        raise ValueError(f"unknown illumination {illumination!r}")
    return amp


def _raw_psf(amplitude, phase_values, exponent):
    field = amplitude * np.exp(1j * phase_values)
    spectrum = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(field)))
    return np.abs(spectrum) ** exponent


def fwhm(psf_obj):
    """Full width at half maximum of the x profile through the PSF peak.

    Crossings are located by linear interpolation between samples, which by
    construction reports 1.0 px for a single-pixel impulse.
    """
    values = psf_obj.values if isinstance(psf_obj, Psf) else np.asarray(psf_obj)
    if values.max() == values.min():
        raise DegenerateInputError("flat input has no measurable width")
    peak_idx = np.unravel_index(np.argmax(values), values.shape)
    profile = values[peak_idx[0], :].astype(np.float64)
    j = peak_idx[1]
    half = profile[j] / 2.0

    def cross(direction):
        k = j
        while 0 <= k + direction < profile.size and profile[k + direction] >= half:
            k += direction
        nxt = k + direction
        if nxt < 0 or nxt >= profile.size:
            return float(k)  # ran off the grid while still above half
        frac = (profile[k] - half) / (profile[k] - profile[nxt])
        return k + direction * frac

    return cross(+1) - cross(-1)


# (grid_size, exponent, illumination, waist_ratio) -> radius_ratio giving a
# 2.0 px FWHM. Idempotent to recompute, so concurrent first calls are benign.
_BASE_RATIO_CACHE: dict = {}


def _calibrate_base_ratio(grid_size, exponent, illumination, waist_ratio):
    key = (grid_size, exponent, illumination, waist_ratio)
    hit = _BASE_RATIO_CACHE.get(key)
    if hit is not None:
        return hit
    target = 2.0

    def measured(ratio):
        amp = _pupil_amplitude(grid_size, ratio, illumination, waist_ratio)
        return fwhm(_raw_psf(amp, np.zeros_like(amp), exponent))

    # FWHM decreases monotonically with pupil radius; bracket then bisect
    lo, hi = 4.0 / grid_size, 0.5
    if measured(hi) > target:
        raise ValueError(f"grid {grid_size} too small to reach a 2 px FWHM")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if measured(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-7:
            break
    ratio = 0.5 * (lo + hi)
    _BASE_RATIO_CACHE[key] = ratio
    return ratio


def make_pupil(grid_size, sampling_factor, exponent, illumination="uniform",
               waist_ratio=1.0):
    """Build a pupil whose unaberrated PSF FWHM is 2 * sampling_factor px.

    Args:
        grid_size: square grid side in pixels.
        sampling_factor: 1.0 means 2 px per FWHM (Nyquist for the chosen
            modality); training uses draws from [1.0, 1.2].
        exponent: PSF exponent, 2 / 4 / 6.
        illumination: "uniform" or "truncated_gaussian".
        waist_ratio: Gaussian waist over pupil radius; 1.0 puts the amplitude
            at the pupil edge at e^-1 of the center.
    """
    if exponent not in (2, 4, 6):
        raise ValueError(f"exponent must be 2, 4 or 6, got {exponent}")
    if sampling_factor <= 0:
        raise ValueError("sampling_factor must be positive")
    base = _calibrate_base_ratio(grid_size, exponent, illumination, waist_ratio)
    ratio = base / sampling_factor
    if ratio > 0.5:
        raise ValueError(
            f"sampling_factor {sampling_factor} needs radius_ratio {ratio:.3f} > 0.5"
        )
    amp = _pupil_amplitude(grid_size, ratio, illumination, waist_ratio)
    return Pupil(
        amplitude=amp,
        grid_size=grid_size,
        radius_ratio=ratio,
        sampling_factor=sampling_factor,
        exponent=exponent,
        illumination=illumination,
    )


def psf(pupil, phase=None, normalized=False):
    """Render the PSF for a pupil and a phase map (radians).

    Phase is taken as zero when omitted. With normalized=True the values sum
    to 1; raw scale otherwise (the center value of the zero-phase raw PSF is
    (sum of pupil amplitude) ** exponent, the Strehl reference).
    """
    if phase is None:
        phase_values = np.zeros_like(pupil.amplitude)
    else:
        phase_values = phase.values if isinstance(phase, PhaseMap) else np.asarray(phase)
        if phase_values.shape != pupil.amplitude.shape:
            raise ValueError("phase grid does not match pupil grid")
    values = _raw_psf(pupil.amplitude, phase_values, pupil.exponent)
    if normalized:
        values = values / values.sum()
    return Psf(
        values=values,
        exponent=pupil.exponent,
        sampling_factor=pupil.sampling_factor,
        normalized=normalized,
    )
