"""Pseudo-PSF preprocessing: object-independent network inputs.

Two images of the same specimen taken under different bias aberrations share
the specimen spectrum, so the ratio of their spectra cancels the object and
keeps only the ratio of the two optical transfer functions. Its inverse
transform, the pseudo-PSF, depends on the aberration but (ideally) not on
the specimen. Each (+bias, -bias) image pair yields two channels: the ratio
and the swapped ratio.

The division is Tikhonov-regularized and the result is inherently invariant
to global intensity scaling, so no per-channel rescaling is applied; see the
note in build_input_stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PseudoStack", "compute_pseudo_psf", "crop_center", "build_input_stack",
           "DEFAULT_EPSILON", "CROP_SIZE", "CLIP_LIMIT"]

DEFAULT_EPSILON = 1e-3
CROP_SIZE = 32
# rare noise-driven spikes are clipped far above the physical ~[-1, 1] range
CLIP_LIMIT = 8.0


@dataclass(frozen=True)
class PseudoStack:
    """Channel stack fed to the network: (n_channels, 32, 32) float64."""

    channels: np.ndarray
    scheme_tag: str

    def __post_init__(self):
        if self.channels.ndim != 3:
            raise ValueError("channels must be (n, h, w)")


def compute_pseudo_psf(image_a, image_b, epsilon=DEFAULT_EPSILON):
    """Regularized spectral ratio of two frames, inverse transformed.

    Computes real(IFFT(F(a) * conj(F(b)) / (|F(b)|^2 + eps^2))) with
    eps = epsilon * max|F(b)|, returned DC-centered. For image_a == image_b
    the result is a unit impulse at the center up to the regularization.
    """
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("frame shapes differ")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    eps = epsilon * np.abs(fb).max()
    if eps == 0.0:
        raise ValueError("second frame is identically zero")
    ratio = fa * np.conj(fb) / (np.abs(fb) ** 2 + eps * eps)
    return np.fft.fftshift(np.fft.ifft2(ratio).real)


def crop_center(frame, out_size=CROP_SIZE):
    """Central out_size x out_size crop; the DC pixel (n//2) maps to out_size//2."""
    n, m = frame.shape
    if out_size > n or out_size > m:
        raise ValueError(f"crop {out_size} larger than frame {frame.shape}")
    top = n // 2 - out_size // 2
    left = m // 2 - out_size // 2
    return frame[top : top + out_size, left : left + out_size]


def build_input_stack(images, scheme, epsilon=DEFAULT_EPSILON):
    """Convert one cycle of biased acquisitions into a network input stack.

    Args:
        images: sequence of frames ordered as scheme.bias_vectors(), i.e.
            consecutive frames are a (+b, -b) pair.
        scheme: CorrectionScheme providing the pair structure.
        epsilon: regularization for the spectral division.

    Returns:
        PseudoStack with scheme.n_channels channels of CROP_SIZE squares.
        Channel 2k is ratio(pair_k[0] / pair_k[1]), channel 2k+1 the swap.

    The spectral ratio cancels any global intensity scale exactly, and the
    values are already Strehl-like and order one, so channels keep their
    natural scale (the peak height is the information the network's first
    global max-pool tap reads). A wide clip guards against occasional
    division spikes in extreme noise.
    """
    images = list(images)
    expect = scheme.images_per_cycle
    if len(images) != expect:
        raise ValueError(f"scheme {scheme.tag} needs {expect} images, got {len(images)}")
    channels = []
    for k in range(0, expect, 2):
        plus, minus = images[k], images[k + 1]
        channels.append(crop_center(compute_pseudo_psf(plus, minus, epsilon)))
        channels.append(crop_center(compute_pseudo_psf(minus, plus, epsilon)))
    stack = np.clip(np.stack(channels, axis=0), -CLIP_LIMIT, CLIP_LIMIT)
    return PseudoStack(channels=stack, scheme_tag=scheme.tag)
