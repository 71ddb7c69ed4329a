"""Bias-aberration schemes for sensorless correction.

A scheme fixes which Zernike modes carry probing biases, at which depths,
and which modes the estimator corrects. Tags:

    ast2: one astigmatism bias mode, +/-1 rad          -> 2 images
    ast4: one astigmatism bias mode, +/-0.5 and +/-1   -> 4 images
    2n:   every corrected mode, +/-1 rad               -> 2N images
    4n:   every corrected mode, +/-0.5 and +/-1        -> 4N images

Bias frames are ordered mode-major, depth-minor, positive before negative,
so consecutive frames always form a (+b, -b) pair.
"""

from __future__ import annotations

from dataclasses import dataclass

from .zernike import ZernikeVector

__all__ = ["CorrectionScheme", "make_scheme", "SCHEME_TAGS"]

SCHEME_TAGS = ("ast2", "ast4", "2n", "4n")

DEFAULT_CORRECTED_MODES = (5, 6, 7, 8, 11)
DEFAULT_BIAS_MODE = 5  # oblique astigmatism


@dataclass(frozen=True)
class CorrectionScheme:
    tag: str
    bias_modes: tuple
    bias_depths: tuple
    corrected_modes: tuple

    def __post_init__(self):
        if self.tag not in SCHEME_TAGS:
            raise ValueError(f"unknown scheme tag {self.tag!r}")
        if not self.bias_modes or not self.bias_depths:
            raise ValueError("scheme needs at least one bias mode and depth")
        if any(d <= 0 for d in self.bias_depths):
            raise ValueError("bias depths must be positive")
        if len(set(self.corrected_modes)) != len(self.corrected_modes):
            raise ValueError("corrected modes contain duplicates")

    @property
    def n_modes(self):
        """Number of corrected modes (the network output width)."""
        return len(self.corrected_modes)

    @property
    def images_per_cycle(self):
        """Biased acquisitions per correction cycle (M)."""
        return 2 * len(self.bias_modes) * len(self.bias_depths)

    @property
    def n_channels(self):
        """Network input channels; one pair of swapped ratios per bias pair."""
        return self.images_per_cycle

    def bias_vectors(self):
        """Ordered biases: per mode, per depth, +d then -d."""
        out = []
        for mode in self.bias_modes:
            for depth in self.bias_depths:
                out.append(ZernikeVector.single(mode, +depth))
                out.append(ZernikeVector.single(mode, -depth))
        return out

    def bias_pairs(self):
        """The same biases grouped as (+b, -b) tuples."""
        flat = self.bias_vectors()
        return [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]


def make_scheme(tag, corrected_modes=DEFAULT_CORRECTED_MODES, bias_mode=DEFAULT_BIAS_MODE):
    """Build one of the four standard schemes over a corrected-mode set."""
    corrected = tuple(int(m) for m in corrected_modes)
    if tag == "ast2":
        return CorrectionScheme(tag, (bias_mode,), (1.0,), corrected)
    if tag == "ast4":
        return CorrectionScheme(tag, (bias_mode,), (0.5, 1.0), corrected)
    if tag == "2n":
        return CorrectionScheme(tag, corrected, (1.0,), corrected)
    if tag == "4n":
        return CorrectionScheme(tag, corrected, (0.5, 1.0), corrected)
    raise ValueError(f"unknown scheme tag {tag!r}")
