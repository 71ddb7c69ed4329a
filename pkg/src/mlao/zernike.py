"""Zernike aberration modes over a circular pupil.

Modes are addressed by Noll index and normalized so that a coefficient of
1 corresponds to 1 radian RMS of phase over the pupil disc. Aberrations are
held as sparse index->coefficient mappings (ZernikeVector); phase maps are
dense square grids with a pupil mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ZernikeVector",
    "PhaseMap",
    "noll_to_nm",
    "evaluate_mode",
    "compose_phase",
    "sample_aberration",
    "rms",
]


def noll_to_nm(noll_index):
    """Convert a Noll index (1-based) to radial order n and azimuthal order m.

    The sign of m encodes the trigonometric part: m >= 0 means cos(m*theta),
    m < 0 means sin(|m|*theta). Noll's rule: even indices are cosine modes,
    odd indices are sine modes.
    """
    if noll_index < 1:
        raise ValueError(f"Noll index must be >= 1, got {noll_index}")
    n = 0
    remainder = noll_index
    while remainder > n + 1:
        n += 1
        remainder -= n
    # remainder is the 1-based position within radial order n
    if n % 2 == 0:
        m = 2 * ((remainder) // 2)
    else:
        m = 2 * ((remainder - 1) // 2) + 1
    if m > 0 and noll_index % 2 != 0:
        m = -m
    return n, m


def _radial_polynomial(n, m_abs, rho):
    """Evaluate the Zernike radial polynomial R_n^m on an array of radii.

    Coefficients are built as exact integers by a multiplicative recurrence
    over the series index, then evaluated by Horner in rho^2. Exact for any
    order, no table involved.
    """
    if (n - m_abs) % 2 != 0:
        return np.zeros_like(rho)
    half = (n - m_abs) // 2
    # c_k = (-1)^k (n-k)! / (k! ((n+m)/2-k)! ((n-m)/2-k)!), k = 0..half
    coeffs = [
        (-1) ** k
        * math.factorial(n - k)
        // (
            math.factorial(k)
            * math.factorial((n + m_abs) // 2 - k)
            * math.factorial((n - m_abs) // 2 - k)
        )
        for k in range(half + 1)
    ]
    # sum_k c_k rho^(n-2k) = rho^m * P(u),  P(u) = sum_k c_k u^(half-k),  u = rho^2
    # k=0 carries the highest power of u, so Horner walks k upward
    u = rho * rho
    acc = np.full_like(rho, float(coeffs[0]))
    for k in range(1, half + 1):
        acc = acc * u + coeffs[k]
    if m_abs > 0:
        acc = acc * rho**m_abs
    return acc


@dataclass
class PhaseMap:
    """Dense phase grid in radians with its pupil support mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask.shape:
            raise ValueError("phase values and mask shapes differ")


def _unit_disc_coords(grid_size, radius_ratio):
    if not 0.0 < radius_ratio <= 0.5:
        raise ValueError(f"radius_ratio must be in (0, 0.5], got {radius_ratio}")
    radius_px = radius_ratio * grid_size
    c = grid_size // 2  # DC-centered convention shared with the FFT code
    axis = np.arange(grid_size, dtype=np.float64) - c
    y, x = np.meshgrid(axis, axis, indexing="ij")
    rho = np.hypot(x, y) / radius_px
    theta = np.arctan2(y, x)
    return rho, theta


def evaluate_mode(noll_index, grid_size, radius_ratio):
    """Render one Noll-normalized Zernike mode on a square grid.

    Args:
        noll_index: 1-based Noll index (1 is piston).
        grid_size: output grid is grid_size x grid_size pixels.
        radius_ratio: pupil radius as a fraction of grid_size, in (0, 0.5].

    Returns:
        PhaseMap with zeros outside the pupil. Unit coefficient means unit
        RMS over the disc (Noll normalization).
    """
    n, m = noll_to_nm(noll_index)
    rho, theta = _unit_disc_coords(grid_size, radius_ratio)
    mask = rho <= 1.0
    r = _radial_polynomial(n, abs(m), np.where(mask, rho, 0.0))
    if m == 0:
        ang = np.sqrt(n + 1.0)
        values = ang * r
    elif m > 0:
        values = np.sqrt(2.0 * (n + 1)) * r * np.cos(m * theta)
    else:
        values = np.sqrt(2.0 * (n + 1)) * r * np.sin(-m * theta)
    values = np.where(mask, values, 0.0)
    return PhaseMap(values=values, mask=mask)


class ZernikeVector:
    """Sparse aberration: mapping of Noll index -> coefficient (radians RMS).

    Piston (index 1) carries no wavefront shape and is rejected. Supports the
    small algebra the control loop needs: +, -, negation, scaling, restriction
    to a mode subset.
    """

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs=None):
        self._coeffs = {}
        if coeffs:
            for idx, c in dict(coeffs).items():
                idx = int(idx)
                if idx < 2:
                    raise ValueError(f"Noll index {idx} not allowed in an aberration vector")
                if c != 0.0:
                    self._coeffs[idx] = float(c)

    @classmethod
    def from_modes(cls, modes, coefficients):
        modes = list(modes)
        coefficients = np.asarray(coefficients, dtype=float).ravel()
        if len(modes) != coefficients.size:
            raise ValueError("modes and coefficients length mismatch")
        return cls(dict(zip(modes, coefficients)))

    @classmethod
    def single(cls, noll_index, coefficient):
        return cls({noll_index: coefficient})

    @property
    def modes(self):
        """Ordered tuple of Noll indices with nonzero coefficients."""
        return tuple(sorted(self._coeffs))

    def coefficient(self, noll_index):
        return self._coeffs.get(int(noll_index), 0.0)

    def coefficients(self, modes=None):
        """Coefficients as an array over the given (or own) mode order."""
        if modes is None:
            modes = self.modes
        return np.array([self.coefficient(m) for m in modes], dtype=float)

    def items(self):
        return sorted(self._coeffs.items())

    def restricted(self, modes):
        keep = set(int(m) for m in modes)
        return ZernikeVector({i: c for i, c in self._coeffs.items() if i in keep})

    def rms(self):
        """RMS wavefront error in radians; Noll modes are orthonormal so this
        is the L2 norm of the coefficients."""
        if not self._coeffs:
            return 0.0
        return float(np.sqrt(sum(c * c for c in self._coeffs.values())))

    def __add__(self, other):
        out = dict(self._coeffs)
        for i, c in other._coeffs.items():
            out[i] = out.get(i, 0.0) + c
        return ZernikeVector(out)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return ZernikeVector({i: -c for i, c in self._coeffs.items()})

    def scaled(self, factor):
        return ZernikeVector({i: factor * c for i, c in self._coeffs.items()})

    def __eq__(self, other):
        if not isinstance(other, ZernikeVector):
            return NotImplemented
        return self.items() == other.items()

    def __bool__(self):
        return bool(self._coeffs)

    def __repr__(self):
        inner = ", ".join(f"{i}: {c:+.4f}" for i, c in self.items())
        return f"ZernikeVector({{{inner}}})"


def rms(vector):
    """RMS in radians of a ZernikeVector (L2 norm of Noll coefficients)."""
    return vector.rms()


def compose_phase(vector, grid_size, radius_ratio):
    """Sum the vector's modes into one dense PhaseMap."""
    rho, _ = _unit_disc_coords(grid_size, radius_ratio)
    mask = rho <= 1.0
    values = np.zeros((grid_size, grid_size), dtype=np.float64)
    for idx, coeff in vector.items():
        values += coeff * evaluate_mode(idx, grid_size, radius_ratio).values
    return PhaseMap(values=values, mask=mask)


def sample_aberration(rng, modes, max_norm):
    """Draw a random aberration with direction uniform on the unit sphere and
    L2 norm (= RMS) uniform on [0, max_norm].

    This is not a uniform draw from the ball: small and large aberrations are
    equally represented, which is the intended training distribution.
    """
    modes = list(modes)
    if not modes:
        raise ValueError("need at least one mode to sample")
    if max_norm < 0:
        raise ValueError("max_norm must be >= 0")
    direction = rng.standard_normal(len(modes))
    norm = np.linalg.norm(direction)
    while norm < 1e-12:  # astronomically rare; resample for safety
        direction = rng.standard_normal(len(modes))
        norm = np.linalg.norm(direction)
    direction /= norm
    magnitude = rng.uniform(0.0, max_norm)
    return ZernikeVector.from_modes(modes, magnitude * direction)
