"""Synthetic specimens, image formation and sensor noise.

Frames are plain 2D float64 arrays with values nominally in [0, 1] (8-bit
sources map onto that range). Image formation is circular convolution with a
PSF, evaluated spectrally, so structures wrap at the borders exactly like the
FFT-based pipeline assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .optics import Psf

__all__ = [
    "NoiseConfig",
    "synth_specimen",
    "rotate_frame",
    "augment",
    "form_image",
    "add_noise",
    "write_pgm16",
    "read_pgm",
    "load_specimen_pool",
    "SPECIMEN_KINDS",
]

SPECIMEN_KINDS = ("dots", "rings", "discs", "lines", "curves", "mixed")


@dataclass(frozen=True)
class NoiseConfig:
    """Per-frame noise model parameters.

    background: constant offset added before resampling.
    poisson_peak_counts: photon count corresponding to intensity 1.0; the
        frame is scaled to counts, Poisson-resampled and scaled back, so a
        constant frame v keeps mean v and gets variance v / peak. 0 disables.
    gaussian_sigma: additive white readout noise.
    pink_amplitude: std of an additive 1/f-amplitude-spectrum field.
    structured_amplitude: low-frequency sinusoidal interference plus a faint
        random specimen copy, both scaled by this amplitude. 0 disables.
    """

    background: float = 0.0
    poisson_peak_counts: float = 0.0
    gaussian_sigma: float = 0.0
    pink_amplitude: float = 0.0
    structured_amplitude: float = 0.0

    def as_array(self):
        return np.array(
            [
                self.background,
                self.poisson_peak_counts,
                self.gaussian_sigma,
                self.pink_amplitude,
                self.structured_amplitude,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr):
        b, p, g, pk, s = (float(v) for v in np.asarray(arr).ravel()[:5])
        return cls(b, p, g, pk, s)


def _coord_grids(size):
    ax = np.arange(size, dtype=np.float64)
    return np.meshgrid(ax, ax, indexing="ij")


def _draw_dots(rng, size, canvas):
    n = rng.integers(8, 40)
    yy, xx = _coord_grids(size)
    for _ in range(n):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(0.6, 2.5)
        v = rng.uniform(0.4, 1.0)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        blob = np.where(d2 <= (3.5 * r) ** 2, v * np.exp(-d2 / (2 * r * r)), 0.0)
        np.maximum(canvas, blob, out=canvas)


def _draw_discs(rng, size, canvas):
    n = rng.integers(3, 10)
    yy, xx = _coord_grids(size)
    for _ in range(n):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(size / 20, size / 6)
        v = rng.uniform(0.4, 1.0)
        d = np.hypot(yy - cy, xx - cx)
        np.maximum(canvas, v * np.clip(r + 0.5 - d, 0.0, 1.0), out=canvas)


def _draw_rings(rng, size, canvas):
    n = rng.integers(3, 10)
    yy, xx = _coord_grids(size)
    for _ in range(n):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(size / 16, size / 5)
        w = rng.uniform(1.0, 3.0)
        v = rng.uniform(0.4, 1.0)
        d = np.abs(np.hypot(yy - cy, xx - cx) - r)
        np.maximum(canvas, v * np.clip(w / 2 + 0.5 - d, 0.0, 1.0), out=canvas)


def _draw_segment(canvas, p0, p1, width, value, yy, xx):
    d = p1 - p0
    length2 = float(d @ d)
    if length2 < 1e-9:
        return
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / length2
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
    np.maximum(canvas, value * np.clip(width / 2 + 0.5 - dist, 0.0, 1.0), out=canvas)


def _draw_lines(rng, size, canvas):
    n = rng.integers(3, 9)
    yy, xx = _coord_grids(size)
    for _ in range(n):
        p0 = rng.uniform(0, size, 2)
        p1 = rng.uniform(0, size, 2)
        _draw_segment(canvas, p0, p1, rng.uniform(1.0, 3.0), rng.uniform(0.4, 1.0), yy, xx)


def _draw_curves(rng, size, canvas):
    # quadratic Bezier arcs rendered as short segment chains
    n = rng.integers(2, 6)
    yy, xx = _coord_grids(size)
    for _ in range(n):
        pts = rng.uniform(0, size, (3, 2))
        w = rng.uniform(1.0, 2.5)
        v = rng.uniform(0.4, 1.0)
        ts = np.linspace(0.0, 1.0, 12)
        path = (
            (1 - ts)[:, None] ** 2 * pts[0]
            + 2 * ((1 - ts) * ts)[:, None] * pts[1]
            + ts[:, None] ** 2 * pts[2]
        )
        for a, b in zip(path[:-1], path[1:]):
            _draw_segment(canvas, a, b, w, v, yy, xx)


_DRAWERS = {
    "dots": _draw_dots,
    "discs": _draw_discs,
    "rings": _draw_rings,
    "lines": _draw_lines,
    "curves": _draw_curves,
}


def synth_specimen(rng, kind="mixed", size=128):
    """Generate a random specimen frame with values in [0, 1].

    kind "mixed" overlays two or three randomly chosen structure families.
    The nonzero fill fraction is kept between 0.1% and 60% by resampling,
    so frames are neither empty nor saturated.
    """
    if kind not in SPECIMEN_KINDS:
        raise ValueError(f"unknown specimen kind {kind!r}")
    for _ in range(50):
        canvas = np.zeros((size, size), dtype=np.float64)
        if kind == "mixed":
            names = list(_DRAWERS)
            picks = rng.choice(len(names), size=rng.integers(2, 4), replace=False)
            for i in picks:
                _DRAWERS[names[i]](rng, size, canvas)
        else:
            _DRAWERS[kind](rng, size, canvas)
        np.clip(canvas, 0.0, 1.0, out=canvas)
        fill = np.count_nonzero(canvas) / canvas.size
        if 0.001 <= fill <= 0.60:
            return canvas
    raise RuntimeError("specimen fill constraint not met after 50 attempts")


def rotate_frame(frame, angle_deg):
    """Rotate about the array center with bilinear resampling, zero fill.

    Multiples of 90 degrees land exactly on the pixel grid and reduce to
    index permutations.
    """
    return ndimage.rotate(
        frame, angle_deg, reshape=False, order=1, mode="constant", cval=0.0
    )


def augment(rng, frame, angle_deg=None):
    """Random-rotation augmentation; pass angle_deg to force the angle."""
    if angle_deg is None:
        angle_deg = float(rng.uniform(0.0, 360.0))
    return np.clip(rotate_frame(frame, angle_deg), 0.0, 1.0)


def form_image(obj, psf_obj):
    """Circularly convolve a specimen with a PSF (spectral product).

    A centered delta specimen reproduces the PSF itself. Tiny negative
    excursions from roundoff are clamped to zero.
    """
    values = psf_obj.values if isinstance(psf_obj, Psf) else np.asarray(psf_obj)
    if obj.shape != values.shape:
        raise ValueError("object and psf shapes differ")
    kernel = np.fft.ifftshift(values)  # move DC-centered kernel origin to (0,0)
    out = np.fft.ifft2(np.fft.fft2(obj) * np.fft.fft2(kernel)).real
    return np.clip(out, 0.0, None)


def _pink_field(rng, shape):
    """Unit-std noise field with a 1/|f| amplitude spectrum, zero mean."""
    white = rng.standard_normal(shape)
    spec = np.fft.fft2(white)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = np.inf  # kill DC instead of dividing by zero
    spec = spec / radius
    field = np.fft.ifft2(spec).real
    std = field.std()
    return field / std if std > 0 else field


def add_noise(rng, frame, cfg):
    """Apply the configured noise chain; output is clamped at zero.

    Order: background offset, Poisson resampling, structured interference,
    pink field, Gaussian readout noise.
    """
    out = np.asarray(frame, dtype=np.float64)
    if cfg.background:
        out = out + cfg.background
    if cfg.poisson_peak_counts > 0:
        lam = np.clip(out, 0.0, None) * cfg.poisson_peak_counts
        out = rng.poisson(lam).astype(np.float64) / cfg.poisson_peak_counts
    if cfg.structured_amplitude > 0:
        yy, xx = _coord_grids(out.shape[0])
        n = out.shape[0]
        fy, fx = rng.integers(1, 5), rng.integers(1, 5)
        phase = rng.uniform(0, 2 * np.pi)
        fringe = 0.5 + 0.5 * np.sin(2 * np.pi * (fy * yy + fx * xx) / n + phase)
        ghost = synth_specimen(rng, "mixed", out.shape[0])
        out = out + cfg.structured_amplitude * (fringe + ghost)
    if cfg.pink_amplitude > 0:
        out = out + cfg.pink_amplitude * _pink_field(rng, out.shape)
    if cfg.gaussian_sigma > 0:
        out = out + cfg.gaussian_sigma * rng.standard_normal(out.shape)
    return np.clip(out, 0.0, None)


def write_pgm16(path, frame, scale=None):
    """Dump a frame as a binary 16-bit PGM (big-endian per the format).

    scale defaults to the frame max so the full dynamic range is used;
    pass an explicit scale to keep a frame series comparable.
    """
    arr = np.asarray(frame, dtype=np.float64)
    if scale is None:
        scale = arr.max() if arr.max() > 0 else 1.0
    q = np.clip(arr / scale, 0.0, 1.0)
    data = (q * 65535.0 + 0.5).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5 {arr.shape[1]} {arr.shape[0]} 65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    """Read a binary 8- or 16-bit PGM into a float frame scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    # header tokens: magic, width, height, maxval; comments start with #
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    dtype = ">u2" if maxval > 255 else np.uint8
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def load_specimen_pool(directory, size):
    """Load all PGM files in a directory, resampled to size x size.

    Returns a list of frames; empty when the directory has no PGMs.
    """
    import pathlib

    frames = []
    for p in sorted(pathlib.Path(directory).glob("*.pgm")):
        img = read_pgm(p)
        zy, zx = size / img.shape[0], size / img.shape[1]
        frames.append(np.clip(ndimage.zoom(img, (zy, zx), order=1), 0.0, 1.0))
    return frames
