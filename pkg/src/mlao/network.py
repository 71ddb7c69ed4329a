"""Compact multi-scale CNN estimating Zernike coefficients from pseudo-PSFs.

Pure numpy, forward and backward written out explicitly so the gradients are
exact (verified against finite differences in the tests) and the whole model
stays dependency-free and bit-reproducible.

Architecture, for M_c input channels and N output modes:

    conv 3x3 same, M_c ->  8, tanh, 2x2 maxpool   (32 -> 16)
    conv 3x3 same,   8 -> 16, tanh, 2x2 maxpool   (16 ->  8)
    conv 3x3 same,  16 -> 32, tanh, 2x2 maxpool   ( 8 ->  4)
    conv 3x3 same,  32 -> 64, tanh, 2x2 maxpool   ( 4 ->  2)
    global max of the raw input and of each block's tanh output,
    concatenated to a vector of M_c + 120 values
    dense (M_c + 120) -> 32, tanh
    dense 32 -> N, linear

The raw-input global max is the peak of each pseudo-PSF channel, a
Strehl-like reading; the per-block maxima summarize progressively larger
physical scales. Total parameter count is 104*M_c + 33*N + 28184.

Numeric conventions: parameters are float64 arrays whose values are always
exactly representable in float32 (init and every optimizer step round
through float32), so the float32 file format round-trips bitwise while all
arithmetic runs in double precision. Max-pool and global-max ties resolve
to the first index in row-major order (np.argmax semantics).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .pseudopsf import CROP_SIZE, PseudoStack
from .zernike import ZernikeVector

__all__ = [
    "Hyper",
    "NetworkModel",
    "TrainState",
    "FormatError",
    "init_model",
    "count_parameters",
    "parameter_count",
    "forward",
    "forward_batch",
    "loss_and_grad",
    "init_train_state",
    "adamw_step",
    "save_model",
    "load_model",
]

_CHANNELS = (8, 16, 32, 64)
_FC_WIDTH = 32

MAGIC = b"MLAONET1"
VERSION = 1


class FormatError(ValueError):
    """Raised for malformed, truncated or incompatible model files."""


@dataclass(frozen=True)
class Hyper:
    """Optimizer and regularizer settings."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    l1: float = 1e-6
    l2: float = 1e-5
    batch_size: int = 64


@dataclass
class NetworkModel:
    n_channels: int
    n_modes: int
    scheme_tag: str
    corrected_modes: tuple
    conv_w: list
    conv_b: list
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def params(self):
        """Named parameter arrays in declaration (serialization) order."""
        out = {}
        for i in range(4):
            out[f"conv{i + 1}_w"] = self.conv_w[i]
            out[f"conv{i + 1}_b"] = self.conv_b[i]
        out["fc1_w"] = self.fc1_w
        out["fc1_b"] = self.fc1_b
        out["out_w"] = self.out_w
        out["out_b"] = self.out_b
        return out

    def weight_names(self):
        """Parameters the L1L2 regularizer applies to (kernels, not biases)."""
        return [n for n in self.params() if n.endswith("_w")]


@dataclass
class TrainState:
    hyper: Hyper
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def count_parameters(n_channels, n_modes):
    """Closed-form trainable parameter count for the fixed geometry."""
    return 104 * n_channels + 33 * n_modes + 28184


def parameter_count(model):
    return int(sum(p.size for p in model.params().values()))


def _f32_exact(arr):
    return arr.astype(np.float32).astype(np.float64)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return _f32_exact(rng.uniform(-limit, limit, shape))


def init_model(rng, n_channels, n_modes, scheme_tag="", corrected_modes=()):
    """Glorot-uniform weights, zero biases.

    The parameter budget is asserted for the supported configuration
    envelope (n_channels <= 28 covers every standard scheme at N <= 9);
    larger experimental inputs are allowed without the assertion.
    """
    if n_channels < 1 or n_modes < 1:
        raise ValueError("n_channels and n_modes must be positive")
    conv_w, conv_b = [], []
    cin = n_channels
    for cout in _CHANNELS:
        conv_w.append(_glorot(rng, (cout, cin, 3, 3), cin * 9, cout * 9))
        conv_b.append(np.zeros(cout, dtype=np.float64))
        cin = cout
    concat = n_channels + sum(_CHANNELS)
    fc1_w = _glorot(rng, (concat, _FC_WIDTH), concat, _FC_WIDTH)
    fc1_b = np.zeros(_FC_WIDTH, dtype=np.float64)
    out_w = _glorot(rng, (_FC_WIDTH, n_modes), _FC_WIDTH, n_modes)
    out_b = np.zeros(n_modes, dtype=np.float64)
    model = NetworkModel(
        n_channels=n_channels,
        n_modes=n_modes,
        scheme_tag=scheme_tag,
        corrected_modes=tuple(int(m) for m in corrected_modes),
        conv_w=conv_w,
        conv_b=conv_b,
        fc1_w=fc1_w,
        fc1_b=fc1_b,
        out_w=out_w,
        out_b=out_b,
    )
    if n_channels <= 28 and n_modes <= 9:
        count = parameter_count(model)
        assert 28000 <= count <= 32000, f"parameter budget violated: {count}"
        assert count == count_parameters(n_channels, n_modes)
    return model


def _im2col(x):
    """(B, C, H, W) -> (B, C, 9, H, W) patches for a 3x3 same convolution."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, k] = xp[:, :, di : di + h, dj : dj + w]
            k += 1
    return cols


def _col2im(dcols, h, w):
    """Adjoint of _im2col: (B, C, 9, H, W) -> (B, C, H, W)."""
    b, c, _, _, _ = dcols.shape
    dxp = np.zeros((b, c, h + 2, w + 2), dtype=dcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di : di + h, dj : dj + w] += dcols[:, :, k]
            k += 1
    return dxp[:, :, 1 : 1 + h, 1 : 1 + w]


def _conv_forward(x, w, bias):
    cols = _im2col(x)
    w9 = w.reshape(w.shape[0], w.shape[1], 9)
    out = np.tensordot(cols, w9, axes=([1, 2], [1, 2]))  # (B, H, W, Cout)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return out, cols


def _conv_backward(dout, cols, w, need_dx=True):
    w9 = w.reshape(w.shape[0], w.shape[1], 9)
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 3, 4]))  # (Cout, C, 9)
    db = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        dcols = np.tensordot(dout, w9, axes=([1], [0]))  # (B, H, W, C, 9)
        dcols = dcols.transpose(0, 3, 4, 1, 2)
        dx = _col2im(dcols, dout.shape[2], dout.shape[3])
    return dw.reshape(w.shape), db, dx


def _maxpool_forward(x):
    """2x2 stride-2 max pool; ties go to the first window element."""
    b, c, h, w = x.shape
    r = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    r = r.reshape(b, c, h // 2, w // 2, 4)
    idx = r.argmax(axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout, idx, h, w):
    b, c, ph, pw = dout.shape
    dr = np.zeros((b, c, ph, pw, 4), dtype=dout.dtype)
    np.put_along_axis(dr, idx[..., None], dout[..., None], axis=-1)
    dr = dr.reshape(b, c, ph, pw, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dr.reshape(b, c, h, w)


def _gmax_forward(x):
    """Global spatial max per channel with flat first-index argmax."""
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _gmax_scatter(dtap, idx, shape):
    b, c, h, w = shape
    dx = np.zeros((b, c, h * w), dtype=dtap.dtype)
    np.put_along_axis(dx, idx[..., None], dtap[..., None], axis=-1)
    return dx.reshape(shape)


def forward_batch(model, x, want_cache=False):
    """Run the network on a batch (B, M_c, 32, 32) -> (B, N).

    Returns (output, cache); the cache holds every intermediate the backward
    pass needs and is None unless requested.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != model.n_channels or x.shape[2:] != (CROP_SIZE, CROP_SIZE):
        raise ValueError(
            f"expected (B, {model.n_channels}, {CROP_SIZE}, {CROP_SIZE}), got {x.shape}"
        )
    taps, tap_meta = [], []
    t0, i0 = _gmax_forward(x)
    taps.append(t0)
    tap_meta.append((i0, x.shape))
    h = x
    blocks = []
    for i in range(4):
        z, cols = _conv_forward(h, model.conv_w[i], model.conv_b[i])
        a = np.tanh(z)
        tap, tidx = _gmax_forward(a)
        taps.append(tap)
        tap_meta.append((tidx, a.shape))
        pooled, pidx = _maxpool_forward(a)
        blocks.append({"cols": cols, "a": a, "pidx": pidx, "in_shape": h.shape})
        h = pooled
    concat = np.concatenate(taps, axis=1)  # (B, M_c + 120)
    z1 = concat @ model.fc1_w + model.fc1_b
    a1 = np.tanh(z1)
    out = a1 @ model.out_w + model.out_b
    cache = None
    if want_cache:
        cache = {"x": x, "blocks": blocks, "tap_meta": tap_meta,
                 "concat": concat, "a1": a1}
    return out, cache


def forward(model, stack):
    """Single-stack inference returning the predicted correction vector."""
    if isinstance(stack, PseudoStack):
        if stack.scheme_tag and model.scheme_tag and stack.scheme_tag != model.scheme_tag:
            raise ValueError(
                f"stack from scheme {stack.scheme_tag!r} fed to a {model.scheme_tag!r} model"
            )
        arr = stack.channels
    else:
        arr = np.asarray(stack)
    out, _ = forward_batch(model, arr[None])
    modes = model.corrected_modes or tuple(range(5, 5 + model.n_modes))
    return ZernikeVector.from_modes(modes, out[0])


def _backward_batch(model, cache, dout):
    """Exact gradients of the network output contraction with dout."""
    grads = {}
    da1 = dout @ model.out_w.T
    grads["out_w"] = cache["a1"].T @ dout
    grads["out_b"] = dout.sum(axis=0)
    dz1 = da1 * (1.0 - cache["a1"] ** 2)
    grads["fc1_w"] = cache["concat"].T @ dz1
    grads["fc1_b"] = dz1.sum(axis=0)
    dconcat = dz1 @ model.fc1_w.T

    # split tap gradients back out of the concat vector
    widths = [model.n_channels, *_CHANNELS]
    dtaps = []
    off = 0
    for wdt in widths:
        dtaps.append(dconcat[:, off : off + wdt])
        off += wdt

    dpooled = None  # gradient flowing into the next block's input
    for i in range(3, -1, -1):
        blk = cache["blocks"][i]
        a = blk["a"]
        da = _gmax_scatter(dtaps[i + 1], cache["tap_meta"][i + 1][0], a.shape)
        if dpooled is not None:
            da += _maxpool_backward(dpooled, blk["pidx"], a.shape[2], a.shape[3])
        dz = da * (1.0 - a * a)
        dw, db, dx = _conv_backward(dz, blk["cols"], model.conv_w[i], need_dx=(i > 0))
        grads[f"conv{i + 1}_w"] = dw
        grads[f"conv{i + 1}_b"] = db
        dpooled = dx
    # dtaps[0] would flow to the raw input, which is not a parameter
    return grads


def loss_and_grad(model, x, labels, hyper=Hyper(), want_out=False):
    """RMS coefficient loss with L1L2 weight regularization, plus gradients.

    loss = sqrt(mean((pred - label)^2)) + l1 * sum|w| + l2 * sum w^2 over
    weight matrices (biases unregularized). When the data term is exactly
    zero its (sub)gradient contribution is zero. With want_out the network
    output rides along as a third return value, saving callers a forward.
    """
    labels = np.asarray(labels, dtype=np.float64)
    out, cache = forward_batch(model, x, want_cache=True)
    if out.shape != labels.shape:
        raise ValueError(f"label shape {labels.shape} vs output {out.shape}")
    diff = out - labels
    data = float(np.sqrt(np.mean(diff * diff)))
    loss = data
    params = model.params()
    for name in model.weight_names():
        w = params[name]
        if hyper.l1:
            loss += hyper.l1 * float(np.abs(w).sum())
        if hyper.l2:
            loss += hyper.l2 * float((w * w).sum())
    if data > 0.0:
        dout = diff / (diff.size * data)
        grads = _backward_batch(model, cache, dout)
    else:
        grads = {n: np.zeros_like(p) for n, p in params.items()}
    for name in model.weight_names():
        w = params[name]
        reg = np.zeros_like(w)
        if hyper.l1:
            reg += hyper.l1 * np.sign(w)  # sign(0) = 0: subgradient choice
        if hyper.l2:
            reg += 2.0 * hyper.l2 * w
        grads[name] = grads[name] + reg
    if want_out:
        return loss, grads, out
    return loss, grads


def init_train_state(model, hyper=Hyper()):
    state = TrainState(hyper=hyper)
    for name, p in model.params().items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adamw_step(params, grads, state):
    """One decoupled-weight-decay Adam update, applied in place.

    With zero gradient and zero decay parameters are untouched; with zero
    gradient and decay wd each parameter becomes p * (1 - lr * wd) exactly.
    Updated values are rounded through float32 to keep the storage contract.
    """
    h = state.hyper
    state.step += 1
    t = state.step
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + h.eps)
        p -= h.lr * (update + h.weight_decay * p)
        p[...] = _f32_exact(p)


def _write_array(fh, arr):
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))


def save_model(path, model):
    """Binary little-endian format: magic, version, geometry header, then
    float32 parameters in declaration order."""
    params = model.params()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        tag = model.scheme_tag.encode("utf-8")
        fh.write(struct.pack("<III", model.n_channels, model.n_modes, len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<I", len(model.corrected_modes)))
        if model.corrected_modes:
            fh.write(struct.pack(f"<{len(model.corrected_modes)}I", *model.corrected_modes))
        fh.write(struct.pack("<I", len(params)))
        for arr in params.values():
            _write_array(fh, arr)
        for arr in params.values():
            fh.write(arr.astype("<f4").tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated model file while reading {what}")
    return data


def load_model(path, expect_channels=None, expect_modes=None, expect_scheme=None):
    """Load and validate a model file; optional expectations let a caller
    refuse incompatible models up front (e.g. an N=5 file in an N=9 loop)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, not a model file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        n_channels, n_modes, tag_len = struct.unpack(
            "<III", _read_exact(fh, 12, "geometry")
        )
        tag = _read_exact(fh, tag_len, "scheme tag").decode("utf-8")
        (n_corr,) = struct.unpack("<I", _read_exact(fh, 4, "mode count"))
        corrected = struct.unpack(f"<{n_corr}I", _read_exact(fh, 4 * n_corr, "modes"))
        if expect_channels is not None and n_channels != expect_channels:
            raise FormatError(
                f"{path}: model has {n_channels} input channels, need {expect_channels}"
            )
        if expect_modes is not None and n_modes != expect_modes:
            raise FormatError(f"{path}: model outputs {n_modes} modes, need {expect_modes}")
        if expect_scheme is not None and tag != expect_scheme:
            raise FormatError(f"{path}: model scheme {tag!r}, need {expect_scheme!r}")
        rng = np.random.default_rng(0)
        skeleton = init_model(rng, n_channels, n_modes, tag, corrected)
        params = skeleton.params()
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        if n_arrays != len(params):
            raise FormatError(f"{path}: {n_arrays} arrays, expected {len(params)}")
        shapes = []
        for name, ref in params.items():
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name} shape"))
            if shape != ref.shape:
                raise FormatError(f"{path}: {name} shape {shape}, expected {ref.shape}")
            shapes.append((name, shape))
        for name, shape in shapes:
            count = int(np.prod(shape))
            raw = _read_exact(fh, 4 * count, f"{name} data")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            params[name][...] = arr
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after parameters")
    return skeleton
