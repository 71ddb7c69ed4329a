"""Dataset synthesis, training loop, evaluation and sampling sweeps.

Every sample is generated from a counter-based stream (dataset seed plus
sample index), so a dataset is a pure function of its DatasetSpec: the same
spec always produces byte-identical files, from any machine or process, and
any single sample can be regenerated without the rest.

Per sample the draw order is fixed: specimen, rotation, corrected-mode
aberration, optional uncorrectable system aberration, sampling factor,
noise parameters, per-image noise, label jitter. Appending new draws at the
end of this list is the only backward-compatible way to extend it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from .imaging import NoiseConfig, add_noise, augment, form_image, synth_specimen
from .network import Hyper, adamw_step, forward_batch, init_train_state, loss_and_grad
from .optics import make_pupil, psf
from .pseudopsf import DEFAULT_EPSILON, build_input_stack
from .schemes import make_scheme
from .zernike import compose_phase, sample_aberration

__all__ = [
    "DatasetSpec",
    "Dataset",
    "TrainLog",
    "EvalResult",
    "generate_sample",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "train",
    "evaluate",
    "sampling_sweep",
]

MAGIC = b"MLAODAT1"
VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    """Complete recipe for a synthetic dataset.

    Noise parameter ranges are (lo, hi) bounds sampled per image set; the
    Poisson count and the additive noise amplitudes are drawn log-uniform
    (their effects span decades), the background uniform. A range of
    (0, 0) disables that term.
    """

    scheme_tag: str = "ast2"
    corrected_modes: tuple = (5, 6, 7, 8, 11)
    bias_mode: int = 5
    n_samples: int = 1000
    seed: int = 0
    grid_size: int = 128
    exponent: int = 4
    max_rms: float = 3.0
    label_jitter: float = 0.05
    sampling_range: tuple = (1.0, 1.2)
    poisson_range: tuple = (300.0, 3000.0)
    gaussian_range: tuple = (1e-3, 1e-2)
    pink_range: tuple = (5e-4, 5e-3)
    background_range: tuple = (0.0, 5e-3)
    structured_range: tuple = (0.0, 0.0)
    system_modes: tuple = (14, 15, 16, 17, 18, 19, 20, 21)
    system_rms: float = 0.0
    epsilon: float = DEFAULT_EPSILON

    def scheme(self):
        return make_scheme(self.scheme_tag, self.corrected_modes, self.bias_mode)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        for key in (
            "corrected_modes", "sampling_range", "poisson_range", "gaussian_range",
            "pink_range", "background_range", "structured_range", "system_modes",
        ):
            raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass
class Dataset:
    spec: DatasetSpec
    stacks: np.ndarray  # (n, channels, 32, 32) float32
    labels: np.ndarray  # (n, n_modes) float32
    true_coeffs: np.ndarray  # (n, n_modes) float32, corrected-mode part
    sampling: np.ndarray  # (n,) float32
    noise_params: np.ndarray  # (n, 5) float32, NoiseConfig order

    @property
    def n(self):
        return self.stacks.shape[0]


def _log_uniform(rng, lo, hi):
    if hi <= 0.0:
        return 0.0
    if lo <= 0.0:
        raise ValueError("log-uniform range needs a positive lower bound")
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def generate_sample(spec, index, scheme=None):
    """Build sample `index` of the dataset described by `spec`.

    Returns (stack, label, true_coeffs, sampling_factor, noise_config).
    """
    scheme = scheme or spec.scheme()
    rng = np.random.default_rng([spec.seed, int(index)])
    specimen = synth_specimen(rng, "mixed", spec.grid_size)
    specimen = augment(rng, specimen)
    truth = sample_aberration(rng, spec.corrected_modes, spec.max_rms)
    total = truth
    if spec.system_rms > 0.0:
        total = total + sample_aberration(rng, spec.system_modes, spec.system_rms)
    factor = float(rng.uniform(*spec.sampling_range))
    noise = NoiseConfig(
        background=float(rng.uniform(*spec.background_range)),
        poisson_peak_counts=_log_uniform(rng, *spec.poisson_range),
        gaussian_sigma=_log_uniform(rng, *spec.gaussian_range),
        pink_amplitude=_log_uniform(rng, *spec.pink_range),
        structured_amplitude=_log_uniform(rng, *spec.structured_range),
    )
    pupil = make_pupil(spec.grid_size, factor, spec.exponent)
    reference = float(psf(pupil).values.sum())
    images = []
    for bias in scheme.bias_vectors():
        phase = compose_phase(total + bias, spec.grid_size, pupil.radius_ratio)
        frame = form_image(specimen, psf(pupil, phase).values / reference)
        images.append(add_noise(rng, frame, noise))
    stack = build_input_stack(images, scheme, spec.epsilon)
    true_coeffs = truth.coefficients(spec.corrected_modes)
    label = -true_coeffs + spec.label_jitter * rng.standard_normal(len(true_coeffs))
    return stack, label, true_coeffs, factor, noise


def generate_dataset(spec, log_fn=None):
    scheme = spec.scheme()
    n = int(spec.n_samples)
    stacks = np.empty((n, scheme.n_channels, 32, 32), dtype=np.float32)
    labels = np.empty((n, scheme.n_modes), dtype=np.float32)
    true_coeffs = np.empty((n, scheme.n_modes), dtype=np.float32)
    sampling = np.empty(n, dtype=np.float32)
    noise_params = np.empty((n, 5), dtype=np.float32)
    for i in range(n):
        stack, label, truth, factor, noise = generate_sample(spec, i, scheme)
        stacks[i] = stack.channels
        labels[i] = label
        true_coeffs[i] = truth
        sampling[i] = factor
        noise_params[i] = noise.as_array()
        if log_fn is not None and (i + 1) % 1000 == 0:
            log_fn(f"generated {i + 1}/{n} samples")
    return Dataset(spec, stacks, labels, true_coeffs, sampling, noise_params)


def save_dataset(path, dataset):
    header = dataset.spec.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", dataset.n))
        for i in range(dataset.n):
            payload = b"".join(
                arr.astype("<f4").tobytes()
                for arr in (
                    dataset.stacks[i].ravel(),
                    dataset.labels[i],
                    dataset.true_coeffs[i],
                    dataset.sampling[i : i + 1],
                    dataset.noise_params[i],
                )
            )
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"truncated dataset file while reading {what}")
    return data


def load_dataset(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, "magic") != MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        spec = DatasetSpec.from_json(_read_exact(fh, header_len, "header").decode("utf-8"))
        (n,) = struct.unpack("<Q", _read_exact(fh, 8, "count"))
        scheme = spec.scheme()
        c, m = scheme.n_channels, scheme.n_modes
        expected = 4 * (c * 32 * 32 + m + m + 1 + 5)
        stacks = np.empty((n, c, 32, 32), dtype=np.float32)
        labels = np.empty((n, m), dtype=np.float32)
        true_coeffs = np.empty((n, m), dtype=np.float32)
        sampling = np.empty(n, dtype=np.float32)
        noise_params = np.empty((n, 5), dtype=np.float32)
        for i in range(n):
            (length,) = struct.unpack("<I", _read_exact(fh, 4, f"record {i} length"))
            if length != expected:
                raise ValueError(
                    f"{path}: record {i} is {length} bytes, expected {expected}"
                )
            flat = np.frombuffer(_read_exact(fh, length, f"record {i}"), dtype="<f4")
            pos = c * 32 * 32
            stacks[i] = flat[:pos].reshape(c, 32, 32)
            labels[i] = flat[pos : pos + m]
            true_coeffs[i] = flat[pos + m : pos + 2 * m]
            sampling[i] = flat[pos + 2 * m]
            noise_params[i] = flat[pos + 2 * m + 1 :]
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last record")
    return Dataset(spec, stacks, labels, true_coeffs, sampling, noise_params)


@dataclass
class TrainLog:
    """Per-epoch history: (epoch, train data-term RMS, validation RMS)."""

    history: list

    def final_val(self):
        return self.history[-1][2]


def _batched_rms(model, stacks, labels, batch=256):
    total, count = 0.0, 0
    for start in range(0, stacks.shape[0], batch):
        x = stacks[start : start + batch].astype(np.float64)
        y = labels[start : start + batch].astype(np.float64)
        out, _ = forward_batch(model, x)
        total += float(((out - y) ** 2).sum())
        count += out.size
    return float(np.sqrt(total / count))


def train(model, dataset, hyper=Hyper(), epochs=10, val_fraction=0.1, seed=0,
          log_fn=None):
    """Minibatch AdamW training with a deterministic tail validation split.

    Samples are i.i.d. by construction, so the last val_fraction of the
    dataset is an unbiased holdout. Shuffling is per-epoch from the given
    seed; training the same model twice with identical arguments follows
    the identical sequence of updates.
    """
    n = dataset.n
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        raise ValueError("no training samples left after validation split")
    train_x, train_y = dataset.stacks[: n - n_val], dataset.labels[: n - n_val]
    val_x, val_y = dataset.stacks[n - n_val :], dataset.labels[n - n_val :]
    state = init_train_state(model, hyper)
    params = model.params()
    history = []
    for epoch in range(int(epochs)):
        order = np.random.default_rng([seed, epoch]).permutation(train_x.shape[0])
        sq_sum, count = 0.0, 0
        for start in range(0, order.size, hyper.batch_size):
            pick = order[start : start + hyper.batch_size]
            x = train_x[pick].astype(np.float64)
            y = train_y[pick].astype(np.float64)
            loss, grads, out = loss_and_grad(model, x, y, hyper, want_out=True)
            adamw_step(params, grads, state)
            sq_sum += float(((out - y) ** 2).sum())
            count += out.size
        train_rms = float(np.sqrt(sq_sum / max(count, 1)))
        val_rms = _batched_rms(model, val_x, val_y) if n_val else float("nan")
        history.append((epoch, train_rms, val_rms))
        if log_fn is not None:
            log_fn(f"epoch {epoch}: train_rms={train_rms:.4f} val_rms={val_rms:.4f}")
    return TrainLog(history)


@dataclass
class EvalResult:
    input_rms: np.ndarray
    residual_rms: np.ndarray

    def binned(self, edges):
        """Summaries per input-RMS bin: (lo, hi, n, input_mean,
        residual_mean, residual_median) with lo <= rms < hi."""
        out = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mask = (self.input_rms >= lo) & (self.input_rms < hi)
            if mask.any():
                out.append((
                    float(lo), float(hi), int(mask.sum()),
                    float(self.input_rms[mask].mean()),
                    float(self.residual_rms[mask].mean()),
                    float(np.median(self.residual_rms[mask])),
                ))
            else:
                out.append((float(lo), float(hi), 0, np.nan, np.nan, np.nan))
        return out


def evaluate(model, dataset, batch=256):
    """Open-loop residual per sample: aberration left after applying the
    predicted correction once, assuming a perfect corrector."""
    preds = []
    for start in range(0, dataset.n, batch):
        x = dataset.stacks[start : start + batch].astype(np.float64)
        out, _ = forward_batch(model, x)
        preds.append(out)
    preds = np.concatenate(preds, axis=0)
    true = dataset.true_coeffs.astype(np.float64)
    input_rms = np.linalg.norm(true, axis=1)
    residual_rms = np.linalg.norm(true + preds, axis=1)
    return EvalResult(input_rms=input_rms, residual_rms=residual_rms)


def sampling_sweep(model, base_spec, factors, n_samples=200, seed=901, log_fn=None):
    """Re-render fresh test sets pinned to each sampling factor and measure
    open-loop residuals. Returns a list of result dicts."""
    results = []
    for factor in factors:
        spec = replace(
            base_spec,
            n_samples=int(n_samples),
            seed=int(seed),
            sampling_range=(float(factor), float(factor)),
        )
        data = generate_dataset(spec, log_fn=None)
        res = evaluate(model, data)
        results.append({
            "factor": float(factor),
            "n": int(data.n),
            "input_mean": float(res.input_rms.mean()),
            "residual_mean": float(res.residual_rms.mean()),
            "residual_median": float(np.median(res.residual_rms)),
        })
        if log_fn is not None:
            row = results[-1]
            log_fn(
                f"factor {row['factor']:.2f}: input {row['input_mean']:.3f} "
                f"-> residual {row['residual_mean']:.3f}"
            )
    return results
