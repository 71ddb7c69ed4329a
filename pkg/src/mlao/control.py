"""Virtual microscope and closed-loop correction comparison.

The microscope owns a hidden true aberration and an accumulating correction
state. Estimators never see the truth: they receive a MicroscopeHandle that
exposes exactly the operations a real instrument would (acquire a biased
image, push a correction, count images). The comparison harness owns the
microscope itself, so it can report residual aberration that an experiment
would have to infer from image quality.

Noise is drawn from a fresh substream per acquisition index, so two
microscopes built with the same seed produce identical images for the same
acquisition sequence regardless of which estimator is driving.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .imaging import NoiseConfig, add_noise, form_image
from .metrics import MetricConfig, metric_intensity, metric_sharpness
from .network import forward
from .optics import make_pupil, psf
from .pseudopsf import DEFAULT_EPSILON, build_input_stack
from .zernike import ZernikeVector, compose_phase, rms

__all__ = [
    "VirtualMicroscope",
    "MicroscopeHandle",
    "MlaoEstimator",
    "ConventionalEstimator",
    "OracleEstimator",
    "Trajectory",
    "Report",
    "run_mlao",
    "compare",
]

REPORT_COLUMNS = (
    "trial",
    "estimator",
    "iteration",
    "images_cum",
    "input_rms",
    "residual_rms",
    "y_I",
    "y_S",
)


class VirtualMicroscope:
    """Renders a fixed specimen through the current aberration state.

    The true aberration is private by convention and by interface: code
    driving a correction must go through handle(), which cannot reach it.
    """

    def __init__(
        self,
        specimen,
        aberration,
        *,
        exponent=4,
        sampling_factor=1.0,
        noise=None,
        seed=0,
        illumination="uniform",
        waist_ratio=1.0,
    ):
        specimen = np.asarray(specimen, dtype=np.float64)
        if specimen.ndim != 2 or specimen.shape[0] != specimen.shape[1]:
            raise ValueError("specimen must be a square 2-d array")
        self._specimen = specimen
        self._true_aberration = aberration
        self._corrector = ZernikeVector({})
        self._pupil = make_pupil(
            specimen.shape[0], sampling_factor, exponent,
            illumination=illumination, waist_ratio=waist_ratio,
        )
        self._reference = float(psf(self._pupil).values.sum())
        self._noise = noise if noise is None or isinstance(noise, NoiseConfig) else NoiseConfig(*noise)
        self._seed = int(seed)
        self._count = 0

    @property
    def image_count(self):
        return self._count

    @property
    def exponent(self):
        return self._pupil.exponent

    @property
    def sampling_factor(self):
        return self._pupil.sampling_factor

    def _render(self, bias):
        total = self._true_aberration + self._corrector
        if bias is not None:
            total = total + bias
        phase = compose_phase(total, self._specimen.shape[0], self._pupil.radius_ratio)
        kernel = psf(self._pupil, phase).values / self._reference
        return form_image(self._specimen, kernel)

    def acquire(self, bias=None):
        """One noisy acquisition under the current correction plus bias."""
        frame = self._render(bias)
        if self._noise is not None:
            rng = np.random.default_rng([self._seed, self._count])
            frame = add_noise(rng, frame, self._noise)
        self._count += 1
        return frame

    def apply_correction(self, delta):
        self._corrector = self._corrector + delta

    def correction(self):
        return self._corrector

    def residual_rms(self):
        """Ground-truth residual; available on the microscope, not the handle."""
        return rms(self._true_aberration + self._corrector)

    def evaluation_image(self):
        """Noiseless unbiased frame for reporting; consumes no acquisition."""
        return self._render(None)

    def handle(self):
        return MicroscopeHandle(self)


class MicroscopeHandle:
    """Estimator-facing facade: acquire, correct, count. Nothing else."""

    __slots__ = ("_acquire", "_apply", "_counter")

    def __init__(self, scope):
        self._acquire = scope.acquire
        self._apply = scope.apply_correction
        self._counter = lambda: scope.image_count

    def acquire(self, bias=None):
        return self._acquire(bias)

    def apply_correction(self, delta):
        self._apply(delta)

    @property
    def image_count(self):
        return self._counter()


class MlaoEstimator:
    """One network correction cycle: M biased images, one prediction."""

    requires_truth = False

    def __init__(self, model, scheme, epsilon=DEFAULT_EPSILON):
        if model.scheme_tag and model.scheme_tag != scheme.tag:
            raise ValueError(
                f"model trained for scheme {model.scheme_tag!r}, asked to run {scheme.tag!r}"
            )
        if model.n_channels != scheme.n_channels:
            raise ValueError(
                f"model takes {model.n_channels} channels, scheme provides {scheme.n_channels}"
            )
        if model.corrected_modes and tuple(model.corrected_modes) != tuple(scheme.corrected_modes):
            raise ValueError("model and scheme disagree on corrected modes")
        self.model = model
        self.scheme = scheme
        self.epsilon = epsilon

    def __call__(self, handle):
        images = [handle.acquire(b) for b in self.scheme.bias_vectors()]
        stack = build_input_stack(images, self.scheme, self.epsilon)
        handle.apply_correction(forward(self.model, stack))


class ConventionalEstimator:
    """Adapter running a modal baseline routine as one correction cycle."""

    requires_truth = False

    def __init__(self, routine, modes, bias=1.0, metric_fn=metric_intensity):
        self.routine = routine
        self.modes = tuple(modes)
        self.bias = bias
        self.metric_fn = metric_fn

    def __call__(self, handle):
        self.routine(handle, self.modes, bias=self.bias, metric_fn=self.metric_fn)


class OracleEstimator:
    """Perfect corrector for harness tests; needs the hidden truth handed in."""

    requires_truth = True

    def __init__(self, modes=None):
        self.modes = tuple(modes) if modes is not None else None

    def __call__(self, handle, truth):
        correction = -truth
        if self.modes is not None:
            correction = correction.restricted(self.modes)
        handle.apply_correction(correction)


@dataclass
class Trajectory:
    """Residual RMS and cumulative image count, index 0 = before correction."""

    residuals: list = field(default_factory=list)
    images: list = field(default_factory=list)


def run_mlao(microscope, model, scheme, iterations=1, epsilon=DEFAULT_EPSILON):
    estimator = MlaoEstimator(model, scheme, epsilon)
    handle = microscope.handle()
    traj = Trajectory()
    traj.residuals.append(microscope.residual_rms())
    traj.images.append(microscope.image_count)
    for _ in range(int(iterations)):
        estimator(handle)
        traj.residuals.append(microscope.residual_rms())
        traj.images.append(microscope.image_count)
    return traj


@dataclass
class Report:
    rows: list = field(default_factory=list)

    def filtered(self, **match):
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def values(self, column, **match):
        return np.array([r[column] for r in self.filtered(**match)], dtype=float)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def _fixed_norm_draw(rng, modes, norm):
    direction = rng.standard_normal(len(modes))
    length = float(np.linalg.norm(direction))
    while length == 0.0:  # vanishing probability, but keep the draw total
        direction = rng.standard_normal(len(modes))
        length = float(np.linalg.norm(direction))
    return ZernikeVector.from_modes(modes, direction * (norm / length))


def compare(
    make_microscope,
    estimators,
    trials=10,
    rms_bins=(0.5, 1.0, 1.5),
    modes=(5, 6, 7, 8, 11),
    seed=0,
    iterations=1,
):
    """Run every estimator on identical instances of the same random trials.

    make_microscope(truth) must build a fresh microscope around the given
    true aberration; estimators is a name -> estimator mapping. Truth for
    bin b, trial t comes from default_rng([seed, b, t]) with direction
    uniform on the sphere and RMS pinned to the bin value, so bins are
    directly comparable. Returns a Report with one row per estimator,
    trial and iteration (iteration 0 is the uncorrected state).
    """
    modes = tuple(int(m) for m in modes)
    report = Report()
    cfg = MetricConfig()
    trial_index = 0
    for b, rms0 in enumerate(rms_bins):
        for t in range(trials):
            rng = np.random.default_rng([seed, b, t])
            truth = _fixed_norm_draw(rng, modes, float(rms0))
            input_rms = rms(truth)
            for name, estimator in estimators.items():
                scope = make_microscope(truth)
                handle = scope.handle()
                for iteration in range(int(iterations) + 1):
                    if iteration:
                        if getattr(estimator, "requires_truth", False):
                            estimator(handle, truth)
                        else:
                            estimator(handle)
                    frame = scope.evaluation_image()
                    report.rows.append(
                        {
                            "trial": trial_index,
                            "estimator": name,
                            "iteration": iteration,
                            "images_cum": scope.image_count,
                            "input_rms": input_rms,
                            "residual_rms": scope.residual_rms(),
                            "y_I": metric_intensity(frame),
                            "y_S": metric_sharpness(frame, cfg),
                        }
                    )
            trial_index += 1
    return report
