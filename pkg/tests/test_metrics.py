import numpy as np
import pytest

from mlao.imaging import form_image, synth_specimen
from mlao.metrics import (
    MetricConfig,
    band_mask,
    metric_for_modality,
    metric_fourier,
    metric_intensity,
    metric_sharpness,
)
from mlao.optics import make_pupil, psf
from mlao.zernike import ZernikeVector, compose_phase, sample_aberration


def test_intensity_is_plain_sum():
    rng = np.random.default_rng(0)
    frame = rng.uniform(0, 1, (32, 32))
    assert metric_intensity(frame) == pytest.approx(frame.sum())


def test_fourier_flat_spectrum_counts_bins():
    # an impulse has |F| = 1 everywhere, so the metric equals the number of
    # annulus bins; count them independently from fftfreq
    n = 8
    frame = np.zeros((n, n))
    frame[3, 5] = 1.0
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    radius = np.hypot(fy, fx)
    want = int(np.sum((radius >= 0.05) & (radius < 0.3)))
    assert want > 0
    assert metric_fourier(frame, f_max=0.5) == pytest.approx(float(want))


def test_band_mask_excludes_dc():
    m = band_mask((16, 16), 0.0, 0.5)
    assert not m[0, 0]
    assert m.sum() > 0


def test_sharpness_scale_invariant():
    rng = np.random.default_rng(1)
    frame = rng.uniform(0, 1, (64, 64))
    a = metric_sharpness(frame)
    b = metric_sharpness(frame * 7.3)
    assert a == pytest.approx(b, rel=1e-12)


def test_bad_band_config_rejected():
    with pytest.raises(ValueError):
        MetricConfig(low=0.6, high=0.6)
    with pytest.raises(ValueError):
        MetricConfig(low=0.5, high=0.3)


def _render(pupil, specimen, aberration, reference):
    phase = compose_phase(aberration, pupil.grid_size, pupil.radius_ratio)
    return form_image(specimen, psf(pupil, phase).values / reference)


def test_intensity_drops_with_aberration_two_photon():
    # every aberrated draw must score below the zero-aberration frame
    rng = np.random.default_rng(2)
    pupil = make_pupil(128, 1.0, 4)
    reference = psf(pupil).values.sum()
    spec = synth_specimen(rng, "mixed", 128)
    y0 = metric_intensity(_render(pupil, spec, ZernikeVector(), reference))
    for _ in range(5):
        ab = sample_aberration(rng, [5, 6, 7, 8, 11], 1.0)
        ab = ab.scaled(1.0 / max(ab.rms(), 1e-9))  # rms exactly 1
        y = metric_intensity(_render(pupil, spec, ab, reference))
        assert y < y0, (y, y0)


def test_intensity_constant_for_widefield():
    # linear imaging conserves total signal, aberrated or not
    rng = np.random.default_rng(3)
    pupil = make_pupil(128, 1.0, 2)
    spec = synth_specimen(rng, "mixed", 128)
    ab = sample_aberration(rng, [5, 6, 7, 8, 11], 1.5)
    f0 = psf(pupil, normalized=True)
    f1 = psf(pupil, compose_phase(ab, 128, pupil.radius_ratio), normalized=True)
    y0 = metric_intensity(form_image(spec, f0))
    y1 = metric_intensity(form_image(spec, f1))
    assert y1 == pytest.approx(y0, rel=1e-9)


def test_sharpness_drops_with_aberration_widefield():
    rng = np.random.default_rng(4)
    pupil = make_pupil(128, 1.0, 2)
    spec = synth_specimen(rng, "mixed", 128)
    f0 = psf(pupil, normalized=True)
    y0 = metric_sharpness(form_image(spec, f0))
    for _ in range(5):
        ab = sample_aberration(rng, [5, 6, 7, 8, 11], 1.0)
        ab = ab.scaled(1.5 / max(ab.rms(), 1e-9))
        f1 = psf(pupil, compose_phase(ab, 128, pupil.radius_ratio), normalized=True)
        y = metric_sharpness(form_image(spec, f1))
        assert y < y0


def test_metric_for_modality_selection():
    assert metric_for_modality(4) is metric_intensity
    assert metric_for_modality(6) is metric_intensity
    frame = np.random.default_rng(5).uniform(0, 1, (32, 32))
    assert metric_for_modality(2)(frame) == pytest.approx(metric_sharpness(frame))
    with pytest.raises(ValueError):
        metric_for_modality(3)
