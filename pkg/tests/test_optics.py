import numpy as np
import pytest

from mlao.optics import DegenerateInputError, Psf, fwhm, make_pupil, psf
from mlao.zernike import ZernikeVector, compose_phase, sample_aberration


def test_pupil_zero_outside_unit_inside():
    p = make_pupil(128, 1.0, 4)
    c = 64
    ax = np.arange(128, dtype=float) - c
    y, x = np.meshgrid(ax, ax, indexing="ij")
    rho = np.hypot(x, y) / (p.radius_ratio * 128)
    assert np.all(p.amplitude[rho > 1.0] == 0.0)
    assert np.all(p.amplitude[rho <= 1.0] == 1.0)


def test_truncated_gaussian_profile():
    # amplitude follows exp(-(rho/waist)^2); at the pupil edge that is e^-1
    p = make_pupil(128, 1.0, 6, illumination="truncated_gaussian", waist_ratio=1.0)
    c = 64
    ax = np.arange(128, dtype=float) - c
    y, x = np.meshgrid(ax, ax, indexing="ij")
    rho = np.hypot(x, y) / (p.radius_ratio * 128)
    inside = rho <= 1.0
    assert np.allclose(p.amplitude[inside], np.exp(-(rho[inside] ** 2)), atol=1e-12)
    assert p.amplitude[c, c] == 1.0
    assert abs(np.exp(-1.0) - np.exp(-(1.0 ** 2))) < 1e-6  # edge/center by the law


@pytest.mark.parametrize("exponent", [2, 4, 6])
def test_calibrated_fwhm_is_two_pixels(exponent):
    illum = "truncated_gaussian" if exponent == 6 else "uniform"
    p = make_pupil(128, 1.0, exponent, illumination=illum)
    width = fwhm(psf(p))
    assert abs(width - 2.0) < 0.2, width


def test_sampling_factor_scales_fwhm():
    p1 = make_pupil(128, 1.0, 4)
    p2 = make_pupil(128, 2.0, 4)
    w1, w2 = fwhm(psf(p1)), fwhm(psf(p2))
    # halving the pupil radius doubles the width, within 15%
    assert abs(p1.radius_ratio / p2.radius_ratio - 2.0) < 1e-6
    assert abs(w2 / w1 - 2.0) < 0.15


def test_airy_radius_matches_theory():
    # uniform circular pupil, widefield: FWHM = 1.029 * N / (pupil diameter),
    # so the calibrated radius_ratio must be about 1.029 / (2 * FWHM_target)
    p = make_pupil(256, 1.0, 2)
    assert abs(p.radius_ratio - 1.029 / 4.0) / (1.029 / 4.0) < 0.05


def test_zero_phase_peak_at_center():
    p = make_pupil(128, 1.1, 4)
    f = psf(p)
    assert np.unravel_index(np.argmax(f.values), f.values.shape) == (64, 64)
    assert f.values[64, 64] == pytest.approx(p.amplitude.sum() ** 4, rel=1e-10)


def test_psf_180_degree_symmetry():
    p = make_pupil(128, 1.0, 4)
    ph = compose_phase(ZernikeVector({5: 0.8, 11: -0.5}), 128, p.radius_ratio)
    f = psf(p, ph).values
    rot = np.roll(np.flip(f, (0, 1)), (1, 1), (0, 1))
    assert np.allclose(f, rot, atol=1e-10 * f.max())


def test_piston_leaves_psf_unchanged():
    p = make_pupil(64, 1.0, 2)
    f0 = psf(p).values
    f1 = psf(p, np.full((64, 64), 0.37)).values
    assert np.allclose(f0, f1, rtol=1e-12)


def test_normalized_psf_sums_to_one():
    p = make_pupil(128, 1.0, 6, illumination="truncated_gaussian")
    f = psf(p, normalized=True)
    assert f.values.sum() == pytest.approx(1.0, abs=1e-12)


def test_strehl_bound_random_aberrations():
    # raw psf max can never exceed the zero-phase center value
    rng = np.random.default_rng(11)
    p = make_pupil(128, 1.0, 4)
    reference = psf(p).values[64, 64]
    modes = [5, 6, 7, 8, 9, 10, 11]
    for _ in range(25):
        ab = sample_aberration(rng, modes, 3.0)
        ph = compose_phase(ab, 128, p.radius_ratio)
        assert psf(p, ph).values.max() <= reference * (1 + 1e-12)


def test_fwhm_of_delta_is_one():
    img = np.zeros((64, 64))
    img[32, 32] = 1.0
    assert fwhm(img) == pytest.approx(1.0)


def test_fwhm_flat_input_raises():
    with pytest.raises(DegenerateInputError):
        fwhm(np.ones((32, 32)))


def test_phase_grid_mismatch_raises():
    p = make_pupil(64, 1.0, 2)
    with pytest.raises(ValueError):
        psf(p, np.zeros((32, 32)))


def test_bad_exponent_rejected():
    with pytest.raises(ValueError):
        make_pupil(64, 1.0, 3)
