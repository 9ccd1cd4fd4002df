import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finphase.polydetect import IllConditionedFit, detect, fit_poly, fit_power_series
from finphase.sections import VolumeProfile, volume_profile
from finphase.surfaces import QuadricSpec, make_quadric, perturbed_paraboloid

GRID = np.linspace(0.01, 0.3, 30)


def _quadric(kind, n=3):
    return make_quadric(QuadricSpec(kind, (1,) * n), n)


@pytest.fixture(scope="module")
def profiles():
    e3 = [0, 0, 1]
    return {
        "paraboloid": volume_profile(_quadric("elliptic_paraboloid"), e3, GRID, 0.3),
        "sphere": volume_profile(_quadric("ellipsoid"), e3, GRID, 0.3),
        "hyperboloid": volume_profile(_quadric("two_sheet_hyperboloid"), e3, GRID, 0.3),
        "circle": volume_profile(_quadric("ellipsoid", 2), [0, 1], GRID, 0.3),
        "perturbed": volume_profile(perturbed_paraboloid(2, 0.2), e3, GRID, 0.3),
    }


def synthetic(values, t=GRID, err=1e-10):
    return VolumeProfile(np.array([0, 0, 1.0]), t, values, np.full(len(t), err),
                         "radial_quadrature", float(t.max()))


def test_fit_poly_exact_synthetic():
    prof = synthetic(3 * GRID - 2 * GRID**2 + 0.5 * GRID**3)
    coeffs, rms = fit_poly(prof, 3)
    np.testing.assert_allclose(coeffs, [3, -2, 0.5], rtol=1e-8)
    assert rms < 1e-10


def test_fit_poly_examples(profiles):
    coeffs, rms = fit_poly(profiles["paraboloid"], 1)
    assert coeffs[0] == pytest.approx(math.pi, rel=1e-10)
    assert rms <= np.max(profiles["paraboloid"].err)
    coeffs, rms = fit_poly(profiles["sphere"], 2)
    np.testing.assert_allclose(coeffs, [2 * math.pi, -math.pi], rtol=1e-9)
    assert rms <= 3 * np.max(profiles["sphere"].err)
    _, rms1 = fit_poly(profiles["sphere"], 1)
    assert rms1 > 1e4 * np.max(profiles["sphere"].err)


def test_fit_poly_preconditions():
    with pytest.raises(ValueError):
        fit_poly(synthetic(GRID), 0)
    with pytest.raises(ValueError):
        fit_poly(synthetic(GRID[:4], GRID[:4]), 2)
    with pytest.raises(IllConditionedFit):
        fit_poly(synthetic(GRID), 3, max_cond=1.0)


@pytest.mark.parametrize(
    "name,degree,closed",
    [
        ("paraboloid", 1, [math.pi]),
        ("sphere", 2, [2 * math.pi, -math.pi]),
        ("hyperboloid", 2, [2 * math.pi, math.pi]),
    ],
)
def test_detect_quadrics(profiles, name, degree, closed):
    v = detect(profiles[name], 6)
    assert v.is_polynomial
    assert v.degree == degree
    np.testing.assert_allclose(v.coeffs, closed, rtol=1e-8)
    assert v.residual_rms <= v.threshold


def test_detect_circle_power_law(profiles):
    v = detect(profiles["circle"], 6)
    assert not v.is_polynomial
    assert v.model == "power_law"
    assert v.exponent == pytest.approx(0.5, abs=0.02)


def test_detect_perturbed_not_polynomial(profiles):
    v = detect(profiles["perturbed"], 6)
    assert not v.is_polynomial
    assert v.residual_rms > 10 * v.threshold


@pytest.mark.parametrize("name", ["paraboloid", "sphere", "hyperboloid"])
def test_degree_stability(profiles, name):
    surf = {"paraboloid": "elliptic_paraboloid", "sphere": "ellipsoid",
            "hyperboloid": "two_sheet_hyperboloid"}[name]
    dense = np.linspace(0.005, 0.15, 60)
    v_half = detect(volume_profile(_quadric(surf), [0, 0, 1], dense, 0.15), 6)
    assert v_half.degree == detect(profiles[name], 6).degree


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_scale_equivariance(s):
    base = synthetic(2 * math.pi * GRID - math.pi * GRID**2, err=1e-12)
    v0 = detect(base, 6)
    v1 = detect(base.scaled(s), 6)
    assert v1.is_polynomial == v0.is_polynomial
    assert v1.degree == v0.degree
    np.testing.assert_allclose(v1.coeffs, s * np.array(v0.coeffs), rtol=1e-9)


def test_power_series_recovers_exponent():
    t = np.geomspace(1e-3, 0.1, 20)
    prof = synthetic(4.0 * t**1.5 * (1 - 0.3 * t), t=t, err=1e-12)
    p, coef, chi2 = fit_power_series(prof)
    assert p == pytest.approx(1.5, abs=1e-6)
    assert coef[0] == pytest.approx(4.0, rel=1e-5)


def test_verdict_json_shape(profiles):
    obj = detect(profiles["paraboloid"], 3).to_json_obj()
    for key in ("is_polynomial", "degree", "coeffs", "residual_rms", "threshold"):
        assert key in obj
