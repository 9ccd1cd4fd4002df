import math

import numpy as np
import pytest

from finphase.sections import (
    SliceEscapesChart,
    VolumeProfile,
    cap_volume_mc,
    leading_exponent,
    section_volume,
    trapezoid_integral,
    volume_profile,
)
from finphase.surfaces import QuadricSpec, inverse_gauss, make_quadric, perturbed_paraboloid, unit


def sphere(n=3):
    return make_quadric(QuadricSpec("ellipsoid", (1,) * n), n)


def paraboloid(n=3):
    return make_quadric(QuadricSpec("elliptic_paraboloid", (1,) * (n - 1)), n)


def cap_area(t):
    return math.pi * (2 * t - t * t)


@pytest.mark.parametrize("xi", [(0, 0, 1), (0.3, -0.2, 1), (-0.5, 0.1, 1)])
def test_sphere_slice_area(xi):
    s = sphere()
    fr = inverse_gauss(s, unit(xi))
    A, err = section_volume(s, fr, 0.1)
    assert A == pytest.approx(0.19 * math.pi, abs=1e-10)
    assert err < 1e-9
    assert abs(A - 0.19 * math.pi) <= err + 1e-12


@pytest.mark.parametrize("p", [(0.0, 0.0), (0.4, 0.0), (0.3, -0.7)])
def test_paraboloid_slice_area(p):
    # slice of x3=|x'|^2 at distance t along the normal: pi t / xi_n^2
    s = paraboloid()
    xi = unit(np.append(-np.array(p), 1.0))
    fr = inverse_gauss(s, xi)
    A, _ = section_volume(s, fr, 0.25)
    assert A == pytest.approx(math.pi * 0.25 / xi[-1] ** 2, rel=1e-11)


def test_hyperboloid_slice_area():
    s = make_quadric(QuadricSpec("two_sheet_hyperboloid", (1, 1, 1)), 3)
    fr = inverse_gauss(s, [0, 0, 1])
    A, _ = section_volume(s, fr, 0.2)
    assert A == pytest.approx(0.44 * math.pi, rel=1e-11)


def test_zero_height_slice():
    s = sphere()
    fr = inverse_gauss(s, [0, 0, 1])
    assert section_volume(s, fr, 0.0) == (0.0, 0.0)
    assert section_volume(s, fr, 1e-8)[0] < 1e-7


def test_circle_chord():
    s = sphere(2)
    fr = inverse_gauss(s, unit([0.2, 1]))
    A, _ = section_volume(s, fr, 0.05)
    assert A == pytest.approx(2 * math.sqrt(0.1 - 0.0025), rel=1e-10)


def test_monte_carlo_three_sphere_slice():
    s = sphere(4)
    fr = inverse_gauss(s, unit([0.1, 0, 0.2, 1]))
    t = 0.1
    A, err = section_volume(s, fr, t, n_samples=400_000, seed=5)
    exact = 4 / 3 * math.pi * (2 * t - t * t) ** 1.5
    assert abs(A - exact) < 4 * err
    assert err / exact < 5e-3


def test_monte_carlo_seed_determinism():
    s = sphere(4)
    fr = inverse_gauss(s, [0, 0, 0, 1])
    a = section_volume(s, fr, 0.05, n_samples=100_000, seed=9)
    b = section_volume(s, fr, 0.05, n_samples=100_000, seed=9)
    assert a == b


def test_slice_escaping_chart_raises():
    s = sphere()
    fr = inverse_gauss(s, [0, 0, 1])
    with pytest.raises(SliceEscapesChart):
        section_volume(s, fr, 0.9)


def test_profiles_match_closed_forms():
    grid = np.linspace(0.05, 0.5, 10)
    prof = volume_profile(paraboloid(), [0, 0, 1], grid, 0.5)
    np.testing.assert_allclose(prof.values, math.pi * grid, rtol=1e-11)
    prof = volume_profile(sphere(), [0, 0, 1], grid, 0.5)
    np.testing.assert_allclose(prof.values, math.pi * (2 * grid - grid**2), rtol=1e-11)
    assert np.all(np.diff(prof.values) > 0)
    assert prof.method == "radial_quadrature"


def test_profile_threads_match_serial():
    grid = np.geomspace(0.01, 0.2, 8)
    a = volume_profile(sphere(), unit([0.1, 0.2, 1]), grid, 0.2, jobs=1)
    b = volume_profile(sphere(), unit([0.1, 0.2, 1]), grid, 0.2, jobs=4)
    np.testing.assert_array_equal(a.values, b.values)


def test_sphere_direction_covariance():
    grid = np.geomspace(0.01, 0.25, 12)
    p1 = volume_profile(sphere(), unit([0.3, 0.1, 1]), grid, 0.25)
    p2 = volume_profile(sphere(), unit([-0.2, 0.4, 1]), grid, 0.25)
    assert np.all(np.abs(p1.values - p2.values) <= p1.err + p2.err + 1e-12)


@pytest.mark.parametrize(
    "surf,n,expected,tol",
    [("sphere", 2, 0.5, 0.02), ("paraboloid", 3, 1.0, 0.02), ("sphere", 3, 1.0, 0.02)],
)
def test_leading_exponent_deterministic(surf, n, expected, tol):
    s = sphere(n) if surf == "sphere" else paraboloid(n)
    xi = np.zeros(n)
    xi[-1] = 1
    prof = volume_profile(s, xi, np.geomspace(1e-4, 1e-1, 30), 0.1)
    slope, se = leading_exponent(prof)
    assert abs(slope - expected) < tol
    assert se < 0.01


def test_leading_exponent_three_sphere():
    s = sphere(4)
    prof = volume_profile(s, [0, 0, 0, 1], np.geomspace(1e-3, 1e-1, 12), 0.1,
                          seed=3, n_samples=300_000)
    slope, se = leading_exponent(prof)
    assert abs(slope - 1.5) < 0.05
    assert prof.method == "monte_carlo" and prof.seed == 3


def test_leading_exponent_rejects_nonpositive():
    prof = VolumeProfile(np.array([0, 0, 1.0]), np.arange(1, 8) / 10, np.r_[0, np.ones(6)],
                         np.zeros(7), "radial_quadrature", 1.0)
    with pytest.raises(ValueError):
        leading_exponent(prof)


def test_csv_header():
    prof = volume_profile(paraboloid(), [0, 0, 1], [0.1, 0.2], 0.2)
    text = prof.to_csv()
    lines = text.splitlines()
    assert lines[0].startswith("# xi=")
    assert "# method=radial_quadrature" in lines
    assert lines[4] == "t,A,err"
    assert len(lines) == 7


@pytest.mark.parametrize("surf", ["sphere", "perturbed"])
def test_fubini_consistency(surf):
    s = sphere() if surf == "sphere" else perturbed_paraboloid(2, 0.2)
    xi = unit([0.2, -0.1, 1])
    c = 0.2
    prof = volume_profile(s, xi, np.linspace(c / 200, c, 200), c)
    integral, ierr = trapezoid_integral(prof)
    fr = inverse_gauss(s, xi)
    vol, verr = cap_volume_mc(s, fr, c, n_samples=1_000_000, seed=11)
    assert abs(integral - vol) <= 3 * math.hypot(ierr, verr)
    if surf == "sphere":
        # closed form: pi (c^2 - c^3/3)
        assert integral == pytest.approx(math.pi * (c * c - c**3 / 3), rel=1e-4)
