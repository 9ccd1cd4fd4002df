import math
import threading
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finphase.exactpoly import (
    Cancelled,
    MultiPoly,
    PiMultiple,
    displayed_laplacian_constant,
    homogeneous_component,
    iterated_laplacian_at_zero,
    laplacian,
    poly_mul,
    radial_laplacian_constant,
    random_homogeneous,
    sphere_area,
    sphere_monomial_moment,
    spherical_average,
    t_k_symbol,
)


def X(dim, i):
    return MultiPoly.variable(dim, i)


def test_zero_coefficients_are_dropped():
    p = MultiPoly(2, {(1, 0): 0, (0, 1): Fraction(1, 2)})
    assert len(p) == 1
    assert (p - p).is_zero()
    assert (p - p).degree == -math.inf


def test_bad_exponent_rejected():
    with pytest.raises(ValueError):
        MultiPoly(2, {(1,): 1})
    with pytest.raises(ValueError):
        MultiPoly(2, {(1, -1): 1})


def test_float_coefficients_are_decimal_exact():
    assert MultiPoly.constant(1, 0.2).constant_term() == Fraction(1, 5)


def test_poly_mul_examples():
    x1 = X(2, 0)
    assert poly_mul(x1, x1) == MultiPoly(2, {(2, 0): 1})
    p = x1 + 3 * X(2, 1)
    assert poly_mul(p, MultiPoly.constant(2, 1)) == p
    r2 = MultiPoly.norm_squared(2)
    assert poly_mul(r2, r2) == MultiPoly(2, {(4, 0): 1, (2, 2): 2, (0, 4): 1})


def test_poly_mul_dimension_mismatch():
    with pytest.raises(ValueError):
        poly_mul(X(2, 0), X(3, 0))


def test_t_k_symbol():
    assert t_k_symbol(3, 0) == MultiPoly.constant(3, 1)
    x1, x2, x3 = X(3, 0), X(3, 1), X(3, 2)
    assert t_k_symbol(3, 1) == x3 - x1 * x1 - x2 * x2
    # hand expansion of (x3 - x1^2 - x2^2)^2
    expected = MultiPoly(
        3,
        {
            (0, 0, 2): 1,
            (2, 0, 1): -2,
            (0, 2, 1): -2,
            (4, 0, 0): 1,
            (2, 2, 0): 2,
            (0, 4, 0): 1,
        },
    )
    assert t_k_symbol(3, 2) == expected
    assert t_k_symbol(4, 3).degree == 6


def test_laplacian_examples():
    for d in (1, 2, 5):
        assert laplacian(MultiPoly.norm_squared(d)) == MultiPoly.constant(d, 2 * d)
    assert laplacian(X(2, 0) * X(2, 1)).is_zero()
    r2 = MultiPoly.norm_squared(2)
    assert laplacian(r2 * r2) == 16 * r2


def test_iterated_laplacian_examples():
    r2 = MultiPoly.norm_squared(2)
    assert iterated_laplacian_at_zero(r2, 1) == 4
    assert iterated_laplacian_at_zero(r2 * r2, 2) == 64
    quintic = MultiPoly(2, {(5, 0): 3, (2, 3): -1})
    assert iterated_laplacian_at_zero(quintic, 2) == 0


def test_iterated_laplacian_cancellation():
    ev = threading.Event()
    ev.set()
    with pytest.raises(Cancelled):
        iterated_laplacian_at_zero(MultiPoly.norm_squared(3) ** 4, 4, cancel=ev.is_set)


def test_homogeneous_component():
    t1 = t_k_symbol(3, 1)
    assert homogeneous_component(t1, 2) == -(X(3, 0) ** 2) - X(3, 1) ** 2
    assert homogeneous_component(t1, 5).is_zero()
    r2 = MultiPoly.norm_squared(2)
    r2_3 = MultiPoly(3, {(2, 0, 0): 1, (0, 2, 0): 1})
    assert homogeneous_component(t_k_symbol(3, 2), 4) == r2_3 * r2_3
    assert r2.is_homogeneous()


@pytest.mark.parametrize(
    "alpha,expected",
    [
        ((0, 0), PiMultiple(2, 1)),
        ((2, 0), PiMultiple(1, 1)),
        ((1, 0), PiMultiple(0)),
        ((0, 0, 0), PiMultiple(4, 1)),
        ((2, 0, 0), PiMultiple(Fraction(4, 3), 1)),
        ((0, 0, 0, 0), PiMultiple(2, 2)),
        ((4, 0), PiMultiple(Fraction(3, 4), 1)),
    ],
)
def test_sphere_moment_closed_forms(alpha, expected):
    assert sphere_monomial_moment(alpha, len(alpha)) == expected


def _numeric_moment_2d(alpha, n=4000):
    th = 2 * np.pi * np.arange(n) / n
    return 2 * np.pi * np.mean(np.cos(th) ** alpha[0] * np.sin(th) ** alpha[1])


def _numeric_moment_3d(alpha, n=200):
    # z-GL in [-1,1] times periodic trapezoid in phi (exact for polynomials)
    z, wz = np.polynomial.legendre.leggauss(n)
    phi = 2 * np.pi * np.arange(2 * n) / (2 * n)
    Z, P = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1 - Z**2)
    vals = (s * np.cos(P)) ** alpha[0] * (s * np.sin(P)) ** alpha[1] * Z ** alpha[2]
    return float(np.sum(wz[:, None] * vals) * 2 * np.pi / (2 * n))


@pytest.mark.parametrize("alpha", [(2, 2), (6, 0), (4, 4), (3, 1), (8, 2)])
def test_sphere_moment_matches_quadrature_2d(alpha):
    assert float(sphere_monomial_moment(alpha, 2)) == pytest.approx(
        _numeric_moment_2d(alpha), rel=1e-12, abs=1e-14
    )


@pytest.mark.parametrize("alpha", [(2, 2, 2), (4, 0, 2), (0, 6, 0), (1, 2, 2), (2, 4, 6)])
def test_sphere_moment_matches_quadrature_3d(alpha):
    assert float(sphere_monomial_moment(alpha, 3)) == pytest.approx(
        _numeric_moment_3d(alpha), rel=1e-12, abs=1e-14
    )


def test_sphere_area_values():
    # |S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)
    for d in range(2, 9):
        assert float(sphere_area(d)) == pytest.approx(2 * math.pi ** (d / 2) / math.gamma(d / 2))


def test_spherical_average_examples():
    prof = spherical_average(MultiPoly.norm_squared(2))
    assert prof.coefficient(2) == PiMultiple(2, 1)
    assert spherical_average(X(2, 0)).is_zero()
    assert spherical_average(MultiPoly.constant(2, 1)).coefficient(0) == PiMultiple(2, 1)


@pytest.mark.parametrize("s,d,expected", [(1, 2, 4), (2, 2, 64), (1, 4, 8)])
def test_radial_laplacian_constant_examples(s, d, expected):
    assert radial_laplacian_constant(s, d) == expected


@pytest.mark.parametrize("s", range(1, 7))
@pytest.mark.parametrize("d", range(1, 7))
def test_radial_constant_agrees_with_direct(s, d):
    r2 = MultiPoly.norm_squared(d)
    assert radial_laplacian_constant(s, d) == iterated_laplacian_at_zero(r2**s, s)


def test_displayed_constant_differs_but_is_nonzero():
    # n=3 means d=2 in u-space; the two products disagree but both are nonzero
    assert displayed_laplacian_constant(1, 3) == 3
    assert radial_laplacian_constant(1, 2) == 4
    for ma in range(1, 8):
        for n in range(3, 7):
            assert displayed_laplacian_constant(ma, n) > 0


def test_json_round_trip_bit_exact():
    p = MultiPoly(3, {(1, 2, 0): Fraction(10**40 + 1, 3**30), (0, 0, 5): -7})
    q = MultiPoly.from_json(p.to_json())
    assert q == p
    assert q.to_json() == p.to_json()


def test_compose_and_numeric_eval():
    x, y = X(2, 0), X(2, 1)
    p = x * x * y + 3
    q = p.compose([x + y, x - y])
    pt = (Fraction(1, 3), Fraction(-2, 7))
    assert q.evaluate(pt) == p.evaluate((pt[0] + pt[1], pt[0] - pt[1]))
    ev = q.numeric()
    assert ev(np.array([[1 / 3, -2 / 7]]))[0] == pytest.approx(float(q.evaluate(pt)))


def test_compose_truncation():
    x = X(1, 0)
    p = x**3 + x
    assert p.compose([x + x * x], max_degree=3) == x + x * x + x**3


# ---- properties ----------------------------------------------------------

_coef = st.fractions(min_value=-5, max_value=5, max_denominator=7)


@st.composite
def polys(draw, dim=3, max_deg=8):
    n = draw(st.integers(0, 6))
    terms = {}
    for _ in range(n):
        exp = draw(st.lists(st.integers(0, max_deg), min_size=dim, max_size=dim))
        if sum(exp) <= max_deg:
            terms[tuple(exp)] = draw(_coef)
    return MultiPoly(dim, terms)


@settings(max_examples=60, deadline=None)
@given(polys(), polys(), _coef, _coef)
def test_laplacian_linear(p, q, a, b):
    assert laplacian(a * p + b * q) == a * laplacian(p) + b * laplacian(q)


@settings(max_examples=40, deadline=None)
@given(polys())
def test_laplacian_rotation_equivariant(p):
    # exact rational (3,4,5) rotation in the x1-x2 plane
    x1, x2, x3 = X(3, 0), X(3, 1), X(3, 2)
    c, s = Fraction(3, 5), Fraction(4, 5)
    rot = [c * x1 - s * x2, s * x1 + c * x2, x3]
    assert laplacian(p.compose(rot)) == laplacian(p).compose(rot)


@settings(max_examples=40, deadline=None)
@given(polys(dim=2, max_deg=6), st.integers(0, 3))
def test_iterated_laplacian_parity(p, j):
    assert iterated_laplacian_at_zero(p, j) == iterated_laplacian_at_zero(
        homogeneous_component(p, 2 * j), j
    )


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("d", [2, 3])
def test_spherical_average_consistency(seed, d):
    rng = np.random.default_rng(seed)
    j = int(rng.integers(1, 4))
    p = random_homogeneous(d, 2 * j, rng)
    A = spherical_average(p).coefficient(2 * j)
    area = sphere_area(d)
    lhs = iterated_laplacian_at_zero(p, j)
    rhs = radial_laplacian_constant(j, d) * A / area
    assert rhs.pi_power == 0 or rhs.is_zero()
    assert lhs == rhs.coeff


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("degree,alpha", [(5, 1), (6, 1), (5, 2)])
def test_even_power_average_positive(seed, degree, alpha):
    rng = np.random.default_rng(100 + seed)
    H = random_homogeneous(2, degree, rng)
    A = spherical_average(H ** (2 * alpha)).coefficient(2 * degree * alpha)
    if H.is_zero():
        assert A.is_zero()
    else:
        assert A.coeff > 0
