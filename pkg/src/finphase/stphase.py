"""Stationary-phase expansions for quadratic phases, Morse charts and the exact lemma checks."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from ._quadrature import newton_bracketed, panel_rule, sphere_rule
from .exactpoly import (
    MultiPoly,
    PiMultiple,
    homogeneous_component,
    homogeneous_parts,
    iterated_laplacian_at_zero,
    laplacian,
    radial_laplacian_constant,
    sphere_area,
    spherical_average,
    t_k_symbol,
)
from .oscillatory import CutoffSpec
from .surfaces import GraphSurface, SurfaceError, _boundary_directions


class MorseChartError(RuntimeError):
    pass


class HessianNotNormalized(SurfaceError):
    pass


# -- quadratic phase ------------------------------------------------------------

_I_POW = [(1, 0), (0, 1), (-1, 0), (0, -1)]  # i^j as (re, im)


@dataclass(frozen=True)
class QuadPhaseExpansion:
    """(pi/mu)^{d/2} e^{i d pi/4} sum_j coeff_j mu^{-j}, coeff_j = lap_j (i/4)^j / j!.

    ``coeffs[j]`` is the exact pair (re, im) of coeff_j; ``laplacians[j]`` is
    (Delta^j p)(0).
    """

    d: int
    laplacians: tuple
    coeffs: tuple

    @property
    def j_max(self) -> int:
        return len(self.coeffs) - 1

    def prefactor(self, mu: float) -> complex:
        return (math.pi / mu) ** (self.d / 2) * cmath.exp(1j * self.d * math.pi / 4)

    def term(self, mu: float, j: int) -> complex:
        re, im = self.coeffs[j]
        return self.prefactor(mu) * complex(float(re), float(im)) * mu**-j

    def partial_sum(self, mu: float, j_last: int | None = None) -> complex:
        j_last = self.j_max if j_last is None else min(j_last, self.j_max)
        return sum((self.term(mu, j) for j in range(j_last + 1)), 0j)

    def first_nonzero(self) -> int | None:
        for j, lap in enumerate(self.laplacians):
            if lap != 0:
                return j
        return None

    def to_json_obj(self) -> dict:
        return {
            "d": self.d,
            "prefactor": f"(pi/mu)^({self.d}/2) exp(i {self.d} pi/4)",
            "laplacians": [str(v) for v in self.laplacians],
            "coeffs": [[str(re), str(im)] for re, im in self.coeffs],
        }


def quad_phase_expand(p: MultiPoly, j_max: int, cancel=None) -> QuadPhaseExpansion:
    """Exact expansion of the integral of e^{i mu |u|^2} p(u) over R^d.

    The series terminates: terms beyond deg(p)/2 vanish.
    """
    if p.dim < 1:
        raise ValueError("p needs at least one variable")
    if j_max < 0:
        raise ValueError("j_max must be non-negative")
    laps, coeffs = [], []
    for j in range(j_max + 1):
        lap = iterated_laplacian_at_zero(p, j, cancel)
        c = lap / (Fraction(4) ** j * math.factorial(j))
        re, im = _I_POW[j % 4]
        laps.append(lap)
        coeffs.append((c * re, c * im))
    return QuadPhaseExpansion(p.dim, tuple(laps), tuple(coeffs))


def _mollified(p, d, mu, radius_sq, order, n_ang):
    spec = CutoffSpec(radius_sq)
    R = math.sqrt(radius_sq)
    width = (math.pi / 4) / (2 * mu * R)
    n_panels = max(16, int(math.ceil(R / width)))
    r, wr, _ = panel_rule(np.linspace(0.0, R, n_panels + 1), order)
    radial = np.exp(1j * mu * r * r) * spec(r * r) * wr * r ** (d - 1)
    dirs, wd = sphere_rule(d, n_ang)
    vals = []
    for th in dirs:
        terms = radial * p(r[:, None] * th)
        vals.append(math.fsum(terms.real) + 1j * math.fsum(terms.imag))
    return complex(np.sum(wd * np.array(vals)))


def mollified_phase_integral(p: Callable | MultiPoly, d: int, mu: float, radius_sq: float | None = None,
                             order: int = 10, n_ang: int = 32, with_error: bool = False):
    """Quadrature of e^{i mu |u|^2} p(u) chi(|u|^2) du with a smooth compactly supported chi.

    chi equals 1 on |u|^2 <= radius_sq/3, so the result differs from the full
    integral only by a rapidly decaying cut-off contribution.  Polar
    coordinates: panels in r resolve the phase, the sphere rule integrates
    the angular polynomial exactly for degree below n_ang.  The error
    estimate compares with a wider mollifier and a higher order.
    """
    if isinstance(p, MultiPoly):
        p = p.numeric()
    if radius_sq is None:
        radius_sq = min(20.0, max(4.0, 1000.0 / mu))
    val = _mollified(p, d, mu, radius_sq, order, n_ang)
    if not with_error:
        return val
    return val, abs(val - _mollified(p, d, mu, 1.5 * radius_sq, order + 2, n_ang))


# -- Morse chart ------------------------------------------------------------------


def normalize_hessian(surface: GraphSurface):
    """Linear change x' = L y making the quadratic part of f equal to |y|^2.

    Returns (surface in y, L).  Q = R^T R (Cholesky) and L = R^{-1}.
    """
    Q = surface.quadratic_part()
    Rt = np.linalg.cholesky(Q)  # lower, Q = Rt Rt^T
    L = np.linalg.inv(Rt.T)
    if np.allclose(L, np.eye(surface.d), rtol=0, atol=1e-14):
        return surface, np.eye(surface.d)
    LT = L.T

    def f(y):
        return surface.f(np.asarray(y, dtype=float) @ LT)

    def grad(y):
        return surface.grad(np.asarray(y, dtype=float) @ LT) @ L

    def hess(y):
        return LT @ surface.hess(np.asarray(y, dtype=float) @ LT) @ L

    def rest(y):
        return surface.rest(np.asarray(y, dtype=float) @ LT)

    r_dom = surface.r_dom / np.linalg.norm(L, 2)
    margin = surface.convexity_margin * float(np.min(np.linalg.svd(L, compute_uv=False))) ** 2
    return GraphSurface(surface.n, f, grad, hess, float(r_dom), margin, None, None, rest,
                        surface.shift, name=surface.name + "_normalized",
                        definition=surface.definition), L


@dataclass(frozen=True)
class MorseChart:
    """u -> y = X'(u) with f(X'(u)) = |u|^2, in Hessian-normalized coordinates.

    The original chart point is ``linear @ X'(u)``.
    """

    dim: int
    forward: Callable[[np.ndarray], np.ndarray]
    delta: float
    taylor_check_degree: int
    surface: GraphSurface
    linear: np.ndarray = field(repr=False)

    def to_original(self, u):
        return self.forward(u) @ self.linear.T

    def jacobian_at_zero(self, h: float = 1e-6) -> np.ndarray:
        eye = np.eye(self.dim)
        return ((self.forward(h * eye) - self.forward(-h * eye)) / (2 * h)).T

    def validation_residual(self, samples: int = 1000, seed: int = 0) -> float:
        """max |f(X'(u)) - |u|^2| over random u with |u| <= delta/2."""
        u = _ball_sample(self.dim, samples, 0.5 * self.delta, seed)
        return float(np.max(np.abs(self.surface.f(self.forward(u)) - np.sum(u * u, axis=-1))))


def _ball_sample(d, count, radius, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (radius * rng.random(count) ** (1.0 / d))[:, None]


def morse_normalize(surface: GraphSurface, prescale: bool = True, delta_max: float = 1.0,
                    reach: float = 0.95) -> MorseChart:
    """Radial-scaling Morse chart: X'(s theta) = s (1 + w) theta with f(X') = s^2.

    With f = |y|^2 + rest(y) the scalar equation s^2 (2w + w^2) + rest(s(1+w)theta) = 0
    is solved for w, so |X'|^2 - |u|^2 = -rest(X') carries no cancellation.
    """
    Q = surface.quadratic_part()
    if not np.allclose(Q, np.eye(surface.d), rtol=0, atol=1e-10):
        if not prescale:
            raise HessianNotNormalized("Hessian at 0 is not 2*identity")
        surf, L = normalize_hessian(surface)
    else:
        surf, L = surface, np.eye(surface.d)
    d = surf.d
    R = reach * surf.r_dom
    dirs = _boundary_directions(d)
    edge = float(np.min(surf.f(R * dirs)))
    delta = min(delta_max, (math.sqrt(edge) if d <= 2 else 0.95 * math.sqrt(edge)))
    margin = surf.convexity_margin

    def forward(u):
        u = np.asarray(u, dtype=float)
        shape = u.shape
        u = u.reshape(-1, d)
        s = np.linalg.norm(u, axis=1)
        if np.any(s > delta * (1 + 1e-12)):
            raise MorseChartError(f"|u| exceeds the validity radius {delta:.6g}")
        out = np.zeros_like(u)
        nz = s > 0
        if np.any(nz):
            sn = s[nz]
            th = u[nz] / sn[:, None]
            w_hi = np.minimum(1.01 * math.sqrt(2.0 / margin) * sn + 1e-300, R) / sn - 1.0

            def fdf(w, idx):
                x = (sn[idx] * (1 + w))[:, None] * th[idx]
                g = surf.grad(x)
                val = sn[idx] ** 2 * (2 * w + w * w) + surf.rest(x)
                dval = sn[idx] * np.einsum("ij,ij->i", g, th[idx])
                return val, dval

            w, ok = newton_bracketed(fdf, np.full(sn.shape, -1.0), w_hi, x0=np.zeros(sn.shape))
            if not np.all(ok):
                raise MorseChartError("radial Newton iteration did not converge")
            out[nz] = (sn * (1 + w))[:, None] * th
        return out.reshape(shape)

    tdeg = surface.taylor_degree if surface.taylor is not None and surface.taylor_degree else (
        int(surface.taylor.degree) if surface.taylor is not None and not surface.taylor.is_zero() else 0)
    return MorseChart(d, forward, float(delta), tdeg, surf, L)


@dataclass(frozen=True)
class PhiLemmaResult:
    slope: float
    radii: list
    max_residual: list
    m: int

    @property
    def verified(self) -> bool:
        return self.slope > self.m

    def to_json_obj(self) -> dict:
        return {"m": self.m, "slope": self.slope, "verified": self.verified,
                "radii": self.radii, "max_residual": self.max_residual}


def verify_phi_lemma(chart: MorseChart, H_m: MultiPoly, m: int, n_rays: int = 64, levels: int = 8,
                     seed: int = 0, floor: float = 1e-13) -> PhiLemmaResult:
    """Slope of max|R| versus r for R(u) = |X'(u)|^2 - |u|^2 + H_m(u), r = 2^{-i} * delta.

    |X'|^2 - |u|^2 is evaluated as -rest(X'(u)).  Points whose |R| is below
    ``floor * r^m`` sit at roundoff and are dropped from the fit; if all are,
    the slope is +inf.
    """
    if H_m.dim != chart.dim:
        raise ValueError("H_m must live in the chart dimension")
    if not (H_m.is_zero() or (H_m.is_homogeneous() and H_m.degree == m)):
        raise ValueError("H_m must be homogeneous of degree m")
    top = 2.0 ** math.floor(math.log2(chart.delta))
    if top < chart.delta:
        radii = top * 2.0 ** -np.arange(levels)
    else:
        radii = top * 2.0 ** -np.arange(1, levels + 1)
    if radii[-1] <= 0 or levels < 3:
        raise ValueError("chart radius too small for the radius ladder")
    rng = np.random.default_rng(seed)
    th = rng.normal(size=(n_rays, chart.dim))
    th /= np.linalg.norm(th, axis=1, keepdims=True)
    Hnum = H_m.numeric()
    res = []
    for r in radii:
        u = r * th
        R = -chart.surface.rest(chart.forward(u)) + Hnum(u)
        res.append(float(np.max(np.abs(R))))
    res = np.array(res)
    keep = res > floor * radii**m
    if keep.sum() < 3:
        slope = math.inf
    else:
        slope = float(np.polyfit(np.log(radii[keep]), np.log(res[keep]), 1)[0])
    return PhiLemmaResult(slope, [float(r) for r in radii], [float(v) for v in res], m)


# -- weight asymptotics on exact polynomial graphs -------------------------------------


def lowest_component(p: MultiPoly):
    """(degree, component) of the lowest-degree nonzero homogeneous part."""
    if p.is_zero():
        return None, p
    parts = homogeneous_parts(p)
    m = min(parts)
    return m, parts[m]


def weight_leading_components(f: MultiPoly, k: int):
    """Leading homogeneous parts of T_k and <grad T_k, N> on the graph x_n = f(x').

    N = (-grad f, 1) is the unnormalized inward normal; its normalizing factor
    is 1 + O(|x'|^2) and does not change the lowest component.  Returns
    (m, H_m, lead of T_k o F, lead of <grad T_k o F, N>).
    """
    d = f.dim
    if not homogeneous_component(f, 2) == MultiPoly.norm_squared(d):
        raise HessianNotNormalized("quadratic part must be |x'|^2")
    m, H = lowest_component(f - homogeneous_component(f, 2))
    coords = [MultiPoly.variable(d, i) for i in range(d)]
    lift = coords + [f]
    T = t_k_symbol(d + 1, k)
    TF = T.compose(lift)
    grads = [g.compose(lift) for g in T.gradient()]
    normal = [-f.derivative(i) for i in range(d)] + [MultiPoly.constant(d, 1)]
    flux = MultiPoly.zero(d)
    for g, nu in zip(grads, normal):
        flux = flux + g * nu
    return m, H, lowest_component(TF)[1], lowest_component(flux)[1]


# -- leading-term and Laplacian checks --------------------------------------------------------


@dataclass(frozen=True)
class LeadingTerms:
    m: int
    alpha: int
    n: int
    N0: int
    j1: Fraction
    j2: int
    j1_gt_j2: bool
    collision: bool
    alpha_star: int

    @property
    def separated(self) -> bool:
        """j1 > m*alpha + 1 > j2."""
        return self.j1 > self.m * self.alpha + 1 > self.j2

    def to_json_obj(self) -> dict:
        return {"m": self.m, "alpha": self.alpha, "n": self.n, "N0": self.N0,
                "j1": str(self.j1), "j2": str(self.j2), "j1_gt_j2": self.j1_gt_j2,
                "separated": self.separated, "collision": self.collision,
                "alpha_star": self.alpha_star}


def leading_term_indices(m: int, alpha: int, n: int, N0: int) -> LeadingTerms:
    """Indices of the leading terms for k = 2 alpha + 1 and the collision test."""
    if m <= 4:
        raise ValueError("contact order m must exceed 4")
    if alpha < 1:
        raise ValueError("alpha must be positive")
    if N0 < 0:
        raise ValueError("N0 must be non-negative")
    k = 2 * alpha + 1
    j1 = Fraction(m * k, 2) - 1
    j2 = m * alpha
    alpha_star = -(-N0 // (m - 4)) + 1
    return LeadingTerms(m, alpha, n, N0, j1, j2, j1 > j2, m * alpha > N0 + 4 * alpha, alpha_star)


@dataclass(frozen=True)
class DeltaCheck:
    value: Fraction
    sphere_avg_coeff: PiMultiple
    constant: int
    identity_holds: bool

    def to_json_obj(self) -> dict:
        return {"value": str(self.value), "sphere_avg_coeff": str(self.sphere_avg_coeff),
                "constant": str(self.constant), "identity_holds": self.identity_holds,
                "is_zero": self.value == 0}


def delta_vanishing_check(H: MultiPoly, m: int, alpha: int, cancel=None) -> DeltaCheck:
    """(Delta^{m alpha} H^{2 alpha})(0) and the r^{2 m alpha} coefficient A of its spherical average.

    They satisfy value = C * A / |S^{d-1}| with C = radial_laplacian_constant(m alpha, d).
    """
    if alpha < 1:
        raise ValueError("alpha must be positive")
    if not H.is_zero() and not (H.is_homogeneous() and H.degree == m):
        raise ValueError("H must be homogeneous of degree m")
    d = H.dim
    P = H ** (2 * alpha) if not H.is_zero() else H
    s = m * alpha
    value = iterated_laplacian_at_zero(P, s, cancel)
    if d < 2:
        raise ValueError("H needs at least two variables")
    A = spherical_average(P).coefficient(2 * s)
    C = radial_laplacian_constant(s, d)
    expected = A * C / sphere_area(d)
    holds = expected.coeff == value and (expected.is_zero() or expected.pi_power == 0)
    return DeltaCheck(value, A, C, holds)


def laplacian_power_degree_ok(H: MultiPoly, k: int, j: int) -> bool:
    """Delta^j(H^k) is homogeneous of degree m k - 2j (or zero)."""
    P = H**k
    for _ in range(j):
        P = laplacian(P)
    m = int(H.degree)
    return P.is_zero() or (P.is_homogeneous() and P.degree == m * k - 2 * j)
