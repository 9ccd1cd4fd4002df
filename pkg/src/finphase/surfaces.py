"""Strictly convex hypersurfaces written as graphs x_n = f(x') over a ball.

Every surface is stored in a normalised chart: f(0) = 0, grad f(0) = 0, so
the distinguished point is the origin with tangent plane x_n = 0 and inward
normal e_n.  ``shift`` maps chart coordinates back to the surface's natural
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import null_space

from .exactpoly import MultiPoly, homogeneous_component, homogeneous_parts

QUADRIC_KINDS = ("ellipsoid", "two_sheet_hyperboloid", "elliptic_paraboloid")


class SurfaceError(ValueError):
    """Invalid surface definition or a query outside the chart."""


class GaussMapError(RuntimeError):
    """Inverse Gauss map did not converge inside the chart."""

    def __init__(self, msg, residual=math.nan):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class GraphSurface:
    """Graph of a convex function on the ball |x'| < r_dom in R^{n-1}.

    ``f``, ``grad`` and ``hess`` act on arrays of shape (..., n-1).
    ``f_rest`` returns f minus its quadratic Taylor part, evaluated without
    cancellation where a closed form allows it.
    """

    n: int
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    r_dom: float
    convexity_margin: float
    taylor: MultiPoly | None = None
    taylor_degree: int | None = None  # None: taylor is exact
    f_rest: Callable[[np.ndarray], np.ndarray] | None = None
    shift: np.ndarray | None = None
    name: str = "custom"
    definition: Mapping | None = field(default=None, compare=False)
    f_grad: Callable | None = None  # optional fused (f, grad) evaluator

    @property
    def d(self) -> int:
        return self.n - 1

    def quadratic_part(self) -> np.ndarray:
        """Matrix Q with f(x') = x'^T Q x' + O(|x'|^3)."""
        return 0.5 * np.asarray(self.hess(np.zeros(self.d)), dtype=float)

    def rest(self, x):
        """f(x') - x'^T Q x'."""
        if self.f_rest is not None:
            return self.f_rest(x)
        x = np.asarray(x, dtype=float)
        Q = self.quadratic_part()
        return self.f(x) - np.einsum("...i,ij,...j->...", x, Q, x)

    def value_and_grad(self, x):
        if self.f_grad is not None:
            return self.f_grad(x)
        return self.f(x), self.grad(x)

    def original(self, x):
        """Chart point(s) -> natural coordinates."""
        x = np.asarray(x, dtype=float)
        return x if self.shift is None else x + self.shift

    def lift(self, xp):
        """Chart point x' -> surface point (x', f(x'))."""
        xp = np.asarray(xp, dtype=float)
        return np.concatenate([xp, np.asarray(self.f(xp))[..., None]], axis=-1)

    def check_domain(self, xp):
        if np.any(np.linalg.norm(np.atleast_1d(xp), axis=-1) >= self.r_dom):
            raise SurfaceError(f"point outside chart ball of radius {self.r_dom}")


@dataclass(frozen=True)
class QuadricSpec:
    kind: str
    a: tuple

    def __post_init__(self):
        if self.kind not in QUADRIC_KINDS:
            raise SurfaceError(f"unknown quadric kind {self.kind!r}")
        a = tuple(float(v) for v in self.a)
        if not a or any(not (v > 0) or not math.isfinite(v) for v in a):
            raise SurfaceError("quadric coefficients must be positive and finite")
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class TangentFrame:
    """Tangency data at a direction xi, in chart coordinates."""

    xi: np.ndarray
    a: np.ndarray
    nu: np.ndarray
    h: float
    frame: np.ndarray  # columns: orthonormal basis of xi-perp
    residual: float = 0.0

    @property
    def a_prime(self) -> np.ndarray:
        return self.a[:-1]


# -- constructors -----------------------------------------------------------


def _binom_half(k: int) -> Fraction:
    """binomial(1/2, k) exactly."""
    out = Fraction(1)
    for j in range(k):
        out *= Fraction(1, 2) - j
        out /= j + 1
    return out


def make_quadric(spec: QuadricSpec, n: int, taylor_degree: int = 12) -> GraphSurface:
    """Quadric from the catalogue, solved for x_n near its lowest point.

    ``spec.a`` has length n, or n-1 (then a_n = 1).
    """
    if n < 2:
        raise SurfaceError("n must be at least 2")
    a = np.asarray(spec.a, dtype=float)
    if len(a) == n - 1:
        a = np.append(a, 1.0)
    if len(a) != n:
        raise SurfaceError(f"need {n - 1} or {n} coefficients, got {len(a)}")
    ap, an = a[:-1], a[-1]
    a2 = ap**2
    d = n - 1
    w_poly = MultiPoly(d, {tuple(2 if i == j else 0 for i in range(d)): Fraction(repr(float(a2[j])))
                           for j in range(d)})
    an_q = Fraction(repr(float(an)))

    def w_of(x):
        return np.einsum("...i,i->...", np.asarray(x, dtype=float) ** 2, a2)

    shift = np.zeros(n)
    if spec.kind == "elliptic_paraboloid":
        f = lambda x: w_of(x) / an**2
        grad = lambda x: 2 * np.asarray(x, dtype=float) * a2 / an**2
        hess = lambda x: np.broadcast_to(
            np.diag(2 * a2 / an**2), np.shape(x)[:-1] + (d, d)
        ).copy()
        f_rest = lambda x: np.zeros(np.shape(x)[:-1])
        taylor = w_poly * (1 / an_q**2)
        r_dom = 1e3 / max(1.0, float(np.max(ap)))
        margin = float(np.min(2 * a2)) / an**2
        return GraphSurface(n, f, grad, hess, r_dom, margin, taylor, None, f_rest, shift,
                            name="elliptic_paraboloid", definition=_quadric_def(spec, n))

    if spec.kind == "ellipsoid":
        sign = -1.0
        r_dom = 0.95 / float(np.max(ap))
        shift[-1] = -1.0 / an
    else:
        sign = 1.0
        r_dom = 10.0 / float(np.max(ap))
        shift[-1] = 1.0 / an

    # f = sign*(sqrt(1 + sign*w) - 1)/a_n, written without cancellation
    def s_of(x):
        return np.sqrt(1.0 + sign * w_of(x))

    def f(x):
        w = w_of(x)
        return w / (an * (1.0 + np.sqrt(1.0 + sign * w)))

    def f_rest(x):
        w = w_of(x)
        s = np.sqrt(1.0 + sign * w)
        return -sign * w**2 / (2 * an * (1.0 + s) ** 2)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return a2 * x / (an * s_of(x)[..., None])

    def hess(x):
        x = np.asarray(x, dtype=float)
        s = s_of(x)[..., None, None]
        v = a2 * x
        eye = np.diag(a2)
        return (eye / s - sign * v[..., :, None] * v[..., None, :] / s**3) / an

    taylor = MultiPoly.zero(d)
    w_k = MultiPoly.constant(d, 1)
    for k in range(1, taylor_degree // 2 + 1):
        w_k = w_k * w_poly
        # sign*(sqrt(1+sign*w)-1) = sum_k sign^{k+1} binom(1/2,k) w^k
        coef = _binom_half(k) if sign > 0 else -_binom_half(k) * (-1) ** k
        taylor = taylor + w_k * (coef / an_q)

    if sign < 0:
        margin = float(np.min(a2)) / an
    else:
        s_max = math.sqrt(1.0 + float(np.max(a2)) * r_dom**2)
        margin = float(np.min(a2)) / (an * s_max**3)
    return GraphSurface(n, f, grad, hess, r_dom, margin, taylor, taylor_degree, f_rest, shift,
                        name=spec.kind, definition=_quadric_def(spec, n))


def _quadric_def(spec, n):
    return {"kind": spec.kind, "a": list(spec.a), "n": n}


def from_polynomial(poly: MultiPoly, r_dom: float = 5.0, name: str = "custom_poly",
                    check_points: int = 2000, seed: int = 0) -> GraphSurface:
    """Graph of an exact polynomial f with f(0)=0 and grad f(0)=0."""
    d = poly.dim
    if poly.constant_term() != 0:
        raise SurfaceError("f(0) must vanish")
    if not homogeneous_component(poly, 1).is_zero():
        raise SurfaceError("grad f(0) must vanish")
    grads = [poly.derivative(i) for i in range(d)]
    hesses = [[g.derivative(j) for j in range(d)] for g in grads]
    fev = poly.numeric()
    gev = [g.numeric() for g in grads]
    hev = [[h.numeric() for h in row] for row in hesses]
    rest_ev = (poly - homogeneous_component(poly, 2)).numeric()

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.stack([g(x) for g in gev], axis=-1)

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.stack([h(x) for h in row], axis=-1) for row in hev], axis=-2)

    # convexity margin over a random sample of the ball, plus the centre
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(check_points, d))
    pts *= (r_dom * rng.random(check_points) ** (1 / d) / np.linalg.norm(pts, axis=1))[:, None]
    pts = np.vstack([np.zeros(d), pts])
    eig = np.linalg.eigvalsh(hess(pts))
    margin = float(eig.min())
    if margin <= 0:
        raise SurfaceError("Hessian is not positive definite on the chart ball")
    return GraphSurface(d + 1, fev, grad, hess, float(r_dom), margin, poly, None, rest_ev,
                        np.zeros(d + 1), name=name,
                        definition={"kind": "custom_poly", "poly": poly.to_json_obj(),
                                    "r_dom": float(r_dom)},
                        f_grad=poly.numeric_with_gradient())


def surface_from_config(obj: Mapping) -> GraphSurface:
    """Build a surface from its JSON definition."""
    if not isinstance(obj, Mapping) or "kind" not in obj:
        raise SurfaceError("surface definition needs a 'kind'")
    kind = obj["kind"]
    if kind == "custom_poly":
        if "poly" not in obj:
            raise SurfaceError("custom_poly needs 'poly'")
        poly = MultiPoly.from_json_obj(obj["poly"])
        return from_polynomial(poly, float(obj.get("r_dom", 5.0)))
    if kind in QUADRIC_KINDS:
        try:
            n = int(obj["n"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SurfaceError("quadric needs integer 'n'") from exc
        a = obj.get("a", [1.0] * (n - 1))
        return make_quadric(QuadricSpec(kind, tuple(a)), n, int(obj.get("taylor_degree", 12)))
    raise SurfaceError(f"unknown surface kind {kind!r}")


def perturbed_paraboloid(d: int, eps, power: int = 4, **kw) -> GraphSurface:
    """|x'|^2 + eps * sum_j x_j^power as an exact polynomial graph."""
    eps = Fraction(repr(eps)) if isinstance(eps, float) else Fraction(eps)
    terms = {}
    for j in range(d):
        e2 = [0] * d
        e2[j] = 2
        terms[tuple(e2)] = 1
        ep = [0] * d
        ep[j] = power
        terms[tuple(ep)] = terms.get(tuple(ep), 0) + eps
    return from_polynomial(MultiPoly(d, terms), name=f"perturbed_paraboloid_{power}", **kw)


# -- geometry ---------------------------------------------------------------


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if not nrm > 0:
        raise SurfaceError("direction must be nonzero")
    return v / nrm


def inward_normal(surface: GraphSurface, xp) -> np.ndarray:
    g = np.asarray(surface.grad(xp), dtype=float)
    v = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def inverse_gauss(surface: GraphSurface, xi, tol: float = 1e-12, max_iter: int = 100) -> TangentFrame:
    """Point of the chart whose inward normal is ``xi``."""
    xi = unit(xi)
    if len(xi) != surface.n:
        raise SurfaceError("direction has wrong dimension")
    if xi[-1] <= 0:
        raise GaussMapError("direction points away from the chart", math.inf)
    target = -xi[:-1] / xi[-1]
    x = np.zeros(surface.d)
    res_vec = surface.grad(x) - target
    res = float(np.linalg.norm(res_vec))
    for _ in range(max_iter):
        if res <= tol * max(1.0, float(np.linalg.norm(target))):
            break
        step = np.linalg.solve(surface.hess(x), res_vec)
        lam = 1.0
        while True:
            cand = x - lam * step
            if np.linalg.norm(cand) < surface.r_dom:
                cres_vec = surface.grad(cand) - target
                cres = float(np.linalg.norm(cres_vec))
                if cres < res or lam < 1e-10:
                    break
            lam *= 0.5
            if lam < 1e-12:
                raise GaussMapError("line search failed", res)
        x, res_vec, res = cand, cres_vec, cres
    else:
        if res > tol * max(1.0, float(np.linalg.norm(target))):
            raise GaussMapError("Newton did not converge", res)
    a = surface.lift(x)
    nu = inward_normal(surface, x)
    basis = null_space(xi[None, :])
    return TangentFrame(xi, a, nu, float(a @ xi), basis, res)


def support_value(surface: GraphSurface, xi, original: bool = True) -> float:
    fr = inverse_gauss(surface, xi)
    a = surface.original(fr.a) if original else fr.a
    return float(a @ fr.xi)


def gaussian_curvature(surface: GraphSurface, point) -> float:
    point = np.asarray(point, dtype=float)
    surface.check_domain(point)
    g = surface.grad(point)
    H = surface.hess(point)
    return float(np.linalg.det(H) / (1.0 + g @ g) ** ((surface.n + 1) / 2))


def _require_taylor(surface: GraphSurface, degree: int):
    if surface.taylor is None:
        raise SurfaceError("surface has no Taylor data")
    if surface.taylor_degree is not None and surface.taylor_degree < degree:
        raise SurfaceError(f"Taylor data only up to degree {surface.taylor_degree}")


def osculating_paraboloid(surface: GraphSurface) -> MultiPoly:
    _require_taylor(surface, 2)
    return homogeneous_component(surface.taylor, 2)


def contact_order(surface: GraphSurface, k_max: int) -> float:
    """Largest k <= k_max with Taylor components of degrees 3..k all zero."""
    _require_taylor(surface, k_max)
    parts = homogeneous_parts(surface.taylor)
    top = surface.taylor_degree if surface.taylor_degree is not None else max(
        k_max, int(surface.taylor.degree) if not surface.taylor.is_zero() else 0)
    for m in range(3, top + 1):
        if m in parts:
            return min(m - 1, k_max)
    return math.inf


def height_above_tangent(surface: GraphSurface, frame: TangentFrame, xp) -> np.ndarray:
    """<(x', f(x')) - a, xi>: how far the surface point sits above the tangent plane."""
    xp = np.asarray(xp, dtype=float)
    xi = frame.xi
    return xp @ xi[:-1] + xi[-1] * surface.f(xp) - frame.h


def _boundary_directions(d: int, count: int = 256) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    # Fibonacci-like spread on S^{d-1} via a fixed deterministic generator
    rng = np.random.default_rng(12345)
    v = rng.normal(size=(count * d, d))
    v = np.vstack([np.eye(d), -np.eye(d), v])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def max_cap_height(surface: GraphSurface, frame: TangentFrame, fraction: float = 0.8) -> float:
    """Largest c whose cap projects inside |x'| < fraction * r_dom."""
    R = fraction * surface.r_dom
    if np.linalg.norm(frame.a_prime) >= R:
        return 0.0
    dirs = _boundary_directions(surface.d)
    return float(np.min(height_above_tangent(surface, frame, R * dirs)))


def default_cap_height(surface: GraphSurface, frame: TangentFrame, cap: float = 0.3) -> float:
    return min(cap, 0.999 * max_cap_height(surface, frame))
