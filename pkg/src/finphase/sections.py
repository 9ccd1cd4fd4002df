"""Sectional volumes A(xi, t) of the convex side of a graph surface."""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from ._quadrature import bisect_vec, gauss_legendre
from .surfaces import GraphSurface, TangentFrame, inverse_gauss, unit


class SliceEscapesChart(RuntimeError):
    """The requested slice reaches the edge of the chart ball."""


class RootFindingError(RuntimeError):
    pass


@dataclass
class VolumeProfile:
    xi: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    err: np.ndarray
    method: str
    c: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.err = np.asarray(self.err, dtype=float)
        if np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("t_grid must be strictly increasing")

    def scaled(self, s: float) -> "VolumeProfile":
        return VolumeProfile(self.xi, self.t_grid, s * self.values, abs(s) * self.err,
                             self.method, self.c, self.seed, dict(self.meta))

    def subset(self, mask) -> "VolumeProfile":
        return VolumeProfile(self.xi, self.t_grid[mask], self.values[mask], self.err[mask],
                             self.method, self.c, self.seed, dict(self.meta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# xi=" + " ".join(repr(float(v)) for v in self.xi) + "\n")
        buf.write(f"# c={self.c!r}\n# method={self.method}\n# seed={self.seed}\n")
        buf.write("t,A,err\n")
        for t, a, e in zip(self.t_grid, self.values, self.err):
            buf.write(f"{float(t)!r},{float(a)!r},{float(e)!r}\n")
        return buf.getvalue()


# -- slice geometry ---------------------------------------------------------


def _inside(surface: GraphSurface, x: np.ndarray) -> np.ndarray:
    """x_n - f(x') for points x[..., n]; positive on the convex side."""
    xp = x[..., :-1]
    return x[..., -1] - surface.f(xp)


def _slice_point(frame: TangentFrame, t, y):
    """a + t xi + E y for plane coordinates y[..., n-1]."""
    return frame.a + t * frame.xi + np.einsum("ij,...j->...i", frame.frame, y)


def radial_extent(surface: GraphSurface, frame: TangentFrame, t: float, dirs: np.ndarray,
                  tol: float = 1e-12) -> np.ndarray:
    """Distance from the slice centre to the slice boundary along plane directions ``dirs``."""
    center = frame.a + t * frame.xi
    if _inside(surface, center) <= 0:
        raise RootFindingError(f"slice centre not interior at t={t}")
    vecs = dirs @ frame.frame.T  # (k, n)
    rmax = surface.r_dom

    def phi(r):
        x = center + r[:, None] * vecs
        xp = x[:, :-1]
        inball = np.linalg.norm(xp, axis=1) < rmax
        out = np.full(len(r), 1.0)
        out[inball] = -_inside(surface, x[inball])
        return out

    # expand an outer bracket geometrically
    hi = np.full(len(dirs), max(4 * math.sqrt(t), 1e-6))
    for _ in range(200):
        ph = phi(hi)
        if np.all(ph > 0):
            break
        hi = np.where(ph > 0, hi, 2 * hi)
    else:
        raise RootFindingError("could not bracket the slice boundary")
    r = bisect_vec(phi, np.zeros(len(dirs)), hi, tol=tol)
    far = np.linalg.norm((center + (r + tol)[:, None] * vecs)[:, :-1], axis=1)
    if np.any(far >= rmax):
        raise SliceEscapesChart(f"slice at t={t} leaves the chart")
    return r


def _area_2d(surface, frame, t, n_ang, tol):
    x, w = gauss_legendre(n_ang, 0.0, 2 * np.pi)
    dirs = np.stack([np.cos(x), np.sin(x)], axis=-1)
    R = radial_extent(surface, frame, t, dirs, tol)
    return 0.5 * float(np.sum(w * R**2)), float(R.max())


def section_volume(surface: GraphSurface, frame: TangentFrame, t: float, *,
                   n_ang: int = 256, tol: float = 1e-12, n_samples: int = 2_000_000,
                   seed: int | np.random.SeedSequence = 0, chunk: int = 250_000):
    """(n-1)-volume of the slice at height t above the tangent plane, with error estimate."""
    if not t > 0:
        return 0.0, 0.0
    n = surface.n
    if n == 2:
        dirs = np.array([[1.0], [-1.0]])
        R = radial_extent(surface, frame, t, dirs, tol)
        return float(R.sum()), 2 * tol
    if n == 3:
        A, rmax = _area_2d(surface, frame, t, n_ang, tol)
        A_half, _ = _area_2d(surface, frame, t, n_ang // 2, tol)
        err = abs(A - A_half) + 2 * math.pi * rmax * tol + 1e-14 * A
        return A, err
    return _mc_volume(surface, frame, t, n_samples, seed, chunk)


def _mc_volume(surface, frame, t, n_samples, seed, chunk):
    d = surface.n - 1
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_dirs = np.random.default_rng(ss.spawn(1)[0])
    dirs = rng_dirs.normal(size=(64 * d, d))
    dirs = np.vstack([np.eye(d), -np.eye(d), dirs / np.linalg.norm(dirs, axis=1, keepdims=True)])
    B = 1.2 * float(radial_extent(surface, frame, t, dirs).max())
    center = frame.a + t * frame.xi
    for _attempt in range(6):
        rng = np.random.default_rng(ss.spawn(1)[0])
        hits = 0
        edge = False
        done = 0
        while done < n_samples:
            m = min(chunk, n_samples - done)
            y = rng.uniform(-B, B, size=(m, d))
            x = center + y @ frame.frame.T
            inball = np.linalg.norm(x[:, :-1], axis=1) < surface.r_dom
            ins = np.zeros(m, dtype=bool)
            ins[inball] = _inside(surface, x[inball]) >= 0
            hits += int(ins.sum())
            if ins.any() and np.abs(y[ins]).max() > 0.98 * B:
                edge = True
            done += m
        if not edge:
            break
        B *= 1.5
    else:
        raise SliceEscapesChart("Monte Carlo box kept clipping the slice")
    vol = (2 * B) ** d
    p = hits / n_samples
    return vol * p, vol * math.sqrt(max(p * (1 - p), 1.0 / n_samples) / n_samples)


def volume_profile(surface: GraphSurface, xi, t_grid, c: float, *, seed: int = 0,
                   jobs: int = 1, **kw) -> VolumeProfile:
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or t_grid.max() > c * (1 + 1e-12):
        raise ValueError("t_grid must lie in (0, c]")
    frame = inverse_gauss(surface, xi)
    seeds = np.random.SeedSequence(seed).spawn(len(t_grid))

    def one(i):
        return section_volume(surface, frame, float(t_grid[i]), seed=seeds[i], **kw)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            res = list(ex.map(one, range(len(t_grid))))
    else:
        res = [one(i) for i in range(len(t_grid))]
    vals, errs = zip(*res) if res else ((), ())
    method = "radial_quadrature" if surface.n <= 3 else "monte_carlo"
    return VolumeProfile(frame.xi, t_grid, np.array(vals), np.array(errs), method, float(c),
                         seed if method == "monte_carlo" else None)


def leading_exponent(profile: VolumeProfile, min_points: int = 6):
    """Slope of log A against log t over the smallest decade of t, with its standard error."""
    t, A, e = profile.t_grid, profile.values, profile.err
    if np.any(A <= 0):
        raise ValueError("leading exponent needs positive values")
    mask = t <= 10 * t[0] * (1 + 1e-12)
    if mask.sum() < min_points:
        mask = np.zeros(len(t), dtype=bool)
        mask[:min_points] = True
    if mask.sum() < 3:
        raise ValueError("too few points for an exponent fit")
    lt, lA = np.log(t[mask]), np.log(A[mask])
    fit = stats.linregress(lt, lA)
    # propagate per-point errors as well as the scatter about the line
    sig = e[mask] / A[mask]
    lt_c = lt - lt.mean()
    se_meas = math.sqrt(float(np.sum((lt_c / np.sum(lt_c**2)) ** 2 * sig**2)))
    return float(fit.slope), float(math.hypot(fit.stderr, se_meas))


def trapezoid_integral(profile: VolumeProfile):
    """Integral of A over [0, t_max] with A(0)=0, and an error estimate."""
    t = np.concatenate([[0.0], profile.t_grid])
    A = np.concatenate([[0.0], profile.values])
    e = np.concatenate([[0.0], profile.err])
    full = float(trapezoid(A, t))
    coarse = float(trapezoid(A[::2], t[::2])) if len(t) % 2 == 1 else float(
        trapezoid(np.append(A[:-1:2], A[-1]), np.append(t[:-1:2], t[-1])))
    w = np.zeros_like(t)
    w[1:] += 0.5 * np.diff(t)
    w[:-1] += 0.5 * np.diff(t)
    stat = float(np.sqrt(np.sum((w * e) ** 2)))
    return full, abs(full - coarse) / 3 + stat


def cap_volume_mc(surface: GraphSurface, frame: TangentFrame, c: float, n_samples: int = 1_000_000,
                  seed: int = 0, chunk: int = 250_000):
    """n-volume of {x on the convex side : <x - a, xi> <= c} by hit-or-miss sampling."""
    d = surface.n - 1
    rng = np.random.default_rng(seed)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        th = np.linspace(0, 2 * np.pi, 128, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    else:
        dirs = rng.normal(size=(64 * d, d))
        dirs = np.vstack([np.eye(d), -np.eye(d), dirs / np.linalg.norm(dirs, axis=1, keepdims=True)])
    ext = max(float(np.max(radial_extent(surface, frame, s * c, dirs))) for s in (0.25, 0.5, 0.75, 1.0))
    # the slice centre drifts along xi; the boxed coordinates are relative to a + t xi
    B = 1.3 * ext
    hits = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        tt = rng.uniform(0, c, size=m)
        y = rng.uniform(-B, B, size=(m, d))
        x = _slice_point(frame, tt[:, None], y)
        inball = np.linalg.norm(x[:, :-1], axis=1) < surface.r_dom
        ins = np.zeros(m, dtype=bool)
        ins[inball] = _inside(surface, x[inball]) >= 0
        hits += int(ins.sum())
        done += m
    vol = c * (2 * B) ** d
    p = hits / n_samples
    return vol * p, vol * math.sqrt(p * (1 - p) / n_samples)


def default_profile_grid(c: float, num: int = 24, t_min: float | None = None) -> np.ndarray:
    """Geometric grid on [t_min, c]; the smallest decade gets at least 6 points."""
    t_min = c / 100 if t_min is None else t_min
    return np.geomspace(t_min, c, num)
