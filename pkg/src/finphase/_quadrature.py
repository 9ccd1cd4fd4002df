"""Shared quadrature rules and vectorised scalar root finders."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _gl(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(order: int, a: float = -1.0, b: float = 1.0):
    """Nodes and weights of the ``order``-point Gauss-Legendre rule on [a, b]."""
    x, w = _gl(order)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def panel_rule(breaks, order: int):
    """Composite Gauss-Legendre rule over consecutive intervals of ``breaks``.

    Returns nodes, weights and the panel index of each node.
    """
    breaks = np.asarray(breaks, dtype=float)
    x, w = _gl(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + half * (x + 1.0)).ravel()
    weights = (half * w).ravel()
    panel = np.repeat(np.arange(len(breaks) - 1), order)
    return nodes, weights, panel


def uniform_breaks(a: float, b: float, max_width: float, min_panels: int = 1):
    n = max(min_panels, int(math.ceil((b - a) / max_width - 1e-12)))
    return np.linspace(a, b, n + 1)


def sphere_rule(d: int, n_ang: int):
    """Directions and weights integrating over S^{d-1} (weights sum to |S^{d-1}|).

    d=1: the two points +-1; d=2: periodic trapezoid; d=3: Gauss in z times
    periodic trapezoid in azimuth.  Exact for polynomials of low degree and
    spectrally accurate for smooth periodic integrands.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        th = (np.arange(n_ang) + 0.5) * (2 * np.pi / n_ang)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return dirs, np.full(n_ang, 2 * np.pi / n_ang)
    if d == 3:
        nz = max(2, n_ang // 2)
        z, wz = _gl(nz)
        phi = (np.arange(n_ang) + 0.5) * (2 * np.pi / n_ang)
        Z, P = np.meshgrid(z, phi, indexing="ij")
        s = np.sqrt(1 - Z**2)
        dirs = np.stack([s * np.cos(P), s * np.sin(P), Z], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(n_ang, 2 * np.pi / n_ang)[None, :]).ravel()
        return dirs, w
    raise ValueError("sphere rules are only provided for d <= 3")


def bisect_vec(fun, lo, hi, tol=1e-12, max_iter=200):
    """Vectorised bisection for fun(lo) <= 0 < fun(hi) elementwise (or reversed).

    Returns midpoints with bracket width <= tol.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    flo = fun(lo)
    neg_at_lo = flo <= 0
    for _ in range(max_iter):
        if np.all(np.abs(hi - lo) <= tol):
            break
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        move_lo = (fm <= 0) == neg_at_lo
        lo = np.where(move_lo, mid, lo)
        hi = np.where(move_lo, hi, mid)
    return 0.5 * (lo + hi)


def newton_bracketed(fdf, lo, hi, x0=None, tol=2e-15, max_iter=60):
    """Safeguarded Newton for increasing ``fun`` with fun(lo) <= 0 <= fun(hi).

    ``fdf(x, idx)`` returns (fun, dfun) at positions ``x`` for the flat
    element indices ``idx``; only unconverged elements are revisited.
    Steps leaving the bracket fall back to bisection.  Returns (root, converged).
    """
    lo = np.array(lo, dtype=float).ravel()
    hi = np.array(hi, dtype=float).ravel()
    shape = np.shape(lo)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float).ravel(), lo, hi)
    done = np.zeros(x.shape, dtype=bool)
    idx = np.arange(x.size)
    for _ in range(max_iter):
        if idx.size == 0:
            break
        xi = x[idx]
        fx, dfx = fdf(xi, idx)
        lo[idx] = np.where(fx < 0, xi, lo[idx])
        hi[idx] = np.where(fx > 0, xi, hi[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xi - fx / dfx
        l, h = lo[idx], hi[idx]
        bad = ~np.isfinite(xn) | (xn < l) | (xn > h)
        xn = np.where(bad, 0.5 * (l + h), xn)
        conv = (fx == 0) | (np.abs(xn - xi) <= tol * np.maximum(np.abs(xi), 1e-300)) \
            | (h - l <= tol * np.maximum(np.abs(h), 1e-300))
        x[idx] = np.where(fx == 0, xi, xn)
        done[idx] = conv
        idx = idx[~conv]
    if idx.size:
        # stalled at roundoff: accept when the remaining Newton step is negligible
        xi = x[idx]
        fx, dfx = fdf(xi, idx)
        with np.errstate(divide="ignore", invalid="ignore"):
            done[idx] = np.abs(fx / dfx) <= 1e-13 * np.maximum(np.abs(xi), 1e-300)
    return x.reshape(shape), done.reshape(shape)
