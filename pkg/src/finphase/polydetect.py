"""Polynomial versus fractional-power classification of sampled volume profiles."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import minimize_scalar

from .sections import VolumeProfile


class IllConditionedFit(RuntimeError):
    def __init__(self, cond):
        super().__init__(f"least-squares system ill-conditioned (cond={cond:.3e})")
        self.cond = cond


@dataclass
class PolyVerdict:
    is_polynomial: bool
    degree: int | None
    coeffs: list
    residual_rms: float
    threshold: float
    model: str = "polynomial"
    exponent: float | None = None
    aic_polynomial: float | None = None
    aic_power: float | None = None
    scan: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        out = asdict(self)
        out["coeffs"] = [float(c) for c in self.coeffs]
        return out


def _errors(profile: VolumeProfile) -> np.ndarray:
    e = np.asarray(profile.err, dtype=float)
    floor = 1e-15 * max(float(np.max(np.abs(profile.values))), 1e-300)
    return np.maximum(e, floor)


def _weighted_rms(resid, err):
    rms_err = math.sqrt(float(np.mean(err**2)))
    return rms_err * math.sqrt(float(np.mean((resid / err) ** 2)))


def fit_poly(profile: VolumeProfile, degree: int, max_cond: float = 1e12):
    """Weighted least squares fit A(t) ~ sum_{k=1}^{degree} c_k t^k.

    Solved in the basis s*T_j(2s-1), s = t/t_max, then mapped back to
    monomials.  Returns (coeffs c_1..c_degree, residual_rms).
    """
    if degree < 1:
        raise ValueError("degree must be at least 1")
    t = profile.t_grid
    y = profile.values
    if len(t) < degree + 3:
        raise ValueError(f"need at least {degree + 3} points for degree {degree}")
    err = _errors(profile)
    tmax = float(t.max())
    s = t / tmax
    basis = s[:, None] * C.chebvander(2 * s - 1, degree - 1)
    W = basis / err[:, None]
    cond = float(np.linalg.cond(W))
    if not cond < max_cond:
        raise IllConditionedFit(cond)
    cheb, *_ = np.linalg.lstsq(W, y / err, rcond=None)
    resid = y - basis @ cheb
    # chebyshev series in (2s-1) -> power series in s, then shift by the factor s
    in_s = C.Chebyshev(cheb, domain=[0, 1]).convert(kind=np.polynomial.Polynomial).coef
    in_s = np.pad(in_s, (0, degree - len(in_s)))
    coeffs = np.array([in_s[k - 1] / tmax**k for k in range(1, degree + 1)])
    return coeffs, _weighted_rms(resid, err)


def _chi2_power(t, y, err, p, q):
    basis = t[:, None] ** (p + np.arange(q + 1))
    scale = np.abs(basis).max(axis=0)
    W = basis / scale / err[:, None]
    coef, *_ = np.linalg.lstsq(W, y / err, rcond=None)
    r = (y - (basis / scale) @ coef) / err
    return float(np.sum(r**2)), coef / scale


def fit_power_series(profile: VolumeProfile, q: int = 2, p_bounds=(0.05, 8.0)):
    """Fit A ~ t^p (c_0 + ... + c_q t^q) with p free; returns (p, coeffs, chi2)."""
    t, y = profile.t_grid, profile.values
    err = _errors(profile)
    grid = np.arange(p_bounds[0], p_bounds[1] + 1e-9, 0.05)
    chis = [_chi2_power(t, y, err, p, q)[0] for p in grid]
    i = int(np.argmin(chis))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda p: _chi2_power(t, y, err, p, q)[0], bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-10})
    p = float(res.x) if res.fun <= chis[i] else float(grid[i])
    chi2, coef = _chi2_power(t, y, err, p, q)
    return p, coef, chi2


def _aic(chi2, n, k):
    return n * math.log(max(chi2, 1e-300) / n) + 2 * k


def detect(profile: VolumeProfile, max_degree: int, power_terms: int = 2) -> PolyVerdict:
    """Smallest degree whose weighted residual is at the noise level, else a power law."""
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    err = _errors(profile)
    threshold = 3.0 * math.sqrt(float(np.mean(err**2)))
    n = len(profile.t_grid)
    scan = {}
    best = None
    for deg in range(1, max_degree + 1):
        if n < deg + 3:
            break
        try:
            coeffs, rms = fit_poly(profile, deg)
        except IllConditionedFit:
            break
        scan[deg] = rms
        best = (deg, coeffs, rms)
        if rms <= threshold:
            chi2 = (rms / math.sqrt(float(np.mean(err**2)))) ** 2 * n
            return PolyVerdict(True, deg, list(coeffs), rms, threshold, "polynomial", float(deg),
                               _aic(chi2, n, deg), None, {str(k): v for k, v in scan.items()})
    if best is None:
        raise ValueError("profile too short for any polynomial fit")
    deg, coeffs, rms = best
    chi2_poly = (rms / math.sqrt(float(np.mean(err**2)))) ** 2 * n
    p, _, chi2_pow = fit_power_series(profile, power_terms)
    aic_poly = _aic(chi2_poly, n, deg)
    aic_pow = _aic(chi2_pow, n, power_terms + 2)
    model = "power_law" if aic_pow < aic_poly else "polynomial_misfit"
    return PolyVerdict(False, None, list(coeffs), rms, threshold, model, p, aic_poly, aic_pow,
                       {str(k): v for k, v in scan.items()})
