"""Command-line runner: finphase volume|oscillate|lemmas|all <config.json>."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exactpoly import (
    MultiPoly,
    displayed_laplacian_constant,
    homogeneous_component,
    iterated_laplacian_at_zero,
    radial_laplacian_constant,
    random_homogeneous,
)
from .oscillatory import (
    CutoffSpec,
    QuadratureSettings,
    UnresolvedOscillation,
    decay_order,
    extract_expansion,
    oscillatory_sample,
    stokes_residual,
)
from .polydetect import IllConditionedFit, detect
from .sections import RootFindingError, SliceEscapesChart, leading_exponent, volume_profile
from .stphase import (
    HessianNotNormalized,
    MorseChartError,
    delta_vanishing_check,
    leading_term_indices,
    mollified_phase_integral,
    morse_normalize,
    quad_phase_expand,
    verify_phi_lemma,
    weight_leading_components,
)
from .surfaces import (
    GaussMapError,
    GraphSurface,
    SurfaceError,
    inverse_gauss,
    surface_from_config,
    unit,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

NUMERICAL_ERRORS = (SliceEscapesChart, RootFindingError, GaussMapError, UnresolvedOscillation,
                    IllConditionedFit, MorseChartError, FloatingPointError, np.linalg.LinAlgError)

TOP_KEYS = {"name", "surface", "directions", "direction_tilt", "c", "t_grid", "lambda_grid",
            "k_list", "seed", "output_dir", "volume", "oscillate", "lemmas"}


class ConfigError(ValueError):
    pass


# -- configuration ----------------------------------------------------------------


def parse_grid(spec, what: str) -> np.ndarray:
    """A list of numbers, or {"linspace"|"geomspace": [start, stop, num]}."""
    if isinstance(spec, dict):
        if len(spec) != 1:
            raise ConfigError(f"{what}: give exactly one of linspace/geomspace")
        (kind, args), = spec.items()
        if kind not in ("linspace", "geomspace") or not isinstance(args, list) or len(args) != 3:
            raise ConfigError(f"{what}: expected {{'linspace'|'geomspace': [start, stop, num]}}")
        try:
            a, b, n = float(args[0]), float(args[1]), int(args[2])
            grid = getattr(np, kind)(a, b, n)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{what}: {exc}") from exc
    elif isinstance(spec, list):
        try:
            grid = np.array([float(v) for v in spec])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{what}: entries must be numbers") from exc
    else:
        raise ConfigError(f"{what}: must be a list or a grid object")
    if grid.size == 0:
        raise ConfigError(f"{what}: grid is empty")
    if not np.all(np.isfinite(grid)):
        raise ConfigError(f"{what}: grid entries must be finite")
    return grid


def parse_directions(spec, n: int, tilt: float) -> list[np.ndarray]:
    """Explicit vectors, or "grid:k": e_n plus k-1 directions at polar angle ``tilt``."""
    if isinstance(spec, str):
        if not spec.startswith("grid:"):
            raise ConfigError("directions string must look like 'grid:k'")
        try:
            k = int(spec[5:])
        except ValueError as exc:
            raise ConfigError("directions 'grid:k' needs an integer k") from exc
        if k < 1:
            raise ConfigError("directions grid needs k >= 1")
        out = [np.eye(n)[-1]]
        for j in range(1, k):
            v = np.zeros(n)
            v[-1] = math.cos(tilt)
            if n == 2:
                v[0] = math.sin(tilt) * (1 if j % 2 else -1) * ((j + 1) // 2)
            else:
                phi = 2 * math.pi * (j - 1) / (k - 1)
                v[0], v[1] = math.sin(tilt) * math.cos(phi), math.sin(tilt) * math.sin(phi)
            out.append(unit(v))
        return out
    if not isinstance(spec, list) or not spec:
        raise ConfigError("directions must be a nonempty list or 'grid:k'")
    out = []
    for v in spec:
        try:
            arr = np.array(v, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("direction entries must be numeric vectors") from exc
        if arr.shape != (n,):
            raise ConfigError(f"direction {v} must have length {n}")
        if not np.linalg.norm(arr) > 0:
            raise ConfigError("directions must be nonzero")
        out.append(unit(arr))
    return out


@dataclass
class ExperimentConfig:
    name: str
    surface_def: dict | None
    surface: GraphSurface | None
    directions: list
    c: float | None
    t_grid: np.ndarray | None
    lambda_grid: np.ndarray | None
    k_list: list
    seed: int
    output_dir: Path
    volume: dict = field(default_factory=dict)
    oscillate: dict = field(default_factory=dict)
    lemmas: dict = field(default_factory=dict)
    present: set = field(default_factory=set)


def _positive(value, what):
    try:
        v = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a number") from exc
    if not v > 0 or not math.isfinite(v):
        raise ConfigError(f"{what} must be positive")
    return v


def load_config(path, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    surface = None
    directions = []
    if "surface" in raw:
        try:
            surface = surface_from_config(raw["surface"])
        except (SurfaceError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"surface: {exc}") from exc
        tilt = float(raw.get("direction_tilt", 0.15))
        directions = parse_directions(raw.get("directions", [list(np.eye(surface.n)[-1])]),
                                      surface.n, tilt)
    c = _positive(raw["c"], "c") if "c" in raw else None
    t_grid = parse_grid(raw["t_grid"], "t_grid") if "t_grid" in raw else None
    lambda_grid = parse_grid(raw["lambda_grid"], "lambda_grid") if "lambda_grid" in raw else None
    k_list = raw.get("k_list", [0])
    if not isinstance(k_list, list) or not k_list or any(
            not isinstance(k, int) or k < 0 for k in k_list):
        raise ConfigError("k_list must be a nonempty list of non-negative integers")
    seed = int(raw.get("seed", 0)) if seed is None else int(seed)
    out_dir = Path(out if out is not None else raw.get("output_dir", "finphase-out"))
    sections = {}
    for key in ("volume", "oscillate", "lemmas"):
        sec = raw.get(key, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"'{key}' must be an object")
        sections[key] = sec
    return ExperimentConfig(str(raw.get("name", Path(path).stem)), raw.get("surface"), surface,
                            directions, c, t_grid, lambda_grid, list(k_list), seed, out_dir,
                            present={k for k in ("volume", "oscillate", "lemmas") if k in raw},
                            **sections)


# -- output -------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def svg_plot(series, title: str, logx=False, logy=False, width=640, height=400) -> str:
    """Minimal SVG line plot of [(label, x, y), ...]."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    tx = np.log10 if logx else (lambda v: v)
    ty = np.log10 if logy else (lambda v: v)
    pts = []
    for _, x, y in series:
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) if logx else True) & ((y > 0) if logy else True)
        pts.append((tx(x[ok]), ty(y[ok])))
    allx = np.concatenate([p[0] for p in pts]) if pts else np.zeros(1)
    ally = np.concatenate([p[1] for p in pts]) if pts else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    m = 50

    def sx(v):
        return m + (v - x0) / (x1 - x0) * (width - 2 * m)

    def sy(v):
        return height - m - (v - y0) / (y1 - y0) * (height - 2 * m)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" '
           'fill="none" stroke="black"/>',
           f'<text x="{m}" y="{height - m + 16}" font-size="10">{x0:.3g}</text>',
           f'<text x="{width - m}" y="{height - m + 16}" font-size="10" text-anchor="end">{x1:.3g}</text>',
           f'<text x="{m - 4}" y="{height - m}" font-size="10" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{m - 4}" y="{m + 8}" font-size="10" text-anchor="end">{y1:.3g}</text>']
    for i, ((label, _, _), (x, y)) in enumerate(zip(series, pts)):
        col = colors[i % len(colors)]
        path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{width - m - 4}" y="{m + 14 + 14 * i}" font-size="11" '
                   f'text-anchor="end" fill="{col}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def dat_table(columns: dict) -> str:
    names = list(columns)
    rows = ["# " + " ".join(names)]
    for vals in zip(*columns.values()):
        rows.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(rows) + "\n"


class Runner:
    """Collects check outcomes, prints PASS/FAIL lines and writes outputs."""

    def __init__(self, cfg: ExperimentConfig, jobs: int = 1, svg: bool = False, stream=None):
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.svg = svg
        self.stream = stream or sys.stdout
        self.checks: list[dict] = []

    def check(self, suite: str, name: str, passed: bool, detail: str = ""):
        passed = bool(passed)
        self.checks.append({"suite": suite, "check": name, "passed": passed, "detail": detail})
        print(f"{'PASS' if passed else 'FAIL'} {name}" + (f": {detail}" if detail else ""),
              file=self.stream)

    def write(self, rel: str, text: str):
        path = self.cfg.output_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)

    @property
    def failed(self) -> bool:
        return any(not c["passed"] for c in self.checks)

    def require_surface(self, suite):
        if self.cfg.surface is None:
            raise ConfigError(f"'{suite}' needs a 'surface'")
        return self.cfg.surface


def _frames(run: Runner):
    surface = run.cfg.surface
    return [inverse_gauss(surface, xi) for xi in run.cfg.directions]


# -- volume ---------------------------------------------------------------------------


def cmd_volume(run: Runner):
    cfg = run.cfg
    surface = run.require_surface("volume")
    sec = cfg.volume
    c = _positive(sec.get("c", cfg.c if cfg.c is not None else 0.3), "volume.c")
    t_grid = parse_grid(sec["t_grid"], "volume.t_grid") if "t_grid" in sec else (
        cfg.t_grid if cfg.t_grid is not None else np.linspace(c / 30, c, 30))
    max_degree = int(sec.get("max_degree", 6))
    if len(t_grid) < 4:
        raise ConfigError("volume.t_grid needs at least 4 points")
    if np.any(t_grid <= 0) or np.any(t_grid > c):
        raise ConfigError("volume.t_grid must lie in (0, c]")
    kw = {}
    if "n_ang" in sec:
        kw["n_ang"] = int(sec["n_ang"])
    if "n_samples" in sec:
        kw["n_samples"] = int(float(sec["n_samples"]))
    expect = sec.get("expect", {})
    verdicts = []
    for i, xi in enumerate(cfg.directions):
        prof = volume_profile(surface, xi, t_grid, c, seed=cfg.seed + i, jobs=run.jobs, **kw)
        verdict = detect(prof, max_degree)
        try:
            expo, expo_se = leading_exponent(prof)
        except ValueError:
            expo, expo_se = math.nan, math.nan
        obj = verdict.to_json_obj()
        obj.update(direction=list(xi), leading_exponent=expo, leading_exponent_stderr=expo_se,
                   method=prof.method, seed=prof.seed, c=c)
        verdicts.append(obj)
        run.write(f"volume/profile_{i}.csv", prof.to_csv())
        run.write(f"volume/profile_{i}.dat", dat_table({"t": prof.t_grid, "A": prof.values,
                                                        "err": prof.err}))
        if run.svg:
            run.write(f"volume/profile_{i}.svg",
                      svg_plot([("A(t)", prof.t_grid, prof.values)], f"section volume, direction {i}",
                               logx=True, logy=True))
        tag = f"volume[{i}]"
        desc = (f"polynomial degree {verdict.degree}" if verdict.is_polynomial else
                f"{verdict.model} exponent {verdict.exponent:.4g}")
        run.check("volume", f"{tag} verdict", True, desc)
        if "is_polynomial" in expect:
            run.check("volume", f"{tag} is_polynomial", verdict.is_polynomial == expect["is_polynomial"],
                      f"{verdict.is_polynomial} (expected {expect['is_polynomial']})")
        if "degree" in expect:
            run.check("volume", f"{tag} degree", verdict.degree == expect["degree"],
                      f"{verdict.degree} (expected {expect['degree']})")
        if "coeffs" in expect:
            want = np.array([float(v) for v in expect["coeffs"]])
            got = np.array(verdict.coeffs, dtype=float)
            rtol = float(expect.get("rtol", 1e-4))
            ok = got.shape == want.shape and bool(np.all(np.abs(got - want) <= rtol * np.abs(want)))
            rel = float(np.max(np.abs(got - want) / np.abs(want))) if ok or got.shape == want.shape \
                else math.inf
            run.check("volume", f"{tag} coeffs", ok, f"max rel error {rel:.3g} (tol {rtol:g})")
        if "exponent" in expect:
            tol = float(expect.get("exponent_tol", 0.02))
            run.check("volume", f"{tag} leading exponent", abs(expo - expect["exponent"]) <= tol,
                      f"{expo:.4f} (expected {expect['exponent']} +- {tol:g})")
    if expect.get("agree") and len(verdicts) > 1:
        keys = [(v["is_polynomial"], v["degree"]) for v in verdicts]
        run.check("volume", "volume directions agree", len(set(keys)) == 1, str(keys[0]))
    run.write("volume/verdicts.json", dump_json(verdicts))
    return verdicts


# -- oscillate -------------------------------------------------------------------------


def _osc_settings(sec) -> QuadratureSettings:
    st = sec.get("quadrature", {})
    if not isinstance(st, dict):
        raise ConfigError("oscillate.quadrature must be an object")
    return QuadratureSettings(**{k: st[k] for k in ("order", "angles") if k in st})


def cmd_oscillate(run: Runner):
    cfg = run.cfg
    surface = run.require_surface("oscillate")
    sec = cfg.oscillate
    checks = sec.get("checks", ["stokes", "decay", "expansion"])
    if not isinstance(checks, list) or not set(checks) <= {"stokes", "decay", "expansion"}:
        raise ConfigError("oscillate.checks must list stokes/decay/expansion")
    settings = _osc_settings(sec)
    plateau = float(sec.get("plateau", 1.0 / 3.0))
    if not 0 < plateau < 1:
        raise ConfigError("oscillate.plateau must lie in (0, 1)")

    def setup(name):
        sub = sec.get(name, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"oscillate.{name} must be an object")
        c = sub.get("c", sec.get("c", cfg.c))
        if c is None:
            raise ConfigError(f"oscillate.{name}: no cap height c")
        grid = sub.get("lambda_grid", sec.get("lambda_grid"))
        lams = parse_grid(grid, f"oscillate.{name}.lambda_grid") if grid is not None else cfg.lambda_grid
        if lams is None:
            raise ConfigError(f"oscillate.{name}: no lambda_grid")
        return sub, CutoffSpec(_positive(c, f"oscillate.{name}.c"), plateau), lams

    plans = {name: setup(name) for name in checks}
    frames = _frames(run)
    report = {"settings": settings.to_json_obj(), "plateau": plateau, "directions": []}
    for i, fr in enumerate(frames):
        entry = {"direction": list(fr.xi), "h": fr.h}
        tag = f"[{i}]"
        if "stokes" in plans:
            sub, spec, lams = plans["stokes"]
            smp = oscillatory_sample(surface, fr, spec, lams, settings=settings, jobs=run.jobs)
            res = stokes_residual(smp)
            tol = float(sub.get("tol", 1e-5))
            entry["stokes"] = {"c": spec.c, "residual": res, "tol": tol}
            run.write(f"oscillate/stokes_{i}.csv", smp.to_csv())
            run.check("oscillate", f"stokes{tag}", res <= tol, f"relative residual {res:.3e}")
        if "decay" in plans:
            sub, spec, lams = plans["decay"]
            smp = oscillatory_sample(surface, fr, spec, lams, settings=settings,
                                     parts=("F2", "F3"), jobs=run.jobs)
            s2, s3 = decay_order(smp.F2, lams), decay_order(smp.F3, lams)
            bound = float(sub.get("max_slope", -5.0))
            entry["decay"] = {"c": spec.c, "slope_F2": s2, "slope_F3": s3, "max_slope": bound}
            run.write(f"oscillate/decay_{i}.csv", smp.to_csv())
            run.write(f"oscillate/decay_{i}.dat", dat_table(
                {"lambda": lams, "absF2": np.abs(smp.F2), "absF3": np.abs(smp.F3)}))
            if run.svg:
                run.write(f"oscillate/decay_{i}.svg", svg_plot(
                    [("|F2|", lams, np.abs(smp.F2)), ("|F3|", lams, np.abs(smp.F3))],
                    f"decay, direction {i}", logx=True, logy=True))
            run.check("oscillate", f"decay{tag}", s2 <= bound and s3 <= bound,
                      f"slopes F2 {s2:.2f}, F3 {s3:.2f} (bound {bound:g})")
        if "expansion" in plans:
            sub, spec, lams = plans["expansion"]
            k_max = int(sub.get("k_max", 1))
            fits = {}
            for k in cfg.k_list:
                smp = oscillatory_sample(surface, fr, spec, lams, k=k, settings=settings,
                                         parts=("I",), jobs=run.jobs)
                fit = extract_expansion(smp, k_max)
                fits[str(k)] = fit.to_json_obj()
                run.write(f"oscillate/expansion_{i}_k{k}.csv", smp.to_csv())
                run.write(f"oscillate/expansion_{i}_k{k}.dat", dat_table(
                    {"lambda": lams, "reI": smp.I.real, "imI": smp.I.imag, "err": smp.err["I"]}))
                if run.svg:
                    run.write(f"oscillate/expansion_{i}_k{k}.svg", svg_plot(
                        [("Re", lams, smp.I.real), ("Im", lams, smp.I.imag)],
                        f"I, k={k}, direction {i}", logx=True))
                run.check("oscillate", f"finite-expansion{tag} k={k}", fit.finite,
                          f"tail_rms {fit.tail_rms:.3e} vs threshold {fit.threshold:.3e}")
            entry["expansion"] = {"c": spec.c, "k_max": k_max, "fits": fits}
        report["directions"].append(entry)
    run.write("oscillate/report.json", dump_json(report))
    return report


# -- lemmas ------------------------------------------------------------------------------


def _poly_from(spec, what) -> MultiPoly:
    try:
        if isinstance(spec, dict) and "random" in spec:
            r = spec["random"]
            return random_homogeneous(int(r.get("dim", 2)), int(r["degree"]),
                                      np.random.default_rng(int(r.get("seed", 0))))
        if isinstance(spec, dict) and spec.get("zero") is not None:
            return MultiPoly.zero(int(spec["zero"]))
        return MultiPoly.from_json_obj(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: bad polynomial ({exc})") from exc


def _int(v, what, lo=None):
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(f"{what} must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(f"{what} must be at least {lo}")
    return v


def cmd_lemmas(run: Runner):
    sec = run.cfg.lemmas
    report = {}
    rows = []
    for j, row in enumerate(sec.get("leading", [])):
        m = _int(row.get("m"), f"leading[{j}].m", 5)
        alpha = _int(row.get("alpha"), f"leading[{j}].alpha", 1)
        n = _int(row.get("n", 3), f"leading[{j}].n", 2)
        N0 = _int(row.get("N0"), f"leading[{j}].N0", 0)
        r = leading_term_indices(m, alpha, n, N0)
        at_star = leading_term_indices(m, r.alpha_star, n, N0).collision
        obj = r.to_json_obj()
        obj["collision_at_alpha_star"] = at_star
        rows.append(obj)
        tag = f"leading[m={m},alpha={alpha},N0={N0}]"
        run.check("lemmas", f"{tag} separation", r.separated,
                  f"j1={r.j1} > {m * alpha + 1} > j2={r.j2}")
        run.check("lemmas", f"{tag} threshold", at_star, f"collision at alpha*={r.alpha_star}")
        if "expect_collision" in row:
            run.check("lemmas", f"{tag} collision", r.collision == bool(row["expect_collision"]),
                      f"{r.collision} (expected {bool(row['expect_collision'])})")
    report["leading"] = rows

    deltas = []
    for j, row in enumerate(sec.get("delta", [])):
        H = _poly_from(row.get("H"), f"delta[{j}].H")
        alpha = _int(row.get("alpha", 1), f"delta[{j}].alpha", 1)
        m = row.get("m", None if H.is_zero() else int(H.degree))
        m = _int(m, f"delta[{j}].m", 1)
        if H.dim < 2:
            raise ConfigError(f"delta[{j}].H needs at least two variables")
        if not H.is_zero() and not (H.is_homogeneous() and H.degree == m):
            raise ConfigError(f"delta[{j}].H must be homogeneous of degree {m}")
        r = delta_vanishing_check(H, m, alpha)
        obj = r.to_json_obj()
        obj.update(H=H.to_json_obj(), m=m, alpha=alpha, H_is_zero=H.is_zero())
        deltas.append(obj)
        ok = r.identity_holds and ((r.value == 0) == H.is_zero())
        run.check("lemmas", f"delta[{j}]", ok, f"value={r.value}, zero iff H=0")
    report["delta"] = deltas

    if "random_delta" in sec:
        rd = sec["random_delta"]
        count = _int(rd.get("count", 50), "random_delta.count", 1)
        degrees = rd.get("degrees", [5, 6, 7])
        alphas = rd.get("alphas", [1, 2])
        dim = _int(rd.get("dim", 2), "random_delta.dim", 2)
        rng = np.random.default_rng(int(rd.get("seed", run.cfg.seed)))
        bad = zeros = 0
        for j in range(count):
            m = int(degrees[j % len(degrees)])
            alpha = int(alphas[(j // len(degrees)) % len(alphas)])
            H = MultiPoly.zero(dim) if j % 10 == 9 else random_homogeneous(dim, m, rng, density=0.5)
            r = delta_vanishing_check(H, m, alpha)
            zeros += H.is_zero()
            if not (r.identity_holds and ((r.value == 0) == H.is_zero())):
                bad += 1
        report["random_delta"] = {"count": count, "zero_cases": zeros, "violations": bad}
        run.check("lemmas", "random delta equivalence", bad == 0,
                  f"{count} cases ({zeros} zero), {bad} violations")

    if "radial" in sec:
        rad = sec["radial"]
        s_max = _int(rad.get("s_max", 6), "radial.s_max", 1)
        d_max = _int(rad.get("d_max", 6), "radial.d_max", 1)
        table, bad = [], 0
        for d in range(1, d_max + 1):
            r2 = MultiPoly.norm_squared(d)
            for s in range(1, s_max + 1):
                direct = iterated_laplacian_at_zero(r2**s, s)
                C = radial_laplacian_constant(s, d)
                bad += direct != C
                table.append({"d": d, "s": s, "constant": C, "direct": direct,
                              "displayed_product": displayed_laplacian_constant(s, d + 1)})
        report["radial"] = table
        run.check("lemmas", "radial constant", bad == 0,
                  f"s <= {s_max}, 1 <= d <= {d_max}, {bad} mismatches")

    if "phase" in sec:
        ph = sec["phase"]
        count = _int(ph.get("count", 20), "phase.count", 1)
        mu = _positive(ph.get("mu", 100.0), "phase.mu")
        degree = _int(ph.get("degree", 6), "phase.degree", 0)
        rng = np.random.default_rng(int(ph.get("seed", run.cfg.seed)))
        worst, bad = 0.0, 0
        for _ in range(count):
            p = MultiPoly.zero(2)
            for k in range(degree + 1):
                p = p + random_homogeneous(2, k, rng)
            jm = degree // 2 + 1
            ex = quad_phase_expand(p, jm)
            q, q_err = mollified_phase_integral(p, 2, mu, with_error=True)
            for J in range(jm + 1):
                omitted = [abs(ex.term(mu, j)) for j in range(J + 1, jm + 1) if ex.laplacians[j] != 0]
                bound = (1.5 * omitted[0] if omitted else 0.0) + 3 * q_err + 1e-15
                err = abs(q - ex.partial_sum(mu, J))
                worst = max(worst, err / bound if bound else 0.0)
                bad += err > bound
        u = MultiPoly.variable(1, 0)
        fres = [abs(mollified_phase_integral(u**0, 1, mu) - quad_phase_expand(u**0, 0).partial_sum(mu)),
                abs(mollified_phase_integral(u**2, 1, mu) - 0.5j * math.sqrt(math.pi)
                    * complex(math.cos(math.pi / 4), math.sin(math.pi / 4)) * mu**-1.5)]
        report["phase"] = {"count": count, "mu": mu, "violations": bad, "worst_ratio": worst,
                           "fresnel_errors": fres}
        run.check("lemmas", "phase expansion vs quadrature", bad == 0,
                  f"{count} weights at mu={mu:g}, worst error/bound {worst:.3f}")
        run.check("lemmas", "fresnel closed forms", max(fres) <= 1e-10,
                  f"errors {fres[0]:.2e}, {fres[1]:.2e}")

    charts = []
    for j, row in enumerate(sec.get("morse", [])):
        try:
            surf = surface_from_config(row["surface"])
        except (SurfaceError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"morse[{j}].surface: {exc}") from exc
        try:
            chart = morse_normalize(surf)
        except HessianNotNormalized as exc:
            raise ConfigError(f"morse[{j}]: {exc}") from exc
        seed = int(row.get("seed", run.cfg.seed))
        res = chart.validation_residual(int(row.get("samples", 1000)), seed)
        jac = float(np.max(np.abs(chart.jacobian_at_zero() - np.eye(chart.dim))))
        obj = {"surface": surf.name, "delta": chart.delta, "residual": res, "jacobian_error": jac}
        run.check("lemmas", f"morse[{j}] {surf.name}", res <= 1e-12 and jac <= 1e-8,
                  f"residual {res:.2e}, dX(0)-I {jac:.1e}")
        if "m" in row:
            m = _int(row["m"], f"morse[{j}].m", 1)
            if surf.taylor is None:
                raise ConfigError(f"morse[{j}]: lemma check needs Taylor data")
            H = homogeneous_component(surf.taylor, m)
            phi = verify_phi_lemma(chart, H, m, seed=seed)
            obj["phi"] = phi.to_json_obj()
            run.check("lemmas", f"phi[{j}] {surf.name}", phi.verified,
                      f"slope {phi.slope:.2f} > m={m}")
        charts.append(obj)
    report["morse"] = charts

    weights = []
    for j, row in enumerate(sec.get("weights", [])):
        f = _poly_from(row.get("f"), f"weights[{j}].f")
        for k in row.get("k_list", [1, 2, 3]):
            k = _int(k, f"weights[{j}].k", 1)
            try:
                m, H, lead_T, lead_flux = weight_leading_components(f, k)
            except HessianNotNormalized as exc:
                raise ConfigError(f"weights[{j}]: {exc}") from exc
            ok = m is not None and lead_T == H**k and lead_flux == k * H ** (k - 1)
            weights.append({"k": k, "m": m, "ok": ok})
            run.check("lemmas", f"weights[{j}] k={k}", ok, f"leading parts H^{k} and {k} H^{k - 1}")
    report["weights"] = weights
    run.write("lemmas/report.json", dump_json(report))
    return report


# -- entry point ------------------------------------------------------------------------------


def cmd_all(run: Runner):
    present = run.cfg.present
    if not present:
        raise ConfigError("'all' needs at least one of volume/oscillate/lemmas")
    out = {}
    if "volume" in present:
        out["volume"] = cmd_volume(run)
    if "oscillate" in present:
        out["oscillate"] = cmd_oscillate(run)
    if "lemmas" in present:
        out["lemmas"] = cmd_lemmas(run)
    return out


COMMANDS = {"volume": cmd_volume, "oscillate": cmd_oscillate, "lemmas": cmd_lemmas, "all": cmd_all}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finphase", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="experiment configuration (JSON)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--svg", action="store_true", help="also write SVG line plots")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.seed, args.out)
        run = Runner(cfg, args.jobs, args.svg)
        COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # anything else is a failed computation, not a failed check
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    run.write(f"{args.command}_checks.json", dump_json(
        {"config": cfg.name, "seed": cfg.seed, "checks": run.checks}))
    n_fail = sum(not c["passed"] for c in run.checks)
    print(f"{len(run.checks) - n_fail} passed, {n_fail} failed", file=run.stream)
    return EXIT_FAIL if n_fail else EXIT_PASS


if __name__ == "__main__":
    raise SystemExit(main())
