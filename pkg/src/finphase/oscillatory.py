"""Oscillatory surface and volume integrals over a cap of a graph surface.

All integrals use the same cut-off rho(<xi, x> - h) and the inward normal.
The identity checked is

    I = F1 + F2 + F3,
    I  = int_M  i lam <xi, nu> e^{i lam <xi,x>} rho dS,
    F1 = lam^2 int_D e^{i lam <xi,x>} rho dV,
    F2 = int_D e^{i lam <xi,x>} rho'' dV,
    F3 = int_M e^{i lam <xi,x>} rho' <xi, nu> dS,

with D the convex region between M and the plane <xi, x> = h + c.

Quadrature runs in level-set polar coordinates around the tangency point:
x' = a' + r(s, theta) e_theta with <xi, (x', f(x'))> - h = s^2.  The phase
is then exactly lam * s^2, so one set of nodes serves every |lam| up to the
design maximum and the angular sums are computed once.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._quadrature import gauss_legendre, newton_bracketed, panel_rule, sphere_rule
from .sections import SliceEscapesChart
from .surfaces import GraphSurface, TangentFrame

EPS = np.finfo(float).eps


class UnresolvedOscillation(RuntimeError):
    """Requested lambda exceeds what the node set was built for."""


# -- cut-off ----------------------------------------------------------------


def _E(s):
    """exp(-1/s) for s > 0, zero otherwise, with first and second derivatives."""
    s = np.asarray(s, dtype=float)
    pos = s > 1e-3  # exp(-1000) underflows anyway
    safe = np.where(pos, s, 1.0)
    e = np.where(pos, np.exp(-1.0 / safe), 0.0)
    e1 = np.where(pos, e / safe**2, 0.0)
    e2 = np.where(pos, e * (1.0 / safe**4 - 2.0 / safe**3), 0.0)
    return e, e1, e2


@dataclass(frozen=True)
class CutoffSpec:
    """rho = 1 on |t| <= plateau*c, 0 on |t| >= c, smooth exponential step between."""

    c: float
    plateau: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("cap height must be positive")
        if not 0 < self.plateau < 1:
            raise ValueError("plateau fraction must lie in (0, 1)")

    @property
    def pc(self) -> float:
        return self.plateau * self.c

    def __call__(self, t, deriv: int = 0):
        return cutoff_eval(self, t, deriv)


def cutoff_eval(spec: CutoffSpec, t, deriv: int = 0):
    """rho_c or its first/second derivative."""
    if deriv not in (0, 1, 2):
        raise ValueError("deriv must be 0, 1 or 2")
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    L = spec.c - spec.pc
    u = (at - spec.pc) / L
    trans = (u > 0) & (u < 1)
    uu = np.where(trans, u, 0.5)
    a, a1, a2 = _E(uu)
    b, b1, b2 = _E(1.0 - uu)
    D = a + b
    if deriv == 0:
        val = np.where(at <= spec.pc, 1.0, np.where(trans, 1.0 - a / D, 0.0))
    else:
        # g = a/D with d/du b(1-u) = -b1
        N = a1 * b + a * b1
        if deriv == 1:
            g1 = N / D**2
            val = np.where(trans, -g1 / L * np.sign(t), 0.0)
        else:
            D1 = a1 - b1
            N1 = a2 * b - a1 * b1 + a1 * b1 - a * b2
            g2 = N1 / D**2 - 2 * N * D1 / D**3
            val = np.where(trans, -g2 / L**2, 0.0)
    return val if val.ndim else float(val)


# -- quadrature settings and node sets --------------------------------------


@dataclass(frozen=True)
class QuadratureSettings:
    order: int = 8
    angles: int = 32
    phase_per_panel: float = math.pi / 4
    min_panels: int = 16
    transition_panels: int = 24
    chunk: int = 256

    def refined(self) -> "QuadratureSettings":
        return QuadratureSettings(2 * self.order, 2 * self.angles, self.phase_per_panel,
                                  self.min_panels, self.transition_panels, self.chunk)

    def to_json_obj(self) -> dict:
        return {"order": self.order, "angles": self.angles,
                "phase_per_panel": self.phase_per_panel, "min_panels": self.min_panels,
                "transition_panels": self.transition_panels}


def t_breaks(spec: CutoffSpec, lam_max: float, settings: QuadratureSettings,
             t_end: float | None = None) -> np.ndarray:
    """Panel edges in t on [0, c] (plus optional zero-weight panels up to t_end)."""
    c, pc = spec.c, spec.pc
    width = min(c / settings.min_panels, (c - pc) / settings.transition_panels)
    if lam_max > 0:
        width = min(width, settings.phase_per_panel / lam_max)
    n1 = max(1, math.ceil(pc / width - 1e-9))
    n2 = max(1, math.ceil((c - pc) / width - 1e-9))
    br = np.concatenate([np.linspace(0, pc, n1 + 1), np.linspace(pc, c, n2 + 1)[1:]])
    if t_end is not None and t_end > c:
        n3 = max(1, math.ceil((t_end - c) / width - 1e-9))
        br = np.concatenate([br, np.linspace(c, t_end, n3 + 1)[1:]])
    return br


def _height(surface: GraphSurface, frame: TangentFrame, xp):
    """<(x', f(x')) - a, xi> relative to the tangency point."""
    xi = frame.xi
    y = xp - frame.a_prime
    return y @ xi[:-1] + xi[-1] * (surface.f(xp) - frame.a[-1])


def _level_radius(surface, frame, s, dirs):
    """r >= 0 with height(a' + r e) = s^2, for arrays s[k], dirs[m, d] -> r[k, m]."""
    xi = frame.xi
    ap = frame.a_prime
    H = surface.hess(ap)
    q = xi[-1] * 0.5 * np.einsum("md,de,me->m", dirs, H, dirs)
    guess = s[:, None] / np.sqrt(q)[None, :]
    reach = surface.r_dom - np.linalg.norm(ap)
    bound = s[:, None] * math.sqrt(2.0 / (xi[-1] * surface.convexity_margin))
    hi = np.minimum(bound * 1.5 + 1e-300, reach * (1 - 1e-12)) * np.ones_like(guess)
    s2 = np.broadcast_to((s * s)[:, None], guess.shape).ravel()
    D = np.broadcast_to(dirs[None, :, :], guess.shape + (dirs.shape[1],)).reshape(-1, dirs.shape[1])

    def fdf(r, idx):
        Di = D[idx]
        x = ap + r[:, None] * Di
        fv, g = surface.value_and_grad(x)
        h = (x - ap) @ xi[:-1] + xi[-1] * (fv - frame.a[-1])
        dh = np.einsum("kd,kd->k", xi[:-1] + xi[-1] * g, Di)
        return h - s2[idx], dh

    all_idx = np.arange(s2.size)
    if np.any(fdf(hi.ravel(), all_idx)[0] < 0):
        raise SliceEscapesChart("cap leaves the chart ball")
    r, ok = newton_bracketed(fdf, np.zeros(s2.size), hi.ravel(),
                             x0=np.minimum(guess, hi).ravel())
    if not np.all(ok | (s2 == 0)):
        raise RuntimeError("level-set radius did not converge")
    return r.reshape(guess.shape)
    return r


class CapQuadrature:
    """Nodes and lambda-independent angular sums for one surface, direction and cut-off.

    For every radial node s the following are stored (sum over angles):
      V(s)       = sum_theta J
      W0[k](s)   = sum_theta J * w0 * T_k
      W1[k](s)   = sum_theta J * <grad T_k, (-grad f, 1)>
    with J = r^{d-1} dr/ds and w0 = xi_n - xi' . grad f.
    """

    def __init__(self, surface: GraphSurface, frame: TangentFrame, spec: CutoffSpec,
                 lam_max: float, k_list=(0,), settings: QuadratureSettings | None = None,
                 t_end: float | None = None):
        self.surface, self.frame, self.spec = surface, frame, spec
        self.settings = settings or QuadratureSettings()
        self.lam_max = float(abs(lam_max))
        self.k_list = tuple(sorted(set(int(k) for k in k_list) | {0}))
        d = surface.d
        if d > 3:
            raise ValueError("cap quadrature supports n <= 4")
        self.breaks = t_breaks(spec, self.lam_max, self.settings, t_end)
        s_nodes, ws, panel = panel_rule(np.sqrt(self.breaks), self.settings.order)
        self.s, self.ws, self.panel = s_nodes, ws, panel
        self.t = s_nodes * s_nodes
        dirs, wdir = sphere_rule(d, self.settings.angles)
        self.dirs, self.wdir = dirs, wdir
        nk = len(self.k_list)
        V = np.zeros(len(s_nodes))
        W0 = np.zeros((nk, len(s_nodes)))
        W1 = np.zeros((nk, len(s_nodes)))
        # nodes beyond c carry zero cut-off weight; skip their geometry
        active = self.t < spec.c
        idx = np.flatnonzero(active)
        for lo in range(0, len(idx), self.settings.chunk):
            sl = idx[lo:lo + self.settings.chunk]
            v, w0, w1 = self._angular_sums(s_nodes[sl])
            V[sl], W0[:, sl], W1[:, sl] = v, w0, w1
        self.V, self.W0, self.W1 = V, W0, W1

    def _angular_sums(self, s):
        surf, fr = self.surface, self.frame
        xi = fr.xi
        dirs = self.dirs
        d = surf.d
        r = _level_radius(surf, fr, s, dirs)
        x = fr.a_prime + r[..., None] * dirs[None, :, :]
        g = surf.grad(x)
        dt_dr = np.einsum("kmd,md->km", xi[:-1] + xi[-1] * g, dirs)
        J = r ** (d - 1) * 2 * s[:, None] / dt_dr
        J = np.where(s[:, None] == 0, 0.0, J)
        w0 = xi[-1] - np.einsum("kmd,d->km", g, xi[:-1])
        Q = surf.quadratic_part()
        T1 = surf.rest(x) + np.einsum("kmd,de,kme->km", x, Q - np.eye(d), x)
        grad_T1_dot = 1.0 + 2.0 * np.einsum("kmd,kmd->km", x, g)
        V = J @ self.wdir
        W0 = []
        W1 = []
        for k in self.k_list:
            Tk = T1**k if k else np.ones_like(T1)
            W0.append((J * w0 * Tk) @ self.wdir)
            if k == 0:
                W1.append(np.zeros(len(s)))
            else:
                Tk1 = T1 ** (k - 1) if k > 1 else np.ones_like(T1)
                W1.append((J * k * Tk1 * grad_T1_dot) @ self.wdir)
        return V, np.array(W0), np.array(W1)

    # -- integrals ----------------------------------------------------------

    def _check(self, lam):
        if abs(lam) > self.lam_max * (1 + 1e-12):
            raise UnresolvedOscillation(
                f"|lambda|={abs(lam)} exceeds the node design maximum {self.lam_max}")

    def _finish(self, lam, terms, prefactor=1.0):
        """Deterministic compensated sum times e^{i lam h}, plus a roundoff estimate."""
        re = math.fsum(terms.real.tolist())
        im = math.fsum(terms.imag.tolist())
        mag = np.abs(terms)
        phase_err = EPS * (4.0 + np.abs(lam) * self.t)
        rnd = float(np.sqrt(np.sum((mag * phase_err) ** 2))) + EPS * float(np.sum(mag))
        val = complex(re, im) * prefactor * np.exp(1j * lam * self.frame.h)
        return val, rnd * abs(prefactor)

    def _kidx(self, k):
        try:
            return self.k_list.index(k)
        except ValueError:
            raise ValueError(f"k={k} was not precomputed") from None

    def I(self, lam: float, k: int = 0):
        self._check(lam)
        j = self._kidx(k)
        rho = self.spec(self.t)
        terms = self.ws * np.exp(1j * lam * self.t) * rho * (1j * lam * self.W0[j] + self.W1[j])
        return self._finish(lam, terms)

    def F3(self, lam: float):
        self._check(lam)
        rho1 = self.spec(self.t, 1)
        terms = self.ws * np.exp(1j * lam * self.t) * rho1 * self.W0[0]
        return self._finish(lam, terms)

    def _G(self, lam, deriv):
        """G(tau) = int_tau^c e^{i lam u} rho^{(deriv)}(u) du at every node tau = s^2."""
        br = self.breaks
        order = self.settings.order
        u, wu, pu = panel_rule(br, order)
        vals = wu * np.exp(1j * lam * u) * self.spec(u, deriv)
        npan = len(br) - 1
        full = np.zeros(npan, dtype=complex)
        np.add.at(full, pu, vals)
        tail = np.concatenate([np.cumsum(full[::-1])[::-1], [0.0]])  # tail[j] = sum_{m>=j}
        tau = self.t
        j = self.panel
        xg, wg = gauss_legendre(order)
        top = br[j + 1]
        half = 0.5 * (top - tau)
        uu = tau[:, None] + half[:, None] * (xg[None, :] + 1.0)
        part = (half[:, None] * wg[None, :] * np.exp(1j * lam * uu) * self.spec(uu, deriv)).sum(axis=1)
        return part + tail[j + 1]

    def F1(self, lam: float):
        self._check(lam)
        if lam == 0:
            return 0j, 0.0
        G = self._G(lam, 0)
        terms = self.ws * self.V * G
        return self._finish(lam, terms, lam * lam / self.frame.xi[-1])

    def F2(self, lam: float):
        self._check(lam)
        G = self._G(lam, 2)
        terms = self.ws * self.V * G
        return self._finish(lam, terms, 1.0 / self.frame.xi[-1])

    def area(self, tau):
        """Slice area A(tau) implied by the node set (projected area / xi_n), for tau <= c."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        out = np.empty(len(tau))
        for i, tv in enumerate(tau):
            sv = math.sqrt(tv)
            m = self.s < sv
            out[i] = float(np.sum(self.ws[m] * self.V[m]))
        return out / self.frame.xi[-1]


# -- public single-value API ------------------------------------------------


def _pair(surface, frame, spec, lam, settings, k_list=(0,)):
    settings = settings or QuadratureSettings()
    lam_max = max(abs(lam), 1.0)
    return (CapQuadrature(surface, frame, spec, lam_max, k_list, settings),
            CapQuadrature(surface, frame, spec, lam_max, k_list, settings.refined()))


def _with_error(q1, q2, name, lam, **kw):
    v1, _ = getattr(q1, name)(lam, **kw)
    v2, r2 = getattr(q2, name)(lam, **kw)
    return v2, abs(v2 - v1) + r2


def integral_I(surface, frame, spec, lam, k=0, settings=None, with_error=False):
    q1, q2 = _pair(surface, frame, spec, lam, settings, (k,))
    v, e = _with_error(q1, q2, "I", lam, k=k)
    return (v, e) if with_error else v


def integral_F1(surface, frame, spec, lam, settings=None, with_error=False):
    q1, q2 = _pair(surface, frame, spec, lam, settings)
    v, e = _with_error(q1, q2, "F1", lam)
    return (v, e) if with_error else v


def integral_F2(surface, frame, spec, lam, settings=None, with_error=False):
    q1, q2 = _pair(surface, frame, spec, lam, settings)
    v, e = _with_error(q1, q2, "F2", lam)
    return (v, e) if with_error else v


def integral_F3(surface, frame, spec, lam, settings=None, with_error=False):
    q1, q2 = _pair(surface, frame, spec, lam, settings)
    v, e = _with_error(q1, q2, "F3", lam)
    return (v, e) if with_error else v


def integral_F1_fubini(frame: TangentFrame, spec: CutoffSpec, lam: float, area,
                       settings: QuadratureSettings | None = None) -> complex:
    """lam^2 e^{i lam h} int_0^c e^{i lam t} rho(t) A(t) dt with a caller-supplied area function."""
    settings = settings or QuadratureSettings()
    br = t_breaks(spec, max(abs(lam), 1.0), settings)
    u, wu, _ = panel_rule(br, settings.order)
    terms = wu * np.exp(1j * lam * u) * spec(u) * np.asarray(area(u), dtype=float)
    val = complex(math.fsum(terms.real.tolist()), math.fsum(terms.imag.tolist()))
    return lam * lam * np.exp(1j * lam * frame.h) * val


# -- samples ----------------------------------------------------------------


@dataclass
class OscSample:
    lambda_grid: np.ndarray
    I: np.ndarray
    F1: np.ndarray | None
    F2: np.ndarray | None
    F3: np.ndarray | None
    err: dict
    k: int
    frame: TangentFrame
    c: float
    spec: CutoffSpec | None = None
    settings: QuadratureSettings | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# k={self.k}\n# c={self.c!r}\n")
        if self.spec is not None:
            buf.write(f"# plateau={self.spec.plateau!r}\n")
        if self.settings is not None:
            buf.write(f"# order={self.settings.order} angles={self.settings.angles}\n")
        names = [n for n in ("I", "F1", "F2", "F3") if getattr(self, n) is not None]
        cols = ["lambda"]
        for n in names:
            cols += [f"re_{n}", f"im_{n}", f"err_{n}"]
        buf.write(",".join(cols) + "\n")
        for i, lam in enumerate(self.lambda_grid):
            row = [repr(float(lam))]
            for n in names:
                v = getattr(self, n)[i]
                row += [repr(float(v.real)), repr(float(v.imag)), repr(float(self.err[n][i]))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def oscillatory_sample(surface: GraphSurface, frame: TangentFrame, spec: CutoffSpec,
                       lambda_grid, k: int = 0, settings: QuadratureSettings | None = None,
                       parts=("I", "F1", "F2", "F3"), jobs: int = 1) -> OscSample:
    """Evaluate the requested integrals on a lambda grid with node-doubling error estimates."""
    lams = np.asarray(lambda_grid, dtype=float)
    if lams.size == 0:
        raise ValueError("empty lambda grid")
    settings = settings or QuadratureSettings()
    lam_max = max(float(np.max(np.abs(lams))), 1.0)
    if k != 0:
        parts = ("I",)
    pair = [None, None]

    def build(i):
        st = settings if i == 0 else settings.refined()
        pair[i] = CapQuadrature(surface, frame, spec, lam_max, (k,), st)

    if jobs > 1:
        with ThreadPoolExecutor(2) as ex:
            list(ex.map(build, range(2)))
    else:
        build(0)
        build(1)
    q1, q2 = pair

    def one(lam):
        out = {}
        for name in parts:
            kw = {"k": k} if name == "I" else {}
            out[name] = _with_error(q1, q2, name, lam, **kw)
        return out

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            rows = list(ex.map(one, lams))
    else:
        rows = [one(lam) for lam in lams]
    vals = {n: np.array([r[n][0] for r in rows]) for n in parts}
    errs = {n: np.array([r[n][1] for r in rows]) for n in parts}
    return OscSample(lams, vals.get("I"), vals.get("F1"), vals.get("F2"), vals.get("F3"),
                     errs, k, frame, spec.c, spec, settings)


def stokes_residual(sample: OscSample, per_point: bool = False):
    """max over lambda of |I - (F1+F2+F3)| / max(|I|, |F1|+|F2|+|F3|)."""
    if sample.k != 0 or any(getattr(sample, n) is None for n in ("I", "F1", "F2", "F3")):
        raise ValueError("Stokes residual needs I, F1, F2, F3 at k=0")
    total = sample.F1 + sample.F2 + sample.F3
    scale = np.maximum(np.abs(sample.I),
                       np.abs(sample.F1) + np.abs(sample.F2) + np.abs(sample.F3))
    diff = np.abs(sample.I - total)
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)
    return rel if per_point else float(np.max(rel))


def decay_order(values, lambda_grid) -> float:
    """Least-squares slope of log|values| against log lambda; -inf if any value is zero."""
    v = np.abs(np.asarray(values))
    lam = np.abs(np.asarray(lambda_grid, dtype=float))
    if len(v) != len(lam) or len(v) < 2:
        raise ValueError("need matching grids with at least two points")
    if np.any(v == 0):
        return -math.inf
    return float(np.polyfit(np.log(lam), np.log(v), 1)[0])


# -- expansion fit ----------------------------------------------------------


@dataclass
class ExpansionFit:
    h: float
    k_min: int
    b: np.ndarray
    b_stderr: np.ndarray
    tail_rms: float
    noise_rms: float
    threshold: float
    finite: bool
    last_significant: int | None

    def to_json_obj(self) -> dict:
        return {
            "h": self.h,
            "k_min": self.k_min,
            "b_re": [float(v.real) for v in self.b],
            "b_im": [float(v.imag) for v in self.b],
            "b_stderr": [float(v) for v in self.b_stderr],
            "tail_rms": self.tail_rms,
            "noise_rms": self.noise_rms,
            "threshold": self.threshold,
            "finite": self.finite,
            "last_significant": self.last_significant,
        }


def extract_expansion(sample: OscSample, k_max: int, k_min: int = 0, h: float | None = None,
                      min_points: int = 12) -> ExpansionFit:
    """Fit e^{-i lam h} I(lam) by sum_{k=k_min}^{k_max} b_k lam^{-k}, weighted by the error estimates."""
    lam = np.asarray(sample.lambda_grid, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("expansion fit needs positive lambda")
    ks = np.arange(k_min, k_max + 1)
    if len(lam) < max(min_points, len(ks) + 1):
        raise ValueError("lambda grid too short for the requested expansion")
    h = sample.frame.h if h is None else h
    y = np.exp(-1j * lam * h) * sample.I
    err = np.asarray(sample.err["I"], dtype=float)
    err = np.maximum(err, 1e-16 * max(float(np.max(np.abs(y))), 1e-300))
    A = lam[:, None] ** (-ks[None, :].astype(float))
    scale = np.abs(A).max(axis=0)
    Aw = A / scale / err[:, None]
    if np.linalg.cond(Aw) > 1e13:
        raise ValueError("expansion fit is rank deficient on this grid")
    coef, *_ = np.linalg.lstsq(Aw.astype(complex), y / err, rcond=None)
    b = coef / scale
    resid = y - A @ b
    noise = math.sqrt(float(np.mean(err**2)))
    chi = resid / err
    tail = noise * math.sqrt(float(np.mean(np.abs(chi) ** 2)))
    dof = max(len(lam) - len(ks), 1)
    red = max(1.0, float(np.sum(np.abs(chi) ** 2)) / dof)
    cov = np.linalg.inv(Aw.T @ Aw) * red
    stderr = np.sqrt(np.diag(cov)) / scale
    sig = np.flatnonzero(np.abs(b) > 3 * stderr)
    last = int(ks[sig[-1]]) if len(sig) else None
    threshold = 3.0 * noise
    return ExpansionFit(float(h), int(k_min), b, stderr, tail, noise, threshold,
                        bool(tail <= threshold), last)
