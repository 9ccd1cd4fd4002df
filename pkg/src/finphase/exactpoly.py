"""Exact multivariate polynomials over the rationals.

Coefficients are :class:`fractions.Fraction`; exponent vectors are tuples of
non-negative ints.  Sphere moments carry powers of pi symbolically through
:class:`PiMultiple` so that zero tests stay exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class Cancelled(RuntimeError):
    """Raised when a caller-supplied cancel check fires mid-computation."""


def _check_cancel(cancel):
    if cancel is not None and cancel():
        raise Cancelled("exact computation cancelled by caller")


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    if isinstance(c, float):
        # shortest decimal round-trip, so 0.2 -> 1/5
        return Fraction(repr(c))
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as an exact coefficient")


def _grlex_key(exp: tuple[int, ...]):
    return (sum(exp), exp)


class MultiPoly:
    """Polynomial in ``dim`` variables with exact rational coefficients.

    Instances are treated as immutable.  Iteration order over terms is
    graded lexicographic, which makes serialization reproducible.
    """

    __slots__ = ("dim", "_terms")

    def __init__(self, dim: int, terms: Mapping[Sequence[int], object] | None = None):
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        self.dim = int(dim)
        clean: dict[tuple[int, ...], Fraction] = {}
        for exp, c in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != self.dim:
                raise ValueError(f"exponent {exp} has length {len(exp)}, expected {self.dim}")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
            c = _as_fraction(c)
            if c:
                clean[exp] = clean.get(exp, Fraction(0)) + c
                if not clean[exp]:
                    del clean[exp]
        self._terms = dict(sorted(clean.items(), key=lambda kv: _grlex_key(kv[0])))

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "MultiPoly":
        return cls(dim)

    @classmethod
    def constant(cls, dim: int, c) -> "MultiPoly":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def variable(cls, dim: int, i: int) -> "MultiPoly":
        exp = [0] * dim
        exp[i] = 1
        return cls(dim, {tuple(exp): 1})

    @classmethod
    def monomial(cls, exp: Sequence[int], c=1) -> "MultiPoly":
        return cls(len(exp), {tuple(exp): c})

    @classmethod
    def norm_squared(cls, dim: int) -> "MultiPoly":
        """|x|^2 = x_1^2 + ... + x_dim^2."""
        terms = {}
        for i in range(dim):
            exp = [0] * dim
            exp[i] = 2
            terms[tuple(exp)] = 1
        return cls(dim, terms)

    # -- basic properties ---------------------------------------------------

    @property
    def terms(self) -> dict[tuple[int, ...], Fraction]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> float:
        """Total degree; ``-inf`` for the zero polynomial."""
        if not self._terms:
            return -math.inf
        return max(sum(e) for e in self._terms)

    @property
    def min_degree(self) -> float:
        if not self._terms:
            return math.inf
        return min(sum(e) for e in self._terms)

    def is_homogeneous(self) -> bool:
        degs = {sum(e) for e in self._terms}
        return len(degs) <= 1

    def coefficient(self, exp: Sequence[int]) -> Fraction:
        return self._terms.get(tuple(exp), Fraction(0))

    def constant_term(self) -> Fraction:
        return self.coefficient((0,) * self.dim)

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if isinstance(other, MultiPoly):
            return self.dim == other.dim and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == MultiPoly.constant(self.dim, other)
        return NotImplemented

    def __hash__(self):
        return hash((self.dim, tuple(self._terms.items())))

    def __repr__(self):
        if not self._terms:
            return f"MultiPoly({self.dim}, 0)"
        parts = []
        for exp, c in self._terms.items():
            mono = "*".join(
                f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}" for i, e in enumerate(exp) if e
            )
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return f"MultiPoly({self.dim}, {' + '.join(parts)})"

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "MultiPoly":
        if isinstance(other, MultiPoly):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        return MultiPoly.constant(self.dim, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for exp, c in other._terms.items():
            out[exp] = out.get(exp, Fraction(0)) + c
        return MultiPoly(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly(self.dim, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, MultiPoly):
            c = _as_fraction(other)
            return MultiPoly(self.dim, {e: c * v for e, v in self._terms.items()})
        return poly_mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        result = MultiPoly.constant(self.dim, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    # -- calculus -----------------------------------------------------------

    def derivative(self, i: int, order: int = 1) -> "MultiPoly":
        out: dict[tuple[int, ...], Fraction] = {}
        for exp, c in self._terms.items():
            e = exp[i]
            if e < order:
                continue
            factor = math.perm(e, order)
            new = list(exp)
            new[i] = e - order
            out[tuple(new)] = out.get(tuple(new), Fraction(0)) + c * factor
        return MultiPoly(self.dim, out)

    def gradient(self) -> list["MultiPoly"]:
        return [self.derivative(i) for i in range(self.dim)]

    def homogeneous_component(self, m: int) -> "MultiPoly":
        return homogeneous_component(self, m)

    def truncate(self, max_degree: int) -> "MultiPoly":
        return MultiPoly(self.dim, {e: c for e, c in self._terms.items() if sum(e) <= max_degree})

    # -- evaluation ---------------------------------------------------------

    def __call__(self, *point):
        if len(point) == 1 and isinstance(point[0], (list, tuple)):
            point = tuple(point[0])
        return self.evaluate(point)

    def evaluate(self, point: Sequence) -> Fraction:
        """Exact evaluation at a rational point."""
        if len(point) != self.dim:
            raise ValueError("point has wrong dimension")
        pt = [_as_fraction(p) for p in point]
        total = Fraction(0)
        for exp, c in self._terms.items():
            v = c
            for x, e in zip(pt, exp):
                if e:
                    v *= x**e
            total += v
        return total

    def numeric(self) -> Callable[[np.ndarray], np.ndarray]:
        """Vectorised float evaluator ``x[..., dim] -> value[...]``."""
        items = [(exp, float(c)) for exp, c in self._terms.items()]
        max_e = [max((e[i] for e, _ in items), default=0) for i in range(self.dim)]

        def ev(x):
            x = np.asarray(x, dtype=float)
            if x.shape[-1] != self.dim:
                raise ValueError("last axis must have length dim")
            out = np.zeros(x.shape[:-1])
            if not items:
                return out
            pw = []
            for i in range(self.dim):
                col = x[..., i].copy()
                row = [None, col]
                for _ in range(2, max_e[i] + 1):
                    row.append(row[-1] * col)
                pw.append(row)
            for exp, c in items:
                term = None
                for i, e in enumerate(exp):
                    if e:
                        term = pw[i][e] * c if term is None else term * pw[i][e]
                out += c if term is None else term
            return out

        return ev

    def numeric_with_gradient(self):
        """Vectorised evaluator ``x -> (value, gradient)`` sharing the monomial powers."""
        items = [(exp, float(c)) for exp, c in self._terms.items()]
        max_e = [max((e[i] for e, _ in items), default=0) for i in range(self.dim)]
        dim = self.dim

        def ev(x):
            x = np.asarray(x, dtype=float)
            shape = x.shape[:-1]
            val = np.zeros(shape)
            grad = np.zeros(shape + (dim,))
            one = np.ones(shape)
            pw = []
            for i in range(dim):
                col = x[..., i].copy()
                row = [one, col]
                for _ in range(2, max_e[i] + 1):
                    row.append(row[-1] * col)
                pw.append(row)
            for exp, c in items:
                factors = [pw[i][e] for i, e in enumerate(exp)]
                val += c * np.prod(factors, axis=0) if dim > 1 else c * factors[0]
                for i, e in enumerate(exp):
                    if e:
                        fs = factors[:i] + [e * pw[i][e - 1]] + factors[i + 1:]
                        grad[..., i] += c * (np.prod(fs, axis=0) if dim > 1 else fs[0])
            return val, grad

        return ev

    def compose(self, subs: Sequence["MultiPoly"], max_degree: int | None = None) -> "MultiPoly":
        """Substitute ``subs[i]`` for variable ``i``; optionally truncate by degree."""
        if len(subs) != self.dim:
            raise ValueError("need one substitution per variable")
        dim = subs[0].dim
        if any(s.dim != dim for s in subs):
            raise ValueError("substitutions must share a dimension")

        def trunc(p):
            return p if max_degree is None else p.truncate(max_degree)

        cache: dict[tuple[int, int], MultiPoly] = {}

        def power(i, e):
            if e == 0:
                return MultiPoly.constant(dim, 1)
            key = (i, e)
            if key not in cache:
                cache[key] = trunc(power(i, e - 1) * subs[i])
            return cache[key]

        total = MultiPoly.zero(dim)
        for exp, c in self._terms.items():
            term = MultiPoly.constant(dim, c)
            for i, e in enumerate(exp):
                if e:
                    term = trunc(term * power(i, e))
            total = total + term
        return total

    # -- serialization ------------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "dim": self.dim,
            "terms": [
                {"exp": list(exp), "num": str(c.numerator), "den": str(c.denominator)}
                for exp, c in self._terms.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "MultiPoly":
        dim = int(obj["dim"])
        terms: dict[tuple[int, ...], Fraction] = {}
        for t in obj["terms"]:
            exp = tuple(int(e) for e in t["exp"])
            c = Fraction(int(t["num"]), int(t.get("den", "1")))
            terms[exp] = terms.get(exp, Fraction(0)) + c
        return cls(dim, terms)

    @classmethod
    def from_json(cls, text: str) -> "MultiPoly":
        return cls.from_json_obj(json.loads(text))


def poly_mul(p: MultiPoly, q: MultiPoly) -> MultiPoly:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    out: dict[tuple[int, ...], Fraction] = {}
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            out[e] = out.get(e, Fraction(0)) + c1 * c2
    return MultiPoly(p.dim, out)


def t_k_symbol(n: int, k: int) -> MultiPoly:
    """(x_n - x_1^2 - ... - x_{n-1}^2)^k in n variables."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if k < 0:
        raise ValueError("k must be non-negative")
    base = MultiPoly.variable(n, n - 1)
    for j in range(n - 1):
        exp = [0] * n
        exp[j] = 2
        base = base - MultiPoly.monomial(exp)
    return base**k


def laplacian(p: MultiPoly) -> MultiPoly:
    out: dict[tuple[int, ...], Fraction] = {}
    for exp, c in p.items():
        for i, e in enumerate(exp):
            if e >= 2:
                new = list(exp)
                new[i] = e - 2
                new = tuple(new)
                out[new] = out.get(new, Fraction(0)) + c * e * (e - 1)
    return MultiPoly(p.dim, out)


def homogeneous_component(p: MultiPoly, m: int) -> MultiPoly:
    return MultiPoly(p.dim, {e: c for e, c in p.items() if sum(e) == m})


def homogeneous_parts(p: MultiPoly) -> dict[int, MultiPoly]:
    degs = sorted({sum(e) for e in p.terms})
    return {d: homogeneous_component(p, d) for d in degs}


def iterated_laplacian_at_zero(p: MultiPoly, j: int, cancel=None) -> Fraction:
    """(Delta^j p)(0), computed exactly.

    Only the degree-2j component can contribute, so the others are dropped
    up front.
    """
    if j < 0:
        raise ValueError("j must be non-negative")
    q = homogeneous_component(p, 2 * j)
    for _ in range(j):
        _check_cancel(cancel)
        if q.is_zero():
            return Fraction(0)
        q = laplacian(q)
    return q.constant_term()


# -- sphere moments ---------------------------------------------------------


@dataclass(frozen=True)
class PiMultiple:
    """The exact real number ``coeff * pi**pi_power``."""

    coeff: Fraction
    pi_power: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeff", _as_fraction(self.coeff))
        if self.coeff == 0:
            object.__setattr__(self, "pi_power", 0)

    def is_zero(self) -> bool:
        return self.coeff == 0

    def __float__(self):
        return float(self.coeff) * math.pi**self.pi_power

    def __add__(self, other: "PiMultiple") -> "PiMultiple":
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        if self.pi_power != other.pi_power:
            raise ValueError("cannot add different powers of pi exactly")
        return PiMultiple(self.coeff + other.coeff, self.pi_power)

    def __mul__(self, other):
        if isinstance(other, PiMultiple):
            return PiMultiple(self.coeff * other.coeff, self.pi_power + other.pi_power)
        return PiMultiple(self.coeff * _as_fraction(other), self.pi_power)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, PiMultiple):
            return PiMultiple(self.coeff / other.coeff, self.pi_power - other.pi_power)
        return PiMultiple(self.coeff / _as_fraction(other), self.pi_power)

    def __str__(self):
        if self.pi_power == 0:
            return str(self.coeff)
        return f"{self.coeff}*pi^{self.pi_power}"


def _double_factorial(n: int) -> int:
    if n <= 0:
        return 1
    return math.prod(range(n, 0, -2))


def sphere_monomial_moment(alpha: Sequence[int], d: int) -> PiMultiple:
    """Integral of theta^alpha over the unit sphere S^{d-1} in R^d.

    Uses 2*prod Gamma(b_i)/Gamma(sum b_i) with b_i = (alpha_i+1)/2, written
    with double factorials so the result is rational times a power of pi.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != d:
        raise ValueError("alpha must have length d")
    if any(a % 2 for a in alpha):
        return PiMultiple(Fraction(0))
    # Gamma((a+1)/2) = (a-1)!! / 2^(a/2) * sqrt(pi) for even a
    num = Fraction(2)
    for a in alpha:
        num *= Fraction(_double_factorial(a - 1), 2 ** (a // 2))
    total = sum(alpha) + d  # 2 * sum(b_i)
    if total % 2 == 0:
        # Gamma(total/2) = (total/2 - 1)!, pi^(d/2) survives
        return PiMultiple(num / math.factorial(total // 2 - 1), d // 2)
    # Gamma(k + 1/2) = (2k-1)!!/2^k sqrt(pi), with k = (total-1)/2
    k = (total - 1) // 2
    gamma = Fraction(_double_factorial(2 * k - 1), 2**k)
    return PiMultiple(num / gamma, (d - 1) // 2)


def sphere_area(d: int) -> PiMultiple:
    """|S^{d-1}|."""
    return sphere_monomial_moment((0,) * d, d)


@dataclass(frozen=True)
class RadialProfile:
    """Radially symmetric polynomial sum_s coeffs[2s] * pi^pi_power * r^(2s)."""

    dim: int
    coeffs: dict = field(default_factory=dict)
    pi_power: int = 0

    def coefficient(self, degree: int) -> PiMultiple:
        return PiMultiple(self.coeffs.get(degree, Fraction(0)), self.pi_power)

    def is_zero(self) -> bool:
        return not any(self.coeffs.values())


def spherical_average(p: MultiPoly) -> RadialProfile:
    """r -> integral over |theta|=1 of p(r*theta), as an exact radial polynomial."""
    d = p.dim
    pi_power = sphere_area(d).pi_power
    coeffs: dict[int, Fraction] = {}
    for exp, c in p.items():
        mom = sphere_monomial_moment(exp, d)
        if mom.is_zero():
            continue
        deg = sum(exp)
        coeffs[deg] = coeffs.get(deg, Fraction(0)) + c * mom.coeff
    coeffs = {k: v for k, v in sorted(coeffs.items()) if v}
    return RadialProfile(d, coeffs, pi_power)


def radial_laplacian_constant(s_max: int, d: int) -> int:
    """Delta^s (r^(2s)) at 0 in R^d, via Delta r^(2s) = 2s(2s+d-2) r^(2s-2)."""
    if d < 1:
        raise ValueError("d must be positive")
    if s_max < 1:
        raise ValueError("s_max must be positive")
    return math.prod(2 * s * (2 * s + d - 2) for s in range(1, s_max + 1))


def displayed_laplacian_constant(m_alpha: int, n: int) -> int:
    """The product prod_{j=1}^{m_alpha} ((2ma-2j+2)(2ma-2j+1) + n - 2).

    Kept alongside :func:`radial_laplacian_constant` for comparison; it is
    not equal to Delta^s(r^2s)(0), only nonzero like it.
    """
    return math.prod(
        (2 * m_alpha - 2 * j + 2) * (2 * m_alpha - 2 * j + 1) + n - 2
        for j in range(1, m_alpha + 1)
    )


def random_homogeneous(
    dim: int, degree: int, rng: np.random.Generator, max_num: int = 9, max_den: int = 5,
    density: float = 0.7,
) -> MultiPoly:
    """Random homogeneous polynomial with small rational coefficients (may be zero)."""
    terms = {}
    for exp in _exponents_of_degree(dim, degree):
        if rng.random() < density:
            num = int(rng.integers(-max_num, max_num + 1))
            den = int(rng.integers(1, max_den + 1))
            terms[exp] = Fraction(num, den)
    return MultiPoly(dim, terms)


def _exponents_of_degree(dim: int, degree: int) -> Iterable[tuple[int, ...]]:
    if dim == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _exponents_of_degree(dim - 1, degree - first):
            yield (first,) + rest
