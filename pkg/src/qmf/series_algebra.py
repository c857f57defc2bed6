"""Graded exact/float arithmetic for the formal series the quasimode engine runs on.

Everything downstream manipulates four kinds of objects built here:

* scalar Laurent series in the half-power variable (``FormalScalarSeries``),
* multivariate polynomials with vector (fiber) values (``Poly``, ``FiberPoly``),
* power-counted series whose order-j coefficient is a polynomial of degree
  at most 2j (``S0Series``),
* truncated Taylor jets in the base variable carrying half-integer series
  orders (``XJetSeries``),

together with the substitution x = sqrt(hbar) * y that identifies the last
two (``rescale`` / ``unrescale``).

Coefficients live in one of two interchangeable domains: exact rationals
(``EXACT``) or complex double floats with a zero tolerance (``float_mode``).
Every container stores its mode; mixing modes raises.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

__all__ = [
    "HalfInt",
    "HI0",
    "half_range",
    "ExactMode",
    "FloatMode",
    "EXACT",
    "float_mode",
    "Poly",
    "FiberPoly",
    "FormalScalarSeries",
    "S0Series",
    "XJetSeries",
    "rescale",
    "unrescale",
    "inverse_sqrt_series",
    "binomial_series",
    "S0DegreeError",
]


# ---------------------------------------------------------------------------
# Half integers


@dataclass(frozen=True, order=True)
class HalfInt:
    """An element of (1/2) * Z, stored as twice its value.

    Used for every series exponent: orders in sqrt(hbar) are naturally
    half-integers, and storing ``doubled`` keeps hashing and ordering exact.
    """

    doubled: int

    @staticmethod
    def of(value) -> "HalfInt":
        """Coerce an int, HalfInt, or Fraction with denominator 1 or 2."""
        if isinstance(value, HalfInt):
            return value
        if isinstance(value, int):
            return HalfInt(2 * value)
        if isinstance(value, Fraction):
            if value.denominator in (1, 2):
                return HalfInt(int(value * 2))
            raise ValueError(f"not a half-integer: {value}")
        raise TypeError(f"cannot interpret {value!r} as a half-integer")

    @property
    def is_integer(self) -> bool:
        return self.doubled % 2 == 0

    def as_fraction(self) -> Fraction:
        return Fraction(self.doubled, 2)

    def __add__(self, other) -> "HalfInt":
        return HalfInt(self.doubled + HalfInt.of(other).doubled)

    __radd__ = __add__

    def __sub__(self, other) -> "HalfInt":
        return HalfInt(self.doubled - HalfInt.of(other).doubled)

    def __rsub__(self, other) -> "HalfInt":
        return HalfInt(HalfInt.of(other).doubled - self.doubled)

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.doubled)

    def __mul__(self, k: int) -> "HalfInt":
        if not isinstance(k, int):
            raise TypeError("HalfInt may only be scaled by an int")
        return HalfInt(self.doubled * k)

    __rmul__ = __mul__

    def __str__(self) -> str:
        if self.is_integer:
            return str(self.doubled // 2)
        return f"{self.doubled}/2"

    def __repr__(self) -> str:
        return f"HalfInt({self.doubled}/2)"

    def floor_int(self) -> int:
        return self.doubled // 2

    def twice_int(self) -> int:
        return self.doubled

    @staticmethod
    def parse(text: str) -> "HalfInt":
        """Parse '3', '3/2' or '1.5'."""
        text = text.strip()
        if "/" in text:
            num, den = text.split("/", 1)
            return HalfInt.of(Fraction(int(num), int(den)))
        if "." in text:
            return HalfInt.of(Fraction(text).limit_denominator(2))
        return HalfInt.of(int(text))


HI0 = HalfInt(0)
HI_HALF = HalfInt(1)
HI1 = HalfInt(2)


def half_range(start, stop) -> Iterator[HalfInt]:
    """Half-integer steps from start to stop inclusive."""
    a = HalfInt.of(start).doubled
    b = HalfInt.of(stop).doubled
    for d in range(a, b + 1):
        yield HalfInt(d)


# ---------------------------------------------------------------------------
# Coefficient modes


class ExactMode:
    """Exact rational coefficients (Fraction). Conjugation is the identity."""

    name = "exact"
    tol = Fraction(0)

    def coeff(self, value):
        if isinstance(value, Fraction):
            return value
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, str):
            return Fraction(value)
        raise TypeError(f"exact mode needs rational input, got {type(value).__name__}")

    def zero(self):
        return Fraction(0)

    def one(self):
        return Fraction(1)

    def is_zero(self, c) -> bool:
        return c == 0

    def conj(self, c):
        return c

    def is_real(self, c) -> bool:
        return True

    def real(self, c):
        return c

    def abs(self, c):
        return -c if c < 0 else c

    def to_json(self, c):
        return str(c)

    def to_float(self, c) -> float:
        return float(c)

    def __repr__(self):
        return "ExactMode()"


class FloatMode:
    """Complex double coefficients with an absolute zero tolerance."""

    name = "float"

    def __init__(self, tol: float = 1e-12):
        self.tol = tol

    def coeff(self, value):
        if isinstance(value, Fraction):
            return complex(value.numerator / value.denominator)
        if isinstance(value, (int, float, complex)):
            return complex(value)
        if isinstance(value, str):
            return complex(Fraction(value))
        raise TypeError(f"cannot coerce {type(value).__name__} to float mode")

    def zero(self):
        return 0j

    def one(self):
        return 1 + 0j

    def is_zero(self, c) -> bool:
        return abs(c) <= self.tol

    def conj(self, c):
        return c.conjugate()

    def is_real(self, c) -> bool:
        return abs(c.imag) <= self.tol

    def real(self, c):
        return c.real

    def abs(self, c):
        return abs(c)

    def to_json(self, c):
        if self.is_real(c):
            return c.real
        return [c.real, c.imag]

    def to_float(self, c) -> float:
        return c.real

    def __repr__(self):
        return f"FloatMode(tol={self.tol})"


EXACT = ExactMode()
_FLOAT_DEFAULT = FloatMode()


def float_mode(tol: float = 1e-12) -> FloatMode:
    if tol == 1e-12:
        return _FLOAT_DEFAULT
    return FloatMode(tol)


def _same_mode(a, b):
    if a is not b and type(a) is not type(b):
        raise ValueError(f"mixing coefficient modes {a!r} and {b!r}")
    return a


# ---------------------------------------------------------------------------
# Multivariate polynomials

Monomial = tuple  # tuple[int, ...]


def mono_degree(alpha: Monomial) -> int:
    return sum(alpha)


def mono_add(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Poly:
    """Scalar polynomial in n variables over a coefficient mode.

    Terms are a dict mapping exponent tuples to nonzero coefficients; absent
    keys are zero. Instances are treated as immutable.
    """

    __slots__ = ("mode", "n", "terms")

    def __init__(self, mode, n: int, terms: Mapping[Monomial, object] | None = None, *, _clean: bool = False):
        self.mode = mode
        self.n = n
        if terms is None:
            self.terms = {}
        elif _clean:
            self.terms = dict(terms)
        else:
            self.terms = {a: c for a, c in terms.items() if not mode.is_zero(c)}

    # -- constructors

    @staticmethod
    def zero(mode, n: int) -> "Poly":
        return Poly(mode, n, None)

    @staticmethod
    def const(mode, n: int, value) -> "Poly":
        c = mode.coeff(value)
        if mode.is_zero(c):
            return Poly(mode, n, None)
        return Poly(mode, n, {(0,) * n: c}, _clean=True)

    @staticmethod
    def monomial(mode, n: int, alpha: Monomial, value=1) -> "Poly":
        c = mode.coeff(value)
        if mode.is_zero(c):
            return Poly(mode, n, None)
        return Poly(mode, n, {tuple(alpha): c}, _clean=True)

    @staticmethod
    def variable(mode, n: int, i: int) -> "Poly":
        alpha = [0] * n
        alpha[i] = 1
        return Poly.monomial(mode, n, tuple(alpha))

    # -- queries

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self):
        """Total degree; -inf for the zero polynomial."""
        if not self.terms:
            return float("-inf")
        return max(mono_degree(a) for a in self.terms)

    def min_degree(self):
        if not self.terms:
            return float("inf")
        return min(mono_degree(a) for a in self.terms)

    def coefficient(self, alpha: Monomial):
        return self.terms.get(tuple(alpha), self.mode.zero())

    def parity(self) -> int | None:
        """+1 if all terms have even degree, -1 if all odd, 0 mixed, None if zero."""
        if not self.terms:
            return None
        pars = {mono_degree(a) % 2 for a in self.terms}
        if pars == {0}:
            return 1
        if pars == {1}:
            return -1
        return 0

    def homogeneous_component(self, d: int) -> "Poly":
        return Poly(self.mode, self.n,
                    {a: c for a, c in self.terms.items() if mono_degree(a) == d}, _clean=True)

    def components_by_degree(self) -> dict[int, "Poly"]:
        out: dict[int, dict] = {}
        for a, c in self.terms.items():
            out.setdefault(mono_degree(a), {})[a] = c
        return {d: Poly(self.mode, self.n, t, _clean=True) for d, t in sorted(out.items())}

    def truncate_degree(self, d: int) -> "Poly":
        return Poly(self.mode, self.n,
                    {a: c for a, c in self.terms.items() if mono_degree(a) <= d}, _clean=True)

    # -- arithmetic

    def __add__(self, other: "Poly") -> "Poly":
        _same_mode(self.mode, other.mode)
        if self.n != other.n:
            raise ValueError("variable count mismatch")
        terms = dict(self.terms)
        for a, c in other.terms.items():
            s = terms.get(a, self.mode.zero()) + c
            if self.mode.is_zero(s):
                terms.pop(a, None)
            else:
                terms[a] = s
        return Poly(self.mode, self.n, terms, _clean=True)

    def __neg__(self) -> "Poly":
        return Poly(self.mode, self.n, {a: -c for a, c in self.terms.items()}, _clean=True)

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def __mul__(self, other: "Poly") -> "Poly":
        _same_mode(self.mode, other.mode)
        if self.n != other.n:
            raise ValueError("variable count mismatch")
        terms: dict[Monomial, object] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                key = mono_add(a, b)
                s = terms.get(key, self.mode.zero()) + ca * cb
                terms[key] = s
        return Poly(self.mode, self.n, terms)

    def scale(self, c) -> "Poly":
        if isinstance(c, (int, Fraction, str)):
            c = self.mode.coeff(c)
        return Poly(self.mode, self.n, {a: v * c for a, v in self.terms.items()})

    def diff(self, i: int) -> "Poly":
        terms = {}
        for a, c in self.terms.items():
            if a[i] == 0:
                continue
            b = list(a)
            b[i] -= 1
            terms[tuple(b)] = c * a[i]
        return Poly(self.mode, self.n, terms, _clean=True)

    def conj(self) -> "Poly":
        return Poly(self.mode, self.n, {a: self.mode.conj(c) for a, c in self.terms.items()}, _clean=True)

    def pow(self, k: int) -> "Poly":
        if k < 0:
            raise ValueError("negative power")
        out = Poly.const(self.mode, self.n, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out

    def eval_floats(self, point: Sequence[float]) -> complex:
        total = 0j
        for a, c in self.terms.items():
            v = c if isinstance(c, complex) else complex(float(c))
            for xi, ei in zip(point, a):
                if ei:
                    v = v * xi**ei
            total += v
        return total

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        if not self.terms:
            return "Poly(0)"
        bits = []
        for a in sorted(self.terms):
            mono = "*".join(f"y{i}^{e}" for i, e in enumerate(a) if e) or "1"
            bits.append(f"({self.terms[a]})*{mono}")
        return "Poly(" + " + ".join(bits) + ")"


class FiberPoly:
    """Polynomial with values in the fiber: one scalar ``Poly`` per component.

    The zero polynomial has degree -inf. Parity is the common parity of all
    components (0 when mixed, None when zero).
    """

    __slots__ = ("rank", "components")

    def __init__(self, components: Sequence[Poly]):
        if not components:
            raise ValueError("rank must be at least 1")
        self.components = tuple(components)
        self.rank = len(self.components)

    @property
    def mode(self):
        return self.components[0].mode

    @property
    def n(self) -> int:
        return self.components[0].n

    @staticmethod
    def zero(mode, n: int, rank: int) -> "FiberPoly":
        z = Poly.zero(mode, n)
        return FiberPoly([z] * rank)

    @staticmethod
    def scalar(p: Poly) -> "FiberPoly":
        return FiberPoly([p])

    @staticmethod
    def unit(p: Poly, rank: int, k: int) -> "FiberPoly":
        """p times the k-th (0-based) fiber basis vector."""
        comps = [Poly.zero(p.mode, p.n)] * rank
        comps[k] = p
        return FiberPoly(comps)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def degree(self):
        return max(c.degree() for c in self.components)

    def min_degree(self):
        return min(c.min_degree() for c in self.components)

    def parity(self) -> int | None:
        pars = {c.parity() for c in self.components} - {None}
        if not pars:
            return None
        if len(pars) > 1:
            return 0
        return pars.pop()

    def truncate_degree(self, d: int) -> "FiberPoly":
        return FiberPoly([c.truncate_degree(d) for c in self.components])

    def __add__(self, other: "FiberPoly") -> "FiberPoly":
        if self.rank != other.rank:
            raise ValueError("rank mismatch")
        return FiberPoly([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "FiberPoly") -> "FiberPoly":
        return self + (-other)

    def __neg__(self) -> "FiberPoly":
        return FiberPoly([-c for c in self.components])

    def scale(self, c) -> "FiberPoly":
        return FiberPoly([p.scale(c) for p in self.components])

    def mul_scalar_poly(self, q: Poly) -> "FiberPoly":
        return FiberPoly([c * q for c in self.components])

    def apply_matrix(self, m: Sequence[Sequence[object]]) -> "FiberPoly":
        """Left-multiply by an rank x rank constant coefficient matrix."""
        out = []
        for i in range(self.rank):
            acc = Poly.zero(self.mode, self.n)
            for j in range(self.rank):
                c = m[i][j]
                if not self.mode.is_zero(c):
                    acc = acc + self.components[j].scale(c)
            out.append(acc)
        return FiberPoly(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, FiberPoly) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self) -> str:
        return f"FiberPoly({list(self.components)!r})"


# ---------------------------------------------------------------------------
# Scalar Laurent series in sqrt(hbar)


def _min_trunc(a: HalfInt | None, b: HalfInt | None) -> HalfInt | None:
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


class FormalScalarSeries:
    """Laurent series in the half-power variable with scalar coefficients.

    ``offset`` is the exponent of the first stored coefficient and ``coeffs``
    holds consecutive half-integer steps from there. ``truncation_order`` is
    the largest exponent guaranteed exact (None means the series is exact at
    every order, e.g. it came from a polynomial identity). Stored coefficients
    beyond the truncation order are dropped; absent ones below it are zero.
    """

    __slots__ = ("mode", "offset", "coeffs", "truncation_order")

    def __init__(self, mode, offset: HalfInt, coeffs: Sequence, truncation_order: HalfInt | None):
        self.mode = mode
        coeffs = list(coeffs)
        # drop leading zeros, advancing the offset
        while coeffs and mode.is_zero(coeffs[0]):
            coeffs.pop(0)
            offset = offset + HalfInt(1)
        # drop anything beyond the truncation order
        if truncation_order is not None and coeffs:
            keep = truncation_order.doubled - offset.doubled + 1
            if keep <= 0:
                coeffs = []
            elif keep < len(coeffs):
                coeffs = coeffs[:keep]
        while coeffs and mode.is_zero(coeffs[-1]):
            coeffs.pop()
        if not coeffs:
            offset = HI0
        self.offset = offset
        self.coeffs = tuple(coeffs)
        self.truncation_order = truncation_order

    # -- constructors

    @staticmethod
    def zero(mode, truncation_order: HalfInt | None = None) -> "FormalScalarSeries":
        return FormalScalarSeries(mode, HI0, (), truncation_order)

    @staticmethod
    def const(mode, value, truncation_order: HalfInt | None = None) -> "FormalScalarSeries":
        return FormalScalarSeries(mode, HI0, (mode.coeff(value),), truncation_order)

    @staticmethod
    def from_terms(mode, terms: Mapping[HalfInt, object], truncation_order: HalfInt | None = None) -> "FormalScalarSeries":
        if not terms:
            return FormalScalarSeries.zero(mode, truncation_order)
        keys = sorted(terms, key=lambda h: h.doubled)
        lo, hi = keys[0], keys[-1]
        coeffs = [mode.zero()] * (hi.doubled - lo.doubled + 1)
        for k, v in terms.items():
            coeffs[k.doubled - lo.doubled] = mode.coeff(v) if isinstance(v, (int, Fraction, str)) else v
        return FormalScalarSeries(mode, lo, coeffs, truncation_order)

    @staticmethod
    def hbar_power(mode, exponent, value=1, truncation_order: HalfInt | None = None) -> "FormalScalarSeries":
        return FormalScalarSeries(mode, HalfInt.of(exponent), (mode.coeff(value),), truncation_order)

    # -- queries

    def is_zero(self) -> bool:
        return not self.coeffs

    def order(self) -> HalfInt | None:
        """Exponent of the leading nonzero coefficient; None for the zero series."""
        return self.offset if self.coeffs else None

    def coefficient(self, exponent) -> object:
        e = HalfInt.of(exponent)
        i = e.doubled - self.offset.doubled
        if not self.coeffs or i < 0 or i >= len(self.coeffs):
            return self.mode.zero()
        return self.coeffs[i]

    def known(self, exponent) -> bool:
        if self.truncation_order is None:
            return True
        return HalfInt.of(exponent) <= self.truncation_order

    def items(self) -> Iterator[tuple[HalfInt, object]]:
        for i, c in enumerate(self.coeffs):
            if not self.mode.is_zero(c):
                yield HalfInt(self.offset.doubled + i), c

    def support(self) -> list[HalfInt]:
        return [e for e, _ in self.items()]

    # -- arithmetic

    def __add__(self, other: "FormalScalarSeries") -> "FormalScalarSeries":
        _same_mode(self.mode, other.mode)
        trunc = _min_trunc(self.truncation_order, other.truncation_order)
        terms: dict[HalfInt, object] = dict(self.items())
        for e, c in other.items():
            terms[e] = terms.get(e, self.mode.zero()) + c
        return FormalScalarSeries.from_terms(self.mode, terms, trunc)

    def __neg__(self) -> "FormalScalarSeries":
        return FormalScalarSeries(self.mode, self.offset, tuple(-c for c in self.coeffs), self.truncation_order)

    def __sub__(self, other: "FormalScalarSeries") -> "FormalScalarSeries":
        return self + (-other)

    def __mul__(self, other: "FormalScalarSeries") -> "FormalScalarSeries":
        _same_mode(self.mode, other.mode)
        if self.is_zero() or other.is_zero():
            # the product is identically zero; it stays exact wherever either factor is known
            return FormalScalarSeries.zero(self.mode, _product_trunc(self, other))
        trunc = _product_trunc(self, other)
        terms: dict[HalfInt, object] = {}
        for ea, ca in self.items():
            for eb, cb in other.items():
                e = ea + eb
                if trunc is not None and e > trunc:
                    continue
                terms[e] = terms.get(e, self.mode.zero()) + ca * cb
        return FormalScalarSeries.from_terms(self.mode, terms, trunc)

    def scale(self, c) -> "FormalScalarSeries":
        c = c if not isinstance(c, (int, Fraction, str)) else self.mode.coeff(c)
        return FormalScalarSeries(self.mode, self.offset, tuple(v * c for v in self.coeffs), self.truncation_order)

    def shift(self, exponent) -> "FormalScalarSeries":
        """Multiply by the half-power variable to the given exponent."""
        e = HalfInt.of(exponent)
        trunc = None if self.truncation_order is None else self.truncation_order + e
        return FormalScalarSeries(self.mode, self.offset + e, self.coeffs, trunc)

    def truncate(self, truncation_order: HalfInt | None) -> "FormalScalarSeries":
        return FormalScalarSeries(self.mode, self.offset, self.coeffs,
                                  _min_trunc(self.truncation_order, truncation_order))

    def conj(self) -> "FormalScalarSeries":
        return FormalScalarSeries(self.mode, self.offset,
                                  tuple(self.mode.conj(c) for c in self.coeffs), self.truncation_order)

    def inverse(self, through: HalfInt | None = None) -> "FormalScalarSeries":
        """Multiplicative inverse; the leading coefficient must be invertible.

        ``through`` (absolute exponent bound on the result) is required when
        the series is exact at all orders but not a monomial.
        """
        if self.is_zero():
            raise ZeroDivisionError("inverse of the zero series")
        lead = self.coeffs[0]
        rel_trunc = None if self.truncation_order is None else self.truncation_order - self.offset
        # self = lead * h^offset * (1 + v) with ord(v) > 0
        rel = FormalScalarSeries(self.mode, HI0, tuple(c / lead for c in self.coeffs), rel_trunc)
        v = rel - FormalScalarSeries.const(self.mode, 1, rel_trunc)
        rel_through = None if through is None else through + self.offset
        inv_rel = binomial_series(v, Fraction(-1), through=rel_through)
        return inv_rel.scale(self.mode.one() / lead).shift(-self.offset)

    def __truediv__(self, other: "FormalScalarSeries") -> "FormalScalarSeries":
        return self * other.inverse()

    def equals_through(self, other: "FormalScalarSeries", through) -> bool:
        through = HalfInt.of(through)
        exps = set(self.support()) | set(other.support())
        for e in exps:
            if e > through:
                continue
            if not self.mode.is_zero(self.coefficient(e) - other.coefficient(e)):
                return False
        return True

    def max_abs_coeff(self, through: HalfInt | None = None) -> float:
        vals = [self.mode.abs(c) for e, c in self.items() if through is None or e <= through]
        return max((float(v) for v in vals), default=0.0)

    def evaluate(self, hbar: float, through: HalfInt | None = None) -> complex:
        total = 0j
        for e, c in self.items():
            if through is not None and e > through:
                continue
            total += complex(self.mode.to_float(c) if self.mode.is_real(c) else c) * hbar ** (e.doubled / 2)
        return total

    def is_real(self) -> bool:
        return all(self.mode.is_real(c) for _, c in self.items())

    def __eq__(self, other) -> bool:
        return (isinstance(other, FormalScalarSeries)
                and dict(self.items()) == dict(other.items()))

    def __repr__(self) -> str:
        if self.is_zero():
            return "Series(0)"
        bits = [f"({c})*h^{e}" for e, c in self.items()]
        t = "" if self.truncation_order is None else f" + O(h^{self.truncation_order + HalfInt(1)})"
        return "Series(" + " + ".join(bits) + t + ")"


def _product_trunc(a: FormalScalarSeries, b: FormalScalarSeries) -> HalfInt | None:
    """Largest exponent of a*b computable from the known parts of a and b.

    A coefficient of the product at exponent e needs a at e - ord(b) and
    beyond, so e is exact only up to min(T_a + ord(b), T_b + ord(a)).
    For series known exactly (T = None) the other bound applies alone.
    """
    candidates = []
    if a.truncation_order is not None:
        ob = b.order()
        candidates.append(a.truncation_order + (ob if ob is not None else HI0))
    if b.truncation_order is not None:
        oa = a.order()
        candidates.append(b.truncation_order + (oa if oa is not None else HI0))
    if not candidates:
        return None
    return min(candidates)


def binomial_series(v: FormalScalarSeries, exponent: Fraction, through: HalfInt | None = None) -> "FormalScalarSeries":
    """(1 + v)^exponent as a series, for v of strictly positive order.

    The binomial coefficients are exact rationals, so the result stays in the
    coefficient domain of v. ``through`` bounds the computed order when v is
    exact at all orders.
    """
    if not v.is_zero() and (v.order() is None or v.order() <= HI0):
        raise ValueError("binomial series needs a perturbation of positive order")
    trunc = _min_trunc(v.truncation_order, through)
    if trunc is None:
        if v.is_zero():
            return FormalScalarSeries.const(v.mode, 1)
        raise ValueError("binomial series of an untruncated series needs an explicit order")
    out = FormalScalarSeries.const(v.mode, 1, trunc)
    if v.is_zero():
        return out
    ord_v = v.order().doubled
    kmax = max(0, trunc.doubled // ord_v)
    term = FormalScalarSeries.const(v.mode, 1, trunc)
    coeff = Fraction(1)
    for k in range(1, kmax + 1):
        coeff = coeff * (exponent - (k - 1)) / k
        term = term * v
        out = out + term.scale(v.mode.coeff(coeff))
    return out


def inverse_sqrt_series(a: FormalScalarSeries, through: HalfInt | None = None) -> FormalScalarSeries:
    """Series r with r*r*a = 1, for a = 1 + (positive order terms).

    Rejects input whose constant term differs from 1: that signals
    un-normalized Gram data upstream.
    """
    lead = a.coefficient(HI0)
    if a.is_zero() or a.order() != HI0 or not a.mode.is_zero(lead - a.mode.one()):
        raise ValueError("inverse square root needs leading coefficient 1 at order 0")
    v = a - FormalScalarSeries.const(a.mode, 1, a.truncation_order)
    return binomial_series(v, Fraction(-1, 2), through=through)


# ---------------------------------------------------------------------------
# Power-counted polynomial series (image of the rescaling map)


class S0DegreeError(ValueError):
    """A coefficient polynomial exceeds the degree bound deg P_j <= 2j."""


class S0Series:
    """Series sum_j h^(j-K) P_j(y) with deg P_j <= 2j.

    ``coeffs`` maps the nonnegative half-integer j to the fiber polynomial
    P_j; the absolute series exponent of P_j is j - K. ``truncation_order``
    bounds the absolute exponents that are exact. The degree invariant is
    validated at construction.
    """

    __slots__ = ("mode", "n", "rank", "K", "coeffs", "truncation_order")

    def __init__(self, mode, n: int, rank: int, K: HalfInt,
                 coeffs: Mapping[HalfInt, FiberPoly], truncation_order: HalfInt | None,
                 *, validate: bool = True):
        if K < HI0:
            raise ValueError("K must be nonnegative")
        self.mode = mode
        self.n = n
        self.rank = rank
        self.K = K
        clean: dict[HalfInt, FiberPoly] = {}
        for j, p in coeffs.items():
            if p.is_zero():
                continue
            if truncation_order is not None and j - K > truncation_order:
                continue
            if j < HI0:
                raise ValueError("coefficient indices must be nonnegative")
            clean[j] = p
        if validate:
            for j, p in clean.items():
                if p.degree() > j.doubled:  # deg <= 2j, and 2j == j.doubled
                    raise S0DegreeError(
                        f"degree {p.degree()} at order index {j} exceeds bound {j.doubled}")
        self.coeffs = clean
        self.truncation_order = truncation_order

    @staticmethod
    def zero(mode, n: int, rank: int, truncation_order: HalfInt | None = None) -> "S0Series":
        return S0Series(mode, n, rank, HI0, {}, truncation_order)

    @staticmethod
    def from_fiber_poly(p: FiberPoly, truncation_order: HalfInt | None = None) -> "S0Series":
        """A plain polynomial viewed at absolute order zero (K = degree / 2)."""
        if p.is_zero():
            return S0Series(p.mode, p.n, p.rank, HI0, {}, truncation_order)
        K = HalfInt(int(p.degree()))
        return S0Series(p.mode, p.n, p.rank, K, {K: p}, truncation_order)

    def is_zero(self) -> bool:
        return not self.coeffs

    def items(self) -> Iterator[tuple[HalfInt, FiberPoly]]:
        for j in sorted(self.coeffs, key=lambda h: h.doubled):
            yield j, self.coeffs[j]

    def at_relative(self, j: HalfInt) -> FiberPoly:
        return self.coeffs.get(j, FiberPoly.zero(self.mode, self.n, self.rank))

    def at_absolute(self, t) -> FiberPoly:
        return self.at_relative(HalfInt.of(t) + self.K)

    def absolute_orders(self) -> list[HalfInt]:
        return [j - self.K for j, _ in self.items()]

    def with_K(self, K_new: HalfInt) -> "S0Series":
        """Re-express with a larger K (shifting indices keeps the invariant)."""
        if K_new < self.K:
            raise ValueError("can only raise K")
        d = K_new - self.K
        return S0Series(self.mode, self.n, self.rank, K_new,
                        {j + d: p for j, p in self.coeffs.items()},
                        self.truncation_order, validate=False)

    def minimal_K(self) -> "S0Series":
        """Re-express with the smallest K under which the degree bound holds.

        A term of degree d at absolute exponent t needs an index j = t + K
        with 2j >= d and j >= 0, so K.doubled >= max(d, 0) - t.doubled.
        """
        need = 0
        for j, p in self.items():
            t = j - self.K
            d = p.degree()
            d = 0 if d == float("-inf") else int(d)
            need = max(need, d - t.doubled, -t.doubled)
        K_new = HalfInt(max(0, need))
        shift = K_new - self.K
        return S0Series(self.mode, self.n, self.rank, K_new,
                        {j + shift: p for j, p in self.coeffs.items()},
                        self.truncation_order)

    def __add__(self, other: "S0Series") -> "S0Series":
        _same_mode(self.mode, other.mode)
        if (self.n, self.rank) != (other.n, other.rank):
            raise ValueError("shape mismatch")
        K = max(self.K, other.K)
        a, b = self.with_K(K), other.with_K(K)
        coeffs = dict(a.coeffs)
        for j, p in b.coeffs.items():
            coeffs[j] = coeffs.get(j, FiberPoly.zero(self.mode, self.n, self.rank)) + p
        return S0Series(self.mode, self.n, self.rank, K, coeffs,
                        _min_trunc(self.truncation_order, other.truncation_order), validate=False)

    def __sub__(self, other: "S0Series") -> "S0Series":
        return self + other.scale(-1)

    def scale(self, c) -> "S0Series":
        c = self.mode.coeff(c) if isinstance(c, (int, Fraction, str)) else c
        return S0Series(self.mode, self.n, self.rank, self.K,
                        {j: p.scale(c) for j, p in self.coeffs.items()},
                        self.truncation_order, validate=False)

    def scale_series(self, s: FormalScalarSeries) -> "S0Series":
        """Multiply by a scalar series (exponents must keep the result in the space)."""
        _same_mode(self.mode, s.mode)
        if s.is_zero():
            return S0Series.zero(self.mode, self.n, self.rank, self.truncation_order)
        neg = min(HI0, s.order())
        K = self.K - neg  # raising K absorbs negative exponents of s
        trunc_candidates = []
        if self.truncation_order is not None:
            trunc_candidates.append(self.truncation_order + s.order())
        if s.truncation_order is not None:
            lead = min((j - self.K for j in self.coeffs), default=HI0)
            trunc_candidates.append(s.truncation_order + lead)
        trunc = min(trunc_candidates) if trunc_candidates else None
        coeffs: dict[HalfInt, FiberPoly] = {}
        for j, p in self.coeffs.items():
            for e, c in s.items():
                jj = j + e - neg
                if trunc is not None and jj - K > trunc:
                    continue
                add = p.scale(c)
                coeffs[jj] = coeffs.get(jj, FiberPoly.zero(self.mode, self.n, self.rank)) + add
        return S0Series(self.mode, self.n, self.rank, K, coeffs, trunc)

    def truncate(self, truncation_order: HalfInt | None) -> "S0Series":
        return S0Series(self.mode, self.n, self.rank, self.K, self.coeffs,
                        _min_trunc(self.truncation_order, truncation_order), validate=False)

    def max_abs_coeff(self, through: HalfInt | None = None) -> float:
        worst = 0.0
        for j, p in self.items():
            if through is not None and j - self.K > through:
                continue
            for comp in p.components:
                for c in comp.terms.values():
                    worst = max(worst, float(self.mode.abs(c)))
        return worst

    def __eq__(self, other) -> bool:
        if not isinstance(other, S0Series):
            return NotImplemented
        K = max(self.K, other.K)
        return self.with_K(K).coeffs == other.with_K(K).coeffs

    def __repr__(self) -> str:
        bits = [f"h^{j - self.K}:{p!r}" for j, p in self.items()]
        return "S0Series(" + ", ".join(bits) + f"; K={self.K})"


# ---------------------------------------------------------------------------
# Taylor jets in x with half-integer series orders


class XJetSeries:
    """Series sum_k h^(k-K) a_k(x) with a_k truncated x-jets.

    Three truncation bounds describe what is exact (None = complete):

    * ``hbar_truncation``: absolute series exponents <= this are complete,
    * ``degree_truncation``: monomials of degree <= this are complete,
    * ``joint_truncation``: the pair (absolute exponent s, degree d) is
      complete only when s + d/2 <= this. This is the bound the inverse
      rescaling actually provides.
    """

    __slots__ = ("mode", "n", "rank", "K", "coeffs", "hbar_truncation",
                 "degree_truncation", "joint_truncation")

    def __init__(self, mode, n: int, rank: int, K: HalfInt,
                 coeffs: Mapping[HalfInt, FiberPoly],
                 hbar_truncation: HalfInt | None,
                 degree_truncation: int | None,
                 joint_truncation: HalfInt | None = None):
        if K < HI0:
            raise ValueError("K must be nonnegative")
        self.mode = mode
        self.n = n
        self.rank = rank
        self.K = K
        clean = {}
        for k, p in coeffs.items():
            if k < HI0:
                raise ValueError("coefficient indices must be nonnegative")
            if degree_truncation is not None:
                p = p.truncate_degree(degree_truncation)
            if hbar_truncation is not None and k - K > hbar_truncation:
                continue
            if not p.is_zero():
                clean[k] = p
        self.coeffs = clean
        self.hbar_truncation = hbar_truncation
        self.degree_truncation = degree_truncation
        self.joint_truncation = joint_truncation

    def items(self) -> Iterator[tuple[HalfInt, FiberPoly]]:
        for k in sorted(self.coeffs, key=lambda h: h.doubled):
            yield k, self.coeffs[k]

    def at_relative(self, k: HalfInt) -> FiberPoly:
        return self.coeffs.get(k, FiberPoly.zero(self.mode, self.n, self.rank))

    def at_absolute(self, s) -> FiberPoly:
        return self.at_relative(HalfInt.of(s) + self.K)

    def is_zero(self) -> bool:
        return not self.coeffs

    def known(self, s: HalfInt, d: int) -> bool:
        """Whether the coefficient at absolute exponent s and degree d is exact."""
        if self.hbar_truncation is not None and s > self.hbar_truncation:
            return False
        if self.degree_truncation is not None and d > self.degree_truncation:
            return False
        if self.joint_truncation is not None and (s + HalfInt(d)) > self.joint_truncation:
            return False
        return True

    def degree_bound_at(self, s) -> int | None:
        """Largest degree known-exact at absolute exponent s (None = all)."""
        s = HalfInt.of(s)
        if self.hbar_truncation is not None and s > self.hbar_truncation:
            return -1
        bounds = []
        if self.degree_truncation is not None:
            bounds.append(self.degree_truncation)
        if self.joint_truncation is not None:
            bounds.append((self.joint_truncation - s).doubled)
        return min(bounds) if bounds else None

    def __eq__(self, other) -> bool:
        if not isinstance(other, XJetSeries):
            return NotImplemented
        if (self.n, self.rank) != (other.n, other.rank):
            return False
        K = max(self.K, other.K)
        d = K - self.K
        do = K - other.K
        return {k + d: p for k, p in self.coeffs.items()} == {k + do: p for k, p in other.coeffs.items()}

    def __repr__(self) -> str:
        bits = [f"h^{k - self.K}:{p!r}" for k, p in self.items()]
        return "XJetSeries(" + ", ".join(bits) + f"; K={self.K})"


def rescale(u: XJetSeries) -> S0Series:
    """Substitute x = sqrt(h) * y: the x-monomial x^alpha at exponent s moves
    to exponent s + |alpha|/2 with polynomial y^alpha.

    The output order-t coefficient collects finitely many input terms; it is
    exact through the largest t for which every contributing (s, d) pair was
    inside u's truncation bounds.
    """
    mode, n, rank = u.mode, u.n, u.rank
    out: dict[HalfInt, dict[Monomial, list]] = {}
    for k, p in u.items():
        for ci, comp in enumerate(p.components):
            for alpha, c in comp.terms.items():
                j = k + HalfInt(mono_degree(alpha))  # k + |alpha|/2 in relative index
                slot = out.setdefault(j, {})
                col = slot.setdefault(alpha, [mode.zero()] * rank)
                col[ci] = col[ci] + c
    coeffs: dict[HalfInt, FiberPoly] = {}
    for j, slot in out.items():
        comps = []
        for ci in range(rank):
            terms = {a: cols[ci] for a, cols in slot.items() if not mode.is_zero(cols[ci])}
            comps.append(Poly(mode, n, terms, _clean=True))
        coeffs[j] = FiberPoly(comps)
    # Output exactness at absolute order t: contributions come from input
    # pairs (s, d) with s + d/2 = t, d >= 0, s >= -K. The joint bound turns
    # directly into t <= J; the rectangular order bound binds at d = 0
    # (t <= T_h); degrees beyond D first pollute t = (D+1)/2 - K.
    cands = []
    if u.hbar_truncation is not None:
        cands.append(u.hbar_truncation)
    if u.joint_truncation is not None:
        cands.append(u.joint_truncation)
    if u.degree_truncation is not None:
        cands.append(HalfInt(u.degree_truncation - u.K.doubled))
    trunc = min(cands) if cands else None
    return S0Series(mode, n, rank, u.K, coeffs, trunc)


def unrescale(v: S0Series) -> XJetSeries:
    """Inverse substitution y = x / sqrt(h): exact on the power-counted space.

    The y-monomial y^alpha at relative index j returns to x^alpha at relative
    index j - |alpha|/2, which the degree bound keeps nonnegative.
    """
    mode, n, rank = v.mode, v.n, v.rank
    out: dict[HalfInt, dict[int, dict[Monomial, object]]] = {}
    max_deg = 0
    for j, p in v.items():
        for ci, comp in enumerate(p.components):
            for alpha, c in comp.terms.items():
                d = mono_degree(alpha)
                max_deg = max(max_deg, d)
                k = j - HalfInt(d)
                if k < HI0:
                    raise S0DegreeError("input violates the degree bound; not in the rescaled space")
                out.setdefault(k, {}).setdefault(ci, {})[alpha] = c
    coeffs = {}
    for k, slots in out.items():
        comps = [Poly(mode, n, slots.get(ci, {}), _clean=True) for ci in range(rank)]
        coeffs[k] = FiberPoly(comps)
    T = v.truncation_order
    if T is None:
        return XJetSeries(mode, n, rank, v.K, coeffs,
                          hbar_truncation=None, degree_truncation=None,
                          joint_truncation=None)
    # degree d at absolute exponent s came from order s + d/2 <= T
    D = max((T + v.K).doubled, max_deg)
    return XJetSeries(mode, n, rank, v.K, coeffs,
                      hbar_truncation=T, degree_truncation=D,
                      joint_truncation=T)
