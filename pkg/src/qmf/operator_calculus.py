"""Operator-jet calculus: problem data, the eikonal phase, conjugation, grading.

The chain implemented here goes

    JetProblem  --solve_eikonal-->  phase jet phi
                --conjugate_hamiltonian-->  x-side operator pieces
                --rescale_operator-->  graded family {Q_j}

``DiffOpJet`` is the workhorse: a differential operator with endomorphism-
valued polynomial coefficients, supporting exact composition (Leibniz) and a
formal conjugation by the exponential phase weight, implemented as the
substitution d_i -> d_i - phi_i / h. The conjugated Hamiltonian's order-h^0
part must cancel identically (that is the eikonal equation); the h^2 and h^1
parts are split into graded homogeneous pieces and re-read as polynomial-
coefficient operators in the rescaled variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Mapping, Sequence

from .series_algebra import (
    FiberPoly,
    HI0,
    HalfInt,
    Poly,
    _same_mode,
    half_range,
    mono_add,
    mono_degree,
)

__all__ = [
    "PolyMat",
    "ScalarJet",
    "JetProblem",
    "DiffOpJet",
    "GradedDiffOp",
    "ConjugatedOperator",
    "OperatorFamily",
    "solve_eikonal",
    "conjugate_hamiltonian",
    "rescale_operator",
    "apply_diffop",
    "metric_density_jet",
    "EikonalError",
    "ProblemValidationError",
]


class ProblemValidationError(ValueError):
    """Input jets violate a structural requirement of the setup."""


class EikonalError(ValueError):
    """The phase jet does not (or cannot) satisfy the eikonal equation."""


# ---------------------------------------------------------------------------
# Small matrices of polynomials

PolyMat = tuple  # tuple[tuple[Poly, ...], ...]


def pm_zero(mode, n: int, size: int) -> PolyMat:
    z = Poly.zero(mode, n)
    return tuple(tuple(z for _ in range(size)) for _ in range(size))


def pm_identity(mode, n: int, size: int) -> PolyMat:
    one = Poly.const(mode, n, 1)
    z = Poly.zero(mode, n)
    return tuple(tuple(one if i == j else z for j in range(size)) for i in range(size))


def pm_scalar(p: Poly, size: int) -> PolyMat:
    z = Poly.zero(p.mode, p.n)
    return tuple(tuple(p if i == j else z for j in range(size)) for i in range(size))


def pm_add(a: PolyMat, b: PolyMat) -> PolyMat:
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def pm_neg(a: PolyMat) -> PolyMat:
    return tuple(tuple(-x for x in ra) for ra in a)


def pm_mul(a: PolyMat, b: PolyMat) -> PolyMat:
    size = len(a)
    out = []
    for i in range(size):
        row = []
        for j in range(size):
            acc = Poly.zero(a[0][0].mode, a[0][0].n)
            for k in range(size):
                if not a[i][k].is_zero() and not b[k][j].is_zero():
                    acc = acc + a[i][k] * b[k][j]
            row.append(acc)
        out.append(tuple(row))
    return tuple(out)


def pm_diff(a: PolyMat, i: int) -> PolyMat:
    return tuple(tuple(x.diff(i) for x in ra) for ra in a)


def pm_truncate(a: PolyMat, d: int) -> PolyMat:
    return tuple(tuple(x.truncate_degree(d) for x in ra) for ra in a)


def pm_is_zero(a: PolyMat) -> bool:
    return all(x.is_zero() for ra in a for x in ra)


def pm_conj_transpose(a: PolyMat) -> PolyMat:
    size = len(a)
    return tuple(tuple(a[j][i].conj() for j in range(size)) for i in range(size))


def pm_is_hermitian(a: PolyMat) -> bool:
    return pm_is_zero(pm_add(a, pm_neg(pm_conj_transpose(a))))


def pm_min_degree(a: PolyMat):
    return min(x.min_degree() for ra in a for x in ra)


def pm_apply_vec(a: PolyMat, v: FiberPoly) -> FiberPoly:
    size = len(a)
    comps = []
    for i in range(size):
        acc = Poly.zero(v.mode, v.n)
        for j in range(size):
            if not a[i][j].is_zero() and not v.components[j].is_zero():
                acc = acc + a[i][j] * v.components[j]
        comps.append(acc)
    return FiberPoly(comps)


def pm_inverse_jet(a: PolyMat, through: int) -> PolyMat:
    """Inverse of a = I + E with E of positive minimal degree, as a jet."""
    size = len(a)
    mode = a[0][0].mode
    n = a[0][0].n
    ident = pm_identity(mode, n, size)
    e = pm_add(a, pm_neg(ident))
    if not all(x.is_zero() or x.min_degree() >= 1 for ra in e for x in ra):
        raise ValueError("matrix jet must be identity plus higher-degree terms")
    out = ident
    power = ident
    while True:
        power = pm_truncate(pm_mul(power, pm_neg(e)), through)
        if pm_is_zero(power):
            break
        out = pm_add(out, power)
    return pm_truncate(out, through)


def poly_det(a: PolyMat, through: int | None = None) -> Poly:
    """Determinant by cofactor expansion (matrices here are tiny)."""
    size = len(a)
    if size == 1:
        d = a[0][0]
    elif size == 2:
        d = a[0][0] * a[1][1] - a[0][1] * a[1][0]
    else:
        d = Poly.zero(a[0][0].mode, a[0][0].n)
        for j in range(size):
            minor = tuple(tuple(row[c] for c in range(size) if c != j) for row in a[1:])
            term = a[0][j] * poly_det(minor)
            d = d + (term if j % 2 == 0 else -term)
    return d if through is None else d.truncate_degree(through)


def poly_sqrt_jet(p: Poly, through: int) -> Poly:
    """(1 + u)^(1/2) for p = 1 + u with u of positive minimal degree."""
    return _poly_binomial(p, Fraction(1, 2), through)


def poly_inv_sqrt_jet(p: Poly, through: int) -> Poly:
    return _poly_binomial(p, Fraction(-1, 2), through)


def _poly_binomial(p: Poly, expo: Fraction, through: int) -> Poly:
    mode = p.mode
    one = Poly.const(mode, p.n, 1)
    u = (p - one).truncate_degree(through)
    if not u.is_zero() and u.min_degree() < 1:
        raise ValueError("jet must be 1 plus higher-degree terms")
    out = one
    term = one
    coeff = Fraction(1)
    k = 1
    while not term.is_zero() and k <= through:
        coeff = coeff * (expo - (k - 1)) / k
        term = (term * u).truncate_degree(through)
        out = out + term.scale(mode.coeff(coeff))
        k += 1
    return out


# ---------------------------------------------------------------------------
# Scalar jets


@dataclass(frozen=True)
class ScalarJet:
    """Scalar Taylor jet: a polynomial exact through ``complete`` total degree."""

    poly: Poly
    complete: int

    def homogeneous(self, d: int) -> Poly:
        return self.poly.homogeneous_component(d)


def _completeness_min(*vals):
    out = None
    for v in vals:
        if v is None:
            continue
        out = v if out is None else min(out, v)
    return out


# ---------------------------------------------------------------------------
# Problem data


@dataclass
class JetProblem:
    """Truncated Taylor data of the operator at the potential minimum.

    All jets are given in geodesic normal coordinates and the radial parallel
    frame: the inverse metric starts at the identity with no linear term, the
    potential starts at sum_nu lambda_nu^2 x_nu^2, the fiber metric is the
    identity at the base point, and the connection coefficients are
    skew-hermitian. ``D`` is the degree through which the inputs are treated
    as complete (the potential through D + 2).

    The second-order operator defaults to the Bochner form built from the
    metric and connection jets; ``raw_b`` / ``raw_c`` switch to raw
    first/zeroth order coefficient jets instead.
    """

    mode: object
    n: int
    rank: int
    D: int
    lam: tuple
    V: Poly
    g_inv: PolyMat
    W: PolyMat
    Gamma: tuple
    gamma: PolyMat | None = None
    raw_b: tuple | None = None
    raw_c: PolyMat | None = None
    mu: tuple = ()

    @staticmethod
    def create(mode, n, rank, D, lam, V=None, g_inv=None, W=None, Gamma=None,
               gamma=None, raw_b=None, raw_c=None) -> "JetProblem":
        lam = tuple(mode.coeff(l) if isinstance(l, (int, Fraction, str)) else l for l in lam)
        if V is None:
            V = Poly.zero(mode, n)
        if not any(mono_degree(a) == 2 for a in V.terms):
            for nu in range(n):
                alpha = [0] * n
                alpha[nu] = 2
                V = V + Poly.monomial(mode, n, tuple(alpha), lam[nu] * lam[nu])
        if g_inv is None:
            g_inv = pm_identity(mode, n, n)
        if W is None:
            W = pm_zero(mode, n, rank)
        if Gamma is None:
            Gamma = tuple(pm_zero(mode, n, rank) for _ in range(n))
        p = JetProblem(mode, n, rank, D, lam, V, g_inv, W, tuple(Gamma),
                       gamma, raw_b, raw_c)
        p.validate()
        return p

    def validate(self) -> None:
        mode = self.mode
        if self.n < 1 or self.rank < 1:
            raise ProblemValidationError("dimension and rank must be positive")
        if len(self.lam) != self.n:
            raise ProblemValidationError("need one frequency per dimension")
        for l in self.lam:
            if mode.to_float(l) <= 0:
                raise ProblemValidationError("degenerate minimum: every frequency must be positive")
        for alpha, c in self.V.terms.items():
            d = mono_degree(alpha)
            if d < 2:
                raise ProblemValidationError("potential must vanish to second order at the minimum")
            if d == 2:
                nz = [i for i, e in enumerate(alpha) if e]
                if len(nz) != 1:
                    raise ProblemValidationError(
                        "coordinates not normalized: quadratic cross term in the potential")
                nu = nz[0]
                if not mode.is_zero(c - self.lam[nu] * self.lam[nu]):
                    raise ProblemValidationError(
                        "coordinates not normalized: quadratic part must be sum lambda_nu^2 x_nu^2")
        for nu in range(self.n):
            alpha = [0] * self.n
            alpha[nu] = 2
            if mode.is_zero(self.V.coefficient(tuple(alpha))):
                raise ProblemValidationError("coordinates not normalized: missing quadratic term")
        z = (0,) * self.n
        for i in range(self.n):
            for j in range(self.n):
                e = self.g_inv[i][j]
                want = mode.one() if i == j else mode.zero()
                if not mode.is_zero(e.coefficient(z) - want):
                    raise ProblemValidationError("inverse metric must be the identity at the base point")
                for alpha, c in e.terms.items():
                    if mono_degree(alpha) == 1:
                        raise ProblemValidationError(
                            "inverse metric must have no linear term (normal coordinates)")
                if not (e - self.g_inv[j][i]).is_zero():
                    raise ProblemValidationError("inverse metric must be symmetric")
        if not pm_is_hermitian(self.W):
            raise ProblemValidationError("endomorphism field must be hermitian")
        for G in self.Gamma:
            if not pm_is_zero(pm_add(G, pm_conj_transpose(G))):
                raise ProblemValidationError("connection coefficients must be skew-hermitian")
        if self.gamma is not None:
            if not pm_is_hermitian(self.gamma):
                raise ProblemValidationError("fiber metric jet must be hermitian")
            for i in range(self.rank):
                for j in range(self.rank):
                    want = mode.one() if i == j else mode.zero()
                    if not mode.is_zero(self.gamma[i][j].coefficient(z) - want):
                        raise ProblemValidationError("fiber metric must be the identity at the base point")
        w0 = [[self.W[i][j].coefficient(z) for j in range(self.rank)] for i in range(self.rank)]
        off = any(not mode.is_zero(w0[i][j])
                  for i in range(self.rank) for j in range(self.rank) if i != j)
        if off:
            if mode.name == "exact":
                raise ProblemValidationError(
                    "endomorphism value at the minimum must be diagonal in exact mode")
            self._diagonalize_fiber()
            w0 = [[self.W[i][j].coefficient(z) for j in range(self.rank)]
                  for i in range(self.rank)]
        mu = tuple(w0[i][i] for i in range(self.rank))
        for m in mu:
            if not mode.is_real(m):
                raise ProblemValidationError("endomorphism eigenvalues must be real")
        self.mu = mu

    def _diagonalize_fiber(self) -> None:
        import numpy as np

        z = (0,) * self.n
        w0 = np.array([[self.W[i][j].coefficient(z) for j in range(self.rank)]
                       for i in range(self.rank)], dtype=complex)
        _, u = np.linalg.eigh(w0)

        def rotate(m: PolyMat) -> PolyMat:
            out = []
            for i in range(self.rank):
                row = []
                for j in range(self.rank):
                    acc = Poly.zero(self.mode, self.n)
                    for a in range(self.rank):
                        for b in range(self.rank):
                            coef = complex(np.conj(u[a, i]) * u[b, j])
                            acc = acc + m[a][b].scale(coef)
                    row.append(acc)
                out.append(tuple(row))
            return tuple(out)

        self.W = rotate(self.W)
        self.Gamma = tuple(rotate(G) for G in self.Gamma)
        if self.gamma is not None:
            self.gamma = rotate(self.gamma)
        if self.raw_b is not None:
            self.raw_b = tuple(rotate(B) for B in self.raw_b)
        if self.raw_c is not None:
            self.raw_c = rotate(self.raw_c)

    def metric_is_flat(self) -> bool:
        ident = pm_identity(self.mode, self.n, self.n)
        return pm_is_zero(pm_add(self.g_inv, pm_neg(ident)))

    def has_connection(self) -> bool:
        return any(not pm_is_zero(G) for G in self.Gamma)


# ---------------------------------------------------------------------------
# Differential operator jets


class DiffOpJet:
    """Operator sum_beta C_beta(x) d^beta with endomorphism polynomial coefficients.

    ``complete`` bounds the graded degree through which the operator's
    homogeneous pieces are exact (None = exact at all degrees); composition
    tracks it with the convolution rule min(cA + ord B, cB + ord A).
    """

    __slots__ = ("mode", "n", "rank", "terms", "complete")

    def __init__(self, mode, n: int, rank: int, terms: Mapping[tuple, PolyMat],
                 complete: int | None = None):
        self.mode = mode
        self.n = n
        self.rank = rank
        self.terms = {b: m for b, m in terms.items() if not pm_is_zero(m)}
        self.complete = complete

    @staticmethod
    def zero(mode, n, rank, complete=None) -> "DiffOpJet":
        return DiffOpJet(mode, n, rank, {}, complete)

    @staticmethod
    def identity(mode, n, rank) -> "DiffOpJet":
        return DiffOpJet(mode, n, rank, {(0,) * n: pm_identity(mode, n, rank)})

    @staticmethod
    def multiplication(m: PolyMat, complete: int | None = None) -> "DiffOpJet":
        p = m[0][0]
        return DiffOpJet(p.mode, p.n, len(m), {(0,) * p.n: m}, complete)

    @staticmethod
    def scalar_multiplication(p: Poly, rank: int, complete: int | None = None) -> "DiffOpJet":
        return DiffOpJet.multiplication(pm_scalar(p, rank), complete)

    @staticmethod
    def derivative(mode, n, rank, i: int) -> "DiffOpJet":
        beta = [0] * n
        beta[i] = 1
        return DiffOpJet(mode, n, rank, {tuple(beta): pm_identity(mode, n, rank)})

    def min_degree(self):
        """Smallest graded degree present (coefficient degree minus |beta|)."""
        degs = [pm_min_degree(m) - mono_degree(b) for b, m in self.terms.items()
                if pm_min_degree(m) != float("inf")]
        return min(degs) if degs else float("inf")

    def is_zero(self) -> bool:
        return not self.terms

    def __add__(self, other: "DiffOpJet") -> "DiffOpJet":
        _same_mode(self.mode, other.mode)
        terms = dict(self.terms)
        for b, m in other.terms.items():
            terms[b] = pm_add(terms[b], m) if b in terms else m
        return DiffOpJet(self.mode, self.n, self.rank, terms,
                         _completeness_min(self.complete, other.complete))

    def __neg__(self) -> "DiffOpJet":
        return DiffOpJet(self.mode, self.n, self.rank,
                         {b: pm_neg(m) for b, m in self.terms.items()}, self.complete)

    def __sub__(self, other: "DiffOpJet") -> "DiffOpJet":
        return self + (-other)

    def scale(self, c) -> "DiffOpJet":
        return DiffOpJet(self.mode, self.n, self.rank,
                         {b: tuple(tuple(x.scale(c) for x in row) for row in m)
                          for b, m in self.terms.items()}, self.complete)

    def compose(self, other: "DiffOpJet") -> "DiffOpJet":
        """Operator product self . other, exact Leibniz expansion."""
        _same_mode(self.mode, other.mode)
        terms: dict[tuple, PolyMat] = {}
        for beta, m in self.terms.items():
            for gamma_, nmat in other.terms.items():
                for sigma in _sub_multi_indices(beta):
                    coef = 1
                    for bi, si in zip(beta, sigma):
                        coef *= comb(bi, si)
                    d = nmat
                    for i, si in enumerate(sigma):
                        for _ in range(si):
                            d = pm_diff(d, i)
                    if pm_is_zero(d):
                        continue
                    prod = pm_mul(m, d)
                    if coef != 1:
                        prod = tuple(tuple(x.scale(coef) for x in row) for row in prod)
                    key = mono_add(tuple(b - s for b, s in zip(beta, sigma)), gamma_)
                    terms[key] = pm_add(terms[key], prod) if key in terms else prod
        ca, cb = self.complete, other.complete
        mina, minb = self.min_degree(), other.min_degree()
        comp = None
        if ca is not None:
            comp = ca + (0 if minb in (float("inf"), float("-inf")) else int(minb))
        if cb is not None:
            c2 = cb + (0 if mina in (float("inf"), float("-inf")) else int(mina))
            comp = c2 if comp is None else min(comp, c2)
        return DiffOpJet(self.mode, self.n, self.rank, terms, comp)

    def apply(self, q: FiberPoly) -> FiberPoly:
        if q.rank != self.rank:
            raise ValueError("rank mismatch")
        out = FiberPoly.zero(self.mode, self.n, self.rank)
        for beta, m in self.terms.items():
            dq = q
            for i, bi in enumerate(beta):
                for _ in range(bi):
                    dq = FiberPoly([c.diff(i) for c in dq.components])
            if dq.is_zero():
                continue
            out = out + pm_apply_vec(m, dq)
        return out

    def graded_pieces(self) -> dict[int, "GradedDiffOp"]:
        """Split into homogeneous pieces keyed by degree |alpha| - |beta|."""
        buckets: dict[int, dict] = {}
        for beta, m in self.terms.items():
            ob = mono_degree(beta)
            entry_terms: dict[tuple, list] = {}
            for i in range(self.rank):
                for j in range(self.rank):
                    for alpha, c in m[i][j].terms.items():
                        entry_terms.setdefault(alpha, []).append((i, j, c))
            for alpha, entries in entry_terms.items():
                d = mono_degree(alpha) - ob
                mat = [[self.mode.zero()] * self.rank for _ in range(self.rank)]
                for i, j, c in entries:
                    mat[i][j] = c
                buckets.setdefault(d, {})[(alpha, beta)] = tuple(tuple(r) for r in mat)
        out = {}
        for d, tmap in sorted(buckets.items()):
            terms = [(mat, alpha, beta) for (alpha, beta), mat in sorted(tmap.items())]
            out[d] = GradedDiffOp(self.mode, self.n, self.rank, terms)
        return out

    def __repr__(self) -> str:
        return f"DiffOpJet({len(self.terms)} derivative orders, complete={self.complete})"


def _sub_multi_indices(beta: tuple):
    if not beta:
        yield ()
        return
    for rest in _sub_multi_indices(beta[1:]):
        for s in range(beta[0] + 1):
            yield (s,) + rest


class GradedDiffOp:
    """Finite sum of terms P x^alpha d^beta with constant endomorphism matrices.

    Each term carries the degree |alpha| - |beta|: applied to a homogeneous
    polynomial of degree d it produces degree d + (term degree).
    """

    __slots__ = ("mode", "n", "rank", "terms")

    def __init__(self, mode, n: int, rank: int, terms: Sequence[tuple]):
        self.mode = mode
        self.n = n
        self.rank = rank
        self.terms = [(m, tuple(a), tuple(b)) for m, a, b in terms
                      if any(not mode.is_zero(c) for row in m for c in row)]

    @staticmethod
    def zero(mode, n, rank) -> "GradedDiffOp":
        return GradedDiffOp(mode, n, rank, [])

    def is_zero(self) -> bool:
        return not self.terms

    def degrees(self) -> set[int]:
        return {mono_degree(a) - mono_degree(b) for _, a, b in self.terms}

    def __add__(self, other: "GradedDiffOp") -> "GradedDiffOp":
        return GradedDiffOp(self.mode, self.n, self.rank,
                            list(self.terms) + list(other.terms))

    def scale(self, c) -> "GradedDiffOp":
        c = self.mode.coeff(c) if isinstance(c, (int, Fraction, str)) else c
        return GradedDiffOp(self.mode, self.n, self.rank,
                            [(tuple(tuple(x * c for x in row) for row in m), a, b)
                             for m, a, b in self.terms])

    def apply(self, q: FiberPoly) -> FiberPoly:
        if q.rank != self.rank:
            raise ValueError("rank mismatch")
        out = FiberPoly.zero(self.mode, self.n, self.rank)
        for m, alpha, beta in self.terms:
            dq = q
            for i, bi in enumerate(beta):
                for _ in range(bi):
                    dq = FiberPoly([c.diff(i) for c in dq.components])
            if dq.is_zero():
                continue
            shifted = FiberPoly([
                Poly(self.mode, self.n,
                     {mono_add(a, alpha): c for a, c in comp.terms.items()}, _clean=True)
                for comp in dq.components])
            out = out + shifted.apply_matrix(m)
        return out

    def __repr__(self) -> str:
        return f"GradedDiffOp({len(self.terms)} terms, degrees={sorted(self.degrees())})"


def apply_diffop(op: GradedDiffOp, q: FiberPoly) -> FiberPoly:
    """Exact application of a graded operator to a fiber polynomial."""
    return op.apply(q)


# ---------------------------------------------------------------------------
# Eikonal equation


def solve_eikonal(problem: JetProblem) -> ScalarJet:
    """Phase jet phi with |grad phi|^2 = V through degree D + 2.

    phi starts at (1/2) sum_nu lambda_nu x_nu^2; at each degree d >= 3 the
    unknown homogeneous part enters through the radial drift operator
    sum_nu 2 lambda_nu x_nu d_nu, which multiplies a monomial x^alpha by
    2 <lambda, alpha> > 0 and is therefore uniquely invertible.
    """
    mode, n = problem.mode, problem.n
    through = problem.D + 2
    phi = Poly.zero(mode, n)
    half = mode.coeff(Fraction(1, 2))
    for nu in range(n):
        alpha = [0] * n
        alpha[nu] = 2
        phi = phi + Poly.monomial(mode, n, tuple(alpha), problem.lam[nu] * half)

    def residual(through_deg: int) -> Poly:
        grad = [phi.diff(i) for i in range(n)]
        acc = Poly.zero(mode, n)
        for i in range(n):
            for j in range(n):
                gij = problem.g_inv[i][j]
                if gij.is_zero():
                    continue
                acc = acc + (gij * grad[i] * grad[j]).truncate_degree(through_deg)
        return (acc - problem.V).truncate_degree(through_deg)

    if not residual(2).is_zero():
        raise EikonalError("quadratic parts inconsistent: check frequencies against the potential")

    for d in range(3, through + 1):
        r = residual(d).homogeneous_component(d)
        if r.is_zero():
            continue
        terms = {}
        for alpha, c in r.terms.items():
            denom = mode.zero()
            for nu, a_nu in enumerate(alpha):
                denom = denom + problem.lam[nu] * (2 * a_nu)
            terms[alpha] = -c / denom
        phi = phi + Poly(mode, n, terms)

    final = residual(through)
    if not final.is_zero():
        # float mode: the recursion cancels exactly in infinite precision, so
        # any leftover is rounding; judge it relative to the data scale
        worst = max(float(mode.abs(c)) for c in final.terms.values())
        scale = max([1.0] + [float(mode.abs(c)) for c in problem.V.terms.values()])
        if mode.name == "exact" or worst > 1e-9 * scale:
            raise EikonalError("eikonal recursion failed to cancel the residual jet")
    return ScalarJet(phi, through)


# ---------------------------------------------------------------------------
# Metric density


def metric_density_jet(problem: JetProblem) -> Poly:
    """sqrt(det g_ij) as a jet through degree D, from the inverse-metric jet."""
    if problem.metric_is_flat():
        return Poly.const(problem.mode, problem.n, 1)
    g_lower = pm_inverse_jet(problem.g_inv, problem.D)
    det = poly_det(g_lower, problem.D)
    return poly_sqrt_jet(det, problem.D)


# ---------------------------------------------------------------------------
# Hamiltonian assembly and conjugation


def _laplace_type_operator(problem: JetProblem) -> DiffOpJet:
    """The second-order operator: Bochner form from (g, Gamma), or raw data."""
    mode, n, rank = problem.mode, problem.n, problem.rank
    if problem.raw_b is not None or problem.raw_c is not None:
        op = DiffOpJet.zero(mode, n, rank, complete=problem.D - 2)
        for i in range(n):
            for j in range(n):
                gij = problem.g_inv[i][j]
                if gij.is_zero():
                    continue
                beta = [0] * n
                beta[i] += 1
                beta[j] += 1
                op = op + DiffOpJet(mode, n, rank,
                                    {tuple(beta): pm_scalar(-gij, rank)},
                                    complete=problem.D - 2)
        if problem.raw_b is not None:
            for j in range(n):
                bj = problem.raw_b[j]
                if pm_is_zero(bj):
                    continue
                beta = [0] * n
                beta[j] = 1
                op = op + DiffOpJet(mode, n, rank, {tuple(beta): bj},
                                    complete=problem.D - 1)
        if problem.raw_c is not None:
            op = op + DiffOpJet.multiplication(problem.raw_c, complete=problem.D)
        return op

    flat = problem.metric_is_flat()
    gcomp = None if flat else problem.D
    G = metric_density_jet(problem)
    inv_G = (Poly.const(mode, n, 1) if flat
             else poly_inv_sqrt_jet(poly_det(pm_inverse_jet(problem.g_inv, problem.D),
                                             problem.D), problem.D))
    acc = DiffOpJet.zero(mode, n, rank)
    for i in range(n):
        nabla_i = DiffOpJet.derivative(mode, n, rank, i)
        if not pm_is_zero(problem.Gamma[i]):
            nabla_i = nabla_i + DiffOpJet.multiplication(problem.Gamma[i], complete=problem.D)
        inner = DiffOpJet.zero(mode, n, rank)
        for j in range(n):
            gij = problem.g_inv[i][j]
            if gij.is_zero():
                continue
            nabla_j = DiffOpJet.derivative(mode, n, rank, j)
            if not pm_is_zero(problem.Gamma[j]):
                nabla_j = nabla_j + DiffOpJet.multiplication(problem.Gamma[j], complete=problem.D)
            coeff = (G * gij).truncate_degree(problem.D) if not flat else gij
            inner = inner + DiffOpJet.scalar_multiplication(
                coeff, rank, complete=gcomp).compose(nabla_j)
        acc = acc + nabla_i.compose(inner)
    return DiffOpJet.scalar_multiplication(inv_G, rank, complete=gcomp).compose(acc).scale(-1)


@dataclass
class ConjugatedOperator:
    """x-side pieces of the conjugated Hamiltonian.

    ``hbar2`` is the second-order operator, ``hbar1`` the transport operator
    (drift along twice the phase gradient + endomorphism + divergence term).
    ``graded_*`` hold homogeneous pieces keyed by degree, exact through the
    corresponding ``*_complete`` bound (None = all degrees).
    """

    hbar2: DiffOpJet
    hbar1: DiffOpJet
    graded_hbar2: dict
    graded_hbar1: dict
    hbar2_complete: int | None
    hbar1_complete: int | None
    phi: ScalarJet


def conjugate_hamiltonian(problem: JetProblem, phi: ScalarJet) -> ConjugatedOperator:
    """Conjugate h^2 L + h W + V by the exponential weight of the phase.

    Implemented as the substitution d_i -> d_i - phi_i / h inside the
    second-order operator: the 1/h^0 coefficient is L itself, the 1/h
    coefficient joins W as the order-h transport operator, and the 1/h^2
    coefficient must cancel the potential exactly -- a nonzero residual means
    the phase does not solve the eikonal equation and raises.
    """
    mode, n, rank = problem.mode, problem.n, problem.rank
    L = _laplace_type_operator(problem)
    grad_phi = [phi.poly.diff(i).truncate_degree(phi.complete - 1) for i in range(n)]
    phi_complete = phi.complete - 1  # coefficient degree of the mult(phi_i) ops

    by_power: dict[int, DiffOpJet] = {}
    for beta, m in L.terms.items():
        factors: dict[int, DiffOpJet] = {0: DiffOpJet.identity(mode, n, rank)}
        for i, bi in enumerate(beta):
            for _ in range(bi):
                x_op = {
                    0: DiffOpJet.derivative(mode, n, rank, i),
                    1: DiffOpJet.scalar_multiplication(-grad_phi[i], rank,
                                                       complete=phi_complete),
                }
                new: dict[int, DiffOpJet] = {}
                for pa, opa in factors.items():
                    for pb, opb in x_op.items():
                        key = pa + pb
                        piece = opa.compose(opb)
                        new[key] = new[key] + piece if key in new else piece
                factors = new
        # the coefficient of d^beta holds graded degrees up to L.complete + |beta|
        head_complete = None if L.complete is None else L.complete + mono_degree(beta)
        head = DiffOpJet.multiplication(m, complete=head_complete)
        for power, op in factors.items():
            piece = head.compose(op)
            by_power[power] = by_power[power] + piece if power in by_power else piece

    hbar2 = by_power.get(0, DiffOpJet.zero(mode, n, rank))
    hbar1 = by_power.get(1, DiffOpJet.zero(mode, n, rank))
    hbar0 = by_power.get(2, DiffOpJet.zero(mode, n, rank))

    if not pm_is_zero(problem.W):
        hbar1 = hbar1 + DiffOpJet.multiplication(problem.W, complete=problem.D)

    residual = hbar0 + DiffOpJet.scalar_multiplication(problem.V, rank)
    check_through = residual.complete if residual.complete is not None else problem.D + 2
    res_tol = 0.0
    if mode.name != "exact":
        scale = max([1.0] + [float(mode.abs(c)) for c in problem.V.terms.values()])
        res_tol = 1e-9 * scale
    for beta, mat in residual.terms.items():
        if mono_degree(beta) != 0:
            raise EikonalError("conjugation produced derivative terms at order h^0")
        for row in mat:
            for entry in row:
                leftover = entry.truncate_degree(check_through)
                if leftover.is_zero():
                    continue
                worst = max(float(mode.abs(c)) for c in leftover.terms.values())
                if worst > res_tol:
                    raise EikonalError("eikonal residual nonzero: phase inconsistent with potential")

    return ConjugatedOperator(
        hbar2=hbar2,
        hbar1=hbar1,
        graded_hbar2=hbar2.graded_pieces(),
        graded_hbar1=hbar1.graded_pieces(),
        hbar2_complete=hbar2.complete,
        hbar1_complete=hbar1.complete,
        phi=phi,
    )


@dataclass
class OperatorFamily:
    """Rescaled graded family: Q = sum_j h^j Q_j on polynomials in the blown-up variable."""

    ops: dict
    max_order: HalfInt
    mode: object
    n: int
    rank: int

    def get(self, j: HalfInt) -> GradedDiffOp:
        return self.ops.get(j, GradedDiffOp.zero(self.mode, self.n, self.rank))

    def orders(self) -> list[HalfInt]:
        return sorted(self.ops, key=lambda h: h.doubled)

    def apply_series(self, u, out_trunc=None):
        """Apply the whole family to a power-counted series, tracking truncation."""
        from .series_algebra import S0Series

        cands = [self.max_order + min((j - u.K for j in u.coeffs), default=HI0)]
        if u.truncation_order is not None:
            cands.append(u.truncation_order)
        if out_trunc is not None:
            cands.append(HalfInt.of(out_trunc))
        trunc = min(cands)
        coeffs: dict[HalfInt, FiberPoly] = {}
        for j_op in self.orders():
            op = self.ops[j_op]
            for j_u, p in u.coeffs.items():
                target = j_u + j_op
                if target - u.K > trunc:
                    continue
                res = op.apply(p)
                if res.is_zero():
                    continue
                coeffs[target] = coeffs.get(
                    target, FiberPoly.zero(self.mode, self.n, self.rank)) + res
        return S0Series(self.mode, self.n, self.rank, u.K, coeffs, trunc)


def rescale_operator(conj: ConjugatedOperator) -> OperatorFamily:
    """Read the graded x-side pieces as operators in the rescaled variable.

    A homogeneous piece of degree k conjugates through the substitution to
    the same coefficients at half-order k/2, so Q_j is the degree-(2j-2)
    piece of the second-order operator plus the degree-2j piece of the
    transport operator. Only orders with both ingredients exact are kept.
    """
    mode = conj.hbar2.mode
    n, rank = conj.hbar2.n, conj.hbar2.rank
    c2, c1 = conj.hbar2_complete, conj.hbar1_complete
    cands = []
    if c2 is not None:
        cands.append(HalfInt(c2 + 2))
    if c1 is not None:
        cands.append(HalfInt(c1))
    if cands:
        max_order = min(cands)
    else:
        top = max([d + 2 for d in conj.graded_hbar2] + [d for d in conj.graded_hbar1] + [0])
        max_order = HalfInt(top)
    ops: dict[HalfInt, GradedDiffOp] = {}
    for j in half_range(HI0, max_order):
        piece = GradedDiffOp.zero(mode, n, rank)
        if j.doubled - 2 in conj.graded_hbar2:
            piece = piece + conj.graded_hbar2[j.doubled - 2]
        if j.doubled in conj.graded_hbar1:
            piece = piece + conj.graded_hbar1[j.doubled]
        if not piece.is_zero():
            ops[j] = piece
    return OperatorFamily(ops=ops, max_order=max_order, mode=mode, n=n, rank=rank)
