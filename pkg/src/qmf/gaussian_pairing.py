"""The inner product on the power-counted space as finite Gaussian moments.

After the substitution x = sqrt(h) y, the weighted integral of two elements
against exp(-2*phase/h) times the metric density becomes, order by order,

    coefficient of h^t  =  sum over j + l + r + m = t + K1 + K2 of
        integral( gamma_r[u_j, v_l](y) * omega_m(y) * exp(-<y, Lambda y>) dy )

where the omega_m collect the non-quadratic phase terms and the metric
density, and gamma_r are the homogeneous fiber-metric jets. All moments are
normalized by the common Gaussian factor prod sqrt(pi / lambda_nu), which
keeps every coefficient in the base field and makes the conventionally
normalized oscillator eigenfunctions exactly orthonormal at leading order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .series_algebra import (
    FiberPoly,
    FormalScalarSeries,
    HI0,
    HalfInt,
    Poly,
    S0Series,
    mono_degree,
)
from .operator_calculus import (
    JetProblem,
    PolyMat,
    ScalarJet,
    metric_density_jet,
    pm_identity,
    pm_is_hermitian,
)

__all__ = [
    "WeightExpansion",
    "GammaJet",
    "weight_expansion",
    "gaussian_moment",
    "moment_of_poly",
    "pair_s0",
    "pair_fiber_polys",
]


# ---------------------------------------------------------------------------
# Moment primitives

_MOMENT_CACHE: dict = {}


def _half_factorial_part(k: int, lam) -> object:
    """integral y^k exp(-lam y^2) dy divided by sqrt(pi/lam): (k-1)!! / (2 lam)^(k/2)."""
    if k % 2 == 1:
        return None
    num = 1
    for i in range(k - 1, 0, -2):
        num *= i
    denom = (lam + lam) ** (k // 2)
    return num / denom


def gaussian_moment(alpha: tuple, lam: tuple, mode) -> object:
    """Normalized Gaussian moment of y^alpha for the diagonal quadratic weight.

    Returns integral(y^alpha exp(-<y, Lambda y>) dy) / prod(sqrt(pi/lambda)):
    the product over nu of (alpha_nu - 1)!! / (2 lambda_nu)^(alpha_nu / 2)
    for even multi-indices, zero otherwise. The irrational common factor is
    never materialized.
    """
    key = (tuple(alpha), tuple(lam), mode.name)
    hit = _MOMENT_CACHE.get(key)
    if hit is not None:
        return hit
    out = mode.one()
    for a, l in zip(alpha, lam):
        part = _half_factorial_part(a, l)
        if part is None:
            out = mode.zero()
            break
        out = out * part
    _MOMENT_CACHE[key] = out
    return out


def moment_of_poly(p: Poly, lam: tuple) -> object:
    """Normalized Gaussian integral of a scalar polynomial."""
    total = p.mode.zero()
    for alpha, c in p.terms.items():
        m = gaussian_moment(alpha, lam, p.mode)
        if not p.mode.is_zero(m):
            total = total + c * m
    return total


# ---------------------------------------------------------------------------
# Weight expansion


@dataclass(frozen=True)
class WeightExpansion:
    """Polynomials omega_m with exp(-2*higher phase) * density = sum h^m omega_m.

    omega_0 = 1; omega_m has parity (-1)^(2m) and collects products of the
    homogeneous phase parts (degree k + 2 at half-order k/2) with the metric
    density jets. ``complete`` bounds the orders that are exact.
    """

    mode: object
    lam: tuple
    omega: Mapping  # HalfInt -> Poly
    complete: HalfInt

    def at(self, m: HalfInt) -> Poly:
        n = len(self.lam)
        return self.omega.get(m, Poly.zero(self.mode, n))

    def orders(self):
        return sorted(self.omega, key=lambda h: h.doubled)


def _graded_mul(a: dict, b: dict, mode, n: int, through: HalfInt) -> dict:
    out: dict[HalfInt, Poly] = {}
    for ka, pa in a.items():
        for kb, pb in b.items():
            k = ka + kb
            if k > through:
                continue
            prod = pa * pb
            out[k] = out.get(k, Poly.zero(mode, n)) + prod
    return {k: p for k, p in out.items() if not p.is_zero()}


def weight_expansion(phi: ScalarJet, problem: JetProblem, through) -> WeightExpansion:
    """Expand the non-Gaussian weight factors in half powers.

    The phase jet contributes exp(-2 sum_k h^(k/2) phi_{k+2}(y)) via the
    truncated exponential series; the metric density jet G contributes its
    homogeneous parts at half their degree. Orders are exact through
    min(through, (phi completeness - 2)/2, density completeness / 2).
    """
    mode, n = problem.mode, problem.n
    through = HalfInt.of(through)
    caps = [through, HalfInt(phi.complete - 2)]
    # exponent series S = sum_{k>=1} h^(k/2) * (-2 phi_{k+2})
    s: dict[HalfInt, Poly] = {}
    for d, part in phi.poly.components_by_degree().items():
        if d <= 2:
            continue
        k = HalfInt(d - 2)  # half-order (d-2)/2
        if k > through:
            continue
        s[k] = part.scale(-2)
    expo: dict[HalfInt, Poly] = {HI0: Poly.const(mode, n, 1)}
    power: dict[HalfInt, Poly] = {HI0: Poly.const(mode, n, 1)}
    fact = Fraction(1)
    m = 1
    while s and m * min(k.doubled for k in s) <= through.doubled:
        power = _graded_mul(power, s, mode, n, through)
        if not power:
            break
        fact = fact * m
        inv_fact = mode.coeff(Fraction(1, int(fact)))
        for k, p in power.items():
            expo[k] = expo.get(k, Poly.zero(mode, n)) + p.scale(inv_fact)
        m += 1
    if not problem.metric_is_flat():
        G = metric_density_jet(problem)
        caps.append(HalfInt(problem.D))
        g_parts: dict[HalfInt, Poly] = {}
        for d, part in G.components_by_degree().items():
            k = HalfInt(d)
            if k <= through:
                g_parts[k] = part
        expo = _graded_mul(expo, g_parts, mode, n, through)
    complete = min(caps)
    omega = {k: p for k, p in expo.items() if k <= complete and not p.is_zero()}
    # structural invariants: leading term 1, parity (-1)^(2m); in float mode
    # wrong-parity terms are rounding noise and must stay below 1e-9 relative
    assert omega.get(HI0) == Poly.const(mode, n, 1)
    for k, p in omega.items():
        want = 0 if k.is_integer else 1
        scale = max([1.0] + [float(mode.abs(c)) for c in p.terms.values()])
        for alpha, c in p.terms.items():
            if mono_degree(alpha) % 2 != want and float(mode.abs(c)) > 1e-9 * scale:
                raise AssertionError("weight polynomial has impossible parity")
    return WeightExpansion(mode=mode, lam=problem.lam, omega=omega, complete=complete)


# ---------------------------------------------------------------------------
# Fiber metric jets


@dataclass(frozen=True)
class GammaJet:
    """Hermitian fiber-metric jets, one homogeneous matrix polynomial per half-order.

    Entry r holds the degree-2r part (in the blown-up variable); r = 0 is the
    identity for data given in the radial frame.
    """

    mode: object
    n: int
    rank: int
    parts: Mapping  # HalfInt -> PolyMat, homogeneous of degree 2r

    @staticmethod
    def identity(mode, n: int, rank: int) -> "GammaJet":
        return GammaJet(mode, n, rank, {HI0: pm_identity(mode, n, rank)})

    @staticmethod
    def from_matrix_jet(mat: PolyMat, mode, n: int, rank: int) -> "GammaJet":
        """Split a matrix jet by homogeneous degree d into parts at r = d/2."""
        if not pm_is_hermitian(mat):
            raise ValueError("fiber metric jet must be hermitian")
        degs = set()
        for row in mat:
            for e in row:
                degs |= {mono_degree(a) for a in e.terms}
        parts = {}
        for d in sorted(degs):
            part = tuple(tuple(e.homogeneous_component(d) for e in row) for row in mat)
            parts[HalfInt(d)] = part
        return GammaJet(mode, n, rank, parts)

    def is_identity(self) -> bool:
        return set(self.parts) == {HI0}

    def orders(self):
        return sorted(self.parts, key=lambda h: h.doubled)

    def form(self, r: HalfInt, u: FiberPoly, v: FiberPoly) -> Poly:
        """gamma_r[u, v]: conjugate-linear in the first slot."""
        mat = self.parts.get(r)
        out = Poly.zero(self.mode, self.n)
        if mat is None:
            return out
        for i in range(self.rank):
            ui = u.components[i].conj()
            if ui.is_zero():
                continue
            for j in range(self.rank):
                g = mat[i][j]
                vj = v.components[j]
                if g.is_zero() or vj.is_zero():
                    continue
                out = out + ui * g * vj
        return out


# ---------------------------------------------------------------------------
# The pairing


def pair_s0(u: S0Series, v: S0Series, omega: WeightExpansion,
            gamma: GammaJet | None = None,
            through: HalfInt | None = None) -> FormalScalarSeries:
    """Hermitian pairing of two power-counted series.

    Conjugate-linear in the first argument. The result's truncation order is
    the convolution bound of the four graded factors (the two series, the
    weight expansion, and the fiber-metric jets).
    """
    mode = u.mode
    if (u.n, u.rank) != (v.n, v.rank):
        raise ValueError("shape mismatch between pairing arguments")
    if gamma is not None and (gamma.n != u.n or gamma.rank != u.rank):
        raise ValueError("fiber metric shape mismatch")
    lam = omega.lam
    gamma_eff = gamma if gamma is not None else GammaJet.identity(mode, u.n, u.rank)

    ord_u = min((j - u.K for j in u.coeffs), default=HI0)
    ord_v = min((j - v.K for j in v.coeffs), default=HI0)
    cands = [omega.complete + ord_u + ord_v]
    if u.truncation_order is not None:
        cands.append(u.truncation_order + ord_v)
    if v.truncation_order is not None:
        cands.append(v.truncation_order + ord_u)
    if through is not None:
        cands.append(HalfInt.of(through))
    trunc = min(cands)

    terms: dict[HalfInt, object] = {}
    for ju, pu in u.coeffs.items():
        au = ju - u.K
        for jv, pv in v.coeffs.items():
            av = jv - v.K
            for r in gamma_eff.orders():
                base = au + av + r
                if base > trunc:
                    continue
                integrand_gr = gamma_eff.form(r, pu, pv)
                if integrand_gr.is_zero():
                    continue
                for m in omega.orders():
                    t = base + m
                    if t > trunc:
                        continue
                    val = moment_of_poly(integrand_gr * omega.at(m), lam)
                    if mode.is_zero(val):
                        continue
                    terms[t] = terms.get(t, mode.zero()) + val
    return FormalScalarSeries.from_terms(mode, terms, trunc)


def pair_fiber_polys(pu: FiberPoly, pv: FiberPoly, omega: WeightExpansion,
                     gamma: GammaJet | None = None,
                     through: HalfInt | None = None) -> FormalScalarSeries:
    """Pairing of two plain polynomials viewed as order-zero elements."""
    return pair_s0(S0Series.from_fiber_poly(pu), S0Series.from_fiber_poly(pv),
                   omega, gamma, through)
