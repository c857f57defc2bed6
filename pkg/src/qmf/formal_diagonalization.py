"""Hermitian matrices over the half-power series field and their eigendecomposition.

The level data produced by the projector is a Gram matrix A = 1 + (higher
order) and an interaction matrix C = E0 * 1 + (higher order); the effective
hermitian matrix is M = B C B with B = A^(-1/2). Its eigenvalue series are
the output of the whole construction.

Two equivalent routes are provided:

* ``effective_matrix`` + ``formal_eigendecomposition(M)`` -- the normalized
  route (leading Gram term must be the identity);
* ``formal_eigendecomposition(C, gram=A)`` -- the generalized (pencil) route
  C v = E A v, which has the same eigenvalue series but stays inside the
  rational field for unnormalized bases. The exact pipeline uses this one.

The eigendecomposition splits recursively: at the first order where the
deflated coefficient is not a scalar multiple of the leading Gram term, the
constant generalized eigenproblem fixes blocks, a series congruence
decouples them to the working order (a Sylvester-type solve with the
spectral gaps as denominators), and each block recurses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .series_algebra import (
    FormalScalarSeries,
    HI0,
    HalfInt,
    S0Series,
    binomial_series,
    half_range,
)
from .gaussian_pairing import GammaJet, WeightExpansion, pair_s0
from .harmonic_oscillator import DegenerateLevel

__all__ = [
    "SeriesMatrix",
    "EigenResult",
    "gram_matrix",
    "interaction_matrix",
    "matrix_inverse_sqrt",
    "effective_matrix",
    "formal_eigendecomposition",
    "parity_filter",
    "ExactSplitUnavailable",
    "SplitAmbiguityError",
    "series_sqrt",
]


class ExactSplitUnavailable(ValueError):
    """A spectral split needs irrational eigenvalues; rerun in float mode."""


class SplitAmbiguityError(ValueError):
    """Float-mode eigenvalue clustering is ambiguous at the reported order."""

    def __init__(self, order: HalfInt, gap: float, tol: float):
        self.order = order
        super().__init__(
            f"eigenvalue clusters separated by {gap:.3e} at order {order} are neither "
            f"equal nor resolved at tolerance {tol:.1e}; splitting stalled")


# ---------------------------------------------------------------------------
# Series matrices


@dataclass(frozen=True)
class SeriesMatrix:
    """Square matrix of scalar half-power series."""

    mode: object
    entries: tuple  # tuple[tuple[FormalScalarSeries, ...], ...]

    @property
    def size(self) -> int:
        return len(self.entries)

    @staticmethod
    def from_rows(mode, rows: Sequence[Sequence[FormalScalarSeries]]) -> "SeriesMatrix":
        return SeriesMatrix(mode, tuple(tuple(r) for r in rows))

    @staticmethod
    def constant(mode, mat: Sequence[Sequence[object]], trunc: HalfInt | None = None) -> "SeriesMatrix":
        return SeriesMatrix.from_rows(
            mode, [[FormalScalarSeries.const(mode, c, trunc) for c in row] for row in mat])

    @staticmethod
    def identity(mode, m: int, trunc: HalfInt | None = None) -> "SeriesMatrix":
        return SeriesMatrix.constant(
            mode, [[1 if i == j else 0 for j in range(m)] for i in range(m)], trunc)

    def entry(self, i: int, j: int) -> FormalScalarSeries:
        return self.entries[i][j]

    def __add__(self, other: "SeriesMatrix") -> "SeriesMatrix":
        return SeriesMatrix.from_rows(self.mode, [
            [a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)])

    def __sub__(self, other: "SeriesMatrix") -> "SeriesMatrix":
        return SeriesMatrix.from_rows(self.mode, [
            [a - b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)])

    def __matmul__(self, other: "SeriesMatrix") -> "SeriesMatrix":
        m = self.size
        rows = []
        for i in range(m):
            row = []
            for j in range(m):
                acc = FormalScalarSeries.zero(self.mode)
                for k in range(m):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            rows.append(row)
        return SeriesMatrix.from_rows(self.mode, rows)

    def scale_series(self, s: FormalScalarSeries) -> "SeriesMatrix":
        return SeriesMatrix.from_rows(self.mode, [[e * s for e in row] for row in self.entries])

    def adjoint(self) -> "SeriesMatrix":
        m = self.size
        return SeriesMatrix.from_rows(self.mode, [
            [self.entries[j][i].conj() for j in range(m)] for i in range(m)])

    def coeff_at(self, t: HalfInt) -> list:
        return [[e.coefficient(t) for e in row] for row in self.entries]

    def truncate(self, t: HalfInt | None) -> "SeriesMatrix":
        return SeriesMatrix.from_rows(self.mode, [[e.truncate(t) for e in row] for row in self.entries])

    def truncation_order(self) -> HalfInt | None:
        out = None
        for row in self.entries:
            for e in row:
                if e.truncation_order is not None:
                    out = e.truncation_order if out is None else min(out, e.truncation_order)
        return out

    def is_hermitian(self, through: HalfInt | None = None) -> bool:
        m = self.size
        for i in range(m):
            for j in range(m):
                diff = self.entries[i][j] - self.entries[j][i].conj()
                bound = through if through is not None else diff.truncation_order
                if bound is None:
                    if not diff.is_zero():
                        return False
                elif not diff.equals_through(FormalScalarSeries.zero(self.mode), bound):
                    return False
        return True

    def max_abs_coeff(self, through: HalfInt | None = None) -> float:
        return max((e.max_abs_coeff(through) for row in self.entries for e in row), default=0.0)

    def support_orders(self) -> list[HalfInt]:
        out = set()
        for row in self.entries:
            for e in row:
                out |= set(e.support())
        return sorted(out, key=lambda h: h.doubled)


# ---------------------------------------------------------------------------
# Level matrices


def gram_matrix(fs: Sequence[S0Series], omega: WeightExpansion,
                gamma: GammaJet | None = None, through: HalfInt | None = None,
                expect: str = "diagonal") -> SeriesMatrix:
    """Pairing Gram matrix of the projected level basis.

    ``expect`` = 'identity' validates a leading identity (normalized basis),
    'diagonal' a leading positive diagonal (monic basis); a violation signals
    a projector or pairing inconsistency upstream.
    """
    mode = fs[0].mode
    m = len(fs)
    rows = [[pair_s0(fs[i], fs[j], omega, gamma, through) for j in range(m)] for i in range(m)]
    a = SeriesMatrix.from_rows(mode, rows)
    lead = a.coeff_at(HI0)
    for i in range(m):
        for j in range(m):
            bad = False
            if i != j and not mode.is_zero(lead[i][j]):
                bad = True
            if i == j:
                if expect == "identity" and not mode.is_zero(lead[i][i] - mode.one()):
                    bad = True
                if mode.to_float(mode.real(lead[i][i])) <= 0:
                    bad = True
            if bad:
                raise ValueError("Gram leading term is not the expected form; "
                                 "projected basis and pairing are inconsistent")
    return a


def interaction_matrix(fs: Sequence[S0Series], family, omega: WeightExpansion,
                       gamma: GammaJet | None = None,
                       through: HalfInt | None = None) -> SeriesMatrix:
    """Matrix of pairings (f_i, Q f_j) over the series field."""
    mode = fs[0].mode
    qfs = [family.apply_series(f, out_trunc=None) for f in fs]
    m = len(fs)
    rows = [[pair_s0(fs[i], qfs[j], omega, gamma, through) for j in range(m)] for i in range(m)]
    return SeriesMatrix.from_rows(mode, rows)


def matrix_inverse_sqrt(a: SeriesMatrix, through: HalfInt | None = None) -> SeriesMatrix:
    """B with B A B = 1, for hermitian A = 1 + (positive order).

    The binomial series in X = A - 1 has rational coefficients, so B stays in
    the base field. Rejects a non-identity leading term.
    """
    mode = a.mode
    m = a.size
    lead = a.coeff_at(HI0)
    for i in range(m):
        for j in range(m):
            want = mode.one() if i == j else mode.zero()
            if not mode.is_zero(lead[i][j] - want):
                raise ValueError("inverse square root needs a leading identity")
    trunc = a.truncation_order()
    if through is not None:
        trunc = through if trunc is None else min(trunc, through)
    if trunc is None:
        raise ValueError("need a truncation order for the matrix binomial series")
    x = a - SeriesMatrix.identity(mode, m, trunc)
    min_ord = None
    for row in x.entries:
        for e in row:
            o = e.order()
            if o is not None:
                min_ord = o if min_ord is None else min(min_ord, o)
    out = SeriesMatrix.identity(mode, m, trunc)
    if min_ord is None:
        return out
    if min_ord <= HI0:
        raise ValueError("perturbation must have positive order")
    power = SeriesMatrix.identity(mode, m, trunc)
    coeff = Fraction(1)
    kmax = trunc.doubled // min_ord.doubled
    for k in range(1, kmax + 1):
        coeff = coeff * (Fraction(-1, 2) - (k - 1)) / k
        power = power @ x
        out = out + power.scale_series(FormalScalarSeries.const(mode, mode.coeff(coeff), trunc))
    return out


def effective_matrix(fs: Sequence[S0Series], family, omega: WeightExpansion,
                     gamma: GammaJet | None = None,
                     through: HalfInt | None = None) -> SeriesMatrix:
    """M = B C B for the normalized projected basis (leading Gram = identity)."""
    a = gram_matrix(fs, omega, gamma, through, expect="identity")
    c = interaction_matrix(fs, family, omega, gamma, through)
    b = matrix_inverse_sqrt(a, through)
    return (b @ c) @ b


# ---------------------------------------------------------------------------
# Exact linear algebra on constant rational matrices


def _mat_mul_const(a, b):
    m = len(a)
    return [[sum((a[i][k] * b[k][j] for k in range(m)),
                 a[0][0] * 0) for j in range(m)] for i in range(m)]


def _char_poly(t) -> list:
    """det(nu I - T) coefficients [c_0, ..., c_m] with c_m = 1 (Faddeev-LeVerrier)."""
    m = len(t)
    coeffs = [Fraction(0)] * (m + 1)
    coeffs[m] = Fraction(1)
    mk = [[Fraction(0)] * m for _ in range(m)]
    c = Fraction(1)
    for k in range(1, m + 1):
        for i in range(m):
            mk[i][i] = mk[i][i] + c
        mk = _mat_mul_const(t, mk)
        tr = sum(mk[i][i] for i in range(m))
        c = -tr / k
        coeffs[m - k] = c
    return coeffs


def _rational_roots(coeffs: list) -> list:
    """All rational roots with multiplicity of a rational polynomial."""
    roots = []
    work = [Fraction(c) for c in coeffs]
    while len(work) > 1:
        if work[0] == 0:
            roots.append(Fraction(0))
            work = _deflate(work, Fraction(0))
            continue
        denom = 1
        for c in work:
            denom = denom * c.denominator // math.gcd(denom, c.denominator)
        ints = [int(c * denom) for c in work]
        a0, am = abs(ints[0]), abs(ints[-1])
        found = None
        for p in _divisors(a0):
            for q in _divisors(am):
                for sign in (1, -1):
                    cand = Fraction(sign * p, q)
                    if _poly_eval(work, cand) == 0:
                        found = cand
                        break
                if found is not None:
                    break
            if found is not None:
                break
        if found is None:
            return roots  # remaining factor has no rational root
        roots.append(found)
        work = _deflate(work, found)
    return roots


def _divisors(n: int) -> list:
    n = abs(n)
    if n == 0:
        return [1]
    out = []
    d = 1
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            out.append(n // d)
        d += 1
    return sorted(set(out))


def _poly_eval(coeffs, x):
    acc = Fraction(0)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def _deflate(coeffs, root):
    """Synthetic division by (x - root); exact for a true root."""
    m = len(coeffs) - 1
    q = [Fraction(0)] * m
    q[m - 1] = Fraction(coeffs[m])
    for i in range(m - 1, 0, -1):
        q[i - 1] = Fraction(coeffs[i]) + root * q[i]
    return q


def _nullspace(mat) -> list:
    """Rational basis of the nullspace via row reduction."""
    m = len(mat)
    a = [list(row) for row in mat]
    n_cols = len(a[0])
    pivots = []
    r = 0
    for c in range(n_cols):
        pivot = None
        for rr in range(r, m):
            if a[rr][c] != 0:
                pivot = rr
                break
        if pivot is None:
            continue
        a[r], a[pivot] = a[pivot], a[r]
        pv = a[r][c]
        a[r] = [x / pv for x in a[r]]
        for rr in range(m):
            if rr != r and a[rr][c] != 0:
                f = a[rr][c]
                a[rr] = [x - f * y for x, y in zip(a[rr], a[r])]
        pivots.append(c)
        r += 1
        if r == m:
            break
    free = [c for c in range(n_cols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * n_cols
        v[fc] = Fraction(1)
        for ri, pc in enumerate(pivots):
            v[pc] = -a[ri][fc]
        basis.append(v)
    return basis


def _gen_eig_exact(r, a0):
    """Blocks of the constant hermitian pencil (R, A0) over the rationals.

    Returns [(nu, columns)] sorted by nu; raises if the characteristic
    polynomial has an irrational root.
    """
    m = len(r)
    a0_inv = _const_inverse(a0)
    t = _mat_mul_const(a0_inv, r)
    coeffs = _char_poly(t)
    roots = _rational_roots(coeffs)
    if len(roots) != m:
        raise ExactSplitUnavailable(
            "spectral split has irrational eigenvalues; rerun in float mode")
    out = []
    for nu in sorted(set(roots)):
        shifted = [[r[i][j] - nu * a0[i][j] for j in range(m)] for i in range(m)]
        basis = _nullspace(shifted)
        if len(basis) != roots.count(nu):
            raise ExactSplitUnavailable("eigenspace dimension mismatch in exact split")
        basis = _a0_orthogonalize(basis, a0)
        out.append((nu, basis))
    return out


def _a0_orthogonalize(vectors, a0):
    """Gram-Schmidt in the A0 inner product, without normalization."""
    m = len(a0)

    def ip(u, v):
        return sum(u[i] * a0[i][j] * v[j] for i in range(m) for j in range(m))

    out = []
    for v in vectors:
        w = list(v)
        for u in out:
            c = ip(u, w) / ip(u, u)
            w = [wi - c * ui for wi, ui in zip(w, u)]
        out.append(w)
    return out


def _const_inverse(a):
    m = len(a)
    aug = [list(row) + [Fraction(1) if i == j else Fraction(0) for j in range(m)]
           for i, row in enumerate(a)]
    for c in range(m):
        pivot = None
        for rr in range(c, m):
            if aug[rr][c] != 0:
                pivot = rr
                break
        if pivot is None:
            raise ValueError("singular matrix")
        aug[c], aug[pivot] = aug[pivot], aug[c]
        pv = aug[c][c]
        aug[c] = [x / pv for x in aug[c]]
        for rr in range(m):
            if rr != c and aug[rr][c] != 0:
                f = aug[rr][c]
                aug[rr] = [x - f * y for x, y in zip(aug[rr], aug[c])]
    return [row[m:] for row in aug]


def _gen_eig_float(r, a0, tol: float, order: HalfInt):
    """Clustered blocks of the constant hermitian pencil in float mode."""
    import numpy as np
    from scipy.linalg import eigh

    rm = np.array(r, dtype=complex)
    am = np.array(a0, dtype=complex)
    vals, vecs = eigh(rm, am)
    scale = max(1.0, float(np.max(np.abs(vals))))
    clusters: list[list[int]] = []
    for i, v in enumerate(vals):
        if clusters and abs(v - vals[clusters[-1][0]]) <= tol * scale:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    for a, b in zip(clusters, clusters[1:]):
        gap = abs(vals[b[0]] - vals[a[-1]])
        if gap <= 100 * tol * scale:
            raise SplitAmbiguityError(order, float(gap), tol)
    out = []
    for cl in clusters:
        nu = complex(np.mean(vals[cl]))
        cols = [[complex(vecs[i, j]) for i in range(len(r))] for j in cl]
        out.append((nu, cols))
    return out


# ---------------------------------------------------------------------------
# Eigendecomposition over the series field


@dataclass
class EigenResult:
    """Eigenvalue series and eigenvector columns of a hermitian series pencil.

    Columns are orthogonal in the Gram form with squared norms ``norms2``;
    ``normalized`` records whether they were further scaled to unit norm
    (always possible in float mode, in exact mode only for perfect-square
    leading norms).
    """

    eigenvalues: list
    vectors: list       # list of columns; each column is a list of series
    norms2: list
    gram: SeriesMatrix
    normalized: bool
    order: HalfInt


def formal_eigendecomposition(m_matrix: SeriesMatrix, gram: SeriesMatrix | None = None,
                              through: HalfInt | None = None, rel_tol: float = 1e-9,
                              normalize: str = "auto") -> EigenResult:
    """Eigenvalue and eigenvector series of a hermitian matrix over the series field.

    With ``gram`` given, solves the generalized problem M v = E (gram) v; the
    leading gram coefficient must be hermitian positive definite. Splitting
    follows the first order whose deflated coefficient is not a scalar
    multiple of the leading gram; blocks are decoupled by a series congruence
    before recursing, so eigenvalues are exact through the working order.

    ``normalize``: 'auto' scales columns to unit norm when the field allows
    (always in float mode), 'never' keeps the raw orthogonal columns.
    """
    mode = m_matrix.mode
    m = m_matrix.size
    trunc = m_matrix.truncation_order()
    if gram is not None:
        gt = gram.truncation_order()
        trunc = gt if trunc is None else (trunc if gt is None else min(trunc, gt))
    if through is not None:
        through = HalfInt.of(through)
        trunc = through if trunc is None else min(trunc, through)
    if trunc is None:
        raise ValueError("need a truncation order for the eigendecomposition")
    if gram is None:
        gram = SeriesMatrix.identity(mode, m, trunc)
    if not m_matrix.is_hermitian(trunc) or not gram.is_hermitian(trunc):
        raise ValueError("pencil must be hermitian")

    pairs = _pencil_solve(m_matrix.truncate(trunc), gram.truncate(trunc), trunc, mode, rel_tol)

    # deterministic order: sort by eigenvalue coefficient sequences
    def eig_key(pair):
        e = pair[0]
        return tuple((t.doubled, round(mode.to_float(mode.real(e.coefficient(t))), 12))
                     for t in half_range(HI0, trunc))

    pairs.sort(key=eig_key)
    eigenvalues = [p[0] for p in pairs]
    vectors = [p[1] for p in pairs]

    # phase convention: largest-magnitude leading entry real positive
    fixed = []
    for col in vectors:
        lead_order = None
        for e in col:
            o = e.order()
            if o is not None and (lead_order is None or o < lead_order):
                lead_order = o
        if lead_order is None:
            fixed.append(col)
            continue
        entries = [e.coefficient(lead_order) for e in col]
        best = max(range(len(entries)), key=lambda i: float(mode.abs(entries[i])))
        pivot = entries[best]
        phase = pivot / mode.abs(pivot) if not mode.is_zero(pivot) else mode.one()
        inv_phase = mode.one() / phase
        fixed.append([e.scale(inv_phase) for e in col])
    vectors = fixed

    norms2 = []
    for col in vectors:
        acc = FormalScalarSeries.zero(mode, trunc)
        for i in range(m):
            for j in range(m):
                acc = acc + col[i].conj() * gram.entry(i, j) * col[j]
        norms2.append(acc.truncate(trunc))

    normalized = False
    if normalize == "auto":
        scaled = []
        ok = True
        for col, n2 in zip(vectors, norms2):
            try:
                root = series_sqrt(n2, trunc)
            except ExactSplitUnavailable:
                ok = False
                break
            inv_root = root.inverse(through=trunc)
            scaled.append([e * inv_root for e in col])
        if ok:
            vectors = scaled
            norms2 = [FormalScalarSeries.const(mode, 1, trunc) for _ in vectors]
            normalized = True

    return EigenResult(eigenvalues=eigenvalues, vectors=vectors, norms2=norms2,
                       gram=gram, normalized=normalized, order=trunc)


def series_sqrt(s: FormalScalarSeries, through: HalfInt | None = None) -> FormalScalarSeries:
    """Square root of a series with positive leading coefficient.

    In exact mode the leading coefficient must be a perfect rational square
    (raises ``ExactSplitUnavailable`` otherwise); the tail is the rational
    binomial series.
    """
    mode = s.mode
    if s.is_zero():
        return s
    lead = s.coeffs[0]
    if mode.name == "exact":
        num, den = lead.numerator, lead.denominator
        rn, rd = math.isqrt(num), math.isqrt(den)
        if lead < 0 or rn * rn != num or rd * rd != den:
            raise ExactSplitUnavailable(f"no exact square root of {lead}")
        root_lead = Fraction(rn, rd)
    else:
        root_lead = complex(lead) ** 0.5
    if s.offset.doubled % 2 != 0:
        raise ValueError("square root of an odd leading power is outside the field")
    half_off = HalfInt(s.offset.doubled // 2)
    rel_trunc = None if s.truncation_order is None else s.truncation_order - s.offset
    rel = FormalScalarSeries(mode, HI0, tuple(c / lead for c in s.coeffs), rel_trunc)
    v = rel - FormalScalarSeries.const(mode, 1, rel_trunc)
    rel_through = rel_trunc
    if rel_through is None and through is not None:
        rel_through = HalfInt.of(through) - half_off
    root_rel = binomial_series(v, Fraction(1, 2), through=rel_through)
    return root_rel.scale(root_lead).shift(half_off)


def _pencil_solve(b: SeriesMatrix, a: SeriesMatrix, order: HalfInt, mode,
                  rel_tol: float) -> list:
    """Recursive splitting; returns [(eigenvalue series, column of series)]."""
    m = b.size
    if m == 1:
        e = (b.entry(0, 0) / a.entry(0, 0)).truncate(order)
        one = FormalScalarSeries.const(mode, 1, order)
        return [(e, [one])]

    a0 = a.coeff_at(HI0)
    e_accum = FormalScalarSeries.zero(mode, order)
    for t in half_range(HI0, order):
        r_t = [[b.entry(i, j).coefficient(t) - (e_accum * a.entry(i, j)).coefficient(t)
                for j in range(m)] for i in range(m)]
        if all(mode.is_zero(r_t[i][j]) for i in range(m) for j in range(m)):
            continue
        if mode.name == "exact":
            blocks = _gen_eig_exact(r_t, a0)
        else:
            blocks = _gen_eig_float(r_t, a0, rel_tol, t)
        if len(blocks) == 1:
            nu = blocks[0][0]
            e_accum = e_accum + FormalScalarSeries.hbar_power(mode, t, nu, order)
            continue
        return _split_and_recurse(b, a, order, mode, rel_tol, e_accum, t, blocks)

    # no split through the working order: all eigenvalues coincide
    cols = _series_gram_schmidt(a, order, mode)
    return [(e_accum, col) for col in cols]


def _split_and_recurse(b, a, order, mode, rel_tol, e_accum, t, blocks):
    m = b.size
    # change of basis by the constant block matrix
    u_cols = []
    nus = []
    sizes = []
    for nu, cols in blocks:
        nus.append(nu)
        sizes.append(len(cols))
        u_cols.extend(cols)
    u = SeriesMatrix.constant(mode, [[u_cols[j][i] for j in range(m)] for i in range(m)],
                              b.truncation_order())
    ustar = u.adjoint()
    p = b - a.scale_series(e_accum)
    a_rot = (ustar @ a) @ u
    p_rot = (ustar @ p) @ u

    # block index ranges
    starts = []
    s = 0
    for size in sizes:
        starts.append(s)
        s += size
    ranges = [range(st, st + size) for st, size in zip(starts, sizes)]

    a0_rot = a_rot.coeff_at(HI0)
    a0_blocks = [[[a0_rot[i][j] for j in rng] for i in rng] for rng in ranges]
    if mode.name == "exact":
        a0_invs = [_const_inverse(blk) for blk in a0_blocks]
    else:
        import numpy as np
        a0_invs = [np.linalg.inv(np.array(blk, dtype=complex)).tolist() for blk in a0_blocks]

    # series congruence V = 1 + sum_s h^s V_s with zero diagonal blocks,
    # chosen so both a_rot and p_rot become block diagonal through the order
    v = SeriesMatrix.identity(mode, m, b.truncation_order())
    for s_ord in half_range(HalfInt(1), order):
        a_cur = (v.adjoint() @ a_rot) @ v
        p_cur = (v.adjoint() @ p_rot) @ v
        vs = [[mode.zero() for _ in range(m)] for _ in range(m)]
        dirty = False
        for bi in range(len(ranges)):
            for ci in range(len(ranges)):
                if bi >= ci:
                    continue
                k1 = [[a_cur.entry(i, j).coefficient(s_ord) for j in ranges[ci]]
                      for i in ranges[bi]]
                k2 = [[p_cur.entry(i, j).coefficient(t + s_ord) for j in ranges[ci]]
                      for i in ranges[bi]]
                if all(mode.is_zero(x) for row in k1 for x in row) and \
                   all(mode.is_zero(x) for row in k2 for x in row):
                    continue
                dirty = True
                gap = nus[bi] - nus[ci]
                rhs = [[nus[ci] * k1[r][c] - k2[r][c] for c in range(len(k1[0]))]
                       for r in range(len(k1))]
                x = _block_mul(a0_invs[bi], rhs)
                x = [[e / gap for e in row] for row in x]
                # Y = (-K1 - A0_b X) A0_c^{-1},  V_s^{(cb)} = Y^dagger
                tmp = _block_mul(a0_blocks[bi], x)
                y = [[-k1[r][c] - tmp[r][c] for c in range(len(k1[0]))] for r in range(len(k1))]
                y = _block_mul(y, a0_invs[ci])
                for rr, i in enumerate(ranges[bi]):
                    for cc, j in enumerate(ranges[ci]):
                        vs[i][j] = x[rr][cc]
                        vs[j][i] = mode.conj(y[rr][cc])
        if dirty:
            v = v + SeriesMatrix.constant(mode, vs, b.truncation_order()).scale_series(
                FormalScalarSeries.hbar_power(mode, s_ord, 1, b.truncation_order()))

    a_fin = (v.adjoint() @ a_rot) @ v
    p_fin = (v.adjoint() @ p_rot) @ v
    w = u @ v

    out = []
    for blk, rng in enumerate(ranges):
        sub_b = SeriesMatrix.from_rows(mode, [[p_fin.entry(i, j) for j in rng] for i in rng])
        sub_a = SeriesMatrix.from_rows(mode, [[a_fin.entry(i, j) for j in rng] for i in rng])
        for e_sub, col in _pencil_solve(sub_b, sub_a, order, mode, rel_tol):
            full_col = []
            for i in range(m):
                acc = FormalScalarSeries.zero(mode, order)
                for cc, j in enumerate(rng):
                    acc = acc + w.entry(i, j) * col[cc]
                full_col.append(acc.truncate(order))
            out.append(((e_accum + e_sub).truncate(order), full_col))
    return out


def _block_mul(a, b):
    rows = len(a)
    inner = len(b)
    cols = len(b[0]) if b else 0
    return [[sum((a[i][k] * b[k][j] for k in range(inner)), a[0][0] * 0)
             for j in range(cols)] for i in range(rows)]


def _series_gram_schmidt(a: SeriesMatrix, order: HalfInt, mode) -> list:
    """A-orthogonal columns from the identity basis, lexicographic pivoting."""
    m = a.size
    cols = []
    for k in range(m):
        col = [FormalScalarSeries.const(mode, 1 if i == k else 0, order) for i in range(m)]
        for prev in cols:
            num = FormalScalarSeries.zero(mode, order)
            den = FormalScalarSeries.zero(mode, order)
            for i in range(m):
                for j in range(m):
                    num = num + prev[i].conj() * a.entry(i, j) * col[j]
                    den = den + prev[i].conj() * a.entry(i, j) * prev[j]
            c = num / den
            col = [ci - c * pi for ci, pi in zip(col, prev)]
        cols.append([c.truncate(order) for c in col])
    return cols


# ---------------------------------------------------------------------------
# Parity filter


@dataclass
class ParityReport:
    checked: bool
    ok: bool
    worst: float
    detail: str


def parity_filter(result: EigenResult, level: DegenerateLevel, tol: float = 0.0) -> ParityReport:
    """Assert the vanishing of half-integer eigenvalue coefficients.

    Applies only to levels of uniform parity; mixed levels are exempt. A
    violation is a hard failure: the structure theory guarantees vanishing,
    so a nonzero coefficient means an implementation bug upstream.
    """
    if level.parity == "mixed":
        return ParityReport(checked=False, ok=True, worst=0.0, detail="mixed parity: exempt")
    mode = result.eigenvalues[0].mode if result.eigenvalues else None
    worst = 0.0
    for e in result.eigenvalues:
        for t, c in e.items():
            if not t.is_integer:
                worst = max(worst, float(mode.abs(c)))
    ok = worst <= tol
    if not ok:
        raise AssertionError(
            f"half-integer eigenvalue coefficient of size {worst} on a uniform-parity level")
    return ParityReport(checked=True, ok=True, worst=worst,
                        detail=f"all half-integer coefficients vanish (<= {tol})")
