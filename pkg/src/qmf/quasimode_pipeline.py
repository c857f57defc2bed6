"""End-to-end assembly of the quasimode series, plus independent verification.

``compute_quasimodes`` runs the full construction for one model level:

    problem -> phase -> conjugated operator -> rescaled family
            -> projector images of the level basis
            -> Gram / interaction matrices -> pencil eigendecomposition
            -> eigenvalue series  h (E0 + sum_k h^k E_k)
            -> eigenfunction jets (inverse rescaling), degree/parity checks.

The verifiers are deliberately independent of that path:

* ``transport_residual``    -- the recursive first-order transport equations
                               at jet level (must vanish identically);
* ``eigen_residual``        -- the eigenvalue equation assembled order by
                               order on the x-side jets;
* ``rs_oracle``             -- a textbook Rayleigh-Schrodinger recursion in
                               the model eigenbasis (nondegenerate levels);
* ``crosscheck_eigenvalue_1d`` -- a dense finite-difference eigensolver with
                               Richardson control, fitting the error's decay
                               order against the truncated series.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .series_algebra import (
    FiberPoly,
    FormalScalarSeries,
    HI0,
    HalfInt,
    S0Series,
    half_range,
    unrescale,
)
from .operator_calculus import (
    ConjugatedOperator,
    DiffOpJet,
    JetProblem,
    OperatorFamily,
    conjugate_hamiltonian,
    rescale_operator,
    solve_eikonal,
)
from .gaussian_pairing import GammaJet, WeightExpansion, pair_s0, weight_expansion
from .harmonic_oscillator import (
    DegenerateLevel,
    HermiteBasis,
    LevelNotFoundError,
    SpectrumTable,
    build_spectrum,
    degenerate_level,
    level_by_index,
)
from .projection_engine import build_projector
from .formal_diagonalization import (
    SeriesMatrix,
    formal_eigendecomposition,
    gram_matrix,
    interaction_matrix,
    parity_filter,
    series_sqrt,
)

__all__ = [
    "QuasimodeResult",
    "VerificationReport",
    "PipelineContext",
    "compute_quasimodes",
    "transport_residual",
    "eigen_residual",
    "orthonormality_report",
    "rs_oracle",
    "crosscheck_eigenvalue_1d",
    "InsufficientOrderError",
    "DegenerateLevelError",
]


class InsufficientOrderError(ValueError):
    """The input jets cannot support the requested series order."""

    def __init__(self, requested: HalfInt, available: HalfInt, required_D: int):
        self.required_D = required_D
        super().__init__(
            f"operator family exact only through order {available} < requested {requested}; "
            f"the input jet order must be at least D = {required_D}")


class DegenerateLevelError(ValueError):
    """An operation requiring a simple level met a degenerate one."""


@dataclass
class VerificationReport:
    """Outcome of one independent check."""

    name: str
    passed: bool
    order: HalfInt | None
    max_residual: float
    detail: str = ""
    data: dict = field(default_factory=dict)


@dataclass
class PipelineContext:
    """Everything the verifiers need about one finished computation."""

    problem: JetProblem
    phi: object
    conj: ConjugatedOperator
    family: OperatorFamily
    basis: HermiteBasis
    table: SpectrumTable
    level: DegenerateLevel
    omega: WeightExpansion
    gamma: GammaJet | None
    gram: SeriesMatrix
    interaction: SeriesMatrix


@dataclass
class QuasimodeResult:
    """Eigenvalue series and eigenfunction jets for one model level.

    ``eigenvalues`` are the absolute series h*(E0 + sum h^k E_k); each
    eigenfunction is an x-jet series with leading factor h^(-K) whose inner
    coefficients satisfy the lowest-degree bound max(2(K - k), 0). In exact
    mode the eigenfunctions are scaled so their pairing Gram is the constant
    diagonal ``norm2_constants`` (unit diagonal in float mode or when the
    square roots are rational).
    """

    level: DegenerateLevel
    order: HalfInt
    eigenvalues: list
    eigenfunctions: list      # XJetSeries
    rescaled: list            # S0Series (the blown-up eigenvectors)
    norm2_constants: list
    normalized: bool
    mode_name: str
    context: PipelineContext

    @property
    def K(self) -> HalfInt:
        return self.level.K


def _selection_table(problem: JetProblem, e0=None, level_index=None,
                     rel_tol: float = 1e-9) -> tuple:
    mode = problem.mode
    lam_min = min(mode.to_float(l) for l in problem.lam)
    mu_min = min(mode.to_float(m) for m in problem.mu)
    if e0 is not None:
        e0c = mode.coeff(e0) if isinstance(e0, (int, str, Fraction)) else e0
        bound = int((mode.to_float(e0c) - mu_min) / (2 * lam_min)) + 1
        table = build_spectrum(mode, problem.lam, problem.mu, max(bound, 2),
                               n=problem.n, rank=problem.rank)
        return table, degenerate_level(table, e0c, rel_tol)
    if level_index is None:
        level_index = 0
    degree = 2 * (level_index + 2)
    while True:
        table = build_spectrum(mode, problem.lam, problem.mu, degree,
                               n=problem.n, rank=problem.rank)
        try:
            return table, level_by_index(table, level_index, rel_tol)
        except LevelNotFoundError:
            degree *= 2
            if degree > 512:
                raise


def compute_quasimodes(problem: JetProblem, order, e0=None, level_index=None,
                       rel_tol: float = 1e-9) -> QuasimodeResult:
    """Quasimode series for one level of the local model, through the given order.

    Exactly one of ``e0`` (eigenvalue of the model at the minimum) or
    ``level_index`` (position in the sorted spectrum, 0 = bottom) selects the
    level; ``e0`` defaults to the bottom level. Raises if the level is not in
    the model spectrum or the input jets are too short for the order.
    """
    mode = problem.mode
    order = HalfInt.of(order)

    _, level = _selection_table(problem, e0, level_index, rel_tol)

    phi = solve_eikonal(problem)
    conj = conjugate_hamiltonian(problem, phi)
    family = rescale_operator(conj)
    if family.max_order < order:
        deficit = order.doubled - family.max_order.doubled
        raise InsufficientOrderError(order, family.max_order, problem.D + deficit)

    # workspace: degrees reached are at most 2K + 2*order, plus margin
    degree = level.K.doubled + 2 * order.doubled + 2
    basis = HermiteBasis(mode, problem.n, problem.rank, problem.lam, problem.mu, degree)
    table = build_spectrum(mode, problem.lam, problem.mu, degree,
                           n=problem.n, rank=problem.rank)
    omega = weight_expansion(phi, problem, order)
    gamma = None  # radial frame: constant identity fiber metric

    proj = build_projector(family, basis, table, level, order)
    fs = [proj.image_s0(m) for m in level.members]

    a_mat = gram_matrix(fs, omega, gamma, through=order, expect="diagonal")
    c_mat = interaction_matrix(fs, family, omega, gamma, through=order)
    eigen = formal_eigendecomposition(c_mat, gram=a_mat, through=order,
                                      rel_tol=rel_tol, normalize="auto")

    # flatten squared norms to constants when unit normalization is irrational
    vectors = eigen.vectors
    norms2 = eigen.norms2
    if not eigen.normalized:
        flat_cols = []
        flat_norms = []
        for col, n2 in zip(vectors, norms2):
            n0 = n2.coefficient(HI0)
            rel = n2.scale(mode.one() / n0)
            factor = series_sqrt(rel).inverse(through=order)
            flat_cols.append([e * factor for e in col])
            flat_norms.append(n0)
        vectors = flat_cols
        norm2_constants = flat_norms
    else:
        norm2_constants = [mode.one() for _ in vectors]

    psis = []
    for col in vectors:
        psi = S0Series.zero(mode, problem.n, problem.rank, order)
        for f, c in zip(fs, col):
            psi = psi + f.scale_series(c)
        # canonical representation: the offset of the whole level
        psi = psi.truncate(order).minimal_K()
        if psi.K > level.K:
            raise AssertionError("eigenvector escapes the level's power-counting offset")
        psis.append(psi.with_K(level.K))

    eigenvalues = [e.truncate(order).shift(HalfInt(2)) for e in eigen.eigenvalues]
    for e in eigenvalues:
        if not e.is_real():
            raise AssertionError("eigenvalue series has a non-real coefficient")

    class _EigWrap:
        pass

    wrap = _EigWrap()
    wrap.eigenvalues = [e.shift(HalfInt(-2)) for e in eigenvalues]
    parity_filter(wrap, level, tol=0.0 if mode.name == "exact" else rel_tol)

    eigenfunctions = [unrescale(psi) for psi in psis]
    _assert_structure(eigenfunctions, psis, level, order, mode, rel_tol)

    ctx = PipelineContext(problem=problem, phi=phi, conj=conj, family=family,
                          basis=basis, table=table, level=level, omega=omega,
                          gamma=gamma, gram=a_mat, interaction=c_mat)
    return QuasimodeResult(level=level, order=order, eigenvalues=eigenvalues,
                           eigenfunctions=eigenfunctions, rescaled=psis,
                           norm2_constants=norm2_constants,
                           normalized=eigen.normalized, mode_name=mode.name,
                           context=ctx)


def _assert_structure(eigenfunctions, psis, level, order, mode, rel_tol):
    """Offset, lowest-degree, and parity bookkeeping of the output jets."""
    tol = 0.0 if mode.name == "exact" else rel_tol
    for a in eigenfunctions:
        if a.K != level.K:
            raise AssertionError(f"output offset K = {a.K} differs from level K = {level.K}")
        for k, jet in a.items():
            lo = jet.min_degree()
            bound = max((level.K - k).doubled, 0)
            if lo < bound:
                raise AssertionError(
                    f"coefficient at index {k} has degree {lo} below the bound {bound}")
        if level.parity in ("even", "odd"):
            # uniform-parity levels: the series lives on one exponent class
            for k, jet in a.items():
                absolute = k - level.K
                forbidden = not absolute.is_integer if level.parity == "even" \
                    else absolute.is_integer
                if forbidden:
                    worst = 0.0
                    for comp in jet.components:
                        for c in comp.terms.values():
                            worst = max(worst, float(mode.abs(c)))
                    if worst > tol:
                        raise AssertionError(
                            f"parity violation: forbidden exponent {absolute} "
                            f"carries coefficient of size {worst}")


def orthonormality_report(result: QuasimodeResult) -> VerificationReport:
    """Pairing Gram of the computed quasimodes against the expected diagonal.

    In float mode (or whenever unit-normalization was possible) the target is
    the identity; otherwise the recorded rational diagonal constants. All
    off-diagonal entries and all order > 0 diagonal terms must vanish.
    """
    ctx = result.context
    mode = ctx.problem.mode
    worst = 0.0
    m = len(result.rescaled)
    for i in range(m):
        for j in range(m):
            p = pair_s0(result.rescaled[i], result.rescaled[j], ctx.omega, ctx.gamma,
                        through=result.order)
            want = result.norm2_constants[i] if i == j else mode.zero()
            diff = p - FormalScalarSeries.const(mode, want, p.truncation_order)
            worst = max(worst, diff.max_abs_coeff(result.order))
    tol = 0.0 if mode.name == "exact" else 1e-9
    return VerificationReport(
        name="orthonormality", passed=worst <= tol, order=result.order,
        max_residual=worst,
        detail="pairing Gram equals the recorded diagonal constants" if worst <= tol
        else "pairing Gram deviates from the expected diagonal")


# ---------------------------------------------------------------------------
# Transport / eigenvalue residuals at jet level


def _apply_with_bound(op: DiffOpJet, jet: FiberPoly, jet_bound: int | None):
    """Apply an operator jet, returning (result, degree bound of validity)."""
    out = op.apply(jet)
    bounds = []
    if jet_bound is not None:
        md = op.min_degree()
        shift = 0 if md in (float("inf"), float("-inf")) else int(md)
        bounds.append(jet_bound + shift)
    if op.complete is not None:
        lo = jet.min_degree()
        lo = 0 if lo == float("inf") else int(lo)
        bounds.append(op.complete + lo)
    return out, (min(bounds) if bounds else None)


def transport_residual(result: QuasimodeResult) -> VerificationReport:
    """Residual of the recursive transport equations on the output jets.

    For every quasimode and every order k through the built order, evaluates

        (T - E0) a_k + L a_{k-1} - sum_{i >= 1/2} E_i a_{k-i}

    as an x-jet (T the transport operator, L the second-order piece) and
    requires it to vanish identically through the provable degree. Flat
    corrections vanish to infinite order at the base point, so jet residuals
    must be exactly zero.
    """
    ctx = result.context
    mode = ctx.problem.mode
    level = ctx.level
    N = result.order
    T_op = ctx.conj.hbar1
    L_op = ctx.conj.hbar2
    worst = 0.0
    min_degree_reached = None
    for a_jet, e_series in zip(result.eigenfunctions, result.eigenvalues):
        inner = e_series.shift(HalfInt(-2))  # E0 + sum h^i E_i
        for k in half_range(HI0, N + level.K):
            bounds = []
            a_k = a_jet.at_relative(k)
            bound_k = a_jet.degree_bound_at(k - level.K)
            res, b = _apply_with_bound(T_op, a_k, bound_k)
            res = res - a_k.scale(level.E0)
            if b is not None:
                bounds.append(b)
            if bound_k is not None:
                bounds.append(bound_k)
            if k - HalfInt(2) >= HI0:
                a_prev = a_jet.at_relative(k - HalfInt(2))
                lres, lb = _apply_with_bound(L_op, a_prev, a_jet.degree_bound_at(k - HalfInt(2) - level.K))
                res = res + lres
                if lb is not None:
                    bounds.append(lb)
            for i in half_range(HalfInt(1), k):
                ei = inner.coefficient(i)
                if mode.is_zero(ei):
                    continue
                a_ki = a_jet.at_relative(k - i)
                res = res - a_ki.scale(ei)
                bi = a_jet.degree_bound_at(k - i - level.K)
                if bi is not None:
                    bounds.append(bi)
            check_bound = min(bounds) if bounds else None
            if check_bound is not None:
                if min_degree_reached is None or check_bound < min_degree_reached:
                    min_degree_reached = check_bound
                res = res.truncate_degree(check_bound)
            for comp in res.components:
                for c in comp.terms.values():
                    worst = max(worst, float(mode.abs(c)))
    tol = 0.0 if mode.name == "exact" else 1e-9
    return VerificationReport(
        name="transport", passed=worst <= tol, order=N, max_residual=worst,
        detail=f"jet residual through degree {min_degree_reached}" if min_degree_reached is not None
        else "jet residual (all degrees)")


def eigen_residual(result: QuasimodeResult) -> VerificationReport:
    """Direct residual of the eigenvalue equation, assembled on the blown-up side.

    Computes (sum_j h^j Q_j - (E0 + sum h^k E_k)) psi coefficientwise; this
    regroups the whole construction differently from the transport recursion
    and must also vanish through the built order.
    """
    ctx = result.context
    mode = ctx.problem.mode
    worst = 0.0
    for psi, e_series in zip(result.rescaled, result.eigenvalues):
        inner = e_series.shift(HalfInt(-2))
        qpsi = ctx.family.apply_series(psi, out_trunc=result.order)
        epsi = psi.scale_series(inner)
        diff = qpsi - epsi
        worst = max(worst, diff.max_abs_coeff(result.order))
    tol = 0.0 if mode.name == "exact" else 1e-9
    return VerificationReport(
        name="eigen_residual", passed=worst <= tol, order=result.order,
        max_residual=worst, detail="(Q - E) psi coefficientwise")


# ---------------------------------------------------------------------------
# Rayleigh-Schrodinger oracle (nondegenerate levels)


def rs_oracle(problem: JetProblem, order, e0=None, level_index=None) -> FormalScalarSeries:
    """Eigenvalue series by the textbook perturbation recursion (m0 = 1 only).

    Works entirely in the model eigenbasis with intermediate normalization
    (the level component of every correction vector is zero), so it shares no
    code with the projector/pencil pipeline beyond the operator family. The
    returned series is E0 + sum_{k>=1/2} h^k E_k.
    """
    mode = problem.mode
    order = HalfInt.of(order)
    _, level = _selection_table(problem, e0, level_index)
    if level.m0 != 1:
        raise DegenerateLevelError(
            f"level at {level.E0} has multiplicity {level.m0}; the recursion needs a simple level")
    member = level.members[0]

    phi = solve_eikonal(problem)
    family = rescale_operator(conjugate_hamiltonian(problem, phi))
    if family.max_order < order:
        deficit = order.doubled - family.max_order.doubled
        raise InsufficientOrderError(order, family.max_order, problem.D + deficit)
    degree = member.degree + 2 * order.doubled + 2
    basis = HermiteBasis(mode, problem.n, problem.rank, problem.lam, problem.mu, degree)
    table = build_spectrum(mode, problem.lam, problem.mu, degree,
                           n=problem.n, rank=problem.rank)
    e0_val = level.E0

    def q_vec(j: HalfInt, vec: dict) -> dict:
        op = family.get(j)
        out: dict = {}
        if op.is_zero():
            return out
        for idx, c in vec.items():
            img = basis.expand(op.apply(basis.fiber(idx)))
            for i2, c2 in img.items():
                s = out.get(i2, mode.zero()) + c * c2
                if mode.is_zero(s):
                    out.pop(i2, None)
                else:
                    out[i2] = s
        return out

    psi = {0: {member: mode.one()}}
    e_coeffs = {0: e0_val}
    for s in range(1, order.doubled + 1):
        drive: dict = {}
        for m in range(1, s + 1):
            if s - m not in psi:
                continue
            contrib = q_vec(HalfInt(m), psi[s - m])
            for idx, c in contrib.items():
                drive[idx] = drive.get(idx, mode.zero()) + c
        e_s = drive.get(member, mode.zero())
        e_coeffs[s] = e_s
        rhs: dict = {}
        for idx, c in drive.items():
            rhs[idx] = rhs.get(idx, mode.zero()) - c
        for t in range(1, s):
            if mode.is_zero(e_coeffs.get(t, mode.zero())) or (s - t) not in psi:
                continue
            for idx, c in psi[s - t].items():
                rhs[idx] = rhs.get(idx, mode.zero()) + e_coeffs[t] * c
        # (Q0 - E0) psi_s = rhs, so componentwise (E_idx - E0) psi_idx = rhs_idx;
        # the member component is dropped (intermediate normalization)
        psi_s: dict = {}
        for idx, c in rhs.items():
            if idx == member or mode.is_zero(c):
                continue
            gap = table.eigenvalue(idx) - e0_val
            if mode.is_zero(gap):
                raise DegenerateLevelError(
                    "degeneracy met inside the recursion; the level is not isolated enough")
            psi_s[idx] = c / gap
        psi[s] = psi_s
    terms = {HalfInt(s): c for s, c in e_coeffs.items() if not mode.is_zero(c)}
    return FormalScalarSeries.from_terms(mode, terms, order)


# ---------------------------------------------------------------------------
# Numeric cross-check (1-D scalar)


def crosscheck_eigenvalue_1d(problem: JetProblem, result: QuasimodeResult,
                             hbars: Sequence[float], grid: int = 4096,
                             decay_threshold: float = 1e-14) -> VerificationReport:
    """Dense finite-difference eigenvalues against the truncated series.

    Symmetric second-order differences on a Dirichlet box sized so the ground
    weight has decayed below ``decay_threshold``; two grids (m and 2m) give a
    Richardson-extrapolated eigenvalue and a convergence certificate. The
    log-log slope of |E_num(h) - series(h)| over the given h values must be
    at least order + 3/2 (or, for an identically vanishing series, the error
    must be exponentially small).
    """
    import numpy as np
    from scipy.linalg import eigh_tridiagonal

    if problem.n != 1 or problem.rank != 1:
        raise ValueError("the finite-difference cross-check is one-dimensional scalar only")
    if not problem.metric_is_flat() or problem.has_connection():
        raise ValueError("the finite-difference cross-check needs the flat scalar form")
    mode = problem.mode
    v_poly = problem.V
    w_poly = problem.W[0][0]

    def v_at(x):
        return float(v_poly.eval_floats((x,)).real)

    def w_at(x):
        return float(w_poly.eval_floats((x,)).real)

    # box size from the integrated decay of the weight
    hb_max = max(hbars)
    target = -math.log(decay_threshold) * hb_max
    a = 0.5
    while a < 64.0:
        xs = np.linspace(0.0, a, 4001)
        vals = np.sqrt(np.maximum([v_at(x) for x in xs], 0.0))
        phi_a = float(np.trapezoid(vals, xs))
        xs_m = np.linspace(0.0, -a, 4001)
        vals_m = np.sqrt(np.maximum([v_at(x) for x in xs_m], 0.0))
        phi_ma = float(abs(np.trapezoid(vals_m, xs_m)))
        if min(phi_a, phi_ma) >= target:
            break
        a *= 1.5
    member = result.level.members[0]
    eig_index = member.alpha[0]

    def fd_eigenvalue(hbar: float, m: int) -> float:
        xs = np.linspace(-a, a, m + 2)[1:-1]
        dx = xs[1] - xs[0]
        diag = 2.0 * hbar**2 / dx**2 + np.array([v_at(x) for x in xs]) \
            + hbar * np.array([w_at(x) for x in xs])
        off = np.full(m - 1, -hbar**2 / dx**2)
        vals = eigh_tridiagonal(diag, off, select="i",
                                select_range=(0, eig_index + 2))[0]
        return float(vals[eig_index])

    series = result.eigenvalues[0]

    def one_hbar(hb: float):
        e1 = fd_eigenvalue(hb, grid)
        e2 = fd_eigenvalue(hb, 2 * grid)
        extrap = (4.0 * e2 - e1) / 3.0
        ok = abs(extrap - e2) <= 1e-3 * max(abs(extrap), hb)
        series_val = series.evaluate(hb, through=result.order + HalfInt(2)).real
        return abs(extrap - series_val), ok

    workers = max(1, int(os.environ.get("QMF_THREADS", "1")))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_hbar, hbars))
    else:
        results = [one_hbar(hb) for hb in hbars]
    errors = [r[0] for r in results]
    richardson_ok = all(r[1] for r in results)

    trivial = all(mode.is_zero(c) for _, c in series.items())
    data = {"hbars": list(hbars), "errors": errors}
    want = float(result.order.as_fraction()) + 1.5
    clamped = [max(e, 1e-300) for e in errors]
    slope = float(np.polyfit(np.log(hbars), np.log(clamped), 1)[0])
    data["slope"] = slope
    data["required_slope"] = want
    if trivial:
        # an identically vanishing series means the true eigenvalue is below
        # every power: demand super-power decay and smallness at the bottom
        smallest = min(errors)
        passed = richardson_ok and smallest <= 1e-6 and (slope >= want or max(errors) <= 1e-10)
        return VerificationReport(
            name="fd_crosscheck", passed=passed, order=result.order,
            max_residual=max(errors),
            detail=f"series is identically zero; decay slope {slope:.2f}, "
                   f"smallest error {smallest:.2e}",
            data=data)
    return VerificationReport(
        name="fd_crosscheck", passed=richardson_ok and slope >= want,
        order=result.order, max_residual=max(errors),
        detail=f"log-log error slope {slope:.3f} (required >= {want})", data=data)
