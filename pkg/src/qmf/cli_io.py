"""Problem-spec files, presets, the command-line surface, and result documents.

The spec file is a line-oriented sectioned format: ``[section]`` headers,
``key = value`` pairs, and whitespace-separated data rows. Exact coefficients
are written as integers or fraction strings ``p/q``; decimal literals are
accepted in float mode only. Unknown sections or keys are rejected with the
offending line and column.

Commands (exit 0 success, 1 input error, 2 check failure):

    qmf compute    --spec F | --preset name[:k=v,...]  --order N
                   [--level E0 | --level-index i] [--out out.json]
    qmf verify     ... --checks all | transport,parity,...
    qmf spectrum   ... --degree D
    qmf crosscheck ... --hbar 0.2,0.1,0.05 --grid 4096 [--csv pts.csv]

Result documents are JSON with schema 1: half-integer exponents appear as
doubled integers, exact coefficients as fraction strings, so exact-mode
output is byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction

from .series_algebra import EXACT, HI0, HalfInt, Poly, float_mode
from .operator_calculus import EikonalError, JetProblem, ProblemValidationError
from .harmonic_oscillator import LevelNotFoundError, build_spectrum
from .projection_engine import projector_diagnostics
from .formal_diagonalization import ExactSplitUnavailable, SplitAmbiguityError, parity_filter
from .quasimode_pipeline import (
    DegenerateLevelError,
    InsufficientOrderError,
    VerificationReport,
    compute_quasimodes,
    crosscheck_eigenvalue_1d,
    eigen_residual,
    orthonormality_report,
    rs_oracle,
    transport_residual,
)

__all__ = [
    "SpecFileError",
    "ParsedSpec",
    "parse_problem_spec",
    "serialize_problem_spec",
    "preset_problem",
    "PRESETS",
    "result_document",
    "run_command",
    "main",
]

SCHEMA_VERSION = 1
TOOL_NAME = "qmf"


class SpecFileError(ValueError):
    """Parse or validation failure, with source location when available."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        loc = f" (line {line}" + (f", col {col})" if col is not None else ")") if line else ""
        super().__init__(message + loc)


_KNOWN_SECTIONS = {"problem", "lambda", "potential", "metric_inverse",
                   "endomorphism", "connection", "gamma", "level", "checks"}
_PROBLEM_KEYS = {"n", "rank", "mode", "order", "degree"}
_LEVEL_KEYS = {"value", "index"}
_CHECK_KEYS = {"transport", "parity", "orthonormality", "eigen_residual",
               "rs", "projector", "tolerance"}
_DEFAULT_CHECKS = {"transport": True, "parity": True, "orthonormality": True,
                   "eigen_residual": True, "rs": "auto", "projector": False,
                   "tolerance": 1e-9}


@dataclass
class ParsedSpec:
    """A validated problem plus the run directives carried by the file."""

    problem: JetProblem
    mode_name: str
    order: HalfInt
    level_value: object | None
    level_index: int | None
    checks: dict = field(default_factory=dict)


def _parse_coeff(token: str, mode, line: int, col: int):
    try:
        if "/" in token or token.lstrip("+-").isdigit():
            return mode.coeff(Fraction(token))
        if mode.name == "exact":
            raise SpecFileError(
                f"decimal literal {token!r} needs float mode", line, col)
        return mode.coeff(float(token))
    except SpecFileError:
        raise
    except (ValueError, ZeroDivisionError):
        raise SpecFileError(f"cannot parse coefficient {token!r}", line, col) from None


def _parse_multiindex(tokens, n, line, col):
    if len(tokens) != n:
        raise SpecFileError(f"expected {n} multi-index entries, got {len(tokens)}", line, col)
    try:
        alpha = tuple(int(t) for t in tokens)
    except ValueError:
        raise SpecFileError("multi-index entries must be integers", line, col) from None
    if any(a < 0 for a in alpha):
        raise SpecFileError("multi-index entries must be nonnegative", line, col)
    return alpha


def parse_problem_spec(text: str) -> ParsedSpec:
    """Parse and validate a problem-spec document.

    Raises ``SpecFileError`` with line/column on syntax problems and with the
    violated structural requirement's message on semantic problems.
    """
    sections: dict[str, list] = {}
    keyvals: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        s = stripped.strip()
        if s.startswith("["):
            if not s.endswith("]"):
                raise SpecFileError("unterminated section header", lineno, stripped.index("[") + 1)
            name = s[1:-1].strip()
            if name not in _KNOWN_SECTIONS:
                raise SpecFileError(f"unknown section [{name}]", lineno, 1)
            if name in sections:
                raise SpecFileError(f"duplicate section [{name}]", lineno, 1)
            sections[name] = []
            keyvals[name] = {}
            current = name
            continue
        if current is None:
            raise SpecFileError("data before any section header", lineno, 1)
        if "=" in s:
            key, _, val = s.partition("=")
            key = key.strip()
            val = val.strip()
            allowed = {"problem": _PROBLEM_KEYS, "level": _LEVEL_KEYS,
                       "checks": _CHECK_KEYS}.get(current)
            if allowed is None:
                raise SpecFileError(f"key-value entries not allowed in [{current}]", lineno, 1)
            if key not in allowed:
                raise SpecFileError(f"unknown key {key!r} in [{current}]", lineno, 1)
            if key in keyvals[current]:
                raise SpecFileError(f"duplicate key {key!r}", lineno, 1)
            keyvals[current][key] = (val, lineno)
        else:
            sections[current].append((s.split(), lineno))

    if "problem" not in sections:
        raise SpecFileError("missing [problem] section")
    if "lambda" not in sections:
        raise SpecFileError("missing [lambda] section")

    pk = keyvals["problem"]

    def need(key):
        if key not in pk:
            raise SpecFileError(f"[problem] is missing {key!r}")
        return pk[key]

    try:
        n = int(need("n")[0])
        rank = int(need("rank")[0])
    except ValueError:
        raise SpecFileError("n and rank must be integers") from None
    mode_name = pk.get("mode", ("exact", 0))[0]
    if mode_name not in ("exact", "float"):
        raise SpecFileError(f"mode must be 'exact' or 'float', got {mode_name!r}",
                            pk.get("mode", (None, None))[1])
    tol = _DEFAULT_CHECKS["tolerance"]
    if "checks" in keyvals and "tolerance" in keyvals["checks"]:
        tol = float(keyvals["checks"]["tolerance"][0])
    mode = EXACT if mode_name == "exact" else float_mode(min(tol, 1e-12))
    try:
        order = HalfInt.parse(need("order")[0])
    except ValueError:
        raise SpecFileError("order must be an integer or half-integer like 5/2") from None
    if order < HI0:
        raise SpecFileError("order must be nonnegative")
    degree = None
    if "degree" in pk:
        degree = int(pk["degree"][0])

    lam = []
    for tokens, lineno in sections["lambda"]:
        for t in tokens:
            lam.append(_parse_coeff(t, mode, lineno, 1))
    if len(lam) != n:
        raise SpecFileError(f"[lambda] must list exactly n = {n} frequencies, got {len(lam)}")

    if degree is None:
        degree = 2 * ((order.doubled + 1) // 2) + 4

    v_poly = Poly.zero(mode, n)
    for tokens, lineno in sections.get("potential", []):
        if len(tokens) != n + 1:
            raise SpecFileError(f"potential rows need {n} index entries and a coefficient", lineno, 1)
        alpha = _parse_multiindex(tokens[:n], n, lineno, 1)
        c = _parse_coeff(tokens[n], mode, lineno, 1)
        v_poly = v_poly + Poly.monomial(mode, n, alpha, c)

    g_inv = None
    rows = sections.get("metric_inverse", [])
    if rows:
        entries = [[Poly.zero(mode, n) for _ in range(n)] for _ in range(n)]
        for i in range(n):
            entries[i][i] = entries[i][i] + Poly.const(mode, n, 1)
        for tokens, lineno in rows:
            if len(tokens) != n + 3:
                raise SpecFileError(
                    f"metric rows are: i j, {n} index entries, coefficient", lineno, 1)
            i, j = int(tokens[0]) - 1, int(tokens[1]) - 1
            if not (0 <= i < n and 0 <= j < n):
                raise SpecFileError("metric entry indices out of range", lineno, 1)
            alpha = _parse_multiindex(tokens[2:2 + n], n, lineno, 1)
            c = _parse_coeff(tokens[-1], mode, lineno, 1)
            mono = Poly.monomial(mode, n, alpha, c)
            entries[i][j] = entries[i][j] + mono
            if i != j:
                entries[j][i] = entries[j][i] + mono
        g_inv = tuple(tuple(r) for r in entries)

    def endo_from(rows, name, implied_identity=False):
        if not rows and not implied_identity:
            return None
        entries = [[Poly.zero(mode, n) for _ in range(rank)] for _ in range(rank)]
        if implied_identity:
            for k in range(rank):
                entries[k][k] = entries[k][k] + Poly.const(mode, n, 1)
        for tokens, lineno in rows:
            if len(tokens) != n + 3:
                raise SpecFileError(
                    f"{name} rows are: k l, {n} index entries, coefficient", lineno, 1)
            k, l = int(tokens[0]) - 1, int(tokens[1]) - 1
            if not (0 <= k < rank and 0 <= l < rank):
                raise SpecFileError(f"{name} fiber indices out of range", lineno, 1)
            alpha = _parse_multiindex(tokens[2:2 + n], n, lineno, 1)
            c = _parse_coeff(tokens[-1], mode, lineno, 1)
            entries[k][l] = entries[k][l] + Poly.monomial(mode, n, alpha, c)
            if k != l:
                entries[l][k] = entries[l][k] + Poly.monomial(mode, n, alpha, mode.conj(c))
        return tuple(tuple(r) for r in entries)

    w_mat = endo_from(sections.get("endomorphism", []), "endomorphism")
    gamma_mat = endo_from(sections.get("gamma", []), "gamma",
                          implied_identity=bool(sections.get("gamma")))

    gamma_conn = None
    rows = sections.get("connection", [])
    if rows:
        mats = [[[Poly.zero(mode, n) for _ in range(rank)] for _ in range(rank)]
                for _ in range(n)]
        for tokens, lineno in rows:
            if len(tokens) != n + 4:
                raise SpecFileError(
                    f"connection rows are: direction, k l, {n} index entries, coefficient",
                    lineno, 1)
            d = int(tokens[0]) - 1
            k, l = int(tokens[1]) - 1, int(tokens[2]) - 1
            if not (0 <= d < n and 0 <= k < rank and 0 <= l < rank):
                raise SpecFileError("connection indices out of range", lineno, 1)
            alpha = _parse_multiindex(tokens[3:3 + n], n, lineno, 1)
            c = _parse_coeff(tokens[-1], mode, lineno, 1)
            mats[d][k][l] = mats[d][k][l] + Poly.monomial(mode, n, alpha, c)
            if k != l:
                mats[d][l][k] = mats[d][l][k] + Poly.monomial(mode, n, alpha, -mode.conj(c))
            elif not mode.is_zero(c + mode.conj(c)):
                raise SpecFileError("diagonal connection entries must be imaginary (skew)",
                                    lineno, 1)
        gamma_conn = tuple(tuple(tuple(r) for r in m) for m in mats)

    level_value = None
    level_index = None
    lk = keyvals.get("level", {})
    if "value" in lk and "index" in lk:
        raise SpecFileError("[level] takes either value or index, not both", lk["value"][1])
    if "value" in lk:
        tok, lineno = lk["value"]
        level_value = _parse_coeff(tok, mode, lineno, 1)
    if "index" in lk:
        level_index = int(lk["index"][0])

    checks = dict(_DEFAULT_CHECKS)
    for key, (val, lineno) in keyvals.get("checks", {}).items():
        if key == "tolerance":
            checks[key] = float(val)
        elif key == "rs":
            if val not in ("on", "off", "auto"):
                raise SpecFileError("rs check must be on, off, or auto", lineno)
            checks[key] = {"on": True, "off": False, "auto": "auto"}[val]
        else:
            if val not in ("on", "off", "true", "false"):
                raise SpecFileError(f"check {key} must be on or off", lineno)
            checks[key] = val in ("on", "true")

    try:
        problem = JetProblem.create(
            mode, n, rank, degree, lam,
            V=None if v_poly.is_zero() else v_poly,
            g_inv=g_inv, W=w_mat, Gamma=gamma_conn, gamma=gamma_mat)
    except ProblemValidationError as exc:
        raise SpecFileError(str(exc)) from exc

    return ParsedSpec(problem=problem, mode_name=mode_name, order=order,
                      level_value=level_value, level_index=level_index, checks=checks)


def serialize_problem_spec(spec: ParsedSpec) -> str:
    """Spec-file text whose parse reproduces the given problem exactly."""
    p = spec.problem
    mode = p.mode
    out = ["[problem]", f"n = {p.n}", f"rank = {p.rank}", f"mode = {spec.mode_name}",
           f"order = {spec.order}", f"degree = {p.D}", "", "[lambda]"]

    def fmt(c):
        return str(c) if mode.name == "exact" else repr(mode.real(c))

    for l in p.lam:
        out.append(fmt(l))
    rows = []
    for alpha, c in sorted(p.V.terms.items()):
        rows.append(" ".join(str(a) for a in alpha) + f"  {fmt(c)}")
    if rows:
        out += ["", "[potential]"] + rows
    rows = []
    for i in range(p.n):
        for j in range(i, p.n):
            for alpha, c in sorted(p.g_inv[i][j].terms.items()):
                if sum(alpha) == 0 and i == j:
                    continue
                rows.append(f"{i + 1} {j + 1}  " + " ".join(str(a) for a in alpha) + f"  {fmt(c)}")
    if rows:
        out += ["", "[metric_inverse]"] + rows
    rows = []
    for k in range(p.rank):
        for l in range(k, p.rank):
            for alpha, c in sorted(p.W[k][l].terms.items()):
                rows.append(f"{k + 1} {l + 1}  " + " ".join(str(a) for a in alpha) + f"  {fmt(c)}")
    if rows:
        out += ["", "[endomorphism]"] + rows
    rows = []
    for d in range(p.n):
        for k in range(p.rank):
            for l in range(k, p.rank):
                for alpha, c in sorted(p.Gamma[d][k][l].terms.items()):
                    if k == l and mode.is_zero(c):
                        continue
                    rows.append(f"{d + 1} {k + 1} {l + 1}  "
                                + " ".join(str(a) for a in alpha) + f"  {fmt(c)}")
    if rows:
        out += ["", "[connection]"] + rows
    if p.gamma is not None:
        rows = []
        for k in range(p.rank):
            for l in range(k, p.rank):
                for alpha, c in sorted(p.gamma[k][l].terms.items()):
                    if sum(alpha) == 0 and k == l:
                        continue
                    rows.append(f"{k + 1} {l + 1}  "
                                + " ".join(str(a) for a in alpha) + f"  {fmt(c)}")
        out += ["", "[gamma]"] + rows
    out += ["", "[level]"]
    if spec.level_value is not None:
        out.append(f"value = {fmt(spec.level_value)}")
    elif spec.level_index is not None:
        out.append(f"index = {spec.level_index}")
    else:
        out.append("index = 0")
    out += ["", "[checks]"]
    for key in ("transport", "parity", "orthonormality", "eigen_residual", "projector"):
        out.append(f"{key} = {'on' if spec.checks.get(key, False) else 'off'}")
    rs = spec.checks.get("rs", "auto")
    out.append(f"rs = {'auto' if rs == 'auto' else ('on' if rs else 'off')}")
    out.append(f"tolerance = {spec.checks.get('tolerance', 1e-9)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Presets


def _preset_harmonic(params, mode):
    n = int(params.pop("n", 1))
    lam = params.pop("lam", "1")
    lams = [Fraction(t) for t in lam.split("+")]
    if len(lams) == 1:
        lams = lams * n
    mus = params.pop("mu", None)
    mus = [Fraction(t) for t in mus.split("+")] if mus else [Fraction(0)]
    rank = len(mus)
    w = None
    if any(m != 0 for m in mus):
        w = tuple(tuple(Poly.const(mode, n, mus[k]) if k == l else Poly.zero(mode, n)
                        for l in range(rank)) for k in range(rank))
    problem = JetProblem.create(mode, n, rank, 8, [mode.coeff(l) for l in lams], W=w)
    e0 = sum(lams) + mus[0]
    return problem, mode.coeff(e0), None


def _preset_cubic1d(params, mode):
    c = Fraction(params.pop("c", "1"))
    v = Poly(mode, 1, {(2,): mode.coeff(1), (3,): mode.coeff(c)})
    problem = JetProblem.create(mode, 1, 1, 12, (mode.coeff(1),), V=v)
    return problem, mode.coeff(1), None


def _preset_quartic1d(params, mode):
    c = Fraction(params.pop("c", "1"))
    v = Poly(mode, 1, {(2,): mode.coeff(1), (4,): mode.coeff(c)})
    problem = JetProblem.create(mode, 1, 1, 12, (mode.coeff(1),), V=v)
    return problem, mode.coeff(1), None


def _preset_witten1d(params, mode):
    c = Fraction(params.pop("c", "1"))
    # phase x^2/2 + c x^3/6: potential (phase')^2, endomorphism -phase''
    dphi = Poly(mode, 1, {(1,): mode.coeff(1), (2,): mode.coeff(c / 2)})
    v = dphi * dphi
    w = ((Poly(mode, 1, {(0,): mode.coeff(-1), (1,): mode.coeff(-c)}),),)
    problem = JetProblem.create(mode, 1, 1, 12, (mode.coeff(1),), V=v, W=w)
    return problem, mode.coeff(0), None


def _preset_iso2d(params, mode):
    c = Fraction(params.pop("c", "1"))
    v = Poly(mode, 2, {(2, 0): mode.coeff(1), (0, 2): mode.coeff(1),
                       (3, 0): mode.coeff(c), (1, 2): mode.coeff(c)})
    problem = JetProblem.create(mode, 2, 1, 10, (mode.coeff(1), mode.coeff(1)), V=v)
    return problem, mode.coeff(4), None


def _preset_rank2(params, mode):
    # frequency 2 well with a mixed-parity degenerate level at 6:
    # (2*1+1)*2 + 0 = 2 + 4; the off-diagonal endomorphism slope couples the
    # members at half order with a rational gap, the connection exercises the
    # bundle machinery
    c = Fraction(params.pop("c", "1/2"))
    w_slope = Fraction(params.pop("w", "1"))
    g_slope = Fraction(params.pop("g", "1/2"))
    v = Poly(mode, 1, {(2,): mode.coeff(4), (3,): mode.coeff(c)})
    z = Poly.zero(mode, 1)
    w = (
        (z, Poly(mode, 1, {(1,): mode.coeff(w_slope)})),
        (Poly(mode, 1, {(1,): mode.coeff(w_slope)}), Poly.const(mode, 1, 4)),
    )
    gam = None
    if g_slope != 0:
        gmat = (
            (z, Poly(mode, 1, {(1,): mode.coeff(g_slope)})),
            (Poly(mode, 1, {(1,): mode.coeff(-g_slope)}), z),
        )
        gam = (gmat,)
    problem = JetProblem.create(mode, 1, 2, 12, (mode.coeff(2),), V=v, W=w, Gamma=gam)
    return problem, mode.coeff(6), None


PRESETS = {
    "harmonic": _preset_harmonic,
    "cubic1d": _preset_cubic1d,
    "quartic1d": _preset_quartic1d,
    "witten1d": _preset_witten1d,
    "iso2d": _preset_iso2d,
    "rank2": _preset_rank2,
}


def preset_problem(spec: str, mode_name: str = "exact",
                   order=HalfInt(6)) -> ParsedSpec:
    """Expand 'name' or 'name:key=val,key=val' into a validated problem."""
    name, _, tail = spec.partition(":")
    if name not in PRESETS:
        raise SpecFileError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    params = {}
    if tail:
        for item in tail.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise SpecFileError(f"preset parameter {item!r} is not key=value")
            params[key.strip()] = val.strip()
    mode = EXACT if mode_name == "exact" else float_mode()
    problem, e0, index = PRESETS[name](params, mode)
    if params:
        raise SpecFileError(f"unknown preset parameters: {', '.join(sorted(params))}")
    order = HalfInt.of(order)
    if problem.D < order.doubled + 2:
        problem = JetProblem.create(mode, problem.n, problem.rank, order.doubled + 4,
                                    problem.lam, V=problem.V, g_inv=problem.g_inv,
                                    W=problem.W, Gamma=problem.Gamma, gamma=problem.gamma)
    return ParsedSpec(problem=problem, mode_name=mode_name, order=order,
                      level_value=e0, level_index=index, checks=dict(_DEFAULT_CHECKS))


# ---------------------------------------------------------------------------
# Result documents


def _series_json(series, mode):
    return [[t.doubled, mode.to_json(c)] for t, c in series.items()]


def result_document(spec: ParsedSpec, result, reports=None) -> dict:
    mode = spec.problem.mode
    lvl = result.level
    doc = {
        "schema": SCHEMA_VERSION,
        "tool": {"name": TOOL_NAME, "version": _version()},
        "mode": spec.mode_name,
        "order_doubled": result.order.doubled,
        "problem": {
            "n": spec.problem.n,
            "rank": spec.problem.rank,
            "D": spec.problem.D,
            "lambda": [mode.to_json(l) for l in spec.problem.lam],
            "mu": [mode.to_json(m) for m in spec.problem.mu],
        },
        "level": {
            "E0": mode.to_json(lvl.E0),
            "m0": lvl.m0,
            "K_doubled": lvl.K.doubled,
            "parity": lvl.parity,
            "members": [{"alpha": list(m.alpha), "k": m.k + 1} for m in lvl.members],
        },
        "normalization_prefactor_exponent_doubled": -spec.problem.n,
        "eigenvalues": [_series_json(e, mode) for e in result.eigenvalues],
        "eigenfunctions": [],
        "checks": [],
    }
    for a, n2 in zip(result.eigenfunctions, result.norm2_constants):
        terms = []
        for k, jet in a.items():
            for alpha in sorted({al for comp in jet.components for al in comp.terms}):
                col = [mode.to_json(comp.coefficient(alpha)) for comp in jet.components]
                terms.append([k.doubled, list(alpha), col])
        doc["eigenfunctions"].append({
            "K_doubled": a.K.doubled,
            "norm2_constant": mode.to_json(n2),
            "normalized": result.normalized,
            "terms": terms,
        })
    for rep in reports or []:
        doc["checks"].append({
            "name": rep.name,
            "passed": bool(rep.passed),
            "order_doubled": rep.order.doubled if rep.order is not None else None,
            "max_residual": float(rep.max_residual),
            "detail": rep.detail,
        })
    return doc


def _version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# Commands


def _load_spec(args) -> ParsedSpec:
    if getattr(args, "preset", None):
        spec = preset_problem(args.preset, mode_name=args.mode or "exact",
                              order=HalfInt.parse(args.order) if args.order else HalfInt(6))
    elif getattr(args, "spec", None):
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = parse_problem_spec(fh.read())
        if args.mode and args.mode != spec.mode_name:
            raise SpecFileError("--mode conflicts with the spec file's mode; edit the file")
        if args.order:
            spec.order = HalfInt.parse(args.order)
    else:
        raise SpecFileError("one of --spec or --preset is required")
    if getattr(args, "level", None) is not None:
        mode = spec.problem.mode
        spec.level_value = _parse_coeff(args.level, mode, 0, 0)
        spec.level_index = None
    if getattr(args, "level_index", None) is not None:
        spec.level_index = args.level_index
        spec.level_value = None
    return spec


def _compute(spec: ParsedSpec):
    return compute_quasimodes(spec.problem, spec.order, e0=spec.level_value,
                              level_index=spec.level_index,
                              rel_tol=spec.checks.get("tolerance", 1e-9))


def _run_checks(spec: ParsedSpec, result) -> list:
    reports = []
    checks = spec.checks
    tol = checks.get("tolerance", 1e-9)
    if checks.get("transport", True):
        reports.append(transport_residual(result))
    if checks.get("eigen_residual", True):
        reports.append(eigen_residual(result))
    if checks.get("orthonormality", True):
        reports.append(orthonormality_report(result))
    if checks.get("parity", True):
        class _Wrap:
            eigenvalues = [e.shift(HalfInt(-2)) for e in result.eigenvalues]
        mode = spec.problem.mode
        rep = parity_filter(_Wrap(), result.level,
                            tol=0.0 if mode.name == "exact" else tol)
        reports.append(VerificationReport(
            name="parity", passed=rep.ok, order=result.order,
            max_residual=rep.worst, detail=rep.detail))
    rs_flag = checks.get("rs", "auto")
    if rs_flag is True or (rs_flag == "auto" and result.level.m0 == 1):
        oracle = rs_oracle(spec.problem, result.order, e0=result.level.E0)
        mode = spec.problem.mode
        inner = result.eigenvalues[0].shift(HalfInt(-2))
        diff = inner - oracle
        worst = diff.max_abs_coeff(result.order)
        ok = worst <= (0.0 if mode.name == "exact" else 1e-10)
        reports.append(VerificationReport(
            name="rs_oracle", passed=ok, order=result.order, max_residual=worst,
            detail="pipeline eigenvalue equals the perturbation recursion"))
    if checks.get("projector", False):
        ctx = result.context
        omega = ctx.omega
        from .projection_engine import build_projector
        proj = build_projector(ctx.family, ctx.basis, ctx.table, ctx.level, result.order)
        rep = projector_diagnostics(proj, omega, ctx.gamma)
        mode = spec.problem.mode
        ptol = 0.0 if mode.name == "exact" else tol
        reports.append(VerificationReport(
            name="projector", passed=rep.passed(ptol), order=result.order,
            max_residual=max(rep.idempotency_defect, rep.commutation_defect,
                             rep.symmetry_defect, rep.rank_residual),
            detail=f"rank {rep.rank}/{rep.rank_expected}"))
    return reports


def _print_summary(spec: ParsedSpec, result, reports, out=None):
    out = out if out is not None else sys.stdout
    lvl = result.level
    mode = spec.problem.mode
    print(f"level E0 = {mode.to_json(lvl.E0)}  multiplicity {lvl.m0}  "
          f"offset 2K = {lvl.K.doubled}  parity {lvl.parity}", file=out)
    for i, e in enumerate(result.eigenvalues, start=1):
        bits = [f"h^{t} * {mode.to_json(c)}" for t, c in e.items()]
        print(f"  E_{i} = " + (" + ".join(bits) if bits else "0"), file=out)
    for rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(f"  [{status}] {rep.name}: max residual {rep.max_residual:.3e}  {rep.detail}",
              file=out)


def run_command(argv) -> int:
    """Dispatch a command line; returns the process exit status."""
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="formal quasimode expansions near a potential minimum")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--spec", help="problem spec file")
        p.add_argument("--preset", help="preset name, e.g. witten1d:c=1")
        p.add_argument("--order", help="series order N (integer or p/2)")
        p.add_argument("--mode", choices=["exact", "float"])
        p.add_argument("--level", help="model eigenvalue selecting the level")
        p.add_argument("--level-index", type=int, dest="level_index")
        p.add_argument("--out", help="write the JSON result document here")

    p_compute = sub.add_parser("compute", help="compute the quasimode series")
    common(p_compute)
    p_verify = sub.add_parser("verify", help="compute and run verification checks")
    common(p_verify)
    p_verify.add_argument("--checks", default="all",
                          help="all or a comma list: transport,parity,orthonormality,"
                               "eigen_residual,rs,projector")
    p_spec = sub.add_parser("spectrum", help="tabulate the model spectrum")
    common(p_spec)
    p_spec.add_argument("--degree", type=int, default=6)
    p_cross = sub.add_parser("crosscheck", help="finite-difference eigenvalue comparison")
    common(p_cross)
    p_cross.add_argument("--hbar", default="0.2,0.1,0.05")
    p_cross.add_argument("--grid", type=int, default=4096)
    p_cross.add_argument("--csv", help="write (hbar, error) pairs here")

    args = parser.parse_args(argv)
    os.environ.setdefault("QMF_THREADS", "1")

    try:
        spec = _load_spec(args)
    except (SpecFileError, ProblemValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "spectrum":
            table = build_spectrum(spec.problem.mode, spec.problem.lam, spec.problem.mu,
                                   args.degree, n=spec.problem.n, rank=spec.problem.rank)
            mode = spec.problem.mode
            doc = {"schema": SCHEMA_VERSION, "degree": args.degree,
                   "entries": [{"alpha": list(i.alpha), "k": i.k + 1,
                                "E": mode.to_json(e)}
                               for i, e in table.sorted_entries()]}
            for row in doc["entries"]:
                print(f"  alpha={tuple(row['alpha'])} k={row['k']}  E = {row['E']}")
            if args.out:
                _write_json(args.out, doc)
            return 0

        if args.command == "compute":
            result = _compute(spec)
            reports = []
        elif args.command == "verify":
            wanted = args.checks
            if wanted != "all":
                names = {w.strip() for w in wanted.split(",")}
                for key in ("transport", "parity", "orthonormality", "eigen_residual",
                            "projector"):
                    spec.checks[key] = key in names
                spec.checks["rs"] = True if "rs" in names else False
            else:
                spec.checks["projector"] = True
            result = _compute(spec)
            reports = _run_checks(spec, result)
        else:  # crosscheck
            result = _compute(spec)
            hbars = [float(t) for t in args.hbar.split(",")]
            rep = crosscheck_eigenvalue_1d(spec.problem, result, hbars, grid=args.grid)
            reports = [rep]
            if args.csv:
                with open(args.csv, "w", encoding="utf-8") as fh:
                    fh.write("hbar,error\n")
                    for hb, err in zip(rep.data["hbars"], rep.data["errors"]):
                        fh.write(f"{hb},{err}\n")
    except (LevelNotFoundError, InsufficientOrderError, DegenerateLevelError,
            EikonalError, ProblemValidationError, ExactSplitUnavailable,
            SplitAmbiguityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    _print_summary(spec, result, reports)
    if args.out:
        _write_json(args.out, result_document(spec, result, reports))
    if any(not rep.passed for rep in reports):
        return 2
    return 0


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
