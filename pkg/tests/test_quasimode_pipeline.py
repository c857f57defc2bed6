from fractions import Fraction

import pytest

from qmf.series_algebra import EXACT, HI0, HalfInt, Poly, float_mode
from qmf.operator_calculus import JetProblem
from qmf.harmonic_oscillator import LevelNotFoundError
from qmf.quasimode_pipeline import (
    DegenerateLevelError,
    InsufficientOrderError,
    compute_quasimodes,
    crosscheck_eigenvalue_1d,
    eigen_residual,
    orthonormality_report,
    rs_oracle,
    transport_residual,
)

F = Fraction


def poly1(coeffs, mode=EXACT, n=1):
    return Poly(mode, n, {(d,) if n == 1 else tuple(d): mode.coeff(F(v))
                          for d, v in coeffs.items()})


def harmonic(D=10):
    return JetProblem.create(EXACT, 1, 1, D, (1,))


def cubic(c=1, D=10):
    return JetProblem.create(EXACT, 1, 1, D, (1,), V=poly1({2: 1, 3: c}))


def quartic(c=1, D=10):
    return JetProblem.create(EXACT, 1, 1, D, (1,), V=poly1({2: 1, 4: c}))


def witten(c=F(1), D=10):
    dphi = poly1({1: 1}) + poly1({2: 1}).scale(c / 2)
    V = dphi * dphi
    W = ((poly1({0: -1}) + poly1({1: -1}).scale(c),),)
    return JetProblem.create(EXACT, 1, 1, D, (1,), V=V, W=W)


def iso2d(c=F(1), D=10):
    V = Poly(EXACT, 2, {(2, 0): F(1), (0, 2): F(1), (3, 0): c, (1, 2): c})
    return JetProblem.create(EXACT, 2, 1, D, (1, 1), V=V)


class TestHarmonicExactness:
    def test_eigenvalue_is_exactly_h(self):
        res = compute_quasimodes(harmonic(), HalfInt(8), e0=1)
        (e,) = res.eigenvalues
        assert list(e.items()) == [(HalfInt(2), F(1))]

    def test_eigenfunction_is_constant(self):
        res = compute_quasimodes(harmonic(), HalfInt(8), e0=1)
        (a,) = res.eigenfunctions
        assert a.K == HI0
        assert list(a.coeffs) == [HI0]
        jet = a.at_relative(HI0)
        assert jet.degree() == 0

    def test_excited_level(self):
        res = compute_quasimodes(harmonic(), HalfInt(6), e0=3)
        (e,) = res.eigenvalues
        assert list(e.items()) == [(HalfInt(2), F(3))]
        assert res.level.K == HalfInt(1)


class TestCubicWell:
    def test_ground_energy_anchor(self):
        # ladder-operator second order sum: E = h (1 - (11/16) c^2 h + ...)
        for c in (1, 2):
            res = compute_quasimodes(cubic(c), HalfInt(4), e0=1)
            (e,) = res.eigenvalues
            inner = e.shift(HalfInt(-2))
            assert inner.coefficient(HI0) == 1
            assert inner.coefficient(HalfInt(1)) == 0  # parity
            assert inner.coefficient(HalfInt(2)) == F(-11, 16) * c * c

    def test_rs_oracle_matches_pipeline(self):
        res = compute_quasimodes(cubic(), HalfInt(4), e0=1)
        oracle = rs_oracle(cubic(), HalfInt(4), e0=1)
        inner = res.eigenvalues[0].shift(HalfInt(-2))
        assert inner.equals_through(oracle, HalfInt(4))

    def test_transport_residual_zero(self):
        res = compute_quasimodes(cubic(), HalfInt(4), e0=1)
        rep = transport_residual(res)
        assert rep.passed and rep.max_residual == 0.0

    def test_eigen_residual_zero(self):
        res = compute_quasimodes(cubic(), HalfInt(4), e0=1)
        rep = eigen_residual(res)
        assert rep.passed and rep.max_residual == 0.0

    def test_orthonormality_constants(self):
        res = compute_quasimodes(cubic(), HalfInt(4), e0=1)
        rep = orthonormality_report(res)
        assert rep.passed
        assert res.norm2_constants == [F(1)]  # ground member is monic with norm 1

    def test_float_mode_agrees(self):
        fm = float_mode()
        pf = JetProblem.create(fm, 1, 1, 10, (1.0,), V=poly1({2: 1, 3: 1}, fm))
        res_f = compute_quasimodes(pf, HalfInt(4), e0=1.0)
        res_e = compute_quasimodes(cubic(), HalfInt(4), e0=1)
        ef = res_f.eigenvalues[0]
        ee = res_e.eigenvalues[0]
        for t in [HalfInt(d) for d in range(2, 7)]:
            assert abs(ef.coefficient(t) - float(ee.coefficient(t))) < 1e-9


class TestQuarticWell:
    def test_ground_energy_anchor(self):
        # E = h (1 + (3/4) c h - (21/16) c^2 h^2 + ...)
        res = compute_quasimodes(quartic(), HalfInt(4), e0=1)
        inner = res.eigenvalues[0].shift(HalfInt(-2))
        assert inner.coefficient(HalfInt(2)) == F(3, 4)
        assert inner.coefficient(HalfInt(4)) == F(-21, 16)

    def test_rs_oracle_matches(self):
        inner = compute_quasimodes(quartic(), HalfInt(4), e0=1).eigenvalues[0].shift(HalfInt(-2))
        oracle = rs_oracle(quartic(), HalfInt(4), e0=1)
        assert inner.equals_through(oracle, HalfInt(4))

    def test_fd_crosscheck_small(self):
        res = compute_quasimodes(quartic(), HalfInt(4), e0=1)
        rep = crosscheck_eigenvalue_1d(quartic(), res, hbars=[0.2, 0.1, 0.05], grid=1024)
        assert rep.passed, rep.detail
        assert rep.data["slope"] >= 3.5

    def test_fd_crosscheck_witten_smallness(self):
        # zero series and a genuine double well: the numeric eigenvalue is
        # exponentially small, i.e. decays faster than any required power
        p = witten(F(1))
        res = compute_quasimodes(p, HalfInt(4), e0=0)
        rep = crosscheck_eigenvalue_1d(p, res, hbars=[0.2, 0.1], grid=1024)
        assert "identically zero" in rep.detail
        assert rep.passed, rep
        assert rep.data["slope"] > rep.data["required_slope"]


class TestWittenSupersymmetry:
    @pytest.mark.parametrize("c", [F(1, 2), F(1), F(2)])
    def test_zero_energy_and_constant_mode(self, c):
        res = compute_quasimodes(witten(c), HalfInt(8), e0=0)
        (e,) = res.eigenvalues
        assert e.is_zero()
        # the quasimode is the exact kernel section: a scalar series times
        # the constant (the series is the orthonormalizing factor)
        (a,) = res.eigenfunctions
        assert a.K == HI0
        for _, jet in a.items():
            assert jet.degree() == 0
        rep = transport_residual(res)
        assert rep.passed and rep.max_residual == 0.0


class TestDegenerate2D:
    def test_level_structure(self):
        res = compute_quasimodes(iso2d(), HalfInt(6), e0=4)
        assert res.level.m0 == 2
        assert res.level.K == HalfInt(1)
        assert res.level.parity == "odd"

    def test_parity_no_integer_terms_in_eigenfunctions(self):
        res = compute_quasimodes(iso2d(), HalfInt(6), e0=4)
        for a in res.eigenfunctions:
            for k in a.coeffs:
                absolute = k - a.K
                assert not absolute.is_integer

    def test_eigenvalues_real_integer_orders(self):
        res = compute_quasimodes(iso2d(), HalfInt(6), e0=4)
        for e in res.eigenvalues:
            assert e.is_real()
            for t, _ in e.items():
                assert t.is_integer  # h * (integer series)

    def test_orthonormality(self):
        res = compute_quasimodes(iso2d(), HalfInt(6), e0=4)
        rep = orthonormality_report(res)
        assert rep.passed
        assert res.norm2_constants == [F(1, 2), F(1, 2)]

    def test_split_happens(self):
        res = compute_quasimodes(iso2d(), HalfInt(6), e0=4)
        e1, e2 = [e.shift(HalfInt(-2)) for e in res.eigenvalues]
        assert not e1.equals_through(e2, HalfInt(6))

    def test_residuals(self):
        res = compute_quasimodes(iso2d(), HalfInt(4), e0=4)
        assert transport_residual(res).max_residual == 0.0
        assert eigen_residual(res).max_residual == 0.0


class TestErrors:
    def test_level_not_in_spectrum(self):
        with pytest.raises(LevelNotFoundError):
            compute_quasimodes(harmonic(), HalfInt(4), e0=2)

    def test_insufficient_jets(self):
        with pytest.raises(InsufficientOrderError) as ei:
            compute_quasimodes(cubic(D=4), HalfInt(8), e0=1)
        assert ei.value.required_D >= 8

    def test_rs_oracle_rejects_degenerate(self):
        with pytest.raises(DegenerateLevelError):
            rs_oracle(iso2d(), HalfInt(2), e0=4)


class TestLevelSelectionByIndex:
    def test_index_matches_value(self):
        r1 = compute_quasimodes(harmonic(), HalfInt(4), level_index=1)
        r2 = compute_quasimodes(harmonic(), HalfInt(4), e0=3)
        assert r1.eigenvalues[0] == r2.eigenvalues[0]
