from fractions import Fraction

import pytest

from qmf.series_algebra import EXACT, FiberPoly, HI0, HalfInt, Poly, float_mode
from qmf.operator_calculus import (
    DiffOpJet,
    EikonalError,
    GradedDiffOp,
    JetProblem,
    ProblemValidationError,
    apply_diffop,
    conjugate_hamiltonian,
    metric_density_jet,
    rescale_operator,
    solve_eikonal,
)

F = Fraction


def poly1(coeffs):
    """1-D polynomial from {degree: value}."""
    return Poly(EXACT, 1, {(d,): F(v) for d, v in coeffs.items()})


def scalar_problem(vhigher, D=8, lam=(1,), n=1, g_inv=None):
    V = None
    if vhigher is not None:
        V = vhigher
    return JetProblem.create(EXACT, n, 1, D, lam, V=V, g_inv=g_inv)


def eikonal_oracle_1d(c, through):
    """Independent series for the phase of x^2 + c x^3: integral of t*sqrt(1+ct).

    sqrt(1+u) is expanded binomially, multiplied by t, and integrated
    term by term; all arithmetic in exact rationals.
    """
    terms = {}
    coeff = F(1)
    # sqrt(1+ct) = sum_k binom(1/2,k) c^k t^k
    for k in range(0, through):
        if k > 0:
            coeff = coeff * (F(1, 2) - (k - 1)) / k
        ck = coeff * F(c) ** k
        # integrate t^(k+1): x^(k+2)/(k+2)
        if k + 2 <= through:
            terms[k + 2] = ck / (k + 2)
    return poly1(terms)


class TestEikonal:
    def test_harmonic_is_exact(self):
        p = scalar_problem(None)
        phi = solve_eikonal(p)
        assert phi.poly == poly1({2: F(1, 2)})

    def test_cubic_matches_integral_oracle(self):
        c = 1
        p = scalar_problem(poly1({2: 1, 3: c}), D=8)
        phi = solve_eikonal(p)
        oracle = eikonal_oracle_1d(c, 10)
        assert phi.poly.truncate_degree(10) == oracle.truncate_degree(10)
        # spot values: x^2/2 + x^3/6 - x^4/32 + ...
        assert phi.poly.coefficient((3,)) == F(1, 6)
        assert phi.poly.coefficient((4,)) == F(-1, 32)

    def test_cubic_square_identity(self):
        p = scalar_problem(poly1({2: 1, 3: 1}), D=8)
        phi = solve_eikonal(p)
        dphi = phi.poly.diff(0)
        assert (dphi * dphi - p.V).truncate_degree(p.D + 2).is_zero()

    def test_decoupled_2d(self):
        p = JetProblem.create(EXACT, 2, 1, 6, (1, 2))
        phi = solve_eikonal(p)
        want = Poly(EXACT, 2, {(2, 0): F(1, 2), (0, 2): F(1)})
        assert phi.poly == want

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ProblemValidationError):
            JetProblem.create(EXACT, 1, 1, 4, (0,))

    def test_rejects_unnormalized_quadratic(self):
        with pytest.raises(ProblemValidationError):
            JetProblem.create(EXACT, 1, 1, 4, (1,), V=poly1({2: 2}))

    def test_curved_metric_eikonal(self):
        # g^11 = 1 + a x^2: residual must still vanish through D + 2
        a = F(1, 4)
        g = ((poly1({0: 1, 2: a}),),)
        p = scalar_problem(poly1({2: 1, 3: 1}), D=6, g_inv=g)
        phi = solve_eikonal(p)
        dphi = phi.poly.diff(0)
        res = (g[0][0] * dphi * dphi - p.V).truncate_degree(p.D + 2)
        assert res.is_zero()


def mono_fiber(alpha, value=1, rank=1, k=0, n=None):
    n = n if n is not None else len(alpha)
    return FiberPoly.unit(Poly.monomial(EXACT, n, alpha, value), rank, k)


class TestConjugation:
    def test_harmonic_transport_operator(self):
        p = scalar_problem(None)
        phi = solve_eikonal(p)
        conj = conjugate_hamiltonian(p, phi)
        # second-order part is -d^2, transport part is 2x d + 1
        two_x_d = conj.hbar1.apply(mono_fiber((1,)))
        assert two_x_d == mono_fiber((1,), 3)  # (2x d + 1) x = 3x
        assert conj.hbar1.apply(mono_fiber((0,))) == mono_fiber((0,))
        lap = conj.hbar2.apply(mono_fiber((2,)))
        assert lap == mono_fiber((0,), -2)

    def test_cubic_degree_one_piece(self):
        c = F(1)
        p = scalar_problem(poly1({2: 1, 3: c}), D=8)
        phi = solve_eikonal(p)
        conj = conjugate_hamiltonian(p, phi)
        a1 = conj.graded_hbar1[1]
        # degree-1 transport piece c*(x^2 d + x): check on 1 and on x
        assert a1.apply(mono_fiber((0,))) == mono_fiber((1,), c)
        assert a1.apply(mono_fiber((1,))) == mono_fiber((2,), 2 * c)

    def test_witten_kernel_identity(self):
        # V = (phi')^2, W = -phi'' for phi = x^2/2 + x^3/6:
        # the transport operator annihilates constants identically
        c = F(1)
        dphi = poly1({1: 1, 2: c / 2})
        V = dphi * dphi
        W = ((poly1({0: -1, 1: -c}),),)
        p = JetProblem.create(EXACT, 1, 1, 8, (1,), V=V, W=W)
        phi = solve_eikonal(p)
        assert phi.poly == poly1({2: F(1, 2), 3: c / 6})
        conj = conjugate_hamiltonian(p, phi)
        assert conj.hbar1.apply(mono_fiber((0,))).is_zero()

    def test_eikonal_residual_rejected(self):
        p = scalar_problem(poly1({2: 1, 3: 1}), D=6)
        from qmf.operator_calculus import ScalarJet
        bad_phi = ScalarJet(poly1({2: F(1, 2)}), 8)  # ignores the cubic term
        with pytest.raises(EikonalError):
            conjugate_hamiltonian(p, bad_phi)


class TestRescaledFamily:
    def q0_of(self, p):
        phi = solve_eikonal(p)
        fam = rescale_operator(conjugate_hamiltonian(p, phi))
        return fam

    def test_harmonic_q0_and_vanishing_tail(self):
        p = scalar_problem(None)
        fam = self.q0_of(p)
        q0 = fam.get(HI0)
        # Q0 = -d^2 + 2y d + 1 on scalars with unit frequency
        assert q0.apply(mono_fiber((0,))) == mono_fiber((0,))
        assert q0.apply(mono_fiber((1,))) == mono_fiber((1,), 3)
        q2 = q0.apply(mono_fiber((2,)))
        assert q2 == mono_fiber((2,), 5) + mono_fiber((0,), -2)
        for j in fam.orders():
            if j != HI0:
                assert fam.get(j).is_zero()

    def test_cubic_half_order_piece(self):
        c = F(1)
        p = scalar_problem(poly1({2: 1, 3: c}), D=8)
        fam = self.q0_of(p)
        q_half = fam.get(HalfInt(1))
        # c (y^2 d + y) in the blown-up variable
        assert q_half.apply(mono_fiber((0,))) == mono_fiber((1,), c)
        assert q_half.apply(mono_fiber((1,))) == mono_fiber((2,), 2 * c)

    def test_rank2_w_shift(self):
        W = (
            (poly1({0: 2}), Poly.zero(EXACT, 1)),
            (Poly.zero(EXACT, 1), poly1({0: 5})),
        )
        p = JetProblem.create(EXACT, 1, 2, 6, (1,), W=W)
        fam = self.q0_of(p)
        q0 = fam.get(HI0)
        e1 = mono_fiber((0,), rank=2, k=0)
        e2 = mono_fiber((0,), rank=2, k=1)
        assert q0.apply(e1) == e1.scale(3)   # 1 + mu_1
        assert q0.apply(e2) == e2.scale(6)   # 1 + mu_2

    def test_grading_property(self):
        # output degrees of Q_j on a monomial lie in {d + 2j - 2, d + 2j}
        p = scalar_problem(poly1({2: 1, 3: 1, 4: F(1, 3)}), D=8)
        fam = self.q0_of(p)
        for j in fam.orders():
            op = fam.get(j)
            for d in range(0, 4):
                img = op.apply(mono_fiber((d,)))
                degs = {m for m, c in enumerate([img.components[0].coefficient((m,))
                                                 for m in range(0, 12)]) if c != 0}
                allowed = {d + j.doubled - 2, d + j.doubled}
                assert degs <= allowed

    def test_max_order_scales_with_D(self):
        p = scalar_problem(poly1({2: 1, 3: 1}), D=8)
        fam = self.q0_of(p)
        assert fam.max_order >= HalfInt(8)  # j <= D/2 = 4


class TestDiffOpJet:
    def test_compose_leibniz(self):
        d = DiffOpJet.derivative(EXACT, 1, 1, 0)
        x = DiffOpJet.scalar_multiplication(poly1({1: 1}), 1)
        # d . x = x d + 1
        dx = d.compose(x)
        q = mono_fiber((3,))
        assert dx.apply(q) == d.apply(x.apply(q))
        xd = x.compose(d)
        comm = dx - xd
        assert comm.apply(q) == q

    def test_apply_diffop_spec_examples(self):
        # (y d)(y^2) = 2 y^2
        yd = GradedDiffOp(EXACT, 1, 1, [(((F(1),),), (1,), (1,))])
        assert apply_diffop(yd, mono_fiber((2,))) == mono_fiber((2,), 2)

    def test_rank_mismatch(self):
        yd = GradedDiffOp(EXACT, 1, 1, [(((F(1),),), (1,), (1,))])
        with pytest.raises(ValueError):
            apply_diffop(yd, mono_fiber((1,), rank=2))


class TestRawLaplaceData:
    def test_raw_flat_matches_assembled_form(self):
        base = scalar_problem(poly1({2: 1, 3: 1}), D=8)
        z = Poly.zero(EXACT, 1)
        raw = JetProblem.create(EXACT, 1, 1, 8, (1,), V=poly1({2: 1, 3: 1}),
                                raw_b=(((z,),),), raw_c=((z,),))
        phi = solve_eikonal(base)
        fam_a = rescale_operator(conjugate_hamiltonian(base, phi))
        fam_b = rescale_operator(conjugate_hamiltonian(raw, phi))
        probe = [mono_fiber((d,)) for d in range(4)]
        for j in fam_a.orders():
            for q in probe:
                assert fam_a.get(j).apply(q) == fam_b.get(j).apply(q)

    def test_raw_zeroth_order_term_shifts_q1(self):
        # a constant zeroth-order endomorphism k sits at h^2, i.e. degree 0
        # of the second-order piece, hence inside Q_1
        k = F(5)
        raw_c = ((poly1({0: k}),),)
        p = JetProblem.create(EXACT, 1, 1, 8, (1,), raw_c=raw_c)
        phi = solve_eikonal(p)
        fam = rescale_operator(conjugate_hamiltonian(p, phi))
        one = mono_fiber((0,))
        assert fam.get(HalfInt(2)).apply(one) == one.scale(k)
        assert fam.get(HalfInt(0)).apply(one) == one  # model part unchanged


class TestMetricDensity:
    def test_flat_is_one(self):
        p = scalar_problem(None)
        assert metric_density_jet(p) == poly1({0: 1})

    def test_curved_1d_against_direct_expansion(self):
        # g^11 = 1 + a x^2  =>  g_11 = 1 - a x^2 + a^2 x^4 - ...
        # sqrt(g_11) = 1 - a x^2 / 2 + (3 a^2 / 8) x^4 - ...
        a = F(1, 2)
        g = ((poly1({0: 1, 2: a}),),)
        p = scalar_problem(poly1({2: 1}), D=6, g_inv=g)
        G = metric_density_jet(p)
        assert G.coefficient((2,)) == -a / 2
        assert G.coefficient((4,)) == 3 * a * a / 8

    def test_float_mode_matches_exact(self):
        a = F(1, 2)
        gx = ((poly1({0: 1, 2: a}),),)
        pe = scalar_problem(poly1({2: 1}), D=6, g_inv=gx)
        Ge = metric_density_jet(pe)
        m = float_mode()
        gf = ((Poly(m, 1, {(0,): 1.0, (2,): 0.5}),),)
        pf = JetProblem.create(m, 1, 1, 6, (1.0,), V=Poly(m, 1, {(2,): 1.0}), g_inv=gf)
        Gf = metric_density_jet(pf)
        for d in range(7):
            assert abs(Gf.coefficient((d,)) - float(Ge.coefficient((d,)))) < 1e-12


class TestValidation:
    def test_w_must_be_hermitian(self):
        W = (
            (poly1({0: 0}), poly1({1: 1})),
            (poly1({1: -1}), poly1({0: 0})),
        )
        with pytest.raises(ProblemValidationError):
            JetProblem.create(EXACT, 1, 2, 4, (1,), W=W)

    def test_exact_mode_requires_diagonal_w0(self):
        W = (
            (poly1({0: 0}), poly1({0: 1})),
            (poly1({0: 1}), poly1({0: 0})),
        )
        with pytest.raises(ProblemValidationError):
            JetProblem.create(EXACT, 1, 2, 4, (1,), W=W)

    def test_float_mode_diagonalizes_w0(self):
        m = float_mode()
        z = Poly.zero(m, 1)
        W = (
            (z, Poly.const(m, 1, 1.0)),
            (Poly.const(m, 1, 1.0), z),
        )
        p = JetProblem.create(m, 1, 2, 4, (1.0,), W=W)
        assert sorted(x.real for x in p.mu) == pytest.approx([-1.0, 1.0])

    def test_gamma_skew(self):
        G1 = (
            (poly1({0: 0}), poly1({1: 1})),
            (poly1({1: 1}), poly1({0: 0})),
        )
        with pytest.raises(ProblemValidationError):
            JetProblem.create(EXACT, 1, 2, 4, (1,), Gamma=(G1,))
