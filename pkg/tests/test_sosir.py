import time

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from dtcbf import poly as P
from dtcbf.poly import Polynomial
from dtcbf.sdp import Status
from dtcbf.sosir import (
    Certificate,
    CertificateResidual,
    EmptyBasis,
    NotSymmetric,
    SosProgram,
    check_certificates,
    gram_basis,
    is_sos,
    matrix_is_sos,
)

X, Y = P.state_vars(2)
x, y = Polynomial.var(X), Polynomial.var(Y)
MOTZKIN = x**4 * y**2 + x**2 * y**4 - 3 * x**2 * y**2 + 1


def _sound(cert, p, vars_, n=1000, seed=0):
    pts = np.random.default_rng(seed).uniform(-2, 2, (n, len(vars_)))
    return p.evaluate_many(pts, vars_).min() >= -1e-6 and cert.residual() <= 1e-6


ACCEPT = {
    "square": (x + 1) ** 2,
    "quartic": x**4 + x**2 + 1,
    "psd_form": 2 * x**2 + 2 * x * y + y**2,
    "sum_of_squares": (x * y - 1) ** 2 + (x - y) ** 2,
}
REJECT = {"negative": Polynomial.constant(-1.0), "odd": x, "motzkin": MOTZKIN}


@pytest.mark.parametrize("name", sorted(ACCEPT))
def test_corpus_accepts(name):
    p = ACCEPT[name]
    t = time.perf_counter()
    ok, cert = is_sos(p)
    assert time.perf_counter() - t < 10
    assert ok
    assert _sound(cert, p, sorted(p.variables()))


@pytest.mark.parametrize("name", sorted(REJECT))
def test_corpus_rejects(name):
    t = time.perf_counter()
    ok, _ = is_sos(REJECT[name])
    assert time.perf_counter() - t < 10
    assert not ok


def test_square_gram():
    ok, cert = is_sos(x**2 + 2 * x + 1)
    assert ok
    assert cert.gram.shape == (2, 2)
    assert np.allclose(cert.gram, [[1, 1], [1, 1]], atol=1e-6)


def test_motzkin_infeasible_with_certificate():
    prog = SosProgram()
    prog.add_scalar_sos(MOTZKIN)
    res = prog.solve()
    assert res.status is Status.INFEASIBLE
    assert res.solution.certificate is not None


def test_negative_constant_infeasible():
    prog = SosProgram()
    prog.add_scalar_sos(Polynomial.constant(-1.0))
    assert prog.solve().status is Status.INFEASIBLE


def test_odd_polynomial_has_no_basis():
    prog = SosProgram()
    prog.add_scalar_sos(x)
    with pytest.raises(EmptyBasis):
        prog.lower()


def test_declare_free_poly():
    prog = SosProgram()
    basis = [P.parse_monomial(s) for s in ["1", "x1", "x2", "x1*x2", "x1^2", "x2^2"]]
    p = prog.declare_free_poly(basis)
    assert len(p.dvars()) == 6
    assert p.support() == set(basis)
    c = prog.declare_free_poly([P.ONE])
    assert len(c.dvars()) == 1


def test_constant_one_is_trivially_sos():
    prog = SosProgram()
    prog.add_scalar_sos(Polynomial.constant(1.0))
    res = prog.solve()
    assert res.ok
    assert res.values == {}
    assert np.allclose(res.certificates[0].gram, [[1.0]])


def test_multiplier_hand_solution():
    # x - p1 * x with p1 SOS of degree 0: p1 = 1 gives 0
    prog = SosProgram()
    p1 = prog.sos_multiplier([X], 0, "p1")
    prog.add_scalar_sos(x - p1 * x)
    res = prog.solve()
    assert res.ok
    assert abs(res.value(p1).coeff(P.ONE) - 1.0) < 1e-6


def test_matrix_sos_examples():
    assert matrix_is_sos([[1.0, x], [x, x**2 + 1]])[0]
    assert matrix_is_sos([[1.0, 0.0], [0.0, 1.0]])[0]
    assert not matrix_is_sos([[1.0, x], [x, Polynomial()]])[0]
    with pytest.raises(NotSymmetric):
        SosProgram().add_matrix_sos([[1.0, x], [y, 1.0]])


def test_matrix_sos_matches_scalarization():
    # y'Qy for Q = [[1, x], [x, x^2 + 1]] is SOS in (x, a, b)
    a, b = (Polynomial.var(v) for v in P.var_ids(["sa", "sb"]))
    Q = [[Polynomial.constant(1.0), x], [x, x**2 + 1]]
    scalar = a * a * Q[0][0] + 2 * a * b * Q[0][1] + b * b * Q[1][1]
    assert is_sos(scalar)[0] == matrix_is_sos(Q)[0]
    Qbad = [[Polynomial.constant(1.0), x], [x, Polynomial()]]
    bad = a * a + 2 * a * b * x
    assert is_sos(bad)[0] == matrix_is_sos(Qbad)[0] is False


def test_corrupted_gram_detected():
    ok, cert = is_sos(x**4 + x**2 + 1)
    G = cert.gram.copy()
    G[0, 0] += 1e-3
    bad = Certificate(cert.name, cert.basis, G, cert.expected)
    with pytest.raises(CertificateResidual):
        check_certificates([bad])


def test_gram_basis_newton_pruning():
    # x^4 y^2 + x^2 y^4 + 1: half polytope has 1, xy, x^2 y, x y^2
    basis = gram_basis(MOTZKIN.support())
    assert set(basis) == {P.ONE, P.monomial({X: 1, Y: 1}), P.monomial({X: 2, Y: 1}), P.monomial({X: 1, Y: 2})}


def test_lowering_deterministic_and_monotone():
    def build(extra):
        prog = SosProgram()
        q = prog.declare_free_poly(P.monomials_up_to([X, Y], 2))
        prog.add_scalar_sos(q * 1.0 + x**4 + y**4)
        if extra:
            prog.add_scalar_sos(1 - q)
        return prog.lower().problem

    a, b, c = build(False), build(False), build(True)
    assert a.layout_signature() == b.layout_signature()
    assert (a.A != b.A).nnz == 0 and np.array_equal(a.b, b.b)
    assert c.nrows >= a.nrows and len(c.psd) >= len(a.psd)


@pytest.mark.parametrize("target,expected", [(0.8, 0.8), (0.95, 0.9)])
def test_objective_target_deviation(target, expected):
    # x^2 + 0.9 - g is SOS iff g <= 0.9
    prog = SosProgram()
    g = prog.new_var("g", lo=0.0, hi=1.0)
    prog.minimize_deviation(g, target)
    prog.add_scalar_sos(P.as_param(x**2 + 0.9) - P.ParamPolynomial.from_affine(g))
    res = prog.solve()
    assert res.ok
    assert abs(res.value(g) - expected) < 1e-6


def _random_sum_of_squares(seed):
    rng = np.random.default_rng(seed)
    qs = [P.random_polynomial(rng, [X, Y], 2) for _ in range(2)]
    return sum((q * q for q in qs), Polynomial())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
@example(182)  # stalls just short of the solver tolerance; accepted on certificate checks
def test_random_sos_with_margin_is_certified(seed):
    # adding 0.1 m'm makes the Gram matrix positive definite, so a solution is interior
    m = P.monomials_up_to([X, Y], 2)
    p = _random_sum_of_squares(seed) + 0.1 * sum((Polynomial({a: 1.0}) ** 2 for a in m), Polynomial())
    ok, cert = is_sos(p)
    assert ok
    assert cert.min_eig() >= -1e-7
    assert _sound(cert, p, [X, Y], seed=seed)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
@example(950)  # near the cone boundary: the solve stalls at 1.3e-6 and is rejected
def test_random_sos_accepted_only_if_sound(seed):
    p = _random_sum_of_squares(seed) + 0.1
    ok, cert = is_sos(p)
    if ok:
        assert cert.min_eig() >= -1e-7
        assert _sound(cert, p, [X, Y], seed=seed)
