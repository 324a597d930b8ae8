import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dtcbf.sdp import (
    EchoBackend,
    SdpProblem,
    Solution,
    SolverSettings,
    Status,
    check_farkas,
    check_solution,
    get_backend,
    read_sdpa,
    smat,
    solve,
    svec,
    svec_index,
)


def construct(seed, nf=3, nl=4, psd=(3, 5), m=12):
    """Random SDP with a known strictly complementary primal-dual pair."""
    rng = np.random.default_rng(seed)
    nv = nf + nl + sum(n * (n + 1) // 2 for n in psd)
    A = rng.normal(size=(m, nv))
    xs, ss = [rng.normal(size=nf)], [np.zeros(nf)]
    r = rng.integers(1, nl)
    xl, sl = np.zeros(nl), np.zeros(nl)
    xl[:r] = rng.uniform(0.5, 2, r)
    sl[r:] = rng.uniform(0.5, 2, nl - r)
    xs.append(xl)
    ss.append(sl)
    for n in psd:
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        k = rng.integers(1, n)
        lx = np.r_[rng.uniform(0.5, 2, k), np.zeros(n - k)]
        ls = np.r_[np.zeros(k), rng.uniform(0.5, 2, n - k)]
        xs.append(svec(Q @ np.diag(lx) @ Q.T))
        ss.append(svec(Q @ np.diag(ls) @ Q.T))
    x, s = np.concatenate(xs), np.concatenate(ss)
    y = rng.normal(size=m)
    b, c = A @ x, A.T @ y + s
    return SdpProblem(sp.csr_matrix(A), b, c, nf, nl, psd), float(c @ x)


def infeasible_psd():
    # X in PSD(2) with X11 = -1
    return SdpProblem(sp.csr_matrix(np.array([[1.0, 0.0, 0.0]])), [-1.0], [0.0, 0.0, 0.0], 0, 0, (2,))


def infeasible_lp():
    # x >= 0, x1 + x2 = -1
    return SdpProblem(sp.csr_matrix(np.array([[1.0, 1.0]])), [-1.0], [1.0, 1.0], 0, 2, ())


@pytest.mark.parametrize("seed", range(5))
def test_constructed_recovered(seed):
    prob, obj = construct(seed)
    sol = solve(prob)
    assert sol.status is Status.OPTIMAL
    assert abs(sol.primal_objective - obj) <= 1e-6
    assert abs(sol.dual_objective - obj) <= 1e-6
    assert check_solution(prob, sol)


@pytest.mark.parametrize("make", [infeasible_psd, infeasible_lp])
def test_infeasible_returns_certificate(make):
    prob = make()
    sol = solve(prob)
    assert sol.status is Status.INFEASIBLE
    assert sol.certificate is not None
    assert check_farkas(prob, sol.certificate)


def test_farkas_rejects_non_certificate():
    prob = infeasible_psd()
    assert check_farkas(prob, np.array([-1.0]))
    assert not check_farkas(prob, np.array([1.0]))
    assert not check_farkas(prob, np.array([0.0]))


def test_deterministic():
    prob, _ = construct(3)
    a, b = solve(prob), solve(prob)
    assert a.iterations == b.iterations
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_trivial_one_by_one():
    prob = SdpProblem(sp.csr_matrix(np.array([[1.0]])), [2.0], [0.0], 0, 0, (1,))
    sol = solve(prob)
    assert sol.ok
    assert abs(sol.x[0] - 2.0) < 1e-8


def test_svec_roundtrip_and_index():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    M = M + M.T
    v = svec(M)
    assert np.allclose(smat(v, 4), M)
    # inner products are preserved
    N = rng.normal(size=(4, 4))
    N = N + N.T
    assert np.isclose(v @ svec(N), np.trace(M @ N))
    assert svec_index(4, 2, 1) == svec_index(4, 1, 2)


@pytest.mark.parametrize("seed", range(3))
def test_sdpa_roundtrip(seed, tmp_path):
    prob, obj = construct(seed)
    path = tmp_path / "p.dat-s"
    from dtcbf.sdp import write_sdpa

    write_sdpa(prob, path)
    sol = solve(read_sdpa(path))
    assert sol.ok
    assert abs(sol.primal_objective - obj) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_row_scaling_invariance(seed):
    prob, obj = construct(seed)
    sol = solve(prob.scaled_rows(1e3))
    assert sol.ok
    assert abs(sol.primal_objective - obj) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_cvxopt_cross_check(seed):
    try:
        backend = get_backend("cvxopt")
    except Exception:
        pytest.skip("cvxopt not installed")
    prob, obj = construct(seed)
    ours, theirs = solve(prob), backend.submit(prob)
    assert theirs.status is Status.OPTIMAL
    assert abs(ours.primal_objective - theirs.primal_objective) <= 1e-5 * (1 + abs(obj))


def test_echo_backend_replays():
    prob, _ = construct(0)
    canned = Solution(Status.INFEASIBLE, np.zeros(prob.nvar), np.zeros(prob.nrows), np.zeros(prob.nvar))
    be = EchoBackend([canned])
    assert be.submit(prob) is canned
    assert be.received == [prob]
    with pytest.raises(RuntimeError):
        be.submit(prob)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(step_fraction=1.0)
    with pytest.raises(ValueError):
        SolverSettings(feas_tol=0.0)


def test_max_iters_zero_not_optimal():
    prob, _ = construct(1)
    sol = solve(prob, SolverSettings(max_iters=0))
    assert sol.status is not Status.OPTIMAL


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_constructed_property(seed):
    prob, obj = construct(seed, nf=1, nl=2, psd=(2, 3), m=6)
    sol = solve(prob)
    assert sol.ok
    assert abs(sol.primal_objective - obj) <= 1e-6 * (1 + abs(obj))
    assert check_solution(prob, sol)
