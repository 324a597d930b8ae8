import numpy as np
import pytest
from conftest import toy_problem

from dtcbf import poly as P
from dtcbf.sosir import Certificate, CertificateResidual, is_sos
from dtcbf.synth import DtcbfTriple, SafeSet
from dtcbf.verify import (
    EmptySuperlevelSet,
    UnknownPlane,
    check_certificates,
    check_triple,
    levelset_sample,
    report_violations,
    simulate,
    simulate_from_set,
)

(X,) = P.state_vars(1)
x = P.Polynomial.var(X)


def toy_triple(pi_shift=0.0, gamma0=1.0, h=None):
    # pi = -x/2 sends every state to the origin, where h = 1
    h = 1 - x**2 if h is None else h
    return DtcbfTriple(h, gamma0, [-0.5 * x + pi_shift], (X,))


def test_hand_triple_passes():
    plant, U, S, _ = toy_problem()
    rep = check_triple(toy_triple(), plant, U, S, samples=20_000)
    assert rep.passed(1e-9)
    assert rep.decrease.samples == 20_000
    assert rep.containment.samples > 20_000
    assert report_violations(rep) == []


def test_policy_shift_breaks_admissibility():
    plant, U, S, _ = toy_problem()
    rep = check_triple(toy_triple(pi_shift=10.0), plant, U, S, samples=20_000)
    # 1 - u with u = 10 - x/2 is smallest at x = -1
    assert abs(rep.admissibility.max_violation - 9.5) < 1e-2
    assert not rep.passed()
    assert any(line.startswith("admissibility") for line in report_violations(rep))


def test_bad_gamma_fails():
    plant, U, S, _ = toy_problem()
    assert not check_triple(toy_triple(gamma0=1.5), plant, U, S, samples=100).passed()
    assert not check_triple(toy_triple(gamma0=None), plant, U, S, samples=100).passed()


def test_empty_superlevel_set_warns_and_passes():
    plant, U, S, _ = toy_problem()
    with pytest.warns(EmptySuperlevelSet):
        rep = check_triple(toy_triple(h=P.Polynomial.constant(-1.0)), plant, U, S, samples=1000)
    assert rep.passed()
    assert rep.decrease.samples == 0


def test_barrier_leaving_safe_set_fails_containment():
    plant, U, S, _ = toy_problem()
    rep = check_triple(toy_triple(h=3 - x**2), plant, U, S, samples=5000)
    assert rep.containment.max_violation > 0.5


def test_doubling_samples_is_monotone():
    plant, U, S, _ = toy_problem()
    t = toy_triple(pi_shift=0.3)
    small = check_triple(t, plant, U, S, samples=1000, seed=3)
    big = check_triple(t, plant, U, S, samples=2000, seed=3)
    for a, b in [(small.decrease, big.decrease), (small.admissibility, big.admissibility)]:
        assert b.max_violation >= a.max_violation


def test_simulation_stays_inside():
    plant, _, S, _ = toy_problem()
    summary = simulate_from_set(toy_triple(), plant, S, trajectories=200, steps=20)
    assert summary.trajectories == 200
    assert summary.violations == 0
    traj, s0 = simulate(toy_triple(), plant, np.array([[0.5], [-0.9]]), steps=0)
    assert traj.shape == (1, 2, 1)
    assert s0.violations == 0


def test_simulation_detects_escape():
    plant, _, S, _ = toy_problem()
    _, summary = simulate(toy_triple(pi_shift=1.5), plant, np.array([[0.9]]), steps=5, S=S)
    # every step lands on x = 1.5 where h = -1.25
    assert summary.violations == 1
    assert abs(summary.max_violation - 1.25) < 1e-12


def _negative_eig_certificate(eps):
    _, cert = is_sos(x**4 + x**2 + 1)
    w, V = np.linalg.eigh(cert.gram)
    v = V[:, 0]
    G = cert.gram - (w[0] + eps) * np.outer(v, v)
    expected = Certificate("probe", cert.basis, G, None).reconstruct()
    return Certificate("probe", cert.basis, G, expected)


def test_certificate_eigen_tolerance():
    bad = _negative_eig_certificate(1e-5)
    assert abs(bad.min_eig() + 1e-5) < 1e-9
    assert bad.residual() < 1e-12
    with pytest.raises(CertificateResidual):
        check_certificates([bad], eig_tol=1e-7)
    rep = check_certificates([bad], eig_tol=1e-4)
    assert rep["failures"] == [] and rep["count"] == 1


def test_zeroed_gram_detected():
    _, cert = is_sos(x**2 + 2 * x + 1)
    zero = Certificate(cert.name, cert.basis, np.zeros_like(cert.gram), cert.expected)
    rep = check_certificates([zero], raise_on_failure=False)
    assert rep["failures"]
    assert rep["max_residual"] >= 1.0 - 1e-9


def test_levelset_circle():
    x1, x2 = P.state_vars(2)
    h = 0.1 - P.Polynomial.var(x1) ** 2 - P.Polynomial.var(x2) ** 2
    ls = levelset_sample(h, [[-1, 1], [-1, 1]], resolution=201, vars_=[x1, x2])
    assert ls.values.shape == (201, 201)
    r = np.linalg.norm(ls.boundary, axis=1)
    assert len(r) > 50
    assert np.max(np.abs(r - np.sqrt(0.1))) < 1e-3


def test_levelset_without_boundary(tmp_path):
    x1, x2 = P.state_vars(2)
    ls = levelset_sample(P.Polynomial.constant(1.0), [[-1, 1], [-1, 1]], resolution=10, vars_=[x1, x2])
    assert ls.boundary.shape == (0, 2)
    ls.write_csv(tmp_path / "b.csv", boundary_only=True)
    assert (tmp_path / "b.csv").read_text().strip() == "x1,x2,h"


def test_levelset_plane_errors():
    xs = P.state_vars(4)
    h = 1 - sum((P.Polynomial.var(v) ** 2 for v in xs), P.Polynomial())
    with pytest.raises(UnknownPlane):
        levelset_sample(h, [[-1, 1], [-1, 1]], vars_=list(xs))
    (other,) = P.var_ids(["z7"])
    with pytest.raises(UnknownPlane):
        levelset_sample(h, [[-1, 1], [-1, 1]], vars_=list(xs), plane=(xs[0], other))
    ls = levelset_sample(h, [[-1, 1], [-1, 1]], resolution=21, vars_=list(xs), plane=(xs[2], xs[3]), fixed={xs[0]: 0.5})
    # slice of the unit ball at x1 = 0.5 has radius sqrt(0.75)
    assert np.max(np.abs(np.linalg.norm(ls.boundary, axis=1) - np.sqrt(0.75))) < 2e-2


def test_report_json_shape(tmp_path):
    plant, U, S, _ = toy_problem()
    rep = check_triple(toy_triple(), plant, U, S, samples=500)
    rep.write(tmp_path / "v.json")
    import json

    d = json.loads((tmp_path / "v.json").read_text())
    assert {"decrease", "admissibility", "containment", "max_violation"} <= set(d)
