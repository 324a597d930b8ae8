import dataclasses

import numpy as np
import pytest
from conftest import toy_problem
from hypothesis import given, settings
from hypothesis import strategies as st

from dtcbf import poly as P
from dtcbf.sampling import sample_superlevel
from dtcbf.sdp import Status
from dtcbf.synth import (
    DtcbfTriple,
    InfeasibleInput,
    InputPolytope,
    PlantModel,
    SafeSet,
    Step1Infeasible,
    SynthesisConfig,
    SynthesisError,
    UnboundedInputSet,
    alternate,
    build_step1,
    build_step2,
    find_omega,
    prepare,
    product_gaps,
    relevant_states,
    run,
    shift_input,
    solve_step1,
    solve_step2,
)

(XT,) = P.state_vars(1)
xt = P.Polynomial.var(XT)


def _superlevel_points(h, vars_, n, seed=0, half=2.0):
    pts = np.random.default_rng(seed).uniform(-half, half, (40 * n, len(vars_)))
    return pts[h.evaluate_many(pts, vars_) >= 0][:n]


def test_toy_step1_rate_and_policy(toy):
    plant, U, S, cfg = toy
    s1 = solve_step1(build_step1(cfg.h0, plant, U, cfg), cfg, cfg.h0)
    # pi = -x/2 sends every state to 0 where h = 1, so gamma0 = 1 is attainable
    assert s1.gamma0 >= 0.75
    assert abs(s1.gamma0 - 1.0) < 1e-4
    pts = _superlevel_points(cfg.h0, [XT], 1000)
    u = s1.pi[0].evaluate_many(pts, [XT])
    assert np.all(np.abs(u) <= 1 + 1e-6)
    gaps = product_gaps(s1, plant, pts)
    assert gaps and min(gaps.values()) >= -1e-6


def test_toy_omega(toy):
    plant, U, S, cfg = toy
    s1 = solve_step1(build_step1(cfg.h0, plant, U, cfg), cfg, cfg.h0)
    omega, deg, certs = find_omega(cfg.h0, s1.pi, s1.gamma0, plant, cfg)
    assert deg == cfg.degrees.omega
    assert certs
    pts = np.linspace(-3, 3, 601)[:, None]
    assert omega.evaluate_many(pts, [XT]).min() >= -1e-6


def test_toy_step2_encloses_previous(toy):
    plant, U, S, cfg = toy
    s1 = solve_step1(build_step1(cfg.h0, plant, U, cfg), cfg, cfg.h0)
    omega, _, _ = find_omega(cfg.h0, s1.pi, s1.gamma0, plant, cfg)
    s2 = solve_step2(build_step2(cfg.h0, s1.pi, s1.gamma0, omega, s1.psi, plant, U, S, cfg, step1=s1), cfg)
    assert s2.status is Status.OPTIMAL
    pts = _superlevel_points(cfg.h0, [XT], 1000)
    assert s2.h.evaluate_many(pts, [XT]).min() >= cfg.delta - 1e-6
    outside = np.linspace(-3, 3, 601)[:, None]
    outside = outside[S.s.evaluate_many(outside, [XT]) < 0]
    assert s2.h.evaluate_many(outside, [XT]).max() < 0


def test_step2_infeasible_when_safe_set_is_previous_set():
    plant, U, S, cfg = toy_problem()
    S = SafeSet(cfg.h0)
    s1 = solve_step1(build_step1(cfg.h0, plant, U, cfg), cfg, cfg.h0)
    omega, _, _ = find_omega(cfg.h0, s1.pi, s1.gamma0, plant, cfg)
    s2 = solve_step2(build_step2(cfg.h0, s1.pi, s1.gamma0, omega, s1.psi, plant, U, S, cfg), cfg)
    assert s2.status is Status.INFEASIBLE


def test_step1_infeasible_for_unstabilizable_start():
    (x,) = P.state_vars(1)
    X = P.Polynomial.var(x)
    plant = PlantModel((x,), (2.0 * X,), P.PolyMatrix.from_rows([[1.0]]))
    U = InputPolytope.box([-0.1], [0.1])
    cfg = SynthesisConfig(P.monomials_up_to([x], 2), [P.monomials_up_to([x], 1)], 1 - X**2)
    with pytest.raises(Step1Infeasible):
        solve_step1(build_step1(cfg.h0, plant, U, cfg), cfg, cfg.h0)


def test_run_toy_grows_and_stops():
    plant, U, S, cfg = toy_problem(max_iters=20)
    res = run(plant, U, S, cfg)
    assert res.termination in ("step2_infeasible", "max_iters")
    areas = [log.area_ratio for log in res.logs if log.area_ratio is not None]
    assert areas and all(b >= a - 1e-3 for a, b in zip(areas, areas[1:]))
    assert len(res.history) == len([log for log in res.logs if log.step2_status == "optimal"]) + 1


def test_max_iters_zero_returns_h0():
    plant, U, S, cfg = toy_problem(max_iters=0)
    res = run(plant, U, S, cfg)
    assert res.logs == []
    assert res.triple.h == cfg.h0
    assert res.triple.gamma0 is None
    assert res.termination == "max_iters"


def test_empty_input_set():
    plant, _, S, cfg = toy_problem()
    U = InputPolytope(np.array([[1.0], [-1.0]]), np.array([-2.0, 1.0]))  # u >= 2 and u <= 1
    with pytest.raises(InfeasibleInput):
        run(plant, U, S, cfg)


def test_unbounded_input_set():
    U = InputPolytope(np.array([[1.0]]), np.array([1.0]))  # u >= -1 only
    with pytest.raises(UnboundedInputSet):
        U.bounds()
    plant, _, S, cfg = toy_problem(extension="cascaded", h_basis=P.monomials_up_to([XT], 4))
    with pytest.raises(UnboundedInputSet):
        prepare(plant, U, S, cfg)


def test_shift_input_box():
    x1, x2 = P.state_vars(2)
    X1, X2 = P.Polynomial.var(x1), P.Polynomial.var(x2)
    plant = PlantModel((x1, x2), (X1, X2), P.PolyMatrix.from_rows([[1.0, 0.0], [0.0, X1]]))
    U = InputPolytope.box([-1.5, -1.5], [1.5, 1.5])
    shifted, c, Us = shift_input(plant, U)
    assert np.allclose(c, [1.5, 1.5])
    lo, hi = Us.bounds()
    assert np.allclose(lo, 0) and np.allclose(hi, 3)
    assert shifted.f[1] == X2 - 1.5 * X1


def test_shift_input_nonnegative_box_is_identity():
    plant, _, _, _ = toy_problem()
    U = InputPolytope.box([0.0], [2.0])
    shifted, c, Us = shift_input(plant, U)
    assert np.allclose(c, 0)
    assert shifted.f == plant.f
    assert np.allclose(Us.d, U.d)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_shift_input_preserves_dynamics(seed):
    rng = np.random.default_rng(seed)
    x1, x2 = P.state_vars(2)
    X1, X2 = P.Polynomial.var(x1), P.Polynomial.var(x2)
    g = P.PolyMatrix.from_rows([[1.0 + X2**2, 0.0], [X1, 2.0]])
    plant = PlantModel((x1, x2), (X1 * X2, X1 - X2), g)
    lo = rng.uniform(-3, 0, 2)
    U = InputPolytope.box(lo, lo + rng.uniform(0.5, 3, 2))
    shifted, c, Us = shift_input(plant, U)
    x = rng.uniform(-2, 2, (30, 2))
    u = lo + rng.uniform(0, 1, (30, 2)) * (U.bounds()[1] - lo)
    assert np.all(Us.contains(u + c, tol=1e-9))
    assert np.all(u + c >= -1e-12)
    assert np.allclose(shifted.step(x, u + c), plant.step(x, u), atol=1e-9)


def _cascade_gaps(plant, U, S, cfg):
    prep = prepare(plant, U, S, cfg)
    res = alternate(prep, prep.h_basis)
    assert res.step1_records
    out = {}
    for rec in res.step1_records:
        pts = _superlevel_points(rec.h_prev, list(prep.plant.state), 1000)
        for alpha, gap in product_gaps(rec, prep.plant, pts).items():
            out[alpha] = min(out.get(alpha, np.inf), gap)
    return out


def test_cascade_single_input_cubic_and_quartic():
    plant, U, S, cfg = toy_problem(
        h_basis=P.monomials_up_to([XT], 4), extension="cascaded", max_iters=2, h0=1 - xt**2 - 0.1 * xt**4
    )
    gaps = _cascade_gaps(plant, U, S, cfg)
    assert {(2,), (3,), (4,)} <= set(gaps)
    assert min(gaps.values()) >= -1e-6


def test_cascade_mixed_product():
    x1, x2 = P.state_vars(2)
    X1, X2 = P.Polynomial.var(x1), P.Polynomial.var(x2)
    plant = PlantModel((x1, x2), (0.5 * X1, 0.5 * X2), P.PolyMatrix.from_rows([[1.0, 0.0], [0.0, 1.0]]))
    U = InputPolytope.box([-1, -1], [1, 1])
    S = SafeSet(2 - X1**2 - X2**2)
    cfg = SynthesisConfig(
        P.monomials_up_to([x1, x2], 4),
        [P.monomials_up_to([x1, x2], 1)] * 2,
        1 - X1**2 - X2**2 - 0.1 * X1**2 * X2**2,
        extension="cascaded",
        max_iters=1,
    )
    gaps = _cascade_gaps(plant, U, S, cfg)
    assert {(2, 1), (1, 2), (2, 2)} <= set(gaps)
    assert min(gaps.values()) >= -1e-6


def test_quadratic_mode_rejects_cubic_products():
    plant, U, S, cfg = toy_problem(h_basis=P.monomials_up_to([XT], 4), h0=1 - xt**2 - 0.1 * xt**4)
    with pytest.raises(SynthesisError):
        run(plant, U, S, cfg)


def test_fixed_policy_without_room_reports_no_improvement():
    plant, U, _, cfg = toy_problem(extension="fixed-policy", max_iters=3, fixed_policy_iters=3)
    res = run(plant, U, SafeSet(cfg.h0), cfg)
    assert "NoImprovement" in res.flags
    assert res.triple.h == cfg.h0


def test_relevant_states_cartpole():
    xs = P.state_vars(4)
    X = [P.Polynomial.var(v) for v in xs]
    plant = PlantModel(
        tuple(xs), (X[1], -0.98 * X[2], X[3], 10.78 * X[2]), P.PolyMatrix.from_rows([[0.0], [1.0], [0.0], [-1.0]])
    )
    assert relevant_states(plant, [X[2] ** 2 + X[3] ** 2]) == [xs[2], xs[3]]
    assert relevant_states(plant, [X[1]]) == list(xs[1:])


def test_config_validation():
    with pytest.raises(SynthesisError):
        toy_problem(h_basis=P.monomials_up_to([XT], 3))
    with pytest.raises(SynthesisError):
        toy_problem(epsilon=0.0)
    with pytest.raises(SynthesisError):
        toy_problem(gamma_mode="fastest")
    (y,) = P.var_ids(["y9"])
    plant, U, S, cfg = toy_problem(h0=1 - P.Polynomial.var(y) ** 2)
    with pytest.raises(SynthesisError):
        run(plant, U, S, cfg)


def test_gamma_target_mode():
    plant, U, S, cfg = toy_problem(gamma_mode="target", gamma_target=0.8)
    s1 = solve_step1(build_step1(cfg.h0, plant, U, cfg), cfg, cfg.h0)
    assert abs(s1.gamma0 - 0.8) < 1e-6


def test_triple_json_roundtrip():
    plant, U, S, cfg = toy_problem(max_iters=2)
    t = run(plant, U, S, cfg).triple
    back = DtcbfTriple.from_json(t.to_json())
    assert back.gamma0 == t.gamma0
    pts = np.linspace(-2, 2, 41)[:, None]
    assert np.allclose(back.h.evaluate_many(pts, [XT]), t.h.evaluate_many(pts, [XT]), atol=1e-12)
    assert np.allclose(back.policy_values(pts), t.policy_values(pts), atol=1e-12)


def test_sample_superlevel_matches_interval():
    pts = sample_superlevel(1 - xt**2, [XT], 500, np.random.default_rng(0), np.array([[-2.0, 2.0]]))
    assert pts.shape[1] == 1 and len(pts) > 0
    assert np.all(np.abs(pts) <= 1 + 1e-12)


def test_replace_keeps_validation():
    _, _, _, cfg = toy_problem()
    with pytest.raises(SynthesisError):
        dataclasses.replace(cfg, delta=-1.0)
