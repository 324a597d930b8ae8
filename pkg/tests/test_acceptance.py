"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from conftest import toy_problem
from test_sdp import construct, infeasible_lp, infeasible_psd

from dtcbf import poly as P
from dtcbf.sampling import area_ratio, sample_superlevel
from dtcbf.sdp import Status, check_farkas, solve
from dtcbf.sosir import is_sos
from dtcbf.synth import alternate, prepare, product_gaps, run
from dtcbf.verify import check_certificates, check_triple, default_box, levelset_sample

TOL = 1e-6


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


def _checks(say, n, items):
    """``items`` maps a label to ``(ok, shown value)``; prints one line and asserts."""
    ok = all(v[0] for v in items.values())
    say(n, ok, "; ".join(f"{k}={v[1]}" + ("" if v[0] else " (!)") for k, v in items.items()))
    bad = [k for k, v in items.items() if not v[0]]
    assert not bad, f"failed: {bad}"


def _verify(r, samples=100_000):
    spec = r.spec
    rep = check_triple(r.outcome.result.triple, spec.plant, spec.U, spec.S, samples=samples)
    return rep


def _work_state(r):
    return prepare(r.spec.plant, r.spec.U, r.spec.S, r.spec.cfg)


def test_criterion1_nonlinear2d(nonlinear_run, say):
    out = nonlinear_run.outcome
    t = out.result.triple
    rep = _verify(nonlinear_run)
    state = nonlinear_run.spec.plant.state
    _, ratio = area_ratio(t.h, nonlinear_run.spec.S.s, state, 400_000, seed=1)
    _checks(
        say,
        1,
        {
            "termination": (out.result.termination == "step2_infeasible", out.result.termination),
            "gamma0": (abs(t.gamma0 - 1.0) <= 1e-3, f"{t.gamma0:.6f}"),
            "samples": (rep.decrease.samples >= 100_000, rep.decrease.samples),
            "max_violation": (rep.max_violation <= TOL, f"{rep.max_violation:.2e}"),
            "area_ratio": (ratio >= 0.80, f"{ratio:.3f}"),
            "seconds": (nonlinear_run.seconds <= 900, f"{nonlinear_run.seconds:.0f}"),
        },
    )


def test_criterion2_cartpole(cartpole_run, say):
    out = cartpole_run.outcome
    t = out.result.triple
    xs = cartpole_run.spec.plant.state
    cart = {xs[0], xs[1]}
    cart_coeff = max((abs(c) for m, c in t.h.terms.items() if P.mono_vars(m) & cart), default=0.0)
    rep = _verify(cartpole_run)
    radius = 0.0
    for h in out.result.history:
        ls = levelset_sample(h, [[-1, 1], [-1, 1]], 200, list(xs), (xs[2], xs[3]))
        if ls.boundary.size:
            radius = max(radius, float(np.linalg.norm(ls.boundary, axis=1).max()))
    _checks(
        say,
        2,
        {
            "status": (out.status == "ok", out.status),
            "gamma0": (abs(t.gamma0 - 0.8) <= 1e-3, f"{t.gamma0:.6f}"),
            "degree": (t.h.degree() <= 4, t.h.degree()),
            "cart_coeff": (cart_coeff < 1e-6, f"{cart_coeff:.1e}"),
            "max_violation": (rep.max_violation <= TOL, f"{rep.max_violation:.2e}"),
            "levelset_radius": (radius < math.pi / 5, f"{radius:.3f}<{math.pi / 5:.3f}"),
            "seconds": (cartpole_run.seconds <= 900, f"{cartpole_run.seconds:.0f}"),
        },
    )


def _monotone(r):
    prep = _work_state(r)
    vars_ = list(prep.plant.state)
    box = default_box(r.spec.S, vars_)
    delta = r.spec.cfg.delta
    hist = r.outcome.result.history
    worst = math.inf
    for k in range(1, len(hist)):
        pts = sample_superlevel(hist[k - 1], vars_, 10_000, np.random.default_rng(k), box)
        worst = min(worst, float(hist[k].evaluate_many(pts, vars_).min()) - delta)
    return len(hist) - 1, worst


def test_criterion3_enlargement(nonlinear_run, cartpole_run, say):
    items = {}
    for name, r in [("nonlinear2d", nonlinear_run), ("cartpole", cartpole_run)]:
        n, worst = _monotone(r)
        items[name] = (n > 0 and worst >= -TOL, f"{n} iterations, min h_k - delta {worst:.2e}")
    _checks(say, 3, items)


def _gaps_of(result, plant, S, seed=0):
    worst, count = math.inf, 0
    vars_ = list(plant.state)
    box = default_box(S, vars_)
    for j, rec in enumerate(result.step1_records):
        pts = sample_superlevel(rec.h_prev, vars_, 1000, np.random.default_rng(seed + j), box)
        for gap in product_gaps(rec, plant, pts).values():
            worst = min(worst, gap)
            count += 1
    return count, worst


def test_criterion4_product_semantics(nonlinear_run, cartpole_run, say):
    items = {}
    for name, r in [("nonlinear2d", nonlinear_run), ("cartpole", cartpole_run)]:
        count, worst = _gaps_of(r.outcome.result, _work_state(r).plant, r.spec.S)
        items[name] = (count > 0 and worst >= -TOL, f"{count} products, min {worst:.2e}")
    (x,) = P.state_vars(1)
    X = P.Polynomial.var(x)
    plant, U, S, cfg = toy_problem(
        h_basis=P.monomials_up_to([x], 4), extension="cascaded", max_iters=2, h0=1 - X**2 - 0.1 * X**4
    )
    prep = prepare(plant, U, S, cfg)
    res = alternate(prep, prep.h_basis)
    orders = {sum(a) for rec in res.step1_records for a in rec.aux}
    count, worst = _gaps_of(res, prep.plant, S)
    items["cascaded"] = (max(orders) >= 3 and worst >= -TOL, f"orders {sorted(orders)}, min {worst:.2e}")
    _checks(say, 4, items)


def test_criterion5_sos_corpus(say):
    (X,) = P.state_vars(1)
    x1, x2 = P.state_vars(2)
    x, y = P.Polynomial.var(x1), P.Polynomial.var(x2)
    accept = {"(x+1)^2": (x + 1) ** 2, "x^4+x^2+1": x**4 + x**2 + 1, "psd_form": 2 * x**2 + 2 * x * y + y**2}
    reject = {"-1": P.Polynomial.constant(-1.0), "x": x, "motzkin": x**4 * y**2 + x**2 * y**4 - 3 * x**2 * y**2 + 1}
    items = {}
    rng = np.random.default_rng(0)
    for name, p in accept.items():
        t0 = time.perf_counter()
        ok, cert = is_sos(p)
        dt = time.perf_counter() - t0
        vars_ = sorted(p.variables())
        vals = p.evaluate_many(rng.uniform(-3, 3, (1000, len(vars_))), vars_)
        good = ok and dt < 10 and cert.residual() <= TOL and vals.min() >= -TOL
        items[name] = (good, f"accepted res {cert.residual():.1e} {dt:.2f}s")
    for name, p in reject.items():
        t0 = time.perf_counter()
        ok, _ = is_sos(p)
        dt = time.perf_counter() - t0
        items[name] = (not ok and dt < 10, f"rejected {dt:.2f}s")
    _checks(say, 5, items)


def test_criterion6_sdp_suite(say):
    items = {}
    for seed in range(5):
        prob, obj = construct(seed)
        sol = solve(prob)
        err = abs(sol.primal_objective - obj)
        items[f"sdp{seed}"] = (sol.ok and err <= TOL, f"{err:.1e}")
    for make in (infeasible_psd, infeasible_lp):
        prob = make()
        sol = solve(prob)
        good = sol.status is Status.INFEASIBLE and sol.certificate is not None and check_farkas(prob, sol.certificate)
        items[make.__name__] = (good, sol.status.value)
    prob, _ = construct(2)
    a, b = solve(prob), solve(prob)
    items["deterministic"] = (np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y), a.iterations)
    _checks(say, 6, items)


def test_criterion7_losslessness(nonlinear_run, cartpole_run, say):
    items = {}
    for name, r in [("nonlinear2d", nonlinear_run), ("cartpole", cartpole_run)]:
        logs = r.outcome.result.logs
        later = [e for e in logs if e.k > 1 and e.step1_status not in ("optimal", "fixed")]
        good = r.outcome.status == "ok" and not later and logs[0].step1_status == "optimal"
        items[name] = (good, f"{r.outcome.status}, {len(logs)} iterations")
    _checks(say, 7, items)


def test_criterion8_toy(say):
    t0 = time.perf_counter()
    plant, U, S, cfg = toy_problem(max_iters=20)
    res = run(plant, U, S, cfg)
    rep = check_triple(res.triple, plant, U, S, samples=100_000)
    certs = check_certificates(res.triple.certificates, raise_on_failure=False)
    dt = time.perf_counter() - t0
    _checks(
        say,
        8,
        {
            "gamma0": (res.triple.gamma0 >= 0.75, f"{res.triple.gamma0:.6f}"),
            "max_violation": (rep.max_violation <= TOL, f"{rep.max_violation:.1e}"),
            "certificates": (not certs["failures"], certs["count"]),
            "seconds": (dt < 5, f"{dt:.2f}"),
        },
    )
