"""Policy update, multiplier search and barrier update programs."""

from __future__ import annotations

import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .. import poly as P
from ..poly import MultiIndex, Polynomial
from ..sdp import Status
from ..sosir import Certificate, CertificateResidual, SosProgram, SosResult
from .constraints import MultiplierSource, aux_key, relaxed_successor
from .model import (
    InputPolytope,
    NumericalFailure,
    OmegaInfeasible,
    PlantModel,
    SafeSet,
    Step1Infeasible,
    SynthesisConfig,
    SynthesisError,
)


@dataclass
class Step1Result:
    gamma0: float
    pi: list[Polynomial]
    aux: dict[MultiIndex, Polynomial]
    lam: Polynomial
    psi: list[Polynomial]
    multipliers: dict[str, Polynomial]
    certificates: list[Certificate]
    h_prev: Polynomial
    seconds: float = 0.0


@dataclass
class Step2Result:
    status: Status
    h: Polynomial | None = None
    delta: float | None = None
    phi: Polynomial | None = None
    xi: Polynomial | None = None
    certificates: list[Certificate] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class Step1Program:
    prog: SosProgram
    gamma0: P.AffineExpr
    pi: list
    lam: object
    psi: list
    source: MultiplierSource
    active: list[MultiIndex]


def _solve(prog: SosProgram, cfg: SynthesisConfig) -> SosResult:
    try:
        return prog.solve(cfg.solver, cfg.backend, cfg.eig_tol, cfg.coeff_tol)
    except CertificateResidual as exc:
        raise NumericalFailure(f"{prog.name}: solver output fails certificate checks: {exc}") from exc


def build_step1(
    h_prev: Polynomial,
    plant: PlantModel,
    U: InputPolytope,
    cfg: SynthesisConfig,
    active: Sequence[MultiIndex] | None = None,
    pi_bases: Sequence[Sequence[P.Monomial]] | None = None,
) -> Step1Program:
    """Find ``gamma0``, ``pi`` and auxiliaries making ``h_prev`` a barrier.

    ``active`` lists the policy products that get auxiliary polynomials;
    by default every product with a nonzero coefficient in the expansion.
    """
    U.check_nonempty()
    if U.m != plant.m:
        raise SynthesisError(f"input polytope has {U.m} columns for {plant.m} inputs")
    vars_ = list(plant.state)
    bases = pi_bases if pi_bases is not None else cfg.pi_bases
    exp = P.expand_in_policy(h_prev, plant.f, plant.g, plant.state)
    if active is None:
        active = [al for al in sorted(exp.a) if exp.a[al].max_abs_coeff() > cfg.inactive_tol]
    if cfg.extension.value != "cascaded" and any(sum(al) > 2 for al in active):
        raise SynthesisError("products of more than two policy entries need the cascaded extension")

    prog = SosProgram("step1")
    if cfg.gamma_mode == "maximize":
        gamma0 = prog.new_var("gamma0", lo=cfg.gamma_min, hi=1.0)
        prog.maximize(gamma0)
    else:
        gamma0 = prog.new_var("gamma0", lo=cfg.gamma_min, hi=1.0)
        prog.minimize_deviation(gamma0, cfg.gamma_target)
    pi = [prog.declare_free_poly(b, f"pi{i + 1}") for i, b in enumerate(bases)]
    src = MultiplierSource(prog, vars_)
    succ = relaxed_successor(prog, src, exp, pi, h_prev, active, cfg)
    lam = src.sos("Lambda", cfg.degrees.lam)
    prog.add_scalar_sos(succ - h_prev + P.as_param(gamma0) * h_prev - lam * h_prev, "decrease")
    psi = []
    for r in range(U.n_rows):
        row = P.as_param(Polynomial.constant(U.d[r]))
        for i in range(U.m):
            if U.M[r, i] != 0.0:
                row = row + pi[i] * U.M[r, i]
        psi_r = src.sos(f"Psi{r + 1}", cfg.degrees.psi)
        psi.append(psi_r)
        prog.add_scalar_sos(row - psi_r * h_prev, f"admissible{r + 1}")
    return Step1Program(prog, gamma0, pi, lam, psi, src, list(active))


def solve_step1(built: Step1Program, cfg: SynthesisConfig, h_prev: Polynomial, k: int = 1) -> Step1Result:
    t0 = time.perf_counter()
    res = _solve(built.prog, cfg)
    dt = time.perf_counter() - t0
    if res.status is Status.INFEASIBLE:
        raise Step1Infeasible(
            "policy update is infeasible for the initial barrier; try an h0 whose "
            "zero-superlevel set is a small disk around an equilibrium",
            k,
            res.status.value,
        )
    if not res.ok:
        raise NumericalFailure(f"policy update ended with status {res.status.value}: {res.solution.message}", k=k)
    values = {key: res.value(p) for key, p in built.source.created.items()}
    aux = {al: values[aux_key(al)] for al in built.active}
    return Step1Result(
        gamma0=float(res.value(built.gamma0)),
        pi=[res.value(p) for p in built.pi],
        aux=aux,
        lam=values["Lambda"],
        psi=[res.value(p) for p in built.psi],
        multipliers=values,
        certificates=res.certificates,
        h_prev=h_prev,
        seconds=dt,
    )


def find_omega(
    h_prev: Polynomial,
    pi: Sequence[Polynomial],
    gamma0: float,
    plant: PlantModel,
    cfg: SynthesisConfig,
    degree: int | None = None,
    retry: bool = True,
) -> tuple[Polynomial, int, list[Certificate]]:
    """SOS ``Omega`` with ``h(f+g pi) - h + gamma0 h - Omega h`` SOS.

    On failure the degree is raised by two once before giving up.
    """
    deg = cfg.degrees.omega if degree is None else degree
    exp = P.expand_in_policy(h_prev, plant.f, plant.g, plant.state)
    succ = P.as_poly(exp.recombine(list(pi)))
    tries = [deg, deg + 2] if retry else [deg]
    last = None
    for d in tries:
        prog = SosProgram("omega")
        omega = prog.sos_multiplier(plant.state, d, "Omega")
        prog.add_scalar_sos(succ - h_prev + gamma0 * h_prev - omega * h_prev, "decrease")
        res = _solve(prog, cfg)
        if res.ok:
            return res.value(omega), d, res.certificates
        last = res.status
    raise OmegaInfeasible(f"no multiplier Omega up to degree {tries[-1]} (status {last.value})")


def find_psi(
    h_prev: Polynomial, pi: Sequence[Polynomial], U: InputPolytope, cfg: SynthesisConfig, vars_: Sequence[int]
) -> list[Polynomial]:
    """Admissibility multipliers for a fixed policy and barrier."""
    prog = SosProgram("psi")
    psi = []
    for r in range(U.n_rows):
        row = Polynomial.constant(U.d[r])
        for i in range(U.m):
            row = row + pi[i] * U.M[r, i]
        p = prog.sos_multiplier(vars_, cfg.degrees.psi, f"Psi{r + 1}")
        psi.append(p)
        prog.add_scalar_sos(row - p * h_prev, f"admissible{r + 1}")
    res = _solve(prog, cfg)
    if not res.ok:
        raise OmegaInfeasible(f"no admissibility multipliers (status {res.status.value})")
    return [res.value(p) for p in psi]


def build_step2(
    h_prev: Polynomial,
    pi: Sequence[Polynomial],
    gamma0: float,
    omega: Polynomial,
    psi: Sequence[Polynomial],
    plant: PlantModel,
    U: InputPolytope,
    S: SafeSet,
    cfg: SynthesisConfig,
    h_basis: Sequence[P.Monomial] | None = None,
    step1: Step1Result | None = None,
    active: Sequence[MultiIndex] = (),
    frozen: Sequence[MultiIndex] = (),
):
    """Find a new barrier ``h`` enclosing the old superlevel set.

    With ``step1`` given, the policy-update constraints are re-imposed with
    ``h`` unknown and the policy-update multipliers fixed, so the next policy
    update stays feasible.  Products in ``frozen`` keep a zero coefficient.
    """
    vars_ = list(plant.state)
    basis = list(h_basis if h_basis is not None else cfg.h_basis)
    prog = SosProgram("step2")
    h = prog.declare_free_poly(basis, "h")
    exp = P.expand_in_policy(h, plant.f, plant.g, plant.state)
    for alpha in frozen:
        if alpha in exp.a:
            prog.add_eq(exp.a[alpha], f"frozen{alpha}")

    succ = exp.recombine(list(pi))
    prog.add_scalar_sos(succ - h + gamma0 * h - omega * h, "decrease")
    for r in range(U.n_rows):
        row = Polynomial.constant(U.d[r])
        for i in range(U.m):
            row = row + pi[i] * U.M[r, i]
        prog.add_scalar_sos(row - psi[r] * h, f"admissible{r + 1}")
    phi = prog.sos_multiplier(vars_, cfg.degrees.phi, "Phi")
    prog.add_scalar_sos(-h - cfg.epsilon + phi * S.s, "containment")
    xi = prog.sos_multiplier(vars_, cfg.degrees.xi, "Xi")
    if cfg.step2_objective == "max_delta":
        delta = prog.new_var("delta", lo=cfg.delta, hi=cfg.max_delta)
        prog.maximize(delta)
        prog.add_scalar_sos(h - P.as_param(delta) - xi * h_prev, "enlarge")
    else:
        delta = P.AffineExpr(cfg.delta)
        prog.add_scalar_sos(h - cfg.delta - xi * h_prev, "enlarge")

    if step1 is not None:
        fixed = dict(step1.multipliers)
        src = MultiplierSource(prog, vars_, fixed)
        relaxed = relaxed_successor(prog, src, exp, list(pi), h, active, cfg)
        prog.add_scalar_sos(relaxed - h + gamma0 * h - step1.lam * h, "decrease-relaxed")
    return prog, h, delta, phi, xi


def solve_step2(built, cfg: SynthesisConfig) -> Step2Result:
    prog, h, delta, phi, xi = built
    t0 = time.perf_counter()
    res = _solve(prog, cfg)
    dt = time.perf_counter() - t0
    if res.status is Status.INFEASIBLE:
        return Step2Result(res.status, seconds=dt)
    if not res.ok:
        raise NumericalFailure(f"barrier update ended with status {res.status.value}: {res.solution.message}")
    d = res.value(delta) if isinstance(delta, P.AffineExpr) else float(delta)
    return Step2Result(res.status, res.value(h), float(d), res.value(phi), res.value(xi), res.certificates, dt)


def product_gaps(step1: Step1Result, plant: PlantModel, pts: np.ndarray) -> dict[MultiIndex, float]:
    """Minimum of ``a_alpha (pi^alpha - aux_alpha)`` over sample points."""
    exp = P.expand_in_policy(step1.h_prev, plant.f, plant.g, plant.state)
    vals = [p.evaluate_many(pts, plant.state) for p in step1.pi]
    out = {}
    for alpha, aux in step1.aux.items():
        a = P.as_poly(exp.a.get(alpha, Polynomial())).evaluate_many(pts, plant.state)
        prod = np.ones(pts.shape[0])
        for i, e in enumerate(alpha):
            prod = prod * vals[i] ** e
        gap = a * (prod - aux.evaluate_many(pts, plant.state))
        out[alpha] = float(gap.min()) if gap.size else 0.0
    return out
