"""Alternating policy/barrier updates and the higher-degree extensions."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .. import poly as P
from ..poly import MultiIndex, PolyMatrix, Polynomial
from ..sampling import area_ratio
from ..sdp import Status
from .model import (
    DtcbfTriple,
    Extension,
    InputPolytope,
    IterationLog,
    LosslessnessViolation,
    NumericalFailure,
    OmegaInfeasible,
    PlantModel,
    SafeSet,
    Step1Infeasible,
    SynthesisConfig,
    SynthesisError,
    SynthesisResult,
)
from .steps import Step1Result, build_step1, build_step2, find_omega, find_psi, solve_step1, solve_step2

log = logging.getLogger("dtcbf.synth")

Callback = Callable[[IterationLog], None]


def shift_input(plant: PlantModel, U: InputPolytope, c: Sequence[float] | None = None):
    """Rewrite the plant for ``u~ = u + c`` so that ``u~ >= 0`` on the shifted polytope.

    Returns ``(shifted plant, c, shifted polytope)`` with ``f~ = f - g c``.
    """
    if c is None:
        lo, _ = U.bounds()
        c = -lo
    c = np.asarray(c, dtype=float)
    f = []
    for k in range(plant.n):
        acc = plant.f[k]
        for j in range(plant.m):
            if c[j] != 0.0:
                acc = acc - P.as_poly(plant.g[k, j]) * float(c[j])
        f.append(acc)
    shifted = PlantModel(plant.state, tuple(f), plant.g)
    return shifted, c, InputPolytope(U.M, U.d - U.M @ c)


def with_nonneg_rows(U: InputPolytope) -> InputPolytope:
    """Append ``u_i >= 0`` rows unless already present."""
    rows = [U.M]
    ds = [U.d]
    for i in range(U.m):
        e = np.zeros(U.m)
        e[i] = 1.0
        present = any(np.allclose(U.M[r] / max(abs(U.M[r, i]), 1e-300), e) and U.d[r] == 0 for r in range(U.n_rows) if U.M[r, i] > 0)
        if not present:
            rows.append(e[None, :])
            ds.append(np.zeros(1))
    return InputPolytope(np.vstack(rows), np.concatenate(ds))


def relevant_states(plant: PlantModel, polys: Sequence[Polynomial]) -> list[int]:
    """Smallest set of states closed under the dynamics that covers ``polys``."""
    state = set(plant.state)
    index = {v: k for k, v in enumerate(plant.state)}
    keep = set()
    for p in polys:
        keep |= p.variables() & state
    changed = True
    while changed:
        changed = False
        for v in list(keep):
            k = index[v]
            deps = plant.f[k].variables()
            for j in range(plant.m):
                deps |= P.as_poly(plant.g[k, j]).variables()
            new = (deps & state) - keep
            if new:
                keep |= new
                changed = True
    return [v for v in plant.state if v in keep]


def reduce_plant(plant: PlantModel, keep: Sequence[int]) -> PlantModel:
    rows = [plant.state.index(v) for v in keep]
    g = PolyMatrix.from_rows([[plant.g[k, j] for j in range(plant.m)] for k in rows])
    return PlantModel(tuple(keep), tuple(plant.f[k] for k in rows), g)


def _restrict(basis: Sequence[P.Monomial], keep: set[int]) -> list[P.Monomial]:
    return [m for m in basis if P.mono_vars(m) <= keep]


@dataclass
class Prepared:
    plant: PlantModel
    U: InputPolytope
    S: SafeSet
    cfg: SynthesisConfig
    h_basis: list[P.Monomial]
    pi_bases: list[list[P.Monomial]]
    shift: np.ndarray
    full_plant: PlantModel
    full_U: InputPolytope
    dropped: list[int]


def prepare(plant: PlantModel, U: InputPolytope, S: SafeSet, cfg: SynthesisConfig) -> Prepared:
    U.check_nonempty()
    if U.m != plant.m or len(cfg.pi_bases) != plant.m:
        raise SynthesisError(f"plant has {plant.m} inputs, polytope {U.m}, policy bases {len(cfg.pi_bases)}")
    extra = (cfg.h0.variables() | S.s.variables()) - set(plant.state)
    if extra:
        raise SynthesisError("h0 or s use non-state variables " + ", ".join(P.var_name(v) for v in extra))
    work = plant
    dropped: list[int] = []
    if cfg.reduce_states:
        keep = relevant_states(plant, [cfg.h0, S.s])
        if keep and len(keep) < plant.n:
            dropped = [v for v in plant.state if v not in keep]
            work = reduce_plant(plant, keep)
    keep_set = set(work.state)
    h_basis = _restrict(cfg.h_basis, keep_set)
    pi_bases = [_restrict(b, keep_set) for b in cfg.pi_bases]
    if not h_basis or any(not b for b in pi_bases):
        raise SynthesisError("a basis is empty after dropping irrelevant states")
    missing = cfg.h0.support() - set(h_basis)
    if missing:
        raise SynthesisError("h0 uses monomials outside the barrier basis: " + ", ".join(P.mono_str(m) for m in missing))
    Uw = U
    shift = np.zeros(plant.m)
    if cfg.extension is Extension.CASCADED:
        given = None if cfg.input_shift == "auto" else cfg.input_shift
        work, shift, Uw = shift_input(work, U, given)
        Uw = with_nonneg_rows(Uw)
    return Prepared(work, Uw, S, cfg, h_basis, pi_bases, shift, plant, U, dropped)


def structural_products(prep: Prepared, basis: Sequence[P.Monomial]) -> list[MultiIndex]:
    """Policy products that can appear for some barrier in ``span(basis)``."""
    dvs = P.new_decision_vars(len(basis))
    h = P.ParamPolynomial.linear_combination(dvs, [Polynomial({m: 1.0}) for m in basis])
    exp = P.expand_in_policy(h, prep.plant.f, prep.plant.g, prep.plant.state)
    return sorted(exp.a)


def _unshift(pi: Sequence[Polynomial], shift: np.ndarray) -> list[Polynomial]:
    return [p - float(c) for p, c in zip(pi, shift)]


def _triple(prep: Prepared, h, gamma0, pi, certs, mults, k) -> DtcbfTriple:
    return DtcbfTriple(h, gamma0, _unshift(pi, prep.shift), prep.full_plant.state, list(certs), dict(mults), k)


def _area(prep: Prepared, h: Polynomial) -> tuple[float, float]:
    return area_ratio(h, prep.S.s, prep.plant.state, prep.cfg.area_samples, prep.cfg.seed)


def alternate(prep: Prepared, basis: Sequence[P.Monomial], callback: Callback | None = None) -> SynthesisResult:
    """Policy update, multiplier search and barrier update until the barrier stops growing."""
    cfg = prep.cfg
    plant, U, S = prep.plant, prep.U, prep.S
    h0 = cfg.h0
    structural = structural_products(prep, basis)
    if cfg.extension is not Extension.CASCADED and any(sum(al) > 2 for al in structural):
        raise SynthesisError(
            "the barrier basis produces products of three or more policy entries; "
            "use the cascaded or fixed-policy extension"
        )
    exp0 = P.expand_in_policy(h0, plant.f, plant.g, plant.state)
    scale = max(h0.max_abs_coeff(), 1.0)
    active = [al for al in structural if al in exp0.a and exp0.a[al].max_abs_coeff() > cfg.inactive_tol * scale]
    frozen = [al for al in structural if al not in active]

    logs: list[IterationLog] = []
    history = [h0]
    records: list[Step1Result] = []
    triple = DtcbfTriple(h0, None, [], prep.full_plant.state)
    result = SynthesisResult(triple, logs, history, "max_iters", records)
    if frozen:
        result.flags.append("frozen:" + ",".join(str(a) for a in frozen))
    h_prev = h0
    for k in range(1, cfg.max_iters + 1):
        entry = IterationLog(k, "pending")
        try:
            built = build_step1(h_prev, plant, U, cfg, active, prep.pi_bases)
            try:
                s1 = solve_step1(built, cfg, h_prev, k)
            except Step1Infeasible as exc:
                if k > 1:
                    raise LosslessnessViolation(f"policy update infeasible at iteration {k}", k, exc.status) from exc
                raise
            records.append(s1)
            entry.step1_status = "optimal"
            entry.gamma0 = s1.gamma0
            entry.t_step1 = s1.seconds
            if k == 1:
                mults = dict(s1.multipliers)
                result.triple = _triple(prep, h0, s1.gamma0, s1.pi, s1.certificates, mults, 0)
            try:
                omega, odeg, _ = find_omega(h_prev, s1.pi, s1.gamma0, plant, cfg)
            except OmegaInfeasible as exc:
                entry.step2_status = "skipped"
                entry.note = str(exc)
                result.termination = "omega_infeasible"
                logs.append(entry)
                if callback:
                    callback(entry)
                break
            entry.omega_degree = odeg
            built2 = build_step2(
                h_prev, s1.pi, s1.gamma0, omega, s1.psi, plant, U, S, cfg, basis, s1, active, frozen
            )
            s2 = solve_step2(built2, cfg)
        except NumericalFailure as exc:
            exc.k = k
            exc.partial = result
            entry.note = str(exc)
            logs.append(entry)
            raise
        entry.t_step2 = s2.seconds
        if s2.status is Status.INFEASIBLE:
            entry.step2_status = "infeasible"
            result.termination = "step2_infeasible"
            logs.append(entry)
            if callback:
                callback(entry)
            break
        entry.step2_status = "optimal"
        entry.delta = s2.delta
        entry.area, entry.area_ratio = _area(prep, s2.h)
        mults = dict(s1.multipliers)
        mults.update({"Omega": omega, "Phi": s2.phi, "Xi": s2.xi})
        result.triple = _triple(prep, s2.h, s1.gamma0, s1.pi, s2.certificates, mults, k)
        h_prev = s2.h
        history.append(s2.h)
        logs.append(entry)
        log.info("iteration %d: gamma0=%.6g area ratio=%.4f", k, s1.gamma0, entry.area_ratio)
        if callback:
            callback(entry)
    return result


def run_fixed_policy(prep: Prepared, quad: SynthesisResult, callback: Callback | None = None) -> SynthesisResult:
    """Grow a barrier over the full basis with the policy of a finished run held fixed."""
    cfg = prep.cfg
    plant, U, S = prep.plant, prep.U, prep.S
    base = quad.triple
    if base.gamma0 is None:
        quad.flags.append("NoImprovement")
        return quad
    pi = [p + float(c) for p, c in zip(base.pi, prep.shift)]
    gamma0 = base.gamma0
    h_prev = base.h
    logs = list(quad.logs)
    history = list(quad.history)
    result = SynthesisResult(base, logs, history, "max_iters", list(quad.step1_records), list(quad.flags))
    k0 = len(logs)
    improved = False
    for j in range(1, cfg.fixed_policy_iters + 1):
        entry = IterationLog(k0 + j, "fixed", gamma0=gamma0, note="fixed policy")
        try:
            omega, odeg, _ = find_omega(h_prev, pi, gamma0, plant, cfg)
            psi = find_psi(h_prev, pi, U, cfg, plant.state)
        except OmegaInfeasible as exc:
            entry.step2_status = "skipped"
            entry.note = str(exc)
            logs.append(entry)
            result.termination = "omega_infeasible"
            break
        entry.omega_degree = odeg
        try:
            s2 = solve_step2(build_step2(h_prev, pi, gamma0, omega, psi, plant, U, S, cfg, prep.h_basis), cfg)
        except NumericalFailure as exc:
            exc.partial = result
            exc.k = k0 + j
            raise
        entry.t_step2 = s2.seconds
        if s2.status is Status.INFEASIBLE:
            entry.step2_status = "infeasible"
            logs.append(entry)
            result.termination = "step2_infeasible"
            if callback:
                callback(entry)
            break
        improved = True
        entry.step2_status = "optimal"
        entry.delta = s2.delta
        entry.area, entry.area_ratio = _area(prep, s2.h)
        mults = {"Omega": omega, "Phi": s2.phi, "Xi": s2.xi}
        mults.update({f"Psi{r + 1}": p for r, p in enumerate(psi)})
        result.triple = _triple(prep, s2.h, gamma0, pi, s2.certificates, mults, k0 + j)
        h_prev = s2.h
        history.append(s2.h)
        logs.append(entry)
        if callback:
            callback(entry)
    if not improved:
        result.flags.append("NoImprovement")
    return result


def quadratic_part(basis: Sequence[P.Monomial]) -> list[P.Monomial]:
    return [m for m in basis if P.mono_degree(m) <= 2]


def run(
    plant: PlantModel, U: InputPolytope, S: SafeSet, cfg: SynthesisConfig, callback: Callback | None = None
) -> SynthesisResult:
    """Synthesize a barrier, rate and policy starting from ``cfg.h0``."""
    prep = prepare(plant, U, S, cfg)
    if cfg.extension is Extension.FIXED_POLICY:
        quad = alternate(prep, quadratic_part(prep.h_basis), callback)
        if cfg.max_iters == 0:
            return quad
        return run_fixed_policy(prep, quad, callback)
    return alternate(prep, prep.h_basis, callback)


def replace_config(cfg: SynthesisConfig, **changes) -> SynthesisConfig:
    return dataclasses.replace(cfg, **changes)
