"""Sampling-based checks of a synthesized triple.

Nothing here touches the SDP layer: every check is a polynomial evaluation,
so a bug in the synthesizer cannot certify its own output.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import poly as P
from .poly import Polynomial
from .sampling import DegenerateBounds, check_box, inflate, safe_box, sample_superlevel
from .sosir import COEFF_TOL, EIG_TOL, Certificate, CertificateResidual
from .synth.model import DtcbfTriple, InputPolytope, PlantModel, SafeSet

log = logging.getLogger("dtcbf.verify")

DEFAULT_TOL = 1e-6


class EmptySuperlevelSet(UserWarning):
    pass


class UnknownPlane(ValueError):
    pass


@dataclass
class Check:
    name: str
    max_violation: float = 0.0
    samples: int = 0
    worst_point: list[float] | None = None

    def update(self, values: np.ndarray, pts: np.ndarray) -> None:
        """Fold in ``values`` where negative means violated."""
        self.samples += int(values.size)
        if not values.size:
            return
        i = int(np.argmin(values))
        v = max(0.0, -float(values[i]))
        if v > self.max_violation or self.worst_point is None:
            self.max_violation = max(self.max_violation, v)
            self.worst_point = pts[i].tolist()


@dataclass
class SimulationSummary:
    trajectories: int = 0
    steps: int = 0
    violations: int = 0
    max_violation: float = 0.0
    worst_start: list[float] | None = None


@dataclass
class VerificationReport:
    decrease: Check = field(default_factory=lambda: Check("decrease"))
    admissibility: Check = field(default_factory=lambda: Check("admissibility"))
    containment: Check = field(default_factory=lambda: Check("containment"))
    gamma_ok: bool = True
    box: list[list[float]] = field(default_factory=list)
    seed: int = 0
    warnings: list[str] = field(default_factory=list)
    simulation: SimulationSummary | None = None
    certificates: dict | None = None

    @property
    def max_violation(self) -> float:
        worst = max(self.decrease.max_violation, self.admissibility.max_violation, self.containment.max_violation)
        if self.simulation is not None:
            worst = max(worst, self.simulation.max_violation)
        return worst if self.gamma_ok else float("inf")

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        ok = self.max_violation <= tol
        if self.certificates is not None:
            ok = ok and not self.certificates.get("failures")
        return ok

    def to_json(self) -> dict:
        out = {
            "max_violation": self.max_violation,
            "gamma_ok": self.gamma_ok,
            "box": self.box,
            "seed": self.seed,
            "warnings": list(self.warnings),
        }
        for c in (self.decrease, self.admissibility, self.containment):
            out[c.name] = c.__dict__.copy()
        out["simulation"] = None if self.simulation is None else self.simulation.__dict__.copy()
        out["certificates"] = self.certificates
        return out

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def default_box(S: SafeSet, vars_: Sequence[int], margin: float = 0.2) -> np.ndarray:
    return inflate(safe_box(S.s, vars_), margin)


def decrease_values(triple: DtcbfTriple, plant: PlantModel, pts: np.ndarray) -> np.ndarray:
    """``h(f + g pi) - h + gamma0 h`` at each row of ``pts``."""
    u = triple.policy_values(pts)
    nxt = plant.step(pts, u)
    h = triple.h.evaluate_many(pts, plant.state)
    return triple.h.evaluate_many(nxt, plant.state) - h + triple.gamma0 * h


def admissibility_values(triple: DtcbfTriple, U: InputPolytope, pts: np.ndarray) -> np.ndarray:
    """Smallest entry of ``M pi(x) + d`` at each point."""
    u = triple.policy_values(pts)
    if U.n_rows == 0:
        return np.zeros(pts.shape[0])
    return (u @ U.M.T + U.d).min(axis=1)


def check_triple(
    triple: DtcbfTriple,
    plant: PlantModel,
    U: InputPolytope,
    S: SafeSet,
    samples: int = 100_000,
    seed: int = 0,
    box: np.ndarray | None = None,
) -> VerificationReport:
    """Sample the barrier conditions on ``{h >= 0}`` and containment outside ``S``."""
    vars_ = plant.state
    box = check_box(default_box(S, vars_) if box is None else box)
    rng = np.random.default_rng(seed)
    rep = VerificationReport(box=box.tolist(), seed=seed)
    g0 = triple.gamma0
    rep.gamma_ok = g0 is not None and 0.0 < g0 <= 1.0
    if not rep.gamma_ok:
        rep.warnings.append(f"gamma0 = {g0} is outside (0, 1]")
        return rep

    pts = sample_superlevel(triple.h, vars_, samples, rng, box)
    if pts.shape[0] == 0:
        msg = "zero-superlevel set is empty on the sampling box; conditions hold vacuously"
        warnings.warn(msg, EmptySuperlevelSet, stacklevel=2)
        rep.warnings.append(msg)
    else:
        rep.decrease.update(decrease_values(triple, plant, pts), pts)
        rep.admissibility.update(admissibility_values(triple, U, pts), pts)
        # s >= 0 on the barrier set is the same containment seen from inside
        rep.containment.update(S.s.evaluate_many(pts, vars_), pts)
        if pts.shape[0] < samples:
            rep.warnings.append(f"only {pts.shape[0]} of {samples} samples landed in the zero-superlevel set")

    out = sample_superlevel(-S.s, vars_, samples, rng, box)
    out = out[S.s.evaluate_many(out, vars_) < 0]
    # h must be strictly negative outside S; a zero value counts as violated by 0
    rep.containment.update(-triple.h.evaluate_many(out, vars_), out)
    return rep


def simulate(
    triple: DtcbfTriple,
    plant: PlantModel,
    x0: np.ndarray,
    steps: int = 50,
    S: SafeSet | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, SimulationSummary]:
    """Closed-loop rollouts under ``pi``; returns states of shape ``(steps+1, N, n)``."""
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    traj = [x]
    worst = np.zeros(x.shape[0])
    for _ in range(steps):
        x = plant.step(x, triple.policy_values(x))
        traj.append(x)
    traj = np.stack(traj)
    for xs in traj:
        v = -triple.h.evaluate_many(xs, plant.state)
        if S is not None:
            v = np.maximum(v, -S.s.evaluate_many(xs, plant.state))
        worst = np.maximum(worst, np.nan_to_num(v, nan=np.inf))
    summary = SimulationSummary(x.shape[0], steps)
    if worst.size:
        summary.violations = int((worst > tol).sum())
        summary.max_violation = max(0.0, float(worst.max()))
        summary.worst_start = traj[0, int(np.argmax(worst))].tolist()
    return traj, summary


def simulate_from_set(
    triple: DtcbfTriple,
    plant: PlantModel,
    S: SafeSet,
    trajectories: int = 1000,
    steps: int = 50,
    seed: int = 0,
    box: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
) -> SimulationSummary:
    box = check_box(default_box(S, plant.state) if box is None else box)
    x0 = sample_superlevel(triple.h, plant.state, trajectories, np.random.default_rng(seed), box)
    _, summary = simulate(triple, plant, x0, steps, S, tol)
    return summary


def check_certificates(
    certs: Sequence[Certificate], eig_tol: float = EIG_TOL, coeff_tol: float = COEFF_TOL, raise_on_failure: bool = True
) -> dict:
    """Eigenvalue and reconstruction checks of stored Gram matrices.

    A Gram passes when its smallest eigenvalue is at least ``-eig_tol`` and
    every coefficient of ``m' G m`` is within ``coeff_tol`` of the constraint.
    """
    failures = []
    worst_eig = float("inf")
    worst_res = 0.0
    for c in certs:
        worst_eig = min(worst_eig, c.min_eig())
        worst_res = max(worst_res, c.residual())
        failures.extend(c.check(eig_tol, coeff_tol))
    report = {
        "count": len(certs),
        "min_eigenvalue": None if not certs else worst_eig,
        "max_residual": worst_res,
        "eig_tol": eig_tol,
        "coeff_tol": coeff_tol,
        "failures": failures,
    }
    if failures and raise_on_failure:
        raise CertificateResidual("; ".join(failures), failures)
    return report


@dataclass
class LevelSet:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # shape (len(ys), len(xs))
    boundary: np.ndarray  # (k, 2) points where h crosses zero

    def rows(self):
        for i, y in enumerate(self.ys):
            for j, x in enumerate(self.xs):
                yield float(x), float(y), float(self.values[i, j])

    def write_csv(self, path, boundary_only: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "h"])
            if boundary_only:
                for x, y in self.boundary:
                    w.writerow([repr(float(x)), repr(float(y)), "0.0"])
            else:
                for r in self.rows():
                    w.writerow([repr(v) for v in r])


def _plane_points(vars_: Sequence[int], plane: Sequence[int], fixed: dict[int, float], X, Y) -> np.ndarray:
    pts = np.zeros((X.size, len(vars_)))
    for k, v in enumerate(vars_):
        if v == plane[0]:
            pts[:, k] = X.ravel()
        elif v == plane[1]:
            pts[:, k] = Y.ravel()
        else:
            pts[:, k] = fixed.get(v, 0.0)
    return pts


def levelset_sample(
    h: Polynomial,
    bounds,
    resolution: int = 200,
    vars_: Sequence[int] | None = None,
    plane: Sequence[int] | None = None,
    fixed: dict[int, float] | None = None,
) -> LevelSet:
    """Grid values of ``h`` on a 2D plane plus the interpolated zero crossings.

    ``plane`` names the two plotted variables; the others are held at
    ``fixed`` (zero by default).
    """
    bounds = check_box(np.asarray(bounds, dtype=float))
    if bounds.shape[0] != 2:
        raise DegenerateBounds(f"need bounds for exactly two plane variables, got {bounds.shape[0]}")
    if resolution < 2:
        raise DegenerateBounds("resolution must be at least 2")
    if vars_ is None:
        vars_ = sorted(h.variables()) or list(P.state_vars(2))
    if plane is None:
        if len(vars_) != 2:
            raise UnknownPlane("a plane must be given for more than two variables")
        plane = tuple(vars_)
    missing = [v for v in plane if v not in vars_]
    if len(plane) != 2 or missing:
        raise UnknownPlane(f"plane {[P.var_name(v) for v in plane]} is not a pair of state variables")
    xs = np.linspace(bounds[0, 0], bounds[0, 1], resolution)
    ys = np.linspace(bounds[1, 0], bounds[1, 1], resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = _plane_points(vars_, plane, fixed or {}, X, Y)
    V = h.evaluate_many(pts, vars_).reshape(X.shape)
    return LevelSet(xs, ys, V, _zero_crossings(xs, ys, V))


def _zero_crossings(xs, ys, V) -> np.ndarray:
    out = []
    # horizontal edges
    a, b = V[:, :-1], V[:, 1:]
    i, j = np.nonzero((a >= 0) != (b >= 0))
    t = a[i, j] / (a[i, j] - b[i, j])
    out.append(np.column_stack([xs[j] + t * (xs[j + 1] - xs[j]), ys[i]]))
    # vertical edges
    a, b = V[:-1, :], V[1:, :]
    i, j = np.nonzero((a >= 0) != (b >= 0))
    t = a[i, j] / (a[i, j] - b[i, j])
    out.append(np.column_stack([xs[j], ys[i] + t * (ys[i + 1] - ys[i])]))
    return np.concatenate(out) if out else np.zeros((0, 2))


def report_violations(rep: VerificationReport, tol: float = DEFAULT_TOL) -> list[str]:
    """Human-readable lines for every condition above ``tol``."""
    lines = []
    for c in (rep.decrease, rep.admissibility, rep.containment):
        if c.max_violation > tol:
            lines.append(f"{c.name}: violation {c.max_violation:.3e} at {c.worst_point}")
    if rep.simulation is not None and rep.simulation.max_violation > tol:
        s = rep.simulation
        lines.append(f"simulation: {s.violations} of {s.trajectories} runs leave the set (worst {s.max_violation:.3e} from {s.worst_start})")
    if not rep.gamma_ok:
        lines.append("gamma0 outside (0, 1]")
    return lines
