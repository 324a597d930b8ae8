"""Problem data, configuration and results for barrier synthesis."""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .. import poly as P
from ..poly import Monomial, PolyMatrix, Polynomial
from ..sdp import SolverSettings
from ..sosir import Certificate


class SynthesisError(Exception):
    pass


class InfeasibleInput(SynthesisError):
    """The input polytope is empty."""


class UnboundedInputSet(SynthesisError):
    pass


class Step1Infeasible(SynthesisError):
    def __init__(self, message: str, k: int = 1, status: str = ""):
        super().__init__(message)
        self.k = k
        self.status = status


class LosslessnessViolation(Step1Infeasible):
    """Step 1 failed after a successful first iteration."""


class OmegaInfeasible(SynthesisError):
    pass


class NumericalFailure(SynthesisError):
    def __init__(self, message: str, partial=None, k: int = 0):
        super().__init__(message)
        self.partial = partial
        self.k = k


@dataclass(frozen=True)
class PlantModel:
    """``x+ = f(x) + g(x) u`` over the state variables ``state``."""

    state: tuple[int, ...]
    f: tuple[Polynomial, ...]
    g: PolyMatrix

    def __post_init__(self):
        n, m = self.g.shape
        if len(self.f) != len(self.state) or n != len(self.state):
            raise SynthesisError(f"f has {len(self.f)} entries and g has {n} rows for {len(self.state)} states")
        allowed = set(self.state)
        for p in list(self.f) + [e for row in self.g.entries for e in row]:
            extra = p.variables() - allowed
            if extra:
                raise SynthesisError("plant depends on non-state variables " + ", ".join(P.var_name(v) for v in extra))

    @property
    def n(self) -> int:
        return len(self.state)

    @property
    def m(self) -> int:
        return self.g.shape[1]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vectorized ``f(x) + g(x) u`` for rows of ``x`` and ``u``."""
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        out = np.empty_like(x, dtype=float)
        for k in range(self.n):
            acc = self.f[k].evaluate_many(x, self.state)
            for j in range(self.m):
                gkj = P.as_poly(self.g[k, j])
                if not gkj.is_zero():
                    acc = acc + gkj.evaluate_many(x, self.state) * u[:, j]
            out[:, k] = acc
        return out


@dataclass(frozen=True)
class InputPolytope:
    """``{u : M u + d >= 0}``."""

    M: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if M.shape[0] != d.size:
            raise SynthesisError("M and d row counts differ")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "d", d)

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> InputPolytope:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        m = lo.size
        I = np.eye(m)
        return cls(np.vstack([I, -I]), np.concatenate([-lo, hi]))

    @property
    def m(self) -> int:
        return self.M.shape[1]

    @property
    def n_rows(self) -> int:
        return self.M.shape[0]

    def is_empty(self) -> bool:
        res = linprog(np.zeros(self.m), A_ub=-self.M, b_ub=self.d, bounds=[(None, None)] * self.m, method="highs")
        return res.status == 2

    def check_nonempty(self) -> None:
        if self.is_empty():
            raise InfeasibleInput("input polytope {u : Mu + d >= 0} is empty")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate minimum and maximum over the polytope."""
        self.check_nonempty()
        lo = np.empty(self.m)
        hi = np.empty(self.m)
        for i in range(self.m):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(self.m)
                c[i] = sign
                res = linprog(c, A_ub=-self.M, b_ub=self.d, bounds=[(None, None)] * self.m, method="highs")
                if res.status == 3:
                    raise UnboundedInputSet(f"input coordinate {i + 1} is unbounded")
                out[i] = sign * res.fun
        return lo, hi

    def contains(self, u: np.ndarray, tol: float = 0.0) -> np.ndarray:
        u = np.atleast_2d(u)
        return np.all(u @ self.M.T + self.d >= -tol, axis=1)


@dataclass(frozen=True)
class SafeSet:
    """``{x : s(x) >= 0}``."""

    s: Polynomial


class Extension(str, enum.Enum):
    QUADRATIC = "quadratic"
    CASCADED = "cascaded"
    FIXED_POLICY = "fixed-policy"


@dataclass
class Degrees:
    """Degrees of SOS multipliers and auxiliary polynomials."""

    lam: int = 2
    omega: int = 2
    phi: int = 2
    xi: int = 2
    psi: int = 2
    sigma: int = 0
    xi_prop: int = 0
    eta: int = 0
    sigma_tilde: int = 0
    pi_tilde: int | None = None  # default 2 * deg(pi)
    theta: int | None = None  # default: same as pi_tilde
    mu_tilde: int | None = None  # cascade auxiliaries; default doubles per level


@dataclass
class SynthesisConfig:
    h_basis: list[Monomial]
    pi_bases: list[list[Monomial]]
    h0: Polynomial
    degrees: Degrees = field(default_factory=Degrees)
    epsilon: float = 1e-4
    delta: float = 1e-4
    gamma_mode: str = "maximize"  # or "target"
    gamma_target: float = 0.8
    gamma_min: float = 1e-6
    max_iters: int = 100
    input_shift: str | list[float] = "auto"
    extension: Extension = Extension.QUADRATIC
    step2_objective: str = "feasibility"  # or "max_delta"
    max_delta: float = 1.0
    inactive_tol: float = 1e-9
    reduce_states: bool = True
    fixed_policy_iters: int = 50
    area_samples: int = 200_000
    seed: int = 0
    eig_tol: float = 1e-7
    coeff_tol: float = 1e-6
    solver: SolverSettings = field(default_factory=SolverSettings)
    backend: str = "builtin"

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta > 0):
            raise SynthesisError("epsilon and delta must be positive")
        if self.h_degree % 2:
            raise SynthesisError("the barrier basis must have even degree so that -h can carry a Gram certificate")
        self.extension = Extension(self.extension)
        if self.gamma_mode not in ("maximize", "target"):
            raise SynthesisError("gamma_mode must be 'maximize' or 'target'")
        if self.step2_objective not in ("feasibility", "max_delta"):
            raise SynthesisError("step2_objective must be 'feasibility' or 'max_delta'")

    @property
    def pi_degree(self) -> int:
        return max((P.mono_degree(m) for b in self.pi_bases for m in b), default=0)

    @property
    def h_degree(self) -> int:
        return max((P.mono_degree(m) for m in self.h_basis), default=0)

    def pi_tilde_degree(self) -> int:
        d = self.degrees.pi_tilde
        return 2 * self.pi_degree if d is None else d

    def theta_degree(self) -> int:
        d = self.degrees.theta
        return self.pi_tilde_degree() if d is None else d


@dataclass
class DtcbfTriple:
    """A barrier ``h``, rate ``gamma0`` and policy ``pi`` with their proof."""

    h: Polynomial
    gamma0: float | None
    pi: list[Polynomial]
    state: tuple[int, ...] = ()
    certificates: list[Certificate] = field(default_factory=list)
    multipliers: dict[str, Polynomial] = field(default_factory=dict)
    k: int = 0

    def policy_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if not self.pi:
            return np.zeros((x.shape[0], 0))
        return np.column_stack([p.evaluate_many(x, self.state) for p in self.pi])

    def to_json(self) -> dict:
        return {
            "state": [P.var_name(v) for v in self.state],
            "h": P.format_poly(self.h),
            "h_terms": _terms_json(self.h),
            "gamma0": self.gamma0,
            "pi": [P.format_poly(p) for p in self.pi],
            "pi_terms": [_terms_json(p) for p in self.pi],
            "multipliers": {k: P.format_poly(v) for k, v in sorted(self.multipliers.items())},
            "k": self.k,
        }

    @classmethod
    def from_json(cls, d: dict) -> DtcbfTriple:
        state = P.var_ids(d["state"])
        return cls(
            P.parse_poly(d["h"]),
            d["gamma0"],
            [P.parse_poly(s) for s in d["pi"]],
            state,
            [],
            {k: P.parse_poly(v) for k, v in d.get("multipliers", {}).items()},
            d.get("k", 0),
        )


def _terms_json(p: Polynomial) -> list:
    return [[P.mono_str(m), c] for m, c in sorted(p.terms.items(), key=lambda t: P.grlex_key(t[0]))]


@dataclass
class IterationLog:
    k: int
    step1_status: str
    step2_status: str = "skipped"
    gamma0: float | None = None
    delta: float | None = None
    area: float | None = None
    area_ratio: float | None = None
    t_step1: float = 0.0
    t_step2: float = 0.0
    omega_degree: int | None = None
    note: str = ""

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SynthesisResult:
    triple: DtcbfTriple
    logs: list[IterationLog]
    history: list[Polynomial]
    termination: str
    step1_records: list = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
