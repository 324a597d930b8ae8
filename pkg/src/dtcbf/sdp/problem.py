"""Standard-form conic programs and their solutions.

The primal is ``min c'x  s.t.  A x = b,  x in K`` where ``K`` is a product of
a free block, a non-negative orthant and PSD cones.  PSD blocks are stored in
``svec`` form: the upper triangle row by row with off-diagonal entries
scaled by ``sqrt(2)`` so that ``svec(X) . svec(S) = trace(X S)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)


class SdpError(Exception):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITERS = "MaxIters"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 200
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    step_fraction: float = 0.99
    infeas_tol: float = 1e-6  # ||A'y + s|| / b'y for a Farkas certificate
    reduced_tol: float = 1e-7  # accepted on stagnation when feas_tol is out of reach
    stall_iters: int = 8
    verbose: bool = False

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if not (self.feas_tol > 0 and self.gap_tol > 0 and self.infeas_tol > 0 and self.reduced_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


def _triu(n: int):
    return np.triu_indices(n)


def svec(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    iu = _triu(n)
    v = X[iu].astype(float).copy()
    v[iu[0] != iu[1]] *= SQRT2
    return v


def smat(v: np.ndarray, n: int) -> np.ndarray:
    iu = _triu(n)
    vals = np.asarray(v, dtype=float).copy()
    off = iu[0] != iu[1]
    vals[off] /= SQRT2
    X = np.zeros((n, n))
    X[iu] = vals
    X[(iu[1], iu[0])] = vals
    return X


def svec_index(n: int, i: int, j: int) -> int:
    """Position of entry ``(i, j)`` within ``svec`` of an ``n x n`` matrix."""
    if i > j:
        i, j = j, i
    return i * n - i * (i - 1) // 2 + (j - i)


@dataclass
class SdpProblem:
    """``min c'x  s.t.  A x = b`` over free, non-negative and PSD blocks."""

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    n_free: int = 0
    n_lin: int = 0
    psd: tuple[int, ...] = ()
    row_labels: list[str] | None = None

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.psd = tuple(int(n) for n in self.psd)
        if self.A.shape != (self.b.size, self.nvar):
            raise SdpError(f"A has shape {self.A.shape}, expected ({self.b.size}, {self.nvar})")
        if self.c.size != self.nvar:
            raise SdpError("objective length does not match the cone sizes")

    @property
    def nvar(self) -> int:
        return self.n_free + self.n_lin + sum(svec_len(n) for n in self.psd)

    @property
    def nrows(self) -> int:
        return self.b.size

    def block_offsets(self) -> list[int]:
        """Start of each PSD block in the variable vector."""
        out = []
        off = self.n_free + self.n_lin
        for n in self.psd:
            out.append(off)
            off += svec_len(n)
        return out

    def split(self, x: np.ndarray):
        """Return ``(free, lin, [PSD matrices])`` views of a primal vector."""
        f = x[: self.n_free]
        lin = x[self.n_free : self.n_free + self.n_lin]
        mats = [smat(x[o : o + svec_len(n)], n) for o, n in zip(self.block_offsets(), self.psd)]
        return f, lin, mats

    def layout_signature(self) -> tuple:
        """Hashable summary used to compare lowered layouts across runs."""
        A = self.A.tocsr()
        A.sort_indices()
        return (
            self.n_free,
            self.n_lin,
            self.psd,
            A.shape,
            A.indptr.tobytes(),
            A.indices.tobytes(),
            A.data.tobytes(),
            self.b.tobytes(),
            self.c.tobytes(),
        )

    def scaled_rows(self, factor: float | np.ndarray) -> SdpProblem:
        f = np.broadcast_to(np.asarray(factor, dtype=float), (self.nrows,))
        D = sp.diags(f)
        return SdpProblem(D @ self.A, f * self.b, self.c, self.n_free, self.n_lin, self.psd, self.row_labels)


@dataclass
class Residuals:
    primal: float
    dual: float
    gap: float
    min_eig_x: float
    min_eig_s: float


@dataclass
class Solution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    residuals: Residuals | None = None
    iterations: int = 0
    certificate: np.ndarray | None = None
    message: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def cone_min_eigs(problem: SdpProblem, v: np.ndarray, free_ok: bool = True) -> float:
    """Smallest cone eigenvalue of ``v`` (free block ignored)."""
    vals = [np.inf]
    lin = v[problem.n_free : problem.n_free + problem.n_lin]
    if lin.size:
        vals.append(float(lin.min()))
    for o, n in zip(problem.block_offsets(), problem.psd):
        vals.append(float(np.linalg.eigvalsh(smat(v[o : o + svec_len(n)], n))[0]))
    return min(vals)


def compute_residuals(problem: SdpProblem, x: np.ndarray, y: np.ndarray, s: np.ndarray) -> Residuals:
    """Residuals recomputed from the returned vectors only."""
    A, b, c = problem.A, problem.b, problem.c
    rp = float(np.max(np.abs(A @ x - b), initial=0.0)) / (1.0 + float(np.max(np.abs(b), initial=0.0)))
    rd = float(np.max(np.abs(A.T @ y + s - c), initial=0.0)) / (1.0 + float(np.max(np.abs(c), initial=0.0)))
    pobj, dobj = float(c @ x), float(b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return Residuals(rp, rd, gap, cone_min_eigs(problem, x), cone_min_eigs(problem, s))


def check_solution(problem: SdpProblem, sol: Solution, feas_tol: float = 1e-6, eig_tol: float = 1e-7) -> bool:
    """Independent acceptance test for an optimal solution."""
    if sol.status is not Status.OPTIMAL:
        return False
    r = compute_residuals(problem, sol.x, sol.y, sol.s)
    bnorm = float(np.max(np.abs(problem.b), initial=0.0))
    pres = float(np.max(np.abs(problem.A @ sol.x - problem.b), initial=0.0))
    return pres <= feas_tol * (1.0 + bnorm) and r.min_eig_x >= -eig_tol


def check_farkas(problem: SdpProblem, y: np.ndarray, tol: float = 1e-6) -> bool:
    """Check that ``y`` certifies primal infeasibility.

    A valid certificate has ``b'y > 0`` and ``-A'y`` in the dual cone
    (zero on the free block) up to ``tol`` relative to ``b'y``.
    """
    by = float(problem.b @ y)
    if by <= 0:
        return False
    z = -(problem.A.T @ y) / by
    free = z[: problem.n_free]
    if free.size and np.max(np.abs(free)) > tol:
        return False
    zz = z.copy()
    zz[: problem.n_free] = 0.0
    return cone_min_eigs(problem, zz) >= -tol
