"""Solver backends sharing the ``solve`` contract."""

from __future__ import annotations

from collections.abc import Callable, Iterable
from typing import Protocol

import numpy as np

from .problem import SdpProblem, Solution, SolverSettings, Status, compute_residuals, smat, svec, svec_len
from .solver import solve


class BackendUnavailable(RuntimeError):
    pass


class Backend(Protocol):
    name: str

    def submit(self, problem: SdpProblem, settings: SolverSettings | None = None) -> Solution: ...


class BuiltinBackend:
    name = "builtin"

    def submit(self, problem: SdpProblem, settings: SolverSettings | None = None) -> Solution:
        return solve(problem, settings)


class EchoBackend:
    """Test double that replays canned solutions in order."""

    name = "echo"

    def __init__(self, solutions: Iterable[Solution] | Callable[[SdpProblem], Solution]):
        self._fn = solutions if callable(solutions) else None
        self._queue = [] if callable(solutions) else list(solutions)
        self.received: list[SdpProblem] = []

    def submit(self, problem: SdpProblem, settings: SolverSettings | None = None) -> Solution:
        self.received.append(problem)
        if self._fn is not None:
            return self._fn(problem)
        if not self._queue:
            raise RuntimeError("echo backend has no canned solutions left")
        return self._queue.pop(0)


class CvxoptBackend:
    """Cross-check route through cvxopt's conelp.

    Free variables are passed as an unconstrained ``x`` and cone variables
    as ``G x + s = h`` with ``G = -I`` on their coordinates.
    """

    name = "cvxopt"

    def __init__(self):
        try:
            import cvxopt  # noqa: F401
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise BackendUnavailable("cvxopt is not installed") from exc

    def submit(self, problem: SdpProblem, settings: SolverSettings | None = None) -> Solution:
        import cvxopt
        from cvxopt import solvers

        settings = settings or SolverSettings()
        nf, nl = problem.n_free, problem.n_lin
        nvar = problem.nvar
        # conelp uses dense column-major lower-triangle-free 's' blocks of n*n
        rows_G = []
        vals_G = []
        cols_G = []
        r = 0
        for j in range(nl):
            rows_G.append(r)
            cols_G.append(nf + j)
            vals_G.append(-1.0)
            r += 1
        for off, n in zip(problem.block_offsets(), problem.psd):
            for i in range(n):
                for k in range(n):
                    a, bb = (i, k) if i <= k else (k, i)
                    pos = off + a * n - a * (a - 1) // 2 + (bb - a)
                    scale = 1.0 if a == bb else 1.0 / np.sqrt(2.0)
                    # column-major index of entry (k, i)
                    rows_G.append(r + i * n + k)
                    cols_G.append(pos)
                    vals_G.append(-scale)
            r += n * n
        G = cvxopt.spmatrix(vals_G, rows_G, cols_G, (r, nvar))
        h = cvxopt.matrix(0.0, (r, 1))
        A = problem.A.tocoo()
        Acv = cvxopt.spmatrix(A.data.tolist(), A.row.tolist(), A.col.tolist(), A.shape)
        dims = {"l": nl, "q": [], "s": list(problem.psd)}
        opts = {
            "show_progress": False,
            "abstol": settings.gap_tol,
            "reltol": settings.gap_tol,
            "feastol": settings.feas_tol,
            "maxiters": settings.max_iters,
        }
        out = solvers.conelp(
            cvxopt.matrix(problem.c), G, h, dims, Acv, cvxopt.matrix(problem.b), options=opts
        )
        status_map = {
            "optimal": Status.OPTIMAL,
            "primal infeasible": Status.INFEASIBLE,
            "dual infeasible": Status.UNBOUNDED,
        }
        status = status_map.get(out["status"], Status.MAX_ITERS)
        x = np.array(out["x"]).ravel() if out["x"] is not None else np.zeros(nvar)
        y = np.array(out["y"]).ravel() if out["y"] is not None else np.zeros(problem.nrows)
        z = np.array(out["z"]).ravel() if out["z"] is not None else np.zeros(r)
        s = np.zeros(nvar)
        s[nf : nf + nl] = z[:nl]
        zo = nl
        for off, n in zip(problem.block_offsets(), problem.psd):
            Z = z[zo : zo + n * n].reshape(n, n).T
            s[off : off + svec_len(n)] = svec(0.5 * (Z + Z.T))
            zo += n * n
        if status is Status.INFEASIBLE:
            # conelp's certificate satisfies b'y = -1; flip to b'y = 1
            y = -y
            return Solution(status, x, y, s, certificate=y / (problem.b @ y))
        sol = Solution(status, x, -y, s)
        if status is Status.OPTIMAL:
            # conelp dual: A'y + G'z + c = 0, so our y is -y_cvx
            sol.primal_objective = float(problem.c @ x)
            sol.dual_objective = float(problem.b @ sol.y)
            sol.residuals = compute_residuals(problem, x, sol.y, s)
        return sol


_REGISTRY = {"builtin": BuiltinBackend, "cvxopt": CvxoptBackend}


def get_backend(name: str = "builtin") -> Backend:
    try:
        cls = _REGISTRY[name]
    except KeyError as exc:
        raise BackendUnavailable(f"unknown backend {name!r}") from exc
    return cls()


__all__ = [
    "Backend",
    "BackendUnavailable",
    "BuiltinBackend",
    "CvxoptBackend",
    "EchoBackend",
    "get_backend",
    "smat",
]
