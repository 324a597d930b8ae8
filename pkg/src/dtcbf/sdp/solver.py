"""Primal-dual interior-point method for standard-form conic programs.

The method works on the homogeneous self-dual embedding, so infeasible and
unbounded problems are detected from the iterates themselves and come with
certificates.  Scaling is Nesterov-Todd, maintained in factored form
(``X = R diag(lam) R'`` and ``S = R^-T diag(lam) R^-1``) and updated after
every step rather than recomputed.  Directions are Mehrotra
predictor-corrector steps.  Free variables are kept in an augmented
``[[M, A_F], [A_F', 0]]`` system instead of being split.

Everything is dense and deterministic: LU with partial pivoting, no random
restarts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import (
    SdpProblem,
    Solution,
    SolverSettings,
    Status,
    compute_residuals,
    smat,
    svec,
    svec_len,
)

log = logging.getLogger(__name__)


class _Breakdown(Exception):
    pass


# ---------------------------------------------------------------------------
# presolve


@dataclass
class _Presolved:
    problem: SdpProblem
    rows: np.ndarray  # kept rows of the original problem
    row_scale: np.ndarray  # y_orig[rows] = row_scale * y_presolved
    free_cols: np.ndarray  # kept free columns
    cols: np.ndarray  # kept variable columns of the original problem
    c_scale: float


def _farkas_from_rows(n_rows: int, idx: np.ndarray, coef: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.zeros(n_rows)
    y[idx] = coef
    if b @ y < 0:
        y = -y
    return y


def _dependent_rows(A: sp.csr_matrix, b: np.ndarray, tol: float = 1e-10):
    """Return (independent row mask, farkas vector or None).

    Rows owning a column that no other row touches are independent of the
    rest; only the remaining rows go through a pivoted QR.
    """
    m = A.shape[0]
    keep = np.ones(m, dtype=bool)
    if m == 0:
        return keep, None
    Ac = A.tocsc()
    col_counts = np.diff(Ac.indptr)
    private_cols = col_counts == 1
    owner_rows = Ac.indices[Ac.indptr[:-1][private_cols]]
    has_private = np.zeros(m, dtype=bool)
    has_private[owner_rows] = True
    rest = np.flatnonzero(~has_private)
    if rest.size == 0:
        return keep, None
    sub = A[rest]
    used = np.unique(sub.indices)
    if used.size == 0:
        bad = rest[np.abs(b[rest]) > tol]
        if bad.size:
            return keep, _farkas_from_rows(m, bad[:1], np.ones(1), b)
        keep[rest] = False
        return keep, None
    D = sub[:, used].toarray()
    # pivoted QR of D' picks a maximal independent subset of the rows
    _, Rq, piv = sla.qr(D.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rq))
    scale = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > tol * max(scale, 1.0)))
    indep = piv[:rank]
    dep = piv[rank:]
    if dep.size == 0:
        return keep, None
    basis = D[indep].T
    for r in dep:
        coef, *_ = np.linalg.lstsq(basis, D[r], rcond=None)
        mismatch = b[rest[r]] - coef @ b[rest[indep]]
        if abs(mismatch) > 1e-8 * (1.0 + abs(b[rest[r]]) + np.abs(b[rest[indep]]).max(initial=0.0)):
            idx = np.concatenate([[rest[r]], rest[indep]])
            return keep, _farkas_from_rows(m, idx, np.concatenate([[1.0], -coef]), b)
    keep[rest[dep]] = False
    return keep, None


def _presolve(prob: SdpProblem):
    A = prob.A.tocsr()
    A.eliminate_zeros()
    b = prob.b
    m = A.shape[0]
    row_nnz = np.diff(A.indptr)
    zero_rows = row_nnz == 0
    bad = np.flatnonzero(zero_rows & (np.abs(b) > 1e-12))
    if bad.size:
        return None, _farkas_from_rows(m, bad[:1], np.ones(1), b)
    keep, farkas = _dependent_rows(A, b)
    if farkas is not None:
        return None, farkas
    keep &= ~zero_rows
    rows = np.flatnonzero(keep)

    # free columns that appear nowhere carry no information
    Ac = A[rows].tocsc()
    nnz = np.diff(Ac.indptr)
    free_active = nnz[: prob.n_free] > 0
    if np.any(~free_active & (np.abs(prob.c[: prob.n_free]) > 0)):
        return "unbounded", None
    cols = np.concatenate([np.flatnonzero(free_active), np.arange(prob.n_free, prob.nvar)])
    A2 = A[rows][:, cols]
    b2 = b[rows]

    # row equilibration
    norms = np.sqrt(np.asarray(A2.multiply(A2).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    d = 1.0 / norms
    A2 = sp.diags(d) @ A2
    b2 = d * b2
    c2 = prob.c[cols]
    c_scale = max(1.0, float(np.max(np.abs(c2), initial=0.0)))
    c2 = c2 / c_scale
    n_free = int(free_active.sum())
    sub = SdpProblem(A2, b2, c2, n_free, prob.n_lin, prob.psd)
    return _Presolved(sub, rows, d, np.flatnonzero(free_active), cols, c_scale), None


# ---------------------------------------------------------------------------
# the interior-point loop


class _Blocks:
    """Dense per-block views of ``A`` used in the Schur complement."""

    def __init__(self, prob: SdpProblem):
        self.prob = prob
        A = prob.A.tocsc()
        nf, nl = prob.n_free, prob.n_lin
        self.AF = A[:, :nf].toarray()
        self.AL = A[:, nf : nf + nl].tocsr()
        self.Ak = A[:, nf:].tocsr()
        self.psd = []
        for off, n in zip(prob.block_offsets(), prob.psd):
            sub = A[:, off : off + svec_len(n)].tocsr()
            rows = np.flatnonzero(np.diff(sub.indptr))
            dense = sub[rows].toarray()
            mats = np.stack([smat(r, n) for r in dense]) if rows.size else np.zeros((0, n, n))
            self.psd.append((off, n, rows, mats))


class _State:
    """Iterate in NT-scaled form."""

    def __init__(self, prob: SdpProblem):
        self.prob = prob
        m = prob.nrows
        self.xf = np.zeros(prob.n_free)
        self.y = np.zeros(m)
        self.tau = 1.0
        self.kap = 1.0
        nl = prob.n_lin
        self.lam_l = np.ones(nl)
        self.w_l = np.ones(nl)
        self.lam = [np.ones(n) for n in prob.psd]
        self.R = [np.eye(n) for n in prob.psd]
        self.Rinv = [np.eye(n) for n in prob.psd]

    @property
    def degree(self) -> int:
        return self.prob.n_lin + sum(self.prob.psd)

    def x(self) -> np.ndarray:
        parts = [self.xf, self.w_l * self.lam_l]
        for R, lam in zip(self.R, self.lam):
            parts.append(svec((R * lam) @ R.T))
        return np.concatenate(parts)

    def s(self) -> np.ndarray:
        parts = [np.zeros(self.prob.n_free), self.lam_l / self.w_l]
        for Ri, lam in zip(self.Rinv, self.lam):
            parts.append(svec((Ri.T * lam) @ Ri))
        return np.concatenate(parts)

    def mu(self) -> float:
        comp = float(self.lam_l @ self.lam_l) + sum(float(l @ l) for l in self.lam)
        return (comp + self.tau * self.kap) / (self.degree + 1)


def _sym(M):
    return 0.5 * (M + M.T)


def _max_step(lam: np.ndarray, d: np.ndarray) -> float:
    """Largest ``a`` with ``diag(lam) + a*d`` PSD (``d`` square) or ``lam + a*d >= 0``."""
    if d.ndim == 1:
        neg = d < 0
        if not np.any(neg):
            return np.inf
        return float(np.min(-lam[neg] / d[neg]))
    s = 1.0 / np.sqrt(lam)
    e = np.linalg.eigvalsh(_sym(d * s[:, None] * s[None, :]))[0]
    return np.inf if e >= 0 else -1.0 / e


class _Solver:
    def __init__(self, prob: SdpProblem, settings: SolverSettings):
        self.prob = prob
        self.st = settings
        self.blk = _Blocks(prob)
        self.state = _State(prob)
        self.bnorm = max(1.0, float(np.max(np.abs(prob.b), initial=0.0)))
        self.cnorm = max(1.0, float(np.max(np.abs(prob.c), initial=0.0)))

    # operators ---------------------------------------------------------
    def A_cone(self, xk: np.ndarray) -> np.ndarray:
        return self.blk.Ak @ xk

    def At(self, y: np.ndarray) -> np.ndarray:
        return self.prob.A.T @ y

    def cone_mats(self, v: np.ndarray):
        """Split a cone-part vector into (lin, [matrices])."""
        nl = self.prob.n_lin
        lin = v[:nl]
        mats = []
        off = nl
        for n in self.prob.psd:
            k = svec_len(n)
            mats.append(smat(v[off : off + k], n))
            off += k
        return lin, mats

    def cone_vec(self, lin, mats) -> np.ndarray:
        return np.concatenate([lin] + [svec(M) for M in mats])

    # Newton system -----------------------------------------------------
    def factor(self):
        prob, st, blk = self.prob, self.state, self.blk
        m, nf = prob.nrows, prob.n_free
        M = np.zeros((m, m))
        if prob.n_lin:
            g = st.w_l ** 2
            AL = blk.AL
            M += (AL @ sp.diags(g) @ AL.T).toarray()
        self.G = []
        for (off, n, rows, mats), R in zip(blk.psd, st.R):
            G = R @ R.T
            self.G.append(G)
            if rows.size == 0:
                continue
            T = G @ mats @ G
            sub = mats.reshape(rows.size, n * n) @ T.reshape(rows.size, n * n).T
            M[np.ix_(rows, rows)] += sub
        K = np.zeros((m + nf, m + nf))
        K[:m, :m] = M
        K[:m, m:] = blk.AF
        K[m:, :m] = blk.AF.T
        self.K = K
        scale = max(1.0, float(np.max(np.abs(np.diag(M)), initial=0.0)))
        Kreg = K.copy()
        Kreg[np.diag_indices(m)] += 1e-13 * scale
        Kreg[m + np.arange(nf), m + np.arange(nf)] -= 1e-13 * scale
        with np.errstate(all="ignore"):
            self.lu = sla.lu_factor(Kreg, check_finite=True)
        if not np.all(np.isfinite(self.lu[0])):
            raise _Breakdown("factorization produced non-finite values")

    def kkt_solve(self, rhs: np.ndarray) -> np.ndarray:
        sol = sla.lu_solve(self.lu, rhs)
        for _ in range(2):
            r = rhs - self.K @ sol
            if np.max(np.abs(r)) <= 1e-14 * (1 + np.max(np.abs(rhs))):
                break
            sol = sol + sla.lu_solve(self.lu, r)
        if not np.all(np.isfinite(sol)):
            raise _Breakdown("linear solve produced non-finite values")
        return sol

    def G_apply(self, lin, mats):
        """``G V G`` per block (``w^2 v`` on the orthant)."""
        st = self.state
        return st.w_l ** 2 * lin, [G @ V @ G for G, V in zip(self.G, mats)]

    def direction(self, res, eta: float, Rc_l, Rc, r_tau: float):
        prob, st = self.prob, self.state
        m, nf = prob.nrows, prob.n_free
        rp, rd, rg = res["rp"], res["rd"], res["rg"]

        Zl = Rc_l / st.lam_l
        Z = []
        for lam, Rm in zip(st.lam, Rc):
            Z.append(2.0 * Rm / (lam[:, None] + lam[None, :]))
        # R Z R' in unscaled coordinates
        xz_l = st.w_l * Zl
        xz = [R @ Zm @ R.T for R, Zm in zip(st.R, Z)]

        rdK = eta * rd[nf:]
        rd_l, rd_m = self.cone_mats(rdK)
        g_l, g_m = self.G_apply(rd_l, rd_m)
        c_l, c_m = self.cone_mats(prob.c[nf:])
        gc_l, gc_m = self.G_apply(c_l, c_m)

        rhs1 = np.zeros(m + nf)
        rhs1[:m] = eta * rp - self.A_cone(self.cone_vec(xz_l, xz)) + self.A_cone(self.cone_vec(g_l, g_m))
        rhs1[m:] = eta * rd[:nf]
        rhs2 = np.zeros(m + nf)
        rhs2[:m] = prob.b + self.A_cone(self.cone_vec(gc_l, gc_m))
        rhs2[m:] = prob.c[:nf]
        sol = self.kkt_solve(np.column_stack([rhs1, rhs2]))
        dy1, dy2 = sol[:m, 0], sol[:m, 1]
        dxf1, dxf2 = sol[m:, 0], sol[m:, 1]

        ds1 = rdK - self.At(dy1)[nf:]
        ds2 = prob.c[nf:] - self.At(dy2)[nf:]
        ds1_l, ds1_m = self.cone_mats(ds1)
        ds2_l, ds2_m = self.cone_mats(ds2)
        gs1_l, gs1_m = self.G_apply(ds1_l, ds1_m)
        gs2_l, gs2_m = self.G_apply(ds2_l, ds2_m)
        dx1 = np.concatenate([dxf1, self.cone_vec(xz_l - gs1_l, [a - b for a, b in zip(xz, gs1_m)])])
        dx2 = np.concatenate([dxf2, -self.cone_vec(gs2_l, gs2_m)])

        num = -eta * rg - r_tau / st.tau - (prob.c @ dx1 - prob.b @ dy1)
        den = prob.c @ dx2 - prob.b @ dy2 - st.kap / st.tau
        if den == 0 or not np.isfinite(den):
            raise _Breakdown("degenerate tau equation")
        dtau = num / den
        dkap = (r_tau - st.kap * dtau) / st.tau
        dy = dy1 + dtau * dy2
        dxf = dxf1 + dtau * dxf2
        ds_l = ds1_l + dtau * ds2_l
        ds_m = [a + dtau * b for a, b in zip(ds1_m, ds2_m)]
        # scaled directions
        dst_l = st.w_l * ds_l
        dst = [_sym(R.T @ D @ R) for R, D in zip(st.R, ds_m)]
        dxt_l = Zl - dst_l
        dxt = [_sym(Zm - D) for Zm, D in zip(Z, dst)]
        return dict(dy=dy, dxf=dxf, dtau=dtau, dkap=dkap, dxt_l=dxt_l, dxt=dxt, dst_l=dst_l, dst=dst)

    def step_length(self, d) -> float:
        st = self.state
        amax = np.inf
        if st.lam_l.size:
            amax = min(amax, _max_step(st.lam_l, d["dxt_l"]), _max_step(st.lam_l, d["dst_l"]))
        for lam, dx, ds in zip(st.lam, d["dxt"], d["dst"]):
            amax = min(amax, _max_step(lam, dx), _max_step(lam, ds))
        if d["dtau"] < 0:
            amax = min(amax, -st.tau / d["dtau"])
        if d["dkap"] < 0:
            amax = min(amax, -st.kap / d["dkap"])
        return amax

    def take_step(self, d, alpha: float):
        st = self.state
        st.y = st.y + alpha * d["dy"]
        st.xf = st.xf + alpha * d["dxf"]
        st.tau += alpha * d["dtau"]
        st.kap += alpha * d["dkap"]
        if st.lam_l.size:
            xt = st.lam_l + alpha * d["dxt_l"]
            stt = st.lam_l + alpha * d["dst_l"]
            x = st.w_l * xt
            s = stt / st.w_l
            st.w_l = np.sqrt(x / s)
            st.lam_l = np.sqrt(x * s)
        for j, (lam, dx, ds) in enumerate(zip(st.lam, d["dxt"], d["dst"])):
            Xt = np.diag(lam) + alpha * dx
            St = np.diag(lam) + alpha * ds
            try:
                L1 = np.linalg.cholesky(_sym(Xt))
                L2 = np.linalg.cholesky(_sym(St))
            except np.linalg.LinAlgError as exc:
                raise _Breakdown("lost positive definiteness") from exc
            U, sv, Vt = np.linalg.svd(L2.T @ L1)
            isq = 1.0 / np.sqrt(sv)
            st.R[j] = st.R[j] @ L1 @ (Vt.T * isq)
            st.Rinv[j] = (isq[:, None] * U.T) @ L2.T @ st.Rinv[j]
            st.lam[j] = sv

    # residuals ---------------------------------------------------------
    def residuals(self):
        prob, st = self.prob, self.state
        x = st.x()
        s = st.s()
        rp = prob.b * st.tau - prob.A @ x
        rd = prob.c * st.tau - self.At(st.y) - s
        cx = float(prob.c @ x)
        by = float(prob.b @ st.y)
        rg = st.kap + cx - by
        return dict(x=x, s=s, rp=rp, rd=rd, rg=rg, cx=cx, by=by)

    def run(self) -> Solution:
        prob, st, S = self.prob, self.state, self.st
        frac = S.step_fraction
        status = Status.MAX_ITERS
        message = ""
        it = 0
        res = self.residuals()
        best = (np.inf, None, None, None, 0.0)
        good = (np.inf, None, None, None, 0, 1.0, 1.0)
        for it in range(S.max_iters + 1):
            res = self.residuals()
            tau = st.tau
            pres = np.max(np.abs(res["rp"]), initial=0.0) / tau / self.bnorm
            dres = np.max(np.abs(res["rd"]), initial=0.0) / tau / self.cnorm
            pobj, dobj = res["cx"] / tau, res["by"] / tau
            comp = float(res["x"][prob.n_free :] @ res["s"][prob.n_free :]) / tau ** 2
            relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            if S.verbose:
                log.info(
                    "it %3d pres %.2e dres %.2e gap %.2e pobj %+.6e tau %.1e kap %.1e",
                    it, pres, dres, comp, pobj, tau, st.kap,
                )
            if pres <= S.feas_tol and dres <= S.feas_tol and (comp <= S.gap_tol or relgap <= S.gap_tol):
                status = Status.OPTIMAL
                break
            merit = max(pres, dres, min(comp, relgap))
            if merit < 0.5 * good[0]:
                good = (merit, res["x"] / tau, st.y / tau, res["s"] / tau, it, tau, st.kap)
            elif it - good[4] >= S.stall_iters and good[0] <= S.reduced_tol:
                message = f"stalled; accepted at accuracy {good[0]:.1e}"
                status = Status.OPTIMAL
                break
            # infeasibility tests on the unnormalized iterates
            by, cx = res["by"], res["cx"]
            if by > 0:
                pinf = np.max(np.abs(self.At(st.y) + res["s"])) / by / self.cnorm
                if pinf < best[0]:
                    best = (pinf, st.y.copy(), res["s"].copy(), res["x"].copy(), by)
                if pinf <= S.infeas_tol:
                    status = Status.INFEASIBLE
                    break
            if cx < 0:
                ax = prob.A @ res["x"]
                if np.max(np.abs(ax), initial=0.0) / (-cx) <= S.infeas_tol * self.bnorm:
                    status = Status.UNBOUNDED
                    break
            if it == S.max_iters:
                break
            try:
                self.factor()
                mu = st.mu()
                # predictor
                Rc_l = -st.lam_l ** 2
                Rc = [-np.diag(l ** 2) for l in st.lam]
                da = self.direction(res, 1.0, Rc_l, Rc, -st.tau * st.kap)
                a_aff = min(1.0, self.step_length(da))
                sigma = (1.0 - a_aff) ** 3
                # corrector
                Rc_l = -st.lam_l ** 2 + sigma * mu - da["dxt_l"] * da["dst_l"]
                Rc = [
                    -np.diag(l ** 2) + sigma * mu * np.eye(l.size) - _sym(dx @ ds)
                    for l, dx, ds in zip(st.lam, da["dxt"], da["dst"])
                ]
                r_tau = -st.tau * st.kap + sigma * mu - da["dtau"] * da["dkap"]
                d = self.direction(res, 1.0 - sigma, Rc_l, Rc, r_tau)
                alpha = min(1.0, frac * self.step_length(d))
                if not np.isfinite(alpha) or alpha <= 1e-12:
                    raise _Breakdown("step length collapsed")
                self.take_step(d, alpha)
            except (_Breakdown, np.linalg.LinAlgError, ValueError) as exc:
                status = Status.NUMERICAL_FAILURE
                message = str(exc)
                break
        if status in (Status.MAX_ITERS, Status.NUMERICAL_FAILURE) and good[0] <= S.reduced_tol:
            message = f"{message or status.value}; accepted at accuracy {good[0]:.1e}"
            status = Status.OPTIMAL
        if status is Status.OPTIMAL and good[1] is not None and message:
            _, x, y, s_, _, tau, kap = good
            return Solution(status, x, y, s_, iterations=it, message=message, info={"tau": tau, "kappa": kap})
        res = self.residuals()
        if status is Status.INFEASIBLE:
            # report the best certificate seen, which may predate the last step
            _, y, s_, x, by = best
            return Solution(status, x, y, s_, iterations=it, certificate=y / by, message=message)
        return self._finish(status, res, it, message)

    def _finish(self, status, res, it, message) -> Solution:
        st = self.state
        x, s, y = res["x"], res["s"], st.y
        cert = None
        if status is Status.INFEASIBLE:
            cert = y / res["by"]
            return Solution(status, x, y, s, iterations=it, certificate=cert, message=message)
        if status is Status.UNBOUNDED:
            cert = x / (-res["cx"])
            return Solution(status, x, y, s, iterations=it, certificate=cert, message=message)
        tau = st.tau
        return Solution(status, x / tau, y / tau, s / tau, iterations=it, message=message,
                        info={"tau": tau, "kappa": st.kap})


def solve(problem: SdpProblem, settings: SolverSettings | None = None) -> Solution:
    """Solve ``problem`` with the built-in interior-point method."""
    settings = settings or SolverSettings()
    nvar, m = problem.nvar, problem.nrows
    pre, farkas = _presolve(problem)
    if farkas is not None:
        zeros = np.zeros(nvar)
        return Solution(Status.INFEASIBLE, zeros, farkas, zeros.copy(), certificate=farkas / (problem.b @ farkas),
                        message="inconsistent equality rows")
    if pre == "unbounded":
        zeros = np.zeros(nvar)
        return Solution(Status.UNBOUNDED, zeros, np.zeros(m), zeros.copy(),
                        message="free variable with nonzero cost appears in no constraint")
    sub = pre.problem
    raw = _Solver(sub, settings).run()

    # undo presolve
    x = np.zeros(nvar)
    x[pre.cols] = raw.x
    y = np.zeros(m)
    y[pre.rows] = pre.row_scale * raw.y
    s = np.zeros(nvar)
    s[pre.cols] = raw.s
    if raw.status in (Status.OPTIMAL, Status.MAX_ITERS, Status.NUMERICAL_FAILURE):
        y *= pre.c_scale
        s *= pre.c_scale
    cert = None
    if raw.status is Status.INFEASIBLE:
        cert = y / (problem.b @ y) if problem.b @ y > 0 else y
    elif raw.status is Status.UNBOUNDED:
        cert = x / max(-(problem.c @ x), 1e-300)
    sol = Solution(raw.status, x, y, s, iterations=raw.iterations, certificate=cert, message=raw.message,
                   info=raw.info)
    if raw.status in (Status.OPTIMAL, Status.MAX_ITERS, Status.NUMERICAL_FAILURE):
        sol.primal_objective = float(problem.c @ x)
        sol.dual_objective = float(problem.b @ y)
        sol.residuals = compute_residuals(problem, x, y, s)
    return sol
