"""Sum-of-squares programs and their lowering to conic form.

A :class:`SosProgram` collects scalar decision variables, polynomial
unknowns, scalar SOS constraints, 2x2 (or larger) matrix SOS constraints and
plain linear constraints.  :meth:`SosProgram.lower` turns it into an
:class:`~dtcbf.sdp.SdpProblem` by giving every SOS constraint a Gram block
and matching coefficients monomial by monomial.

Matrix constraints ``Q(x) >= 0`` are lowered with one block Gram matrix over
the basis ``{y_i * m : m in B_i}``.  This is the same SDP one gets by asking
``y'Q(x)y`` to be SOS in ``(x, y)``: that polynomial is quadratic and
homogeneous in ``y``, so the half Newton polytope only contains monomials of
degree one in ``y`` and the basis for ``y_i`` is determined by ``Q_ii``
alone.  No ``y`` variables are ever created.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import ConvexHull, QhullError

from . import poly as P
from .poly import AffineExpr, Monomial, ParamPolynomial, PolyMatrix, Polynomial
from .sdp import SdpProblem, Solution, SolverSettings, Status, get_backend, smat, svec_len
from .sdp.problem import cone_min_eigs

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
EIG_TOL = 1e-7
COEFF_TOL = 1e-6


class SosError(Exception):
    pass


class NotSymmetric(SosError):
    pass


class EmptyBasis(SosError):
    pass


class CertificateResidual(SosError):
    def __init__(self, message: str, failures: Sequence[str] = ()):
        super().__init__(message)
        self.failures = list(failures)


# ---------------------------------------------------------------------------
# Gram bases


def _hull_filter(points: np.ndarray, cands: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Mask of candidate points lying in the convex hull of ``points``."""
    p0 = points[0]
    D = points - p0
    if not np.any(D):
        return np.all(np.abs(cands - p0) <= tol, axis=1)
    # restrict to the affine hull
    _, s, Vt = np.linalg.svd(D, full_matrices=False)
    rank = int(np.sum(s > 1e-9 * s[0]))
    V = Vt[:rank]
    Cd = cands - p0
    inside = np.linalg.norm(Cd - (Cd @ V.T) @ V, axis=1) <= 1e-7
    pl = D @ V.T
    cl = Cd @ V.T
    if rank == 1:
        lo, hi = pl[:, 0].min(), pl[:, 0].max()
        return inside & (cl[:, 0] >= lo - tol) & (cl[:, 0] <= hi + tol)
    try:
        hull = ConvexHull(pl)
    except QhullError:
        return _lp_filter(pl, cl) & inside
    eq = hull.equations
    return inside & np.all(cl @ eq[:, :-1].T + eq[:, -1] <= 1e-7, axis=1)


def _lp_filter(pl: np.ndarray, cl: np.ndarray) -> np.ndarray:
    from scipy.optimize import linprog

    k = pl.shape[0]
    A_eq = np.vstack([pl.T, np.ones((1, k))])
    out = np.zeros(cl.shape[0], dtype=bool)
    for i, c in enumerate(cl):
        res = linprog(np.zeros(k), A_eq=A_eq, b_eq=np.append(c, 1.0), bounds=(0, None), method="highs")
        out[i] = res.status == 0
    return out


_basis_cache: dict[frozenset, tuple[Monomial, ...]] = {}


def gram_basis(support: Iterable[Monomial]) -> list[Monomial]:
    """Monomials ``m`` with ``2m`` in the Newton polytope of ``support``.

    Candidates are bounded per variable and by total degree, filtered by the
    hull test and finally pruned of entries whose diagonal Gram element is
    forced to zero.
    """
    supp = frozenset(support)
    hit = _basis_cache.get(supp)
    if hit is not None:
        return list(hit)
    if not supp:
        return []
    vars_ = sorted(set().union(*(P.mono_vars(m) for m in supp)))
    pts = np.array([[m[v] if v < len(m) else 0 for v in vars_] for m in supp], dtype=float).reshape(len(supp), -1)
    degs = pts.sum(axis=1)
    lo_deg = int(math.ceil(degs.min() / 2))
    hi_deg = int(degs.max() // 2)
    maxexp = pts.max(axis=0) // 2 if vars_ else np.zeros(0)
    minexp = np.ceil(pts.min(axis=0) / 2) if vars_ else np.zeros(0)
    cands = [
        m
        for m in P.monomials_up_to(vars_, hi_deg, lo_deg)
        if all(minexp[i] <= (m[v] if v < len(m) else 0) <= maxexp[i] for i, v in enumerate(vars_))
    ]
    if not cands:
        _basis_cache[supp] = ()
        return []
    if vars_:
        cpts = np.array([[m[v] if v < len(m) else 0 for v in vars_] for m in cands], dtype=float)
        try:
            mask = _hull_filter(pts, 2 * cpts)
        except Exception:  # pragma: no cover - degenerate geometry
            log.warning("Newton polytope filter failed; using the full degree basis")
            mask = np.ones(len(cands), dtype=bool)
        cands = [m for m, keep in zip(cands, mask) if keep]
    # diagonal pruning: 2m must be in the support or be a cross term
    basis = list(cands)
    changed = True
    while changed and basis:
        changed = False
        bset = set(basis)
        keep = []
        for m in basis:
            twice = P.mono_mul(m, m)
            if twice in supp:
                keep.append(m)
                continue
            crossed = any(
                q != m and _mono_sub(twice, q) in bset and _mono_sub(twice, q) != q for q in basis
            )
            if crossed:
                keep.append(m)
            else:
                changed = True
        basis = keep
    basis = P.sort_monomials(basis)
    _basis_cache[supp] = tuple(basis)
    return basis


def _mono_sub(a: Monomial, b: Monomial):
    if len(b) > len(a):
        return None
    out = [x - y for x, y in zip(a, b)] + list(a[len(b):])
    if any(e < 0 for e in out):
        return None
    while out and out[-1] == 0:
        out.pop()
    return tuple(out)


# ---------------------------------------------------------------------------
# program


@dataclass
class _VarInfo:
    kind: str  # free | nonneg | psd
    block: int = -1
    pos: int = -1
    name: str = ""


@dataclass
class _Constraint:
    name: str
    entries: list[list[ParamPolynomial]]  # symmetric r x r, r = 1 for scalar

    @property
    def size(self) -> int:
        return len(self.entries)


@dataclass
class GramBasis:
    """Per-row bases of one Gram block; scalar constraints have one row."""

    constraint: str
    rows: list[list[Monomial]]
    block: int

    def flat(self) -> list[tuple[int, Monomial]]:
        return [(i, m) for i, row in enumerate(self.rows) for m in row]

    @property
    def size(self) -> int:
        return sum(len(r) for r in self.rows)


@dataclass
class Certificate:
    """Numeric Gram matrix for one constraint."""

    name: str
    basis: GramBasis
    gram: np.ndarray
    expected: list[list[Polynomial]]
    kind: str = "constraint"

    def reconstruct(self) -> list[list[Polynomial]]:
        r = len(self.basis.rows)
        flat = self.basis.flat()
        terms: list[list[dict]] = [[{} for _ in range(r)] for _ in range(r)]
        G = self.gram
        for a, (i, ma) in enumerate(flat):
            for b, (j, mb) in enumerate(flat):
                if i > j:
                    continue
                m = P.mono_mul(ma, mb)
                w = G[a, b]
                if i == j or a <= b:
                    d = terms[i][j]
                    d[m] = d.get(m, 0.0) + w
        out = [[Polynomial() for _ in range(r)] for _ in range(r)]
        for i in range(r):
            for j in range(i, r):
                out[i][j] = out[j][i] = Polynomial(terms[i][j])
        return out

    def min_eig(self) -> float:
        if self.gram.size == 0:
            return math.inf
        return float(np.linalg.eigvalsh(0.5 * (self.gram + self.gram.T))[0])

    def residual(self) -> float:
        rec = self.reconstruct()
        r = len(rec)
        worst = 0.0
        for i in range(r):
            for j in range(r):
                worst = max(worst, (rec[i][j] - self.expected[i][j]).max_abs_coeff())
        return worst

    def check(self, eig_tol: float = EIG_TOL, coeff_tol: float = COEFF_TOL) -> list[str]:
        problems = []
        if not np.allclose(self.gram, self.gram.T, atol=1e-12):
            problems.append(f"{self.name}: Gram matrix not symmetric")
        e = self.min_eig()
        if e < -eig_tol:
            problems.append(f"{self.name}: min eigenvalue {e:.3e} < -{eig_tol:g}")
        res = self.residual()
        if res > coeff_tol:
            problems.append(f"{self.name}: reconstruction error {res:.3e} > {coeff_tol:g}")
        return problems

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "rows": [[P.mono_str(m) for m in row] for row in self.basis.rows],
            "gram": self.gram.tolist(),
            "expected": [[P.format_poly(p) for p in row] for row in self.expected],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> Certificate:
        rows = [[P.parse_monomial(s) if s != "1" else P.ONE for s in row] for row in d["rows"]]
        return cls(
            d["name"],
            GramBasis(d["name"], rows, -1),
            np.array(d["gram"], dtype=float).reshape(sum(len(r) for r in rows), -1),
            [[P.parse_poly(s) for s in row] for row in d["expected"]],
            d.get("kind", "constraint"),
        )


def check_certificates(certs: Iterable[Certificate], eig_tol: float = EIG_TOL, coeff_tol: float = COEFF_TOL):
    failures = []
    for c in certs:
        failures.extend(c.check(eig_tol, coeff_tol))
    if failures:
        raise CertificateResidual("; ".join(failures), failures)


@dataclass
class Lowered:
    problem: SdpProblem
    columns: dict[int, int]
    bases: list[GramBasis]
    constraint_blocks: list[tuple[_Constraint, GramBasis, int]]
    multiplier_blocks: list[tuple[str, list[Monomial], int]]
    block_offsets: list[int]


@dataclass
class SosResult:
    status: Status
    values: dict[int, float]
    certificates: list[Certificate]
    solution: Solution
    lowered: Lowered
    objective: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, p):
        if isinstance(p, AffineExpr):
            return p.evaluate(self.values)
        return p.instantiate(self.values)


class SosProgram:
    """Builder for SOS feasibility and optimization programs."""

    def __init__(self, name: str = "sos"):
        self.name = name
        self._vars: dict[int, _VarInfo] = {}
        self._order: list[int] = []
        self._psd_blocks: list[int] = []  # sizes of multiplier blocks
        self._mult_blocks: list[tuple[str, list[Monomial], int]] = []
        self._constraints: list[_Constraint] = []
        self._lin_eq: list[tuple[str, AffineExpr]] = []
        self._lin_ge: list[tuple[str, AffineExpr]] = []
        self._objective: AffineExpr | None = None
        self._abs_targets: list[tuple[AffineExpr, float]] = []

    # variables ---------------------------------------------------------
    def _register(self, info: _VarInfo) -> int:
        (dv,) = P.new_decision_vars(1)
        self._vars[dv] = info
        self._order.append(dv)
        return dv

    def new_var(self, name: str = "", nonneg: bool = False, lo: float | None = None, hi: float | None = None) -> AffineExpr:
        dv = self._register(_VarInfo("nonneg" if nonneg else "free", name=name))
        a = AffineExpr.var(dv)
        if lo is not None and not (nonneg and lo == 0):
            self.add_ineq(a - lo, f"{name}>=lo")
        if hi is not None:
            self.add_ineq(hi - a, f"{name}<=hi")
        return a

    def declare_free_poly(self, basis: Sequence[Monomial], name: str = "") -> ParamPolynomial:
        basis = list(basis)
        if not basis:
            raise ValueError("empty basis")
        dvs = [self._register(_VarInfo("free", name=f"{name}[{i}]")) for i in range(len(basis))]
        return ParamPolynomial(Polynomial(), {dv: Polynomial({m: 1.0}) for dv, m in zip(dvs, basis)})

    def declare_sos_poly(self, half_basis: Sequence[Monomial], name: str = "") -> ParamPolynomial:
        """SOS polynomial ``m' Q m`` with ``Q`` PSD; ``[1]`` gives a non-negative constant."""
        half_basis = list(half_basis)
        if not half_basis:
            raise ValueError("empty basis")
        if half_basis == [P.ONE]:
            dv = self._register(_VarInfo("nonneg", name=name))
            return ParamPolynomial(Polynomial(), {dv: Polynomial.constant(1.0)})
        n = len(half_basis)
        blk = len(self._psd_blocks)
        self._psd_blocks.append(n)
        self._mult_blocks.append((name, half_basis, blk))
        parts = {}
        pos = 0
        for i in range(n):
            for j in range(i, n):
                dv = self._register(_VarInfo("psd", blk, pos, f"{name}[{i},{j}]"))
                m = P.mono_mul(half_basis[i], half_basis[j])
                parts[dv] = Polynomial({m: 1.0 if i == j else SQRT2})
                pos += 1
        return ParamPolynomial(Polynomial(), parts)

    def sos_multiplier(self, vars_: Sequence[int], degree: int, name: str = "") -> ParamPolynomial:
        """SOS polynomial of the given (even) degree over ``vars_``."""
        half = P.monomials_up_to(list(vars_), max(degree, 0) // 2)
        return self.declare_sos_poly(half, name)

    @property
    def num_vars(self) -> int:
        return len(self._order)

    # constraints -------------------------------------------------------
    def add_scalar_sos(self, expr, name: str = "") -> None:
        expr = P.as_param(expr)
        self._constraints.append(_Constraint(name or f"sos{len(self._constraints)}", [[expr]]))

    def add_matrix_sos(self, Q, name: str = "") -> None:
        if isinstance(Q, PolyMatrix):
            rows = [list(r) for r in Q.entries]
        else:
            rows = [list(r) for r in Q]
        r = len(rows)
        if any(len(row) != r for row in rows):
            raise NotSymmetric("matrix SOS constraint must be square")
        ent = [[P.as_param(e) for e in row] for row in rows]
        for i in range(r):
            for j in range(i + 1, r):
                d = ent[i][j] - ent[j][i]
                if d.const.max_abs_coeff() > 1e-12 or any(q.max_abs_coeff() > 1e-12 for q in d.parts.values()):
                    raise NotSymmetric(f"entries ({i},{j}) and ({j},{i}) differ")
        self._constraints.append(_Constraint(name or f"msos{len(self._constraints)}", ent))

    def add_eq(self, expr, name: str = "") -> None:
        """``expr == 0``; polynomial expressions are matched coefficient-wise."""
        if isinstance(expr, (ParamPolynomial, Polynomial)):
            for m, a in P.as_param(expr).terms.items():
                self._lin_eq.append((f"{name}:{P.mono_str(m)}", a))
        else:
            self._lin_eq.append((name, expr if isinstance(expr, AffineExpr) else AffineExpr(float(expr))))

    def add_ineq(self, expr: AffineExpr, name: str = "") -> None:
        """``expr >= 0``."""
        self._lin_ge.append((name, expr if isinstance(expr, AffineExpr) else AffineExpr(float(expr))))

    def minimize(self, expr: AffineExpr) -> None:
        self._objective = expr

    def maximize(self, expr: AffineExpr) -> None:
        self._objective = -expr

    def minimize_deviation(self, expr: AffineExpr, target: float) -> None:
        """Minimize ``|expr - target|`` through two non-negative slacks."""
        self._abs_targets.append((expr, float(target)))

    # lowering ----------------------------------------------------------
    def lower(self) -> Lowered:
        # objective slacks are created on a copy of the variable table so
        # that lowering never mutates the program
        vars_ = dict(self._vars)
        order = list(self._order)
        eqs = list(self._lin_eq)
        objective = self._objective if self._objective is not None else AffineExpr()
        for expr, target in self._abs_targets:
            t1, t2 = P.new_decision_vars(2)
            vars_[t1] = _VarInfo("nonneg", name="dev+")
            vars_[t2] = _VarInfo("nonneg", name="dev-")
            order += [t1, t2]
            eqs.append(("deviation", expr - target - AffineExpr.var(t1) + AffineExpr.var(t2)))
            objective = objective + AffineExpr.var(t1) + AffineExpr.var(t2)
        ge_slacks = []
        for name, expr in self._lin_ge:
            (t,) = P.new_decision_vars(1)
            vars_[t] = _VarInfo("nonneg", name=f"slack:{name}")
            order.append(t)
            ge_slacks.append((name, expr, t))

        free = [dv for dv in order if vars_[dv].kind == "free"]
        lin = [dv for dv in order if vars_[dv].kind == "nonneg"]
        columns: dict[int, int] = {}
        for i, dv in enumerate(free):
            columns[dv] = i
        for i, dv in enumerate(lin):
            columns[dv] = len(free) + i

        # Gram blocks for the constraints
        sizes = list(self._psd_blocks)
        cblocks = []
        for con in self._constraints:
            rows = []
            for i in range(con.size):
                supp = con.entries[i][i].support()
                rows.append(gram_basis(supp) if supp else [])
            gb = GramBasis(con.name, rows, len(sizes))
            if gb.size == 0:
                if all(
                    not con.entries[i][j].has_dvars() and not con.entries[i][j].is_zero()
                    for i in range(con.size)
                    for j in range(con.size)
                    if i == j
                ):
                    raise EmptyBasis(f"{con.name}: no Gram basis for a nonzero numeric polynomial")
                cblocks.append((con, gb, -1))
                continue
            cblocks.append((con, gb, len(sizes)))
            sizes.append(gb.size)
        offsets = []
        off = len(free) + len(lin)
        for n in sizes:
            offsets.append(off)
            off += svec_len(n)
        nvar = off
        for dv in order:
            info = vars_[dv]
            if info.kind == "psd":
                columns[dv] = offsets[info.block] + info.pos

        rows_i: list[int] = []
        cols_i: list[int] = []
        vals: list[float] = []
        b: list[float] = []
        labels: list[str] = []

        def add_row(label: str, const: float, coeffs: Mapping[int, float], extra: Iterable[tuple[int, float]] = ()):
            r = len(b)
            for dv, w in coeffs.items():
                rows_i.append(r)
                cols_i.append(columns[dv])
                vals.append(w)
            for col, w in extra:
                rows_i.append(r)
                cols_i.append(col)
                vals.append(w)
            b.append(-const)
            labels.append(label)

        for con, gb, blk in cblocks:
            flat = gb.flat()
            gram_terms: dict[tuple[int, int, Monomial], list[tuple[int, float]]] = {}
            if blk >= 0:
                o = offsets[blk]
                n = gb.size
                pos = 0
                for a in range(n):
                    i, ma = flat[a]
                    for c in range(a, n):
                        j, mc = flat[c]
                        m = P.mono_mul(ma, mc)
                        if a == c:
                            w = 1.0
                        elif i == j:
                            w = SQRT2
                        else:
                            w = 1.0 / SQRT2
                        key = (min(i, j), max(i, j), m)
                        gram_terms.setdefault(key, []).append((o + pos, -w))
                        pos += 1
            keys = set(gram_terms)
            for i in range(con.size):
                for j in range(i, con.size):
                    for m in con.entries[i][j].support():
                        keys.add((i, j, m))
            for key in sorted(keys, key=lambda k: (k[0], k[1], P.grlex_key(k[2]))):
                i, j, m = key
                a = con.entries[i][j].coefficient_of(m)
                add_row(f"{con.name}[{i},{j}]:{P.mono_str(m)}", a.const, a.coeffs, gram_terms.get(key, ()))
        for name, expr in eqs:
            add_row(name, expr.const, expr.coeffs)
        for name, expr, t in ge_slacks:
            add_row(name, expr.const, expr.coeffs, [(columns[t], -1.0)])

        m = len(b)
        A = sp.csr_matrix((vals, (rows_i, cols_i)), shape=(m, nvar))
        A.sum_duplicates()
        c = np.zeros(nvar)
        for dv, w in objective.coeffs.items():
            c[columns[dv]] += w
        prob = SdpProblem(A, np.array(b), c, len(free), len(lin), tuple(sizes), labels)
        return Lowered(prob, columns, [gb for _, gb, _ in cblocks], cblocks, list(self._mult_blocks), offsets)

    # solving -----------------------------------------------------------
    def solve(
        self,
        settings: SolverSettings | None = None,
        backend: str = "builtin",
        eig_tol: float = EIG_TOL,
        coeff_tol: float = COEFF_TOL,
        check: bool = True,
        lowered: Lowered | None = None,
    ) -> SosResult:
        low = lowered or self.lower()
        sol = get_backend(backend).submit(low.problem, settings)
        if sol.status in (Status.MAX_ITERS, Status.NUMERICAL_FAILURE) and check:
            rescued = _accept_stalled(low, sol, eig_tol, coeff_tol)
            if rescued is not None:
                return rescued
        if sol.status is not Status.OPTIMAL:
            return SosResult(sol.status, {}, [], sol, low)
        values, certs = lift(low, sol, eig_tol, coeff_tol, check)
        return SosResult(sol.status, values, certs, sol, low, float(low.problem.c @ sol.x))


def _accept_stalled(low: Lowered, sol: Solution, eig_tol: float, coeff_tol: float) -> SosResult | None:
    """Accept a stalled iterate of a pure feasibility program if its certificates check out.

    Only the primal point matters when there is no objective, so the same
    tests applied to optimal solutions decide.
    """
    prob = low.problem
    if np.any(prob.c) or not np.all(np.isfinite(sol.x)):
        return None
    if np.max(np.abs(prob.A @ sol.x - prob.b), initial=0.0) > coeff_tol or cone_min_eigs(prob, sol.x) < -eig_tol:
        return None
    try:
        values, certs = lift(low, sol, eig_tol, coeff_tol, True)
    except CertificateResidual:
        return None
    log.debug("accepted stalled %s iterate on certificate checks", sol.status.value)
    sol.message = f"{sol.message or sol.status.value}; accepted on certificate checks"
    return SosResult(Status.OPTIMAL, values, certs, sol, low, 0.0)


def lift(low: Lowered, sol: Solution, eig_tol: float = EIG_TOL, coeff_tol: float = COEFF_TOL, check: bool = True):
    """Decision-variable values and Gram certificates from a solution."""
    x = sol.x
    values = {dv: float(x[col]) for dv, col in low.columns.items()}
    certs = []
    for con, gb, blk in low.constraint_blocks:
        n = gb.size
        gram = smat(x[low.block_offsets[blk] : low.block_offsets[blk] + svec_len(n)], n) if blk >= 0 else np.zeros((0, 0))
        expected = [[e.instantiate(values) for e in row] for row in con.entries]
        certs.append(Certificate(con.name, gb, gram, expected))
    for name, half, blk in low.multiplier_blocks:
        n = len(half)
        gram = smat(x[low.block_offsets[blk] : low.block_offsets[blk] + svec_len(n)], n)
        gb = GramBasis(name, [half], blk)
        cert = Certificate(name, gb, gram, [[Polynomial()]], kind="multiplier")
        cert.expected = cert.reconstruct()
        certs.append(cert)
    if check:
        check_certificates(certs, eig_tol, coeff_tol)
    return values, certs


def is_sos(p: Polynomial, settings: SolverSettings | None = None) -> tuple[bool, Certificate | None]:
    """Decide whether a numeric polynomial admits a Gram certificate."""
    prog = SosProgram("is_sos")
    prog.add_scalar_sos(p, "p")
    try:
        res = prog.solve(settings)
    except (EmptyBasis, CertificateResidual):
        return False, None
    if not res.ok:
        return False, None
    return True, res.certificates[0]


def matrix_is_sos(Q, settings: SolverSettings | None = None) -> tuple[bool, Certificate | None]:
    prog = SosProgram("matrix_is_sos")
    prog.add_matrix_sos(Q, "Q")
    try:
        res = prog.solve(settings)
    except (EmptyBasis, CertificateResidual):
        return False, None
    if not res.ok:
        return False, None
    return True, res.certificates[0]
