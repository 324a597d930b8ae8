"""Sparse SDPA text format.

Our primal ``min c'x, Ax = b, x in K`` is written as the SDPA dual
``max F0.Y, Fi.Y = ci, Y psd`` with ``ci = b_i``, ``Fi = A_i`` and
``F0 = -c``.  Free variables become differences of non-negative pairs in
the leading diagonal block, so reading a file back yields a problem without
free variables but with the same optimal value.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .problem import SQRT2, SdpError, SdpProblem, svec_len


def _block_entries(problem: SdpProblem, vec_cols: np.ndarray, vec_vals: np.ndarray):
    """Map variable-vector entries to ``(block, i, j, value)`` tuples (1-based)."""
    nf, nl = problem.n_free, problem.n_lin
    has_lp = nf + nl > 0
    offsets = problem.block_offsets()
    out = []
    for col, val in zip(vec_cols, vec_vals):
        if col < nf:
            out.append((1, 2 * col + 1, 2 * col + 1, val))
            out.append((1, 2 * col + 2, 2 * col + 2, -val))
        elif col < nf + nl:
            k = 2 * nf + (col - nf) + 1
            out.append((1, k, k, val))
        else:
            for bi, (off, n) in enumerate(zip(offsets, problem.psd)):
                if off <= col < off + svec_len(n):
                    pos = col - off
                    # invert the svec index
                    i = 0
                    while pos >= n - i:
                        pos -= n - i
                        i += 1
                    j = i + pos
                    v = val if i == j else val / SQRT2
                    out.append((bi + 1 + int(has_lp), i + 1, j + 1, v))
                    break
    return out


def write_sdpa(problem: SdpProblem, path: str | Path) -> None:
    nf, nl = problem.n_free, problem.n_lin
    blocks = []
    if nf + nl:
        blocks.append(-(2 * nf + nl))
    blocks.extend(problem.psd)
    lines = [
        '"exported conic program: min c\'x s.t. Ax = b, x in K"',
        f"{problem.nrows} = mDIM",
        f"{len(blocks)} = nBLOCK",
        " ".join(str(b) for b in blocks) + " = bLOCKsTRUCT",
        " ".join(repr(float(v)) for v in problem.b) if problem.nrows else "",
    ]
    cols = np.flatnonzero(problem.c)
    for blk, i, j, v in _block_entries(problem, cols, -problem.c[cols]):
        lines.append(f"0 {blk} {i} {j} {float(v)!r}")
    A = problem.A.tocsr()
    for r in range(problem.nrows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        for blk, i, j, v in _block_entries(problem, A.indices[lo:hi], A.data[lo:hi]):
            lines.append(f"{r + 1} {blk} {i} {j} {float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _numbers(line: str) -> list[str]:
    return [t for t in re.split(r"[\s,{}()]+", line.strip()) if t]


def read_sdpa(path: str | Path) -> SdpProblem:
    raw = Path(path).read_text().splitlines()
    lines = [ln for ln in raw if ln.strip() and ln.lstrip()[0] not in '"*']
    if len(lines) < 3:
        raise SdpError("truncated SDPA file")
    m = int(_numbers(lines[0])[0])
    nblock = int(_numbers(lines[1])[0])
    struct = [int(float(t)) for t in _numbers(lines[2])[:nblock]]
    idx = 3
    bvals: list[float] = []
    while len(bvals) < m:
        bvals.extend(float(t) for t in _numbers(lines[idx]))
        idx += 1
    b = np.array(bvals[:m])

    lp_sizes = [-s for s in struct if s < 0]
    psd_sizes = [s for s in struct if s > 0]
    n_lin = sum(lp_sizes)
    # variable offsets per block
    offsets = {}
    lin_off = 0
    psd_off = n_lin
    psd_order = []
    for k, s in enumerate(struct):
        if s < 0:
            offsets[k + 1] = ("lp", lin_off, -s)
            lin_off += -s
        else:
            offsets[k + 1] = ("psd", psd_off, s)
            psd_order.append(s)
            psd_off += svec_len(s)
    nvar = psd_off
    c = np.zeros(nvar)
    rows, cols, vals = [], [], []
    for ln in lines[idx:]:
        tok = _numbers(ln)
        if len(tok) < 5:
            continue
        mat, blk, i, j = (int(t) for t in tok[:4])
        v = float(tok[4])
        kind, off, n = offsets[blk]
        if kind == "lp":
            if i != j:
                continue
            col = off + i - 1
            coef = v
        else:
            a, bb = sorted((i - 1, j - 1))
            col = off + a * n - a * (a - 1) // 2 + (bb - a)
            coef = v if a == bb else v * SQRT2
        if mat == 0:
            c[col] -= coef
        else:
            rows.append(mat - 1)
            cols.append(col)
            vals.append(coef)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, nvar))
    return SdpProblem(A, b, c, 0, n_lin, tuple(psd_sizes))
