"""Sampling boxes and rejection sampling of polynomial superlevel sets."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import poly as P
from .poly import Polynomial


class DegenerateBounds(ValueError):
    pass


def quadratic_box(p: Polynomial, vars_: Sequence[int]) -> np.ndarray | None:
    """Bounding box of ``{p >= 0}`` when ``p`` is a concave quadratic, else ``None``.

    Variables that ``p`` does not involve get ``None`` rows (NaN).
    """
    if p.degree() > 2 or p.is_zero():
        return None
    used = [v for v in vars_ if v in p.variables()]
    if not used:
        return None
    n = len(used)
    pos = {v: i for i, v in enumerate(used)}
    Q = np.zeros((n, n))
    q = np.zeros(n)
    c0 = 0.0
    for m, c in p.terms.items():
        ex = P.mono_exponents(m)
        if not ex:
            c0 += c
        elif len(ex) == 1 and sum(ex.values()) == 1:
            q[pos[next(iter(ex))]] += c
        elif len(ex) == 1:
            i = pos[next(iter(ex))]
            Q[i, i] -= c
        else:
            i, j = (pos[v] for v in ex)
            Q[i, j] -= c / 2
            Q[j, i] -= c / 2
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        return None
    Qi = np.linalg.inv(Q)
    center = Qi @ q / 2
    peak = c0 + q @ center - center @ Q @ center
    if peak < 0:
        return None
    half = np.sqrt(peak * np.diag(Qi))
    box = np.full((len(vars_), 2), np.nan)
    for k, v in enumerate(vars_):
        if v in pos:
            i = pos[v]
            box[k] = (center[i] - half[i], center[i] + half[i])
    return box


def safe_box(s: Polynomial, vars_: Sequence[int], default: float = 1.0, fallback: float = 2.0) -> np.ndarray:
    """Box containing ``{s >= 0}``; variables absent from ``s`` get ``[-default, default]``."""
    box = quadratic_box(s, vars_)
    if box is None:
        box = np.tile([-fallback, fallback], (len(vars_), 1)).astype(float)
        for k, v in enumerate(vars_):
            if v not in s.variables():
                box[k] = (-default, default)
        return box
    for k in range(len(vars_)):
        if np.isnan(box[k, 0]):
            box[k] = (-default, default)
    return box


def inflate(box: np.ndarray, factor: float) -> np.ndarray:
    mid = box.mean(axis=1)
    half = (box[:, 1] - box[:, 0]) / 2 * (1 + factor)
    return np.column_stack([mid - half, mid + half])


def check_box(box: np.ndarray) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or not np.all(np.isfinite(box)) or np.any(box[:, 1] <= box[:, 0]):
        raise DegenerateBounds(f"bounds must be finite intervals with lo < hi, got {box.tolist()}")
    return box


def uniform(box: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    box = check_box(box)
    return rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))


def sample_superlevel(
    p: Polynomial,
    vars_: Sequence[int],
    n: int,
    rng: np.random.Generator,
    box: np.ndarray,
    max_draws: int = 20_000_000,
    batch: int = 200_000,
) -> np.ndarray:
    """Up to ``n`` uniform samples of ``{p >= 0}`` inside ``box``."""
    out = []
    got = 0
    drawn = 0
    while got < n and drawn < max_draws:
        pts = uniform(box, batch, rng)
        drawn += batch
        keep = pts[p.evaluate_many(pts, vars_) >= 0]
        out.append(keep)
        got += keep.shape[0]
    if not out:
        return np.zeros((0, len(vars_)))
    return np.concatenate(out)[:n]


def area_ratio(h: Polynomial, s: Polynomial, vars_: Sequence[int], n: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo ``(area of {h >= 0} within S, that area over area of S)``."""
    box = safe_box(s, vars_)
    pts = uniform(box, n, np.random.default_rng(seed))
    ins = s.evaluate_many(pts, vars_) >= 0
    inh = (h.evaluate_many(pts, vars_) >= 0) & ins
    vol = float(np.prod(box[:, 1] - box[:, 0]))
    area = vol * inh.mean()
    ratio = inh.sum() / max(ins.sum(), 1)
    return float(area), float(ratio)
