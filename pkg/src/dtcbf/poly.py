"""Sparse multivariate polynomials over globally interned variables.

Two coefficient kinds are supported:

* :class:`Polynomial` has float coefficients.
* :class:`ParamPolynomial` has coefficients that are affine expressions in
  scalar decision variables.  Internally it is stored as a constant
  polynomial plus one numeric polynomial per decision variable, which keeps
  composition and multiplication by numeric polynomials cheap.

Monomials are tuples of exponents indexed by variable id with trailing zeros
trimmed, so every monomial has exactly one representation and ``()`` is the
constant monomial.
"""

from __future__ import annotations

import itertools
import math
import operator
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

COEFF_TOL = 1e-12


class PolyError(Exception):
    """Base class for polynomial errors."""


class BilinearProduct(PolyError):
    """Both factors of a product reference decision variables."""


class ArityMismatch(PolyError):
    """A substitution does not match the variables of the polynomial."""


class DimensionMismatch(PolyError):
    """An evaluation point has the wrong number of coordinates."""


# ---------------------------------------------------------------------------
# variables

_var_names: list[str] = []
_var_ids: dict[str, int] = {}


def var_id(name: str) -> int:
    """Return the id of ``name``, interning it on first use."""
    vid = _var_ids.get(name)
    if vid is None:
        vid = len(_var_names)
        _var_names.append(name)
        _var_ids[name] = vid
    return vid


def var_name(vid: int) -> str:
    return _var_names[vid]


def var_ids(names: Iterable[str]) -> tuple[int, ...]:
    return tuple(var_id(n) for n in names)


def state_vars(n: int, prefix: str = "x") -> tuple[int, ...]:
    return var_ids(f"{prefix}{i + 1}" for i in range(n))


# Intern the conventional names in a fixed order so monomial layouts do not
# depend on which module happened to touch a variable first.
state_vars(8)
state_vars(4, "u")


# ---------------------------------------------------------------------------
# monomials

Monomial = tuple[int, ...]
ONE: Monomial = ()


def _trim(exps: list[int]) -> Monomial:
    while exps and exps[-1] == 0:
        exps.pop()
    return tuple(exps)


def monomial(exponents: Mapping[int, int]) -> Monomial:
    """Build a monomial from ``{var_id: exponent}``."""
    if not exponents:
        return ONE
    out = [0] * (max(exponents) + 1)
    for v, e in exponents.items():
        if e < 0:
            raise ValueError("negative exponent")
        out[v] = e
    return _trim(out)


def var_monomial(vid: int, power: int = 1) -> Monomial:
    return monomial({vid: power})


def mono_exponents(m: Monomial) -> dict[int, int]:
    return {v: e for v, e in enumerate(m) if e}


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return a
    head = tuple(map(operator.add, a, b))
    return head + a[len(b):]


def mono_degree(m: Monomial) -> int:
    return sum(m)


def mono_vars(m: Monomial) -> set[int]:
    return {v for v, e in enumerate(m) if e}


def mono_divides(a: Monomial, b: Monomial) -> bool:
    if len(a) > len(b):
        return False
    return all(x <= y for x, y in zip(a, b))


def mono_split(m: Monomial, split: frozenset[int]) -> tuple[Monomial, Monomial]:
    """Split ``m`` into the part over ``split`` variables and the rest."""
    inner = [e if v in split else 0 for v, e in enumerate(m)]
    outer = [0 if v in split else e for v, e in enumerate(m)]
    return _trim(inner), _trim(outer)


def grlex_key(m: Monomial) -> tuple:
    """Sort key for graded lexicographic order (ascending degree)."""
    return (sum(m), tuple(-e for e in m))


def sort_monomials(monos: Iterable[Monomial]) -> list[Monomial]:
    return sorted(set(monos), key=grlex_key)


def monomials_up_to(vars_: Sequence[int], max_degree: int, min_degree: int = 0) -> list[Monomial]:
    """All monomials over ``vars_`` with total degree in ``[min_degree, max_degree]``."""
    out = []
    k = len(vars_)
    for deg in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), deg):
            exps: dict[int, int] = {}
            for idx in combo:
                exps[vars_[idx]] = exps.get(vars_[idx], 0) + 1
            out.append(monomial(exps))
    return sort_monomials(out)


def mono_str(m: Monomial) -> str:
    parts = []
    for v, e in enumerate(m):
        if e == 1:
            parts.append(var_name(v))
        elif e > 1:
            parts.append(f"{var_name(v)}^{e}")
    return "*".join(parts) if parts else "1"


# ---------------------------------------------------------------------------
# affine expressions in decision variables

_next_decision = itertools.count()


def new_decision_vars(n: int) -> list[int]:
    """Fresh globally unique decision-variable ids."""
    return [next(_next_decision) for _ in range(n)]


class AffineExpr:
    """``const + sum(weight * decision_var)``."""

    __slots__ = ("const", "coeffs")

    def __init__(self, const: float = 0.0, coeffs: Mapping[int, float] | None = None):
        self.const = float(const)
        self.coeffs = {k: float(w) for k, w in (coeffs or {}).items() if w != 0.0}

    @classmethod
    def var(cls, dv: int, weight: float = 1.0) -> AffineExpr:
        return cls(0.0, {dv: weight})

    def is_constant(self) -> bool:
        return not self.coeffs

    def is_zero(self, tol: float = 0.0) -> bool:
        return abs(self.const) <= tol and all(abs(w) <= tol for w in self.coeffs.values())

    def dvars(self) -> set[int]:
        return set(self.coeffs)

    def evaluate(self, values: Mapping[int, float]) -> float:
        return self.const + sum(w * values[k] for k, w in self.coeffs.items())

    def __add__(self, other) -> AffineExpr:
        if isinstance(other, AffineExpr):
            coeffs = dict(self.coeffs)
            for k, w in other.coeffs.items():
                coeffs[k] = coeffs.get(k, 0.0) + w
            return AffineExpr(self.const + other.const, coeffs)
        return AffineExpr(self.const + float(other), self.coeffs)

    __radd__ = __add__

    def __neg__(self) -> AffineExpr:
        return AffineExpr(-self.const, {k: -w for k, w in self.coeffs.items()})

    def __sub__(self, other) -> AffineExpr:
        return self + (-other)

    def __rsub__(self, other) -> AffineExpr:
        return (-self) + other

    def __mul__(self, other) -> AffineExpr:
        if isinstance(other, AffineExpr):
            if self.coeffs and other.coeffs:
                raise BilinearProduct("product of two decision-dependent expressions")
            if other.coeffs:
                return other * self.const
            other = other.const
        c = float(other)
        return AffineExpr(self.const * c, {k: w * c for k, w in self.coeffs.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, AffineExpr):
            return self.is_constant() and self.const == other
        return self.const == other.const and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.const, tuple(sorted(self.coeffs.items()))))

    def __repr__(self) -> str:
        terms = [f"{self.const:g}"] + [f"{w:+g}*d{k}" for k, w in sorted(self.coeffs.items())]
        return "AffineExpr(" + " ".join(terms) + ")"


# ---------------------------------------------------------------------------
# numeric polynomials

Scalar = Union[int, float, np.floating]


def _clean(terms: dict[Monomial, float]) -> dict[Monomial, float]:
    return {m: c for m, c in terms.items() if abs(c) >= COEFF_TOL}


def _add_terms(a: Mapping[Monomial, float], b: Mapping[Monomial, float], sign: float = 1.0) -> dict:
    out = dict(a)
    for m, c in b.items():
        out[m] = out.get(m, 0.0) + sign * c
    return _clean(out)


def _mul_terms(a: Mapping[Monomial, float], b: Mapping[Monomial, float]) -> dict:
    if len(a) < len(b):
        a, b = b, a
    out: dict[Monomial, float] = {}
    get = out.get
    for mb, cb in b.items():
        for ma, ca in a.items():
            m = mono_mul(ma, mb)
            out[m] = get(m, 0.0) + ca * cb
    return _clean(out)


class Polynomial:
    """Polynomial with float coefficients."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Monomial, float] | None = None):
        self._terms = _clean({m: float(c) for m, c in (terms or {}).items()})

    @classmethod
    def _raw(cls, terms: dict[Monomial, float]) -> Polynomial:
        p = cls.__new__(cls)
        p._terms = terms
        return p

    @classmethod
    def constant(cls, c: float) -> Polynomial:
        return cls({ONE: c})

    @classmethod
    def var(cls, name_or_id: str | int) -> Polynomial:
        vid = var_id(name_or_id) if isinstance(name_or_id, str) else name_or_id
        return cls({var_monomial(vid): 1.0})

    @classmethod
    def from_monomial(cls, m: Monomial, c: float = 1.0) -> Polynomial:
        return cls({m: c})

    @property
    def terms(self) -> Mapping[Monomial, float]:
        return self._terms

    def is_zero(self) -> bool:
        return not self._terms

    def has_dvars(self) -> bool:
        return False

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((sum(m) for m in self._terms), default=-1)

    def variables(self) -> set[int]:
        out: set[int] = set()
        for m in self._terms:
            out |= mono_vars(m)
        return out

    def nvars(self) -> int:
        return max((len(m) for m in self._terms), default=0)

    def support(self) -> set[Monomial]:
        return set(self._terms)

    def coefficient_of(self, m: Monomial) -> AffineExpr:
        return AffineExpr(self._terms.get(m, 0.0))

    def coeff(self, m: Monomial) -> float:
        return self._terms.get(m, 0.0)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial._raw(_add_terms(self._terms, other._terms))
        if isinstance(other, ParamPolynomial):
            return other + self
        if isinstance(other, AffineExpr):
            return ParamPolynomial.from_polynomial(self) + other
        return Polynomial._raw(_add_terms(self._terms, {ONE: float(other)}))

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial._raw({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial._raw(_mul_terms(self._terms, other._terms))
        if isinstance(other, (ParamPolynomial, AffineExpr)):
            return ParamPolynomial.from_polynomial(self) * other
        c = float(other)
        return Polynomial._raw(_clean({m: v * c for m, v in self._terms.items()}))

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> Polynomial:
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> Polynomial:
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, Polynomial):
            return self._terms == other._terms
        if isinstance(other, (int, float)):
            return self._terms == ({ONE: float(other)} if other else {})
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def allclose(self, other: Polynomial, tol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= tol

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # evaluation -----------------------------------------------------------
    def evaluate(self, point: Sequence[float], variables: Sequence[int] | None = None) -> float:
        """Evaluate at ``point``, ordered by ``variables`` (default: ids 0..k-1)."""
        pts = np.asarray(point, dtype=float).reshape(1, -1)
        return float(self.evaluate_many(pts, variables)[0])

    __call__ = evaluate

    def evaluate_many(self, points: np.ndarray, variables: Sequence[int] | None = None) -> np.ndarray:
        """Vectorized evaluation at the rows of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols = _column_map(self.nvars(), pts.shape[1], variables, self.variables())
        return _eval_terms(self._terms.items(), pts, cols)

    def compose(self, subs: Mapping[int, object] | Sequence[object], variables: Sequence[int] | None = None):
        return compose(self, subs, variables)

    def instantiate(self, values: Mapping[int, float]) -> Polynomial:
        return self

    def __repr__(self) -> str:
        return f"Polynomial({format_poly(self)!r})"

    def __str__(self) -> str:
        return format_poly(self)


def _column_map(nv: int, dim: int, variables, used: set[int]) -> dict[int, int]:
    if variables is None:
        if dim < nv:
            raise DimensionMismatch(f"point has {dim} coordinates, polynomial needs {nv}")
        return {v: v for v in range(nv)}
    variables = list(variables)
    if dim != len(variables):
        raise DimensionMismatch(f"point has {dim} coordinates, expected {len(variables)}")
    cols = {v: i for i, v in enumerate(variables)}
    missing = used - set(cols)
    if missing:
        raise DimensionMismatch(
            "polynomial uses variables not in the evaluation order: "
            + ", ".join(var_name(v) for v in sorted(missing))
        )
    return cols


def _eval_terms(items, pts: np.ndarray, cols: Mapping[int, int]) -> np.ndarray:
    out = np.zeros(pts.shape[0])
    powers: dict[tuple[int, int], np.ndarray] = {}
    for m, c in items:
        val = np.full(pts.shape[0], c)
        for v, e in enumerate(m):
            if e:
                key = (v, e)
                pw = powers.get(key)
                if pw is None:
                    pw = pts[:, cols[v]] ** e
                    powers[key] = pw
                val = val * pw
        out += val
    return out


# ---------------------------------------------------------------------------
# decision-affine polynomials


class ParamPolynomial:
    """Polynomial whose coefficients are affine in decision variables.

    Stored as ``const + sum_k dv_k * parts[dv_k]`` with numeric polynomials.
    """

    __slots__ = ("const", "parts")

    def __init__(self, const: Polynomial | None = None, parts: Mapping[int, Polynomial] | None = None):
        self.const = const if const is not None else Polynomial()
        self.parts = {k: p for k, p in (parts or {}).items() if not p.is_zero()}

    @classmethod
    def from_polynomial(cls, p: Polynomial) -> ParamPolynomial:
        return cls(p, {})

    @classmethod
    def from_affine(cls, a: AffineExpr, m: Monomial = ONE) -> ParamPolynomial:
        return cls(
            Polynomial({m: a.const}),
            {k: Polynomial({m: w}) for k, w in a.coeffs.items()},
        )

    @classmethod
    def linear_combination(cls, dvs: Sequence[int], polys: Sequence[Polynomial]) -> ParamPolynomial:
        return cls(Polynomial(), dict(zip(dvs, polys)))

    @property
    def terms(self) -> dict[Monomial, AffineExpr]:
        out: dict[Monomial, AffineExpr] = {}
        for m, c in self.const.terms.items():
            out[m] = AffineExpr(c)
        for k, p in self.parts.items():
            for m, c in p.terms.items():
                a = out.get(m)
                if a is None:
                    a = out[m] = AffineExpr()
                a.coeffs[k] = a.coeffs.get(k, 0.0) + c
        return out

    def has_dvars(self) -> bool:
        return bool(self.parts)

    def dvars(self) -> set[int]:
        return set(self.parts)

    def is_zero(self) -> bool:
        return self.const.is_zero() and not self.parts

    def support(self) -> set[Monomial]:
        out = set(self.const.terms)
        for p in self.parts.values():
            out |= set(p.terms)
        return out

    def degree(self) -> int:
        return max([self.const.degree()] + [p.degree() for p in self.parts.values()])

    def variables(self) -> set[int]:
        out = self.const.variables()
        for p in self.parts.values():
            out |= p.variables()
        return out

    def nvars(self) -> int:
        return max([self.const.nvars()] + [p.nvars() for p in self.parts.values()])

    def coefficient_of(self, m: Monomial) -> AffineExpr:
        return AffineExpr(self.const.coeff(m), {k: p.coeff(m) for k, p in self.parts.items()})

    def instantiate(self, values: Mapping[int, float]) -> Polynomial:
        out = dict(self.const.terms)
        for k, p in self.parts.items():
            w = float(values[k])
            for m, c in p.terms.items():
                out[m] = out.get(m, 0.0) + w * c
        return Polynomial(out)

    def evaluate(self, point: Sequence[float], variables: Sequence[int] | None = None) -> AffineExpr:
        pts = np.asarray(point, dtype=float).reshape(1, -1)
        const = float(self.const.evaluate_many(pts, variables)[0]) if not self.const.is_zero() else 0.0
        coeffs = {k: float(p.evaluate_many(pts, variables)[0]) for k, p in self.parts.items()}
        return AffineExpr(const, coeffs)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other) -> ParamPolynomial:
        if isinstance(other, ParamPolynomial):
            parts = dict(self.parts)
            for k, p in other.parts.items():
                parts[k] = parts[k] + p if k in parts else p
            return ParamPolynomial(self.const + other.const, parts)
        if isinstance(other, AffineExpr):
            return self + ParamPolynomial.from_affine(other)
        if isinstance(other, Polynomial):
            return ParamPolynomial(self.const + other, self.parts)
        return ParamPolynomial(self.const + float(other), self.parts)

    __radd__ = __add__

    def __neg__(self) -> ParamPolynomial:
        return ParamPolynomial(-self.const, {k: -p for k, p in self.parts.items()})

    def __sub__(self, other) -> ParamPolynomial:
        return self + (-other)

    def __rsub__(self, other) -> ParamPolynomial:
        return (-self) + other

    def __mul__(self, other) -> ParamPolynomial:
        if isinstance(other, ParamPolynomial):
            if self.parts and other.parts:
                raise BilinearProduct(
                    "product of two polynomials whose coefficients both depend on decision variables"
                )
            if other.parts:
                return other * self.const
            other = other.const
        if isinstance(other, AffineExpr):
            if other.coeffs:
                if self.parts:
                    raise BilinearProduct("product of two decision-dependent factors")
                return ParamPolynomial.from_affine(other) * self.const
            other = other.const
        if isinstance(other, Polynomial):
            return ParamPolynomial(self.const * other, {k: p * other for k, p in self.parts.items()})
        c = float(other)
        return ParamPolynomial(self.const * c, {k: p * c for k, p in self.parts.items()})

    __rmul__ = __mul__

    def __pow__(self, k: int) -> ParamPolynomial:
        if self.parts and k > 1:
            raise BilinearProduct("power of a decision-dependent polynomial")
        if k == 0:
            return ParamPolynomial(Polynomial.constant(1.0))
        return self if k == 1 else ParamPolynomial(self.const ** k)

    def compose(self, subs, variables: Sequence[int] | None = None) -> ParamPolynomial:
        return compose(self, subs, variables)

    def __repr__(self) -> str:
        return f"ParamPolynomial(const={format_poly(self.const)!r}, ndv={len(self.parts)})"


PolyLike = Union[Polynomial, ParamPolynomial]


def as_param(p) -> ParamPolynomial:
    if isinstance(p, ParamPolynomial):
        return p
    if isinstance(p, Polynomial):
        return ParamPolynomial.from_polynomial(p)
    if isinstance(p, AffineExpr):
        return ParamPolynomial.from_affine(p)
    return ParamPolynomial(Polynomial.constant(float(p)))


def as_poly(p) -> Polynomial:
    if isinstance(p, Polynomial):
        return p
    if isinstance(p, ParamPolynomial):
        if p.parts:
            raise TypeError("polynomial still depends on decision variables")
        return p.const
    return Polynomial.constant(float(p))


# ---------------------------------------------------------------------------
# composition


def _normalize_subs(p, subs, variables) -> dict[int, object]:
    used = p.variables()
    if isinstance(subs, Mapping):
        table = dict(subs)
    else:
        subs = list(subs)
        if variables is None:
            variables = list(range(len(subs)))
        variables = list(variables)
        if len(variables) != len(subs):
            raise ArityMismatch(f"{len(subs)} substitutions for {len(variables)} variables")
        table = dict(zip(variables, subs))
    missing = used - set(table)
    if missing:
        raise ArityMismatch(
            "no substitution for variables " + ", ".join(var_name(v) for v in sorted(missing))
        )
    return table


def _compose_numeric(p: Polynomial, table: Mapping[int, object], cache: dict) -> object:
    """Compose with substitutions that may be numeric or decision-affine."""
    out: object = Polynomial()
    for m, c in p.terms.items():
        term: object = Polynomial.constant(c)
        for v, e in enumerate(m):
            if e:
                key = (v, e)
                pw = cache.get(key)
                if pw is None:
                    pw = table[v] ** e
                    cache[key] = pw
                term = term * pw
        out = out + term
    return out


def compose(p: PolyLike, subs, variables: Sequence[int] | None = None) -> PolyLike:
    """Substitute polynomials for the variables of ``p``.

    ``subs`` is either a mapping ``{var_id: polynomial}`` or a sequence aligned
    with ``variables`` (default: ids ``0..len(subs)-1``).  Decision variables
    in ``p`` may only appear in its coefficients, so the result stays affine
    in them whenever the substitutions are numeric.
    """
    table = _normalize_subs(p, subs, variables)
    table = {v: (s if isinstance(s, (Polynomial, ParamPolynomial)) else as_poly(s)) for v, s in table.items()}
    cache: dict = {}
    if isinstance(p, Polynomial):
        return _compose_numeric(p, table, cache)
    numeric = all(isinstance(s, Polynomial) for s in table.values())
    if not numeric and p.parts:
        # a decision-dependent h composed with a decision-dependent map
        # multiplies decision variables unless h is constant in x
        for part in p.parts.values():
            if part.degree() > 0:
                raise BilinearProduct("composition of decision-dependent polynomial with decision-dependent map")
    const = _compose_numeric(p.const, table, cache)
    parts = {k: as_poly(_compose_numeric(q, table, cache)) for k, q in p.parts.items()}
    return as_param(const) + ParamPolynomial(Polynomial(), parts)


# ---------------------------------------------------------------------------
# matrices of polynomials


@dataclass(frozen=True)
class PolyMatrix:
    """Dense matrix of polynomials; vectors are ``n x 1``."""

    entries: tuple[tuple[PolyLike, ...], ...]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[object]]) -> PolyMatrix:
        conv = tuple(
            tuple(e if isinstance(e, (Polynomial, ParamPolynomial)) else as_poly(e) for e in row) for row in rows
        )
        if conv and len({len(r) for r in conv}) != 1:
            raise ValueError("ragged polynomial matrix")
        return cls(conv)

    @classmethod
    def column(cls, items: Sequence[object]) -> PolyMatrix:
        return cls.from_rows([[e] for e in items])

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.entries), len(self.entries[0]) if self.entries else 0)

    def __getitem__(self, idx: tuple[int, int]) -> PolyLike:
        i, j = idx
        return self.entries[i][j]

    def col(self, j: int = 0) -> list[PolyLike]:
        return [row[j] for row in self.entries]

    def matvec(self, vec: Sequence[object]) -> list[PolyLike]:
        rows, cols = self.shape
        if len(vec) != cols:
            raise ArityMismatch(f"matrix has {cols} columns, vector has {len(vec)} entries")
        out = []
        for i in range(rows):
            acc: object = Polynomial()
            for j in range(cols):
                acc = acc + self.entries[i][j] * vec[j]
            out.append(acc)
        return out

    def is_symmetric(self, tol: float = 0.0) -> bool:
        r, c = self.shape
        if r != c:
            return False
        for i in range(r):
            for j in range(i + 1, c):
                d = as_param(self.entries[i][j]) - self.entries[j][i]
                if not _param_is_zero(d, tol):
                    return False
        return True

    def evaluate(self, point: Sequence[float], variables: Sequence[int] | None = None) -> np.ndarray:
        return np.array([[as_poly(e).evaluate(point, variables) for e in row] for row in self.entries])


def _param_is_zero(p: ParamPolynomial, tol: float) -> bool:
    if p.const.max_abs_coeff() > tol:
        return False
    return all(q.max_abs_coeff() <= tol for q in p.parts.values())


# ---------------------------------------------------------------------------
# expansion of h(f + g u) in powers of u


MultiIndex = tuple[int, ...]


@dataclass
class PolicyExpansion:
    """``h(f + g*pi) = sum_a a[alpha] pi^alpha + sum_i b[i] pi_i + c``.

    ``a`` is keyed by multi-indices of length ``m`` with ``|alpha| >= 2``.
    """

    a: dict[MultiIndex, PolyLike]
    b: list[PolyLike]
    c: PolyLike
    m: int
    state_vars: tuple[int, ...] = field(default=())

    def pair(self, i: int, j: int) -> PolyLike:
        """Coefficient of ``pi_i * pi_j`` (zero-based, ``i <= j``)."""
        alpha = [0] * self.m
        alpha[i] += 1
        alpha[j] += 1
        return self.a.get(tuple(alpha), Polynomial())

    def max_order(self) -> int:
        return max((sum(k) for k in self.a), default=1 if any(not _is0(bi) for bi in self.b) else 0)

    def recombine(self, policy: Sequence[PolyLike]) -> PolyLike:
        if len(policy) != self.m:
            raise ArityMismatch("policy length does not match input count")
        out: object = self.c
        for i, bi in enumerate(self.b):
            out = out + bi * policy[i]
        for alpha, coef in self.a.items():
            term: object = coef
            for i, e in enumerate(alpha):
                if e:
                    term = term * (as_poly(policy[i]) ** e)
            out = out + term
        return out

    def instantiate(self, values: Mapping[int, float]) -> PolicyExpansion:
        inst = lambda p: p.instantiate(values) if isinstance(p, ParamPolynomial) else p  # noqa: E731
        return PolicyExpansion(
            {k: inst(v) for k, v in self.a.items()}, [inst(v) for v in self.b], inst(self.c), self.m, self.state_vars
        )


def _is0(p) -> bool:
    return p.is_zero()


def input_vars(m: int) -> tuple[int, ...]:
    return var_ids(f"u{i + 1}" for i in range(m))


def expand_in_policy(
    h: PolyLike,
    f: Sequence[PolyLike],
    g: PolyMatrix,
    state: Sequence[int],
) -> PolicyExpansion:
    """Expand ``h(f(x) + g(x) u)`` by powers of the input ``u``.

    Each coefficient is a polynomial in the state variables and stays affine
    in the decision variables of ``h``.
    """
    n, m = g.shape
    if len(f) != n or len(state) != n:
        raise ArityMismatch(f"f has {len(f)} entries, g has {n} rows, {len(state)} state variables")
    extra = h.variables() - set(state)
    if extra:
        raise ArityMismatch("h depends on non-state variables " + ", ".join(var_name(v) for v in sorted(extra)))
    u = input_vars(m)
    upolys = [Polynomial.var(v) for v in u]
    subs = {}
    for k in range(n):
        acc: object = f[k]
        for j in range(m):
            acc = acc + g[k, j] * upolys[j]
        subs[state[k]] = acc
    composed = compose(h, subs) if h.variables() else as_param(h) if isinstance(h, ParamPolynomial) else h
    uset = frozenset(u)

    def split(p: Polynomial) -> dict[MultiIndex, dict[Monomial, float]]:
        groups: dict[MultiIndex, dict[Monomial, float]] = {}
        for mono, c in p.terms.items():
            inner, outer = mono_split(mono, uset)
            alpha = tuple(inner[v] if v < len(inner) else 0 for v in u)
            groups.setdefault(alpha, {})[outer] = c
        return groups

    if isinstance(composed, ParamPolynomial):
        const_groups = split(composed.const)
        part_groups = {k: split(p) for k, p in composed.parts.items()}
        keys = set(const_groups)
        for gmap in part_groups.values():
            keys |= set(gmap)
        coeffs: dict[MultiIndex, PolyLike] = {}
        for alpha in keys:
            coeffs[alpha] = ParamPolynomial(
                Polynomial(const_groups.get(alpha, {})),
                {k: Polynomial(gm.get(alpha, {})) for k, gm in part_groups.items()},
            )
        zero: PolyLike = ParamPolynomial()
    else:
        coeffs = {alpha: Polynomial(t) for alpha, t in split(composed).items()}
        zero = Polynomial()

    zero_alpha = (0,) * m
    c = coeffs.pop(zero_alpha, zero)
    b = []
    for i in range(m):
        e = [0] * m
        e[i] = 1
        b.append(coeffs.pop(tuple(e), zero))
    a = {alpha: p for alpha, p in coeffs.items() if not p.is_zero()}
    return PolicyExpansion(a, b, c, m, tuple(state))


# ---------------------------------------------------------------------------
# text syntax


class ParseError(PolyError):
    def __init__(self, message: str, text: str = "", pos: int = 0):
        self.text = text
        self.pos = pos
        self.column = pos + 1
        super().__init__(f"{message} (column {pos + 1})" if text else message)


def _tokenize(text: str):
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            yield ("num", text[i:j], i)
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            yield ("name", text[i:j], i)
            i = j
            continue
        if text.startswith("**", i):
            yield ("op", "^", i)
            i += 2
            continue
        if ch in "+-*/^()":
            yield ("op", ch, i)
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", text, i)
    yield ("end", "", n)


class _Parser:
    def __init__(self, text: str, allowed: set[str] | None):
        self.text = text
        self.tokens = list(_tokenize(text))
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg: str, tok=None):
        tok = tok or self.peek()
        raise ParseError(msg, self.text, tok[2])

    def parse(self) -> Polynomial:
        if self.peek()[0] == "end":
            self.error("empty polynomial")
        p = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return p

    def expr(self) -> Polynomial:
        p = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Polynomial:
        p = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()
            q = self.unary()
            if op[1] == "*":
                p = p * q
            else:
                if q.degree() > 0:
                    self.error("division by a non-constant", op)
                c = q.coeff(ONE)
                if c == 0.0:
                    self.error("division by zero", op)
                p = p / c
        return p

    def unary(self) -> Polynomial:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return -self.unary()
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Polynomial:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                self.error("exponent must be a non-negative integer", tok)
            return base ** int(tok[1])
        return base

    def atom(self) -> Polynomial:
        tok = self.take()
        kind, val, pos = tok
        if kind == "num":
            try:
                return Polynomial.constant(float(val))
            except ValueError:
                self.error(f"bad number {val!r}", tok)
        if kind == "name":
            if self.allowed is not None and val not in self.allowed:
                self.error(f"unknown variable {val!r}", tok)
            return Polynomial.var(val)
        if (kind, val) == ("op", "("):
            p = self.expr()
            if self.peek()[:2] != ("op", ")"):
                self.error("missing ')'")
            self.take()
            return p
        self.error(f"unexpected {val!r}" if val else "unexpected end of input", tok)


def parse_poly(text: str, allowed: Iterable[str] | None = None) -> Polynomial:
    """Parse ``"3*x1^2 - 0.5*x1*x2 + 1"``-style text.

    ``+ - * ^`` (or ``**``), parentheses and division by constants are
    accepted.  ``allowed`` restricts the variable names.
    """
    return _Parser(text, set(allowed) if allowed is not None else None).parse()


def parse_monomial(text: str, allowed: Iterable[str] | None = None) -> Monomial:
    p = parse_poly(text, allowed)
    if len(p.terms) != 1:
        raise ParseError(f"{text!r} is not a single monomial")
    (m, c), = p.terms.items()
    if c != 1.0:
        raise ParseError(f"{text!r} has a coefficient; expected a bare monomial")
    return m


def _fmt_coeff(c: float) -> str:
    r = repr(float(c))
    return r[:-2] if r.endswith(".0") else r


def format_poly(p: Polynomial) -> str:
    """Round-trippable text form, highest degree first."""
    if p.is_zero():
        return "0"
    out = []
    for m in sorted(p.terms, key=lambda m: (-sum(m), tuple(-e for e in m))):
        c = p.terms[m]
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        if m == ONE:
            body = _fmt_coeff(mag)
        elif mag == 1.0:
            body = mono_str(m)
        else:
            body = f"{_fmt_coeff(mag)}*{mono_str(m)}"
        out.append((sign, body))
    first_sign, first = out[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in out[1:]:
        text += f" {sign} {body}"
    return text


def random_polynomial(rng: np.random.Generator, vars_: Sequence[int], degree: int, density: float = 0.6) -> Polynomial:
    """Random polynomial for tests and fuzzing."""
    terms = {}
    for m in monomials_up_to(vars_, degree):
        if rng.random() < density:
            terms[m] = float(rng.normal())
    return Polynomial(terms)


def max_abs_diff(p: Polynomial, q: Polynomial) -> float:
    return (p - q).max_abs_coeff()


def is_finite(p: Polynomial) -> bool:
    return all(math.isfinite(c) for c in p.terms.values())
