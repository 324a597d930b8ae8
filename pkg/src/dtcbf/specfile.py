"""TOML problem files.

A file has the sections ``[plant]``, ``[input]``, ``[safe]``, ``[init]``,
``[param]`` and ``[run]``; polynomials are strings in the ``poly`` grammar
over ``x1..xn``.  See ``configs/*.toml`` for complete examples.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import poly as P
from .sdp import SolverSettings
from .synth.model import Degrees, Extension, InputPolytope, PlantModel, SafeSet, SynthesisConfig

REQUIRED = ("plant", "input", "safe", "init")
DEGREE_KEYS = {f.name for f in dataclasses.fields(Degrees)}
SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverSettings)}
PARAM_KEYS = {
    "H", "H_degree", "Pi", "Pi_degree", "degrees", "epsilon", "delta", "gamma", "gamma_target",
    "gamma_min", "step2_objective", "max_delta", "inactive_tol",
}
RUN_KEYS = {
    "max_iters", "seed", "extension", "input_shift", "fixed_policy_iters", "area_samples",
    "reduce_states", "backend", "eig_tol", "coeff_tol", "solver",
}


class SpecError(Exception):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class ParseError(SpecError):
    pass


class SemanticError(SpecError):
    pass


@dataclass
class ProblemSpec:
    plant: PlantModel
    U: InputPolytope
    S: SafeSet
    cfg: SynthesisConfig
    source: str = ""


class _Locator:
    """Maps ``section.key`` to the line where the key is written."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def find(self, section: str, key: str | None = None) -> int | None:
        current = None
        for no, raw in enumerate(self.lines, 1):
            line = raw.strip()
            m = re.match(r"^\[\s*([A-Za-z0-9_.]+)\s*\]", line)
            if m:
                current = m.group(1)
                if key is None and current == section:
                    return no
                continue
            if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
                return no
        return None

    def column_of(self, line: int | None, fragment: str) -> int | None:
        if line is None:
            return None
        # multi-line arrays: look a few lines ahead for the failing string
        for off in range(0, 40):
            i = line - 1 + off
            if i >= len(self.lines):
                break
            c = self.lines[i].find(fragment)
            if c >= 0:
                return c + 1
        return None

    def line_of(self, line: int | None, fragment: str) -> int | None:
        if line is None:
            return None
        for off in range(0, 40):
            i = line - 1 + off
            if i >= len(self.lines):
                break
            if fragment in self.lines[i]:
                return i + 1
        return line


class _Reader:
    def __init__(self, data: dict, text: str):
        self.data = data
        self.loc = _Locator(text)

    def fail(self, msg: str, section: str, key: str | None = None, cls=SemanticError):
        raise cls(msg, self.loc.find(section, key))

    def section(self, name: str, required: bool = True) -> dict:
        if name not in self.data:
            if required:
                raise ParseError(f"missing [{name}] section")
            return {}
        sec = self.data[name]
        if not isinstance(sec, dict):
            raise ParseError(f"[{name}] must be a table")
        return sec

    def get(self, section: str, key: str, kind=None, default=dataclasses.MISSING):
        sec = self.section(section, required=default is dataclasses.MISSING)
        if key not in sec:
            if default is dataclasses.MISSING:
                raise SemanticError(f"[{section}] is missing '{key}'", self.loc.find(section))
            return default
        val = sec[key]
        if kind is not None and not isinstance(val, kind):
            self.fail(f"[{section}] {key} has the wrong type {type(val).__name__}", section, key)
        return val

    def poly(self, text, section: str, key: str, allowed) -> P.Polynomial:
        if not isinstance(text, str):
            self.fail(f"[{section}] {key}: expected a polynomial string, got {text!r}", section, key)
        try:
            return P.parse_poly(text, allowed)
        except P.ParseError as exc:
            line = self.loc.find(section, key)
            line = self.loc.line_of(line, text)
            col = self.loc.column_of(line, text)
            if col is not None:
                col += exc.pos + 1  # skip the opening quote
            raise ParseError(f"[{section}] {key}: {exc}", line, col) from exc

    def monomial(self, text, section: str, key: str, allowed) -> P.Monomial:
        if not isinstance(text, str):
            self.fail(f"[{section}] {key}: expected a monomial string, got {text!r}", section, key)
        try:
            return P.parse_monomial(text, allowed)
        except P.ParseError as exc:
            raise ParseError(f"[{section}] {key}: {exc}", self.loc.line_of(self.loc.find(section, key), text)) from exc

    def unknown(self, section: str, allowed: set[str]) -> None:
        for key in self.section(section, required=False):
            if key not in allowed:
                self.fail(f"unknown key '{key}' in [{section}]", section, key)


def _state_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def loads(text: str) -> ProblemSpec:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"\(at line (\d+), column (\d+)\)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ParseError(str(exc).split(" (at line")[0], line, col) from exc
    return from_dict(data, text)


def load(path) -> ProblemSpec:
    text = Path(path).read_text()
    return loads(text)


def from_dict(data: dict, text: str = "") -> ProblemSpec:
    r = _Reader(data, text)
    for name in data:
        if name not in (*REQUIRED, "param", "run"):
            raise SemanticError(f"unknown section [{name}]", r.loc.find(name))
    for name in REQUIRED:
        r.section(name)

    n = r.get("plant", "n", int)
    m = r.get("plant", "m", int)
    if n < 1 or m < 1:
        r.fail("n and m must be positive", "plant", "n")
    names = _state_names(n)
    state = P.var_ids(names)
    f_txt = r.get("plant", "f", list)
    if len(f_txt) != n:
        r.fail(f"f has {len(f_txt)} entries, expected n = {n}", "plant", "f")
    f = tuple(r.poly(t, "plant", "f", names) for t in f_txt)
    g_txt = r.get("plant", "g", list)
    if len(g_txt) != n or any(not isinstance(row, list) or len(row) != m for row in g_txt):
        shape = f"{len(g_txt)}x{len(g_txt[0]) if g_txt and isinstance(g_txt[0], list) else '?'}"
        r.fail(f"g has shape {shape}, expected {n}x{m}", "plant", "g")
    g = P.PolyMatrix.from_rows([[r.poly(str(t) if isinstance(t, (int, float)) else t, "plant", "g", names) for t in row] for row in g_txt])
    plant = PlantModel(state, f, g)

    M = np.asarray(r.get("input", "M", list), dtype=float)
    d = np.asarray(r.get("input", "d", list), dtype=float)
    if M.ndim != 2 or M.shape[1] != m:
        r.fail(f"M must have {m} columns", "input", "M")
    if d.shape != (M.shape[0],):
        r.fail(f"d must have {M.shape[0]} entries", "input", "d")
    U = InputPolytope(M, d)

    S = SafeSet(r.poly(r.get("safe", "s"), "safe", "s", names))
    h0 = r.poly(r.get("init", "h0"), "init", "h0", names)

    r.unknown("param", PARAM_KEYS)
    r.unknown("run", RUN_KEYS)
    if "H" in r.section("param", False):
        H = [r.monomial(t, "param", "H", names) for t in r.get("param", "H", list)]
    else:
        H = P.monomials_up_to(state, r.get("param", "H_degree", int, 2))
    if "Pi" in r.section("param", False):
        raw = r.get("param", "Pi", list)
        if raw and all(isinstance(b, list) for b in raw):
            if len(raw) != m:
                r.fail(f"Pi lists {len(raw)} bases for {m} inputs", "param", "Pi")
            Pi = [[r.monomial(t, "param", "Pi", names) for t in b] for b in raw]
        else:
            one = [r.monomial(t, "param", "Pi", names) for t in raw]
            Pi = [list(one) for _ in range(m)]
    else:
        Pi = [P.monomials_up_to(state, r.get("param", "Pi_degree", int, 2)) for _ in range(m)]

    deg_raw = r.get("param", "degrees", dict, {})
    for key in deg_raw:
        if key not in DEGREE_KEYS:
            r.fail(f"unknown multiplier degree '{key}'", "param", "degrees")
    degrees = Degrees(**deg_raw)

    gamma = r.get("param", "gamma", str, "maximize")
    if gamma not in ("maximize", "target"):
        r.fail("gamma must be 'maximize' or 'target'", "param", "gamma")
    solver_raw = r.get("run", "solver", dict, {})
    for key in solver_raw:
        if key not in SOLVER_KEYS:
            r.fail(f"unknown solver setting '{key}'", "run", "solver")
    ext = r.get("run", "extension", str, "quadratic")
    try:
        ext = Extension(ext)
    except ValueError:
        r.fail(f"unknown extension '{ext}'", "run", "extension")
    shift = r.get("run", "input_shift", None, "auto")
    if shift != "auto" and not (isinstance(shift, list) and len(shift) == m):
        r.fail("input_shift must be 'auto' or a list with one entry per input", "run", "input_shift")

    num = lambda sec, key, dflt: float(r.get(sec, key, (int, float), dflt))  # noqa: E731
    try:
        cfg = SynthesisConfig(
            h_basis=H,
            pi_bases=Pi,
            h0=h0,
            degrees=degrees,
            epsilon=num("param", "epsilon", 1e-4),
            delta=num("param", "delta", 1e-4),
            gamma_mode=gamma,
            gamma_target=num("param", "gamma_target", 0.8),
            gamma_min=num("param", "gamma_min", 1e-6),
            step2_objective=r.get("param", "step2_objective", str, "feasibility"),
            max_delta=num("param", "max_delta", 1.0),
            inactive_tol=num("param", "inactive_tol", 1e-9),
            max_iters=r.get("run", "max_iters", int, 100),
            seed=r.get("run", "seed", int, 0),
            extension=ext,
            input_shift=shift,
            fixed_policy_iters=r.get("run", "fixed_policy_iters", int, 50),
            area_samples=r.get("run", "area_samples", int, 200_000),
            reduce_states=r.get("run", "reduce_states", bool, True),
            backend=r.get("run", "backend", str, "builtin"),
            eig_tol=num("run", "eig_tol", 1e-7),
            coeff_tol=num("run", "coeff_tol", 1e-6),
            solver=SolverSettings(**solver_raw),
        )
    except (ValueError, TypeError) as exc:
        raise SemanticError(str(exc)) from exc
    return ProblemSpec(plant, U, S, cfg, text)


def to_dict(spec: ProblemSpec) -> dict:
    plant, cfg = spec.plant, spec.cfg
    if plant.state != P.var_ids(_state_names(plant.n)):
        raise SemanticError("only plants over x1..xn can be written to a problem file")
    deg = {k: v for k, v in dataclasses.asdict(cfg.degrees).items() if v is not None}
    run = {
        "max_iters": cfg.max_iters,
        "seed": cfg.seed,
        "extension": cfg.extension.value,
        "input_shift": cfg.input_shift if cfg.input_shift == "auto" else [float(c) for c in cfg.input_shift],
        "fixed_policy_iters": cfg.fixed_policy_iters,
        "area_samples": cfg.area_samples,
        "reduce_states": cfg.reduce_states,
        "backend": cfg.backend,
        "eig_tol": cfg.eig_tol,
        "coeff_tol": cfg.coeff_tol,
        "solver": dataclasses.asdict(cfg.solver),
    }
    return {
        "plant": {
            "n": plant.n,
            "m": plant.m,
            "f": [P.format_poly(p) for p in plant.f],
            "g": [[P.format_poly(P.as_poly(plant.g[i, j])) for j in range(plant.m)] for i in range(plant.n)],
        },
        "input": {"M": spec.U.M.tolist(), "d": spec.U.d.tolist()},
        "safe": {"s": P.format_poly(spec.S.s)},
        "init": {"h0": P.format_poly(cfg.h0)},
        "param": {
            "H": [P.mono_str(m) for m in cfg.h_basis],
            "Pi": [[P.mono_str(m) for m in b] for b in cfg.pi_bases],
            "degrees": deg,
            "epsilon": cfg.epsilon,
            "delta": cfg.delta,
            "gamma": cfg.gamma_mode,
            "gamma_target": cfg.gamma_target,
            "gamma_min": cfg.gamma_min,
            "step2_objective": cfg.step2_objective,
            "max_delta": cfg.max_delta,
            "inactive_tol": cfg.inactive_tol,
        },
        "run": run,
    }


def dumps(spec: ProblemSpec) -> str:
    return tomli_w.dumps(to_dict(spec))


def bundled(name: str) -> Path:
    """Path of a problem file shipped with the package."""
    p = Path(__file__).parent / "configs" / name
    if not p.suffix:
        p = p.with_suffix(".toml")
    if not p.exists():
        raise FileNotFoundError(f"no bundled problem named {name!r}")
    return p
