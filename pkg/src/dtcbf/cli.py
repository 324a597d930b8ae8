"""Command-line entry point: ``dtcbf synthesize | verify | levelset | certify``.

Exit codes
    synthesize: 0 finished (certified triple or nothing to certify), 2 policy
    update infeasible at the first iteration, 3 numerical failure.
    verify / certify: 0 when every check is within tolerance, 1 otherwise.
    4 for unusable input (bad problem file, missing bundle, unknown plane).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import poly as P
from . import specfile
from .sampling import DegenerateBounds, inflate, safe_box
from .sdp.sdpa import write_sdpa
from .sosir import Certificate
from .synth import (
    DtcbfTriple,
    LosslessnessViolation,
    NumericalFailure,
    Step1Infeasible,
    SynthesisError,
    SynthesisResult,
    run,
)
from .synth.engine import prepare
from .synth.steps import build_step1
from .verify import (
    DEFAULT_TOL,
    EmptySuperlevelSet,
    UnknownPlane,
    check_certificates,
    check_triple,
    levelset_sample,
    report_violations,
    simulate_from_set,
)

log = logging.getLogger("dtcbf")

OUT_ENV = "DTCBF_OUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_STEP1, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _resolve_spec(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return specfile.bundled(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"no problem file {path!r} (neither a path nor a bundled name)") from None


def _out_dir(args, spec_path: Path) -> Path:
    if args.out:
        return Path(args.out)
    base = os.environ.get(OUT_ENV)
    root = Path(base) if base else Path("dtcbf-out")
    return root / spec_path.stem


def _apply_flags(spec: specfile.ProblemSpec, args) -> specfile.ProblemSpec:
    changes = {}
    if args.gamma_target is not None:
        changes.update(gamma_mode="target", gamma_target=args.gamma_target)
    if args.max_iters is not None:
        changes["max_iters"] = args.max_iters
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.backend is not None:
        changes["backend"] = args.backend
    if changes:
        spec = dataclasses.replace(spec, cfg=dataclasses.replace(spec.cfg, **changes))
    return spec


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _result_json(result: SynthesisResult, status: str, message: str = "") -> dict:
    return {
        "status": status,
        "message": message,
        "termination": result.termination,
        "flags": list(result.flags),
        "triple": result.triple.to_json(),
        "history": [P.format_poly(h) for h in result.history],
        "logs": [e.to_json() for e in result.logs],
    }


def _final_levelset(bundle: Path, spec: specfile.ProblemSpec, h: P.Polynomial) -> None:
    plane = _default_plane(spec)
    box = _plane_box(spec, plane)
    ls = levelset_sample(h, box, 100, spec.plant.state, plane)
    ls.write_csv(bundle / "levelset_final.csv")


@dataclasses.dataclass
class Outcome:
    result: SynthesisResult
    status: str
    message: str
    code: int
    bundle: Path


def synthesize_to_bundle(spec: specfile.ProblemSpec, bundle: Path, export_sdpa: bool = False, on_iter=None) -> Outcome:
    """Run synthesis and write the bundle; iteration logs are flushed as they arrive."""
    bundle.mkdir(parents=True, exist_ok=True)
    (bundle / "spec.toml").write_text(specfile.dumps(spec))
    if spec.source:
        (bundle / "spec.original.toml").write_text(spec.source)
    if export_sdpa:
        prep = prepare(spec.plant, spec.U, spec.S, spec.cfg)
        built = build_step1(spec.cfg.h0, prep.plant, prep.U, spec.cfg, None, prep.pi_bases)
        write_sdpa(built.prog.lower().problem, bundle / "step1_k1.dat-s")

    empty = SynthesisResult(DtcbfTriple(spec.cfg.h0, None, [], spec.plant.state), [], [spec.cfg.h0], "")
    with open(bundle / "iterations.jsonl", "w") as fh:

        def callback(entry):
            fh.write(json.dumps(entry.to_json(), default=_json_default) + "\n")
            fh.flush()
            if on_iter:
                on_iter(entry)

        try:
            out = Outcome(run(spec.plant, spec.U, spec.S, spec.cfg, callback), "ok", "", EXIT_OK, bundle)
        except LosslessnessViolation as exc:
            # a later policy update failing can only be a solver accuracy problem
            out = Outcome(_partial(exc, empty), "numerical_failure", str(exc), EXIT_NUMERIC, bundle)
        except Step1Infeasible as exc:
            empty.termination = "step1_infeasible"
            out = Outcome(empty, "step1_infeasible", str(exc), EXIT_STEP1, bundle)
        except NumericalFailure as exc:
            out = Outcome(_partial(exc, empty), "numerical_failure", str(exc), EXIT_NUMERIC, bundle)

    _write_json(bundle / "result.json", _result_json(out.result, out.status, out.message))
    _write_json(bundle / "certificates.json", [c.to_json() for c in out.result.triple.certificates])
    _final_levelset(bundle, spec, out.result.triple.h)
    return out


def _partial(exc, fallback: SynthesisResult) -> SynthesisResult:
    partial = getattr(exc, "partial", None)
    if partial is None:
        return fallback
    partial.termination = "numerical_failure"
    return partial


def _print_entry(entry) -> None:
    ratio = "-" if entry.area_ratio is None else f"{entry.area_ratio:.4f}"
    g = "-" if entry.gamma0 is None else f"{entry.gamma0:.6f}"
    print(f"k={entry.k:3d} step1={entry.step1_status:8s} step2={entry.step2_status:10s} gamma0={g} area={ratio}", flush=True)


def cmd_synthesize(args) -> int:
    spec_path = _resolve_spec(args.spec)
    spec = _apply_flags(specfile.load(spec_path), args)
    bundle = _out_dir(args, spec_path)
    out = synthesize_to_bundle(spec, bundle, args.export_sdpa, None if args.quiet else _print_entry)
    if out.message:
        print(out.message, file=sys.stderr)
    if not args.quiet:
        t = out.result.triple
        print(f"termination: {out.result.termination}; gamma0 = {t.gamma0}")
        print(f"h = {P.format_poly(t.h)}")
        for i, p in enumerate(t.pi):
            print(f"pi{i + 1} = {P.format_poly(p)}")
        print(f"bundle written to {bundle}")
    return out.code


def _load_bundle(path: str):
    bundle = Path(path)
    if not (bundle / "result.json").exists() or not (bundle / "spec.toml").exists():
        raise FileNotFoundError(f"{bundle} is not a result bundle (need spec.toml and result.json)")
    spec = specfile.load(bundle / "spec.toml")
    data = json.loads((bundle / "result.json").read_text())
    return bundle, spec, data


def _load_certs(bundle: Path) -> list[Certificate]:
    p = bundle / "certificates.json"
    if not p.exists():
        return []
    return [Certificate.from_json(d) for d in json.loads(p.read_text())]


def cmd_verify(args) -> int:
    bundle, spec, data = _load_bundle(args.bundle)
    triple = DtcbfTriple.from_json(data["triple"])
    if triple.gamma0 is None:
        print("bundle holds no certified triple (synthesis did not complete a policy update)", file=sys.stderr)
        return EXIT_FAIL
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptySuperlevelSet)
        rep = check_triple(triple, spec.plant, spec.U, spec.S, args.samples, args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.trajectories > 0:
        rep.simulation = simulate_from_set(triple, spec.plant, spec.S, args.trajectories, args.steps, args.seed, tol=args.tol)
    certs = _load_certs(bundle)
    if certs:
        rep.certificates = check_certificates(certs, args.eig_tol, args.coeff_tol, raise_on_failure=False)
    out = Path(args.report) if args.report else bundle / "verification.json"
    rep.write(out)
    ok = rep.passed(args.tol)
    for line in report_violations(rep, args.tol):
        print(line)
    if rep.certificates and rep.certificates["failures"]:
        for line in rep.certificates["failures"]:
            print(f"certificate: {line}")
    print(
        f"decrease {rep.decrease.max_violation:.3e}, admissibility {rep.admissibility.max_violation:.3e}, "
        f"containment {rep.containment.max_violation:.3e} over {rep.decrease.samples} samples: "
        + ("PASS" if ok else "FAIL")
    )
    return EXIT_OK if ok else EXIT_FAIL


def cmd_certify(args) -> int:
    bundle, _, _ = _load_bundle(args.bundle)
    certs = _load_certs(bundle)
    rep = check_certificates(certs, args.eig_tol, args.coeff_tol, raise_on_failure=False)
    _write_json(bundle / "certify.json", rep)
    for line in rep["failures"]:
        print(line)
    print(f"{rep['count']} certificates, min eigenvalue {rep['min_eigenvalue']}, max residual {rep['max_residual']:.3e}")
    return EXIT_FAIL if rep["failures"] else EXIT_OK


def _default_plane(spec: specfile.ProblemSpec) -> tuple[int, int]:
    used = [v for v in spec.plant.state if v in spec.S.s.variables() | spec.cfg.h0.variables()]
    if len(used) >= 2:
        return used[0], used[1]
    return spec.plant.state[0], spec.plant.state[min(1, spec.plant.n - 1)]


def _parse_plane(text: str | None, spec: specfile.ProblemSpec) -> tuple[int, int]:
    if text is None:
        return _default_plane(spec)
    names = [t.strip() for t in text.split(",")]
    valid = {P.var_name(v): v for v in spec.plant.state}
    if len(names) != 2 or any(n not in valid for n in names) or names[0] == names[1]:
        raise UnknownPlane(f"plane {text!r} must name two distinct state variables among {', '.join(valid)}")
    return valid[names[0]], valid[names[1]]


def _plane_box(spec: specfile.ProblemSpec, plane) -> np.ndarray:
    box = inflate(safe_box(spec.S.s, list(spec.plant.state)), 0.2)
    idx = [spec.plant.state.index(v) for v in plane]
    return box[idx]


def _parse_fix(items, spec) -> dict[int, float]:
    out = {}
    for item in items or []:
        name, _, val = item.partition("=")
        try:
            vid = {P.var_name(v): v for v in spec.plant.state}[name.strip()]
        except KeyError:
            raise UnknownPlane(f"--fix names unknown variable {name!r}") from None
        out[vid] = float(val)
    return out


def cmd_levelset(args) -> int:
    bundle, spec, data = _load_bundle(args.bundle)
    plane = _parse_plane(args.plane, spec)
    fixed = _parse_fix(args.fix, spec)
    box = _plane_box(spec, plane)
    history = [P.parse_poly(s) for s in data["history"]]
    if args.iterations == "final":
        chosen = [(len(history) - 1, P.parse_poly(data["triple"]["h"]))]
    else:
        chosen = list(enumerate(history))
    files = []
    for k, h in chosen:
        ls = levelset_sample(h, box, args.resolution, spec.plant.state, plane, fixed)
        name = f"levelset_k{k:03d}.csv"
        ls.write_csv(bundle / name, boundary_only=args.boundary_only)
        files.append({"k": k, "file": name, "h": P.format_poly(h), "boundary_points": int(ls.boundary.shape[0])})
    manifest = {
        "plane": [P.var_name(v) for v in plane],
        "fixed": {P.var_name(v): x for v, x in fixed.items()},
        "bounds": box.tolist(),
        "resolution": args.resolution,
        "files": files,
    }
    _write_json(bundle / "levelset_manifest.json", manifest)
    print(f"wrote {len(files)} level-set file(s) to {bundle}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dtcbf", description="Synthesize and check discrete-time control barrier functions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synthesize", help="run the alternating synthesis on a problem file")
    s.add_argument("spec", help="problem file, or the name of a bundled one (nonlinear2d, cartpole)")
    s.add_argument("--out", help=f"bundle directory (default ${OUT_ENV}/<spec> or ./dtcbf-out/<spec>)")
    s.add_argument("--gamma-target", type=float, help="aim gamma0 at this value instead of maximizing it")
    s.add_argument("--max-iters", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--backend", choices=["builtin", "cvxopt"])
    s.add_argument("--export-sdpa", action="store_true", help="also write the first policy-update SDP in SDPA format")
    s.add_argument("-q", "--quiet", action="store_true")
    s.set_defaults(func=cmd_synthesize)

    v = sub.add_parser("verify", help="sample-check a result bundle")
    v.add_argument("bundle")
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--tol", type=float, default=DEFAULT_TOL)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trajectories", type=int, default=1000)
    v.add_argument("--steps", type=int, default=50)
    v.add_argument("--eig-tol", type=float, default=1e-7)
    v.add_argument("--coeff-tol", type=float, default=1e-6)
    v.add_argument("--report", help="where to write the JSON report (default <bundle>/verification.json)")
    v.set_defaults(func=cmd_verify)

    ls = sub.add_parser("levelset", help="write CSV grids of h on a plane")
    ls.add_argument("bundle")
    ls.add_argument("--plane", help="two state variables, e.g. x3,x4")
    ls.add_argument("--fix", action="append", help="value of an off-plane variable, e.g. x1=0 (default 0)")
    ls.add_argument("--resolution", type=int, default=200)
    ls.add_argument("--iterations", choices=["all", "final"], default="final")
    ls.add_argument("--boundary-only", action="store_true", help="write only the interpolated zero crossings")
    ls.set_defaults(func=cmd_levelset)

    c = sub.add_parser("certify", help="re-check the stored Gram certificates")
    c.add_argument("bundle")
    c.add_argument("--eig-tol", type=float, default=1e-7)
    c.add_argument("--coeff-tol", type=float, default=1e-6)
    c.set_defaults(func=cmd_certify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (specfile.SpecError, FileNotFoundError, UnknownPlane, DegenerateBounds) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SynthesisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
