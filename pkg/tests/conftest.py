import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from dtcbf import poly as P
from dtcbf import specfile
from dtcbf.cli import synthesize_to_bundle
from dtcbf.synth import InputPolytope, PlantModel, SafeSet, SynthesisConfig


def toy_problem(**overrides):
    """x+ = 0.5 x + u, |u| <= 1, h0 = 1 - x^2, s = 2 - x^2."""
    (x,) = P.state_vars(1)
    X = P.Polynomial.var(x)
    plant = PlantModel((x,), (0.5 * X,), P.PolyMatrix.from_rows([[1.0]]))
    U = InputPolytope.box([-1.0], [1.0])
    S = SafeSet(2 - X**2)
    kw = dict(h_basis=P.monomials_up_to([x], 2), pi_bases=[P.monomials_up_to([x], 1)], h0=1 - X**2)
    kw.update(overrides)
    return plant, U, S, SynthesisConfig(**kw)


@pytest.fixture
def toy():
    return toy_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@dataclasses.dataclass
class BundledRun:
    spec: specfile.ProblemSpec
    outcome: object
    seconds: float
    bundle: Path


def _run_bundled(tmp_path_factory, name, **changes):
    spec = specfile.load(specfile.bundled(name))
    if changes:
        spec = dataclasses.replace(spec, cfg=dataclasses.replace(spec.cfg, **changes))
    bundle = tmp_path_factory.mktemp(name)
    t0 = time.perf_counter()
    out = synthesize_to_bundle(spec, bundle)
    return BundledRun(spec, out, time.perf_counter() - t0, bundle)


@pytest.fixture(scope="session")
def nonlinear_run(tmp_path_factory):
    return _run_bundled(tmp_path_factory, "nonlinear2d")


@pytest.fixture(scope="session")
def cartpole_run(tmp_path_factory):
    return _run_bundled(tmp_path_factory, "cartpole", gamma_mode="target", gamma_target=0.8)
