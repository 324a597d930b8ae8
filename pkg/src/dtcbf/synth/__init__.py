"""Barrier, rate and policy synthesis by alternating SOS programs."""

from .constraints import MultiplierSource, cascade_term, prop_lower, prop_square, prop_upper, relaxed_successor
from .engine import (
    Prepared,
    alternate,
    prepare,
    reduce_plant,
    relevant_states,
    run,
    run_fixed_policy,
    shift_input,
    structural_products,
    with_nonneg_rows,
)
from .model import (
    Degrees,
    DtcbfTriple,
    Extension,
    InfeasibleInput,
    InputPolytope,
    IterationLog,
    LosslessnessViolation,
    NumericalFailure,
    OmegaInfeasible,
    PlantModel,
    SafeSet,
    Step1Infeasible,
    SynthesisConfig,
    SynthesisError,
    SynthesisResult,
    UnboundedInputSet,
)
from .steps import (
    Step1Result,
    Step2Result,
    build_step1,
    build_step2,
    find_omega,
    find_psi,
    product_gaps,
    solve_step1,
    solve_step2,
)

build_cascade_constraints = cascade_term

__all__ = [name for name in dir() if not name.startswith("_")]
