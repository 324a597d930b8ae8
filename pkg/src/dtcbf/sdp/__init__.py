"""Conic programs over free, non-negative and PSD blocks."""

from .backends import Backend, BackendUnavailable, BuiltinBackend, CvxoptBackend, EchoBackend, get_backend
from .problem import (
    Residuals,
    SdpError,
    SdpProblem,
    Solution,
    SolverSettings,
    Status,
    check_farkas,
    check_solution,
    compute_residuals,
    smat,
    svec,
    svec_index,
    svec_len,
)
from .sdpa import read_sdpa, write_sdpa
from .solver import solve

__all__ = [
    "Backend",
    "BackendUnavailable",
    "BuiltinBackend",
    "CvxoptBackend",
    "EchoBackend",
    "Residuals",
    "SdpError",
    "SdpProblem",
    "Solution",
    "SolverSettings",
    "Status",
    "check_farkas",
    "check_solution",
    "compute_residuals",
    "get_backend",
    "read_sdpa",
    "smat",
    "solve",
    "svec",
    "svec_index",
    "svec_len",
    "write_sdpa",
]
